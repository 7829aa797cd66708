"""Named parameter registry, seeded initialization, and binary checkpoints.

Checkpoint layout: magic, version, 16-char config hash, 16-byte stage tag,
tensor count, then per tensor (name, shape, raw little-endian float32 values).
"""

from __future__ import annotations

import struct

import numpy as np

from .nn import sinusoidal_encoding
from .tensor import Tensor, default_dtype

_MAGIC = b"CKPT0001"


class ModelParams:
    """Flat name -> Tensor map; requires_grad marks trainable entries."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, data, trainable: bool = True) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter {name}")
        t = Tensor(np.asarray(data, dtype=default_dtype()), requires_grad=trainable)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def sub(self, prefix: str) -> dict[str, Tensor]:
        cut = len(prefix) + 1
        return {n[cut:]: t for n, t in self._params.items() if n.startswith(prefix + ".")}

    def group(self, prefix: str) -> list[tuple[str, Tensor]]:
        return [(n, t) for n, t in self._params.items()
                if n.startswith(prefix + ".") and t.requires_grad]

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def all_finite(self) -> bool:
        return all(np.isfinite(t.data).all() for t in self._params.values())

    def copy_value(self, src: str, dst: str) -> None:
        if self._params[src].data.shape != self._params[dst].data.shape:
            raise ValueError(f"shape mismatch copying {src} -> {dst}")
        self._params[dst].data = self._params[src].data.copy()

    def state_bytes(self, name: str) -> bytes:
        return self._params[name].data.astype("<f4").tobytes()


def _glorot(rng, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def _add_linear(p: ModelParams, rng, name: str, d_in: int, d_out: int) -> None:
    p.add(f"{name}.w", _glorot(rng, d_in, d_out))
    p.add(f"{name}.b", np.zeros((1, d_out)))


def _add_lstm(p: ModelParams, rng, name: str, d_in: int, hidden: int) -> None:
    p.add(f"{name}.w_ih", _glorot(rng, d_in, 4 * hidden))
    p.add(f"{name}.w_hh", _glorot(rng, hidden, 4 * hidden))
    b = np.zeros((1, 4 * hidden))
    b[:, hidden:2 * hidden] = 1.0  # forget-gate bias
    p.add(f"{name}.b", b)


def _add_layernorm(p: ModelParams, name: str, dim: int) -> None:
    p.add(f"{name}.g", np.ones((1, dim)))
    p.add(f"{name}.b", np.zeros((1, dim)))


def _add_attention(p: ModelParams, rng, name: str, hidden: int) -> None:
    for part in ("wq", "wk", "wv", "wo"):
        p.add(f"{name}.{part}", _glorot(rng, hidden, hidden))
    for part in ("bq", "bk", "bv", "bo"):
        p.add(f"{name}.{part}", np.zeros((1, hidden)))


def _add_block(p: ModelParams, rng, name: str, hidden: int, ffn: int) -> None:
    _add_layernorm(p, f"{name}.ln1", hidden)
    _add_attention(p, rng, f"{name}.attn", hidden)
    _add_layernorm(p, f"{name}.ln2", hidden)
    p.add(f"{name}.ffn.w1", _glorot(rng, hidden, ffn))
    p.add(f"{name}.ffn.b1", np.zeros((1, ffn)))
    p.add(f"{name}.ffn.w2", _glorot(rng, ffn, hidden))
    p.add(f"{name}.ffn.b2", np.zeros((1, hidden)))


def init_model_params(cfg, vocab_size: int, seed: int | None = None) -> ModelParams:
    """All learnable weights for the generation and association modules."""
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    emb, hidden, ffn = cfg.emb_size, cfg.hidden_size, cfg.ffn_size
    p = ModelParams()

    # generation module
    p.add("gen.word_emb", rng.normal(0.0, 0.1, size=(vocab_size, emb)))
    p.add("gen.type_emb", rng.normal(0.0, 0.1, size=(3, emb)))
    p.add("gen.pos_enc", sinusoidal_encoding(cfg.max_text_len + 2, emb), trainable=False)
    _add_linear(p, rng, "gen.in_proj", emb, hidden)
    for l in range(cfg.gcn_layers):
        p.add(f"gen.gcn{l}.w", _glorot(rng, hidden, hidden))
        _add_lstm(p, rng, f"gen.gcn{l}.lstm", hidden, hidden)
    for l in range(cfg.encoder_layers):
        _add_block(p, rng, f"gen.enc{l}", hidden, ffn)
    _add_layernorm(p, "gen.enc_ln", hidden)
    _add_linear(p, rng, "gen.dec_in_proj", emb, hidden)
    for l in range(cfg.decoder_layers):
        _add_layernorm(p, f"gen.dec{l}.ln1", hidden)
        _add_attention(p, rng, f"gen.dec{l}.self", hidden)
        _add_layernorm(p, f"gen.dec{l}.ln2", hidden)
        _add_attention(p, rng, f"gen.dec{l}.cross", hidden)
        _add_layernorm(p, f"gen.dec{l}.ln3", hidden)
        p.add(f"gen.dec{l}.ffn.w1", _glorot(rng, hidden, ffn))
        p.add(f"gen.dec{l}.ffn.b1", np.zeros((1, ffn)))
        p.add(f"gen.dec{l}.ffn.w2", _glorot(rng, ffn, hidden))
        p.add(f"gen.dec{l}.ffn.b2", np.zeros((1, hidden)))
    _add_layernorm(p, "gen.dec_ln", hidden)
    # small output init keeps the untrained model near-uniform over the vocab
    p.add("gen.out_proj.w", rng.normal(0.0, 0.02, size=(hidden, vocab_size)))

    # association module
    p.add("assoc.word_emb", rng.normal(0.0, 0.1, size=(vocab_size, emb)))
    p.add("assoc.type_emb", rng.normal(0.0, 0.1, size=(3, emb)))
    _add_linear(p, rng, "assoc.in_proj", emb, hidden)
    for l in range(cfg.gcn_layers):
        p.add(f"assoc.gcn{l}.w", _glorot(rng, hidden, hidden))
        _add_lstm(p, rng, f"assoc.gcn{l}.lstm", hidden, hidden)
        _add_lstm(p, rng, f"assoc.gcn{l}.glstm", hidden, hidden)
    p.add("assoc.pool.wa", _glorot(rng, hidden, hidden))
    p.add("assoc.pool.u", _glorot(rng, hidden, 1))
    # zero init: the initial selection policy is uniform over candidates
    p.add("assoc.score_w", np.zeros((hidden + emb, 1)))
    return p


def save_checkpoint(path, params: ModelParams, config_hash: str, stage: str) -> None:
    stage_b = stage.encode("utf-8")
    if len(stage_b) > 16:
        raise ValueError("stage tag longer than 16 bytes")
    names = sorted(params.names())
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", 1))
        fh.write(config_hash.encode("ascii").ljust(16, b"\0")[:16])
        fh.write(stage_b.ljust(16, b"\0"))
        fh.write(struct.pack("<I", len(names)))
        for name in names:
            nb = name.encode("utf-8")
            arr = params[name].data
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.astype("<f4").tobytes())


def read_checkpoint(path):
    """Return (stage, config_hash, {name: float32 array})."""
    with open(path, "rb") as fh:
        if fh.read(8) != _MAGIC:
            raise ValueError(f"not a checkpoint file: {path}")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != 1:
            raise ValueError(f"unsupported checkpoint version {version}")
        config_hash = fh.read(16).rstrip(b"\0").decode("ascii")
        stage = fh.read(16).rstrip(b"\0").decode("utf-8")
        (count,) = struct.unpack("<I", fh.read(4))
        tensors = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<H", fh.read(2))
            name = fh.read(nlen).decode("utf-8")
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
            size = int(np.prod(shape)) if ndim else 1
            data = np.frombuffer(fh.read(4 * size), dtype="<f4").reshape(shape)
            tensors[name] = data
    return stage, config_hash, tensors


def load_checkpoint(path, params: ModelParams, config_hash: str,
                    expected_stage: str | None = None) -> str:
    """Load values into an existing registry; rejects config-hash mismatch."""
    stage, found_hash, tensors = read_checkpoint(path)
    if found_hash != config_hash:
        raise ValueError(
            f"checkpoint config hash {found_hash} does not match current config {config_hash}"
        )
    if expected_stage is not None and stage != expected_stage:
        raise ValueError(f"checkpoint stage {stage!r} is not the expected {expected_stage!r}")
    for name, arr in tensors.items():
        if name not in params:
            raise ValueError(f"checkpoint tensor {name} not present in model")
        t = params[name]
        if tuple(arr.shape) != t.data.shape:
            raise ValueError(f"shape mismatch for {name}: {arr.shape} vs {t.data.shape}")
        t.data = arr.astype(t.data.dtype)
    missing = set(params.names()) - set(tensors)
    if missing:
        raise ValueError(f"checkpoint missing tensors: {sorted(missing)[:5]}")
    return stage
