"""Run configuration: one flat record of every tunable, file/flag parsing, hashing."""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass
from pathlib import Path


@dataclass
class RunConfig:
    # corpus limits
    vocab_size: int = 50000
    max_text_len: int = 20
    max_query_len: int = 10
    min_keywords: int = 3
    max_keywords: int = 10
    # association word graph
    xi: float = 8.0
    max_degree: int = 20
    # model dimensions
    emb_size: int = 128
    hidden_size: int = 256
    gcn_layers: int = 2
    encoder_layers: int = 2
    decoder_layers: int = 3
    heads: int = 4
    ffn_size: int = 512
    # association / selection
    phi: int = 10
    temperature: float = 1.0
    baseline_decay: float = 0.99
    # training schedule
    stage1_epochs: int = 15
    stage2_epochs: int = 5
    stage3_epochs: int = 5
    batch_size: int = 16
    learning_rate: float = 1e-3
    rl_learning_rate: float = 0.01
    checkpoint_every: int = 0
    seed: int = 0
    # decoding
    beam_size: int = 4
    # numerics / execution
    dtype: str = "float64"
    threads: int = 1

    def __post_init__(self):
        if self.phi < 0:
            raise ValueError("phi must be >= 0")
        if self.gcn_layers < 1:
            raise ValueError("gcn_layers must be >= 1")
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")
        if self.hidden_size % self.heads != 0:
            raise ValueError("heads must divide hidden_size")
        if self.dtype not in ("float64", "float32"):
            raise ValueError("dtype must be float64 or float32")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")

    def to_text(self) -> str:
        lines = [f"{f.name}={getattr(self, f.name)}" for f in dataclasses.fields(self)]
        return "\n".join(lines) + "\n"

    # fields that determine parameter shapes or numeric layout; the checkpoint
    # hash covers exactly these, so schedule knobs (epochs, lr, phi) can vary
    # between stages without invalidating a checkpoint
    ARCH_FIELDS = ("emb_size", "hidden_size", "gcn_layers", "encoder_layers",
                   "decoder_layers", "heads", "ffn_size", "max_text_len", "dtype")

    def config_hash(self) -> str:
        text = "\n".join(f"{name}={getattr(self, name)}" for name in self.ARCH_FIELDS)
        return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]

    def replace(self, **kwargs) -> "RunConfig":
        return dataclasses.replace(self, **kwargs)


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def _coerce(name: str, raw: str):
    kind = _FIELD_TYPES[name]
    if kind in ("int", int):
        return int(raw)
    if kind in ("float", float):
        return float(raw)
    return raw


def parse_config_text(text: str, base: RunConfig | None = None) -> RunConfig:
    """Parse the flat key=value format; later keys override earlier ones."""
    values = dataclasses.asdict(base) if base is not None else {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key=value, got {line!r}")
        key, _, raw = line.partition("=")
        key = key.strip()
        if key not in _FIELD_TYPES:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
        values[key] = _coerce(key, raw.strip())
    return RunConfig(**values)


def load_config(path: str | Path, base: RunConfig | None = None) -> RunConfig:
    return parse_config_text(Path(path).read_text(encoding="utf-8"), base=base)
