"""Three-stage training schedule and the train/inference input asymmetry.

Stage 1 trains the generator with uniformly random candidate extensions,
stage 2 trains the selector with policy gradient against the frozen
generator, stage 3 fine-tunes the generator under the frozen selector.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import ndcore as nd
from .akwg import KEYWORD, QUERY, Akwg, SubGraph, build_subgraph, extend_subgraph, one_hop_candidates
from .association import (
    RewardBaseline,
    compute_reward,
    gated_gcn_encode,
    reinforce_update,
    sample_phi,
    score_candidates,
    select_top_phi,
)
from .config import RunConfig
from .corpus import EncodedRecord, Record, Vocab, encode
from .generation import decode_train, encode_graph, gold_token_probs
from .ndcore.optim import Adam
from .ndcore.params import init_model_params, load_checkpoint, save_checkpoint

STAGE_TAGS = {1: "stage1", 2: "stage2", 3: "stage3"}


class NonFiniteLoss(RuntimeError):
    pass


def prepare_train_input(ex: EncodedRecord, graph: Akwg) -> SubGraph:
    """Training input: the keyword sub-graph. The query is never used."""
    return build_subgraph([(i, KEYWORD) for i in ex.keyword_ids], graph)


def prepare_infer_input(ex: EncodedRecord, graph: Akwg,
                        stopword_ids=frozenset()) -> SubGraph:
    """Inference input: keywords merged with de-stop-worded query words.

    A word appearing in both stays a single keyword-typed node.
    """
    query_ids = [i for i in ex.query_ids if i not in stopword_ids]
    words = [(i, KEYWORD) for i in ex.keyword_ids] + [(i, QUERY) for i in query_ids]
    return build_subgraph(words, graph)


@dataclass
class TrainResult:
    stage: int
    history: list[dict] = field(default_factory=list)
    checkpoint: Path | None = None
    params: object = None
    selections: list = field(default_factory=list)  # stage 2 only, when collected


def _batches(order, size: int):
    for start in range(0, len(order), size):
        yield order[start:start + size]


class Trainer:
    def __init__(self, records: list[Record], vocab: Vocab, graph: Akwg,
                 cfg: RunConfig, workdir, stopwords=frozenset(),
                 graph_hook=None, collect_traces: bool = False,
                 selection_dump=None):
        self.vocab = vocab
        self.graph = graph
        self.cfg = cfg
        self.workdir = Path(workdir)
        self.workdir.mkdir(parents=True, exist_ok=True)
        self.dataset = [encode(r, vocab) for r in records]
        self.stopword_ids = frozenset(vocab.id(w) for w in stopwords if w in vocab)
        self.graph_hook = graph_hook
        self.collect_traces = collect_traces
        self.selection_dump = Path(selection_dump) if selection_dump else None
        self.log_path = self.workdir / "train_log.csv"

    def checkpoint_path(self, stage: int) -> Path:
        return self.workdir / f"checkpoint_stage{stage}.bin"

    def _log(self, stage: int, epoch: int, loss, mean_reward, wall: float) -> None:
        new = not self.log_path.exists()
        with open(self.log_path, "a", newline="") as fh:
            writer = csv.writer(fh)
            if new:
                writer.writerow(["stage", "epoch", "loss", "mean_reward", "wall_time"])
            writer.writerow([stage, epoch,
                             "" if loss is None else f"{loss:.6f}",
                             "" if mean_reward is None else f"{mean_reward:.6f}",
                             f"{wall:.3f}"])

    def _hook(self, phase: str, ex: EncodedRecord, base: SubGraph, ext: SubGraph) -> None:
        if self.graph_hook is not None:
            self.graph_hook(phase, ex, base, ext)

    def _check_loss(self, value: float, stage: int, epoch: int, idx: int) -> None:
        if not math.isfinite(value):
            raise NonFiniteLoss(
                f"non-finite loss {value} at stage {stage} epoch {epoch} example {idx}"
            )

    def _fresh_params(self):
        return init_model_params(self.cfg, len(self.vocab))

    def _load_stage(self, params, path, expected: str) -> None:
        load_checkpoint(path, params, self.cfg.config_hash(), expected_stage=expected)

    def _save_stage(self, params, stage: int, epoch: int | None = None) -> Path:
        if epoch is None:
            path = self.checkpoint_path(stage)
        else:
            path = self.workdir / f"checkpoint_stage{stage}_ep{epoch}.bin"
        save_checkpoint(path, params, self.cfg.config_hash(), STAGE_TAGS[stage])
        return path

    def _random_extension(self, sub: SubGraph, rng) -> SubGraph:
        cands = one_hop_candidates(sub, self.graph, sub.id_set())
        k = min(self.cfg.phi, len(cands))
        if k > 0:
            picked = rng.choice(len(cands), size=k, replace=False)
            chosen = [cands[int(i)][0] for i in sorted(picked)]
        else:
            chosen = []
        return extend_subgraph(sub, chosen, self.graph)

    def _supervised_epoch(self, params, adam, rng, stage: int, epoch: int,
                          choose) -> float:
        losses = []
        order = rng.permutation(len(self.dataset))
        for batch in _batches(order, self.cfg.batch_size):
            adam.zero_grad()
            for idx in batch:
                ex = self.dataset[int(idx)]
                sub = prepare_train_input(ex, self.graph)
                ext = choose(sub, rng)
                self._hook("train", ex, sub, ext)
                enc = encode_graph(ext, params, self.cfg)
                _, loss, _ = decode_train(enc, ex.target_ids, params, self.cfg)
                self._check_loss(loss.item(), stage, epoch, int(idx))
                losses.append(loss.item())
                nd.scale(loss, 1.0 / len(batch)).backward()
            adam.step()
        if not params.all_finite():
            raise NonFiniteLoss(f"non-finite parameter after stage {stage} epoch {epoch}")
        return sum(losses) / len(losses)

    def stage1(self, params=None) -> TrainResult:
        """Supervised training of the generator with random candidate extension."""
        cfg = self.cfg
        if params is None:
            params = self._fresh_params()
        adam = Adam(params.group("gen"), lr=cfg.learning_rate)
        rng = np.random.default_rng([cfg.seed, 1])
        result = TrainResult(stage=1, params=params)
        for epoch in range(1, cfg.stage1_epochs + 1):
            start = time.perf_counter()
            mean_loss = self._supervised_epoch(params, adam, rng, 1, epoch,
                                               self._random_extension)
            wall = time.perf_counter() - start
            self._log(1, epoch, mean_loss, None, wall)
            result.history.append({"stage": 1, "epoch": epoch, "loss": mean_loss})
            if cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
                self._save_stage(params, 1, epoch)
        result.checkpoint = self._save_stage(params, 1)
        return result

    def stage2(self, checkpoint=None) -> TrainResult:
        """Policy-gradient training of the selector; the generator is frozen."""
        cfg = self.cfg
        params = self._fresh_params()
        self._load_stage(params, checkpoint or self.checkpoint_path(1), "stage1")
        # the generator's embeddings seed the association module
        params.copy_value("gen.word_emb", "assoc.word_emb")
        params.copy_value("gen.type_emb", "assoc.type_emb")
        adam = Adam(params.group("assoc"), lr=cfg.rl_learning_rate)
        baseline = RewardBaseline(decay=cfg.baseline_decay)
        rng = np.random.default_rng([cfg.seed, 2])
        result = TrainResult(stage=2, params=params)
        dump = open(self.selection_dump, "w", encoding="utf-8") if self.selection_dump else None
        try:
            self._stage2_epochs(params, adam, baseline, rng, result, dump)
        finally:
            if dump is not None:
                dump.close()
        result.checkpoint = self._save_stage(params, 2)
        return result

    def _stage2_epochs(self, params, adam, baseline, rng, result, dump):
        cfg = self.cfg
        for epoch in range(1, cfg.stage2_epochs + 1):
            start = time.perf_counter()
            rewards = []
            epoch_selections = []
            order = rng.permutation(len(self.dataset))
            for batch in _batches(order, cfg.batch_size):
                adam.zero_grad()
                stepped = False
                for idx in batch:
                    ex = self.dataset[int(idx)]
                    sub = prepare_train_input(ex, self.graph)
                    cands = one_hop_candidates(sub, self.graph, sub.id_set())
                    if not cands:
                        # no candidates: nothing to select, zero RL loss
                        self._hook("train", ex, sub, sub)
                        continue
                    cand_ids = [c for c, _ in cands]
                    _, g = gated_gcn_encode(sub, params, cfg)
                    scores = score_candidates(g, cand_ids, params, cfg)
                    trace = sample_phi(scores, cand_ids, cfg.phi, cfg.temperature,
                                       rng, base_nodes=len(sub))
                    ext = extend_subgraph(sub, trace.chosen, self.graph)
                    self._hook("train", ex, sub, ext)
                    with nd.no_grad():
                        enc = encode_graph(ext, params, cfg)
                        probs = gold_token_probs(enc, ex.target_ids, params, cfg)
                    reward = compute_reward(ex.target_ids[1:], probs)
                    rewards.append(reward)
                    if self.collect_traces:
                        epoch_selections.append((int(idx), list(trace.chosen), reward))
                    if dump is not None:
                        dump.write(json.dumps({
                            "example": int(idx), "epoch": epoch,
                            "candidates": cand_ids,
                            "scores": [float(s) for s in scores.data.ravel()],
                            "chosen": list(trace.chosen), "reward": reward,
                        }) + "\n")
                    rl_loss = reinforce_update(trace, reward, baseline)
                    if rl_loss is not None:
                        self._check_loss(rl_loss.item(), 2, epoch, int(idx))
                        nd.scale(rl_loss, 1.0 / len(batch)).backward()
                        stepped = True
                if stepped:
                    adam.step()
            wall = time.perf_counter() - start
            mean_reward = sum(rewards) / len(rewards) if rewards else 0.0
            self._log(2, epoch, None, mean_reward, wall)
            result.history.append({"stage": 2, "epoch": epoch, "mean_reward": mean_reward})
            if self.collect_traces:
                result.selections.append(epoch_selections)
            if cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
                self._save_stage(params, 2, epoch)
            if not params.all_finite():
                raise NonFiniteLoss(f"non-finite parameter after stage 2 epoch {epoch}")

    def stage3(self, checkpoint=None) -> TrainResult:
        """Supervised fine-tuning with the association module frozen."""
        cfg = self.cfg
        params = self._fresh_params()
        self._load_stage(params, checkpoint or self.checkpoint_path(2), "stage2")
        adam = Adam(params.group("gen"), lr=cfg.learning_rate)
        rng = np.random.default_rng([cfg.seed, 3])

        def choose(sub: SubGraph, _rng) -> SubGraph:
            cands = one_hop_candidates(sub, self.graph, sub.id_set())
            if not cands:
                return sub
            cand_ids = [c for c, _ in cands]
            with nd.no_grad():
                _, g = gated_gcn_encode(sub, params, cfg)
                scores = score_candidates(g, cand_ids, params, cfg)
            chosen = select_top_phi(scores, cand_ids, cfg.phi)
            return extend_subgraph(sub, chosen, self.graph)

        result = TrainResult(stage=3, params=params)
        for epoch in range(1, cfg.stage3_epochs + 1):
            start = time.perf_counter()
            mean_loss = self._supervised_epoch(params, adam, rng, 3, epoch, choose)
            wall = time.perf_counter() - start
            self._log(3, epoch, mean_loss, None, wall)
            result.history.append({"stage": 3, "epoch": epoch, "loss": mean_loss})
            if cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
                self._save_stage(params, 3, epoch)
        result.checkpoint = self._save_stage(params, 3)
        return result

    def run_all(self) -> list[TrainResult]:
        """Stages 1-3 in sequence; each stage reloads the previous checkpoint,
        so interrupted runs can resume from any stage boundary."""
        r1 = self.stage1()
        r2 = self.stage2(r1.checkpoint)
        r3 = self.stage3(r2.checkpoint)
        return [r1, r2, r3]
