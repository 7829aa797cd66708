"""Command-line front end: build-graph, train, generate, evaluate, gradcheck,
inspect-graph. Flags override the config file (--config or $QVADGEN_CONFIG),
which overrides built-in defaults.

Exit codes: 0 success, 2 usage, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

from .akwg import Akwg, build_graph, count_cooccurrence
from .config import RunConfig, load_config
from .corpus import Vocab, build_vocab, load_records, load_stopwords
from .metrics import evaluate_run, write_per_item_csv
from .ndcore import set_default_dtype
from .ndcore.optim import NonFiniteGradient
from .ndcore.params import init_model_params, load_checkpoint
from .pipeline import (
    POLICIES,
    compare_selection_policies,
    comparison_table,
    generate_outputs,
    read_outputs_jsonl,
    write_outputs_jsonl,
)
from .trainer import NonFiniteLoss, Trainer
from .verify import gradient_suite

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class DataError(Exception):
    pass


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("config fields (override file and defaults)")
    for f in dataclasses.fields(RunConfig):
        kind = float if f.type in ("float", float) else (int if f.type in ("int", int) else str)
        group.add_argument(f"--{f.name.replace('_', '-')}", type=kind, default=None,
                           dest=f"cfg_{f.name}", metavar=f.name.upper(),
                           help=f"(default: {f.default})")
    parser.add_argument("--config", default=None,
                        help="flat key=value config file ($QVADGEN_CONFIG is the fallback)")


def _resolve_config(args) -> RunConfig:
    cfg = RunConfig()
    path = args.config or os.environ.get("QVADGEN_CONFIG")
    if path:
        if not Path(path).exists():
            raise DataError(f"config file not found: {path}")
        cfg = load_config(path, base=cfg)
    overrides = {
        f.name: getattr(args, f"cfg_{f.name}")
        for f in dataclasses.fields(RunConfig)
        if getattr(args, f"cfg_{f.name}", None) is not None
    }
    if overrides:
        cfg = cfg.replace(**overrides)
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qvadgen",
                                     description="query-variant ad text generation pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-graph", help="corpus JSONL -> vocab + association graph")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--stopwords", default=None)
    _add_config_flags(p)

    p = sub.add_parser("train", help="run training stages over a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--graph-dir", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--stage", choices=["all", "1", "2", "3"], default="all")
    p.add_argument("--stopwords", default=None)
    _add_config_flags(p)

    p = sub.add_parser("generate", help="checkpoint + test JSONL -> generations JSONL")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--graph-dir", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=["greedy", "beam"], default="greedy")
    p.add_argument("--selection", choices=list(POLICIES), default="learned")
    p.add_argument("--no-query", action="store_true",
                   help="keywords-only input for the query-variant field too")
    p.add_argument("--compare-policies", default=None, metavar="REPORT",
                   help="also evaluate all selection policies into this TSV report")
    p.add_argument("--stopwords", default=None)
    _add_config_flags(p)

    p = sub.add_parser("evaluate", help="generations + test set -> metric report")
    p.add_argument("--generations", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--per-item", default=None, help="per-item breakdown CSV path")
    p.add_argument("--stopwords", default=None)
    _add_config_flags(p)

    p = sub.add_parser("gradcheck", help="run the finite-difference gradient suite")
    p.add_argument("--quick", action="store_true", help="reduced model dims")
    _add_config_flags(p)

    p = sub.add_parser("inspect-graph", help="print a word's graph neighborhood")
    p.add_argument("--graph-dir", required=True)
    p.add_argument("--word", required=True)
    _add_config_flags(p)
    return parser


def _load_graph_dir(graph_dir) -> tuple[Vocab, Akwg]:
    graph_dir = Path(graph_dir)
    vocab_path = graph_dir / "vocab.txt"
    graph_path = graph_dir / "akwg.bin"
    if not vocab_path.exists() or not graph_path.exists():
        raise DataError(f"graph dir {graph_dir} must contain vocab.txt and akwg.bin")
    return Vocab.load(vocab_path), Akwg.load(graph_path)


def _load_test_records(args, cfg):
    stopwords = load_stopwords(args.stopwords) if args.stopwords else frozenset()
    try:
        records = load_records(args.test, stopwords,
                               max_query_len=cfg.max_query_len,
                               min_keywords=cfg.min_keywords,
                               max_keywords=cfg.max_keywords,
                               max_text_len=cfg.max_text_len)
    except OSError as exc:
        raise DataError(str(exc)) from exc
    if not records:
        raise DataError(f"no valid records in {args.test}")
    return records, stopwords


def cmd_build_graph(args) -> int:
    cfg = _resolve_config(args)
    stopwords = load_stopwords(args.stopwords) if args.stopwords else frozenset()
    try:
        records = load_records(args.corpus, stopwords,
                               max_query_len=cfg.max_query_len,
                               min_keywords=cfg.min_keywords,
                               max_keywords=cfg.max_keywords,
                               max_text_len=cfg.max_text_len)
    except OSError as exc:
        raise DataError(str(exc)) from exc
    if not records:
        raise DataError(f"no valid records in {args.corpus}")
    vocab = build_vocab(records, cfg.vocab_size)
    docs = []
    for rec in records:
        ids = [vocab.id(w) for w in rec.ad_text if w in vocab]
        docs.append(ids)
    counts = count_cooccurrence(docs)
    graph = build_graph(counts, cfg.xi, cfg.max_degree, n_nodes=len(vocab))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    vocab.save(out / "vocab.txt")
    graph.save(out / "akwg.bin")
    graph.export_tsv(out / "akwg.tsv", vocab)
    print(f"vocab {len(vocab)} words; graph {graph.edge_count()} edges -> {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    set_default_dtype(cfg.dtype)
    vocab, graph = _load_graph_dir(args.graph_dir)
    stopwords = load_stopwords(args.stopwords) if args.stopwords else frozenset()
    try:
        records = load_records(args.corpus, stopwords,
                               max_query_len=cfg.max_query_len,
                               min_keywords=cfg.min_keywords,
                               max_keywords=cfg.max_keywords,
                               max_text_len=cfg.max_text_len)
    except OSError as exc:
        raise DataError(str(exc)) from exc
    if not records:
        raise DataError(f"no valid records in {args.corpus}")
    trainer = Trainer(records, vocab, graph, cfg, args.out_dir, stopwords=stopwords)
    if args.stage == "all":
        results = trainer.run_all()
    elif args.stage == "1":
        results = [trainer.stage1()]
    elif args.stage == "2":
        results = [trainer.stage2()]
    else:
        results = [trainer.stage3()]
    for res in results:
        print(f"stage {res.stage} done -> {res.checkpoint}")
    return EXIT_OK


def cmd_generate(args) -> int:
    cfg = _resolve_config(args)
    set_default_dtype(cfg.dtype)
    vocab, graph = _load_graph_dir(args.graph_dir)
    records, stopwords = _load_test_records(args, cfg)
    params = init_model_params(cfg, len(vocab))
    try:
        load_checkpoint(args.checkpoint, params, cfg.config_hash())
    except (OSError, ValueError) as exc:
        raise DataError(str(exc)) from exc

    def assert_no_query(phase, ex, base, ext):
        if any(t == 1 for t in ext.node_types):
            raise AssertionError("query node in a --no-query sub-graph")

    hook = assert_no_query if args.no_query else None
    outputs = generate_outputs(records, vocab, graph, params, cfg,
                               selection=args.selection, mode=args.mode,
                               with_query=not args.no_query,
                               stopwords=stopwords, graph_hook=hook)
    write_outputs_jsonl(args.out, outputs)
    print(f"{len(outputs)} generations -> {args.out}")
    if args.compare_policies:
        reports = compare_selection_policies(records, vocab, graph, params, cfg,
                                             stopwords=stopwords)
        Path(args.compare_policies).write_text(comparison_table(reports), encoding="utf-8")
        print(f"policy comparison -> {args.compare_policies}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _resolve_config(args)
    records, _ = _load_test_records(args, cfg)
    try:
        outputs = read_outputs_jsonl(args.generations)
    except OSError as exc:
        raise DataError(str(exc)) from exc
    try:
        report, rows = evaluate_run(outputs, records)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    Path(args.out).write_text(report.to_json(), encoding="utf-8")
    if args.per_item:
        write_per_item_csv(args.per_item, rows)
    print(json.dumps(report.to_dict(), sort_keys=True))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    cfg = _resolve_config(args)
    set_default_dtype("float64")  # gradient checks are defined at 64-bit
    results = gradient_suite(full=not args.quick)
    failed = [r for r in results if not r.ok]
    for r in results:
        status = "ok" if r.ok else "FAIL"
        print(f"{status} {r.name}: max_err={r.max_err:.3e} tol={r.tol:.0e}")
    if failed:
        print(f"error: numeric: {len(failed)} gradient checks failed", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_inspect_graph(args) -> int:
    _resolve_config(args)
    vocab, graph = _load_graph_dir(args.graph_dir)
    if args.word not in vocab:
        raise DataError(f"word {args.word!r} not in vocabulary")
    wid = vocab.id(args.word)
    nbrs = graph.neighbors(wid)
    print(f"{args.word}: {len(nbrs)} neighbors (xi={graph.xi}, max_degree={graph.max_degree})")
    for j, w in nbrs:
        print(f"{vocab.word(j)}\tpmi={w * graph.xi:.4f}\tweight={w:.4f}")
    return EXIT_OK


_COMMANDS = {
    "build-graph": cmd_build_graph,
    "train": cmd_train,
    "generate": cmd_generate,
    "evaluate": cmd_evaluate,
    "gradcheck": cmd_gradcheck,
    "inspect-graph": cmd_inspect_graph,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except DataError as exc:
        print(f"error: data: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NonFiniteLoss, NonFiniteGradient, FloatingPointError) as exc:
        print(f"error: numeric: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: data: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
