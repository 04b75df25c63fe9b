"""Command-line front end: synth, train, eval, ablate, recommend.

Exit codes: 0 success, 1 runtime or data error, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import csv
import datetime as dt
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .binio import CheckpointError
from .config import ConfigError, TrainConfig, load_config_file, parse_overrides
from .data import (
    SyntheticConfig,
    generate_synthetic,
    load_checkpoint,
    load_citation_dataset,
    read_checkpoint_meta,
    save_checkpoint,
    write_dataset,
)
from .decoder import recommend
from .model import RandomScorer
from .training import DEFAULT_GRID, TABLE_COLUMNS, Trainer, evaluate, run_ablation, table_row

log = logging.getLogger("tgnrec")

DEFAULT_SEED = 0
EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


def _positive_int(raw: str) -> int:
    try:
        v = int(raw)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {raw!r}") from None
    if v <= 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {v}")
    return v


def _k_list(raw: str) -> tuple[int, ...]:
    try:
        ks = tuple(int(x) for x in raw.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad K list {raw!r}") from None
    if not ks or any(k <= 0 for k in ks):
        raise argparse.ArgumentTypeError(f"K values must be positive, got {raw!r}")
    return tuple(sorted(ks))


# ------------------------------------------------------------------ helpers


def _resolve_seed(args, fallback: int | None = None) -> int:
    if args.seed is not None:
        return args.seed
    if fallback is not None:
        return fallback
    log.info("no --seed given; using default seed %d", DEFAULT_SEED)
    return DEFAULT_SEED


def _data_paths(data, embeddings=None) -> tuple[Path, Path | None]:
    p = Path(data)
    if p.is_dir():
        papers = p / "papers.jsonl"
        emb = p / "embeddings.txt"
        emb = emb if emb.exists() else None
    else:
        papers, emb = p, None
    if embeddings is not None:
        emb = Path(embeddings)
    if not papers.exists():
        raise DataError(f"papers file not found: {papers}")
    if emb is not None and not emb.exists():
        raise DataError(f"embeddings file not found: {emb}")
    return papers, emb


def _load_graph(data, embeddings=None):
    papers, emb = _data_paths(data, embeddings)
    graph, report = load_citation_dataset(papers, emb)
    log.info("loaded %d papers, %d citation events (%d records rejected, %d references dropped)",
             graph.node_count, len(graph), len(report.rejected), report.dropped_references)
    if len(graph) == 0:
        raise DataError(f"{papers} contains no citation events")
    return graph, report, papers, emb


def _build_config(args) -> TrainConfig:
    cfg = load_config_file(args.config) if args.config else TrainConfig()
    changes = {}
    for flag in ("epochs", "batch_size", "lr"):
        v = getattr(args, flag, None)
        if v is not None:
            changes[flag] = v
    if getattr(args, "set", None):
        pairs = {}
        for item in args.set:
            if "=" not in item:
                raise UsageError(f"--set expects key=value, got {item!r}")
            k, v = item.split("=", 1)
            pairs[k.strip()] = v
        changes.update(parse_overrides(pairs))
    cfg = cfg.replace(**changes)
    cfg = cfg.replace(seed=_resolve_seed(args, cfg.seed if args.config or "seed" in changes else None))
    return cfg.validate_config()


def _write_table(path: Path, rows: list[dict], extra_cols=()) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=TABLE_COLUMNS + list(extra_cols))
        w.writeheader()
        for row in rows:
            w.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in row.items()})


def _fmt(v) -> str:
    return "" if v is None else f"{v:.6f}"


# ----------------------------------------------------------------- commands


def cmd_synth(args) -> int:
    cfg = SyntheticConfig(
        nodes=args.nodes,
        mean_out_degree=args.mean_out_degree,
        exponent=args.exponent,
        half_life=args.half_life,
        feature_dim=args.feature_dim,
        arrival_rate=args.arrival_rate,
        seed=_resolve_seed(args),
        topics=args.topics,
        topic_affinity=args.topic_affinity,
        fitness_sigma=args.fitness_sigma,
        feature_noise=args.feature_noise,
    )
    try:
        cfg.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    graph = generate_synthetic(cfg)
    papers, emb = write_dataset(graph, args.out)
    print(f"wrote {graph.node_count} papers and {len(graph)} citations to {papers}")
    if emb:
        print(f"wrote embeddings to {emb}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _build_config(args)
    graph, _, papers, emb = _load_graph(args.data, args.embeddings)
    if args.resume:
        trainer = load_checkpoint(args.resume, graph).trainer
        log.info("resumed at epoch %d batch %d", trainer.epoch, trainer.batch_index)
    else:
        if cfg.memory_init == "features" and graph.node_features is None:
            raise ConfigError("memory_init = features needs an embeddings file")
        trainer = Trainer(graph, cfg)
    result = trainer.run(max_steps=args.max_steps)
    extra = {"data": str(papers.resolve()), "embeddings": None if emb is None else str(emb.resolve())}
    save_checkpoint(args.out_checkpoint, trainer, extra)
    history = Path(args.history) if args.history else Path(args.out_checkpoint).with_suffix(".history.csv")
    with open(history, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "loss", "val_mrr", "val_ap", "val_auc"])
        for h in result.history:
            w.writerow([h.epoch, _fmt(h.loss), _fmt(h.val_mrr), _fmt(h.val_ap), _fmt(h.val_auc)])
    for h in result.history:
        print(f"epoch {h.epoch}: loss {h.loss:.4f} val_mrr {_fmt(h.val_mrr)} val_ap {_fmt(h.val_ap)} val_auc {_fmt(h.val_auc)}")
    state = "finished" if trainer.finished else f"stopped at epoch {trainer.epoch + 1}, batch {trainer.batch_index}"
    print(f"training {state}; checkpoint {args.out_checkpoint}, history {history}")
    return EXIT_OK


def _restore(args):
    """Graph, trainer and data paths for a saved checkpoint."""
    if not Path(args.checkpoint).exists():
        raise DataError(f"checkpoint not found: {args.checkpoint}")
    meta = read_checkpoint_meta(args.checkpoint)
    data = args.data or meta.get("data")
    if data is None:
        raise UsageError("checkpoint does not record its dataset; pass --data")
    embeddings = getattr(args, "embeddings", None) or (None if args.data else meta.get("embeddings"))
    graph, report, _, _ = _load_graph(data, embeddings)
    ckpt = load_checkpoint(args.checkpoint, graph)
    return graph, report, ckpt


def cmd_eval(args) -> int:
    graph, _, ckpt = _restore(args)
    cfg = ckpt.config
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    model = ckpt.trainer.model if args.model == "checkpoint" else RandomScorer(graph.node_count, cfg.seed)
    report = evaluate(graph, args.split, model, cfg, negatives=args.negatives, protocol=args.protocol,
                      k_list=args.K)
    lines = [f"split: {args.split}", f"model: {args.model}"] + report.lines()
    print("\n".join(lines))
    out = Path(args.out) if args.out else Path(args.checkpoint).with_suffix(f".{args.split}.metrics.txt")
    out.write_text("\n".join(lines) + "\n")
    table = out.with_suffix(".csv")
    _write_table(table, [table_row(cfg, report)])
    log.info("wrote %s and %s", out, table)
    return EXIT_OK


def _parse_grid(raw: str) -> dict:
    if raw == "default":
        return dict(DEFAULT_GRID)
    grid = {}
    for part in raw.split(";"):
        if "=" not in part:
            raise UsageError(f"bad grid spec {part!r}; expected key=v1,v2")
        k, v = part.split("=", 1)
        k = k.strip()
        if k not in DEFAULT_GRID:
            raise UsageError(f"grid axis {k!r} is not one of {sorted(DEFAULT_GRID)}")
        grid[k] = tuple(x.strip() for x in v.split(",") if x.strip())
    return grid


def cmd_ablate(args) -> int:
    cfg = _build_config(args)
    grid = _parse_grid(args.grid)
    graph, _, _, _ = _load_graph(args.data, args.embeddings)
    if graph.node_features is None and "features" in grid.get("memory_init", (cfg.memory_init,)):
        raise ConfigError("feature-initialised cells need an embeddings file")
    results = run_ablation(graph, cfg, grid, workers=args.workers)
    rows = []
    for c, report, losses in results:
        row = table_row(c, report)
        row["epoch1_loss"] = losses[0] if losses else float("nan")
        row["final_loss"] = losses[-1] if losses else float("nan")
        rows.append(row)
        print(f"{row['message']:>2} {row['aggregator']:>4} init={row['initialization']:>3}  "
              f"MRR {report.mrr:.4f}  R@10 {report.recall_at.get(10, math.nan):.4f}  AP {report.ap:.4f}")
    _write_table(Path(args.out), rows, ("epoch1_loss", "final_loss"))
    print(f"wrote {len(rows)} rows to {args.out}")
    return EXIT_OK


def _query_time(raw: str | None, report, default: float) -> float:
    if raw is None:
        return default
    try:
        return float(raw)
    except ValueError:
        pass
    try:
        day = dt.date.fromisoformat(raw)
    except ValueError:
        raise UsageError(f"--t must be a day offset or an ISO date, got {raw!r}") from None
    return float((day - report.epoch).days)


def cmd_recommend(args) -> int:
    graph, report, ckpt = _restore(args)
    index = report.index
    if args.paper not in index:
        raise DataError(f"unknown paper id {args.paper!r}")
    src = index[args.paper]
    t = _query_time(args.t, report, float(graph.node_times[src]))
    model = ckpt.trainer.model
    cfg = ckpt.config
    # memory holds exactly the events strictly before t
    model.reset_memory()
    stop = int(np.searchsorted(graph.t, t, side="left"))
    for b in graph.batches(range(0, stop), cfg.eval_batch_size):
        model.observe(b)
    ranked = recommend(model, graph, src, t, k=args.k)
    print(f"# {args.paper} at t={t:g}: {len(ranked)} recommendations")
    for rank, c in enumerate(ranked, 1):
        print(f"{rank}\t{report.id_map[c.node]}\t{c.probability:.6f}")
    return EXIT_OK


# ------------------------------------------------------------------- parser


def _add_train_flags(p) -> None:
    p.add_argument("--data", required=True, help="dataset directory or papers.jsonl")
    p.add_argument("--embeddings", help="embeddings file (default: <data>/embeddings.txt)")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config field")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=_positive_int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tgnrec", description=__doc__.splitlines()[0])
    parser.add_argument("-q", "--quiet", action="store_true", help="only log warnings")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic citation dataset")
    p.add_argument("--nodes", type=_positive_int, default=500)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--mean-out-degree", type=float, default=10.0)
    p.add_argument("--exponent", type=float, default=1.0)
    p.add_argument("--half-life", type=float, default=365.0)
    p.add_argument("--feature-dim", type=_positive_int, default=32)
    p.add_argument("--arrival-rate", type=float, default=1.0)
    p.add_argument("--topics", type=_positive_int, default=8)
    p.add_argument("--topic-affinity", type=float, default=5.0)
    p.add_argument("--fitness-sigma", type=float, default=1.0)
    p.add_argument("--feature-noise", type=float, default=0.5)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    _add_train_flags(p)
    p.add_argument("--out-checkpoint", required=True)
    p.add_argument("--history", help="loss history CSV (default: next to the checkpoint)")
    p.add_argument("--resume", help="continue from this checkpoint")
    p.add_argument("--max-steps", type=_positive_int, help="stop after this many optimizer steps")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on val or test")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", help="dataset (default: the one recorded in the checkpoint)")
    p.add_argument("--embeddings")
    p.add_argument("--split", choices=("val", "test"), default="test")
    p.add_argument("--K", type=_k_list, default=(10, 20, 50))
    p.add_argument("--negatives", type=_positive_int)
    p.add_argument("--protocol", choices=("one_positive", "all_references"))
    p.add_argument("--model", choices=("checkpoint", "random"), default="checkpoint")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="report path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train and test the message x aggregator x init grid")
    _add_train_flags(p)
    p.add_argument("--grid", default="default", help="'default' or 'axis=v1,v2;axis=...'")
    p.add_argument("--workers", type=_positive_int, default=1)
    p.add_argument("--out", default="ablation.csv")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("recommend", help="top-K citation suggestions for one paper")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data")
    p.add_argument("--paper", required=True)
    p.add_argument("--t", help="query time: day offset or ISO date (default: the paper's date)")
    p.add_argument("--k", type=_positive_int, default=10)
    p.set_defaults(func=cmd_recommend)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"tgnrec {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CheckpointError, OSError, ValueError, KeyError, RuntimeError) as exc:
        print(f"tgnrec {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
