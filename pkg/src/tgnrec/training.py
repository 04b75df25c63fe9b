"""Chronological training, streaming evaluation and the ablation grid."""

from __future__ import annotations

import itertools
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import metrics as M
from .autodiff import Adam
from .config import TrainConfig
from .decoder import sample_negatives
from .graph import TemporalGraph
from .memory import restore, snapshot
from .model import TGNTRec

log = logging.getLogger(__name__)

_SPLITS = {"train": 0, "val": 1, "test": 2}
# keeps evaluation negatives independent of the training stream
_EVAL_STREAM = 7_919


@dataclass
class MetricsReport:
    mrr: float
    recall_at: dict[int, float]
    precision_at: dict[int, float]
    ap: float
    auc: float
    queries: int
    protocol: str = "one_positive"
    negatives: int = 49
    skipped: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["recall_at"] = {str(k): v for k, v in self.recall_at.items()}
        d["precision_at"] = {str(k): v for k, v in self.precision_at.items()}
        return d

    def lines(self) -> list[str]:
        out = [f"protocol: {self.protocol}", f"negatives: {self.negatives}", f"queries: {self.queries}",
               f"skipped: {self.skipped}", f"mrr: {self.mrr:.6f}"]
        out += [f"recall@{k}: {v:.6f}" for k, v in self.recall_at.items()]
        out += [f"precision@{k}: {v:.6f}" for k, v in self.precision_at.items()]
        out += [f"ap: {self.ap:.6f}", f"auc: {self.auc:.6f}"]
        return out


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    val_mrr: float | None = None
    val_ap: float | None = None
    val_auc: float | None = None


def smoothed(losses, window: int = 3) -> list[float]:
    """Trailing moving average over at most ``window`` epochs."""
    out = []
    for i in range(len(losses)):
        chunk = losses[max(0, i - window + 1): i + 1]
        out.append(float(np.mean(chunk)))
    return out


# ------------------------------------------------------------------ evaluate


def _eval_batches(graph: TemporalGraph, span: range, batch_size: int, align: bool):
    """Evaluation slices; with ``align`` a slice never splits one timestamp."""
    cursor, i = span.start, 0
    while cursor < span.stop:
        stop = min(cursor + batch_size, span.stop)
        if align:
            while stop < span.stop and graph.t[stop] == graph.t[stop - 1]:
                stop += 1
        yield graph.slice(cursor, stop, i)
        cursor, i = stop, i + 1


def evaluate(
    graph: TemporalGraph,
    split: str,
    model,
    config: TrainConfig,
    replay: bool = True,
    negatives: int | None = None,
    protocol: str | None = None,
    k_list=None,
) -> MetricsReport:
    """Streaming ranking evaluation over the ``val`` or ``test`` events.

    Each positive ``src -> dst`` is ranked against sampled negatives using
    memory from strictly earlier batches; the batch is then folded into memory.
    With ``replay`` the memory is rebuilt from scratch up to the split start.
    """
    if split not in ("val", "test"):
        raise ValueError(f"split must be 'val' or 'test', got {split!r}")
    n_neg = config.eval_negatives if negatives is None else negatives
    protocol = protocol or config.eval_protocol
    ks = tuple(k_list or config.k_list)
    span = graph.split_chronological(config.split)[_SPLITS[split]]
    if len(span) == 0:
        raise ValueError(f"{split} split is empty")
    if replay:
        model.reset_memory()
        for b in _eval_batches(graph, range(0, span.start), config.eval_batch_size, False):
            model.observe(b)
    else:
        model.flush()

    rr, pos_scores, neg_scores = [], [], []
    hits = {k: [] for k in ks}
    prec = {k: [] for k in ks}
    skipped = 0
    for b in _eval_batches(graph, span, config.eval_batch_size, protocol == "all_references"):
        rng = np.random.default_rng((config.seed, _EVAL_STREAM, _SPLITS[split], b.batch_index))
        if protocol == "one_positive":
            negs = sample_negatives(b.dst, n_neg, graph.node_count, rng)
            cands = np.concatenate([b.dst[:, None], negs], axis=1)
            logits = model.score_candidates(graph, b.src, cands, b.t)
            for row in logits:
                r = M.positive_rank(row[0], row[1:])
                rr.append(1.0 / r)
                for k in ks:
                    hits[k].append(float(r <= k))
                    prec[k].append(float(r <= k) / k)
            pos_scores.extend(logits[:, 0])
            neg_scores.extend(logits[:, 1])
        else:
            groups = {}
            for i, key in enumerate(zip(b.src.tolist(), b.t.tolist())):
                groups.setdefault(key, []).append(i)
            for idx in groups.values():
                idx = np.asarray(idx)
                refs = np.unique(b.dst[idx])
                pool = np.setdiff1d(np.arange(graph.node_count), np.r_[refs, b.src[idx[0]]])
                if len(refs) == 0:
                    skipped += 1
                    continue
                negs = pool[rng.integers(0, len(pool), size=n_neg)]
                cands = np.concatenate([refs, negs])
                logits = model.score_candidates(graph, b.src[idx[:1]], cands[None, :], b.t[idx[:1]])[0]
                order = np.lexsort((cands, -logits))
                relevant = np.zeros(len(cands), bool)
                relevant[: len(refs)] = True
                ranked = relevant[order]
                rr.append(1.0 / (1 + int(np.argmax(ranked))))
                for k in ks:
                    h = int(ranked[:k].sum())
                    hits[k].append(M.recall_at_k(h, len(refs)))
                    prec[k].append(M.precision_at_k(h, k))
                pos_scores.extend(logits[: len(refs)])
                neg_scores.extend(logits[len(refs): len(refs) + len(refs)])
        model.observe(b)

    return MetricsReport(
        mrr=float(np.mean(rr)),
        recall_at={k: float(np.mean(hits[k])) for k in ks},
        precision_at={k: float(np.mean(prec[k])) for k in ks},
        ap=M.average_precision_from_scores(pos_scores, neg_scores),
        auc=M.auc(pos_scores, neg_scores),
        queries=len(rr),
        protocol=protocol,
        negatives=n_neg,
        skipped=skipped,
    )


# --------------------------------------------------------------------- train


@dataclass
class TrainResult:
    model: TGNTRec
    history: list[EpochRecord]
    trainer: "Trainer"

    @property
    def memory(self):
        return self.model.memory

    @property
    def losses(self) -> list[float]:
        return [h.loss for h in self.history]


class Trainer:
    """Resumable training loop.

    ``phase`` is ``"train"`` while gradient steps run and ``"eval"`` during
    end-of-epoch validation, which runs on a memory snapshot that is
    restored afterwards.
    """

    def __init__(self, graph: TemporalGraph, config: TrainConfig, model: TGNTRec | None = None):
        config.validate_config()
        if not graph.frozen:
            raise ValueError("graph must be frozen before training")
        self.graph = graph
        self.config = config
        self.model = model or TGNTRec(config, graph.node_count, graph.node_features, graph.node_times)
        self.optimizer = Adam(self.model.parameters(), lr=config.lr)
        self.spans = graph.split_chronological(config.split)
        self.epoch = 0
        self.batch_index = 0
        self.cursor = self.spans[0].start
        self.in_epoch = False
        self.epoch_losses: list[float] = []
        self.history: list[EpochRecord] = []
        self.phase = "idle"
        self.step_hooks = []

    @property
    def finished(self) -> bool:
        return self.epoch >= self.config.epochs

    def run(self, max_steps: int | None = None) -> TrainResult:
        """Train until done, or until ``max_steps`` optimizer steps have run."""
        cfg, train_span = self.config, self.spans[0]
        steps = 0
        while not self.finished:
            if not self.in_epoch:
                self.model.reset_memory()
                self.in_epoch = True
                self.cursor, self.batch_index = train_span.start, 0
                self.epoch_losses = []
            if max_steps is not None and steps >= max_steps:
                break
            self.phase = "train"
            batch = self.graph.next_batch(self.cursor, cfg.batch_size, train_span.stop, self.batch_index)
            if batch is None:
                self._end_epoch()
                continue
            rng = np.random.default_rng((cfg.seed, self.epoch, self.batch_index))
            negs = sample_negatives(batch.dst, cfg.negatives, self.graph.node_count, rng)
            for hook in self.step_hooks:
                hook(self, batch)
            loss = self.model.train_step(self.graph, batch, negs, self.optimizer)
            self.epoch_losses.append(loss)
            self.cursor, self.batch_index = batch.stop, self.batch_index + 1
            steps += 1
        self.phase = "idle"
        return TrainResult(self.model, self.history, self)

    def _end_epoch(self) -> None:
        self.model.flush()
        record = EpochRecord(self.epoch + 1, float(np.mean(self.epoch_losses)) if self.epoch_losses else float("nan"))
        if self.config.validate and len(self.spans[1]) > 0:
            self.phase = "eval"
            saved = snapshot(self.model.memory)
            rep = evaluate(self.graph, "val", self.model, self.config, replay=False)
            restore(self.model.memory, saved)
            record.val_mrr, record.val_ap, record.val_auc = rep.mrr, rep.ap, rep.auc
            self.phase = "train"
        self.history.append(record)
        log.info("epoch %d loss %.4f val_mrr %s", record.epoch, record.loss, record.val_mrr)
        self.epoch += 1
        self.in_epoch = False

    def save(self, path) -> None:
        from .data import save_checkpoint

        save_checkpoint(path, self)

    @classmethod
    def resume(cls, path, graph: TemporalGraph, config: TrainConfig | None = None) -> "Trainer":
        from .data import load_checkpoint

        return load_checkpoint(path, graph, config).trainer


def train(graph: TemporalGraph, config: TrainConfig) -> TrainResult:
    return Trainer(graph, config).run()


# ------------------------------------------------------------------ ablation

TABLE_COLUMNS = ["encoder", "initialization", "message", "aggregator", "MRR",
                 "Recall@10", "Recall@20", "Recall@50", "Precision@10", "Precision@20", "Precision@50",
                 "AP", "AUC", "protocol"]

DEFAULT_GRID = {
    "message": ("identity", "learned"),
    "aggregator": ("mean", "last"),
    "memory_init": ("zeros", "features"),
}


def table_row(config: TrainConfig, report: MetricsReport) -> dict:
    row = {
        "encoder": "TGN-TRec",
        "initialization": "yes" if config.memory_init == "features" else "no",
        "message": "Sl" if config.message == "learned" else "Id",
        "aggregator": config.aggregator,
        "MRR": report.mrr,
        "AP": report.ap,
        "AUC": report.auc,
        "protocol": report.protocol,
    }
    for k in (10, 20, 50):
        row[f"Recall@{k}"] = report.recall_at.get(k, float("nan"))
        row[f"Precision@{k}"] = report.precision_at.get(k, float("nan"))
    return row


def _run_cell(args):
    graph, config = args
    result = train(graph, config)
    report = evaluate(graph, "test", result.model, config)
    return config, report, result.losses


def run_ablation(graph: TemporalGraph, base: TrainConfig, grid: dict | None = None, workers: int = 1):
    """Train and test one model per grid cell; returns ``[(config, report, losses)]``."""
    grid = grid or DEFAULT_GRID
    keys = list(grid)
    configs = [base.replace(**dict(zip(keys, combo))) for combo in itertools.product(*(grid[k] for k in keys))]
    for c in configs:
        c.validate_config()
    jobs = [(graph, c) for c in configs]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_run_cell, jobs))
    return [_run_cell(j) for j in jobs]
