"""Dataset ingestion, synthetic citation networks and training checkpoints."""

from __future__ import annotations

import datetime as dt
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .binio import CheckpointError, Reader, Writer
from .config import TrainConfig
from .graph import TemporalGraph
from .memory import read_memory, write_memory

log = logging.getLogger(__name__)


# ----------------------------------------------------------------- ingestion


@dataclass
class PaperRecord:
    id: str
    date: dt.date
    references: list[str]
    features: np.ndarray | None = None


@dataclass
class IngestReport:
    id_map: list[str] = field(default_factory=list)
    epoch: dt.date | None = None
    rejected: list[tuple[int, str]] = field(default_factory=list)
    dropped_references: int = 0
    dropped_self_citations: int = 0
    duplicate_papers: int = 0
    missing_embeddings: int = 0

    @property
    def index(self) -> dict[str, int]:
        return {pid: i for i, pid in enumerate(self.id_map)}


def _parse_date(raw) -> dt.date:
    if not isinstance(raw, str) or not raw.strip():
        raise ValueError("missing publication date")
    raw = raw.strip()
    try:
        return dt.date.fromisoformat(raw[:10]) if len(raw) > 10 and raw[10] in "T " else dt.date.fromisoformat(raw)
    except ValueError:
        raise ValueError(f"unparseable date {raw!r}") from None


def read_papers(path) -> tuple[list[tuple[int, PaperRecord]], list[tuple[int, str]]]:
    """Parse a JSON-lines papers file into ``(line_no, record)`` pairs plus rejections."""
    good, bad = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                pid = obj["id"]
                date = _parse_date(obj.get("date"))
                refs = obj.get("references") or []
                if not isinstance(refs, list):
                    raise ValueError("references must be a list")
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                bad.append((lineno, str(exc)))
                continue
            good.append((lineno, PaperRecord(str(pid), date, [str(r) for r in refs])))
    return good, bad


def read_embeddings(path) -> tuple[int, dict[str, np.ndarray]]:
    """``dim D`` header, then ``id v1 .. vD`` per line."""
    vectors = {}
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2 or header[0] != "dim":
            raise ValueError(f"{path}: first line must be 'dim D'")
        dim = int(header[1])
        for lineno, line in enumerate(fh, 2):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != dim + 1:
                raise ValueError(f"{path}:{lineno}: expected {dim} values, got {len(parts) - 1}")
            vectors[parts[0]] = np.array([float(x) for x in parts[1:]])
    return dim, vectors


def load_citation_dataset(papers_path, embeddings_path=None) -> tuple[TemporalGraph, IngestReport]:
    """Build a frozen graph from a papers file (and optional embeddings).

    Timestamps are whole days since the earliest accepted publication date.
    Node ids follow the order in which papers appear in the file.
    """
    records, rejected = read_papers(papers_path)
    report = IngestReport(rejected=rejected)
    papers: list[PaperRecord] = []
    index: dict[str, int] = {}
    for lineno, rec in records:
        if rec.id in index:
            report.duplicate_papers += 1
            report.rejected.append((lineno, f"duplicate paper id {rec.id!r}"))
            continue
        index[rec.id] = len(papers)
        papers.append(rec)
    report.id_map = [p.id for p in papers]
    if rejected:
        log.warning("rejected %d paper records (first at line %d)", len(rejected), rejected[0][0])

    if not papers:
        graph = TemporalGraph(0)
        return graph.freeze(), report
    epoch = min(p.date for p in papers)
    report.epoch = epoch
    node_times = np.array([(p.date - epoch).days for p in papers], dtype=np.float64)

    rows = []
    for i, p in enumerate(papers):
        for ref in p.references:
            j = index.get(ref)
            if j is None:
                report.dropped_references += 1
            elif j == i:
                report.dropped_self_citations += 1
            else:
                rows.append((i, j, node_times[i]))
    if report.dropped_references:
        log.warning("dropped %d references to papers outside the corpus", report.dropped_references)

    features = None
    if embeddings_path is not None:
        dim, vectors = read_embeddings(embeddings_path)
        features = np.zeros((len(papers), dim))
        for i, p in enumerate(papers):
            v = vectors.get(p.id)
            if v is None:
                report.missing_embeddings += 1
            else:
                features[i] = v

    graph = TemporalGraph(len(papers), node_features=features, node_times=node_times)
    graph.bulk_load(rows)
    return graph.freeze(), report


# ----------------------------------------------------------------- synthetic


@dataclass
class SyntheticConfig:
    nodes: int = 500
    mean_out_degree: float = 10.0
    exponent: float = 1.0
    half_life: float = 365.0
    feature_dim: int = 32
    arrival_rate: float = 1.0
    seed: int = 0
    topics: int = 8
    topic_affinity: float = 5.0
    fitness_sigma: float = 1.0
    feature_noise: float = 0.5

    def validate(self) -> "SyntheticConfig":
        if self.nodes <= 0:
            raise ValueError("nodes must be positive")
        if not self.mean_out_degree > 0:
            raise ValueError("mean_out_degree must be positive")
        if self.mean_out_degree >= self.nodes:
            raise ValueError(f"mean out-degree {self.mean_out_degree} must be below node count {self.nodes}")
        if self.exponent < 0:
            raise ValueError("preferential-attachment exponent must be >= 0")
        for name in ("half_life", "arrival_rate", "topic_affinity"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.feature_dim <= 0 or self.topics <= 0:
            raise ValueError("feature_dim and topics must be positive")
        if self.fitness_sigma < 0 or self.feature_noise < 0:
            raise ValueError("fitness_sigma and feature_noise must be non-negative")
        return self


def generate_synthetic(config: SyntheticConfig) -> TemporalGraph:
    """Growing citation network with preferential attachment, ageing and topics.

    Each arriving paper cites ``Poisson(mean_out_degree)`` distinct earlier
    papers with weight ``fitness * (in_degree + 1) ** exponent *
    2 ** (-age / half_life)``, boosted by ``topic_affinity`` within its topic.
    Features are the topic centre plus the log-fitness along a fixed
    direction plus Gaussian noise, so they carry real signal about who gets
    cited by whom.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    n = config.nodes
    topics = rng.integers(0, config.topics, size=n)
    centres = rng.normal(0.0, 1.0, size=(config.topics, config.feature_dim))
    log_fit = rng.normal(0.0, config.fitness_sigma, size=n) if config.fitness_sigma > 0 else np.zeros(n)
    direction = rng.normal(0.0, 1.0, size=config.feature_dim)
    direction /= np.linalg.norm(direction)
    features = (centres[topics] + np.outer(log_fit, direction)
                + rng.normal(0.0, config.feature_noise, size=(n, config.feature_dim)))
    gaps = rng.exponential(1.0 / config.arrival_rate, size=n)
    gaps[0] = 0.0
    arrival = np.floor(np.cumsum(gaps))
    fitness = np.exp(log_fit)

    indeg = np.zeros(n)
    rows = []
    for i in range(1, n):
        m = min(i, int(rng.poisson(config.mean_out_degree)))
        if m == 0:
            continue
        age = arrival[i] - arrival[:i]
        decay = np.exp2(-age / config.half_life) if math.isfinite(config.half_life) else np.ones(i)
        w = fitness[:i] * (indeg[:i] + 1.0) ** config.exponent * decay
        w = w * np.where(topics[:i] == topics[i], config.topic_affinity, 1.0)
        if not w.sum() > 0:
            w = np.ones(i)
        m = min(m, int(np.count_nonzero(w)))
        targets = rng.choice(i, size=m, replace=False, p=w / w.sum())
        indeg[targets] += 1
        rows.extend((i, int(j), float(arrival[i])) for j in targets)

    graph = TemporalGraph(n, node_features=features, node_times=arrival)
    graph.bulk_load(rows)
    return graph.freeze()


def write_dataset(graph: TemporalGraph, out_dir, epoch: dt.date = dt.date(2000, 1, 1), prefix: str = "P") -> tuple[Path, Path | None]:
    """Write ``papers.jsonl`` (and ``embeddings.txt`` when features exist)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    width = max(5, len(str(graph.node_count)))
    ids = [f"{prefix}{i:0{width}d}" for i in range(graph.node_count)]
    refs: list[list[str]] = [[] for _ in range(graph.node_count)]
    for e in graph.events:
        refs[e.src].append(ids[e.dst])
    times = graph.node_times if graph.node_times is not None else np.zeros(graph.node_count)
    papers = out / "papers.jsonl"
    with open(papers, "w", encoding="utf-8") as fh:
        for i in range(graph.node_count):
            date = epoch + dt.timedelta(days=int(times[i]))
            fh.write(json.dumps({"id": ids[i], "date": date.isoformat(), "references": refs[i]}) + "\n")
    emb = None
    if graph.node_features is not None:
        emb = out / "embeddings.txt"
        with open(emb, "w", encoding="utf-8") as fh:
            fh.write(f"dim {graph.node_features.shape[1]}\n")
            for i in range(graph.node_count):
                fh.write(ids[i] + " " + " ".join(f"{x:.8g}" for x in graph.node_features[i]) + "\n")
    return papers, emb


# ---------------------------------------------------------------- checkpoints

MAGIC = b"TGNR"
VERSION = 1
_DTYPE_CODES = {"float32": 1, "float64": 2, "int64": 3, "uint8": 4}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


def _write_block(w: Writer, name: str, arr: np.ndarray) -> None:
    arr = np.asarray(arr)
    w.string(name)
    w.u32(arr.ndim)
    for d in arr.shape:
        w.u32(d)
    code = _DTYPE_CODES[arr.dtype.name]
    w.u8(code)
    w.array(arr, arr.dtype.name)


def _read_block(r: Reader) -> tuple[str, np.ndarray]:
    name = r.string("block name")
    rank = r.u32(f"rank of {name}")
    shape = tuple(r.u32(f"dim of {name}") for _ in range(rank))
    at = r.pos
    code = r.u8(f"dtype of {name}")
    if code not in _CODE_DTYPES:
        raise CheckpointError(f"unknown dtype code {code} for block {name!r} at byte offset {at}")
    return name, r.array(shape, _CODE_DTYPES[code], name).copy()


@dataclass
class Checkpoint:
    config: TrainConfig
    trainer: object
    meta: dict


def save_checkpoint(path, trainer, extra: dict | None = None) -> None:
    """Serialise parameters, memory, optimizer state and loop progress."""
    model, opt = trainer.model, trainer.optimizer
    pending = model.pending
    meta = {
        "config": trainer.config.to_dict(),
        "node_count": model.node_count,
        "progress": {
            "epoch": trainer.epoch,
            "batch_index": trainer.batch_index,
            "cursor": trainer.cursor,
            "in_epoch": trainer.in_epoch,
            "epoch_losses": trainer.epoch_losses,
            "pending": None if pending is None else [pending.start, pending.stop, pending.batch_index],
        },
        "history": [vars(h) for h in trainer.history],
        "adam": {"step": opt.state.step, "lr": opt.state.lr, "beta1": opt.state.beta1,
                 "beta2": opt.state.beta2, "eps": opt.state.eps},
    }
    meta.update(extra or {})
    w = Writer()
    w.raw(MAGIC)
    w.u32(VERSION)
    w.string(json.dumps(meta, sort_keys=True))
    write_memory(w, model.memory)
    params = model.parameters()
    blocks = [(f"param.{k}", p.data) for k, p in params.items()]
    blocks += [(f"adam.m.{k}", v) for k, v in opt.state.m.items()]
    blocks += [(f"adam.v.{k}", v) for k, v in opt.state.v.items()]
    w.u32(len(blocks))
    for name, arr in blocks:
        _write_block(w, name, arr)
    Path(path).write_bytes(bytes(w.buf))


def _read_header(r: Reader) -> dict:
    if r.raw(4, "magic") != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version = r.u32("version")
    if version != VERSION:
        raise CheckpointError(f"checkpoint version {version} unsupported (expected {VERSION})")
    return json.loads(r.string("metadata"))


def read_checkpoint_meta(path) -> dict:
    """The JSON metadata block only (config, progress, recorded data paths)."""
    return _read_header(Reader(Path(path).read_bytes()))


def load_checkpoint(path, graph: TemporalGraph, config: TrainConfig | None = None) -> Checkpoint:
    """Rebuild a :class:`~tgnrec.training.Trainer` positioned exactly where it was saved.

    ``config`` (if given) must describe the same architecture as the file;
    any shape disagreement raises :class:`CheckpointError`.
    """
    from .training import EpochRecord, Trainer

    data = Path(path).read_bytes()
    r = Reader(data)
    meta = _read_header(r)
    saved_cfg = TrainConfig.from_dict(meta["config"])
    cfg = config or saved_cfg
    if meta["node_count"] != graph.node_count:
        raise CheckpointError(f"checkpoint has {meta['node_count']} nodes, graph has {graph.node_count}")
    memory = read_memory(r)
    if memory.d_mem != cfg.d_mem:
        raise CheckpointError(f"shape mismatch: checkpoint memory width {memory.d_mem} != config d_mem {cfg.d_mem}")
    blocks = {}
    for _ in range(r.u32("block count")):
        name, arr = _read_block(r)
        blocks[name] = arr
    if not r.at_end():
        raise CheckpointError(f"trailing bytes after last block at byte offset {r.pos}")

    trainer = Trainer(graph, cfg)
    model = trainer.model
    params = model.parameters()
    for k, p in params.items():
        arr = blocks.get(f"param.{k}")
        if arr is None:
            raise CheckpointError(f"parameter {k!r} missing from checkpoint")
        if arr.shape != p.data.shape:
            raise CheckpointError(f"shape mismatch for {k}: checkpoint {arr.shape}, model {p.data.shape}")
        p.data = arr.astype(p.data.dtype)
    extra = {b for b in blocks if b.startswith("param.")} - {f"param.{k}" for k in params}
    if extra:
        raise CheckpointError(f"checkpoint has parameters the config does not: {sorted(extra)}")
    model.memory = memory
    model.memory.states = memory.states.astype(model.dtype)

    st = trainer.optimizer.state
    adam = meta["adam"]
    st.step, st.lr, st.beta1, st.beta2, st.eps = adam["step"], adam["lr"], adam["beta1"], adam["beta2"], adam["eps"]
    for k in params:
        if f"adam.m.{k}" in blocks:
            st.m[k] = blocks[f"adam.m.{k}"]
            st.v[k] = blocks[f"adam.v.{k}"]

    prog = meta["progress"]
    trainer.epoch = prog["epoch"]
    trainer.batch_index = prog["batch_index"]
    trainer.cursor = prog["cursor"]
    trainer.in_epoch = prog["in_epoch"]
    trainer.epoch_losses = list(prog["epoch_losses"])
    trainer.history = [EpochRecord(**h) for h in meta["history"]]
    if prog["pending"] is not None:
        start, stop, bi = prog["pending"]
        model.pending = graph.slice(start, stop, bi)
    return Checkpoint(cfg, trainer, meta)
