"""Append-only continuous-time citation graph.

Events are kept in ``(t, event_id)`` order; after :meth:`TemporalGraph.freeze`
the graph is read-only and exposes columnar arrays plus a temporal neighbour
index that never returns an interaction at or after the query time.
"""

from __future__ import annotations

import bisect
from collections import deque
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np


@dataclass(frozen=True)
class Event:
    event_id: int
    src: int
    dst: int
    t: float
    edge_feat: tuple[float, ...] | None = None


@dataclass
class EventBatch:
    batch_index: int
    start: int
    stop: int
    src: np.ndarray
    dst: np.ndarray
    t: np.ndarray
    event_ids: np.ndarray

    def __len__(self) -> int:
        return self.stop - self.start


class NeighborIndex:
    """Per-node adjacency ordered by ``(time, event_id)``.

    With ``capacity`` set, each node keeps only its most recent ``capacity``
    entries (ring-buffer semantics, suitable for online serving where queries
    are always in the present).  Historical queries over a frozen graph need
    ``capacity=None``.
    """

    def __init__(self, capacity: int | None = None):
        if capacity is not None and capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._adj: dict[int, deque] = {}
        self._times: dict[int, np.ndarray] = {}
        self._nbrs: dict[int, np.ndarray] = {}
        self._eids: dict[int, np.ndarray] = {}

    def append(self, node: int, neighbor: int, t: float, event_id: int) -> None:
        buf = self._adj.get(node)
        if buf is None:
            buf = self._adj[node] = deque(maxlen=self.capacity)
        buf.append((neighbor, t, event_id))

    def size(self, node: int) -> int:
        return len(self._adj.get(node, ()))

    def entries(self, node: int) -> list[tuple[int, float, int]]:
        """Entries for ``node``, most recent first."""
        return list(reversed(self._adj.get(node, ())))

    def compile(self) -> None:
        for node, buf in self._adj.items():
            self._nbrs[node] = np.fromiter((e[0] for e in buf), dtype=np.int64, count=len(buf))
            self._times[node] = np.fromiter((e[1] for e in buf), dtype=np.float64, count=len(buf))
            self._eids[node] = np.fromiter((e[2] for e in buf), dtype=np.int64, count=len(buf))

    def before(self, node: int, t: float, n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Up to ``n`` most recent (neighbor, time, event_id) with time < t, newest first."""
        times = self._times.get(node)
        if times is None or n <= 0:
            empty = np.empty(0, dtype=np.int64)
            return empty, np.empty(0), empty
        hi = bisect.bisect_left(times, t)
        lo = max(0, hi - n)
        return self._nbrs[node][lo:hi][::-1], times[lo:hi][::-1], self._eids[node][lo:hi][::-1]


class TemporalGraph:
    """Event-sourced dynamic citation graph.

    Build phase: :meth:`add_event` / :meth:`bulk_load`.  Read phase starts at
    :meth:`freeze`; neighbour queries and batching require a frozen graph.
    """

    def __init__(
        self,
        node_count: int = 0,
        node_features: np.ndarray | None = None,
        node_times: np.ndarray | None = None,
        neighbor_capacity: int | None = None,
    ):
        self.node_count = int(node_count)
        self.node_features = None if node_features is None else np.asarray(node_features)
        self.node_times = None if node_times is None else np.asarray(node_times, dtype=np.float64)
        self.events: list[Event] = []
        self.index = NeighborIndex(neighbor_capacity)
        self._frozen = False
        self._read_hooks: list[Callable[[np.ndarray], None]] = []
        self.src = self.dst = self.t = self.event_ids = None

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self) -> Iterator[Event]:
        return iter(self.events)

    @property
    def frozen(self) -> bool:
        return self._frozen

    # -- build -------------------------------------------------------------

    def _check_writable(self) -> None:
        if self._frozen:
            raise RuntimeError("graph is frozen; no further events can be added")

    @staticmethod
    def _validate(src: int, dst: int, t: float) -> None:
        if src == dst:
            raise ValueError(f"self-citation rejected: {src} -> {dst}")
        if src < 0 or dst < 0:
            raise ValueError(f"node ids must be non-negative, got {src} -> {dst}")
        if not t >= 0:
            raise ValueError(f"timestamp must be non-negative, got {t}")

    def _append(self, src: int, dst: int, t: float, edge_feat) -> int:
        eid = len(self.events)
        feat = None if edge_feat is None else tuple(float(x) for x in edge_feat)
        self.events.append(Event(eid, src, dst, t, feat))
        self.node_count = max(self.node_count, src + 1, dst + 1)
        # citations influence both endpoints
        self.index.append(src, dst, t, eid)
        self.index.append(dst, src, t, eid)
        return eid

    def add_event(self, src: int, dst: int, t: float, edge_feat: Sequence[float] | None = None) -> int:
        self._check_writable()
        src, dst, t = int(src), int(dst), float(t)
        self._validate(src, dst, t)
        if self.events and t < self.events[-1].t:
            raise ValueError(
                f"out-of-order event at t={t} (latest is {self.events[-1].t}); use bulk_load for unsorted input"
            )
        return self._append(src, dst, t, edge_feat)

    def bulk_load(self, records: Iterable[Sequence]) -> list[int]:
        """Insert unsorted ``(src, dst, t[, edge_feat])`` records.

        Records are sorted by ``(t, src, dst)`` before ids are assigned, so
        the resulting order does not depend on the input permutation.
        """
        self._check_writable()
        rows = []
        for rec in records:
            src, dst, t = int(rec[0]), int(rec[1]), float(rec[2])
            feat = rec[3] if len(rec) > 3 else None
            self._validate(src, dst, t)
            rows.append((t, src, dst, feat))
        rows.sort(key=lambda r: (r[0], r[1], r[2]))
        if rows and self.events and rows[0][0] < self.events[-1].t:
            raise ValueError("bulk_load cannot insert events earlier than existing ones")
        return [self._append(src, dst, t, feat) for t, src, dst, feat in rows]

    def freeze(self) -> "TemporalGraph":
        if self._frozen:
            return self
        self._frozen = True
        n = len(self.events)
        self.src = np.fromiter((e.src for e in self.events), dtype=np.int64, count=n)
        self.dst = np.fromiter((e.dst for e in self.events), dtype=np.int64, count=n)
        self.t = np.fromiter((e.t for e in self.events), dtype=np.float64, count=n)
        self.event_ids = np.arange(n, dtype=np.int64)
        self.index.compile()
        if self.node_features is not None and self.node_features.shape[0] != self.node_count:
            raise ValueError(
                f"node_features has {self.node_features.shape[0]} rows for {self.node_count} nodes"
            )
        return self

    def _require_frozen(self) -> None:
        if not self._frozen:
            raise RuntimeError("graph must be frozen before reading")

    # -- read hooks (used to audit temporal hygiene) ------------------------

    def add_read_hook(self, fn: Callable[[np.ndarray], None]) -> None:
        self._read_hooks.append(fn)

    def remove_read_hook(self, fn: Callable[[np.ndarray], None]) -> None:
        self._read_hooks.remove(fn)

    def _notify(self, event_ids: np.ndarray) -> None:
        for fn in self._read_hooks:
            fn(event_ids)

    # -- queries ------------------------------------------------------------

    def temporal_neighbors(self, v: int, t: float, n: int = 10) -> list[tuple[int, float, float]]:
        """``(neighbor, event_time, t - event_time)`` for the ``n`` latest interactions before ``t``."""
        self._require_frozen()
        nbrs, times, eids = self.index.before(int(v), float(t), n)
        self._notify(eids)
        return [(int(a), float(b), float(t) - float(b)) for a, b in zip(nbrs, times)]

    def neighbors_batch(self, nodes: np.ndarray, times: np.ndarray, n: int):
        """Padded neighbour arrays for many queries.

        Returns ``(ids, event_times, mask)`` with shape ``(len(nodes), n)``;
        padded slots have ``mask == False``, id 0 and the query time.
        """
        self._require_frozen()
        q = len(nodes)
        ids = np.zeros((q, n), dtype=np.int64)
        ets = np.repeat(np.asarray(times, dtype=np.float64)[:, None], n, axis=1)
        mask = np.zeros((q, n), dtype=bool)
        touched = []
        for row, (v, t) in enumerate(zip(nodes, times)):
            nb, tm, ei = self.index.before(int(v), float(t), n)
            k = len(nb)
            if k:
                ids[row, :k] = nb
                ets[row, :k] = tm
                mask[row, :k] = True
                touched.append(ei)
        if touched and self._read_hooks:
            self._notify(np.concatenate(touched))
        return ids, ets, mask

    def split_chronological(self, fractions: Sequence[float] = (0.7, 0.15, 0.15)) -> tuple[range, range, range]:
        if len(self.events) == 0:
            raise ValueError("cannot split an empty graph")
        if len(fractions) != 3:
            raise ValueError("expected (train, val, test) fractions")
        if any(not f > 0 for f in fractions):
            raise ValueError(f"all split fractions must be positive, got {tuple(fractions)}")
        if abs(float(np.sum(fractions)) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must sum to 1, got {float(np.sum(fractions))}")
        n = len(self.events)
        a = int(round(n * fractions[0]))
        b = int(round(n * (fractions[0] + fractions[1])))
        return range(0, a), range(a, b), range(b, n)

    def next_batch(self, cursor: int, batch_size: int, stop: int | None = None, batch_index: int = 0) -> EventBatch | None:
        """Slice ``[cursor, min(cursor + batch_size, stop))``; ``None`` once exhausted."""
        self._require_frozen()
        if batch_size <= 0:
            raise ValueError(f"batch_size must be positive, got {batch_size}")
        stop = len(self.events) if stop is None else stop
        if cursor < 0:
            raise ValueError(f"cursor must be non-negative, got {cursor}")
        if cursor >= stop:
            return None
        end = min(cursor + batch_size, stop)
        return self.slice(cursor, end, batch_index)

    def slice(self, start: int, stop: int, batch_index: int = 0) -> EventBatch:
        self._require_frozen()
        sl = slice(start, stop)
        batch = EventBatch(batch_index, start, stop, self.src[sl], self.dst[sl], self.t[sl], self.event_ids[sl])
        self._notify(batch.event_ids)
        return batch

    def batches(self, span: range, batch_size: int) -> Iterator[EventBatch]:
        cursor, i = span.start, 0
        while (b := self.next_batch(cursor, batch_size, span.stop, i)) is not None:
            yield b
            cursor, i = b.stop, i + 1
