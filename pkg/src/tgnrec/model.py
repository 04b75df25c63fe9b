"""The full recommender: memory, graph transformer and scoring head wired together.

Memory updates are applied lazily: a batch's events are held as *pending*
and only folded into memory (with gradient) at the start of the next
training step.  Predictions for a batch therefore see exactly the events
that precede it, while the message and GRU parameters still receive
gradients.  Memory entering a step is a constant.
"""

from __future__ import annotations

import functools

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, constant
from .config import TrainConfig
from .decoder import DecoderParams, bce_loss, score_batch
from .graph import EventBatch, TemporalGraph
from .memory import (
    FeatureProjection,
    GruParams,
    MemoryState,
    MessageEncoder,
    TimeEncoder,
    aggregate_batch,
    gru_cell,
    init_memory,
    message_payloads,
)
from .transformer import TransformerParams, embed_states


def _in_precision(method):
    @functools.wraps(method)
    def wrapper(self, *args, **kwargs):
        with ad.precision(self.config.precision):
            return method(self, *args, **kwargs)
    return wrapper


class TGNTRec:
    def __init__(self, config: TrainConfig, node_count: int, node_features: np.ndarray | None = None,
                 node_times: np.ndarray | None = None):
        config.validate_config()
        self.config = config
        self.node_count = int(node_count)
        self.node_times = node_times
        use_features = config.memory_init == "features"
        if use_features and node_features is None:
            raise ValueError("memory_init='features' requires node features")
        rng = np.random.default_rng(config.seed)
        d_mem, d_time = config.d_mem, config.d_time
        raw_dim = 2 * d_mem + d_time
        with ad.precision(config.precision):
            self.dtype = ad.get_dtype()
            self.time_encoder = TimeEncoder(d_time)
            self.msg_encoder = MessageEncoder(raw_dim, d_mem, rng) if config.message == "learned" else None
            self.gru = GruParams(d_mem if self.msg_encoder else raw_dim, d_mem, rng)
            self.projection = None
            self.features = None
            if use_features:
                feats = np.asarray(node_features)
                if feats.shape[0] != node_count:
                    raise ValueError(f"node_features has {feats.shape[0]} rows for {node_count} nodes")
                self.features = feats.astype(self.dtype)
                self.projection = FeatureProjection(feats.shape[1], d_mem, rng)
            self.attn = TransformerParams(d_mem, d_time, config.d_out, config.heads, rng=rng)
            self.decoder = DecoderParams(config.d_out, config.d_dec, rng)
        self.memory: MemoryState = None
        self.pending: EventBatch | None = None
        self.reset_memory()

    # -- parameters --------------------------------------------------------

    def parameters(self) -> dict[str, Tensor]:
        groups = {
            "time": self.time_encoder,
            "msg": self.msg_encoder,
            "gru": self.gru,
            "proj": self.projection,
            "attn": self.attn,
            "dec": self.decoder,
        }
        out = {}
        for prefix, group in groups.items():
            if group is None:
                continue
            for name, t in group.parameters().items():
                out[f"{prefix}.{name}"] = t
        return out

    # -- memory ------------------------------------------------------------

    def reset_memory(self) -> None:
        with ad.precision(self.config.precision):
            self.memory = init_memory(self.node_count, self.config.d_mem, self.features, self.projection)
        self.pending = None

    def _base_rows(self, nodes: np.ndarray) -> Tensor:
        """Committed memory rows; untouched nodes are re-projected from features with current weights."""
        stored = self.memory.states[nodes]
        if self.projection is None:
            return constant(stored)
        touched = self.memory.touched[nodes][:, None]
        keep = constant(np.where(touched, stored, 0.0).astype(self.dtype))
        fresh = self.projection(constant(self.features[nodes]))
        return keep + fresh * constant((~touched).astype(self.dtype).repeat(fresh.shape[1], axis=1))

    def _pending_update(self):
        b = self.pending
        if b is None or len(b) == 0:
            return None
        mem = self.memory
        payload = message_payloads(
            b.src, b.dst, b.t,
            self._base_rows(b.src), self._base_rows(b.dst),
            mem.last_update[b.src], mem.last_update[b.dst],
            self.time_encoder, self.msg_encoder,
        )
        nodes, agg, eff = aggregate_batch(
            payload,
            np.concatenate([b.src, b.dst]),
            np.concatenate([b.t, b.t]),
            np.concatenate([b.event_ids, b.event_ids]),
            self.config.aggregator,
        )
        return nodes, gru_cell(agg, self._base_rows(nodes), self.gru), eff

    def _commit(self, update) -> None:
        if update is None:
            return
        nodes, new, eff = update
        self.memory.states[nodes] = new.data
        self.memory.last_update[nodes] = eff
        self.memory.touched[nodes] = True

    @_in_precision
    def flush(self) -> None:
        """Fold pending events into memory without gradient."""
        with ad.no_grad():
            self._commit(self._pending_update())
        self.pending = None

    @_in_precision
    def observe(self, batch: EventBatch) -> None:
        """Advance memory through ``batch`` (evaluation / replay path)."""
        self.flush()
        self.pending = batch
        self.flush()

    def _rows(self, nodes: np.ndarray, update) -> Tensor:
        uniq, inv = np.unique(nodes, return_inverse=True)
        base = self._base_rows(uniq)
        if update is None:
            return ad.gather(base, inv)
        upd_nodes, new, _ = update
        pos = np.searchsorted(upd_nodes, uniq)
        pos_c = np.minimum(pos, len(upd_nodes) - 1)
        hit = upd_nodes[pos_c] == uniq
        table = ad.concat([new, base], axis=0)
        where = np.where(hit, pos_c, len(upd_nodes) + np.arange(len(uniq)))
        return ad.gather(table, where[inv])

    # -- forward -----------------------------------------------------------

    def _embed(self, graph: TemporalGraph, nodes: np.ndarray, times: np.ndarray, update) -> Tensor:
        n = self.config.n_neighbors
        ids, ets, mask = graph.neighbors_batch(nodes, times, n)
        dt = np.where(mask, times[:, None] - ets, 0.0)
        q = len(nodes)
        rows = self._rows(np.concatenate([nodes, ids.reshape(-1)]), update)
        q_states = ad.gather(rows, np.arange(q))
        nbr_states = ad.gather(rows, q + np.arange(q * n))
        return embed_states(q_states, nbr_states, dt, mask, self.attn, self.time_encoder)

    @_in_precision
    def batch_loss(self, graph: TemporalGraph, batch: EventBatch, negatives: np.ndarray):
        """Loss for ``batch`` plus the pending-memory update it was computed with."""
        update = self._pending_update()
        B, k = negatives.shape
        nodes = np.concatenate([batch.src, batch.dst, negatives.reshape(-1)])
        times = np.concatenate([batch.t, batch.t, np.repeat(batch.t, k)])
        emb = self._embed(graph, nodes, times, update)
        src = ad.gather(emb, np.arange(B))
        pos = score_batch(src, ad.gather(emb, B + np.arange(B)), self.decoder)
        neg = score_batch(
            ad.gather(emb, np.repeat(np.arange(B), k)),
            ad.gather(emb, 2 * B + np.arange(B * k)),
            self.decoder,
        )
        return bce_loss(pos, neg), update

    @_in_precision
    def train_step(self, graph: TemporalGraph, batch: EventBatch, negatives: np.ndarray, optimizer) -> float:
        loss, update = self.batch_loss(graph, batch, negatives)
        optimizer.zero_grad()
        value = loss.item()
        ad.backward(loss)
        optimizer.step()
        self._commit(update)
        self.pending = batch
        return value

    @_in_precision
    def score_candidates(self, graph: TemporalGraph, src: np.ndarray, candidates: np.ndarray,
                         times: np.ndarray) -> np.ndarray:
        """Logits (B, C) for each source against its row of candidates."""
        src = np.asarray(src, dtype=np.int64)
        candidates = np.asarray(candidates, dtype=np.int64)
        times = np.asarray(times, dtype=np.float64)
        B, C = candidates.shape
        with ad.no_grad():
            update = self._pending_update()
            nodes = np.concatenate([src, candidates.reshape(-1)])
            emb = self._embed(graph, nodes, np.concatenate([times, np.repeat(times, C)]), update)
            logits = score_batch(
                ad.gather(emb, np.repeat(np.arange(B), C)),
                ad.gather(emb, B + np.arange(B * C)),
                self.decoder,
            )
        return logits.data.astype(np.float64).reshape(B, C)

    def default_candidates(self, src: int, t: float) -> np.ndarray:
        nodes = np.arange(self.node_count)
        if self.node_times is not None:
            nodes = nodes[np.asarray(self.node_times) < t]
        return nodes[nodes != src]


class RandomScorer:
    """Model stand-in with i.i.d. Gaussian logits; calibrates the evaluation protocol."""

    def __init__(self, node_count: int, seed: int = 0):
        self.node_count = node_count
        self.rng = np.random.default_rng(seed)

    def reset_memory(self) -> None:
        pass

    def flush(self) -> None:
        pass

    def observe(self, batch) -> None:
        pass

    def score_candidates(self, graph, src, candidates, times) -> np.ndarray:
        return self.rng.normal(size=np.shape(candidates))
