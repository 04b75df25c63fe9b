"""Edge scoring head, negative sampling and the training loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, parameter, uniform_init


class DecoderParams:
    def __init__(self, d_out: int, d_dec: int, rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        self.d_out, self.d_dec = d_out, d_dec
        self.W_i = parameter(uniform_init(rng, d_out, (d_out, d_dec)), "dec.W_i")
        self.b_i = parameter(np.zeros(d_dec), "dec.b_i")
        self.W_j = parameter(uniform_init(rng, d_out, (d_out, d_dec)), "dec.W_j")
        self.b_j = parameter(np.zeros(d_dec), "dec.b_j")
        self.W_out = parameter(uniform_init(rng, 2 * d_dec, (2 * d_dec, 1)), "dec.W_out")
        self.b_out = parameter(np.zeros(1), "dec.b_out")

    def parameters(self) -> dict[str, Tensor]:
        return {n: getattr(self, n) for n in ("W_i", "b_i", "W_j", "b_j", "W_out", "b_out")}


def score_batch(src_emb: Tensor, dst_emb: Tensor, params: DecoderParams) -> Tensor:
    """Logits, shape (B,), for row-aligned source/destination embeddings."""
    if src_emb.ndim != 2 or src_emb.shape != dst_emb.shape or src_emb.shape[1] != params.d_out:
        raise ValueError(
            f"embedding shapes {src_emb.shape} / {dst_emb.shape} incompatible with d_out={params.d_out}"
        )
    hidden = ad.relu(ad.concat([src_emb @ params.W_i + params.b_i, dst_emb @ params.W_j + params.b_j], axis=1))
    out = hidden @ params.W_out + params.b_out
    return ad.reshape(out, (out.shape[0],))


def score(src_emb, dst_emb, params: DecoderParams) -> float:
    with ad.no_grad():
        s = Tensor(np.asarray(src_emb).reshape(1, -1))
        d = Tensor(np.asarray(dst_emb).reshape(1, -1))
        return float(score_batch(s, d, params).data[0])


def sample_negatives(
    positive_dst,
    k: int,
    universe,
    rng: np.random.Generator | int | None = None,
) -> np.ndarray:
    """Uniform negatives, shape (B, k), never equal to the row's positive.

    ``universe`` is either a node count or an explicit array of node ids.
    """
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    pool = np.arange(universe) if np.isscalar(universe) else np.asarray(universe, dtype=np.int64)
    if len(pool) <= 1:
        raise ValueError("negative sampling needs a universe of at least two nodes")
    pos = np.asarray(positive_dst, dtype=np.int64).reshape(-1, 1)
    out = pool[rng.integers(0, len(pool), size=(len(pos), k))]
    clash = out == pos
    while clash.any():
        out[clash] = pool[rng.integers(0, len(pool), size=int(clash.sum()))]
        clash = out == pos
    return out


def bce_loss(pos_logits: Tensor, neg_logits: Tensor) -> Tensor:
    """mean(-log σ(pos)) + mean(-log(1 - σ(neg))), computed via softplus."""
    if pos_logits.data.size == 0 or neg_logits.data.size == 0:
        raise ValueError("bce_loss needs at least one positive and one negative logit")
    return ad.add(ad.mean(ad.softplus(-pos_logits)), ad.mean(ad.softplus(neg_logits)))


@dataclass(frozen=True)
class ScoredCandidate:
    node: int
    score: float

    @property
    def probability(self) -> float:
        return float(1.0 / (1.0 + np.exp(-self.score)))


def rank_candidates(candidates, logits, k: int) -> list[ScoredCandidate]:
    """Sort by logit descending, node id ascending; keep the first ``k``."""
    if k <= 0:
        raise ValueError(f"K must be positive, got {k}")
    candidates = np.asarray(candidates, dtype=np.int64)
    logits = np.asarray(logits, dtype=np.float64)
    order = np.lexsort((candidates, -logits))[:k]
    return [ScoredCandidate(int(candidates[i]), float(logits[i])) for i in order]


def recommend(model, graph, src: int, t: float, candidates=None, k: int = 10) -> list[ScoredCandidate]:
    """Top-``k`` destinations for ``src`` at time ``t`` under ``model``'s current memory."""
    if k <= 0:
        raise ValueError(f"K must be positive, got {k}")
    if not 0 <= src < model.node_count:
        raise KeyError(f"unknown source node {src}")
    if candidates is None:
        candidates = model.default_candidates(src, t)
    candidates = np.asarray(candidates, dtype=np.int64)
    if len(candidates) == 0:
        return []
    if candidates.min() < 0 or candidates.max() >= model.node_count:
        raise KeyError("candidate ids outside the node range")
    logits = model.score_candidates(graph, np.array([src]), candidates[None, :], np.array([t], dtype=np.float64))[0]
    return rank_candidates(candidates, logits, k)
