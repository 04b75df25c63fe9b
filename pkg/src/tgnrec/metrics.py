"""Ranking and classification metrics."""

from __future__ import annotations

import numpy as np


def mrr(ranks) -> float:
    r = np.asarray(ranks, dtype=np.float64)
    if r.size == 0:
        raise ValueError("mrr of an empty rank list")
    if np.any(r < 1):
        raise ValueError("ranks are 1-based")
    return float(np.mean(1.0 / r))


def precision_at_k(relevant_in_top_k: int, k: int) -> float:
    if k <= 0 or not 0 <= relevant_in_top_k <= k:
        raise ValueError(f"need 0 <= hits <= K, got hits={relevant_in_top_k}, K={k}")
    return relevant_in_top_k / k


def recall_at_k(relevant_in_top_k: int, total_relevant: int) -> float | None:
    """Hits over total relevant; ``None`` when nothing is relevant (query skipped)."""
    if total_relevant == 0:
        return None
    if not 0 <= relevant_in_top_k <= total_relevant:
        raise ValueError(f"hits {relevant_in_top_k} exceed total relevant {total_relevant}")
    return relevant_in_top_k / total_relevant


def average_precision(labels_in_rank_order) -> float:
    labels = np.asarray(labels_in_rank_order, dtype=bool)
    if labels.all() or not labels.any():
        raise ValueError("average precision needs at least one positive and one negative label")
    hits = np.cumsum(labels)
    positions = np.flatnonzero(labels) + 1
    return float(np.mean(hits[labels] / positions))


def average_precision_from_scores(pos_scores, neg_scores) -> float:
    """AP of the pooled ranking; tied scores put negatives first."""
    pos = np.asarray(pos_scores, dtype=np.float64)
    neg = np.asarray(neg_scores, dtype=np.float64)
    scores = np.concatenate([pos, neg])
    labels = np.concatenate([np.ones(len(pos), bool), np.zeros(len(neg), bool)])
    order = np.lexsort((labels, -scores))
    return average_precision(labels[order])


def auc(pos_scores, neg_scores) -> float:
    """P(pos > neg) over all pairs, ties counted 0.5 (Mann-Whitney with midranks)."""
    pos = np.asarray(pos_scores, dtype=np.float64)
    neg = np.asarray(neg_scores, dtype=np.float64)
    if pos.size == 0 or neg.size == 0:
        raise ValueError("auc needs at least one positive and one negative score")
    sorted_v = np.sort(np.concatenate([pos, neg]))
    # midrank of each positive among all scores
    ranks = (np.searchsorted(sorted_v, pos, "left") + np.searchsorted(sorted_v, pos, "right") + 1) / 2.0
    u = ranks.sum() - len(pos) * (len(pos) + 1) / 2.0
    return float(u / (len(pos) * len(neg)))


def positive_rank(pos_score: float, neg_scores) -> int:
    """1-based rank of the positive; ties with negatives count against it."""
    return 1 + int(np.sum(np.asarray(neg_scores) >= pos_score))


def harmonic_mrr(n_candidates: int) -> float:
    """Expected MRR of a uniformly random ranking over ``n_candidates``."""
    return float(np.mean(1.0 / np.arange(1, n_candidates + 1)))
