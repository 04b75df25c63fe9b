"""Single-layer multi-head graph transformer over temporal neighbours."""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, constant, parameter, uniform_init
from .memory import TimeEncoder

_MASKED = -1e9


class TransformerParams:
    """Per-head projections stacked column-wise: head ``k`` owns columns ``k*d:(k+1)*d``.

    ``W1`` is the skip path, ``W3`` the query, ``W4`` the key, ``W2`` the value
    and ``W6`` maps the time encoding into both key and value.
    """

    def __init__(self, d_mem: int, d_time: int, d_out: int, heads: int = 2, d_head: int | None = None,
                 rng: np.random.Generator | None = None):
        if heads < 1:
            raise ValueError("need at least one attention head")
        rng = rng or np.random.default_rng(0)
        d_head = d_head or max(1, d_mem // heads)
        self.d_mem, self.d_time, self.d_out = d_mem, d_time, d_out
        self.heads, self.d_head = heads, d_head
        hd = heads * d_head
        for name in ("W1", "W2", "W3", "W4"):
            setattr(self, name, parameter(uniform_init(rng, d_mem, (d_mem, hd)), f"attn.{name}"))
        self.W6 = parameter(uniform_init(rng, d_time, (d_time, hd)), "attn.W6")
        self.W_comb = parameter(uniform_init(rng, hd, (hd, d_out)), "attn.W_comb")
        self.b_comb = parameter(np.zeros(d_out), "attn.b_comb")
        # block indicator: sums a head's columns / spreads a per-head scalar back over them
        self.head_blocks = np.kron(np.eye(heads), np.ones((1, d_head)))

    def parameters(self) -> dict[str, Tensor]:
        return {n: getattr(self, n) for n in ("W1", "W2", "W3", "W4", "W6", "W_comb", "b_comb")}


def _attention(q_states: Tensor, nbr_states: Tensor, dt: np.ndarray, mask: np.ndarray,
               params: TransformerParams, time_encoder: TimeEncoder):
    """Shared forward: returns (alpha (Q, n, h), aggregated values (Q, h*d))."""
    Q, n = mask.shape
    h, d = params.heads, params.d_head
    dtype = ad.get_dtype()
    blocks = constant(params.head_blocks.astype(dtype))          # (h, hd)
    blocks_t = constant(params.head_blocks.T.astype(dtype))      # (hd, h)

    phi_w = time_encoder(dt.reshape(-1)) @ params.W6           # (Q*n, hd)
    keys = nbr_states @ params.W4 + phi_w
    values = nbr_states @ params.W2 + phi_w
    query = ad.gather(q_states @ params.W3, np.repeat(np.arange(Q), n))
    logits = ad.scale((query * keys) @ blocks_t, 1.0 / math.sqrt(d))   # (Q*n, h)
    logits = ad.reshape(logits, (Q, n, h)) + constant(np.where(mask, 0.0, _MASKED)[:, :, None].repeat(h, axis=2))
    alpha = ad.softmax(logits, axis=1) * constant(mask[:, :, None].repeat(h, axis=2).astype(float))
    spread = ad.reshape(alpha, (Q * n, h)) @ blocks              # (Q*n, hd)
    agg = ad.sum(ad.reshape(spread * values, (Q, n, h * d)), axis=1)
    return alpha, agg


def embed_states(q_states: Tensor, nbr_states: Tensor, dt: np.ndarray, mask: np.ndarray,
                 params: TransformerParams, time_encoder: TimeEncoder) -> Tensor:
    """Embeddings for ``Q`` query nodes.

    ``q_states`` is (Q, d_mem); ``nbr_states`` is (Q*n, d_mem) laid out row-major
    over the (Q, n) neighbour grid given by ``dt`` and ``mask``.
    """
    _, agg = _attention(q_states, nbr_states, dt, mask, params, time_encoder)
    heads = q_states @ params.W1 + agg
    return heads @ params.W_comb + params.b_comb


def attention_weights_states(q_states, nbr_states, dt, mask, params, time_encoder) -> np.ndarray:
    with ad.no_grad():
        alpha, _ = _attention(q_states, nbr_states, dt, mask, params, time_encoder)
    return alpha.data


def _gather_inputs(nodes, times, memory_states: np.ndarray, graph, n_neighbors):
    nodes = np.asarray(nodes, dtype=np.int64)
    times = np.asarray(times, dtype=np.float64)
    ids, ets, mask = graph.neighbors_batch(nodes, times, n_neighbors)
    dt = np.where(mask, times[:, None] - ets, 0.0)
    return Tensor(memory_states[nodes]), Tensor(memory_states[ids.reshape(-1)]), dt, mask


def embed(nodes, times, memory, graph, params: TransformerParams, time_encoder: TimeEncoder,
          n_neighbors: int = 10) -> np.ndarray:
    """Node embeddings from a memory snapshot and the graph's temporal neighbours."""
    with ad.no_grad():
        q, nb, dt, mask = _gather_inputs(nodes, times, memory.states, graph, n_neighbors)
        return embed_states(q, nb, dt, mask, params, time_encoder).data


def attention_weights(node, t, memory, graph, params: TransformerParams, time_encoder: TimeEncoder,
                      n_neighbors: int = 10) -> np.ndarray:
    """Per-head attention over the node's neighbours, shape (heads, k); k may be 0."""
    q, nb, dt, mask = _gather_inputs([node], [t], memory.states, graph, n_neighbors)
    alpha = attention_weights_states(q, nb, dt, mask, params, time_encoder)
    k = int(mask[0].sum())
    return alpha[0, :k, :].T.copy()
