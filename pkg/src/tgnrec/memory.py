"""Per-node memory: messages, aggregation, time encoding and the GRU updater."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, constant, parameter, uniform_init
from .binio import CheckpointError, Reader, Writer
from .graph import EventBatch

AGGREGATORS = ("mean", "last")
MESSAGE_VARIANTS = ("identity", "learned")
UPDATERS = ("gru", "rnn", "lstm")  # only "gru" is implemented


class TimeEncoder:
    """Learnable harmonic encoding ``cos(dt * omega + phase)``.

    Frequencies start on a geometric ladder ``10 ** (-k * 10 / d_time)`` so
    the raw day-valued gaps are resolved from days up to decades.
    """

    def __init__(self, d_time: int):
        k = np.arange(d_time, dtype=np.float64)
        self.d_time = d_time
        self.omega = parameter((10.0 ** (-k * (10.0 / d_time)))[None, :], name="time.omega")
        self.phase = parameter(np.zeros(d_time), name="time.phase")

    def __call__(self, dt) -> Tensor:
        dt = np.asarray(dt, dtype=np.float64).reshape(-1)
        if np.any(dt < 0):
            raise ValueError(f"negative time gap {dt.min()}: an event was read before its predecessor")
        return ad.cos(ad.add(ad.matmul(constant(dt[:, None]), self.omega), self.phase))

    def parameters(self) -> dict[str, Tensor]:
        return {"omega": self.omega, "phase": self.phase}


def encode_time(dt: float, encoder: TimeEncoder) -> np.ndarray:
    with ad.no_grad():
        return encoder(np.array([dt])).data[0]


class GruParams:
    names = ("W_ir", "W_hr", "W_iz", "W_hz", "W_in", "W_hn", "b_ir", "b_hr", "b_iz", "b_hz", "b_in", "b_hn")

    def __init__(self, input_dim: int, hidden_dim: int, rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        self.input_dim, self.hidden_dim = input_dim, hidden_dim
        for gate in "rzn":
            setattr(self, f"W_i{gate}", parameter(uniform_init(rng, input_dim, (input_dim, hidden_dim)), f"gru.W_i{gate}"))
            setattr(self, f"W_h{gate}", parameter(uniform_init(rng, hidden_dim, (hidden_dim, hidden_dim)), f"gru.W_h{gate}"))
            setattr(self, f"b_i{gate}", parameter(np.zeros(hidden_dim), f"gru.b_i{gate}"))
            setattr(self, f"b_h{gate}", parameter(np.zeros(hidden_dim), f"gru.b_h{gate}"))

    def parameters(self) -> dict[str, Tensor]:
        return {n: getattr(self, n) for n in self.names}


def gru_cell(m: Tensor, s: Tensor, p: GruParams) -> Tensor:
    """Row-batched GRU step: messages ``m`` (B, in), previous states ``s`` (B, hidden)."""
    if m.ndim != 2 or m.shape[1] != p.input_dim:
        raise ValueError(f"message shape {m.shape} does not match GRU input dim {p.input_dim}")
    if s.ndim != 2 or s.shape[1] != p.hidden_dim or s.shape[0] != m.shape[0]:
        raise ValueError(f"state shape {s.shape} does not match messages {m.shape} / hidden {p.hidden_dim}")
    r = ad.sigmoid(m @ p.W_ir + p.b_ir + s @ p.W_hr + p.b_hr)
    z = ad.sigmoid(m @ p.W_iz + p.b_iz + s @ p.W_hz + p.b_hz)
    n = ad.tanh(m @ p.W_in + p.b_in + r * (s @ p.W_hn + p.b_hn))
    # (1 - z) * n + z * s
    return n + z * (s - n)


class MessageEncoder:
    """Self-learned message function: ReLU(affine) over the raw concatenation."""

    def __init__(self, input_dim: int, output_dim: int, rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        self.W = parameter(uniform_init(rng, input_dim, (input_dim, output_dim)), "msg.W")
        self.b = parameter(np.zeros(output_dim), "msg.b")

    def __call__(self, raw: Tensor) -> Tensor:
        return ad.relu(raw @ self.W + self.b)

    def parameters(self) -> dict[str, Tensor]:
        return {"W": self.W, "b": self.b}


class FeatureProjection:
    """Affine map from node features to the memory width."""

    def __init__(self, input_dim: int, d_mem: int, rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        self.W = parameter(uniform_init(rng, input_dim, (input_dim, d_mem)), "proj.W")
        self.b = parameter(np.zeros(d_mem), "proj.b")

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.W + self.b

    def parameters(self) -> dict[str, Tensor]:
        return {"W": self.W, "b": self.b}


@dataclass
class MemoryState:
    states: np.ndarray
    last_update: np.ndarray
    touched: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.touched is None:
            self.touched = np.zeros(self.states.shape[0], dtype=bool)

    @property
    def node_count(self) -> int:
        return self.states.shape[0]

    @property
    def d_mem(self) -> int:
        return self.states.shape[1]

    def copy(self) -> "MemoryState":
        return MemoryState(self.states.copy(), self.last_update.copy(), self.touched.copy())


def init_memory(
    node_count: int,
    d_mem: int,
    node_features: np.ndarray | None = None,
    projection: FeatureProjection | None = None,
    dtype=None,
) -> MemoryState:
    dtype = dtype or ad.get_dtype()
    if node_features is None:
        states = np.zeros((node_count, d_mem), dtype=dtype)
    else:
        x = np.asarray(node_features)
        if x.shape[0] != node_count:
            raise ValueError(f"node_features has {x.shape[0]} rows for {node_count} nodes")
        if projection is None:
            if x.shape[1] != d_mem:
                raise ValueError(f"feature dim {x.shape[1]} != d_mem {d_mem} and no projection given")
            states = x.astype(dtype, copy=True)
        else:
            with ad.no_grad():
                states = projection(Tensor(x, dtype=dtype)).data.astype(dtype)
    return MemoryState(states, np.zeros(node_count, dtype=np.float64))


@dataclass
class RawMessage:
    target: int
    payload: np.ndarray
    t: float
    event_id: int


def message_payloads(
    src: np.ndarray,
    dst: np.ndarray,
    t: np.ndarray,
    s_src: Tensor,
    s_dst: Tensor,
    last_src: np.ndarray,
    last_dst: np.ndarray,
    time_encoder: TimeEncoder,
    encoder: MessageEncoder | None = None,
) -> Tensor:
    """Two messages per event, stacked as ``[to sources; to destinations]``."""
    if np.any(t < last_src) or np.any(t < last_dst):
        raise ValueError("event time precedes a node's last memory update")
    to_src = ad.concat([s_src, s_dst, time_encoder(t - last_src)], axis=1)
    to_dst = ad.concat([s_dst, s_src, time_encoder(t - last_dst)], axis=1)
    raw = ad.concat([to_src, to_dst], axis=0)
    return raw if encoder is None else encoder(raw)


def compute_raw_messages(
    batch: EventBatch,
    memory: MemoryState,
    time_encoder: TimeEncoder,
    encoder: MessageEncoder | None = None,
) -> list[RawMessage]:
    with ad.no_grad():
        payload = message_payloads(
            batch.src, batch.dst, batch.t,
            Tensor(memory.states[batch.src]), Tensor(memory.states[batch.dst]),
            memory.last_update[batch.src], memory.last_update[batch.dst],
            time_encoder, encoder,
        ).data
    targets = np.concatenate([batch.src, batch.dst])
    times = np.concatenate([batch.t, batch.t])
    eids = np.concatenate([batch.event_ids, batch.event_ids])
    return [RawMessage(int(a), payload[k], float(b), int(c)) for k, (a, b, c) in enumerate(zip(targets, times, eids))]


def aggregate_batch(
    payload: Tensor,
    targets: np.ndarray,
    times: np.ndarray,
    event_ids: np.ndarray,
    mode: str,
) -> tuple[np.ndarray, Tensor, np.ndarray]:
    """Collapse messages per target node.

    Returns ``(nodes, aggregated, effective_times)`` with ``nodes`` sorted.
    """
    if mode not in AGGREGATORS:
        raise ValueError(f"unknown aggregator {mode!r}")
    nodes, inverse = np.unique(targets, return_inverse=True)
    if mode == "mean":
        counts = np.bincount(inverse, minlength=len(nodes))
        weights = np.zeros((len(nodes), len(targets)))
        weights[inverse, np.arange(len(targets))] = 1.0 / counts[inverse]
        eff = np.full(len(nodes), -np.inf)
        np.maximum.at(eff, inverse, times)
        return nodes, constant(weights) @ payload, eff
    order = np.lexsort((event_ids, times, inverse))
    grouped = inverse[order]
    last = order[np.r_[grouped[1:] != grouped[:-1], True]]
    return nodes, ad.gather(payload, last), np.asarray(times)[last]


def aggregate(messages: list[RawMessage], mode: str) -> dict[int, tuple[np.ndarray, float]]:
    if not messages:
        return {}
    with ad.no_grad():
        payload = Tensor(np.stack([m.payload for m in messages]))
        nodes, agg, eff = aggregate_batch(
            payload,
            np.array([m.target for m in messages]),
            np.array([m.t for m in messages], dtype=np.float64),
            np.array([m.event_id for m in messages]),
            mode,
        )
    return {int(n): (agg.data[k], float(eff[k])) for k, n in enumerate(nodes)}


def update_memory(
    memory: MemoryState,
    aggregated: dict[int, tuple[np.ndarray, float]],
    params: GruParams,
) -> MemoryState:
    """Return a new memory with every aggregated node advanced by one GRU step."""
    out = memory.copy()
    if not aggregated:
        return out
    nodes = np.array(sorted(aggregated), dtype=np.int64)
    msgs = np.stack([aggregated[int(n)][0] for n in nodes])
    times = np.array([aggregated[int(n)][1] for n in nodes], dtype=np.float64)
    if np.any(times < memory.last_update[nodes]):
        raise ValueError("aggregated message is older than the node's last update")
    with ad.no_grad():
        new = gru_cell(Tensor(msgs, dtype=memory.states.dtype), Tensor(memory.states[nodes]), params).data
    out.states[nodes] = new
    out.last_update[nodes] = times
    out.touched[nodes] = True
    return out


# ---------------------------------------------------------------- checkpoints

_PRECISION_CODES = {4: "float32", 8: "float64"}


def snapshot(memory: MemoryState) -> MemoryState:
    return memory.copy()


def restore(memory: MemoryState, checkpoint: MemoryState) -> None:
    """Overwrite ``memory`` in place with ``checkpoint``."""
    if checkpoint.states.shape != memory.states.shape:
        raise ValueError(f"checkpoint shape {checkpoint.states.shape} != memory shape {memory.states.shape}")
    memory.states[...] = checkpoint.states
    memory.last_update[...] = checkpoint.last_update
    memory.touched[...] = checkpoint.touched


def write_memory(w: Writer, memory: MemoryState) -> None:
    width = memory.states.dtype.itemsize
    w.u32(memory.d_mem)
    w.u32(memory.node_count)
    w.u8(width)
    w.array(memory.states, _PRECISION_CODES[width])
    w.array(memory.last_update, "float64")
    w.array(memory.touched, "uint8")


def read_memory(r: Reader, d_mem: int | None = None) -> MemoryState:
    start = r.pos
    dm = r.u32("memory d_mem")
    nodes = r.u32("memory node_count")
    width = r.u8("memory precision")
    if width not in _PRECISION_CODES:
        raise CheckpointError(f"unknown memory precision code {width} at byte offset {start + 8}")
    if d_mem is not None and dm != d_mem:
        raise CheckpointError(f"memory d_mem {dm} does not match expected {d_mem}")
    states = r.array((nodes, dm), _PRECISION_CODES[width], "memory states")
    last = r.array((nodes,), "float64", "memory last_update")
    touched = r.array((nodes,), "uint8", "memory touched").astype(bool)
    return MemoryState(states.copy(), last.copy(), touched.copy())


def memory_to_bytes(memory: MemoryState) -> bytes:
    w = Writer()
    write_memory(w, memory)
    return bytes(w.buf)


def memory_from_bytes(data: bytes, d_mem: int | None = None) -> MemoryState:
    return read_memory(Reader(data), d_mem)
