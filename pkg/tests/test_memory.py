import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from tgnrec import autodiff as ad
from tgnrec.autodiff import Tensor
from tgnrec.binio import CheckpointError
from tgnrec.graph import TemporalGraph
from tgnrec.memory import (
    FeatureProjection,
    GruParams,
    MemoryState,
    MessageEncoder,
    RawMessage,
    TimeEncoder,
    aggregate,
    compute_raw_messages,
    encode_time,
    gru_cell,
    init_memory,
    memory_from_bytes,
    memory_to_bytes,
    restore,
    snapshot,
    update_memory,
)


@pytest.fixture(autouse=True)
def float64():
    with ad.precision("float64"):
        yield


def _batch(events):
    g = TemporalGraph()
    g.bulk_load(events)
    g.freeze()
    return g.slice(0, len(g), 0)


# ------------------------------------------------------------------ init


def test_zero_init():
    m = init_memory(3, 4)
    np.testing.assert_array_equal(m.states, np.zeros((3, 4)))
    np.testing.assert_array_equal(m.last_update, np.zeros(3))


def test_identity_features():
    x = np.eye(3, 4)
    np.testing.assert_array_equal(init_memory(3, 4, x).states, x)


def test_projected_features_match_matmul():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(3, 768))
    proj = FeatureProjection(768, 100, rng)
    m = init_memory(3, 100, x, proj)
    assert m.states.shape == (3, 100)
    ref = np.array([oracles.vecmat(row, proj.W.data.tolist()) for row in x.tolist()])
    np.testing.assert_allclose(m.states, ref, atol=1e-10)


def test_feature_row_count_checked():
    with pytest.raises(ValueError, match="rows"):
        init_memory(3, 4, np.zeros((2, 4)))


# ----------------------------------------------------------- time encoding


def test_time_encoding_zero_gap():
    np.testing.assert_array_equal(encode_time(0.0, TimeEncoder(8)), np.ones(8))


def test_time_encoding_zero_gap_phase():
    enc = TimeEncoder(3)
    enc.phase.data[:] = [0.3, -1.0, 2.0]
    np.testing.assert_allclose(encode_time(0.0, enc), np.cos([0.3, -1.0, 2.0]))


def test_time_encoding_half_turn():
    enc = TimeEncoder(1)
    enc.omega.data[:] = math.pi / 2
    assert encode_time(2.0, enc)[0] == pytest.approx(-1.0, abs=1e-12)


def test_time_encoding_rejects_negative_gap():
    with pytest.raises(ValueError, match="negative"):
        encode_time(-1.0, TimeEncoder(4))


def test_frequency_ladder():
    enc = TimeEncoder(4)
    np.testing.assert_allclose(enc.omega.data[0], [1.0, 10 ** -2.5, 1e-5, 10 ** -7.5])


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 1e6), st.integers(0, 1000))
def test_time_encoding_bounded(dt, seed):
    enc = TimeEncoder(6)
    enc.phase.data[:] = np.random.default_rng(seed).normal(size=6)
    v = encode_time(dt, enc)
    assert v.shape == (6,) and np.all(np.abs(v) <= 1.0)


# -------------------------------------------------------------- messages


def test_identity_messages_zero_memory():
    msgs = compute_raw_messages(_batch([(0, 1, 5.0)]), init_memory(2, 3), TimeEncoder(4))
    assert len(msgs) == 2
    for m in msgs:
        np.testing.assert_allclose(m.payload[:6], 0.0)
        np.testing.assert_allclose(m.payload[6:], np.cos(5.0 * TimeEncoder(4).omega.data[0]))


def test_message_orientation():
    mem = init_memory(2, 2, np.array([[1.0, 2.0], [3.0, 4.0]]))
    msgs = compute_raw_messages(_batch([(0, 1, 1.0)]), mem, TimeEncoder(1))
    to = {m.target: m.payload for m in msgs}
    np.testing.assert_array_equal(to[0][:4], [1, 2, 3, 4])
    np.testing.assert_array_equal(to[1][:4], [3, 4, 1, 2])


def test_two_messages_per_event():
    ev = [(i, i + 1, float(i)) for i in range(7)]
    assert len(compute_raw_messages(_batch(ev), init_memory(8, 3), TimeEncoder(2))) == 14


def test_learned_messages_zero_weights():
    enc = MessageEncoder(2 * 3 + 2, 3)
    enc.W.data[:] = 0
    msgs = compute_raw_messages(_batch([(0, 1, 2.0)]), init_memory(2, 3, np.ones((2, 3))), TimeEncoder(2), enc)
    for m in msgs:
        np.testing.assert_array_equal(m.payload, np.zeros(3))


def test_message_rejects_stale_event():
    mem = init_memory(2, 2)
    mem.last_update[0] = 10.0
    with pytest.raises(ValueError):
        compute_raw_messages(_batch([(0, 1, 5.0)]), mem, TimeEncoder(2))


# ------------------------------------------------------------- aggregate


def _msg(target, payload, t, eid):
    return RawMessage(target, np.asarray(payload, dtype=float), t, eid)


@pytest.mark.parametrize("mode", ["mean", "last"])
def test_single_message_aggregates_to_itself(mode):
    out = aggregate([_msg(3, [1.0, 2.0], 4.0, 0)], mode)
    np.testing.assert_array_equal(out[3][0], [1.0, 2.0])
    assert out[3][1] == 4.0


def test_mean_aggregation():
    out = aggregate([_msg(0, [1, 3], 1.0, 0), _msg(0, [3, 5], 2.0, 1)], "mean")
    np.testing.assert_array_equal(out[0][0], [2, 4])
    assert out[0][1] == 2.0


def test_last_aggregation():
    out = aggregate([_msg(0, [9, 9], 9.0, 1), _msg(0, [4, 4], 4.0, 0)], "last")
    np.testing.assert_array_equal(out[0][0], [9, 9])


def test_last_breaks_time_ties_by_event_id():
    out = aggregate([_msg(0, [2], 5.0, 7), _msg(0, [1], 5.0, 3)], "last")
    np.testing.assert_array_equal(out[0][0], [2])


def test_absent_node_not_in_output():
    assert 5 not in aggregate([_msg(0, [1], 1.0, 0)], "mean")
    assert aggregate([], "mean") == {}


def test_unknown_aggregator():
    with pytest.raises(ValueError):
        aggregate([_msg(0, [1], 1.0, 0)], "max")


# ----------------------------------------------------------------- GRU


def _scalar_gru():
    p = GruParams(1, 1)
    for name in p.names:
        getattr(p, name).data[:] = 1.0 if name.startswith("W") else 0.0
    return p


def test_gru_zero_params_fixed_point():
    p = GruParams(3, 2)
    for name in p.names:
        getattr(p, name).data[:] = 0
    out = update_memory(init_memory(1, 2), {0: (np.array([1.0, -2.0, 3.0]), 1.0)}, p)
    np.testing.assert_array_equal(out.states, [[0.0, 0.0]])


def test_gru_scalar_example():
    # independent scalar evaluation: r = z = sigmoid(1.5), n = tanh(1 + r * 0.5)
    r = 1 / (1 + math.exp(-1.5))
    n = math.tanh(1 + r * 0.5)
    expected = (1 - r) * n + r * 0.5
    assert expected == pytest.approx(0.5706417885951913, abs=1e-15)
    got = gru_cell(Tensor([[1.0]]), Tensor([[0.5]]), _scalar_gru()).data[0, 0]
    assert got == pytest.approx(expected, abs=1e-12)


def test_untouched_rows_bitwise_unchanged():
    rng = np.random.default_rng(0)
    mem = init_memory(5, 3, rng.normal(size=(5, 3)))
    p = GruParams(4, 3, rng)
    out = update_memory(mem, {2: (rng.normal(size=4), 3.0)}, p)
    for v in (0, 1, 3, 4):
        assert out.states[v].tobytes() == mem.states[v].tobytes()
        assert out.last_update[v] == 0.0
    assert out.last_update[2] == 3.0 and out.touched[2]


def test_gru_dimension_mismatch():
    with pytest.raises(ValueError, match="input dim"):
        update_memory(init_memory(1, 3), {0: (np.ones(5), 1.0)}, GruParams(4, 3))


def test_gru_rejects_backwards_time():
    mem = init_memory(1, 2)
    mem.last_update[0] = 5.0
    with pytest.raises(ValueError):
        update_memory(mem, {0: (np.ones(2), 4.0)}, GruParams(2, 2))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 100_000), st.integers(1, 4), st.integers(1, 4))
def test_gru_matches_scalar_loop(seed, d_in, hidden):
    rng = np.random.default_rng(seed)
    p = GruParams(d_in, hidden, rng)
    for name in p.names:
        getattr(p, name).data[:] = rng.normal(size=getattr(p, name).shape)
    m, s = rng.normal(size=d_in), rng.normal(size=hidden)
    got = gru_cell(Tensor(m[None]), Tensor(s[None]), p).data[0]
    ref = oracles.gru_scalar(m.tolist(), s.tolist(), oracles.to_lists(p.parameters()))
    np.testing.assert_allclose(got, ref, atol=1e-10, rtol=0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 100_000))
def test_gru_output_between_candidate_and_previous(seed):
    rng = np.random.default_rng(seed)
    p = GruParams(3, 4, rng)
    for name in p.names:
        getattr(p, name).data[:] = rng.normal(size=getattr(p, name).shape)
    m, s = rng.normal(size=(1, 3)), rng.normal(size=(1, 4))
    out = gru_cell(Tensor(m), Tensor(s), p).data[0]
    P = {k: np.array(v) for k, v in oracles.to_lists(p.parameters()).items()}
    r = 1 / (1 + np.exp(-(m[0] @ P["W_ir"] + P["b_ir"] + s[0] @ P["W_hr"] + P["b_hr"])))
    n = np.tanh(m[0] @ P["W_in"] + P["b_in"] + r * (s[0] @ P["W_hn"] + P["b_hn"]))
    lo, hi = np.minimum(n, s[0]), np.maximum(n, s[0])
    assert np.all(out >= lo - 1e-12) and np.all(out <= hi + 1e-12)


def test_gru_gradients():
    rng = np.random.default_rng(4)
    p = GruParams(3, 2, rng)
    names = p.names

    def f(m, s, *ws):
        for n, w in zip(names, ws):
            setattr(p, n, w)
        return gru_cell(m, s, p)

    inputs = [rng.normal(size=(2, 3)), rng.normal(size=(2, 2))] + [getattr(p, n).data.copy() for n in names]
    assert ad.grad_check(f, inputs) < 1e-4


# ------------------------------------------------------- stream properties


def _run_stream(events, mode, d_mem=3, batch=1):
    g = TemporalGraph()
    g.bulk_load(events)
    g.freeze()
    rng = np.random.default_rng(0)
    enc, p = TimeEncoder(2), GruParams(2 * d_mem + 2, d_mem, rng)
    mem = init_memory(g.node_count, d_mem, rng.normal(size=(g.node_count, d_mem)))
    for b in g.batches(range(len(g)), batch):
        before = mem.copy()
        mem = update_memory(mem, aggregate(compute_raw_messages(b, mem, enc), mode), p)
        hit = set(b.src.tolist()) | set(b.dst.tolist())
        for v in set(range(g.node_count)) - hit:
            assert mem.states[v].tobytes() == before.states[v].tobytes()
            assert mem.last_update[v] == before.last_update[v]
        assert np.all(mem.last_update >= before.last_update)
    return mem


stream = st.lists(
    st.tuples(st.integers(0, 5), st.integers(0, 5), st.integers(0, 30)).filter(lambda e: e[0] != e[1]),
    min_size=1, max_size=25,
)


@settings(max_examples=30, deadline=None)
@given(stream)
def test_mean_and_last_agree_on_singleton_batches(events):
    a, b = _run_stream(events, "mean"), _run_stream(events, "last")
    np.testing.assert_array_equal(a.states, b.states)


@settings(max_examples=30, deadline=None)
@given(stream, st.integers(1, 6), st.sampled_from(["mean", "last"]))
def test_stream_deterministic_and_frame_rule(events, batch, mode):
    a = _run_stream(events, mode, batch=batch)
    b = _run_stream(events, mode, batch=batch)
    assert a.states.tobytes() == b.states.tobytes()


# ------------------------------------------------------------- checkpoints


def test_snapshot_mutate_restore():
    mem = init_memory(4, 3, np.arange(12.0).reshape(4, 3))
    snap = snapshot(mem)
    mem.states += 1
    mem.last_update[1] = 9
    restore(mem, snap)
    np.testing.assert_array_equal(mem.states, np.arange(12.0).reshape(4, 3))
    assert mem.last_update[1] == 0


def test_restore_wrong_width():
    with pytest.raises(ValueError):
        restore(init_memory(4, 3), snapshot(init_memory(4, 5)))


def test_bytes_round_trip_after_updates():
    mem = _run_stream([(i % 5, (i * 3 + 1) % 5 or 5, float(i)) for i in range(100) if i % 5 != ((i * 3 + 1) % 5 or 5)], "last")
    back = memory_from_bytes(memory_to_bytes(mem))
    assert back.states.tobytes() == mem.states.tobytes()
    assert back.last_update.tobytes() == mem.last_update.tobytes()
    np.testing.assert_array_equal(back.touched, mem.touched)


def test_bytes_header_layout():
    raw = memory_to_bytes(init_memory(2, 3))
    assert int.from_bytes(raw[0:4], "little") == 3
    assert int.from_bytes(raw[4:8], "little") == 2
    assert raw[8] == 8


def test_bytes_wrong_width_and_truncation():
    raw = memory_to_bytes(init_memory(2, 3))
    with pytest.raises(CheckpointError):
        memory_from_bytes(raw, d_mem=4)
    with pytest.raises(CheckpointError, match="offset"):
        memory_from_bytes(raw[:20])


def test_memory_state_default_touched():
    m = MemoryState(np.zeros((2, 2)), np.zeros(2))
    assert not m.touched.any()
