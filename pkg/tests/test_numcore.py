import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from satseg import numcore as nc
from satseg.numcore import Tensor


@pytest.fixture(autouse=True)
def f64():
    with nc.precision(np.float64):
        yield


def param(a):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=True)


# ---- matmul -------------------------------------------------------------

def test_matmul_identity():
    x = np.random.default_rng(0).normal(size=(2, 5))
    out = nc.matmul(Tensor(np.eye(2)), Tensor(x)).data
    assert np.array_equal(out, x)


def test_matmul_hand():
    out = nc.matmul(Tensor([[1, 2], [3, 4]]), Tensor([[1], [1]])).data
    assert out.tolist() == [[3], [7]]


def test_matmul_triple_loop_oracle():
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=(5, 4)), rng.normal(size=(4, 3))
    ref = np.zeros((5, 3))
    for i in range(5):
        for j in range(3):
            for k in range(4):
                ref[i, j] += a[i, k] * b[k, j]
    assert np.max(np.abs(nc.matmul(Tensor(a), Tensor(b)).data - ref)) < 1e-12


def test_matmul_shape_mismatch():
    with pytest.raises(nc.DimensionError):
        nc.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


# ---- softmax ------------------------------------------------------------

def test_softmax_uniform_row():
    out = nc.softmax_rows(Tensor([[0.0, 0.0, 0.0]])).data
    assert np.allclose(out, 1 / 3, atol=1e-15)


def test_softmax_no_overflow():
    out = nc.softmax_rows(Tensor([[1000.0, 0.0]])).data
    assert abs(out[0, 0] - 1) < 1e-12 and abs(out[0, 1]) < 1e-12


def test_softmax_matches_direct_oracle():
    x = np.random.default_rng(2).normal(size=(6, 7))
    out = nc.softmax_rows(Tensor(x)).data
    direct = np.array([[math.exp(v) / sum(math.exp(u) for u in row) for v in row] for row in x])
    assert np.max(np.abs(out.sum(axis=1) - 1)) < 1e-12
    assert np.max(np.abs(out - direct)) < 1e-12


def test_softmax_rejects_nonfinite():
    with pytest.raises(nc.NumericError):
        nc.softmax_rows(Tensor([[np.inf, 0.0]]))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float32, (4, 5), elements=st.floats(-50, 50, width=32)))
def test_softmax_rows_sum_to_one_f32(x):
    with nc.precision(np.float32):
        out = nc.softmax_rows(Tensor(x)).data
    assert out.dtype == np.float32
    assert np.all(out >= 0)
    assert np.max(np.abs(out.sum(axis=1) - 1)) < 1e-6


# ---- layer norm ---------------------------------------------------------

def test_layer_norm_constant_row():
    out = nc.layer_norm(Tensor([[1.0, 1, 1, 1]]), Tensor(np.ones(4)), Tensor(np.zeros(4))).data
    assert np.array_equal(out, np.zeros((1, 4)))


def test_layer_norm_symmetric_pair():
    out = nc.layer_norm(Tensor([[-1.0, 1.0]]), Tensor(np.ones(2)), Tensor(np.zeros(2))).data
    assert np.allclose(out, [[-1, 1]], atol=1e-5)


def test_layer_norm_two_pass_oracle():
    rng = np.random.default_rng(3)
    x, g, b = rng.normal(size=(4, 8)), rng.normal(size=8), rng.normal(size=8)
    ref = np.empty_like(x)
    for i, row in enumerate(x):
        mu = sum(row) / len(row)
        var = sum((v - mu) ** 2 for v in row) / len(row)
        ref[i] = [(v - mu) / math.sqrt(var + 1e-5) for v in row]
    ref = ref * g + b
    out = nc.layer_norm(Tensor(x), Tensor(g), Tensor(b)).data
    assert np.max(np.abs(out - ref)) < 1e-10


def test_layer_norm_single_channel_is_bias():
    out = nc.layer_norm(Tensor([[3.0], [-2.0]]), Tensor([2.0]), Tensor([0.5])).data
    assert np.array_equal(out, [[0.5], [0.5]])


# ---- segmented reduce ---------------------------------------------------

def test_segment_mean_global():
    x = np.random.default_rng(4).normal(size=(9, 3))
    seg = nc.SegmentMap.from_ids(np.zeros(9, dtype=int))
    out = nc.segmented_reduce(Tensor(x), seg, "mean").data
    assert np.allclose(out[0], x.mean(axis=0), atol=1e-14)


@pytest.mark.parametrize("kind", ["mean", "sum", "max"])
def test_segment_each_row_alone_is_identity(kind):
    x = np.random.default_rng(5).normal(size=(6, 2))
    seg = nc.SegmentMap.from_ids(np.arange(6))
    assert np.array_equal(nc.segmented_reduce(Tensor(x), seg, kind).data, x)


@pytest.mark.parametrize("kind", ["mean", "sum", "max"])
def test_segment_loop_oracle(kind):
    rng = np.random.default_rng(6)
    x = rng.normal(size=(20, 3))
    ids = rng.integers(0, 4, size=20)
    ids[:4] = np.arange(4)
    seg = nc.SegmentMap.from_ids(ids, 4)
    out = nc.segmented_reduce(Tensor(x), seg, kind).data
    for s in range(4):
        rows = [x[i] for i in range(20) if ids[i] == s]
        if kind == "sum":
            ref = sum(rows)
        elif kind == "mean":
            ref = sum(rows) / len(rows)
        else:
            ref = np.max(rows, axis=0)
        assert np.max(np.abs(out[s] - ref)) < 1e-12


def test_segment_empty_yields_zero_and_flag():
    seg = nc.SegmentMap.from_ids([0, 0, 2], 3)
    out = nc.segmented_reduce(Tensor(np.ones((3, 2))), seg, "mean").data
    assert np.array_equal(out[1], [0, 0])
    assert seg.empty.tolist() == [False, True, False]


def test_segment_id_out_of_range():
    with pytest.raises(IndexError):
        nc.SegmentMap.from_ids([0, 3], 2)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 5), min_size=1, max_size=30),
       st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=6, max_size=6))
def test_mean_then_gather_reproduces_constant_segments(ids, values):
    ids = np.asarray(ids)
    x = np.asarray(values)[ids][:, None] * np.ones((1, 2))
    seg = nc.SegmentMap.from_ids(ids, 6)
    m = nc.segmented_reduce(Tensor(x), seg, "mean")
    back = nc.gather_rows(m, ids).data
    assert np.array_equal(back, x)


# ---- elementwise --------------------------------------------------------

def test_sigmoid_zero():
    assert nc.elementwise(Tensor([0.0]), "sigmoid").data[0] == 0.5


def test_concat_shape():
    a, b = Tensor(np.ones((5, 4))), Tensor(np.zeros((5, 4)))
    assert nc.elementwise(a, "concat_lastdim", b).shape == (5, 8)


def test_concat_mismatch():
    with pytest.raises(nc.DimensionError):
        nc.concat_lastdim(Tensor(np.ones((5, 4))), Tensor(np.ones((4, 4))))


def test_gelu_scalar_oracle():
    x = np.random.default_rng(7).normal(scale=2, size=100)
    ref = [0.5 * v * (1 + math.tanh(math.sqrt(2 / math.pi) * (v + 0.044715 * v**3))) for v in x]
    assert np.max(np.abs(nc.gelu(Tensor(x)).data - ref)) < 1e-6


def test_broadcast_trailing_only():
    a = Tensor(np.ones((3, 4)))
    assert nc.add(a, Tensor(np.arange(4.0))).shape == (3, 4)
    with pytest.raises(nc.DimensionError):
        nc.add(a, Tensor(np.ones(3)))
    with pytest.raises(nc.DimensionError):
        nc.mul(a, Tensor(np.ones((3, 1))))


# ---- gradients ----------------------------------------------------------

def test_grad_check_quadratic():
    x = param(np.random.default_rng(8).normal(size=(4, 3)))
    err = nc.grad_check(lambda: nc.total(nc.mul(x, x)), [x])
    assert err < 1e-8
    x.grad = None
    nc.total(nc.mul(x, x)).backward()
    assert np.allclose(x.grad, 2 * x.data)


def test_grad_check_softmax_cross_entropy_layer():
    rng = np.random.default_rng(9)
    x = Tensor(rng.normal(size=(10, 6)))
    w, b = param(rng.normal(size=(6, 4))), param(rng.normal(size=4))
    labels = rng.integers(0, 4, size=10)
    err = nc.grad_check(lambda: nc.cross_entropy(nc.add(nc.matmul(x, w), b), labels), [w, b])
    assert err < 1e-6


def _rand_seg(rng, n, k):
    ids = rng.integers(0, k, size=n)
    ids[:k] = np.arange(k)
    return nc.SegmentMap.from_ids(ids, k)


PRIMITIVES = {
    "matmul": lambda t, r, e: nc.matmul(t, e["w"]),
    "add": lambda t, r, e: nc.add(t, e["b"]),
    "sub": lambda t, r, e: nc.sub(e["b"], t),
    "mul": lambda t, r, e: nc.mul(t, e["b"]),
    "gelu": lambda t, r, e: nc.gelu(t),
    "sigmoid": lambda t, r, e: nc.sigmoid(t),
    "softmax_rows": lambda t, r, e: nc.softmax_rows(t),
    "layer_norm": lambda t, r, e: nc.layer_norm(t, e["g"], e["b"]),
    "concat": lambda t, r, e: nc.concat_lastdim(t, nc.gelu(t)),
    "repeat_cols": lambda t, r, e: nc.repeat_cols(t, 2),
    "reshape": lambda t, r, e: nc.reshape(t, (-1,)),
    "gather_rows": lambda t, r, e: nc.gather_rows(t, [0, 2, 2, 5, 1]),
    "weighted_gather": lambda t, r, e: nc.weighted_gather(t, [[0, 1, 2], [3, 3, 4]], [[0.2, 0.3, 0.5], [0.5, 0.1, 0.4]]),
    "seg_mean": lambda t, r, e: nc.segmented_reduce(t, e["seg"], "mean"),
    "seg_sum": lambda t, r, e: nc.segmented_reduce(t, e["seg"], "sum"),
    "seg_max": lambda t, r, e: nc.segmented_reduce(t, e["seg"], "max"),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_backward(name):
    rng = np.random.default_rng(10)
    x = param(rng.normal(size=(6, 4)))
    extra = {
        "w": param(rng.normal(size=(4, 3))),
        "b": param(rng.normal(size=4)),
        "g": param(rng.normal(size=4)),
        "seg": _rand_seg(rng, 6, 3),
    }
    probe = rng.normal(size=PRIMITIVES[name](x, rng, extra).shape)
    params = [x] + [v for v in extra.values() if isinstance(v, Tensor)]

    def f():
        return nc.total(nc.mul(PRIMITIVES[name](x, rng, extra), Tensor(probe)))

    assert nc.grad_check(f, params) < 1e-4


def test_segment_attention_backward():
    rng = np.random.default_rng(11)
    q, k, v = (param(rng.normal(size=(7, 4))) for _ in range(3))
    pairs = nc.PairList.from_groups(rng.integers(0, 2, 7), np.array([0, 1, 0, 1, 1, 0, 0]), 2)
    probe = rng.normal(size=(7, 4))
    err = nc.grad_check(lambda: nc.total(nc.mul(nc.segment_attention(q, k, v, pairs, 2), Tensor(probe))), [q, k, v])
    assert err < 1e-4


def test_backward_populates_every_reachable_param():
    rng = np.random.default_rng(12)
    a, b = param(rng.normal(size=(3, 3))), param(rng.normal(size=3))
    loss = nc.total(nc.gelu(nc.add(nc.matmul(a, a), b)))
    loss.backward()
    assert a.grad is not None and b.grad is not None
    assert a.grad.shape == a.shape and b.grad.shape == b.shape


def test_ops_are_deterministic():
    rng = np.random.default_rng(13)
    x = rng.normal(size=(50, 8))
    seg = _rand_seg(rng, 50, 7)
    r1 = nc.segmented_reduce(nc.softmax_rows(Tensor(x)), seg, "mean").data
    r2 = nc.segmented_reduce(nc.softmax_rows(Tensor(x.copy())), seg, "mean").data
    assert r1.tobytes() == r2.tobytes()


def test_grad_check_rejects_nonfinite():
    x = param([1.0])
    with pytest.raises(nc.NumericError):
        nc.grad_check(lambda: nc.mul(x, np.inf), [x])


# ---- checkpoint ---------------------------------------------------------

def test_checkpoint_round_trip(tmp_path):
    params = {"a.weight": np.arange(6, dtype=np.float32).reshape(2, 3), "b": np.array([1.5], dtype=np.float32)}
    path = tmp_path / "m.ckpt"
    nc.save_params(path, params)
    raw = path.read_bytes()
    assert raw[:8] == b"SATCKPT1"
    assert int.from_bytes(raw[8:12], "little") == 2
    back = nc.load_params(path)
    assert list(back) == list(params)
    for k in params:
        assert np.array_equal(back[k], params[k])


def test_checkpoint_rejects_garbage(tmp_path):
    p = tmp_path / "bad"
    p.write_bytes(b"NOTACKPT")
    with pytest.raises(nc.CheckpointError):
        nc.load_params(p)
    good = tmp_path / "good"
    nc.save_params(good, {"w": np.ones((3, 3))})
    (tmp_path / "cut").write_bytes(good.read_bytes()[:-4])
    with pytest.raises(nc.CheckpointError):
        nc.load_params(tmp_path / "cut")


def test_nested_module_lists_are_registered():
    rng = np.random.default_rng(0)

    class Holder(nc.Module):
        def __init__(self):
            self.grid = [[nc.Linear(2, 2, rng)], [nc.Linear(2, 3, rng, bias=False)]]

    names = [n for n, _ in Holder().named_parameters()]
    assert names == ["grid.0.0.weight", "grid.0.0.bias", "grid.1.0.weight"]
