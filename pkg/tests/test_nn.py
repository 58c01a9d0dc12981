import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from scenegen.nn import _pykernels, kernels
from scenegen.nn import tensor as T
from scenegen.nn.gradcheck import finite_difference_gradient, max_relative_error
from scenegen.nn.io import CheckpointError, load_checkpoint, save_checkpoint
from scenegen.nn.layers import (
    ParamStore,
    gat_attention,
    gat_forward,
    gcn_forward,
    gcn_norm,
    gru_cell,
    init_gat,
    init_gcn,
    init_gru,
    init_mlp,
    mlp_forward,
    xavier_init,
)
from scenegen.nn.optim import AdamState, adam_step, bce, clip_gradients, mean_bce
from scenegen.nn.tensor import Tensor

try:
    from scenegen.nn import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def _check(store: ParamStore, build, tol=1e-6, inputs=()):
    """Analytic vs central-difference gradient of sum(w * build()) for a fixed random w."""
    rng = np.random.default_rng(5)
    w = None

    def loss():
        nonlocal w
        out = build()
        if w is None:
            w = rng.normal(size=out.shape)
        return T.total(out * w)

    l = loss()
    store.zero_grad()
    for x in inputs:
        x.grad = None
    l.backward()
    analytic = {k: p.grad.copy() for k, p in store.items()}
    numeric = finite_difference_gradient(lambda: float(loss().data), store)
    err = max_relative_error(analytic, numeric)
    assert err < tol, err
    return err


# ---------------------------------------------------------------- tensor


def test_broadcast_add_gradient():
    a = Tensor(np.ones((3, 2)), requires_grad=True)
    b = Tensor(np.ones((1, 2)), requires_grad=True)
    T.total(a + b).backward()
    assert np.array_equal(b.grad, [[3.0, 3.0]])
    assert np.array_equal(a.grad, np.ones((3, 2)))


def test_gather_scatters_back():
    x = Tensor(np.arange(6.0).reshape(3, 2), requires_grad=True)
    T.total(T.gather(x, np.array([0, 0, 2]))).backward()
    assert np.array_equal(x.grad, [[2, 2], [0, 0], [1, 1]])


def test_shared_subexpression_accumulates():
    x = Tensor(np.array([2.0]), requires_grad=True)
    y = x * x
    T.total(y + y).backward()
    assert x.grad[0] == 8.0


def test_elementwise_ops_against_finite_differences():
    rng = np.random.default_rng(0)
    store = ParamStore()
    store.add("x", rng.normal(size=(4, 3)))
    store.add("y", rng.normal(size=(4, 3)))
    x, y = store["x"], store["y"]
    build = lambda: T.concat([T.sigmoid(x) * T.tanh(y), T.leaky_relu(x - y), T.power(T.sigmoid(y), 2.0)], axis=1)
    _check(store, build)


# ---------------------------------------------------------------- kernels


def test_backend_reported():
    assert kernels.BACKEND in ("cython", "python")


@pytest.mark.skipif(_ckernels is None, reason="compiled kernels not built")
@given(arrays(np.float64, st.integers(1, 40), elements=st.floats(-50, 50)),
       st.integers(1, 6), st.integers(0, 2**16))
def test_compiled_kernels_match_numpy(values, n, seed):
    seg = np.random.default_rng(seed).integers(0, n, size=values.size).astype(np.int64)
    assert np.allclose(_ckernels.segment_sum(values, seg, n), _pykernels.segment_sum(values, seg, n))
    cs = _ckernels.segment_softmax(values, seg, n)
    ps = _pykernels.segment_softmax(values, seg, n)
    assert np.allclose(cs, ps, rtol=1e-12, atol=1e-15)
    g = np.random.default_rng(seed + 1).normal(size=values.size)
    assert np.allclose(_ckernels.segment_softmax_backward(ps, g, seg, n),
                       _pykernels.segment_softmax_backward(ps, g, seg, n), atol=1e-12)


@pytest.mark.skipif(_ckernels is None, reason="compiled kernels not built")
def test_compiled_segment_sum_rows():
    v = np.arange(12.0).reshape(6, 2)
    seg = np.array([0, 1, 0, 2, 2, 2], dtype=np.int64)
    assert np.array_equal(_ckernels.segment_sum(v, seg, 4), _pykernels.segment_sum(v, seg, 4))


@given(arrays(np.float64, st.integers(1, 30), elements=st.floats(-30, 30)), st.integers(1, 5),
       st.integers(0, 1000))
def test_softmax_sums_to_one_per_segment(logits, n, seed):
    seg = np.random.default_rng(seed).integers(0, n, size=logits.size)
    a = kernels.segment_softmax(logits, seg, n)
    sums = kernels.segment_sum(a, seg, n)
    present = np.bincount(seg, minlength=n) > 0
    assert np.allclose(sums[present], 1.0)
    assert np.all(a > 0)


# ---------------------------------------------------------------- layers


def test_mlp_shapes_and_zero_weights():
    store = ParamStore()
    init_mlp(store, "m", [3, 16, 1], np.random.default_rng(0))
    x = Tensor(np.random.default_rng(1).normal(size=(7, 3)))
    assert mlp_forward(store, "m", x, [3, 16, 1]).shape == (7, 1)
    for _, p in store.items():
        p.data[:] = 0.0
    assert np.all(mlp_forward(store, "m", x, [3, 16, 1]).data == 0.0)
    with pytest.raises(ValueError):
        mlp_forward(store, "m", Tensor(np.zeros((2, 4))), [3, 16, 1])


def test_mlp_gradient():
    store = ParamStore()
    init_mlp(store, "m", [3, 16, 1], np.random.default_rng(0))
    store.add("x", np.random.default_rng(1).normal(size=(5, 3)))
    _check(store, lambda: mlp_forward(store, "m", store["x"], [3, 16, 1]))


def _gat_store(d_in=3, d_out=4, seed=0):
    store = ParamStore()
    init_gat(store, "g", d_in, d_out, np.random.default_rng(seed))
    return store


def test_gat_self_edge_only():
    store = _gat_store()
    h = Tensor(np.random.default_rng(2).normal(size=(1, 3)))
    out = gat_forward(store, "g", h, Tensor(np.zeros((0, 1))), [], [])
    assert np.allclose(out.data, h.data @ store["g.W"].data)


def test_gat_equal_logits_split_evenly():
    store = _gat_store(d_in=2, d_out=2)
    store["g.a"].data[:] = 0.0  # all logits equal
    h = Tensor(np.random.default_rng(3).normal(size=(2, 2)))
    e = Tensor(np.zeros((1, 1)))
    alpha, _, _, d2 = gat_attention(store, "g", h, e, [0], [1], 2)
    assert np.allclose(alpha.data.ravel()[d2 == 1], [0.5, 0.5])


@pytest.mark.parametrize("mode", ["both", "message", "attention"])
def test_gat_gradient(mode):
    rng = np.random.default_rng(4)
    store = _gat_store()
    store.add("h", rng.normal(size=(4, 3)))
    store.add("e", rng.normal(size=(5, 1)))
    src, dst = np.array([0, 1, 2, 3, 1]), np.array([1, 2, 3, 0, 3])
    _check(store, lambda: gat_forward(store, "g", store["h"], store["e"], src, dst, edge_mode=mode))


def test_gat_rejects_bad_endpoints():
    store = _gat_store()
    with pytest.raises(IndexError):
        gat_forward(store, "g", Tensor(np.zeros((2, 3))), Tensor(np.zeros((1, 1))), [0], [5])


def test_gcn_hand_values():
    store = ParamStore()
    init_gcn(store, "c", 1, 1, np.random.default_rng(0))
    store["c.W"].data[:] = 1.0
    h = Tensor(np.array([[2.5]]))
    assert np.allclose(gcn_forward(store, "c", h, [], []).data, [[2.5]])
    h2 = Tensor(np.array([[1.0], [1.0]]))
    assert np.allclose(gcn_forward(store, "c", h2, [0], [1]).data, [[1.0], [1.0]])


def test_gcn_norm_weights():
    frm, to, w = gcn_norm([0], [1], 3)
    # node 2 is isolated: only its self loop with weight 1
    assert w[(frm == 2) & (to == 2)].tolist() == [1.0]
    assert np.allclose(w[:2], 0.5)


def test_gcn_gradient():
    rng = np.random.default_rng(6)
    store = ParamStore()
    init_gcn(store, "c", 3, 2, rng)
    store.add("h", rng.normal(size=(5, 3)))
    _check(store, lambda: gcn_forward(store, "c", store["h"], [0, 1, 2, 3], [1, 2, 3, 4]))


def test_gru_gradient():
    rng = np.random.default_rng(7)
    store = ParamStore()
    init_gru(store, "r", 3, 4, rng)
    store.add("x", rng.normal(size=(2, 3)))
    store.add("h0", rng.normal(size=(2, 4)))
    _check(store, lambda: gru_cell(store, "r", store["x"], gru_cell(store, "r", store["x"], store["h0"])))


def test_xavier():
    w = xavier_init(0, (22, 8))
    assert np.all(np.abs(w) <= math.sqrt(6 / 30))
    assert np.array_equal(w, xavier_init(0, (22, 8)))
    assert abs(xavier_init(1, (100, 100)).mean()) < 0.02
    with pytest.raises(ValueError):
        xavier_init(0, (3,))


def test_param_store_snapshot_restore():
    store = ParamStore()
    store.add("a", np.ones((2, 2)))
    snap = store.snapshot()
    store["a"].data += 1
    store.restore(snap)
    assert np.array_equal(store["a"].data, np.ones((2, 2)))
    with pytest.raises(KeyError):
        store.add("a", np.zeros(1))


# ---------------------------------------------------------------- optimiser and loss


def test_bce_values():
    assert bce(1, 1.0) == pytest.approx(0.0, abs=1e-11)
    assert abs(bce(1, 0.5) - math.log(2)) < 1e-12
    assert abs(mean_bce([1, 0], [0.5, 0.5]) - 0.6931471805599453) < 1e-12


def test_bce_tensor_matches_scalar():
    p = Tensor(np.array([[0.2], [0.9], [0.6]]), requires_grad=True)
    y = np.array([0.0, 1.0, 1.0])
    assert float(T.bce_mean(p, y).data) == mean_bce(y, p.data.ravel())


def _scalar_store(value=0.0, grad=None):
    store = ParamStore()
    store.add("t", np.array([value]))
    store["t"].grad = None if grad is None else np.array([grad])
    return store


def test_adam_first_step():
    store = _scalar_store(0.0, 1.0)
    adam_step(store, AdamState(lr=0.01, weight_decay=1e-5))
    assert store["t"].data[0] == pytest.approx(-0.01 / (1 + 1e-8), abs=1e-15)
    assert store["t"].grad is None


def test_adam_zero_gradient_no_decay_is_identity():
    store = _scalar_store(0.7, 0.0)
    adam_step(store, AdamState(weight_decay=0.0))
    assert store["t"].data[0] == 0.7


def test_adam_decoupled_decay():
    store = _scalar_store(2.0, 0.0)
    adam_step(store, AdamState(lr=0.1, weight_decay=0.5))
    assert store["t"].data[0] == pytest.approx(2.0 - 0.1 * 0.5 * 2.0)


def test_adam_deterministic():
    def go():
        store = _scalar_store(1.0)
        st_ = AdamState()
        for g in (0.3, -0.2, 0.9):
            store["t"].grad = np.array([g])
            adam_step(store, st_)
        return store["t"].data.copy()

    assert np.array_equal(go(), go())


def test_clip():
    store = ParamStore()
    store.add("a", np.zeros(3))
    store["a"].grad = np.array([2.5, -0.3, -7.0])
    clip_gradients(store, 1.0)
    assert store["a"].grad.tolist() == [1.0, -0.3, -1.0]
    store["a"].grad = np.array([np.nan, 0, 0])
    with pytest.raises(FloatingPointError):
        clip_gradients(store)


@given(arrays(np.float64, 8, elements=st.floats(-1e6, 1e6)))
def test_clip_bounds_property(g):
    store = ParamStore()
    store.add("a", np.zeros(8))
    store["a"].grad = g.copy()
    clip_gradients(store, 1.0)
    assert np.all(np.abs(store["a"].grad) <= 1.0)
    inside = np.abs(g) <= 1.0
    assert np.array_equal(store["a"].grad[inside], g[inside])


# ---------------------------------------------------------------- finite differences


def test_finite_difference_oracle():
    store = _scalar_store(3.0)
    num = finite_difference_gradient(lambda: float(store["t"].data[0] ** 2), store)
    assert abs(num["t"][0] - 6.0) < 1e-6
    assert finite_difference_gradient(lambda: 1.0, store)["t"][0] == 0.0


def test_finite_difference_subsampling_leaves_nan():
    store = ParamStore()
    store.add("a", np.zeros(10))
    num = finite_difference_gradient(lambda: 0.0, store, max_per_param=3)
    assert np.isnan(num["a"]).sum() == 7


# ---------------------------------------------------------------- checkpoints


def test_checkpoint_round_trip(tmp_path):
    store = ParamStore()
    init_mlp(store, "m", [3, 4, 1], np.random.default_rng(0))
    state = AdamState()
    for _, p in store.items():
        p.grad = np.ones_like(p.data)
    adam_step(store, state)
    save_checkpoint(tmp_path / "c.json", store, state, {"k": 1})
    fresh = ParamStore()
    init_mlp(fresh, "m", [3, 4, 1], np.random.default_rng(9))
    st2, cfg = load_checkpoint(tmp_path / "c.json", fresh)
    assert cfg == {"k": 1} and st2.step == 1
    for k, p in store.items():
        assert np.array_equal(p.data, fresh[k].data)
        assert np.array_equal(state.m[k], st2.m[k])


def test_checkpoint_shape_mismatch(tmp_path):
    store = ParamStore()
    init_mlp(store, "m", [3, 4, 1], np.random.default_rng(0))
    save_checkpoint(tmp_path / "c.json", store)
    other = ParamStore()
    init_mlp(other, "m", [3, 5, 1], np.random.default_rng(0))
    with pytest.raises(CheckpointError, match="shape"):
        load_checkpoint(tmp_path / "c.json", other)


def test_pure_python_switch():
    import os
    import subprocess
    import sys

    env = {**os.environ, "SCENEGEN_PURE_PYTHON": "1"}
    out = subprocess.run([sys.executable, "-c", "from scenegen.nn import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
