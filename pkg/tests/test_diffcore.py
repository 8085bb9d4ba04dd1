import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from hnrsim import diffcore as dc
from hnrsim.diffcore import Tensor

from conftest import rel_err

FD_TOL = 1e-4


def check_grad(fn, *shapes, seed=0, positive=False):
    """Compare backward() against central differences for every input."""
    r = np.random.default_rng(seed)
    xs = [r.normal(size=s) for s in shapes]
    if positive:
        xs = [np.abs(x) + 0.5 for x in xs]
    proj = [None]

    def loss_value():
        out = fn(*[Tensor(x) for x in xs])
        if proj[0] is None:
            proj[0] = np.random.default_rng(seed + 1).normal(size=out.shape)
        return float((out.data * proj[0]).sum())

    loss_value()
    ts = [Tensor(x, requires_grad=True) for x in xs]
    out = fn(*ts)
    loss = dc.reduce_sum(out * proj[0])
    grads = dc.backward(loss, {str(i): t for i, t in enumerate(ts)})
    for i, x in enumerate(xs):
        num = dc.numeric_grad(loss_value, x)
        assert rel_err(grads[str(i)], num) <= FD_TOL, f"input {i}"


# ------------------------------------------------------------ gradient checks

OP_CASES = [
    ("add", lambda a, b: a + b, [(3, 4), (3, 4)], False),
    ("add_broadcast", lambda a, b: a + b, [(2, 3, 4), (4,)], False),
    ("sub", lambda a, b: a - b, [(3,), (3,)], False),
    ("mul", lambda a, b: a * b, [(3, 4), (1, 4)], False),
    ("neg", lambda a: -a, [(5,)], False),
    ("relu", dc.relu, [(4, 5)], False),
    ("sigmoid", dc.sigmoid, [(4, 5)], False),
    ("log", dc.log, [(6,)], True),
    ("log_sigmoid", dc.log_sigmoid, [(4, 5)], False),
    ("matmul", lambda a, b: a @ b, [(3, 4), (4, 2)], False),
    ("matmul_batched", lambda a, b: a @ b, [(2, 3, 4), (2, 4, 5)], False),
    ("matmul_broadcast", lambda a, b: a @ b, [(2, 3, 4), (4, 5)], False),
    ("linear", dc.linear, [(2, 3, 4), (4, 5), (5,)], False),
    ("softmax", dc.softmax, [(3, 6)], False),
    ("layer_norm", dc.layer_norm, [(3, 5), (5,), (5,)], False),
    ("concat", lambda a, b: dc.concat([a, b], axis=-1), [(2, 3), (2, 4)], False),
    ("reduce_sum", lambda a: dc.reduce_sum(a, axis=1), [(3, 4)], False),
    ("mean", lambda a: dc.mean(a, axis=0, keepdims=True), [(3, 4)], False),
    ("reshape", lambda a: a.reshape(4, 3), [(3, 4)], False),
    ("transpose", lambda a: a.transpose(2, 0, 1), [(2, 3, 4)], False),
    ("slice", lambda a: a[1:, ::2], [(3, 5)], False),
    ("fancy_index", lambda a: a[np.array([0, 2, 2])], [(3, 4)], False),
    ("take", lambda a: dc.take(a, np.array([2, 0, 2, 1]), axis=1), [(2, 3, 2)], False),
    ("segment_sum", lambda a: dc.segment_sum(a, np.array([0, 2, 0, 1, 2]), 3, axis=0),
     [(5, 2)], False),
    ("edge_relu_sum_uniform",
     lambda s, d, b: dc.edge_relu_sum(s, d, b, np.array([0, 1, 2, 2, 0, 1]),
                                      np.array([0, 0, 1, 1, 2, 2])),
     [(3, 2, 4), (3, 2, 4), (4,)], False),
    ("edge_relu_sum_irregular",
     lambda s, d, b: dc.edge_relu_sum(s, d, b, np.array([0, 1, 3, 2, 0]),
                                      np.array([0, 0, 0, 1, 1])),
     [(4, 3), (2, 3), (1, 3)], False),
]


@pytest.mark.parametrize("name,fn,shapes,pos", OP_CASES)
def test_op_gradients(name, fn, shapes, pos):
    check_grad(fn, *shapes, positive=pos)


def test_two_layer_net_gradients():
    r = np.random.default_rng(5)
    x = r.normal(size=(8, 3))
    y = (r.random(8) < 0.5).astype(float)
    W1, b1 = r.normal(size=(3, 6)), r.normal(size=6)
    W2, b2 = r.normal(size=(6, 1)), r.normal(size=1)

    def net(W1, b1, W2, b2):
        h = dc.relu(dc.linear(Tensor(x), W1, b1))
        z = dc.linear(h, W2, b2).reshape(8)
        ll = y * dc.log_sigmoid(z) + (1 - y) * dc.log_sigmoid(-z)
        return -ll.mean()

    check_grad(net, W1.shape, b1.shape, W2.shape, b2.shape, seed=9)


# ------------------------------------------------------------- forward facts

def test_identity_matmul():
    A = np.random.default_rng(0).normal(size=(3, 3))
    np.testing.assert_array_equal((Tensor(np.eye(3)) @ Tensor(A)).data, A)


def test_softmax_uniform():
    np.testing.assert_array_equal(dc.softmax(Tensor(np.zeros(4))).data, np.full(4, 0.25))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (3, 7), elements=st.floats(-50, 50)))
def test_softmax_rows(x):
    s = dc.softmax(Tensor(x)).data
    assert np.all(np.abs(s.sum(axis=-1) - 1) <= 1e-12)
    assert np.all((s >= 0) & (s <= 1))


def test_softmax_large_inputs_finite():
    s = dc.softmax(Tensor(np.array([1000.0, 0.0, -1000.0]))).data
    np.testing.assert_allclose(s, [1.0, 0.0, 0.0])


def test_layer_norm_constant_vector():
    out = dc.layer_norm(Tensor(np.full(6, 3.7)), Tensor(np.ones(6)), Tensor(np.zeros(6))).data
    np.testing.assert_allclose(out, np.zeros(6), rtol=0, atol=1e-12)


def test_layer_norm_matches_formula():
    x = np.random.default_rng(2).normal(size=(4, 5))
    g, b = np.arange(1.0, 6.0), np.linspace(-1, 1, 5)
    mu = x.mean(axis=1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=1, keepdims=True)
    want = (x - mu) / np.sqrt(var + 1e-5) * g + b
    np.testing.assert_allclose(dc.layer_norm(Tensor(x), Tensor(g), Tensor(b)).data, want,
                               rtol=1e-12, atol=1e-12)


def test_sigmoid_extremes():
    s = dc.sigmoid(Tensor(np.array([-800.0, 0.0, 800.0]))).data
    np.testing.assert_array_equal(s, [0.0, 0.5, 1.0])


def test_edge_relu_sum_matches_composition():
    r = np.random.default_rng(3)
    src, dst, b = r.normal(size=(5, 2, 3)), r.normal(size=(4, 2, 3)), r.normal(size=3)
    si, di = r.integers(0, 5, 11), r.integers(0, 4, 11)
    pre = np.maximum(src[si] + dst[di] + b, 0)
    want = np.zeros_like(dst)
    np.add.at(want, di, pre)
    got = dc.edge_relu_sum(Tensor(src), Tensor(dst), Tensor(b), si, di).data
    np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-12)


def test_determinism():
    r = np.random.default_rng(4)
    x, W = r.normal(size=(3, 4)), r.normal(size=(4, 2))

    def run():
        w = Tensor(W, requires_grad=True)
        loss = dc.reduce_sum(dc.softmax(Tensor(x) @ w) * Tensor(x[:, :2]))
        return loss.data.copy(), dc.backward(loss, {"w": w})["w"]

    (l1, g1), (l2, g2) = run(), run()
    assert l1.tobytes() == l2.tobytes() and g1.tobytes() == g2.tobytes()


# ------------------------------------------------------------------ backward

def test_backward_sum_gives_ones():
    p = Tensor(np.random.default_rng(0).normal(size=(2, 3)), requires_grad=True)
    np.testing.assert_array_equal(dc.backward(p.sum(), {"p": p})["p"], np.ones((2, 3)))


def test_backward_sigmoid_at_zero():
    x = Tensor(np.array(0.0), requires_grad=True)
    assert dc.backward(dc.sigmoid(x), {"x": x})["x"] == 0.25


def test_unreachable_param_gets_zero():
    a = Tensor(np.ones(3), requires_grad=True)
    b = Tensor(np.ones((2, 2)), requires_grad=True)
    g = dc.backward(a.sum(), {"a": a, "b": b})
    np.testing.assert_array_equal(g["b"], np.zeros((2, 2)))


def test_non_scalar_root_rejected():
    a = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(dc.GraphError):
        dc.backward(a * 2.0, {"a": a})


def test_shape_mismatch_reports_node():
    with pytest.raises(dc.GraphError) as err:
        Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 3)))
    assert err.value.node_id is not None
    with pytest.raises(dc.GraphError):
        Tensor(np.ones(3)) + Tensor(np.ones(4))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_rejected():
    with pytest.raises(dc.NonFiniteError):
        Tensor(np.array([1e308])) * Tensor(np.array([10.0]))
    with pytest.raises(dc.NonFiniteError):
        dc.log(Tensor(np.array([0.0, 1.0])))


def test_no_grad_records_nothing():
    a = Tensor(np.ones(2), requires_grad=True)
    with dc.no_grad():
        out = a * 3.0
    assert not out.requires_grad and out._parents == ()


def test_shared_subexpression_accumulates():
    a = Tensor(np.array([2.0]), requires_grad=True)
    b = a * a
    loss = (b + b).sum()
    assert dc.backward(loss, {"a": a})["a"][0] == 8.0


# ---------------------------------------------------------------- optimizers

def test_adam_zero_grad_is_identity():
    p0 = np.random.default_rng(0).normal(size=(3, 2))
    p = Tensor(p0.copy(), requires_grad=True)
    opt = dc.Adam({"p": p}, lr=0.1)
    for _ in range(5):
        opt.step({"p": np.zeros((3, 2))})
    assert p.data.tobytes() == p0.tobytes()
    assert opt.step_count == 5


def test_adam_bounded_first_step():
    p = Tensor(np.array(0.0), requires_grad=True)
    dc.Adam({"p": p}, lr=0.1).step({"p": np.array(1.0)})
    assert -0.1 <= p.data < 0


def test_adam_converges_on_quadratic():
    p = Tensor(np.array(0.0), requires_grad=True)
    opt = dc.Adam({"p": p}, lr=0.1)
    for _ in range(200):
        loss = ((p - 3.0) * (p - 3.0)).sum()
        opt.step(dc.backward(loss, {"p": p}))
    assert abs(p.data - 3.0) < 0.05


def test_adamw_decoupled_decay():
    # with zero gradient the only change is p <- p - lr * wd * p
    p = Tensor(np.array([2.0, -4.0]), requires_grad=True)
    opt = dc.AdamW({"p": p}, lr=0.1, weight_decay=0.5)
    opt.step({"p": np.zeros(2)})
    np.testing.assert_allclose(p.data, [2.0 * 0.95, -4.0 * 0.95], rtol=0, atol=1e-15)
    assert opt.kind == "adamw" and dc.Adam({"p": p}).kind == "adam"


def test_adam_matches_reference_update():
    # hand-written Adam recursion as the oracle
    r = np.random.default_rng(7)
    p0, gs = r.normal(size=4), r.normal(size=(3, 4))
    p = Tensor(p0.copy(), requires_grad=True)
    opt = dc.Adam({"p": p}, lr=0.01, betas=(0.9, 0.999), eps=1e-8)
    m = v = np.zeros(4)
    ref = p0.copy()
    for t, g in enumerate(gs, start=1):
        opt.step({"p": g})
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref = ref - 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    np.testing.assert_allclose(p.data, ref, rtol=1e-13)


def test_optimizer_rejects_shape_mismatch():
    p = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(dc.GraphError):
        dc.Adam({"p": p}).step({"p": np.ones(4)})
