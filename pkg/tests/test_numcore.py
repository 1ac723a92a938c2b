import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from cl4ctr import numcore as nc


def p(x, name=None):
    return nc.parameter(np.asarray(x, dtype=float), name=name)


def test_forward_hand_values():
    x = p(3.0)
    assert nc.mul(x, x).item() == 9.0
    assert nc.sigmoid(nc.Tensor(0.0)).item() == 0.5
    out = nc.matmul(nc.Tensor(np.ones((2, 3))), nc.Tensor(np.ones((3, 2))))
    np.testing.assert_array_equal(out.data, np.full((2, 2), 3.0))


def test_backward_hand_values():
    x = p(3.0)
    g = nc.backward(nc.square(x), [x])
    assert g[x] == 6.0
    z = p(0.0)
    assert nc.backward(nc.sigmoid(z), [z])[z] == 0.25


def test_backward_unreached_param_gets_zeros():
    a, b = p([1.0, 2.0]), p([[5.0]])
    g = nc.backward(nc.sum_(nc.square(a)), [a, b])
    np.testing.assert_array_equal(g[b], [[0.0]])
    np.testing.assert_array_equal(g[a], [2.0, 4.0])


def test_shared_node_accumulates():
    x = p(2.0)
    y = nc.add(nc.mul(x, x), nc.mul(x, x))
    assert nc.backward(y, [x])[x] == 8.0


def test_backward_needs_scalar():
    with pytest.raises(nc.ShapeError):
        nc.backward(p([1.0, 2.0]))


def test_shape_mismatch_reports_shapes():
    with pytest.raises(nc.ShapeError, match=r"\(2, 3\).*\(4,\)"):
        nc.add(p(np.ones((2, 3))), p(np.ones(4)))


def test_non_finite_detected():
    with pytest.raises(nc.NonFiniteError), np.errstate(divide="ignore"):
        nc.div(p(1.0), p(0.0))


def test_no_grad_records_nothing():
    x = p(2.0)
    with nc.no_grad():
        y = nc.square(x)
    assert y.parents == ()
    assert nc.grad_enabled()


def test_evaluate_returns_named_nodes():
    def f(x, w):
        h = nc.matmul(x, w)
        h.name = "h"
        return nc.sum_(h)
    nodes = nc.evaluate(f, {"x": np.ones((1, 2)), "w": np.full((2, 1), 2.0)})
    assert nodes["out"].item() == 4.0
    np.testing.assert_array_equal(nodes["h"].data, [[4.0]])
    assert "x" in nodes and "w" in nodes


def test_fd_checker_exact_and_near_exact():
    x = p([0.7, -1.3])
    assert nc.finite_difference_check(lambda: nc.sum_(nc.scale(x, 3.0)), [x]) < 1e-10
    y = p([1.0])
    assert nc.finite_difference_check(lambda: nc.sum_(nc.relu(y)), [y]) < 1e-6


def test_fd_random_five_node_graph(rng):
    a, b = p(rng.normal(size=(3, 4))), p(rng.normal(size=(4, 2)))
    c = p(rng.normal(size=2))

    def loss():
        h = nc.sigmoid(nc.add(nc.matmul(a, b), c))
        return nc.mean(nc.mul(nc.softplus(h), nc.square(h)))
    assert nc.finite_difference_check(loss, [a, b, c]) < 1e-4


OPS = {
    "add": lambda a, b: nc.add(a, b),
    "sub": lambda a, b: nc.sub(a, b),
    "mul": lambda a, b: nc.mul(a, b),
    "div": lambda a, b: nc.div(a, nc.add(nc.square(b), nc.Tensor(1.0))),
    "scale": lambda a, b: nc.scale(a, -2.5),
    "mask_mul": lambda a, b: nc.mask_mul(a, np.array([[1.0, 0.0, 1.0]])),
    "square": lambda a, b: nc.square(a),
    "sqrt": lambda a, b: nc.sqrt(nc.add(nc.square(a), nc.Tensor(0.5))),
    "relu": lambda a, b: nc.relu(a),
    "sigmoid": lambda a, b: nc.sigmoid(a),
    "softplus": lambda a, b: nc.softplus(a),
    "sum_axis": lambda a, b: nc.sum_(a, axis=0, keepdims=True),
    "mean": lambda a, b: nc.mean(a, axis=1),
    "reshape": lambda a, b: nc.reshape(a, (3, 2)),
    "transpose": lambda a, b: nc.transpose(a),
    "concat": lambda a, b: nc.concat([a, b], axis=0),
    "slice_rows": lambda a, b: nc.mul(nc.slice_rows(a, 1, 2), nc.slice_rows(b, 0, 1)),
    "matmul": lambda a, b: nc.matmul(a, nc.transpose(b)),
    "softmax": lambda a, b: nc.softmax(a),
    "gather": lambda a, b: nc.gather(a, np.array([[0, 1], [1, 1]])),
    "linear": lambda a, b: nc.linear(a, nc.transpose(b), nc.sum_(b, axis=1)),
    # a fresh generator per call so the mask is identical on every re-evaluation
    "dropout": lambda a, b: nc.dropout(a, 0.3, True, np.random.default_rng(7)),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_every_op_gradient(name, rng):
    a = p(rng.normal(size=(2, 3)))
    b = p(rng.normal(size=(2, 3)))
    w = rng.normal(size=64)
    op = OPS[name]

    def loss():
        out = op(a, b)
        return nc.sum_(nc.mul(out, nc.Tensor(w[:out.data.size].reshape(out.shape))))
    assert nc.finite_difference_check(loss, [a, b]) < 1e-4


def test_batched_matmul_gradient(rng):
    x = p(rng.normal(size=(2, 3, 4)))
    w = p(rng.normal(size=(4, 5)))
    y = p(rng.normal(size=(2, 5, 3)))
    loss = lambda: nc.sum_(nc.square(nc.matmul(nc.matmul(x, w), y)))
    assert nc.finite_difference_check(loss, [x, w, y]) < 1e-4


def test_gather_scatter_adds_duplicates():
    t = p(np.zeros((3, 2)))
    g = nc.backward(nc.sum_(nc.gather(t, np.array([0, 2, 0]))), [t])[t]
    np.testing.assert_array_equal(g, [[2, 2], [0, 0], [1, 1]])


def test_dropout_eval_identity_and_train_scaling():
    x = p(np.ones((200, 50)))
    assert nc.dropout(x, 0.5, False) is x
    out = nc.dropout(x, 0.5, True, np.random.default_rng(0)).data
    assert set(np.unique(out)) <= {0.0, 2.0}
    assert abs(out.mean() - 1.0) < 0.05


@given(arrays(np.float64, st.integers(1, 20), elements=st.floats(-50, 50)))
def test_sigmoid_symmetry(x):
    s = nc.sigmoid(nc.Tensor(x)).data
    s_neg = nc.sigmoid(nc.Tensor(-x)).data
    np.testing.assert_allclose(s + s_neg, 1.0, atol=1e-15)


@given(arrays(np.float64, (3, 4), elements=st.floats(-30, 30)))
def test_softmax_rows_sum_to_one(x):
    np.testing.assert_allclose(nc.softmax(nc.Tensor(x)).data.sum(-1), 1.0, atol=1e-12)


# -- Adam -----------------------------------------------------------------

def test_adam_first_step_is_lr():
    params = {"w": np.zeros(1)}
    nc.adam_step(params, {"w": np.ones(1)}, nc.AdamState(), lr=1e-3)
    assert abs(params["w"][0] + 1e-3) < 1e-6


def test_adam_two_steps_hand_recurrence():
    params, state = {"w": np.zeros(1)}, nc.AdamState()
    for _ in range(2):
        nc.adam_step(params, {"w": np.ones(1)}, state, lr=1e-3)
    assert abs(params["w"][0] + 2e-3) < 1e-5


def test_adam_zero_grad_keeps_params_counts_step():
    params, state = {"w": np.array([0.5, -1.0])}, nc.AdamState()
    nc.adam_step(params, {"w": np.zeros(2)}, state, lr=1e-3)
    np.testing.assert_array_equal(params["w"], [0.5, -1.0])
    assert state.step == 1


def test_adam_lr_zero_updates_moments_only():
    params, state = {"w": np.array([1.0])}, nc.AdamState()
    nc.adam_step(params, {"w": np.array([2.0])}, state, lr=0.0)
    assert params["w"][0] == 1.0 and state.m["w"][0] != 0.0


def test_adam_rejects_negative_lr():
    with pytest.raises(ValueError):
        nc.adam_step({"w": np.zeros(1)}, {"w": np.zeros(1)}, nc.AdamState(), lr=-1.0)


def test_adam_wrapper_minimizes_quadratic():
    w = p([3.0, -2.0])
    opt = nc.Adam({"w": w}, lr=0.1)
    for _ in range(300):
        opt.step(nc.backward(nc.sum_(nc.square(w)), [w]))
    assert np.abs(w.data).max() < 0.05
