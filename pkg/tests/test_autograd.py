import numpy as np
import pytest

from recoat import autograd as ag
from recoat.autograd import NonFiniteError, Tensor
from recoat.gradcheck import analytic_gradients, grad_check


def leaf(x):
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=True)


def test_sum_gradient_is_ones():
    x = leaf(np.arange(6.0).reshape(2, 3))
    ag.backward(ag.tsum(x))
    np.testing.assert_array_equal(x.grad, np.ones((2, 3)))


def test_square_gradient():
    x = leaf(3.0)
    ag.backward(x * x)
    assert x.grad == 6.0


def test_non_scalar_loss_rejected():
    with pytest.raises(ValueError):
        ag.backward(leaf(np.ones(3)) * 2.0)


def test_shared_subexpression_accumulates():
    x = leaf(2.0)
    y = x * x
    ag.backward(y * y + y)  # x^4 + x^2
    assert x.grad == pytest.approx(4 * 8 + 2 * 2)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nan_is_an_error():
    with pytest.raises(NonFiniteError):
        ag.log(leaf(-1.0))
    with pytest.raises(NonFiniteError):
        leaf(1.0) / 0.0


def test_no_grad_builds_no_graph():
    x = leaf(2.0)
    with ag.no_grad():
        y = x * 3.0
    assert not y.requires_grad


def test_broadcast_gradient_reduces():
    a, b = leaf(np.ones((4, 3))), leaf(np.ones(3))
    ag.backward(ag.tsum((a + b) * 2.0))
    np.testing.assert_array_equal(b.grad, np.full(3, 8.0))


def test_softmax_rows_sum_to_one(rng):
    s = ag.softmax(Tensor(rng.normal(size=(5, 7)) * 50), axis=-1)
    np.testing.assert_allclose(s.data.sum(axis=-1), 1.0, atol=1e-12)


def test_tmax_ties_route_to_first():
    x = leaf([1.0, 3.0, 3.0])
    ag.backward(ag.tmax(x, axis=0))
    np.testing.assert_array_equal(x.grad, [0, 1, 0])


def test_scatter_rows(rng):
    x = leaf(rng.normal(size=(3, 2)))
    out = ag.scatter_rows(x, np.array([4, 0, 2]), 5)
    np.testing.assert_array_equal(out.data[[1, 3]], 0)
    np.testing.assert_array_equal(out.data[4], x.data[0])
    ag.backward(ag.tsum(out * Tensor(np.arange(10.0).reshape(5, 2))))
    np.testing.assert_array_equal(x.grad, [[8, 9], [0, 1], [4, 5]])


OPS = {
    "add": (lambda p: ag.tsum(p["a"] + p["b"] * p["a"]), {"a": (3, 4), "b": (4,)}),
    "sub_div": (lambda p: ag.tsum((p["a"] - p["b"]) / (ag.exp(p["b"]) + 1.0)), {"a": (2, 5), "b": (2, 5)}),
    "exp_log": (lambda p: ag.tsum(ag.log(ag.exp(p["a"]) + 2.0)), {"a": (6,)}),
    "sqrt": (lambda p: ag.tsum(ag.sqrt(p["a"] * p["a"] + 1.0)), {"a": (6,)}),
    "tanh_sigmoid": (lambda p: ag.tsum(ag.tanh(p["a"]) * ag.sigmoid(p["b"])), {"a": (3, 2), "b": (3, 2)}),
    "elu": (lambda p: ag.tsum(ag.elu(p["a"]) * p["b"]), {"a": (10,), "b": (10,)}),
    "clamp": (lambda p: ag.tsum(ag.clamp_min(p["a"], 0.1) * p["b"]), {"a": (8,), "b": (8,)}),
    "matmul": (lambda p: ag.tsum(ag.matmul(p["a"], p["b"]) ** 2), {"a": (2, 3, 4), "b": (4, 5)}),
    "matvec": (lambda p: ag.tsum(ag.matmul(p["a"], p["b"])), {"a": (3, 4), "b": (4,)}),
    "reshape_transpose": (lambda p: ag.tsum(ag.transpose(ag.reshape(p["a"], (3, 4)), (1, 0)) * p["b"]),
                          {"a": (12,), "b": (4, 3)}),
    "getitem": (lambda p: ag.tsum(p["a"][1:, ::2] * 3.0) + ag.tsum(p["a"][np.array([0, 0, 2]), 1]),
                {"a": (3, 4)}),
    "concat_stack": (lambda p: ag.tsum(ag.concat([p["a"], p["b"]], axis=0) * ag.reshape(ag.stack([p["b"], p["a"]], 0), (4, 3))),
                     {"a": (2, 3), "b": (2, 3)}),
    "mean": (lambda p: ag.tsum(ag.mean(p["a"], axis=(0, 2)) ** 3), {"a": (2, 3, 4)}),
    "tmax": (lambda p: ag.tsum(ag.tmax(p["a"], axis=1)), {"a": (4, 5)}),
    "softmax": (lambda p: ag.tsum(ag.softmax(p["a"], axis=-1) * p["b"]), {"a": (3, 6), "b": (3, 6)}),
    "norm": (lambda p: ag.tsum(ag.norm(p["a"], axis=-1)), {"a": (5, 2)}),
    "detach": (lambda p: ag.tsum(ag.detach(p["a"]) * p["b"] + p["a"]), {"a": (4,), "b": (4,)}),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_op_gradients(name, rng):
    fn, shapes = OPS[name]
    params = {k: rng.normal(size=s) for k, s in shapes.items()}
    report = grad_check(fn, params, tolerance=1e-4, h=1e-5, freeze_detached=True)
    assert report.ok, str(report)


def test_detach_tape_replays_base_values(rng):
    params = {"a": rng.normal(size=4), "b": rng.normal(size=4)}
    fn = OPS["detach"][0]
    assert grad_check(fn, params, freeze_detached=True).ok
    assert not grad_check(fn, params).ok  # the stop-gradient path leaks into the estimate


def test_detach_blocks_gradient():
    a = leaf([1.0, 2.0])
    ag.backward(ag.tsum(ag.detach(a) * 3.0 + a))
    np.testing.assert_array_equal(a.grad, [1.0, 1.0])


def test_gradcheck_linear_is_exact(rng):
    w = rng.normal(size=(4, 3))
    report = grad_check(lambda p: ag.tsum(ag.matmul(p["x"], Tensor(w))), {"x": rng.normal(size=(2, 4))})
    assert report.max_error < 1e-8


def test_gradcheck_flags_corrupted_gradient(rng):
    fn = lambda p: ag.tsum(p["x"] * p["x"])  # noqa: E731
    params = {"x": rng.normal(size=5)}
    grads = analytic_gradients(fn, params)
    grads["x"] = grads["x"] * 1.01
    report = grad_check(fn, params, analytic=grads)
    assert not report.ok and report.failures == ["x"]
