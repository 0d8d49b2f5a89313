import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from madnet import tensor as T
from madnet.gradcheck import grad_check, numerical_grad
from madnet.tensor import ContractError, Tensor, no_grad

from conftest import SEEDS, leaf

TOL = 1e-4


def check(fn, inputs, seed):
    rng = np.random.default_rng(seed + 100)
    w = None

    def f(*xs):
        nonlocal w
        out = fn(*xs)
        if w is None:
            w = Tensor(rng.standard_normal(out.shape))
        return T.tsum(T.mul(out, w))

    return grad_check(f, inputs)


def away_from_zero(rng, *shape):
    x = rng.standard_normal(shape)
    return Tensor(np.where(x >= 0, x + 0.2, x - 0.2), requires_grad=True)


UNARY = {
    "neg": T.neg,
    "relu": T.relu,
    "gelu": T.gelu,
    "sigmoid": T.sigmoid,
    "square": T.square,
    "scale": lambda a: T.scale(a, -2.5),
    "softmax": lambda a: T.softmax(a, axis=-1),
    "sum_axis": lambda a: T.tsum(a, axis=1, keepdims=True),
    "mean_axis": lambda a: T.mean(a, axis=0),
    "reshape": lambda a: T.reshape(a, (4, 3)),
    "transpose": lambda a: T.transpose(a, (1, 0)),
    "index_slice": lambda a: T.index(a, (slice(1, 3), slice(None, None, 2))),
    "index_fancy": lambda a: T.index(a, (np.array([0, 0, 2]), slice(None))),
    "l2_normalize": lambda a: T.l2_normalize(a, axis=-1),
    "split": lambda a: T.split(a, [1, 3], axis=1)[1],
}


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_gradients(name, seed):
    rng = np.random.default_rng(seed)
    x = away_from_zero(rng, 3, 4)
    assert check(UNARY[name], [x], seed) <= TOL


@pytest.mark.parametrize("seed", SEEDS)
def test_positive_domain_gradients(seed):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.uniform(0.5, 2.0, (3, 4)), requires_grad=True)
    assert check(T.sqrt, [x], seed) <= TOL
    assert check(T.reciprocal, [x], seed) <= TOL


BINARY = {
    "add": T.add,
    "sub": T.sub,
    "mul": T.mul,
    "hypot": T.hypot,
    "concat": lambda a, b: T.concat([a, b], axis=1),
}


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("name", sorted(BINARY))
def test_binary_gradients(name, seed):
    rng = np.random.default_rng(seed)
    a, b = away_from_zero(rng, 3, 4), away_from_zero(rng, 3, 4)
    assert check(BINARY[name], [a, b], seed) <= TOL


@pytest.mark.parametrize("seed", SEEDS)
def test_broadcasting_gradients(seed):
    rng = np.random.default_rng(seed)
    a = leaf(rng, 2, 3, 4)
    b = leaf(rng, 1, 3, 1)
    assert check(T.bmul, [a, b], seed) <= TOL
    assert check(T.badd, [a, b], seed) <= TOL


@pytest.mark.parametrize("seed", SEEDS)
def test_matmul_gradient(seed):
    rng = np.random.default_rng(seed)
    a, b = leaf(rng, 2, 3, 4), leaf(rng, 4, 5)
    assert check(T.matmul, [a, b], seed) <= TOL


@pytest.mark.parametrize("seed", SEEDS)
def test_layer_norm_gradient(seed):
    rng = np.random.default_rng(seed)
    x = leaf(rng, 2, 4, 3, 3)
    gamma = Tensor(1 + 0.1 * rng.standard_normal(4), requires_grad=True)
    beta = leaf(rng, 4)
    assert check(lambda x, g, b: T.layer_norm(x, g, b), [x, gamma, beta], seed) <= TOL


def test_layer_norm_normalises_channels(rng):
    x = Tensor(rng.standard_normal((2, 5, 3, 3)) * 4 + 2)
    y = T.layer_norm(x, Tensor(np.ones(5)), Tensor(np.zeros(5)), eps=0.0).data
    np.testing.assert_allclose(y.mean(axis=1), 0, atol=1e-12)
    np.testing.assert_allclose(y.var(axis=1), 1, atol=1e-12)


def test_forward_values_match_numpy(rng):
    a, b = rng.standard_normal((3, 4)), rng.standard_normal((4, 2))
    np.testing.assert_allclose(T.matmul(Tensor(a), Tensor(b)).data, a @ b)
    s = T.softmax(Tensor(a), axis=-1).data
    np.testing.assert_allclose(s, np.exp(a) / np.exp(a).sum(-1, keepdims=True))
    np.testing.assert_allclose(T.hypot(Tensor(a), Tensor(a)).data, np.sqrt(2) * np.abs(a))


def test_softmax_large_logits_finite():
    s = T.softmax(Tensor(np.array([[1000.0, 0.0, -1000.0]])), axis=-1).data
    assert np.all(np.isfinite(s)) and s[0, 0] == pytest.approx(1.0)


def test_relu_subgradient_zero_at_kink():
    x = Tensor(np.zeros(3), requires_grad=True)
    T.tsum(T.relu(x)).backward()
    np.testing.assert_array_equal(x.grad, 0.0)


def test_hypot_gradient_at_origin_is_zero():
    a = Tensor(np.zeros(2), requires_grad=True)
    b = Tensor(np.zeros(2), requires_grad=True)
    T.tsum(T.hypot(a, b)).backward()
    np.testing.assert_array_equal(a.grad, 0.0)
    np.testing.assert_array_equal(b.grad, 0.0)


def test_gradient_accumulates_across_uses():
    x = Tensor(np.array([3.0]), requires_grad=True)
    T.tsum(T.add(T.mul(x, x), x)).backward()
    assert x.grad[0] == pytest.approx(7.0)
    T.tsum(x).backward()
    assert x.grad[0] == pytest.approx(8.0)


def test_deep_chain_no_recursion_limit():
    x = Tensor(np.ones(1), requires_grad=True)
    y = x
    for _ in range(5000):
        y = T.add(y, 1.0)
    T.tsum(y).backward()
    assert x.grad[0] == 1.0


def test_backward_rejects_non_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ContractError, match="scalar"):
        T.scale(x, 2.0).backward()


def test_shape_mismatch_raises():
    with pytest.raises(ContractError):
        T.add(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 2))))
    with pytest.raises(ContractError, match="axis"):
        T.concat([Tensor(np.ones((1, 2, 3))), Tensor(np.ones((1, 2, 4)))], axis=1)


def test_no_grad_builds_no_graph():
    x = Tensor(np.ones(2), requires_grad=True)
    with no_grad():
        y = T.mul(x, x)
    assert not y.requires_grad and y._parents == ()
    assert T.is_grad_enabled()


def test_no_grad_is_thread_local():
    seen = []
    with no_grad():
        t = threading.Thread(target=lambda: seen.append(T.is_grad_enabled()))
        t.start()
        t.join()
    assert seen == [True]


def test_operator_sugar():
    x = Tensor(np.array([2.0]))
    assert (x + 1).item() == 3.0
    assert (1 - x).item() == -1.0
    assert (x * x).item() == 4.0
    assert (x / 4).item() == 0.5
    with pytest.raises(ContractError):
        x / x


def test_gradcheck_rejects_bad_inputs():
    x = Tensor(np.ones(2, dtype=np.float32), requires_grad=True)
    with pytest.raises(ContractError):
        grad_check(lambda a: T.tsum(a), [x])
    y = Tensor(np.ones(2), requires_grad=True)
    with pytest.raises(ContractError):
        grad_check(lambda a: T.tsum(a), [y], h=1e-2)


def test_numerical_grad_of_known_function():
    x = Tensor(np.array([1.0, -2.0]))
    (g,) = numerical_grad(lambda a: T.tsum(T.mul(a, T.mul(a, a))), [x])
    np.testing.assert_allclose(g, 3 * x.data**2, rtol=1e-8)


shapes = hnp.array_shapes(min_dims=1, max_dims=3, min_side=1, max_side=4)
finite = st.floats(-10, 10, allow_nan=False)


@settings(max_examples=40, deadline=None)
@given(hnp.arrays(np.float64, shapes, elements=finite))
def test_sum_gradient_is_ones(a):
    x = Tensor(a, requires_grad=True)
    T.tsum(x).backward()
    np.testing.assert_array_equal(x.grad, np.ones_like(a))


@settings(max_examples=40, deadline=None)
@given(st.data())
def test_unbroadcast_restores_shape(data):
    shape = data.draw(shapes)
    mask = data.draw(st.lists(st.booleans(), min_size=len(shape), max_size=len(shape)))
    small = tuple(1 if m else s for s, m in zip(shape, mask))
    g = np.ones(shape)
    out = T.unbroadcast(g, small)
    assert out.shape == small
    assert out.sum() == pytest.approx(g.sum())


@settings(max_examples=30, deadline=None)
@given(hnp.arrays(np.float64, (2, 5), elements=finite))
def test_softmax_rows_sum_to_one(a):
    s = T.softmax(Tensor(a), axis=-1).data
    np.testing.assert_allclose(s.sum(-1), 1.0, rtol=1e-12)
