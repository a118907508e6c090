import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from kdop.errors import DimensionError, DomainError
from kdop.numerics import (Adam, AdamState, adam_step, glorot_init, make_rng, matmul, relu,
                           relu_grad, sigmoid, sigmoid_grad, softmax, tanh, tanh_grad)


def triple_loop(a, b):
    out = [[0.0] * len(b[0]) for _ in a]
    for i in range(len(a)):
        for j in range(len(b[0])):
            for k in range(len(b)):
                out[i][j] += a[i][k] * b[k][j]
    return np.array(out)


def test_matmul_identity_and_dot():
    assert np.array_equal(matmul(np.eye(2), [[1, 2], [3, 4]]), [[1, 2], [3, 4]])
    assert matmul([[1, 2]], [[3], [4]]).tolist() == [[11.0]]


def test_matmul_matches_triple_loop(rng):
    a, b = rng.normal(size=(5, 4)), rng.normal(size=(4, 3))
    assert np.max(np.abs(matmul(a, b) - triple_loop(a.tolist(), b.tolist()))) <= 1e-12


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_matmul_associative(rng):
    for _ in range(20):
        n, m, p, q = rng.integers(1, 7, size=4)
        a, b, c = rng.normal(size=(n, m)), rng.normal(size=(m, p)), rng.normal(size=(p, q))
        left, right = matmul(matmul(a, b), c), matmul(a, matmul(b, c))
        assert np.allclose(left, right, rtol=1e-9, atol=1e-12)


def test_softmax_cases():
    assert np.allclose(softmax([0, 0, 0]), [1 / 3] * 3, atol=1e-15)
    assert np.array_equal(softmax([1000.0, 1000.0]), [0.5, 0.5])
    direct = np.array([math.exp(k) for k in (1, 2, 3)])
    assert np.max(np.abs(softmax([1, 2, 3]) - direct / direct.sum())) <= 1e-12
    with pytest.raises(DomainError):
        softmax([])


@given(arrays(np.float64, st.integers(1, 30), elements=st.floats(-1e6, 1e6)))
def test_softmax_is_probability_vector(x):
    p = softmax(x)
    assert np.all(p >= 0) and abs(p.sum() - 1) <= 1e-12
    assert np.all(p[x == x.max()] > 0)


def test_activations():
    assert relu(-3) == 0 and relu(2) == 2
    assert sigmoid(0.0) == 0.5 and tanh(0.0) == 0.0
    assert relu_grad(0.0) == 0 and relu_grad(1.0) == 1
    for x in (-2.0, 0.0, 2.0):
        h = 1e-5
        fd = (sigmoid(x + h) - sigmoid(x - h)) / (2 * h)
        assert abs(sigmoid_grad(x) - fd) / fd <= 1e-6
        assert abs(sigmoid_grad(x) - sigmoid(x) * (1 - sigmoid(x))) <= 1e-15
        fd = (tanh(x + h) - tanh(x - h)) / (2 * h)
        assert abs(tanh_grad(x) - fd) / fd <= 1e-6


def test_sigmoid_extremes_are_finite():
    s = sigmoid(np.array([-800.0, 800.0]))
    assert s[0] == 0.0 and s[1] == 1.0


def test_glorot_init_deterministic_and_bounded():
    a = glorot_init(make_rng(7), 4, 6)
    b = glorot_init(make_rng(7), 4, 6)
    assert a.tobytes() == b.tobytes()
    big = np.stack([glorot_init(make_rng(s), 10, 10) for s in range(1000)])
    assert np.abs(big).max() <= math.sqrt(6 / 20)
    assert abs(glorot_init(make_rng(3), 100, 100).mean()) < 0.02
    with pytest.raises(DomainError):
        glorot_init(make_rng(0), 0, 3)


def test_adam_zero_gradient_leaves_param():
    p = np.array([[1.0, -2.0]])
    st_ = AdamState.like(p)
    new, _ = adam_step(st_, p, np.zeros_like(p))
    assert np.array_equal(new, p)


def test_adam_single_step_hand_formula():
    lr, b1, b2, eps, g = 0.001, 0.9, 0.999, 1e-8, 1.0
    m = (1 - b1) * g
    v = (1 - b2) * g * g
    m_hat = m / (1 - b1)
    v_hat = v / (1 - b2)
    expected = 0.5 - lr * m_hat / (math.sqrt(v_hat) + eps)
    new, st_ = adam_step(AdamState.like(np.array([0.5])), np.array([0.5]), np.array([g]))
    assert abs(new[0] - expected) <= 1e-12
    assert st_.step == 1


def test_adam_shape_mismatch():
    with pytest.raises(DimensionError):
        adam_step(AdamState.like(np.zeros(2)), np.zeros(2), np.zeros(3))


def test_adam_converges_on_square():
    w = np.array([1.0])
    st_ = AdamState.like(w, lr=0.01)
    history = []
    for _ in range(100):
        w, _ = adam_step(st_, w, 2 * w)
        history.append(abs(w[0]))
    tail = history[5:]
    assert all(b < a for a, b in zip(tail, tail[1:]))


def test_adam_dict_optimizer_matches_single():
    params = {"a": np.array([1.0, 2.0])}
    opt = Adam(lr=0.01)
    opt.update(params, {"a": np.array([0.5, -0.5])})
    ref, _ = adam_step(AdamState.like(np.zeros(2), lr=0.01), np.array([1.0, 2.0]),
                       np.array([0.5, -0.5]))
    assert np.array_equal(params["a"], ref)


def test_composed_computation_bit_reproducible():
    def run(seed):
        r = make_rng(seed)
        w = glorot_init(r, 5, 5)
        x = r.normal(size=(3, 5))
        return softmax(matmul(x, w), axis=1)
    assert run(11).tobytes() == run(11).tobytes()
