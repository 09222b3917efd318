import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from diptv.optim import AdamState, adam_step


def _scalar_adam(theta, grad_fn, steps, lr=0.01, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    for t in range(1, steps + 1):
        g = grad_fn(theta)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        theta = theta - lr * m_hat / (math.sqrt(v_hat) + eps)
    return theta


def test_single_step():
    state, params = adam_step(AdamState(), {"theta": np.array([1.0])}, {"theta": np.array([2.0])})
    assert state.t == 1
    assert_allclose(params["theta"], [0.99], rtol=1e-9)


def test_zero_gradient_keeps_parameters():
    theta = np.random.default_rng(0).standard_normal((3, 4))
    state, params = adam_step(AdamState(), {"w": theta}, {"w": np.zeros((3, 4))})
    assert_array_equal(params["w"], theta)
    assert state.t == 1


def test_quadratic_matches_scalar_reference():
    state, theta = AdamState(), {"theta": np.array([1.0])}
    for _ in range(200):
        state, theta = adam_step(state, theta, {"theta": 2 * theta["theta"]})
    expected = _scalar_adam(1.0, lambda x: 2 * x, 200)
    assert abs(theta["theta"][0] - expected) <= 1e-12
    assert state.t == 200


def test_constant_gradient_bounded_step():
    rng = np.random.default_rng(1)
    for c in (1e-3, 1.0, 1e3):
        g = c * rng.standard_normal(10)
        state, theta = AdamState(lr=0.05), {"x": np.zeros(10)}
        for _ in range(30):
            prev = theta["x"]
            state, theta = adam_step(state, theta, {"x": g})
            assert (np.abs(theta["x"] - prev) <= 0.05 * (1 + 1e-12)).all()


def test_gradient_scale_invariance():
    rng = np.random.default_rng(2)
    grads = rng.standard_normal((40, 6))
    small, large = AdamState(), AdamState()
    a = b = {"x": np.zeros(6)}
    for g in grads:
        small, a = adam_step(small, a, {"x": g})
        large, b = adam_step(large, b, {"x": 1000.0 * g})
    assert_allclose(a["x"], b["x"], rtol=1e-6, atol=1e-7)


def test_state_is_not_mutated():
    state = AdamState()
    adam_step(state, {"x": np.ones(2)}, {"x": np.ones(2)})
    assert state.t == 0
    assert state.m == {} and state.v == {}


def test_dtype_preserved():
    _, params = adam_step(
        AdamState(), {"x": np.ones(3, dtype=np.float32)}, {"x": np.ones(3, dtype=np.float64)}
    )
    assert params["x"].dtype == np.float32


def test_errors():
    with pytest.raises(ValueError):
        adam_step(AdamState(), {"x": np.ones(2), "y": np.ones(2)}, {"x": np.ones(2)})
    for kwargs in ({"lr": 0.0}, {"beta1": 1.0}, {"beta2": -0.1}, {"eps": 0.0}):
        with pytest.raises(ValueError):
            AdamState(**kwargs)


def test_against_torch():
    torch = pytest.importorskip("torch")
    rng = np.random.default_rng(3)
    target = rng.standard_normal(5)
    theta = {"x": rng.standard_normal(5)}
    t_theta = torch.tensor(theta["x"], requires_grad=True)
    optimizer = torch.optim.Adam([t_theta], lr=0.01, betas=(0.9, 0.999), eps=1e-8)
    state = AdamState()
    for _ in range(20):
        state, theta = adam_step(state, theta, {"x": 2 * (theta["x"] - target)})
        optimizer.zero_grad()
        ((t_theta - torch.tensor(target)) ** 2).sum().backward()
        optimizer.step()
    assert_allclose(theta["x"], t_theta.detach().numpy(), rtol=1e-10, atol=1e-12)
