import math

import numpy as np
import pytest

from pgan import tensor as T
from pgan.optim import Adam, adam_step


def scalar_adam(theta, grads, lr, b1, b2, eps):
    """Textbook scalar recurrence, one element at a time."""
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        theta = theta - lr * m_hat / (math.sqrt(v_hat) + eps)
    return theta


def _params(arr):
    return {"w": T.Tensor(np.array(arr, dtype=np.float64))}


@pytest.mark.parametrize("betas", [(0.0, 0.99), (0.9, 0.999)])
def test_matches_scalar_oracle(betas, rng):
    theta0 = rng.standard_normal(7)
    grads = rng.standard_normal((5, 7))
    params = _params(theta0)
    opt = Adam(params, lr=1e-2, betas=betas, eps=1e-8)
    for g in grads:
        opt.step({"w": g})
    expected = [scalar_adam(theta0[i], grads[:, i], 1e-2, *betas, 1e-8) for i in range(7)]
    np.testing.assert_allclose(params["w"].data, expected, rtol=0, atol=1e-12)


def test_two_constant_steps(rng):
    params = _params([0.5, -1.0])
    opt = Adam(params)
    g = np.array([0.3, -2.0])
    opt.step({"w": g})
    opt.step({"w": g})
    expected = [scalar_adam(0.5, [0.3, 0.3], 1e-3, 0.0, 0.99, 1e-8),
                scalar_adam(-1.0, [-2.0, -2.0], 1e-3, 0.0, 0.99, 1e-8)]
    np.testing.assert_allclose(params["w"].data, expected, rtol=0, atol=1e-12)


def test_first_step_is_sign_times_lr():
    params = _params([0.0, 0.0, 0.0])
    Adam(params, lr=1e-3, eps=0.0).step({"w": np.array([5.0, -0.01, 3e4])})
    np.testing.assert_allclose(params["w"].data, [-1e-3, 1e-3, -1e-3], rtol=1e-12)


def test_zero_gradient_keeps_params_and_counts_step():
    params = _params([1.0, 2.0])
    opt = Adam(params)
    opt.step({"w": np.zeros(2)})
    assert np.array_equal(params["w"].data, [1.0, 2.0])
    assert opt.steps["w"] == 1


def test_non_finite_gradient_rejected_without_partial_commit():
    params = {"a": T.Tensor(np.ones(2)), "b": T.Tensor(np.ones(2))}
    opt = Adam(params)
    with pytest.raises(FloatingPointError, match="b"):
        opt.step({"a": np.ones(2), "b": np.array([np.nan, 1.0])})
    assert np.array_equal(params["a"].data, np.ones(2))
    assert opt.steps["a"] == 0


def test_attach_keeps_surviving_moments():
    params = {"a": T.Tensor(np.ones(2)), "old": T.Tensor(np.ones(1))}
    opt = Adam(params)
    opt.step({"a": np.ones(2), "old": np.ones(1)})
    m_a = opt.m["a"].copy()
    opt.attach({"a": params["a"], "new": T.Tensor(np.ones(3))})
    assert np.array_equal(opt.m["a"], m_a) and opt.steps["a"] == 1
    assert "old" not in opt.m
    assert np.all(opt.m["new"] == 0) and opt.steps["new"] == 0


def test_functional_form(rng):
    params = _params(rng.standard_normal(3))
    start = params["w"].data.copy()
    g = rng.standard_normal(3)
    _, state = adam_step(params, {"w": g}, None, lr=0.1)
    _, state = adam_step(params, {"w": g}, state, lr=0.1)
    expected = [scalar_adam(start[i], [g[i], g[i]], 0.1, 0.0, 0.99, 1e-8) for i in range(3)]
    np.testing.assert_allclose(params["w"].data, expected, atol=1e-12)
    assert state.steps["w"] == 2


def test_state_dict_roundtrip(rng):
    params = _params(rng.standard_normal(4))
    opt = Adam(params)
    opt.step({"w": rng.standard_normal(4)})
    other = Adam(_params(np.zeros(4)))
    other.load_state_dict(opt.state_dict())
    assert np.array_equal(other.m["w"], opt.m["w"]) and np.array_equal(other.v["w"], opt.v["w"])
    assert other.steps["w"] == 1
