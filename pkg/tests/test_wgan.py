import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pgan import tensor as T
from pgan.wgan import LossReport, critic_loss, generator_loss, gradient_penalty


def linear_critic(a):
    at = T.Tensor(np.asarray(a, dtype=np.float64))

    def D(x):
        x = T.as_tensor(x)
        return T.sum_(x * at, axis=tuple(range(1, x.ndim)))

    return D


def table_critic(scores_real, scores_fake, real):
    """Critic returning fixed scores, keyed on whether the input is the real batch."""
    def D(x):
        x = T.as_tensor(x)
        vals = scores_real if np.array_equal(x.data, real) else scores_fake
        # depends on x with zero slope so the tape is connected
        return T.add(T.mul(T.sum_(x, axis=1), 0.0), T.Tensor(np.asarray(vals, dtype=np.float64)))

    return D


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_unit_gradient_critic_has_zero_penalty(seed):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((2, 2, 3))
    a /= np.linalg.norm(a)
    real, fake = rng.standard_normal((4, 2, 2, 3)), rng.standard_normal((4, 2, 2, 3))
    gp = gradient_penalty(linear_critic(a), real, fake, 10.0, rng=rng).item()
    assert 0.0 <= gp < 1e-10


@pytest.mark.parametrize("c", [0.5, 1.0, 3.0])
def test_constant_gradient_penalty(c, rng):
    real, fake = rng.standard_normal((5, 4)), rng.standard_normal((5, 4))
    gp = gradient_penalty(linear_critic(np.full(4, c)), real, fake, 10.0, rng=rng).item()
    expected = 10.0 * (abs(c) * math.sqrt(4) - 1.0) ** 2
    assert gp == pytest.approx(expected, abs=1e-6)


def test_doubled_sum_critic_single_input(rng):
    # D(x) = 2 * sum(x) on one input: gradient norm 2, penalty 10 * (2 - 1)^2
    real, fake = rng.standard_normal((3, 1)), rng.standard_normal((3, 1))
    gp = gradient_penalty(linear_critic(np.array([2.0])), real, fake, 10.0, rng=rng).item()
    assert gp == pytest.approx(10.0, abs=1e-6)


def test_penalty_parameter_gradient_matches_closed_form(rng):
    # d/dc of lam * (|c| sqrt(d) - 1)^2 = 2 lam sqrt(d) (c sqrt(d) - 1) for c > 0
    c = T.Tensor(np.array(3.0), requires_grad=True)

    def D(x):
        return T.mul(T.sum_(T.as_tensor(x), axis=1), c)

    gp = gradient_penalty(D, rng.standard_normal((3, 4)), rng.standard_normal((3, 4)), 10.0, rng=rng)
    (g,) = T.grad(gp, [c])
    assert g.item() == pytest.approx(2 * 10.0 * 2.0 * (3.0 * 2.0 - 1.0), rel=1e-10)


def test_penalty_errors(rng):
    D = linear_critic(np.ones(4))
    with pytest.raises(ValueError):
        gradient_penalty(D, np.zeros((2, 4)), np.zeros((3, 4)), rng=rng)
    with pytest.raises(ValueError):
        gradient_penalty(D, np.zeros((2, 4)), np.zeros((2, 4)), lam=-1.0, rng=rng)


def test_penalty_uses_given_interpolation(rng):
    # quadratic critic: grad at xhat is 2 xhat, so u fully determines the value
    def D(x):
        x = T.as_tensor(x)
        return T.sum_(x * x, axis=1)

    real, fake = rng.standard_normal((3, 2)), rng.standard_normal((3, 2))
    u = np.array([0.0, 0.5, 1.0])
    xhat = u[:, None] * real + (1 - u[:, None]) * fake
    expected = 10.0 * np.mean((np.linalg.norm(2 * xhat, axis=1) - 1.0) ** 2)
    assert gradient_penalty(D, real, fake, 10.0, u=u).item() == pytest.approx(expected, rel=1e-10)


def test_critic_loss_basic_example():
    real, fake = np.array([[1.0]]), np.array([[0.0]])
    loss, rep = critic_loss(table_critic([1.0], [0.0], real), real, fake, lam=0.0, drift=0.0)
    assert loss.item() == -1.0
    assert rep.wasserstein_estimate == 1.0
    assert rep.gradient_penalty == 0.0 and rep.drift_term == 0.0


def test_critic_loss_composition(rng):
    real, fake = np.array([[1.0, 0.0], [0.0, 1.0]]), np.array([[5.0, 5.0], [6.0, 6.0]])
    D = table_critic([2.0, 0.0], [1.0, 1.0], real)
    u = np.array([0.3, 0.7])
    gp = gradient_penalty(D, real, fake, 10.0, u=u).item()
    loss, rep = critic_loss(D, real, fake, lam=10.0, drift=1e-3, u=u)
    # mean fake - mean real + gp + drift * mean(real^2) = 1 - 1 + gp + 1e-3 * 2
    assert rep.critic_loss == pytest.approx(1.0 - 1.0 + gp + 1e-3 * 2.0, abs=1e-12)
    assert rep.drift_term == pytest.approx(2e-3, abs=1e-15)
    assert rep.gradient_penalty >= 0.0


def test_wasserstein_symmetry(rng):
    D = linear_critic(rng.standard_normal(6))
    a, b = rng.standard_normal((4, 6)), rng.standard_normal((4, 6))
    _, r1 = critic_loss(D, a, b, rng=np.random.default_rng(0))
    _, r2 = critic_loss(D, b, a, rng=np.random.default_rng(0))
    assert r1.wasserstein_estimate == -r2.wasserstein_estimate
    _, same = critic_loss(D, a, a, rng=rng)
    assert same.wasserstein_estimate == 0.0


def test_critic_loss_rejects_attached_fake(rng):
    fake = T.Tensor(rng.standard_normal((2, 3)), requires_grad=True)
    with pytest.raises(ValueError):
        critic_loss(linear_critic(np.ones(3)), rng.standard_normal((2, 3)), fake, rng=rng)


def test_generator_loss_examples():
    assert generator_loss(lambda x: T.as_tensor(x) * 0.5, np.array([1.0])).item() == -0.5
    w = T.Tensor(np.array([[0.3], [-0.2]]), requires_grad=True)
    fake = T.matmul(T.Tensor(np.ones((3, 2))), w)
    loss = generator_loss(lambda x: T.mul(T.sum_(x, axis=1), 0.0), fake)
    (g,) = T.grad(loss, [w])
    assert loss.item() == 0.0
    assert np.all(g.data == 0.0)


def test_generator_loss_monotone_in_fake_score(rng):
    D = linear_critic(np.ones(3))
    fakes = [rng.standard_normal((4, 3)) + shift for shift in (-1.0, 0.0, 1.0)]
    losses = [generator_loss(D, f).item() for f in fakes]
    means = [D(f).data.mean() for f in fakes]
    assert np.argsort(losses).tolist() == np.argsort(means)[::-1].tolist()


def test_loss_report_names_bad_field():
    rep = LossReport(0.0, 0.0, 0.0, float("nan"), 0.0)
    with pytest.raises(FloatingPointError, match="gradient_penalty"):
        rep.check_finite()


def test_tiny_critic_parameter_gradients(rng):
    # 4 -> 8 -> 1 leaky MLP, 49 parameters, double precision
    params = [
        T.Tensor(rng.standard_normal((4, 8)) * 0.7, requires_grad=True),
        T.Tensor(rng.standard_normal(8) * 0.1, requires_grad=True),
        T.Tensor(rng.standard_normal((8, 1)) * 0.7, requires_grad=True),
        T.Tensor(rng.standard_normal(1) * 0.1, requires_grad=True),
    ]
    w1, b1, w2, b2 = params

    def D(x):
        h = T.leaky_relu(T.add(T.matmul(T.as_tensor(x), w1), b1), 0.2)
        return T.reshape(T.add(T.matmul(h, w2), b2), (-1,))

    real, fake = rng.standard_normal((6, 4)), rng.standard_normal((6, 4))
    u = rng.random(6)

    def f():
        return critic_loss(D, real, fake, lam=10.0, drift=1e-3, u=u)[0]

    errs = []
    trials = 0
    while len(errs) < 30 and trials < 100:
        trials += 1
        err, valid = T.directional_check(f, params, rng, step=1e-6)
        if valid:
            errs.append(err)
    assert len(errs) == 30
    assert max(errs) < 1e-4
