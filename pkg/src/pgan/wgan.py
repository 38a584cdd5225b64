"""Wasserstein critic and generator objectives with gradient penalty."""

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T

LAMBDA_GP = 10.0
DRIFT = 1e-3
# keeps the gradient norm differentiable when a critic is locally flat
NORM_EPS = 1e-12


@dataclass
class LossReport:
    critic_loss: float
    generator_loss: float
    wasserstein_estimate: float
    gradient_penalty: float
    drift_term: float

    def check_finite(self):
        for field in ("critic_loss", "generator_loss", "wasserstein_estimate", "gradient_penalty", "drift_term"):
            if not math.isfinite(getattr(self, field)):
                raise FloatingPointError(f"non-finite {field}: {getattr(self, field)}")


def gradient_penalty(D, real, fake, lam=LAMBDA_GP, rng=None, u=None):
    """``lam * mean((||grad_xhat D(xhat)|| - 1)^2)`` on random interpolates.

    One ``u ~ U(0, 1)`` per sample pair is drawn from ``rng`` unless ``u`` is
    given. The result stays on the tape, differentiable w.r.t. D's parameters.
    """
    real, fake = T.as_tensor(real), T.as_tensor(fake)
    if real.shape != fake.shape:
        raise ValueError(f"real/fake shape mismatch: {real.shape} vs {fake.shape}")
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    n = real.shape[0]
    if u is None:
        u = rng.random(n)
    u = np.asarray(u, dtype=real.dtype).reshape((n,) + (1,) * (real.ndim - 1))
    outer = T.is_grad_enabled()
    with T.enable_grad(True):
        # the input gradient is needed even when the caller only wants a value
        xhat = T.Tensor(u * real.data + (1 - u) * fake.data, requires_grad=True)
        score = D(xhat)
        (g,) = T.grad(T.sum_(score), [xhat], create_graph=outer)
    if not np.isfinite(g.data).all():
        raise FloatingPointError("gradient penalty: non-finite critic input gradient")
    axes = tuple(range(1, g.ndim))
    norm = T.sqrt(T.add(T.sum_(T.mul(g, g), axis=axes), NORM_EPS))
    dev = T.sub(norm, 1.0)
    return T.mul(T.mean(T.mul(dev, dev)), lam)


def critic_loss(D, real, fake, lam=LAMBDA_GP, drift=DRIFT, rng=None, u=None):
    """Critic objective; returns ``(loss_tensor, LossReport)``.

    ``fake`` must already be detached from the generator.
    """
    real, fake = T.as_tensor(real), T.as_tensor(fake)
    if fake.requires_grad:
        raise ValueError("fake batch must be detached from the generator")
    d_real = D(real)
    d_fake = D(fake)
    mean_real, mean_fake = T.mean(d_real), T.mean(d_fake)
    loss = T.sub(mean_fake, mean_real)
    gp = gradient_penalty(D, real, fake, lam, rng=rng, u=u) if lam > 0 else None
    if gp is not None:
        loss = T.add(loss, gp)
    drift_t = None
    if drift:
        drift_t = T.mul(T.mean(T.mul(d_real, d_real)), drift)
        loss = T.add(loss, drift_t)
    report = LossReport(
        critic_loss=loss.item(),
        generator_loss=-mean_fake.item(),
        wasserstein_estimate=mean_real.item() - mean_fake.item(),
        gradient_penalty=gp.item() if gp is not None else 0.0,
        drift_term=drift_t.item() if drift_t is not None else 0.0,
    )
    return loss, report


def generator_loss(D, fake):
    """``-mean(D(fake))``; ``fake`` carries gradients back to the generator."""
    return T.neg(T.mean(D(fake)))
