"""Built-in self checks run by ``pgan verify``."""

import json
import math
import time
from dataclasses import asdict, dataclass

import numpy as np

from . import _kernels
from . import layers
from . import tensor as T
from .networks import NetworkPlan, PhaseState, build_discriminator, build_generator, grow
from .optim import Adam
from .wgan import gradient_penalty

# (trace label, shape without batch) rows of the architecture table
GENERATOR_ROWS = [
    ("latent", (1, 1, 256)),
    ("block0.conv0", (4, 4, 256)),
    ("block0.conv1", (4, 4, 256)),
    ("block1.conv0", (8, 8, 128)),
    ("block1.conv1", (8, 8, 128)),
    ("block2.conv0", (16, 16, 64)),
    ("block2.conv1", (16, 16, 64)),
    ("block3.conv0", (32, 32, 32)),
    ("block3.conv1", (32, 32, 32)),
    ("block4.conv0", (64, 64, 16)),
    ("block4.conv1", (64, 64, 16)),
    ("torgb4", (64, 64, 3)),
]
DISCRIMINATOR_ROWS = [
    ("input", (64, 64, 3)),
    ("fromrgb4", (64, 64, 16)),
    ("block4.conv0", (64, 64, 16)),
    ("block4.conv1", (64, 64, 32)),
    ("block3.conv0", (32, 32, 32)),
    ("block3.conv1", (32, 32, 64)),
    ("block2.conv0", (16, 16, 64)),
    ("block2.conv1", (16, 16, 128)),
    ("block1.conv0", (8, 8, 128)),
    ("block1.conv1", (8, 8, 256)),
    ("block0.conv0", (4, 4, 256)),
    ("block0.conv1", (1, 1, 256)),
    ("block0.score", (1, 1, 1)),
]


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float


def _grad_ok(f, x, tol=1e-4):
    rep = T.grad_check(f, x, tolerance=tol)
    return rep.passed, f"max rel err {rep.max_rel_error:.2e} over {rep.checked} entries"


def check_grad_elementwise(rng, fault):
    x = rng.uniform(0.5, 2.0, 6)
    return _grad_ok(lambda t: T.sum_(T.div(T.mul(T.sqrt(t), t + 1.0), t * t + 0.5)), x)


def check_grad_conv2d(rng, fault):
    w = T.Tensor(rng.standard_normal((3, 3, 2, 3)))
    x = rng.standard_normal((2, 4, 4, 2))
    r = rng.standard_normal((2, 4, 4, 3))
    return _grad_ok(lambda t: T.sum_(T.conv2d(t, w, None, 1) * r), x)


def check_grad_resample(rng, fault):
    x = rng.standard_normal((1, 4, 4, 2))
    r = rng.standard_normal((1, 4, 4, 2))
    return _grad_ok(lambda t: T.sum_(T.upsample_nearest_2x(T.downsample_avg_2x(t)) * r), x)


def check_grad_pixelnorm(rng, fault):
    x = rng.standard_normal((2, 3, 3, 4))
    r = rng.standard_normal((2, 3, 3, 4))
    return _grad_ok(lambda t: T.sum_(layers.pixelnorm(t) * r), x)


def check_grad_minibatch_stddev(rng, fault):
    x = rng.standard_normal((3, 2, 2, 2))
    r = rng.standard_normal((3, 2, 2, 3))
    return _grad_ok(lambda t: T.sum_(layers.minibatch_stddev(t) * r), x)


def check_double_backward(rng, fault):
    w = T.parameter(rng.standard_normal(5))
    (g,) = T.grad(T.sum_(w * w), [w], create_graph=True)
    (h,) = T.grad(T.sum_(g * g), [w])
    err = float(np.max(np.abs(h.data - 8 * w.data)))
    return err < 1e-12, f"max |d sum(g^2)/dw - 8w| = {err:.1e}"


def check_table_shapes(rng, fault):
    G, D = build_generator(level=4), build_discriminator(level=4)
    gt, dt = [], []
    z = rng.standard_normal((2, 256)).astype(np.float32)
    with T.no_grad():
        img = G(z, trace=gt)
        D(img, trace=dt)
    got_g = [row for row in gt if row[0] in dict(GENERATOR_ROWS)]
    got_d = [row for row in dt if row[0] in dict(DISCRIMINATOR_ROWS)]
    ok = got_g == GENERATOR_ROWS and got_d == DISCRIMINATOR_ROWS
    return ok, f"{len(got_g)} generator rows, {len(got_d)} discriminator rows"


def check_gp_zero_set(rng, fault):
    a = rng.standard_normal(12)
    a /= np.linalg.norm(a)
    at = T.Tensor(a.reshape(1, 2, 2, 3))

    def critic(x):
        return T.sum_(x * at, axis=(1, 2, 3))

    real, fake = rng.standard_normal((4, 2, 2, 3)), rng.standard_normal((4, 2, 2, 3))
    gp = gradient_penalty(critic, real, fake, 10.0, rng=rng).item()
    return gp < 1e-10, f"penalty {gp:.1e}"


def check_gp_constant_gradient(rng, fault):
    worst = 0.0
    for c in (0.5, 1.0, 3.0):
        def critic(x, c=c):
            return T.sum_(x, axis=1) * c

        real, fake = rng.standard_normal((3, 4)), rng.standard_normal((3, 4))
        gp = gradient_penalty(critic, real, fake, 10.0, rng=rng).item()
        worst = max(worst, abs(gp - 10.0 * (abs(c) * 2.0 - 1.0) ** 2))
    return worst < 1e-6, f"max deviation from 10(|c|sqrt(4)-1)^2: {worst:.1e}"


def check_fade_endpoints(rng, fault):
    plan = NetworkPlan()
    g0 = build_generator(plan, 0, dtype=np.float64)
    g1 = grow(g0, 1)
    z = rng.standard_normal((2, 256))
    with T.no_grad():
        low = T.upsample_nearest_2x(g0(z)).data
        at0 = g1(z, PhaseState(1, 0.0)).data
        at1 = g1(z, PhaseState(1, 1.0)).data
        mid = g1(z, PhaseState(1, 0.5)).data
    e0 = float(np.max(np.abs(at0 - low)))
    em = float(np.max(np.abs(mid - 0.5 * (at0 + at1))))
    return max(e0, em) < 1e-6, f"alpha=0 err {e0:.1e}, midpoint err {em:.1e}"


def check_pixelnorm_zero_vector(rng, fault):
    eps = 0.0 if fault else layers.PIXELNORM_EPS
    try:
        out = layers.pixelnorm(T.Tensor(np.zeros((1, 1, 1, 4))), eps=eps).data
    except (ZeroDivisionError, FloatingPointError) as exc:
        return False, f"raised {type(exc).__name__}: {exc}"
    return bool(np.all(out == 0)), "zero vector maps to zero"


def check_equalized_scale(rng, fault):
    cases = {(1, 2): 1.0, (3, 16): math.sqrt(2 / 144), (4, 256): math.sqrt(2 / 4096)}
    err = max(abs(layers.equalized_scale(k, c) - v) for (k, c), v in cases.items())
    return err < 1e-15, f"max err {err:.1e}"


def check_resample_inverse(rng, fault):
    x = rng.standard_normal((2, 3, 5, 4))
    y = T.downsample_avg_2x(T.upsample_nearest_2x(T.Tensor(x))).data
    return bool(np.array_equal(x, y)), "downsample(upsample(x)) == x bitwise"


def check_adam_oracle(rng, fault):
    p = T.parameter(rng.standard_normal(4))
    g = rng.standard_normal(4)
    start = p.data.copy()
    opt = Adam({"p": p}, lr=1e-3, betas=(0.0, 0.99), eps=1e-8)
    opt.step({"p": g})
    opt.step({"p": g})
    worst = 0.0
    for i in range(4):
        m = v = 0.0
        w = start[i]
        for t in (1, 2):
            m = 0.0 * m + 1.0 * g[i]
            v = 0.99 * v + 0.01 * g[i] * g[i]
            w -= 1e-3 * (m / (1 - 0.0 ** t)) / (math.sqrt(v / (1 - 0.99 ** t)) + 1e-8)
        worst = max(worst, abs(w - p.data[i]))
    return worst < 1e-12, f"max err {worst:.1e}"


def check_kernel_backends(rng, fault):
    if not _kernels.NUMBA_AVAILABLE:
        return True, "numba unavailable; numpy kernels only"
    x = rng.standard_normal((2, 5, 5, 3))
    prev = _kernels.get_backend()
    out = {}
    try:
        for name in ("numba", "numpy"):
            _kernels.set_backend(name)
            cols = _kernels.unfold(x, 3, 1)
            out[name] = (cols, _kernels.fold(cols, 5, 5, 1), _kernels.upsample2x(x))
    finally:
        _kernels.set_backend(prev)
    err = max(float(np.max(np.abs(a - b))) for a, b in zip(out["numba"], out["numpy"]))
    return err < 1e-12, f"max numba/numpy difference {err:.1e}"


CHECKS = [
    ("grad.elementwise", check_grad_elementwise),
    ("grad.conv2d", check_grad_conv2d),
    ("grad.resample", check_grad_resample),
    ("grad.pixelnorm", check_grad_pixelnorm),
    ("grad.minibatch_stddev", check_grad_minibatch_stddev),
    ("grad.double_backward", check_double_backward),
    ("shapes.architecture", check_table_shapes),
    ("gp.zero_set", check_gp_zero_set),
    ("gp.constant_gradient", check_gp_constant_gradient),
    ("fade.endpoints", check_fade_endpoints),
    ("pixelnorm.zero_vector", check_pixelnorm_zero_vector),
    ("oracle.equalized_scale", check_equalized_scale),
    ("oracle.resample_inverse", check_resample_inverse),
    ("oracle.adam", check_adam_oracle),
    ("kernels.backends", check_kernel_backends),
]


def run_checks(seed=0, inject_fault=False):
    results = []
    for name, fn in CHECKS:
        rng = np.random.default_rng(seed)
        t0 = time.perf_counter()
        try:
            passed, detail = fn(rng, inject_fault)
        except Exception as exc:
            passed, detail = False, f"{type(exc).__name__}: {exc}"
        results.append(CheckResult(name, bool(passed), detail, time.perf_counter() - t0))
    return results


def format_table(results):
    width = max(len(r.name) for r in results)
    lines = [f"{r.name:<{width}}  {'PASS' if r.passed else 'FAIL'}  {r.detail}" for r in results]
    n_pass = sum(r.passed for r in results)
    lines.append(f"{n_pass}/{len(results)} checks passed")
    return "\n".join(lines)


def format_json(results):
    return json.dumps([asdict(r) for r in results], indent=2)
