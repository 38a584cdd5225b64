"""
Progressive WGAN-GP training: schedule, alternating updates, growth,
metrics, checkpoints and deterministic resume.
"""

import contextlib
import logging
import math
import os
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import tensor as T
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .data import BatchLoader, to_resolution
from .grid import parse_grid, write_png_grid
from .networks import NetworkPlan, PhaseState, build_discriminator, build_generator, grow
from .optim import Adam
from .wgan import critic_loss, generator_loss

log = logging.getLogger(__name__)

METRICS_FIELDS = ("epoch", "step", "level", "alpha", "critic_loss", "gen_loss", "w_estimate", "gp", "drift")


@dataclass
class TrainingConfig:
    total_epochs: int = 100
    batch_size: int = 16
    latent_dim: int = 256
    max_level: int = 4
    learning_rate: float = 1e-3
    beta1: float = 0.0
    beta2: float = 0.99
    adam_eps: float = 1e-8
    lambda_gp: float = 10.0
    drift: float = 1e-3
    n_critic: int = 1
    seed: int = 0
    workers: int = 8
    fade_fraction: float = 0.5
    alpha_per_step: bool = False
    deterministic: bool = False
    max_steps: int = 0  # 0 means no cap
    checkpoint_every: int = 1
    sample_grid: str = "4x4"

    def __post_init__(self):
        self.validate()

    @property
    def phases(self):
        return self.max_level + 1

    @property
    def epochs_per_phase(self):
        return self.total_epochs // self.phases

    def validate(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2 (minibatch stddev needs two samples)")
        if not 0 <= self.max_level <= 4:
            raise ValueError("max_level must be in [0, 4]")
        if self.total_epochs < 1 or self.total_epochs % self.phases:
            raise ValueError(f"total_epochs={self.total_epochs} does not split into {self.phases} equal phases")
        if not 0.0 <= self.fade_fraction <= 1.0:
            raise ValueError("fade_fraction must be in [0, 1]")
        if self.n_critic < 1:
            raise ValueError("n_critic must be at least 1")
        if self.latent_dim < 1 or self.workers < 0 or self.max_steps < 0 or self.checkpoint_every < 1:
            raise ValueError("latent_dim, workers, max_steps and checkpoint_every must be non-negative/positive")
        if self.learning_rate < 0 or self.lambda_gp < 0 or self.drift < 0:
            raise ValueError("learning_rate, lambda_gp and drift must be non-negative")

    @classmethod
    def field_types(cls):
        return {f.name: f.type for f in fields(cls)}

    def to_dict(self):
        return asdict(self)


def fade_epochs(config):
    if config.fade_fraction == 0.0:
        return 0
    return max(1, math.ceil(config.fade_fraction * config.epochs_per_phase))


def schedule(epoch, config, step_in_epoch=0, steps_per_epoch=1):
    """Phase for ``epoch``: equal-length phases per level, linear alpha ramp at the start of each.

    With ``config.alpha_per_step`` the ramp advances per optimizer step
    instead of per epoch.
    """
    if not 0 <= epoch < config.total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {config.total_epochs})")
    level, eip = divmod(epoch, config.epochs_per_phase)
    fade = fade_epochs(config)
    if level == 0 or eip >= fade:
        return PhaseState(level, 1.0, eip)
    if config.alpha_per_step:
        alpha = (eip * steps_per_epoch + step_in_epoch + 1) / (fade * steps_per_epoch)
    else:
        alpha = (eip + 1) / fade
    return PhaseState(level, min(alpha, 1.0), eip)


@contextlib.contextmanager
def frozen(params):
    """Temporarily drop ``requires_grad`` so no gradient work is spent on ``params``."""
    flags = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p, f in zip(params, flags):
            p.requires_grad = f


def _grads_by_name(loss, params):
    names = list(params)
    if not names:
        return {}
    grads = T.grad(loss, [params[n] for n in names], allow_unused=True)
    return {n: g.data for n, g in zip(names, grads) if g is not None}


def sample_latents(rng, n, latent_dim, dtype=np.float32):
    return rng.standard_normal((n, latent_dim)).astype(dtype)


def train_step(G, D, real, config, rng, opt_g, opt_d, phase=None):
    """``n_critic`` critic updates followed by one generator update.

    Returns the last critic LossReport with ``generator_loss`` taken from the
    generator update.
    """
    phase = phase or PhaseState(G.level)
    real = T.Tensor(np.asarray(real, dtype=G.dtype))
    n = real.shape[0]
    g_params, d_params = G.parameters(), D.parameters()

    def critic(x):
        return D(x, phase)

    report = None
    for _ in range(config.n_critic):
        z = sample_latents(rng, n, G.plan.latent_dim, G.dtype)
        with T.no_grad():
            fake = G(z, phase).detach()
        loss, report = critic_loss(critic, real, fake, config.lambda_gp, config.drift, rng=rng)
        report.check_finite()
        opt_d.step(_grads_by_name(loss, d_params))

    z = sample_latents(rng, n, G.plan.latent_dim, G.dtype)
    with frozen(list(d_params.values())):
        gl = generator_loss(critic, G(z, phase))
        report.generator_loss = gl.item()
        report.check_finite()
        opt_g.step(_grads_by_name(gl, g_params))
    return report


class TrainingAborted(RuntimeError):
    pass


def format_metrics(epoch, step, phase, report):
    vals = (report.critic_loss, report.generator_loss, report.wasserstein_estimate,
            report.gradient_penalty, report.drift_term)
    return " ".join([str(epoch), str(step), str(phase.level), repr(float(phase.alpha))] + [repr(float(v)) for v in vals])


def parse_metrics(path):
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            row = dict(zip(METRICS_FIELDS, parts))
            for k in ("epoch", "step", "level"):
                row[k] = int(row[k])
            for k in METRICS_FIELDS[3:]:
                row[k] = float(row[k])
            rows.append(row)
    return rows


class Trainer:
    """Owns both networks, both optimizers and the training RNG."""

    def __init__(self, config, plan=None):
        self.config = config
        self.plan = plan or NetworkPlan(latent_dim=config.latent_dim)
        self.G = build_generator(self.plan, 0, config.seed)
        self.D = build_discriminator(self.plan, 0, config.seed)
        self.opt_g = self._adam(self.G)
        self.opt_d = self._adam(self.D)
        self.rng = np.random.default_rng(config.seed)
        self.epoch = 0
        self.step = 0
        self.phase = PhaseState(0)

    def _adam(self, net):
        c = self.config
        return Adam(net.parameters(), c.learning_rate, (c.beta1, c.beta2), c.adam_eps)

    def grow_to(self, level):
        while self.G.level < level:
            self.G = grow(self.G, self.G.level + 1)
            self.D = grow(self.D, self.D.level + 1)
            self.opt_g.attach(self.G.parameters())
            self.opt_d.attach(self.D.parameters())
            log.info("grew networks to level %d (%dx%d)", self.G.level, *(self.plan.resolution(self.G.level),) * 2)

    # -- persistence ---------------------------------------------------------
    def to_checkpoint(self):
        params = dict(self.G.parameters())
        params.update(self.D.parameters())
        adam_m, adam_v, steps = {}, {}, {}
        for opt in (self.opt_g, self.opt_d):
            for name in opt.params:
                adam_m[name] = opt.m[name]
                adam_v[name] = opt.v[name]
                steps[name] = opt.steps[name]
        return Checkpoint(
            config=self.config.to_dict(),
            phase={"level": self.phase.level, "alpha": self.phase.alpha, "epoch_in_phase": self.phase.epoch_in_phase},
            epoch=self.epoch,
            step=self.step,
            rng_state=self.rng.bit_generator.state,
            params={k: p.data for k, p in params.items()},
            adam_m=adam_m,
            adam_v=adam_v,
            adam_steps=steps,
        )

    @classmethod
    def from_checkpoint(cls, ckpt, config=None):
        config = config or TrainingConfig(**ckpt.config)
        tr = cls(config)
        tr.grow_to(ckpt.phase["level"])
        for net, opt in ((tr.G, tr.opt_g), (tr.D, tr.opt_d)):
            for name, p in net.parameters().items():
                if name not in ckpt.params:
                    raise ValueError(f"checkpoint lacks parameter {name}")
                p.data = ckpt.params[name].astype(net.dtype)
                opt.m[name] = ckpt.adam_m[name].astype(net.dtype)
                opt.v[name] = ckpt.adam_v[name].astype(net.dtype)
                opt.steps[name] = int(ckpt.adam_steps[name])
        tr.rng.bit_generator.state = ckpt.rng_state
        tr.epoch, tr.step = ckpt.epoch, ckpt.step
        tr.phase = PhaseState(ckpt.phase["level"], ckpt.phase["alpha"], ckpt.phase["epoch_in_phase"])
        return tr


def fixed_latents(config, count):
    # independent stream so per-epoch previews never perturb the training RNG
    return sample_latents(np.random.default_rng([config.seed, 0x5A4D]), count, config.latent_dim)


def run_training(config, dataset, out_dir=None, resume=None, metrics_path=None):
    """Train from scratch (or from checkpoint ``resume``) and return ``(checkpoint, metrics_rows)``.

    Writes, when ``out_dir`` is given: ``metrics.log`` (one line per step),
    ``ckpt-epoch-N.pgck`` every ``checkpoint_every`` epochs and at the end,
    and ``samples-epoch-N.png`` from a fixed latent batch.
    """
    trainer = Trainer.from_checkpoint(resume, config) if resume is not None else Trainer(config)
    loader = BatchLoader(dataset, config.batch_size, config.seed, config.workers, config.deterministic)
    spe = loader.batches_per_epoch()
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        metrics_path = metrics_path or os.path.join(out_dir, "metrics.log")
    rows_out = []
    metrics_fh = open(metrics_path, "a", encoding="utf-8") if metrics_path else None
    rows, cols = parse_grid(config.sample_grid)
    preview_z = fixed_latents(config, rows * cols)

    def save(name):
        if out_dir is None:
            return None
        path = os.path.join(out_dir, name)
        save_checkpoint(trainer.to_checkpoint(), path)
        return path

    try:
        done = False
        for epoch in range(trainer.epoch, config.total_epochs):
            trainer.phase = schedule(epoch, config, 0, spe)
            trainer.grow_to(trainer.phase.level)
            for i, masters in enumerate(loader(epoch)):
                if config.max_steps and trainer.step >= config.max_steps:
                    done = True
                    break
                phase = schedule(epoch, config, i, spe)
                trainer.phase = phase
                real = to_resolution(masters, phase, trainer.plan.base_resolution)
                try:
                    report = train_step(trainer.G, trainer.D, real, config, trainer.rng,
                                        trainer.opt_g, trainer.opt_d, phase)
                except FloatingPointError as exc:
                    path = save("ckpt-abort.pgck")
                    raise TrainingAborted(f"epoch {epoch} step {trainer.step}: {exc}"
                                          + (f" (state saved to {path})" if path else "")) from exc
                line = format_metrics(epoch, trainer.step, phase, report)
                rows_out.append(line)
                if metrics_fh:
                    metrics_fh.write(line + "\n")
                trainer.step += 1
            if done:
                break
            trainer.epoch = epoch + 1
            if metrics_fh:
                metrics_fh.flush()
            if out_dir is not None:
                if trainer.epoch % config.checkpoint_every == 0 or trainer.epoch == config.total_epochs:
                    save(f"ckpt-epoch-{trainer.epoch}.pgck")
                with T.no_grad():
                    imgs = trainer.G(preview_z, trainer.phase).data
                write_png_grid(imgs, rows, cols, os.path.join(out_dir, f"samples-epoch-{trainer.epoch}.png"))
        if done:
            save(f"ckpt-step-{trainer.step}.pgck")
    finally:
        if metrics_fh:
            metrics_fh.close()
    return trainer.to_checkpoint(), rows_out


def load_generator(path):
    """Generator and phase from a checkpoint; discriminator blobs are never read."""
    ckpt = load_checkpoint(path, groups=("param",), prefix="G.")
    config = TrainingConfig(**ckpt.config)
    plan = NetworkPlan(latent_dim=config.latent_dim)
    G = build_generator(plan, ckpt.phase["level"], config.seed)
    for name, p in G.parameters().items():
        p.data = ckpt.params[name]
    phase = PhaseState(ckpt.phase["level"], ckpt.phase["alpha"], ckpt.phase["epoch_in_phase"])
    return G, phase, config
