"""
Progressively grown generator and discriminator.

Level ``L`` works at resolution ``4 * 2**L``. The generator trunk is
``pixelnorm(z) -> 4x4 latent conv -> 3x3 conv`` followed by one block
(upsample, two 3x3 convs) per level; the discriminator is its mirror image
with a minibatch-stddev channel appended before the final 3x3 / 4x4 / 1x1
cost convolutions.

A network at level ``L >= 1`` also holds the RGB layer of level ``L - 1`` so
the new top block can be faded in with blend coefficient ``alpha``.
"""

import zlib
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .layers import EqualizedConv, EqualizedLatentConv, LRELU_SLOPE, conv_unit, minibatch_stddev, pixelnorm

GENERATOR_CHANNELS = (256, 128, 64, 32, 16)
STDDEV_EPS = 1e-8


@dataclass(frozen=True)
class LayerSpec:
    name: str
    kernel: int
    padding: int
    in_channels: int
    out_channels: int
    resolution: int  # output spatial extent


@dataclass(frozen=True)
class NetworkPlan:
    channels: tuple = GENERATOR_CHANNELS
    latent_dim: int = 256
    rgb_channels: int = 3
    base_resolution: int = 4

    @property
    def max_level(self):
        return len(self.channels) - 1

    def resolution(self, level):
        return self.base_resolution * 2 ** level

    def level_for_resolution(self, res):
        for level in range(self.max_level + 1):
            if self.resolution(level) == res:
                return level
        raise ValueError(f"resolution {res} is not one of "
                         f"{[self.resolution(l) for l in range(self.max_level + 1)]}")

    def check_level(self, level):
        if not 0 <= level <= self.max_level:
            raise ValueError(f"level must be in [0, {self.max_level}], got {level}")

    def generator_layers(self, level):
        self.check_level(level)
        ch, rgb = self.channels, self.rgb_channels
        base = self.base_resolution
        specs = [
            LayerSpec("G.block0.conv0", base, 0, self.latent_dim, ch[0], base),
            LayerSpec("G.block0.conv1", 3, 1, ch[0], ch[0], base),
        ]
        for l in range(1, level + 1):
            r = self.resolution(l)
            specs.append(LayerSpec(f"G.block{l}.conv0", 3, 1, ch[l - 1], ch[l], r))
            specs.append(LayerSpec(f"G.block{l}.conv1", 3, 1, ch[l], ch[l], r))
        if level >= 1:
            specs.append(LayerSpec(f"G.torgb{level - 1}", 1, 0, ch[level - 1], rgb, self.resolution(level - 1)))
        specs.append(LayerSpec(f"G.torgb{level}", 1, 0, ch[level], rgb, self.resolution(level)))
        return specs

    def discriminator_layers(self, level):
        self.check_level(level)
        ch, rgb = self.channels, self.rgb_channels
        specs = [LayerSpec(f"D.fromrgb{level}", 1, 0, rgb, ch[level], self.resolution(level))]
        if level >= 1:
            specs.append(LayerSpec(f"D.fromrgb{level - 1}", 1, 0, rgb, ch[level - 1], self.resolution(level - 1)))
        for l in range(level, 0, -1):
            r = self.resolution(l)
            specs.append(LayerSpec(f"D.block{l}.conv0", 3, 1, ch[l], ch[l], r))
            specs.append(LayerSpec(f"D.block{l}.conv1", 3, 1, ch[l], ch[l - 1], r))
        base = self.base_resolution
        specs += [
            LayerSpec("D.block0.conv0", 3, 1, ch[0] + 1, ch[0], base),
            LayerSpec("D.block0.conv1", base, 0, ch[0], ch[0], 1),
            LayerSpec("D.block0.score", 1, 0, ch[0], 1, 1),
        ]
        return specs


@dataclass(frozen=True)
class PhaseState:
    level: int
    alpha: float = 1.0
    epoch_in_phase: int = 0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.level == 0 and self.alpha != 1.0:
            raise ValueError("level 0 has nothing to fade in; alpha must be 1")


def layer_rng(seed, name):
    return np.random.default_rng([seed, zlib.crc32(name.encode())])


def _make_layer(spec, seed, dtype):
    rng = layer_rng(seed, spec.name)
    if spec.name == "G.block0.conv0":
        return EqualizedLatentConv(spec.name, spec.in_channels, spec.out_channels, spec.kernel, rng, dtype)
    return EqualizedConv(spec.name, spec.in_channels, spec.out_channels, spec.kernel, spec.padding, rng, dtype)


def _blend(low, top, alpha):
    return T.add(T.mul(low, 1.0 - alpha), T.mul(top, alpha))


class _Network:
    prefix = ""

    def __init__(self, plan, level, seed=0, dtype=np.float32):
        plan.check_level(level)
        self.plan = plan
        self.level = level
        self.seed = seed
        self.dtype = np.dtype(dtype)
        self.layers = OrderedDict((s.name, _make_layer(s, seed, dtype)) for s in self._specs())

    def _specs(self):
        raise NotImplementedError

    def parameters(self):
        params = OrderedDict()
        for layer in self.layers.values():
            params.update(layer.parameters())
        return params

    def num_parameters(self):
        return sum(p.size for p in self.parameters().values())

    def _layer(self, name):
        return self.layers[f"{self.prefix}.{name}"]

    def _phase(self, phase):
        if phase is None:
            return PhaseState(self.level)
        if phase.level != self.level:
            raise ValueError(f"phase level {phase.level} does not match network level {self.level}")
        return phase


def _note(trace, label, x):
    if trace is not None:
        trace.append((label, tuple(x.shape[1:])))


class Generator(_Network):
    prefix = "G"

    def _specs(self):
        return self.plan.generator_layers(self.level)

    def _block(self, x, l, trace):
        x = T.upsample_nearest_2x(x)
        _note(trace, f"block{l}.upsample", x)
        for conv in ("conv0", "conv1"):
            x = conv_unit(x, self._layer(f"block{l}.{conv}"), with_pixelnorm=True)
            _note(trace, f"block{l}.{conv}", x)
        return x

    def trunk(self, z, upto, trace=None):
        """Feature maps after the block of level ``upto``."""
        if z.ndim != 2 or z.shape[1] != self.plan.latent_dim:
            raise ValueError(f"expected latents of shape (N, {self.plan.latent_dim}), got {z.shape}")
        n = z.shape[0]
        x = T.reshape(pixelnorm(z), (n, 1, 1, self.plan.latent_dim))
        _note(trace, "latent", x)
        for conv in ("conv0", "conv1"):
            x = conv_unit(x, self._layer(f"block0.{conv}"), with_pixelnorm=True)
            _note(trace, f"block0.{conv}", x)
        for l in range(1, upto + 1):
            x = self._block(x, l, trace)
        return x

    def __call__(self, z, phase=None, trace=None):
        phase = self._phase(phase)
        z = T.as_tensor(z)
        level, alpha = self.level, phase.alpha
        if level == 0 or alpha == 1.0:
            x = self.trunk(z, level, trace)
            out = self._layer(f"torgb{level}")(x)
            _note(trace, f"torgb{level}", out)
            return out
        below = self.trunk(z, level - 1, trace)
        low = T.upsample_nearest_2x(self._layer(f"torgb{level - 1}")(below))
        _note(trace, f"torgb{level - 1}.upsample", low)
        if alpha == 0.0:
            return low
        top = self._layer(f"torgb{level}")(self._block(below, level, trace))
        _note(trace, f"torgb{level}", top)
        return _blend(low, top, alpha)


class Discriminator(_Network):
    prefix = "D"

    def _specs(self):
        return self.plan.discriminator_layers(self.level)

    def _block(self, x, l, trace):
        for conv in ("conv0", "conv1"):
            x = conv_unit(x, self._layer(f"block{l}.{conv}"))
            _note(trace, f"block{l}.{conv}", x)
        x = T.downsample_avg_2x(x)
        _note(trace, f"block{l}.downsample", x)
        return x

    def __call__(self, x, phase=None, trace=None):
        phase = self._phase(phase)
        x = T.as_tensor(x)
        level, alpha = self.level, phase.alpha
        res = self.plan.resolution(level)
        if x.ndim != 4 or x.shape[1:] != (res, res, self.plan.rgb_channels):
            raise ValueError(f"expected images of shape (N, {res}, {res}, {self.plan.rgb_channels}), got {x.shape}")
        _note(trace, "input", x)
        if level == 0:
            h = self._layer("fromrgb0")(x)
            _note(trace, "fromrgb0", h)
        else:
            top = low = None
            if alpha > 0.0:
                top = self._layer(f"fromrgb{level}")(x)
                _note(trace, f"fromrgb{level}", top)
                top = self._block(top, level, trace)
            if alpha < 1.0:
                low = self._layer(f"fromrgb{level - 1}")(T.downsample_avg_2x(x))
                _note(trace, f"fromrgb{level - 1}.downsample", low)
            if low is None:
                h = top
            elif top is None:
                h = low
            else:
                h = _blend(low, top, alpha)
        for l in range(level - 1, 0, -1):
            h = self._block(h, l, trace)
        h = minibatch_stddev(h, eps=STDDEV_EPS)
        _note(trace, "mbstd", h)
        for conv in ("conv0", "conv1"):
            h = T.leaky_relu(self._layer(f"block0.{conv}")(h), LRELU_SLOPE)
            _note(trace, f"block0.{conv}", h)
        score = self._layer("block0.score")(h)
        _note(trace, "block0.score", score)
        return T.reshape(score, (score.shape[0],))


def build_generator(plan=None, level=0, seed=0, dtype=np.float32):
    return Generator(plan or NetworkPlan(), level, seed, dtype)


def build_discriminator(plan=None, level=0, seed=0, dtype=np.float32):
    return Discriminator(plan or NetworkPlan(), level, seed, dtype)


def grow(net, new_level):
    """Return ``net`` rebuilt one level up with every shared parameter copied.

    New layers get their deterministic per-name initialization; the RGB layer
    of the old top level stays on as the fade path and older RGB layers are
    dropped.
    """
    if new_level != net.level + 1:
        raise ValueError(f"can only grow one level at a time ({net.level} -> {new_level} requested)")
    grown = type(net)(net.plan, new_level, net.seed, net.dtype)
    old = net.parameters()
    for name, p in grown.parameters().items():
        if name in old:
            p.data = old[name].data.copy()
    return grown
