"""Equalized convolution, pixelwise feature normalization and minibatch stddev."""

import math

import numpy as np

from . import tensor as T
from .tensor import Tensor

LRELU_SLOPE = 0.2
PIXELNORM_EPS = 1e-8


def equalized_scale(kernel, in_channels, gain=math.sqrt(2.0)):
    """He-constant runtime multiplier ``gain / sqrt(kernel * kernel * in_channels)``."""
    if kernel < 1 or in_channels < 1:
        raise ValueError("kernel and in_channels must be positive")
    return gain / math.sqrt(kernel * kernel * in_channels)


class EqualizedConv:
    """Stride-1 convolution whose stored weights are unit-variance.

    The He scale is applied to the raw weight on every forward pass instead
    of being folded into the stored values, so Adam sees the same dynamic
    range for every layer.
    """

    def __init__(self, name, in_channels, out_channels, kernel, padding, rng, dtype=np.float32):
        self.name = name
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.padding = padding
        self.fan_in = kernel * kernel * in_channels
        self.runtime_scale = equalized_scale(kernel, in_channels)
        raw = rng.standard_normal((kernel, kernel, in_channels, out_channels)).astype(dtype)
        self.weight = T.parameter(raw, name=f"{name}.weight")
        self.bias = T.parameter(np.zeros(out_channels, dtype=dtype), name=f"{name}.bias")

    def parameters(self):
        return {self.weight.name: self.weight, self.bias.name: self.bias}

    def effective_weight(self):
        return T.mul(self.weight, self.runtime_scale)

    def __call__(self, x):
        return T.conv2d(x, self.effective_weight(), self.bias, self.padding)

    def __repr__(self):
        return (f"EqualizedConv({self.name}, {self.in_channels}->{self.out_channels}, "
                f"k={self.kernel}, p={self.padding})")


class EqualizedLatentConv(EqualizedConv):
    """The generator's 4x4 input layer: a full-overlap transposed convolution.

    A 1x1 latent pixel is spread over a ``kernel x kernel`` output, which is
    a dense map from ``in_channels`` to ``kernel*kernel*out_channels`` values.
    It carries the same ``(K, K, Cin, Cout)`` weight layout and He scale as a
    regular ``K x K`` convolution.
    """

    def __init__(self, name, in_channels, out_channels, kernel, rng, dtype=np.float32):
        super().__init__(name, in_channels, out_channels, kernel, 0, rng, dtype)

    def __call__(self, z):
        if z.ndim == 4:
            z = T.reshape(z, (z.shape[0], z.shape[-1]))
        if z.shape[1] != self.in_channels:
            raise ValueError(f"{self.name}: expected {self.in_channels} latent channels, got {z.shape[1]}")
        k, c = self.kernel, self.out_channels
        w = T.transpose(self.effective_weight(), (2, 0, 1, 3))
        w = T.reshape(w, (self.in_channels, k * k * c))
        out = T.reshape(T.matmul(z, w), (z.shape[0], k, k, c))
        return T.add(out, self.bias)


def pixelnorm(x, eps=PIXELNORM_EPS):
    """Scale every pixel's channel vector to unit mean square."""
    ms = T.mean(T.mul(x, x), axis=-1, keepdims=True)
    return T.div(x, T.sqrt(T.add(ms, eps)))


def minibatch_stddev(x, eps=0.0):
    """Append one channel holding the mean over (h, w, c) of the batch stddev.

    The stddev is the biased (divide by N) estimate. ``eps`` is added to the
    variance before the square root; at ``eps=0`` a batch with zero variance
    still has a well-defined forward value but no derivative.
    """
    n = x.shape[0]
    if n < 2:
        raise ValueError("minibatch_stddev needs at least two samples")
    centered = T.sub(x, T.mean(x, axis=0, keepdims=True))
    var = T.mean(T.mul(centered, centered), axis=0)
    if eps:
        var = T.add(var, eps)
    s = T.mean(T.sqrt(var))
    fmap = T.broadcast_to(T.reshape(s, (1,) * x.ndim), x.shape[:-1] + (1,))
    return T.concat_last([x, fmap])


def conv_unit(x, layer, with_pixelnorm=False, activation=True):
    """conv -> leaky ReLU(0.2) -> optional pixelnorm."""
    y = layer(x)
    if activation:
        y = T.leaky_relu(y, LRELU_SLOPE)
    if with_pixelnorm:
        y = pixelnorm(y)
    return y
