import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pgan import tensor as T
from pgan.layers import EqualizedConv, conv_unit, equalized_scale, minibatch_stddev, pixelnorm


@pytest.mark.parametrize("k,c,expected", [
    (1, 2, 1.0),
    (3, 16, 0.11785113019775793),  # sqrt(2/144)
    (4, 256, 0.02209708691207961),  # sqrt(2/4096)
])
def test_equalized_scale(k, c, expected):
    assert equalized_scale(k, c) == pytest.approx(expected, rel=1e-14)


def test_equalized_scale_rejects_bad_geometry():
    with pytest.raises(ValueError):
        equalized_scale(0, 3)


def test_pixelnorm_ones():
    out = pixelnorm(T.Tensor(np.ones((1, 1, 1, 4)))).data
    np.testing.assert_allclose(out, 1.0, atol=1e-7)


def test_pixelnorm_three_four():
    out = pixelnorm(T.Tensor(np.array([[[[3.0, 4.0]]]]))).data.ravel()
    root = math.sqrt((9 + 16) / 2 + 1e-8)  # 3.535534...
    np.testing.assert_allclose(out, [3 / root, 4 / root], rtol=1e-12)
    np.testing.assert_allclose(out, [0.848528, 1.131370], atol=1e-6)


def test_pixelnorm_zero_vector():
    out = pixelnorm(T.Tensor(np.zeros((1, 2, 2, 3)))).data
    assert np.all(out == 0)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), lam=st.sampled_from([2.0, 10.0]))
def test_pixelnorm_scale_invariant_unit_mean_square(seed, lam):
    x = np.random.default_rng(seed).standard_normal((2, 3, 3, 5))
    a = pixelnorm(T.Tensor(x)).data
    b = pixelnorm(T.Tensor(lam * x)).data
    np.testing.assert_allclose(a, b, atol=1e-5)
    np.testing.assert_allclose((a * a).mean(axis=-1), 1.0, atol=1e-5)


def test_minibatch_stddev_identical_batch():
    x = np.tile(np.random.default_rng(0).standard_normal((1, 2, 2, 3)), (4, 1, 1, 1))
    out = minibatch_stddev(T.Tensor(x)).data
    assert np.all(out[..., -1] == 0)
    np.testing.assert_array_equal(out[..., :-1], x)


def test_minibatch_stddev_two_values():
    x = np.array([0.0, 2.0]).reshape(2, 1, 1, 1)
    out = minibatch_stddev(T.Tensor(x)).data
    np.testing.assert_array_equal(out[..., 1], 1.0)


def test_minibatch_stddev_shape():
    out = minibatch_stddev(T.Tensor(np.zeros((16, 4, 4, 256), dtype=np.float32)))
    assert out.shape == (16, 4, 4, 257)


def test_minibatch_stddev_needs_two():
    with pytest.raises(ValueError):
        minibatch_stddev(T.Tensor(np.zeros((1, 4, 4, 2))))


def _stddev_oracle(x, eps=0.0):
    n, h, w, c = x.shape
    total = 0.0
    for i in range(h):
        for j in range(w):
            for k in range(c):
                vals = [x[b, i, j, k] for b in range(n)]
                m = sum(vals) / n
                total += math.sqrt(sum((v - m) ** 2 for v in vals) / n + eps)
    return total / (h * w * c)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(2, 5))
def test_minibatch_stddev_oracle_and_permutation(seed, n):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, 2, 3, 2))
    s = minibatch_stddev(T.Tensor(x)).data[0, 0, 0, -1]
    assert s == pytest.approx(_stddev_oracle(x), abs=1e-12)
    s_perm = minibatch_stddev(T.Tensor(x[rng.permutation(n)])).data[0, 0, 0, -1]
    assert s_perm == pytest.approx(s, abs=1e-12)


def test_equalized_conv_matches_prescaled_plain_conv(rng):
    layer = EqualizedConv("t", 4, 5, 3, 1, rng, dtype=np.float64)
    layer.bias.data = rng.standard_normal(5)
    x = T.Tensor(rng.standard_normal((2, 6, 6, 4)))
    plain_w = T.Tensor(layer.weight.data * equalized_scale(3, 4))
    expected = T.conv2d(x, plain_w, layer.bias, 1).data
    np.testing.assert_allclose(layer(x).data, expected, atol=1e-6)
    # scale is applied at runtime, not baked into storage
    assert np.std(layer.weight.data) > 0.5
    assert layer.fan_in == 36


def test_conv_unit_identity_no_norm(rng):
    layer = EqualizedConv("id", 3, 3, 1, 0, rng, dtype=np.float64)
    layer.weight.data = np.eye(3).reshape(1, 1, 3, 3) / layer.runtime_scale
    x = np.abs(rng.standard_normal((2, 4, 4, 3)))
    out = conv_unit(T.Tensor(x), layer, with_pixelnorm=False).data
    np.testing.assert_allclose(out, x, rtol=1e-14)


def test_conv_unit_pixelnorm_unit_mean_square(rng):
    layer = EqualizedConv("pn", 3, 6, 3, 1, rng, dtype=np.float64)
    out = conv_unit(T.Tensor(rng.standard_normal((2, 4, 4, 3))), layer, with_pixelnorm=True).data
    np.testing.assert_allclose((out ** 2).mean(axis=-1), 1.0, atol=1e-6)


def test_conv_unit_table_row_shape(rng):
    layer = EqualizedConv("g1", 128, 128, 3, 1, rng)
    out = conv_unit(T.Tensor(np.zeros((1, 8, 8, 128), dtype=np.float32)), layer, with_pixelnorm=True)
    assert out.shape == (1, 8, 8, 128)
