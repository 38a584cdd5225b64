import numpy as np
import pytest

from pgan import _kernels

pytestmark = pytest.mark.skipif(not _kernels.NUMBA_AVAILABLE, reason="numba not installed")


@pytest.fixture
def both_backends():
    prev = _kernels.get_backend()

    def run(fn):
        out = {}
        for name in ("numba", "numpy"):
            _kernels.set_backend(name)
            out[name] = fn()
        return out

    yield run
    _kernels.set_backend(prev)


@pytest.mark.parametrize("k,pad", [(1, 0), (3, 1), (3, 0), (4, 0), (2, 2)])
@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_backends_agree_bitwise(both_backends, k, pad, dtype):
    rng = np.random.default_rng(k * 10 + pad)
    x = rng.standard_normal((2, 6, 5, 3)).astype(dtype)
    out = both_backends(lambda: _kernels.unfold(x, k, pad))
    np.testing.assert_array_equal(out["numba"], out["numpy"])
    cols = out["numpy"]
    back = both_backends(lambda: _kernels.fold(cols, 6, 5, pad))
    np.testing.assert_array_equal(back["numba"], back["numpy"])
    up = both_backends(lambda: _kernels.upsample2x(x))
    np.testing.assert_array_equal(up["numba"], up["numpy"])
    xs = x[:, :6, :4]
    bs = both_backends(lambda: _kernels.block_sum2x(np.ascontiguousarray(xs)))
    np.testing.assert_array_equal(bs["numba"], bs["numpy"])


@pytest.mark.parametrize("backend", ["numba", "numpy"])
def test_fold_is_adjoint_of_unfold(backend):
    prev = _kernels.set_backend(backend)
    try:
        rng = np.random.default_rng(0)
        x = rng.standard_normal((2, 5, 4, 3))
        y = rng.standard_normal((2, 5, 4, 3, 3, 3))
        lhs = np.vdot(_kernels.unfold(x, 3, 1), y)
        rhs = np.vdot(x, _kernels.fold(y, 5, 4, 1))
        assert lhs == pytest.approx(rhs, rel=1e-12)
    finally:
        _kernels.set_backend(prev)


def test_set_backend_rejects_unknown():
    with pytest.raises(ValueError):
        _kernels.set_backend("cuda")
