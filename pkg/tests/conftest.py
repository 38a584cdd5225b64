import numpy as np
import pytest

from pgan.data import make_blob_images, write_images


def central_diff(f, x, step=1e-6):
    """Elementwise central differences of scalar ``f`` (plain numpy) at ``x``."""
    x = np.array(x, dtype=np.float64)
    flat = x.reshape(-1)
    out = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = f(x)
        flat[i] = orig - step
        fm = f(x)
        flat[i] = orig
        out[i] = (fp - fm) / (2 * step)
    return out.reshape(x.shape)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def image_dir(tmp_path):
    """Four seeded 64x64 blob PNGs."""
    d = tmp_path / "images"
    write_images(make_blob_images(4, 64, seed=5), d)
    return d
