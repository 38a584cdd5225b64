"""PNG export of image grids."""

import numpy as np
from PIL import Image

GUTTER = 2


def to_uint8(images):
    """Clamp to [-1, 1] and quantize to 0..255, rounding halves away from zero."""
    x = np.clip(np.asarray(images, dtype=np.float64), -1.0, 1.0)
    v = (x + 1.0) * 127.5
    # v >= 0, so floor(v + 0.5) is round-half-away-from-zero
    return np.floor(v + 0.5).astype(np.uint8)


def tile(images, rows, cols, gutter=GUTTER):
    """Row-major tiling of (N, H, W, 3) uint8 images with black gutters between tiles."""
    images = np.asarray(images)
    if images.ndim != 4:
        raise ValueError(f"expected (N, H, W, C) images, got {images.shape}")
    n, h, w, c = images.shape
    if n > rows * cols:
        raise ValueError(f"{n} images do not fit a {rows}x{cols} grid")
    canvas = np.zeros((rows * h + (rows - 1) * gutter, cols * w + (cols - 1) * gutter, c), dtype=np.uint8)
    for k in range(n):
        r, q = divmod(k, cols)
        y, x = r * (h + gutter), q * (w + gutter)
        canvas[y:y + h, x:x + w] = images[k]
    return canvas


def write_png_grid(images, rows, cols, path, gutter=GUTTER):
    """Tile uint8 images (or float images in [-1, 1]) into one RGB PNG."""
    images = np.asarray(images)
    if images.dtype != np.uint8:
        images = to_uint8(images)
    Image.fromarray(tile(images, rows, cols, gutter), "RGB").save(path, format="PNG")


def parse_grid(text):
    """``"4x4"`` -> ``(4, 4)``."""
    try:
        r, c = text.lower().split("x")
        rows, cols = int(r), int(c)
    except ValueError as exc:
        raise ValueError(f"grid must look like RxC, got {text!r}") from exc
    if rows < 1 or cols < 1:
        raise ValueError(f"grid dimensions must be positive, got {text!r}")
    return rows, cols
