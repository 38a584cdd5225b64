"""
Hot array kernels: im2col / col2im over NHWC tensors and 2x resampling.

Each kernel has a numba ``@njit`` implementation and a pure-numpy fallback
with the same contract. The numba path is used when numba imports cleanly
and ``PGAN_DISABLE_NUMBA`` is unset (or ``0``); ``set_backend`` switches at
runtime, which the benchmark and the backend-equivalence tests rely on.

All kernels are deterministic: parallel loops only ever write disjoint
output regions, and summation order inside a kernel is fixed.

``PGAN_NUM_THREADS`` caps the numba thread pool.
"""

import os

import numpy as np
from numpy.lib.stride_tricks import as_strided

try:
    import numba
    from numba import njit, prange

    NUMBA_AVAILABLE = True
    if not os.environ.get("NUMBA_THREADING_LAYER"):
        # the system TBB may be too old for numba; OpenMP is always shipped
        numba.config.THREADING_LAYER = "omp"
except ImportError:  # pragma: no cover - numba is a hard dependency in practice
    NUMBA_AVAILABLE = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]):
            return args[0]
        return lambda f: f

    prange = range


def _env_flag(name):
    return os.environ.get(name, "").strip().lower() not in ("", "0", "false", "no")


_backend = "numba" if NUMBA_AVAILABLE and not _env_flag("PGAN_DISABLE_NUMBA") else "numpy"


def get_backend():
    return _backend


def set_backend(name):
    """Select ``"numba"`` or ``"numpy"`` kernels; returns the previous backend."""
    global _backend
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown kernel backend {name!r}")
    if name == "numba" and not NUMBA_AVAILABLE:
        raise RuntimeError("numba is not installed")
    prev, _backend = _backend, name
    return prev


def set_num_threads(n):
    """Cap numba's thread pool; silently clipped to what numba was started with."""
    if NUMBA_AVAILABLE and n is not None:
        n = max(1, min(int(n), numba.config.NUMBA_NUM_THREADS))
        numba.set_num_threads(n)


if os.environ.get("PGAN_NUM_THREADS"):
    set_num_threads(os.environ["PGAN_NUM_THREADS"])


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

@njit(parallel=True, cache=True)
def _unfold_nb(x, k, pad, out):
    n_batch, h, w, c = x.shape
    ho = out.shape[1]
    wo = out.shape[2]
    for n in prange(n_batch):
        for i in range(ho):
            for j in range(wo):
                for ki in range(k):
                    si = i + ki - pad
                    for kj in range(k):
                        sj = j + kj - pad
                        if si < 0 or si >= h or sj < 0 or sj >= w:
                            for ch in range(c):
                                out[n, i, j, ki, kj, ch] = 0.0
                        else:
                            for ch in range(c):
                                out[n, i, j, ki, kj, ch] = x[n, si, sj, ch]


@njit(parallel=True, cache=True)
def _fold_nb(cols, pad, out):
    n_batch, h, w, c = out.shape
    ho = cols.shape[1]
    wo = cols.shape[2]
    k = cols.shape[3]
    for n in prange(n_batch):
        for i in range(h):
            for j in range(w):
                for ch in range(c):
                    out[n, i, j, ch] = 0.0
        # same (ki, kj) outer order as the numpy fallback
        for ki in range(k):
            for kj in range(k):
                for i in range(ho):
                    si = i + ki - pad
                    if si < 0 or si >= h:
                        continue
                    for j in range(wo):
                        sj = j + kj - pad
                        if sj < 0 or sj >= w:
                            continue
                        for ch in range(c):
                            out[n, si, sj, ch] += cols[n, i, j, ki, kj, ch]


@njit(parallel=True, cache=True)
def _upsample_nb(x, out):
    n_batch, h, w, c = x.shape
    for n in prange(n_batch):
        for i in range(h):
            for j in range(w):
                for ch in range(c):
                    v = x[n, i, j, ch]
                    out[n, 2 * i, 2 * j, ch] = v
                    out[n, 2 * i, 2 * j + 1, ch] = v
                    out[n, 2 * i + 1, 2 * j, ch] = v
                    out[n, 2 * i + 1, 2 * j + 1, ch] = v


@njit(parallel=True, cache=True)
def _block_sum_nb(x, out):
    n_batch, h, w, c = out.shape
    for n in prange(n_batch):
        for i in range(h):
            for j in range(w):
                for ch in range(c):
                    out[n, i, j, ch] = (x[n, 2 * i, 2 * j, ch] + x[n, 2 * i, 2 * j + 1, ch]) + (
                        x[n, 2 * i + 1, 2 * j, ch] + x[n, 2 * i + 1, 2 * j + 1, ch]
                    )


# ---------------------------------------------------------------------------
# numpy fallbacks
# ---------------------------------------------------------------------------

def _unfold_np(x, k, pad):
    n, h, w, c = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    ho = h + 2 * pad - k + 1
    wo = w + 2 * pad - k + 1
    s0, s1, s2, s3 = x.strides
    view = as_strided(x, shape=(n, ho, wo, k, k, c), strides=(s0, s1, s2, s1, s2, s3), writeable=False)
    return np.ascontiguousarray(view)


def _fold_np(cols, h, w, pad):
    n, ho, wo, k, _, c = cols.shape
    out = np.zeros((n, h + 2 * pad, w + 2 * pad, c), dtype=cols.dtype)
    for ki in range(k):
        for kj in range(k):
            out[:, ki:ki + ho, kj:kj + wo, :] += cols[:, :, :, ki, kj, :]
    if pad:
        out = np.ascontiguousarray(out[:, pad:pad + h, pad:pad + w, :])
    return out


def _upsample_np(x):
    n, h, w, c = x.shape
    out = np.broadcast_to(x[:, :, None, :, None, :], (n, h, 2, w, 2, c))
    return np.ascontiguousarray(out).reshape(n, 2 * h, 2 * w, c)


def _block_sum_np(x):
    return (x[:, 0::2, 0::2] + x[:, 0::2, 1::2]) + (x[:, 1::2, 0::2] + x[:, 1::2, 1::2])


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

def unfold(x, k, pad):
    """im2col: (N, H, W, C) -> (N, Ho, Wo, k, k, C) with zero padding ``pad``."""
    if _backend == "numpy":
        return _unfold_np(x, k, pad)
    n, h, w, c = x.shape
    out = np.empty((n, h + 2 * pad - k + 1, w + 2 * pad - k + 1, k, k, c), dtype=x.dtype)
    _unfold_nb(np.ascontiguousarray(x), k, pad, out)
    return out


def fold(cols, h, w, pad):
    """col2im, the adjoint of :func:`unfold`: overlapping windows are summed."""
    if _backend == "numpy":
        return _fold_np(cols, h, w, pad)
    out = np.empty((cols.shape[0], h, w, cols.shape[-1]), dtype=cols.dtype)
    _fold_nb(np.ascontiguousarray(cols), pad, out)
    return out


def upsample2x(x):
    if _backend == "numpy":
        return _upsample_np(x)
    n, h, w, c = x.shape
    out = np.empty((n, 2 * h, 2 * w, c), dtype=x.dtype)
    _upsample_nb(np.ascontiguousarray(x), out)
    return out


def block_sum2x(x):
    """Sum of each non-overlapping 2x2 block, as ``(a + b) + (c + d)``."""
    if _backend == "numpy":
        return _block_sum_np(x)
    n, h, w, c = x.shape
    out = np.empty((n, h // 2, w // 2, c), dtype=x.dtype)
    _block_sum_nb(np.ascontiguousarray(x), out)
    return out
