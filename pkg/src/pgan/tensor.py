"""
Dense NHWC tensors with tape-based reverse-mode differentiation.

Every backward rule is written in terms of differentiable tensor operations,
so a gradient produced with ``create_graph=True`` is itself a node on the tape
and can be differentiated again. The gradient penalty needs exactly that.

Layout convention for image-like tensors is (batch, height, width, channels).
"""

import contextlib
import math
from dataclasses import dataclass

import numpy as np

from . import _kernels

_grad_enabled = True
_kink_log = None


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


@contextlib.contextmanager
def enable_grad(flag=True):
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, flag
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled():
    return _grad_enabled


@contextlib.contextmanager
def record_kinks():
    """Collect the sign masks of every leaky ReLU evaluated inside the block.

    Finite differences are only a valid oracle when both stencil points sit
    on the same linear piece; ``grad_check`` compares these masks to tell.
    """
    global _kink_log
    prev, _kink_log = _kink_log, []
    try:
        yield _kink_log
    finally:
        _kink_log = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward", "_op")
    # make ndarray <op> Tensor defer to the Tensor's reflected operators
    __array_ufunc__ = None

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name
        self._parents = ()
        self._backward = None
        self._op = "leaf"

    # -- basic properties --------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.item())

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self._op}{flag})"

    def __len__(self):
        return self.data.shape[0]

    # -- operator sugar ----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)

    def backward(self, grad_output=None, create_graph=False):
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
        grads = backward(self, grad_output=grad_output, create_graph=create_graph)
        for leaf, g in grads.items():
            if create_graph:
                leaf.grad = g if leaf.grad is None else add(leaf.grad, g)
            else:
                leaf.grad = g.data if leaf.grad is None else leaf.grad + g.data


def as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def parameter(data, name=None):
    return Tensor(data, requires_grad=True, name=name)


def _check_finite(arr, op):
    # a native-dtype sum is cheap; it can overflow on finite data, so confirm elementwise
    with np.errstate(over="ignore", invalid="ignore"):
        total = arr.sum()
    if not np.isfinite(total) and not np.isfinite(arr).all():
        raise FloatingPointError(f"{op}: non-finite values in result")


def _make(data, parents, backward_fn, op):
    _check_finite(data, op)
    out = Tensor(data)
    out._op = op
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


# ---------------------------------------------------------------------------
# broadcasting helpers
# ---------------------------------------------------------------------------

def _reduce_axes(shape, target):
    lead = len(shape) - len(target)
    axes = list(range(lead))
    for i, t in enumerate(target):
        if t == 1 and shape[lead + i] != 1:
            axes.append(lead + i)
    return tuple(axes)


def sum_to(x, shape):
    """Sum a broadcast result back down to ``shape``; adjoint of broadcast_to."""
    shape = tuple(shape)
    if x.shape == shape:
        return x
    axes = _reduce_axes(x.shape, shape)
    data = x.data.sum(axis=axes, keepdims=True).reshape(shape)
    src = x.shape
    return _make(data, (x,), lambda g: (broadcast_to(g, src),), "sum_to")


def broadcast_to(x, shape):
    shape = tuple(shape)
    if x.shape == shape:
        return x
    src = x.shape
    data = np.ascontiguousarray(np.broadcast_to(x.data, shape))
    return _make(data, (x,), lambda g: (sum_to(g, src),), "broadcast_to")


def _binary_operands(a, b):
    if isinstance(a, Tensor):
        b = as_tensor(b, like=a)
    else:
        a = as_tensor(a, like=b)
    return a, b


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a, b):
    a, b = _binary_operands(a, b)
    try:
        data = a.data + b.data
    except ValueError as exc:
        raise ValueError(f"add: shape mismatch {a.shape} vs {b.shape}") from exc
    sa, sb = a.shape, b.shape
    return _make(data, (a, b), lambda g: (sum_to(g, sa), sum_to(g, sb)), "add")


def sub(a, b):
    a, b = _binary_operands(a, b)
    try:
        data = a.data - b.data
    except ValueError as exc:
        raise ValueError(f"sub: shape mismatch {a.shape} vs {b.shape}") from exc
    sa, sb = a.shape, b.shape
    return _make(data, (a, b), lambda g: (sum_to(g, sa), sum_to(neg(g), sb)), "sub")


def mul(a, b):
    a, b = _binary_operands(a, b)
    try:
        data = a.data * b.data
    except ValueError as exc:
        raise ValueError(f"mul: shape mismatch {a.shape} vs {b.shape}") from exc

    def backward(g):
        ga = sum_to(mul(g, b), a.shape) if a.requires_grad else None
        gb = sum_to(mul(g, a), b.shape) if b.requires_grad else None
        return ga, gb

    return _make(data, (a, b), backward, "mul")


def div(a, b):
    """Elementwise quotient; an exactly-zero denominator raises ZeroDivisionError."""
    a, b = _binary_operands(a, b)
    if np.any(b.data == 0):
        raise ZeroDivisionError("div: exact zero in denominator")
    try:
        data = a.data / b.data
    except ValueError as exc:
        raise ValueError(f"div: shape mismatch {a.shape} vs {b.shape}") from exc

    def backward(g):
        ga = sum_to(div(g, b), a.shape) if a.requires_grad else None
        gb = None
        if b.requires_grad:
            gb = sum_to(neg(div(mul(g, a), mul(b, b))), b.shape)
        return ga, gb

    return _make(data, (a, b), backward, "div")


def neg(a):
    return _make(-a.data, (a,), lambda g: (neg(g),), "neg")


def power(a, p):
    """``a ** p`` for a scalar exponent ``p``."""
    p = float(p)
    with np.errstate(all="ignore"):
        data = a.data * a.data if p == 2.0 else a.data ** p

    def backward(g):
        if p == 2.0:
            return (mul(g, mul(a, 2.0)),)
        if p == 1.0:
            return (g,)
        return (mul(g, mul(power(a, p - 1.0), p)),)

    return _make(data, (a,), backward, "pow")


def sqrt(a):
    if np.any(a.data < 0):
        raise ValueError("sqrt: negative input")
    data = np.sqrt(a.data)
    out = None

    def backward(g):
        if np.any(out.data == 0):
            raise ZeroDivisionError("sqrt: gradient at exact zero (no epsilon supplied)")
        return (div(mul(g, 0.5), out),)

    out = _make(data, (a,), backward, "sqrt")
    return out


def elementwise(op_kind, a, b=None):
    """Dispatch by name over the elementwise arithmetic kernels."""
    if op_kind == "sqrt":
        return sqrt(a)
    binary = {"add": add, "sub": sub, "mul": mul, "div": div, "pow": power}
    if op_kind not in binary:
        raise ValueError(f"unknown elementwise op {op_kind!r}")
    return binary[op_kind](a, b)


def leaky_relu(x, slope=0.2):
    if not 0.0 < slope < 1.0:
        raise ValueError("leaky_relu: slope must lie in (0, 1)")
    pos = x.data >= 0
    if _kink_log is not None:
        _kink_log.append(pos.copy())
    gate = np.where(pos, 1.0, slope).astype(x.dtype)
    data = x.data * gate
    gate_t = Tensor(gate)
    return _make(data, (x,), lambda g: (mul(g, gate_t),), "leaky_relu")


# ---------------------------------------------------------------------------
# reductions and shape ops
# ---------------------------------------------------------------------------

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    axes = tuple(sorted(a % ndim for a in axis))
    if len(set(axes)) != len(axes):
        raise ValueError("duplicate reduction axes")
    return axes


def sum_(x, axis=None, keepdims=False):
    axes = _norm_axes(axis, x.ndim)
    if x.ndim and not axes:
        raise ValueError("sum: empty reduction set")
    data = x.data.sum(axis=axes, keepdims=keepdims)
    kept = tuple(1 if i in axes else s for i, s in enumerate(x.shape))
    src = x.shape

    def backward(g):
        return (broadcast_to(reshape(g, kept), src),)

    return _make(np.asarray(data), (x,), backward, "sum")


def mean(x, axis=None, keepdims=False):
    axes = _norm_axes(axis, x.ndim)
    if x.ndim and not axes:
        raise ValueError("mean: empty reduction set")
    count = math.prod(x.shape[a] for a in axes)
    return mul(sum_(x, axes, keepdims), 1.0 / count)


reduce_mean = mean


def reshape(x, shape):
    shape = tuple(shape)
    src = x.shape
    try:
        data = x.data.reshape(shape)
    except ValueError as exc:
        raise ValueError(f"reshape: cannot view {src} as {shape}") from exc
    return _make(data, (x,), lambda g: (reshape(g, src),), "reshape")


def transpose(x, axes=None):
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inv = tuple(np.argsort(axes))
    data = np.transpose(x.data, axes)
    return _make(data, (x,), lambda g: (transpose(g, inv),), "transpose")


def matmul(a, b):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    data = a.data @ b.data

    def backward(g):
        ga = matmul(g, transpose(b)) if a.requires_grad else None
        gb = matmul(transpose(a), g) if b.requires_grad else None
        return ga, gb

    return _make(data, (a, b), backward, "matmul")


def slice_last(x, lo, hi):
    """``x[..., lo:hi]``."""
    total = x.shape[-1]
    data = np.ascontiguousarray(x.data[..., lo:hi])
    return _make(data, (x,), lambda g: (embed_last(g, lo, total),), "slice_last")


def embed_last(x, lo, total):
    """Place ``x`` at ``[..., lo:lo+C]`` of a zero tensor with ``total`` channels."""
    c = x.shape[-1]
    data = np.zeros(x.shape[:-1] + (total,), dtype=x.dtype)
    data[..., lo:lo + c] = x.data
    return _make(data, (x,), lambda g: (slice_last(g, lo, lo + c),), "embed_last")


def concat_last(tensors):
    """Concatenate along the channel (last) axis."""
    tensors = list(tensors)
    data = np.concatenate([t.data for t in tensors], axis=-1)
    bounds = np.cumsum([0] + [t.shape[-1] for t in tensors])

    def backward(g):
        return tuple(slice_last(g, int(lo), int(hi)) for lo, hi in zip(bounds[:-1], bounds[1:]))

    return _make(data, tuple(tensors), backward, "concat")


# ---------------------------------------------------------------------------
# convolution and resampling
# ---------------------------------------------------------------------------

def unfold(x, k, pad):
    """im2col over NHWC: (N, H, W, C) -> (N, Ho, Wo, k, k, C)."""
    n, h, w, c = x.shape
    data = _kernels.unfold(x.data, k, pad)
    return _make(data, (x,), lambda g: (fold(g, h, w, pad),), "unfold")


def fold(cols, h, w, pad):
    """col2im, the adjoint of :func:`unfold`."""
    k = cols.shape[3]
    data = _kernels.fold(cols.data, h, w, pad)
    return _make(data, (cols,), lambda g: (unfold(g, k, pad),), "fold")


def conv2d(x, w, b=None, padding=0):
    """Stride-1 cross-correlation.

    x: (N, H, W, Cin); w: (K, K, Cin, Cout); b: (Cout,) or None.
    Output spatial extent is ``H + 2*padding - K + 1``.
    """
    if x.ndim != 4 or w.ndim != 4:
        raise ValueError("conv2d: expected x (N,H,W,C) and w (K,K,Cin,Cout)")
    n, h, wd, cin = x.shape
    k, k2, wcin, cout = w.shape
    if k != k2:
        raise ValueError("conv2d: only square kernels are supported")
    if wcin != cin:
        raise ValueError(f"conv2d: input has {cin} channels, weight expects {wcin}")
    if padding < 0 or h + 2 * padding < k or wd + 2 * padding < k:
        raise ValueError(f"conv2d: kernel {k} with padding {padding} does not fit {h}x{wd}")
    ho, wo = h + 2 * padding - k + 1, wd + 2 * padding - k + 1
    if padding == 0 and (k == 1 or (ho == 1 and wo == 1)):
        # 1x1 kernels and full-extent kernels are pure reshapes of the input
        cols = reshape(x, (n * ho * wo, k * k * cin))
    else:
        cols = reshape(unfold(x, k, padding), (n * ho * wo, k * k * cin))
    out = matmul(cols, reshape(w, (k * k * cin, cout)))
    out = reshape(out, (n, ho, wo, cout))
    if b is not None:
        out = add(out, b)
    return out


def upsample_nearest_2x(x):
    data = _kernels.upsample2x(x.data)
    return _make(data, (x,), lambda g: (block_sum_2x(g),), "upsample2x")


def block_sum_2x(x):
    n, h, w, c = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"2x block reduction needs even extents, got {h}x{w}")
    data = _kernels.block_sum2x(x.data)
    return _make(data, (x,), lambda g: (upsample_nearest_2x(g),), "block_sum2x")


def downsample_avg_2x(x):
    return mul(block_sum_2x(x), 0.25)


# ---------------------------------------------------------------------------
# differentiation
# ---------------------------------------------------------------------------

def _topo_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def _run_backward(output, grad_output, create_graph, wanted):
    if not output.requires_grad:
        raise RuntimeError("output is not attached to any tensor that requires grad")
    if grad_output is None:
        if output.size != 1:
            raise ValueError(f"backward needs a scalar output, got shape {output.shape}")
        grad_output = Tensor(np.ones_like(output.data))
    else:
        grad_output = as_tensor(grad_output, like=output)
    order = _topo_order(output)
    grads = {id(output): grad_output}
    result = {}
    with enable_grad(create_graph):
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if wanted(node):
                result[id(node)] = (node, g)
            if node._backward is None:
                continue
            pgrads = node._backward(g)
            for p, pg in zip(node._parents, pgrads):
                if pg is None or not p.requires_grad:
                    continue
                prev = grads.get(id(p))
                grads[id(p)] = pg if prev is None else add(prev, pg)
    return result


def grad(output, inputs, grad_output=None, create_graph=False, allow_unused=False):
    """Gradients of ``output`` w.r.t. each tensor in ``inputs``.

    Inputs that do not influence the output get a zero gradient, or None
    with ``allow_unused``. With ``create_graph=True`` the returned tensors
    are on the tape.
    """
    ids = {id(t) for t in inputs}
    found = _run_backward(output, grad_output, create_graph, lambda n: id(n) in ids)
    out = []
    for t in inputs:
        if id(t) in found:
            out.append(found[id(t)][1])
        elif allow_unused:
            out.append(None)
        else:
            out.append(Tensor(np.zeros_like(t.data)))
    return out


def backward(loss, grad_output=None, create_graph=False):
    """Return ``{leaf: gradient}`` for every grad-requiring leaf reachable from ``loss``."""
    found = _run_backward(loss, grad_output, create_graph, lambda n: n._backward is None)
    return {node: g for node, g in found.values()}


# ---------------------------------------------------------------------------
# finite-difference checking
# ---------------------------------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_error: float
    checked: int
    skipped: int
    tolerance: float

    @property
    def passed(self):
        return self.checked > 0 and self.max_rel_error < self.tolerance


def _eval_scalar(f, x, guard):
    with no_grad():
        if guard:
            with record_kinks() as log:
                val = f(Tensor(x)).item()
            return val, log
        return f(Tensor(x)).item(), None


def _same_pieces(a, b):
    return len(a) == len(b) and all(np.array_equal(u, v) for u, v in zip(a, b))


def grad_check(f, x, tolerance=1e-4, step=1e-4, floor=1e-6, guard_kinks=True):
    """Compare tape gradients of scalar ``f`` at ``x`` with central differences.

    Relative error per element is ``|a - n| / max(|a|, |n|, floor)``. With
    ``guard_kinks`` an element is skipped when its two stencil points fall on
    different pieces of a leaky ReLU, where the difference quotient is not an
    estimate of the derivative at all.
    """
    x = np.array(x, dtype=np.float64)
    xt = Tensor(x.copy(), requires_grad=True)
    (analytic,) = grad(f(xt), [xt])
    analytic = analytic.data.reshape(-1)
    flat = x.reshape(-1)
    worst, checked, skipped = 0.0, 0, 0
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp, kp = _eval_scalar(f, x, guard_kinks)
        flat[i] = orig - step
        fm, km = _eval_scalar(f, x, guard_kinks)
        flat[i] = orig
        if guard_kinks and not _same_pieces(kp, km):
            skipped += 1
            continue
        numeric = (fp - fm) / (2 * step)
        err = abs(analytic[i] - numeric) / max(abs(analytic[i]), abs(numeric), floor)
        worst = max(worst, err)
        checked += 1
    return GradCheckReport(worst, checked, skipped, tolerance)


def directional_check(f, params, rng, step=1e-5, floor=1e-6):
    """Directional finite-difference check of ``f()`` w.r.t. a list of leaf tensors.

    Perturbs every parameter along one random unit-variance direction and
    compares ``(f(p + h v) - f(p - h v)) / 2h`` with ``<grad, v>``. Returns
    ``(rel_error, valid)``; ``valid`` is False when a leaky-ReLU piece changed
    across the stencil.
    """
    loss = f()
    grads = grad(loss, params)
    dirs = [rng.standard_normal(p.shape).astype(p.dtype) for p in params]
    analytic = float(sum(np.vdot(g.data, d) for g, d in zip(grads, dirs)))
    originals = [p.data.copy() for p in params]

    def shifted(sign):
        for p, o, d in zip(params, originals, dirs):
            p.data = o + sign * step * d
        with no_grad(), record_kinks() as log:
            val = f().item()
        return val, log

    try:
        fp, kp = shifted(1.0)
        fm, km = shifted(-1.0)
    finally:
        for p, o in zip(params, originals):
            p.data = o
    numeric = (fp - fm) / (2 * step)
    err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)
    return err, _same_pieces(kp, km)
