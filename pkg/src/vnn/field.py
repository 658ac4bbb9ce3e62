"""Dense d-dimensional fields and the reference cross-correlation.

A field is a plain ``float64`` ndarray of rank 1 to 3.  Everything the
network computes — the Chua field itself, per-cell weights, biases, gated
Codd states — lives in such arrays.  The convolution here is the *reference*
implementation: it accumulates kernel offsets in row-major order, one
vectorized term at a time, so its output is bit-identical to a scalar
nested-loop evaluation with the same term order.  The training path uses a
numerically equivalent (but reassociated) fast route; see ``autograd``.
"""

import numpy as np

from .errors import KernelError, NumericOverflowError, ShapeError

MAX_RANK = 3
PADDING_MODES = ("zero", "circular")
ACTIVATIONS = ("relu", "tanh", "identity")


def check_shape(shape):
    """Validate a field shape, returning it as a tuple of ints."""
    dims = tuple(int(d) for d in shape)
    if not 1 <= len(dims) <= MAX_RANK:
        raise ShapeError(f"rank must be 1..{MAX_RANK}, got {len(dims)}")
    if any(d < 1 for d in dims):
        raise ShapeError(f"extents must be >= 1, got {dims}")
    return dims


def make_field(shape, fill=0.0):
    """Create a field of the given shape with every cell set to ``fill``."""
    dims = check_shape(shape)
    if not np.isfinite(fill):
        raise NumericOverflowError("fill value must be finite")
    return np.full(dims, float(fill), dtype=np.float64)


def as_field(values):
    """Coerce to a float64 array and validate rank and finiteness."""
    arr = np.ascontiguousarray(values, dtype=np.float64)
    check_shape(arr.shape)
    if not np.all(np.isfinite(arr)):
        raise NumericOverflowError("field contains NaN or Inf")
    return arr


def check_kernel(kernel):
    """Validate a kernel: odd extents on every axis so a center cell exists."""
    arr = np.ascontiguousarray(kernel, dtype=np.float64)
    check_shape(arr.shape)
    if any(e % 2 == 0 for e in arr.shape):
        raise KernelError(f"kernel extents must be odd, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NumericOverflowError("kernel contains NaN or Inf")
    return arr


def pad_for_kernel(x, kshape, padding):
    """Pad ``x`` by half the kernel extent per axis (zero fill or wrap)."""
    halves = [e // 2 for e in kshape]
    widths = [(h, h) for h in halves]
    if padding == "zero":
        return np.pad(x, widths)
    if padding == "circular":
        return np.pad(x, widths, mode="wrap")
    raise ValueError(f"unknown padding mode {padding!r}")


def convolve(x, kernel, padding="zero"):
    """Same-shape cross-correlation of a field with a centered kernel.

    ``out[c] = sum_off kernel[center + off] * x[c + off]`` with out-of-range
    reads either zero (``"zero"``) or wrapped (``"circular"``).  No kernel
    flip is applied.  Terms accumulate in row-major order over kernel
    offsets, which fixes the floating-point result bit-for-bit.
    """
    x = as_field(x)
    k = check_kernel(kernel)
    if x.ndim != k.ndim:
        raise ShapeError(f"kernel rank {k.ndim} != field rank {x.ndim}")
    if padding == "circular" and any(ke > xe for ke, xe in zip(k.shape, x.shape)):
        raise ShapeError(
            f"kernel {k.shape} larger than field {x.shape} under circular padding"
        )
    xpad = pad_for_kernel(x, k.shape, padding)
    out = np.zeros_like(x)
    for off in np.ndindex(*k.shape):
        view = xpad[tuple(slice(o, o + n) for o, n in zip(off, x.shape))]
        out += k[off] * view
    if not np.all(np.isfinite(out)):
        raise NumericOverflowError("convolution overflowed")
    return out


def _check_same_shape(a, b):
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")


def hadamard(a, b):
    """Element-wise product of two same-shaped fields."""
    a, b = as_field(a), as_field(b)
    _check_same_shape(a, b)
    return a * b


def add(a, b):
    """Element-wise sum of two same-shaped fields."""
    a, b = as_field(a), as_field(b)
    _check_same_shape(a, b)
    return a + b


def axpy(alpha, a, b):
    """``alpha * a + b`` element-wise."""
    a, b = as_field(a), as_field(b)
    _check_same_shape(a, b)
    return float(alpha) * a + b


def apply_activation(x, kind):
    """Apply an activation element-wise; ``identity`` returns the input."""
    if kind not in ACTIVATIONS:
        raise ValueError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")
    x = as_field(x)
    if kind == "relu":
        return np.maximum(x, 0.0)
    if kind == "tanh":
        return np.tanh(x)
    return x


def mean_over(fields):
    """Element-wise arithmetic mean of a non-empty list of same-shaped fields."""
    if not fields:
        raise ValueError("mean_over requires at least one field")
    arrs = [as_field(f) for f in fields]
    for a in arrs[1:]:
        _check_same_shape(arrs[0], a)
    return np.mean(np.stack(arrs), axis=0)
