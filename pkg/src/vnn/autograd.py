"""Reverse-mode differentiation over the network's primitive operations.

The engine is a tape of ``Tensor`` nodes built eagerly as the forward pass
runs.  Each primitive stores its parents and a closure computing exact
adjoints; ``backward`` walks the tape in reverse topological order.  The
primitive set is deliberately small: element-wise algebra, activations,
Codd-state gating, the kernel-bank convolution, averaging, cell
gather/scatter, and the two loss heads.  Values are float64 throughout and
leading axes carry the batch, so one tape evaluates a whole minibatch.

Convolutions here take the fast route: the padded input is unfolded into a
window matrix once and all M kernels are applied as a single matrix product.
This reassociates floating-point sums relative to ``field.convolve`` (the
bit-exact reference) but agrees with it to ~1e-13 relative; both directions
of the adjoint reuse the same window matrix.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import NumericOverflowError, ShapeError


class Tensor:
    """A node in the recorded program: a float64 array plus adjoint plumbing."""

    __slots__ = ("value", "grad", "_parents", "_bw")

    def __init__(self, value, parents=(), bw=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self._parents = parents
        self._bw = bw

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Tensor(shape={self.value.shape})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)


def _value(x):
    return x.value if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape``, undoing NumPy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _binary(a, b, out, bw_a, bw_b):
    parents, bws = [], []
    if isinstance(a, Tensor):
        parents.append(a)
        bws.append(bw_a)
    if isinstance(b, Tensor):
        parents.append(b)
        bws.append(bw_b)

    def bw(g):
        return tuple(f(g) for f in bws)

    return Tensor(out, tuple(parents), bw if parents else None)


def add(a, b):
    av, bv = _value(a), _value(b)
    return _binary(
        a, b, av + bv,
        lambda g: _unbroadcast(g, av.shape),
        lambda g: _unbroadcast(g, bv.shape),
    )


def sub(a, b):
    av, bv = _value(a), _value(b)
    return _binary(
        a, b, av - bv,
        lambda g: _unbroadcast(g, av.shape),
        lambda g: _unbroadcast(-g, bv.shape),
    )


def mul(a, b):
    av, bv = _value(a), _value(b)
    return _binary(
        a, b, av * bv,
        lambda g: _unbroadcast(g * bv, av.shape),
        lambda g: _unbroadcast(g * av, bv.shape),
    )


def activation(x, kind):
    """Element-wise relu / tanh / identity; relu subgradient at 0 is 0."""
    xv = _value(x)
    if kind == "identity":
        return x if isinstance(x, Tensor) else Tensor(xv)
    if kind == "relu":
        out = np.maximum(xv, 0.0)
        mask = xv > 0.0
        bw = lambda g: (g * mask,)
    elif kind == "tanh":
        out = np.tanh(xv)
        bw = lambda g: (g * (1.0 - out * out),)
    else:
        raise ValueError(f"unknown activation {kind!r}")
    if not isinstance(x, Tensor):
        return Tensor(out)
    return Tensor(out, (x,), bw)


def sigmoid(x):
    xv = _value(x)
    out = np.empty_like(xv)
    pos = xv >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-xv[pos]))
    e = np.exp(xv[~pos])
    out[~pos] = e / (1.0 + e)
    if not isinstance(x, Tensor):
        return Tensor(out)
    return Tensor(out, (x,), lambda g: (g * out * (1.0 - out),))


def gate_states(logits, frozen_mask, frozen_values):
    """Gated Codd states: sigmoid of free logits, pinned values elsewhere.

    Frozen cells take ``frozen_values`` exactly (this is how hard 0/1 states
    and blocked cells are expressed) and receive an exactly-zero gradient.
    """
    lv = _value(logits)
    mask = np.asarray(frozen_mask, dtype=bool)
    fv = np.asarray(frozen_values, dtype=np.float64)
    sig = sigmoid(lv).value
    out = np.where(mask, fv, sig)
    if not isinstance(logits, Tensor):
        return Tensor(out)

    def bw(g):
        d = g * sig * (1.0 - sig)
        d[mask] = 0.0
        return (d,)

    return Tensor(out, (logits,), bw)


def mean_tensors(tensors):
    """Element-wise mean of same-shaped tensors (averaging across kernels)."""
    if not tensors:
        raise ValueError("mean_tensors requires at least one tensor")
    n = len(tensors)
    out = tensors[0].value.copy()
    for t in tensors[1:]:
        out += t.value
    out /= n
    parents = tuple(t for t in tensors if isinstance(t, Tensor))
    return Tensor(out, parents, lambda g: tuple(g / n for _ in parents))


def mean_axis0(x):
    """Mean over the leading axis (collapses the kernel-branch axis)."""
    xv = _value(x)
    out = xv.mean(axis=0)
    if not isinstance(x, Tensor):
        return Tensor(out)
    n = xv.shape[0]
    return Tensor(out, (x,), lambda g: (np.broadcast_to(g / n, xv.shape).copy(),))


def slice_axis0(x, i):
    """Select ``x[i:i+1]`` along the leading axis, keeping the axis."""
    xv = _value(x)
    out = xv[i : i + 1]
    if not isinstance(x, Tensor):
        return Tensor(out)

    def bw(g):
        dx = np.zeros_like(xv)
        dx[i : i + 1] = g
        return (dx,)

    return Tensor(out, (x,), bw)


# ---------------------------------------------------------------------------
# Kernel-bank convolution


def _pad_widths(kshape, skip_last):
    widths = [(0, 0)]  # batch axis
    for i, e in enumerate(kshape):
        if skip_last and i == len(kshape) - 1:
            widths.append((0, 0))
        else:
            widths.append((e // 2, e // 2))
    return widths


def _unfold(xv, kshape, padding, depth_valid):
    """Pad and unfold (B, *S) into a window matrix (B*N, prod(kshape)).

    With ``depth_valid`` the last axis is contracted fully (no padding, no
    sliding): the window spans the whole slab thickness.
    """
    widths = _pad_widths(kshape, depth_valid)
    xpad = np.pad(xv, widths, mode="wrap" if padding == "circular" else "constant")
    spatial_axes = tuple(range(1, xv.ndim))
    if depth_valid:
        win = sliding_window_view(xpad, kshape[:-1], axis=spatial_axes[:-1])
        # (B, *lat, depth, *klat) -> (B, *lat, *klat, depth)
        win = np.moveaxis(win, len(spatial_axes), -1)
        lat_n = int(np.prod(xv.shape[1:-1]))
        wmat = win.reshape(xv.shape[0] * lat_n, int(np.prod(kshape)))
    else:
        win = sliding_window_view(xpad, kshape, axis=spatial_axes)
        wmat = win.reshape(int(np.prod(xv.shape)), int(np.prod(kshape)))
    return xpad, wmat


def _fold_padding(dxpad, xshape, kshape, padding, depth_valid):
    """Collapse gradient on the padded array back onto the input."""
    widths = _pad_widths(kshape, depth_valid)
    if padding == "circular":
        for ax, (lo, hi) in enumerate(widths):
            if lo == 0 and hi == 0:
                continue
            n = dxpad.shape[ax] - lo - hi
            head = [slice(None)] * dxpad.ndim
            tail = [slice(None)] * dxpad.ndim
            core = [slice(None)] * dxpad.ndim
            core[ax] = slice(lo, lo + n)
            dxcore = dxpad[tuple(core)].copy()
            if lo:
                head[ax] = slice(0, lo)
                wrap = [slice(None)] * dxpad.ndim
                wrap[ax] = slice(n - lo, n)
                dxcore[tuple(wrap)] += dxpad[tuple(head)]
            if hi:
                tail[ax] = slice(lo + n, lo + n + hi)
                wrap = [slice(None)] * dxpad.ndim
                wrap[ax] = slice(0, hi)
                dxcore[tuple(wrap)] += dxpad[tuple(tail)]
            dxpad = dxcore
        return dxpad
    sl = tuple(slice(lo, lo + n) for (lo, _), n in zip(widths, xshape))
    return dxpad[sl]


def conv_bank(x, kernels, padding="zero", depth_valid=False):
    """Correlate a batch of fields with every kernel in the bank at once.

    ``x`` is (B, *S); ``kernels`` is (M, *K) with odd sliding extents.  The
    result is (M, B, *S) under same-padding.  With ``depth_valid`` the last
    axis of the field is a slab-thickness axis contracted in full, and the
    result keeps it with extent 1 (broadcast downstream).
    """
    xv, kv = _value(x), _value(kernels)
    kshape = kv.shape[1:]
    if len(kshape) != xv.ndim - 1:
        raise ShapeError(f"kernel rank {len(kshape)} != field rank {xv.ndim - 1}")
    slide = kshape[:-1] if depth_valid else kshape
    if any(e % 2 == 0 for e in slide):
        raise ShapeError(f"sliding kernel extents must be odd, got {kshape}")
    if depth_valid and kshape[-1] != xv.shape[-1]:
        raise ShapeError(
            f"slab thickness {xv.shape[-1]} != kernel depth extent {kshape[-1]}"
        )
    if padding == "circular" and any(
        ke > xe for ke, xe in zip(slide, xv.shape[1:])
    ):
        raise ShapeError("kernel larger than field under circular padding")

    m = kv.shape[0]
    kmat = kv.reshape(m, -1)
    _, wmat = _unfold(xv, kshape, padding, depth_valid)
    out_mat = wmat @ kmat.T  # (B*N, M)
    if depth_valid:
        out_shape = (m, xv.shape[0]) + xv.shape[1:-1] + (1,)
    else:
        out_shape = (m,) + xv.shape
    out = np.ascontiguousarray(out_mat.T).reshape(out_shape)

    parents = []
    x_is_t, k_is_t = isinstance(x, Tensor), isinstance(kernels, Tensor)
    if x_is_t:
        parents.append(x)
    if k_is_t:
        parents.append(kernels)
    if not parents:
        return Tensor(out)

    def bw(g):
        gmat = g.reshape(m, -1)  # (M, B*N)
        grads = []
        if x_is_t:
            q = kmat.T @ gmat  # (prod(K), B*N)
            widths = _pad_widths(kshape, depth_valid)
            pad_shape = tuple(n + lo + hi for n, (lo, hi) in zip(xv.shape, widths))
            dxpad = np.zeros(pad_shape)
            if depth_valid:
                lat = xv.shape[1:-1]
                depth = kshape[-1]
                qv = q.reshape(kshape[:-1] + (depth, xv.shape[0]) + lat)
                for off in np.ndindex(*kshape[:-1]):
                    sl = (slice(None),) + tuple(
                        slice(o, o + n) for o, n in zip(off, lat)
                    ) + (slice(None),)
                    dxpad[sl] += np.moveaxis(qv[off], 0, -1)
            else:
                qv = q.reshape(kshape + xv.shape)
                for off in np.ndindex(*kshape):
                    sl = (slice(None),) + tuple(
                        slice(o, o + n) for o, n in zip(off, xv.shape[1:])
                    )
                    dxpad[sl] += qv[off]
            grads.append(_fold_padding(dxpad, xv.shape, kshape, padding, depth_valid))
        if k_is_t:
            dk = gmat @ wmat  # (M, prod(K))
            grads.append(dk.reshape(kv.shape))
        return tuple(grads)

    return Tensor(out, tuple(parents), bw)


# ---------------------------------------------------------------------------
# Placement gather / scatter


def gather_cells(x, flat_idx):
    """Read cells at flattened indices: (B, *S) -> (B, n)."""
    xv = _value(x)
    flat = xv.reshape(xv.shape[0], -1)
    idx = np.asarray(flat_idx, dtype=np.intp)
    out = flat[:, idx]
    if not isinstance(x, Tensor):
        return Tensor(out)

    def bw(g):
        dx = np.zeros_like(flat)
        dx[:, idx] = g  # placement coords are pairwise distinct
        return (dx.reshape(xv.shape),)

    return Tensor(out, (x,), bw)


def write_cells(x, flat_idx, values):
    """Overwrite cells at flattened indices with constant source values.

    Used to clamp input/control sources into the field; gradient flows
    through untouched cells only.
    """
    xv = _value(x)
    idx = np.asarray(flat_idx, dtype=np.intp)
    vals = np.asarray(values, dtype=np.float64)
    out = xv.copy()
    out.reshape(xv.shape[0], -1)[:, idx] = vals
    if not isinstance(x, Tensor):
        return Tensor(out)

    def bw(g):
        dx = g.copy()
        dx.reshape(g.shape[0], -1)[:, idx] = 0.0
        return (dx,)

    return Tensor(out, (x,), bw)


# ---------------------------------------------------------------------------
# Loss heads (batch-mean scalars)


def softmax_xent_loss(logits, labels):
    """Mean cross-entropy of softmax(logits) rows against integer labels."""
    lv = _value(logits)
    labels = np.asarray(labels, dtype=np.intp)
    b = lv.shape[0]
    shifted = lv - lv.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    loss = (lse - shifted[np.arange(b), labels]).mean()
    if not isinstance(logits, Tensor):
        return Tensor(loss)

    def bw(g):
        p = np.exp(shifted)
        p /= p.sum(axis=1, keepdims=True)
        p[np.arange(b), labels] -= 1.0
        return (g * p / b,)

    return Tensor(loss, (logits,), bw)


def bce_logits_loss(outputs, targets):
    """Mean binary cross-entropy of sigmoid(outputs) against {0,1} targets."""
    ov = _value(outputs)
    t = np.asarray(targets, dtype=np.float64)
    if ov.shape != t.shape:
        raise ShapeError(f"outputs {ov.shape} vs targets {t.shape}")
    # max(o,0) - o*t + log1p(exp(-|o|)) is exact and never overflows
    loss = (np.maximum(ov, 0.0) - ov * t + np.log1p(np.exp(-np.abs(ov)))).mean()
    if not isinstance(outputs, Tensor):
        return Tensor(loss)
    n = ov.size

    def bw(g):
        s = np.empty_like(ov)
        pos = ov >= 0
        s[pos] = 1.0 / (1.0 + np.exp(-ov[pos]))
        e = np.exp(ov[~pos])
        s[~pos] = e / (1.0 + e)
        return (g * (s - t) / n,)

    return Tensor(loss, (outputs,), bw)


def half_sum_sq(x):
    """0.5 * sum(x^2); handy quadratic objective for checks."""
    xv = _value(x)
    out = 0.5 * float((xv * xv).sum())
    if not isinstance(x, Tensor):
        return Tensor(out)
    return Tensor(out, (x,), lambda g: (g * xv,))


def affine(x, w, b):
    """Dense layer x @ w.T + b for the reference MLP baselines."""
    xv, wv, bv = _value(x), _value(w), _value(b)
    out = xv @ wv.T + bv
    parents, bws = [], []
    if isinstance(x, Tensor):
        parents.append(x)
        bws.append(lambda g: g @ wv)
    if isinstance(w, Tensor):
        parents.append(w)
        bws.append(lambda g: g.T @ xv)
    if isinstance(b, Tensor):
        parents.append(b)
        bws.append(lambda g: g.sum(axis=0))
    if not parents:
        return Tensor(out)
    return Tensor(out, tuple(parents), lambda g: tuple(f(g) for f in bws))


# ---------------------------------------------------------------------------
# Driver


def check_finite(t, what):
    """Raise if a tape value went non-finite; ``what`` names the culprit."""
    if not np.all(np.isfinite(t.value)):
        raise NumericOverflowError(f"non-finite value in {what}")
    return t


def _topo_order(root):
    order, visited, stack = [], set(), [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            stack.append((p, False))
    return order


def backward(loss):
    """Propagate adjoints from a scalar loss to every reachable leaf."""
    if loss.value.ndim != 0:
        raise ShapeError("backward expects a scalar loss")
    order = _topo_order(loss)
    loss.grad = np.ones((), dtype=np.float64)
    for node in reversed(order):
        if node._bw is None or node.grad is None:
            continue
        for parent, g in zip(node._parents, node._bw(node.grad)):
            if parent.grad is None:
                parent.grad = np.zeros_like(parent.value)
            parent.grad += g


def grad(program, params, batch):
    """Evaluate a recorded program and return (loss, exact adjoints).

    ``program(param_tensors, batch)`` rebuilds the tape; ``params`` maps
    family names to float64 arrays.  The returned gradient set mirrors the
    parameter dict; frozen state cells come back exactly zero.
    """
    tensors = {name: Tensor(arr) for name, arr in params.items()}
    loss = program(tensors, batch)
    if not np.isfinite(loss.value):
        raise NumericOverflowError("non-finite loss")
    backward(loss)
    grads = {
        name: (t.grad if t.grad is not None else np.zeros_like(t.value))
        for name, t in tensors.items()
    }
    return float(loss.value), grads


def finite_difference_check(program, params, batch, epsilon=1e-5, n_coords=64, seed=0):
    """Max relative error between analytic gradients and central differences.

    Samples at least ``n_coords`` coordinates spread over all parameter
    families; error is |analytic - fd| / max(1, |analytic|).
    """
    if not 1e-7 <= epsilon <= 1e-3:
        raise ValueError(f"epsilon {epsilon} outside [1e-7, 1e-3]")
    _, grads = grad(program, params, batch)
    rng = np.random.default_rng(seed)
    names = sorted(params)
    sizes = {n: params[n].size for n in names}
    total = sum(sizes.values())
    want = min(n_coords, total)
    takes = {n: min(sizes[n], max(1, round(want * sizes[n] / total))) for n in names}
    # top up from the largest families if rounding left us short
    for n in sorted(names, key=lambda n: -sizes[n]):
        short = want - sum(takes.values())
        if short <= 0:
            break
        takes[n] = min(sizes[n], takes[n] + short)
    worst = 0.0
    for name in names:
        arr = params[name]
        coords = rng.choice(arr.size, size=takes[name], replace=False)
        for c in coords:
            orig = arr.flat[c]
            arr.flat[c] = orig + epsilon
            lp, _ = _loss_only(program, params, batch)
            arr.flat[c] = orig - epsilon
            lm, _ = _loss_only(program, params, batch)
            arr.flat[c] = orig
            fd = (lp - lm) / (2 * epsilon)
            a = grads[name].flat[c]
            err = abs(a - fd) / max(1.0, abs(a))
            worst = max(worst, err)
    return worst


def _loss_only(program, params, batch):
    tensors = {name: Tensor(arr) for name, arr in params.items()}
    loss = program(tensors, batch)
    return float(loss.value), None
