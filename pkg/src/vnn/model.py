"""The Von Neumann Network: parameter fields, gated steps, and forward pass.

A model is a Chua field plus per-cell weights ``W``, biases ``B``, Codd
states ``S`` and a bank of learnable convolution kernels (the propagators).
One timestep convolves the field with every kernel, then each cell blends a
weighted pass-through of the convolved signal with an activated decision on
it, according to its gated state:

    next = mean_j [ (1 - S) * (G_j * C) * W  +  S * sigma(G_j * C + B) ]

``full`` mode applies this over the whole d-dimensional field each step;
``hyperplane`` mode restricts it to (d-1)-dimensional layer slabs that
advance ``omega`` depth indices per step, mimicking MLP layering;
``correspondence`` mode pins states and kernels so the network reproduces a
dense reference MLP exactly.
"""

from dataclasses import dataclass, field as dc_field

import numpy as np

from . import autograd as ag
from .errors import GeometryError, PlacementError, ShapeError
from .field import ACTIVATIONS, PADDING_MODES, check_shape

ROLES = ("input", "control", "output")
ENCODINGS = ("raw-real", "bit")
MODES = ("full", "hyperplane", "correspondence")

# internal seed for the fixed mixing columns of the correspondence builder
_CORRESPONDENCE_SEED = 0xC0DD


@dataclass
class Placement:
    """Binding of an external vector to an ordered set of field cells."""

    role: str
    coords: np.ndarray  # (n, d) int
    encoding: str = "bit"

    def __post_init__(self):
        self.coords = np.atleast_2d(np.asarray(self.coords, dtype=np.intp))
        if self.role not in ROLES:
            raise PlacementError(f"unknown role {self.role!r}")
        if self.encoding not in ENCODINGS:
            raise PlacementError(f"unknown encoding {self.encoding!r}")
        if len(np.unique(self.coords, axis=0)) != len(self.coords):
            raise PlacementError(f"{self.role} placement has duplicate coordinates")

    def __len__(self):
        return len(self.coords)


@dataclass
class ModelConfig:
    field_shape: tuple
    mode: str = "full"
    M: int = 1
    k: int = 3
    omega: int = 1
    steps: int = 1
    activation: str = "relu"
    padding: str = "zero"
    clamp_inputs: str = "every-step"
    placements: list = dc_field(default_factory=list)
    average_per_step: bool = True

    def __post_init__(self):
        self.field_shape = check_shape(self.field_shape)

    @property
    def rank(self):
        return len(self.field_shape)

    def by_role(self, role):
        return [p for p in self.placements if p.role == role]

    def validate(self):
        if self.mode not in MODES:
            raise ShapeError(f"unknown mode {self.mode!r}")
        if self.activation not in ACTIVATIONS:
            raise ShapeError(f"unknown activation {self.activation!r}")
        if self.padding not in PADDING_MODES:
            raise ShapeError(f"unknown padding {self.padding!r}")
        if self.clamp_inputs not in ("every-step", "once"):
            raise ShapeError(f"unknown clamp_inputs {self.clamp_inputs!r}")
        if self.M < 1 or self.omega < 1 or self.steps < 1:
            raise ShapeError("M, omega and steps must all be >= 1")
        if self.k < 1 or self.k % 2 == 0:
            raise ShapeError(f"kernel extent k must be odd and >= 1, got {self.k}")
        if self.mode == "hyperplane" and self.rank < 2:
            raise GeometryError("hyperplane mode needs a field of rank >= 2")
        for p in self.placements:
            if p.coords.shape[1] != self.rank:
                raise PlacementError(
                    f"{p.role} coordinates are rank {p.coords.shape[1]}, field is rank {self.rank}"
                )
            if np.any(p.coords < 0) or np.any(p.coords >= np.array(self.field_shape)):
                raise PlacementError(f"{p.role} placement out of field bounds")
        need = required_steps(self)
        if self.steps < need:
            raise GeometryError(
                f"steps={self.steps} cannot connect inputs to outputs: a kernel of "
                f"extent k covers at most (k-1)/2 cells per step, so at least "
                f"{need} steps are required for this layout"
            )


@dataclass
class CoddStateField:
    """Raw state logits plus the frozen mask/values that pin hard 0/1 cells."""

    logits: np.ndarray
    frozen_mask: np.ndarray
    frozen_values: np.ndarray

    @classmethod
    def free(cls, shape):
        return cls(np.zeros(shape), np.zeros(shape, bool), np.zeros(shape))

    def gated(self):
        return ag.gate_states(self.logits, self.frozen_mask, self.frozen_values).value

    @property
    def n_free(self):
        return int((~self.frozen_mask).sum())


def gate_states(s):
    """Gated per-cell states in [0,1]: sigmoid where free, pinned elsewhere."""
    return s.gated()


@dataclass
class GreensKernelBank:
    """M same-shaped convolution kernels stored stacked as (M, *kshape)."""

    stack: np.ndarray

    def __post_init__(self):
        self.stack = np.asarray(self.stack, dtype=np.float64)
        if self.stack.ndim < 2:
            raise ShapeError("kernel bank must be (M, *kernel_shape)")

    def __len__(self):
        return self.stack.shape[0]

    def __getitem__(self, j):
        return self.stack[j]

    @property
    def kernel_shape(self):
        return self.stack.shape[1:]


@dataclass
class ParameterSet:
    W: np.ndarray
    B: np.ndarray
    S: CoddStateField
    kernels: GreensKernelBank


@dataclass
class VNNModel:
    """A config plus its parameters (one set, or one per hyperplane layer)."""

    config: ModelConfig
    params: object  # ParameterSet | list[ParameterSet]

    def layer_sets(self):
        return self.params if isinstance(self.params, list) else [self.params]


# ---------------------------------------------------------------------------
# Reference dense MLP (baseline and correspondence target)


@dataclass
class ReferenceMLP:
    weights: list  # (n_out, n_in) matrices
    biases: list
    activation: str = "relu"
    final_activation: bool = True

    @property
    def widths(self):
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @classmethod
    def random(cls, widths, rng, activation="relu", final_activation=True):
        ws, bs = [], []
        for n_in, n_out in zip(widths[:-1], widths[1:]):
            ws.append(rng.normal(size=(n_out, n_in)) / np.sqrt(n_in))
            bs.append(rng.normal(size=n_out) * 0.1)
        return cls(ws, bs, activation, final_activation)

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        h = np.atleast_2d(x)
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w.T + b
            if i < last or self.final_activation:
                h = ag.activation(ag.Tensor(h), self.activation).value
        return h[0] if squeeze else h


# ---------------------------------------------------------------------------
# Parameter init and flattening


def init_params(cfg, rng, kernel_std=None, w_std=0.01, b_std=0.0):
    """Near-neutral start: W ~ 1, B = 0, free states at 0.5.

    Kernel entries default to std 1/sqrt(kernel taps); tasks pass hotter or
    colder scales (and W/B spreads) where training demands it.
    """
    cfg.validate()

    def one_set(field_shape, kshape):
        std = kernel_std if kernel_std is not None else 1.0 / np.sqrt(np.prod(kshape))
        return ParameterSet(
            W=1.0 + w_std * rng.normal(size=field_shape),
            B=b_std * rng.normal(size=field_shape),
            S=CoddStateField.free(field_shape),
            kernels=GreensKernelBank(rng.normal(size=(cfg.M,) + kshape) * std),
        )

    if cfg.mode == "hyperplane":
        lat = cfg.field_shape[:-1]
        slab = lat + (cfg.omega,)
        kshape = (cfg.k,) * len(lat) + (cfg.omega,)
        return [one_set(slab, kshape) for _ in range(cfg.steps)]
    kshape = (cfg.k,) * cfg.rank
    return one_set(cfg.field_shape, kshape)


def params_to_dict(model):
    """Flatten trainable arrays into the name->array dict the tape consumes."""
    sets = model.layer_sets()
    if isinstance(model.params, list):
        out = {}
        for t, ps in enumerate(sets):
            out[f"layer{t:02d}.W"] = ps.W
            out[f"layer{t:02d}.B"] = ps.B
            out[f"layer{t:02d}.S_logits"] = ps.S.logits
            out[f"layer{t:02d}.kernels"] = ps.kernels.stack
        return out
    ps = sets[0]
    return {
        "W": ps.W,
        "B": ps.B,
        "S_logits": ps.S.logits,
        "kernels": ps.kernels.stack,
    }


def dict_to_params(model, d):
    """Write arrays from a flat dict back into the model's parameter sets."""
    if isinstance(model.params, list):
        for t, ps in enumerate(model.params):
            ps.W = d[f"layer{t:02d}.W"]
            ps.B = d[f"layer{t:02d}.B"]
            ps.S.logits = d[f"layer{t:02d}.S_logits"]
            ps.kernels.stack = d[f"layer{t:02d}.kernels"]
    else:
        ps = model.params
        ps.W, ps.B = d["W"], d["B"]
        ps.S.logits = d["S_logits"]
        ps.kernels.stack = d["kernels"]
    return model


# ---------------------------------------------------------------------------
# Step distance and placements


def _kernel_extents(cfg):
    if cfg.mode == "hyperplane":
        return (cfg.k,) * (cfg.rank - 1) + (cfg.omega,)
    if cfg.mode == "correspondence":
        # one-sided column kernel: k rows, 3 columns (reach 1 along depth)
        return (cfg.k, 3)
    return (cfg.k,) * cfg.rank


def required_steps(cfg, kernel_extents=None):
    """Fewest steps connecting every input/control cell to every output cell.

    Per step a kernel of extent k reaches (k-1)/2 cells along its axis; in
    hyperplane mode the depth axis advances omega per step instead.
    """
    sources = np.concatenate(
        [p.coords for p in cfg.placements if p.role in ("input", "control")]
        or [np.zeros((0, cfg.rank), dtype=np.intp)]
    )
    outputs = np.concatenate(
        [p.coords for p in cfg.placements if p.role == "output"]
        or [np.zeros((0, cfg.rank), dtype=np.intp)]
    )
    if len(sources) == 0 or len(outputs) == 0:
        return 1
    dist = np.abs(sources[:, None, :] - outputs[None, :, :]).max(axis=(0, 1))

    if cfg.mode == "hyperplane":
        depth_need = int(np.ceil(dist[-1] / cfg.omega))
        lateral = dist[:-1]
        reach = (cfg.k - 1) // 2
        if reach == 0 and lateral.max(initial=0) > 0:
            raise GeometryError("k=1 kernel cannot reach laterally displaced outputs")
        lat_need = 0 if reach == 0 else int(np.ceil(lateral.max(initial=0) / reach))
        return max(depth_need, lat_need, 1)

    extents = kernel_extents or _kernel_extents(cfg)
    need = 0
    for d, ke in zip(dist, extents):
        reach = (ke - 1) // 2
        if reach == 0:
            if d > 0:
                raise GeometryError(
                    f"kernel extent 1 cannot reach outputs {d} cells away"
                )
            continue
        need = max(need, int(np.ceil(d / reach)))
    return need


def _flat_indices(coords, shape):
    return np.ravel_multi_index(tuple(coords.T), shape)


def _source_spec(cfg):
    """Concatenated flat indices and column-order of input+control cells."""
    idx = []
    for role in ("input", "control"):
        for p in cfg.by_role(role):
            idx.append(_flat_indices(p.coords, cfg.field_shape))
    if not idx:
        return np.zeros(0, dtype=np.intp)
    return np.concatenate(idx)


def _output_indices(cfg):
    idx = [_flat_indices(p.coords, cfg.field_shape) for p in cfg.by_role("output")]
    if not idx:
        raise PlacementError("model has no output placement")
    return np.concatenate(idx)


def _slab_flat_indices(cfg, coords, slab):
    """Map field coords into flat indices of a thickness-omega slab."""
    lat = cfg.field_shape[:-1]
    depth = coords[:, -1]
    lo, hi = slab * cfg.omega, (slab + 1) * cfg.omega
    if np.any(depth < lo) or np.any(depth >= hi):
        raise GeometryError(
            f"cells at depths {sorted(set(depth.tolist()))} are outside slab {slab} "
            f"(depth range [{lo}, {hi}))"
        )
    local = np.concatenate([coords[:, :-1], (depth - lo)[:, None]], axis=1)
    return _flat_indices(local, lat + (cfg.omega,))


# ---------------------------------------------------------------------------
# Forward pass


def _branch_mix(conv, S, passgain, bias, kind):
    act = ag.activation(ag.add(conv, bias), kind)
    return ag.add(ag.mul(conv, passgain), ag.mul(S, act))


def _gating(pt, prefix=""):
    S = ag.gate_states(
        pt[prefix + "S_logits"].tensor, pt[prefix + "S_logits"].mask,
        pt[prefix + "S_logits"].fvals,
    )
    passgain = ag.mul(ag.sub(1.0, S), pt[prefix + "W"].tensor)
    return S, passgain


class _P:
    """Pairs a trainable tensor with its non-trainable companions."""

    __slots__ = ("tensor", "mask", "fvals")

    def __init__(self, tensor, mask=None, fvals=None):
        self.tensor = tensor
        self.mask = mask
        self.fvals = fvals


def _wrap_params(model, tensors=None):
    """Attach frozen-state constants to (possibly tape-tracked) parameters."""
    flat = params_to_dict(model)
    if tensors is None:
        tensors = flat
    wrapped = {}
    for t, ps in enumerate(model.layer_sets()):
        prefix = f"layer{t:02d}." if isinstance(model.params, list) else ""
        wrapped[prefix + "W"] = _P(tensors[prefix + "W"])
        wrapped[prefix + "B"] = _P(tensors[prefix + "B"])
        wrapped[prefix + "S_logits"] = _P(
            tensors[prefix + "S_logits"], ps.S.frozen_mask, ps.S.frozen_values
        )
        wrapped[prefix + "kernels"] = _P(tensors[prefix + "kernels"])
    return wrapped


def forward_tensors(model, tensors, X, CTL=None):
    """Run the batched forward pass on the tape; returns (B, n_out) outputs."""
    cfg = model.config
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    n_in = sum(len(p) for p in cfg.by_role("input"))
    n_ctl = sum(len(p) for p in cfg.by_role("control"))
    if X.shape[1] != n_in:
        raise PlacementError(f"input vector length {X.shape[1]} != placement size {n_in}")
    if n_ctl:
        CTL = np.atleast_2d(np.asarray(CTL, dtype=np.float64))
        if CTL.shape[1] != n_ctl:
            raise PlacementError(
                f"control vector length {CTL.shape[1]} != placement size {n_ctl}"
            )
        src_vals = np.concatenate([X, CTL], axis=1)
    else:
        src_vals = X
    pt = _wrap_params(model, tensors)
    if cfg.mode == "hyperplane":
        return _forward_hyper(model, pt, src_vals)
    return _forward_full(model, pt, src_vals)


def _forward_full(model, pt, src_vals):
    cfg = model.config
    b = src_vals.shape[0]
    src_idx = _source_spec(cfg)
    out_idx = _output_indices(cfg)
    S, passgain = _gating(pt)
    bias = pt["B"].tensor
    kern = pt["kernels"].tensor
    kind = cfg.activation
    zero = ag.Tensor(np.zeros((b,) + cfg.field_shape))
    c0 = ag.write_cells(zero, src_idx, src_vals)
    clamp = cfg.clamp_inputs == "every-step"

    if cfg.average_per_step:
        c = c0
        for t in range(1, cfg.steps + 1):
            conv = ag.conv_bank(c, kern, cfg.padding)
            c = ag.mean_axis0(_branch_mix(conv, S, passgain, bias, kind))
            ag.check_finite(c, f"step {t}")
            if clamp and t < cfg.steps:
                c = ag.write_cells(c, src_idx, src_vals)
        return ag.gather_cells(c, out_idx)

    # deferred averaging: each kernel evolves its own branch field
    m = kern.shape[0] if isinstance(kern, ag.Tensor) else np.shape(kern)[0]
    branches = [c0] * m
    for t in range(1, cfg.steps + 1):
        nxt = []
        for j in range(m):
            conv = ag.conv_bank(branches[j], ag.slice_axis0(kern, j), cfg.padding)
            cj = ag.mean_axis0(_branch_mix(conv, S, passgain, bias, kind))
            ag.check_finite(cj, f"step {t} (branch {j})")
            if clamp and t < cfg.steps:
                cj = ag.write_cells(cj, src_idx, src_vals)
            nxt.append(cj)
        branches = nxt
    return ag.gather_cells(ag.mean_tensors(branches), out_idx)


def _forward_hyper(model, pt, src_vals):
    cfg = model.config
    b = src_vals.shape[0]
    lat = cfg.field_shape[:-1]
    src_coords = np.concatenate(
        [p.coords for role in ("input", "control") for p in cfg.by_role(role)]
    )
    src_idx = _slab_flat_indices(cfg, src_coords, 0)
    out_coords = np.concatenate([p.coords for p in cfg.by_role("output")])
    out_idx = _slab_flat_indices(cfg, out_coords, cfg.steps)
    if (cfg.steps + 1) * cfg.omega > cfg.field_shape[-1]:
        raise GeometryError(
            f"{cfg.steps} slabs of thickness {cfg.omega} exceed field depth "
            f"{cfg.field_shape[-1]}"
        )
    zero = ag.Tensor(np.zeros((b,) + lat + (cfg.omega,)))
    h0 = ag.write_cells(zero, src_idx, src_vals)

    def advance(h, t, kern):
        prefix = f"layer{t:02d}."
        S, passgain = _gating(pt, prefix)
        conv = ag.conv_bank(h, kern, cfg.padding, depth_valid=True)
        out = ag.mean_axis0(
            _branch_mix(conv, S, passgain, pt[prefix + "B"].tensor, cfg.activation)
        )
        ag.check_finite(out, f"step {t + 1}")
        return out

    if cfg.average_per_step:
        h = h0
        for t in range(cfg.steps):
            h = advance(h, t, pt[f"layer{t:02d}.kernels"].tensor)
        return ag.gather_cells(h, out_idx)
    branches = [h0] * cfg.M
    for t in range(cfg.steps):
        kern = pt[f"layer{t:02d}.kernels"].tensor
        branches = [
            advance(branches[j], t, ag.slice_axis0(kern, j)) for j in range(cfg.M)
        ]
    return ag.gather_cells(ag.mean_tensors(branches), out_idx)


def forward_batch(model, X, CTL=None):
    """Plain ndarray forward over a batch (no gradients retained)."""
    return forward_tensors(model, None, X, CTL).value


def forward(model, input_vector, control_vector=None):
    """Single-sample forward: write sources, run the steps, read outputs."""
    x = np.asarray(input_vector, dtype=np.float64)[None, :]
    ctl = None
    if control_vector is not None and len(np.atleast_1d(control_vector)):
        ctl = np.asarray(control_vector, dtype=np.float64)[None, :]
    return forward_batch(model, x, ctl)[0]


def chua_field(model, input_vector, control_vector=None):
    """The full field after the final step for one sample (for inspection).

    In hyperplane mode the successive layer slabs are assembled back into
    the d-dimensional field; untouched slabs stay zero.
    """
    cfg = model.config
    x = np.asarray(input_vector, dtype=np.float64)[None, :]
    ctl = None
    if control_vector is not None and len(np.atleast_1d(control_vector)):
        ctl = np.asarray(control_vector, dtype=np.float64)[None, :]
    n_ctl = sum(len(p) for p in cfg.by_role("control"))
    src_vals = x if not n_ctl else np.concatenate([x, ctl], axis=1)
    pt = _wrap_params(model, None)
    if cfg.mode != "hyperplane":
        cfg_once = ModelConfig(**{**cfg.__dict__})
        out = np.zeros((1,) + cfg.field_shape)
        c = ag.write_cells(ag.Tensor(out), _source_spec(cfg), src_vals)
        S, passgain = _gating(pt)
        for t in range(1, cfg.steps + 1):
            conv = ag.conv_bank(c, pt["kernels"].tensor, cfg.padding)
            c = ag.mean_axis0(
                _branch_mix(conv, S, passgain, pt["B"].tensor, cfg.activation))
            if cfg.clamp_inputs == "every-step" and t < cfg.steps:
                c = ag.write_cells(c, _source_spec(cfg), src_vals)
        return c.value[0]
    lat = cfg.field_shape[:-1]
    field_out = np.zeros(cfg.field_shape)
    src_coords = np.concatenate(
        [p.coords for role in ("input", "control") for p in cfg.by_role(role)])
    h = ag.write_cells(
        ag.Tensor(np.zeros((1,) + lat + (cfg.omega,))),
        _slab_flat_indices(cfg, src_coords, 0), src_vals)
    field_out[..., 0 : cfg.omega] = h.value[0]
    for t in range(cfg.steps):
        prefix = f"layer{t:02d}."
        S, passgain = _gating(pt, prefix)
        conv = ag.conv_bank(
            h, pt[prefix + "kernels"].tensor, cfg.padding, depth_valid=True)
        h = ag.mean_axis0(
            _branch_mix(conv, S, passgain, pt[prefix + "B"].tensor, cfg.activation))
        lo = (t + 1) * cfg.omega
        field_out[..., lo : lo + cfg.omega] = h.value[0]
    return field_out


# ---------------------------------------------------------------------------
# Plain single-field steps (reference API over the same tape operations)


def step_full(c, params, cfg):
    """One full-field timestep of a (non-batched) Chua field."""
    tensors = {
        "W": params.W,
        "B": params.B,
        "S_logits": params.S.logits,
        "kernels": params.kernels.stack,
    }
    shim = VNNModel(cfg, params)
    pt = _wrap_params(shim, tensors)
    S, passgain = _gating(pt)
    cbatch = ag.Tensor(np.asarray(c, dtype=np.float64)[None])
    conv = ag.conv_bank(cbatch, pt["kernels"].tensor, cfg.padding)
    out = ag.mean_axis0(_branch_mix(conv, S, passgain, pt["B"].tensor, cfg.activation))
    return out.value[0]


def step_hyperplane(h, layer_params, cfg):
    """One layer-to-layer step of a thickness-omega slab."""
    h = np.asarray(h, dtype=np.float64)
    squeeze = False
    if h.ndim == cfg.rank - 1:  # thin slab passed without its depth axis
        if cfg.omega != 1:
            raise ShapeError("slab without depth axis requires omega == 1")
        h = h[..., None]
        squeeze = True
    tensors = {
        "layer00.W": layer_params.W,
        "layer00.B": layer_params.B,
        "layer00.S_logits": layer_params.S.logits,
        "layer00.kernels": layer_params.kernels.stack,
    }
    shim = VNNModel(cfg, [layer_params])
    pt = _wrap_params(shim, tensors)
    S, passgain = _gating(pt, "layer00.")
    conv = ag.conv_bank(
        ag.Tensor(h[None]), pt["layer00.kernels"].tensor, cfg.padding, depth_valid=True
    )
    out = ag.mean_axis0(
        _branch_mix(conv, S, passgain, pt["layer00.B"].tensor, cfg.activation)
    ).value[0]
    return out[..., 0] if squeeze else out


# ---------------------------------------------------------------------------
# Correspondence construction: a VNN that reproduces a dense MLP exactly


def _band_cumsum(w, h):
    """B @ w for the bandwidth-h ones band, via prefix sums."""
    n = len(w)
    cs = np.concatenate([[0.0], np.cumsum(w)])
    lo = np.clip(np.arange(n) - h, 0, n)
    hi = np.clip(np.arange(n) + h + 1, 0, n)
    return cs[hi] - cs[lo]


def _gap_matrices(rows_p, rows_q, height, h, rng):
    """Fixed mixing values and the linear system of one layer gap.

    Signals leave the previous layer (cells at ``rows_p``), pass three
    signal columns (two fixed mixing columns wa, wb and one solved column),
    and are summed into the next layer's cells at ``rows_q``.  Returns
    (wa, wb, A) with A @ solved == vec(weight matrix).
    """
    r = np.arange(height)
    wa = rng.normal(size=height)
    wb = rng.normal(size=height)
    v = (np.abs(np.subtract.outer(r, rows_p)) <= h).astype(float)  # (R, n_prev)
    d1 = np.stack([_band_cumsum(wa * v[:, i], h) for i in range(v.shape[1])], axis=1)
    d2 = np.stack([_band_cumsum(wb * d1[:, i], h) for i in range(v.shape[1])], axis=1)
    n_prev, n_next = v.shape[1], len(rows_q)
    a = np.zeros((n_next * n_prev, height))
    for j, q in enumerate(rows_q):
        sel = np.abs(r - q) <= h
        for i in range(n_prev):
            a[j * n_prev + i, sel] = d2[sel, i]
    return wa, wb, a


def _correspondence_strides(widths, h):
    """Row strides keeping the weight-encoding solve full rank.

    A layer's row span must exceed the kernel half-height (2h), otherwise
    distant cells become indistinguishable to the propagator; and a layer's
    stride must exceed the previous layer's width so its summing windows
    retain independent views of the signal columns.
    """
    strides = []
    for ell, n in enumerate(widths):
        if n == 1:
            strides.append(1)
            continue
        need_span = int(np.ceil((2 * h + 1) / (n - 1)))
        need_window = 3 if ell == 0 else widths[ell - 1] + 1
        strides.append(max(need_span, need_window))
    return strides


def _correspondence_rows(widths, h, height=None):
    strides = _correspondence_strides(widths, h)
    spans = [(n - 1) * s for n, s in zip(widths, strides)]
    needed = max(spans) + 6 * h + 4
    if height is None:
        height = needed
    elif height < needed:
        raise GeometryError(
            f"field of {height} rows too small for widths {widths} "
            f"(needs {needed})"
        )
    rows = [
        np.arange(n) * s + (height - span) // 2
        for n, s, span in zip(widths, strides, spans)
    ]
    return rows, height


def build_correspondence(widths, mlp, field_shape=None):
    """Build a VNN with pinned states and one-sided all-ones kernels that
    evaluates exactly like the given dense reference MLP.

    Layers sit on every fourth column; the three columns between consecutive
    layers are pass-through signal cells whose weights encode the dense
    weight matrix (two fixed mixing columns and one solved by least squares
    against the banded propagation geometry).  Decision columns carry the
    biases and activate.
    """
    widths = [int(w) for w in widths]
    if mlp.widths != widths:
        raise ShapeError(f"MLP widths {mlp.widths} do not match {widths}")
    if not mlp.final_activation:
        raise ShapeError(
            "correspondence output cells activate; the reference MLP must too"
        )
    n_layers = len(widths) - 1
    n_cols = 4 * n_layers + 1
    if field_shape is not None and field_shape[1] < n_cols:
        raise GeometryError(
            f"field needs {n_cols} columns for {n_layers} layers, got {field_shape[1]}"
        )

    last_err = None
    for h in (8, 10, 12, 16, 24):
        height = None if field_shape is None else field_shape[0]
        try:
            return _build_correspondence_at(widths, mlp, h, height, n_cols)
        except GeometryError as err:
            if field_shape is not None:
                raise
            last_err = err
    raise GeometryError(f"no workable correspondence geometry found: {last_err}")


def _build_correspondence_at(widths, mlp, h, height, n_cols):
    rows, height = _correspondence_rows(widths, h, height)
    rng = np.random.default_rng(_CORRESPONDENCE_SEED)
    shape = (height, n_cols)
    w_field = np.zeros(shape)
    b_field = np.zeros(shape)
    s_vals = np.zeros(shape)

    for ell in range(len(widths) - 1):
        wa, wb, a = _gap_matrices(rows[ell], rows[ell + 1], height, h, rng)
        target = mlp.weights[ell].reshape(-1)
        solved, *_ = np.linalg.lstsq(a, target, rcond=None)
        resid = np.abs(a @ solved - target).max()
        if resid > 1e-9:
            raise GeometryError(
                f"gap {ell} ({widths[ell]}->{widths[ell + 1]}) encoding residual "
                f"{resid:.2e}; spread the layers or enlarge the field"
            )
        col = 4 * ell
        w_field[:, col + 1] = wa
        w_field[:, col + 2] = wb
        w_field[:, col + 3] = solved
        b_field[rows[ell + 1], col + 4] = mlp.biases[ell]
        s_vals[rows[ell + 1], col + 4] = 1.0
    s_vals[rows[0], 0] = 1.0

    kernel = np.zeros((1, 2 * h + 1, 3))
    kernel[0, :, 0] = 1.0  # read the column to the left, all rows in reach

    state = CoddStateField(
        logits=np.zeros(shape), frozen_mask=np.ones(shape, bool), frozen_values=s_vals
    )
    params = ParameterSet(
        W=w_field, B=b_field, S=state, kernels=GreensKernelBank(kernel)
    )
    placements = [
        Placement("input", np.stack([rows[0], np.zeros(len(rows[0]), int)], axis=1),
                  encoding="raw-real"),
        Placement("output",
                  np.stack([rows[-1], np.full(len(rows[-1]), n_cols - 1)], axis=1),
                  encoding="raw-real"),
    ]
    cfg = ModelConfig(
        field_shape=shape,
        mode="correspondence",
        M=1,
        k=2 * h + 1,
        steps=4 * (len(widths) - 1),
        activation=mlp.activation,
        padding="zero",
        clamp_inputs="every-step",
        placements=placements,
    )
    cfg.validate()
    model = VNNModel(cfg, params)

    # verify the construction end to end before handing it out
    probe = np.random.default_rng(_CORRESPONDENCE_SEED + 1).normal(
        size=(4, widths[0])
    )
    got = forward_batch(model, probe)
    want = mlp.forward(probe)
    err = np.abs(got - want).max()
    if err > 1e-8:
        raise GeometryError(f"correspondence verification failed: deviation {err:.2e}")
    return model


# ---------------------------------------------------------------------------


def param_count(obj):
    """Number of trainable scalars (frozen state cells excluded)."""
    if isinstance(obj, ReferenceMLP):
        return sum(w.size + b.size for w, b in zip(obj.weights, obj.biases))
    if isinstance(obj, VNNModel):
        return sum(param_count(ps) for ps in obj.layer_sets())
    if isinstance(obj, ParameterSet):
        return obj.W.size + obj.B.size + obj.S.n_free + obj.kernels.stack.size
    if isinstance(obj, list):
        return sum(param_count(ps) for ps in obj)
    raise TypeError(f"cannot count parameters of {type(obj).__name__}")
