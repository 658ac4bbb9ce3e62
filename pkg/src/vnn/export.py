"""Export parameter fields, states, and kernels as PGM images or CSV tables."""

import os
import tempfile

import numpy as np

from .errors import ConfigError
from .model import gate_states

WHAT_CHOICES = ("states", "weights", "biases", "chua")  # plus kernel-<j>


def _atomic_bytes(path, payload):
    d = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".export-tmp-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def select_plane(array, axis=0, index=0):
    """Reduce any-rank data to a 2-D slice for image export.

    1-D data becomes a single-row image; rank-3 data is sliced at
    ``index`` along ``axis``.
    """
    array = np.asarray(array, dtype=np.float64)
    if array.ndim == 1:
        return array[None, :]
    if array.ndim == 2:
        return array
    if array.ndim == 3:
        return np.take(array, index, axis=axis)
    raise ConfigError(f"cannot slice rank-{array.ndim} data to a plane")


def to_pgm_bytes(plane):
    """8-bit binary PGM; values min-max scaled, constant planes map to 0."""
    plane = np.asarray(plane, dtype=np.float64)
    lo, hi = plane.min(), plane.max()
    if hi > lo:
        scaled = np.rint((plane - lo) / (hi - lo) * 255.0).astype(np.uint8)
    else:
        scaled = np.zeros(plane.shape, dtype=np.uint8)
    header = f"P5\n{plane.shape[1]} {plane.shape[0]}\n255\n".encode()
    return header + scaled.tobytes()


def to_csv_bytes(plane):
    """Full-precision decimal CSV (round-trips float64 exactly)."""
    plane = np.atleast_2d(np.asarray(plane, dtype=np.float64))
    lines = [",".join(repr(float(v)) for v in row) for row in plane]
    return ("\n".join(lines) + "\n").encode()


def read_csv_plane(path):
    with open(path) as f:
        rows = [
            [float(tok) for tok in line.strip().split(",")]
            for line in f if line.strip()
        ]
    return np.array(rows, dtype=np.float64)


def _model_array(model, what, layer=0, chua=None):
    sets = model.layer_sets()
    if not 0 <= layer < len(sets):
        raise ConfigError(f"layer {layer} out of range (model has {len(sets)})")
    ps = sets[layer]
    if what == "states":
        return gate_states(ps.S)
    if what == "weights":
        return ps.W
    if what == "biases":
        return ps.B
    if what == "chua":
        if chua is None:
            raise ConfigError("chua export needs a computed field")
        return chua
    if what.startswith("kernel-"):
        j = int(what.split("-", 1)[1])
        if not 0 <= j < len(ps.kernels):
            raise ConfigError(f"kernel index {j} out of range (M={len(ps.kernels)})")
        return ps.kernels[j]
    raise ConfigError(
        f"unknown export target {what!r}; expected one of {WHAT_CHOICES} or kernel-<j>"
    )


def export_field(model, what, path, fmt="pgm", axis=0, index=0, layer=0, chua=None):
    """Write one exportable plane of the model to ``path``; returns the path."""
    arr = _model_array(model, what, layer=layer, chua=chua)
    plane = select_plane(arr, axis=axis, index=index)
    if fmt == "pgm":
        _atomic_bytes(path, to_pgm_bytes(plane))
    elif fmt == "csv":
        _atomic_bytes(path, to_csv_bytes(plane))
    else:
        raise ConfigError(f"unknown export format {fmt!r}")
    return path
