"""The VNNC checkpoint container: magic, version, metadata, raw arrays.

Layout: ``b"VNNC"`` | u32 LE format version | u64 LE metadata length |
UTF-8 JSON metadata | a flat run of little-endian float64 arrays in declared
order.  Per parameter set: W, B, state logits, frozen mask (0/1), frozen
values, then the kernel bank; after all sets come the optimizer first
moments (same family order) and then the second moments.  The metadata block
names every array with its shape, so a checkpoint is self-describing.
"""

import json
import os
import struct
import tempfile

import numpy as np

from . import config as vcfg
from .errors import FormatError
from .model import CoddStateField, GreensKernelBank, ParameterSet, VNNModel
from .train import OptimizerState

MAGIC = b"VNNC"
VERSION = 1


def _atomic_write(path, payload):
    d = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".vnnc-tmp-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _set_arrays(prefix, ps):
    return [
        (f"{prefix}W", ps.W),
        (f"{prefix}B", ps.B),
        (f"{prefix}S_logits", ps.S.logits),
        (f"{prefix}S_frozen_mask", ps.S.frozen_mask.astype(np.float64)),
        (f"{prefix}S_frozen_values", ps.S.frozen_values),
        (f"{prefix}kernels", ps.kernels.stack),
    ]


def save_checkpoint(path, model, optimizer=None, run_config=None, step=0):
    """Serialize model (+ optimizer moments) to a VNNC file, atomically."""
    arrays = []
    hyper = isinstance(model.params, list)
    for t, ps in enumerate(model.layer_sets()):
        prefix = f"layer{t:02d}." if hyper else ""
        arrays.extend(_set_arrays(prefix, ps))
    if optimizer is not None:
        for name in sorted(optimizer.m):
            arrays.append((f"adam_m.{name}", optimizer.m[name]))
        for name in sorted(optimizer.v):
            arrays.append((f"adam_v.{name}", optimizer.v[name]))
    meta = {
        "format": "VNNC",
        "version": VERSION,
        "step": int(step if optimizer is None else optimizer.t),
        "n_layer_sets": len(model.layer_sets()),
        "hyper": hyper,
        "model_config": vcfg.model_config_to_jsonable(model.config),
        "run_config": None if run_config is None
        else vcfg.run_config_to_jsonable(run_config),
        "arrays": [
            {"name": n, "shape": list(np.shape(a))} for n, a in arrays
        ],
    }
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", VERSION), struct.pack("<Q", len(blob)), blob]
    for _, a in arrays:
        parts.append(np.ascontiguousarray(a, dtype="<f8").tobytes())
    _atomic_write(path, b"".join(parts))


def load_checkpoint(path):
    """Read a VNNC file back into (model, optimizer_state, metadata)."""
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}", offset=0)
    version = int(np.frombuffer(raw[4:8], dtype="<u4")[0])
    if version != VERSION:
        raise FormatError(
            f"{path}: format version {version} not supported (expected {VERSION})",
            offset=4,
        )
    meta_len = int(np.frombuffer(raw[8:16], dtype="<u8")[0])
    try:
        meta = json.loads(raw[16 : 16 + meta_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise FormatError(f"{path}: corrupt metadata block ({err})", offset=16)
    offset = 16 + meta_len
    values = {}
    for entry in meta["arrays"]:
        shape = tuple(entry["shape"])
        nbytes = int(np.prod(shape, dtype=np.int64)) * 8
        chunk = raw[offset : offset + nbytes]
        if len(chunk) != nbytes:
            raise FormatError(
                f"{path}: truncated array {entry['name']!r}", offset=offset
            )
        values[entry["name"]] = np.frombuffer(chunk, dtype="<f8").reshape(shape).copy()
        offset += nbytes
    if offset != len(raw):
        raise FormatError(f"{path}: {len(raw) - offset} trailing bytes", offset=offset)

    cfg = vcfg.model_config_from_jsonable(meta["model_config"])

    def read_set(prefix):
        return ParameterSet(
            W=values[f"{prefix}W"],
            B=values[f"{prefix}B"],
            S=CoddStateField(
                logits=values[f"{prefix}S_logits"],
                frozen_mask=values[f"{prefix}S_frozen_mask"] != 0.0,
                frozen_values=values[f"{prefix}S_frozen_values"],
            ),
            kernels=GreensKernelBank(values[f"{prefix}kernels"]),
        )

    if meta["hyper"]:
        params = [read_set(f"layer{t:02d}.") for t in range(meta["n_layer_sets"])]
    else:
        params = read_set("")
    model = VNNModel(cfg, params)

    optimizer = None
    m_names = sorted(
        n[len("adam_m."):] for n in values if n.startswith("adam_m.")
    )
    if m_names:
        optimizer = OptimizerState(
            m={n: values[f"adam_m.{n}"] for n in m_names},
            v={n: values[f"adam_v.{n}"] for n in m_names},
            t=meta["step"],
        )
    return model, optimizer, meta
