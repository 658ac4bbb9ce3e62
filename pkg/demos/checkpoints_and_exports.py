"""Round-trip a model through the VNNC container and export its innards."""

import hashlib
import os
import tempfile

import numpy as np

from vnn import tasks
from vnn.checkpoint import load_checkpoint, save_checkpoint
from vnn.export import export_field, read_csv_plane
from vnn.model import chua_field, forward_batch

workdir = tempfile.mkdtemp(prefix="vnn-demo-")
cfg = tasks.alu_box_model()
model = tasks.build_model(cfg, seed=3, task="alu-box")

path = os.path.join(workdir, "alu.vnnc")
save_checkpoint(path, model)
size = os.path.getsize(path)
digest = hashlib.sha256(open(path, "rb").read()).hexdigest()
print(f"saved {size} bytes, sha256 {digest[:16]}…")

loaded, _, meta = load_checkpoint(path)
x = np.random.default_rng(0).random((4, 16))
ctl = np.random.default_rng(1).random((4, 4))
identical = np.array_equal(forward_batch(model, x, ctl),
                           forward_batch(loaded, x, ctl))
print(f"forward identical after reload: {identical}")
print(f"metadata says: field {meta['model_config']['field_shape']}, "
      f"mode {meta['model_config']['mode']}")

# states as an image, a kernel as full-precision CSV
spath = export_field(model, "states", os.path.join(workdir, "states.pgm"))
kpath = export_field(model, "kernel-0", os.path.join(workdir, "k0.csv"), fmt="csv")
back = read_csv_plane(kpath)
print(f"kernel CSV round-trips exactly: {np.array_equal(back, model.params.kernels[0])}")

# the field itself after running one sample
field = chua_field(model, x[0], ctl[0])
cpath = export_field(model, "chua", os.path.join(workdir, "chua.pgm"), chua=field)
print(f"wrote {spath}, {kpath}, {cpath}")
