"""A cellular network that *is* a dense MLP.

With Codd states pinned (decision columns at s=1, signal columns at s=0)
and the kernel fixed to a one-sided all-ones column, a VNN on a 2-D field
reproduces an ordinary dense MLP exactly: the weight matrices are encoded
into the signal columns between consecutive layer columns, and signals
sweep left to right one column per step.
"""

import numpy as np

from vnn.model import ReferenceMLP, build_correspondence, forward, forward_batch, gate_states

rng = np.random.default_rng(0)

# A dense 8 -> 4 -> 2 reference network with random weights.
mlp = ReferenceMLP.random([8, 4, 2], rng)
vnn = build_correspondence([8, 4, 2], mlp)

cfg = vnn.config
print(f"field: {cfg.field_shape[0]} rows x {cfg.field_shape[1]} columns, "
      f"{cfg.steps} steps, kernel {cfg.k} rows (one-sided ones column)")

# Layer columns sit on every 4th column: states are 1 on layer cells only.
states = gate_states(vnn.params.S)
for col in range(cfg.field_shape[1]):
    n_decision = int((states[:, col] == 1.0).sum())
    role = "decision" if n_decision else "signal"
    print(f"  column {col}: {role:8s} ({n_decision} activating cells)")

# The two networks agree to machine precision on any input.
x = rng.normal(size=(1000, 8))
dev = np.abs(forward_batch(vnn, x) - mlp.forward(x)).max()
print(f"\nmax |VNN - MLP| over 1000 random inputs: {dev:.2e}")

one = rng.normal(size=8)
print(f"sample input  : {np.round(one, 3)}")
print(f"MLP output    : {mlp.forward(one)}")
print(f"VNN output    : {forward(vnn, one)}")
