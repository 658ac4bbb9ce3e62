"""A learned arithmetic-logic unit in a 12x12 box of cells.

Operands enter on the left edge, the 4-bit opcode sits along the top, and
the 8-bit result is read off the right edge after two propagation steps.
One model learns all sixteen operations (AND/OR/XOR/.../ADD/SUB/shifts).

Full training takes a while on one CPU; this demo runs a shortened schedule
and reports where it lands (the acceptance suite runs the full schedule).
"""

import numpy as np

from vnn import data as vdata
from vnn import tasks
from vnn.model import forward, param_count
from vnn.train import evaluate, train_loop

full = vdata.gen_bit_dataset(
    vdata.BitTaskSpec(op="ALU", policy="sample", n_samples=60_000), seed=3)
train, test = vdata.split_dataset(full, 0.1, seed=4)

cfg = tasks.alu_box_model()
model = tasks.build_model(cfg, seed=5, task="alu-box")
print(f"field {cfg.field_shape}, M={cfg.M} kernels {cfg.k}x{cfg.k}, "
      f"T={cfg.steps}, {param_count(model)} trainable parameters")

tc = tasks.default_train_config("alu-box", seed=5)
tc.epochs = 12  # shortened for the demo
model, _, _ = train_loop(
    model, train, tc,
    log_fn=lambda r: print(f"  epoch {r['epoch']}: exact {r['exact_match']:.1f}%")
    if isinstance(r.get("epoch"), int) and r["epoch"] % 3 == 0 else None)

m = evaluate(model, test)
print(f"held-out exact-match {m.exact_match:.2f}% per-bit {m.per_bit:.2f}%")

a, b = 0xC5, 0x2F
for op in ("XOR", "ADD", "NAND", "SHR-A"):
    code = vdata.ALU_OPCODE[op]
    x = np.concatenate([vdata.int_to_bits(a, 8), vdata.int_to_bits(b, 8)])
    ctl = vdata.int_to_bits(code, 4)
    got = int(vdata.bits_to_int((forward(model, x, ctl) > 0).astype(int)))
    truth = vdata.alu_truth(code, a, b)
    flag = "ok" if got == truth else "WRONG"
    print(f"  0x{a:02X} {op:6s} 0x{b:02X} -> 0x{got:02X} (truth 0x{truth:02X}) {flag}")
