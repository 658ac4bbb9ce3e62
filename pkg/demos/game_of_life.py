"""Conway's Game of Life: the hand-written engine, then a network that
learns the rules from examples.

The learned model sees random boards and their successors; every cell is
both an input and an output, and the 3x3 kernel bank has to discover the
live-neighbour counting rule on its own.
"""

import numpy as np

from vnn import data as vdata
from vnn import tasks
from vnn.model import forward_batch
from vnn.train import evaluate, train_loop


def show(board, title):
    print(title)
    for row in board:
        print("  " + "".join("#" if v else "." for v in row))


# --- the exact engine -------------------------------------------------------
glider = np.zeros((8, 8), dtype=bool)
for r, c in [(0, 1), (1, 2), (2, 0), (2, 1), (2, 2)]:
    glider[r, c] = True
show(glider, "glider at t=0")
board = glider
for _ in range(4):
    board = vdata.gol_step(board)
show(board, "after 4 steps (translated one cell down-right)")

# --- learning the rules -----------------------------------------------------
train, test = tasks.task_datasets("gol-rule", {}, seed=11)
print(f"\ntraining on {len(train)} random boards, testing on {len(test)} unseen")

cfg = tasks.gol_rule_model()
model = tasks.build_model(cfg, seed=11, task="gol-rule")
tc = tasks.default_train_config("gol-rule", seed=11)
model, _, _ = train_loop(model, train, tc)

m = evaluate(model, test)
print(f"per-cell next-state accuracy on unseen boards: {m.per_bit:.2f}%")

# drive the learned rule on the glider (board flattened to the input cells)
pred = forward_batch(model, glider.reshape(1, -1).astype(float))[0] > 0
show(pred.reshape(8, 8), "\nlearned rule, one step from the glider:")
show(vdata.gol_step(glider), "exact engine, one step:")
