"""Built-in experiment layouts: placements, model geometry, and data glue.

Each task template fixes where inputs, control codes, and outputs sit on the
field, picks kernel-bank geometry that comfortably connects them, and knows
how to produce its dataset (generated bit tasks and boards, or loaded files).
"""

import os
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import data as vdata
from .errors import ConfigError
from .model import ModelConfig, Placement, VNNModel, init_params, required_steps
from .train import TrainConfig

TASKS = (
    "xor-tape", "alu-box", "alu-tape", "clp-wine", "mnist-hyper",
    "cifar-full", "cifar-hyper", "gol-rule", "correspond",
)


@dataclass
class RunConfig:
    task: str
    model: ModelConfig
    train: TrainConfig
    data: dict = dc_field(default_factory=dict)
    out_dir: str = "runs"

    def validate(self):
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}")
        self.model.validate()
        self.train.validate()


def _line(cells, offset=0):
    return np.array([[offset + c] for c in cells], dtype=np.intp)


def _grid_coords(rows, cols, extra=None):
    rr, cc = np.meshgrid(np.atleast_1d(rows), np.atleast_1d(cols), indexing="ij")
    base = np.stack([rr.reshape(-1), cc.reshape(-1)], axis=1)
    if extra is None:
        return base
    return np.concatenate([base, np.full((len(base), 1), extra, dtype=np.intp)], axis=1)


def xor_tape_model(width=8):
    """Purely 1-D tape: operands flank the result cells on one line.

    The sandwich order a | out | b keeps every source within two kernel
    reaches of every output, so the recurrence stays shallow enough to
    optimize well.
    """
    n = width
    placements = [
        Placement("input", np.concatenate([
            _line(range(n)), _line(range(2 * n, 3 * n))]), "bit"),
        Placement("output", _line(range(n, 2 * n)), "bit"),
    ]
    cfg = ModelConfig(
        field_shape=(3 * n,), mode="full", M=16, k=17, steps=1,
        activation="tanh", placements=placements,
    )
    cfg.steps = max(2, required_steps(cfg))
    return cfg


def alu_box_model():
    """Box layout: operands on the left edge, result on the right, the 4-bit
    control code along the top, the model body in between."""
    shape = (12, 12)
    placements = [
        Placement("input", np.concatenate([
            _grid_coords(np.arange(2, 10), 0),
            _grid_coords(np.arange(2, 10), 1),
        ]), "bit"),
        Placement("control", _grid_coords(0, np.arange(4, 8)), "bit"),
        Placement("output", _grid_coords(np.arange(2, 10), 11), "bit"),
    ]
    cfg = ModelConfig(
        field_shape=shape, mode="full", M=16, k=13, steps=1,
        activation="tanh", placements=placements,
    )
    cfg.steps = required_steps(cfg)
    return cfg


def alu_tape_model():
    """All controls, operands and outputs on one line of a 2-D field."""
    shape = (9, 32)
    row = 4
    placements = [
        Placement("input", np.concatenate([
            _grid_coords(row, np.arange(5, 13)),
            _grid_coords(row, np.arange(14, 22)),
        ]), "bit"),
        Placement("control", _grid_coords(row, np.arange(0, 4)), "bit"),
        Placement("output", _grid_coords(row, np.arange(23, 31)), "bit"),
    ]
    cfg = ModelConfig(
        field_shape=shape, mode="full", M=16, k=13, steps=1,
        activation="tanh", placements=placements,
    )
    cfg.steps = required_steps(cfg)
    return cfg


def alu_hyper_model():
    """1-D hyperplane baseline for the ALU: operands and control stacked in
    the first layer column, result bits read from the last."""
    height = 20
    steps = 6
    shape = (height, steps + 1)
    placements = [
        Placement("input",
                  np.stack([np.arange(16), np.zeros(16, int)], axis=1), "bit"),
        Placement("control",
                  np.stack([np.arange(16, 20), np.zeros(4, int)], axis=1), "bit"),
        Placement("output",
                  np.stack([np.arange(6, 14), np.full(8, steps)], axis=1), "bit"),
    ]
    return ModelConfig(
        field_shape=shape, mode="hyperplane", M=8, k=9, omega=1, steps=steps,
        activation="tanh", placements=placements,
    )


def clp_wine_model():
    """Concave layered perceptron: 13 features on a half-circle arc opening
    toward the 3 class cells."""
    shape = (15, 15)
    center = np.array([7, 7])
    radius = 6
    coords, seen = [], set()
    for theta in np.linspace(np.pi / 2, 3 * np.pi / 2, 13):
        r = int(round(center[0] + radius * np.sin(theta)))
        c = int(round(center[1] + radius * np.cos(theta)))
        while (r, c) in seen:  # nudge collisions outward along the row
            r += 1
        seen.add((r, c))
        coords.append((r, c))
    placements = [
        Placement("input", np.array(coords), "raw-real"),
        Placement("output", _grid_coords(np.arange(6, 9), 11), "raw-real"),
    ]
    cfg = ModelConfig(
        field_shape=shape, mode="full", M=3, k=9, steps=1,
        activation="tanh", placements=placements,
    )
    cfg.steps = required_steps(cfg)
    return cfg


def mnist_hyper_model(steps=8):
    """28x28 layer slabs advancing through depth; 10 class cells at the end."""
    shape = (28, 28, steps + 1)
    inputs = _grid_coords(np.arange(28), np.arange(28), extra=0)
    outputs = np.stack(
        [np.arange(9, 19), np.full(10, 14), np.full(10, steps)], axis=1)
    return ModelConfig(
        field_shape=shape, mode="hyperplane", M=8, k=9, omega=1, steps=steps,
        activation="relu", placements=[
            Placement("input", inputs, "raw-real"),
            Placement("output", outputs, "raw-real"),
        ],
    )


def cifar_full_model():
    """Full 3-D field; RGB planes stacked in depth, classes read at the back."""
    shape = (32, 32, 6)
    planes = [_grid_coords(np.arange(32), np.arange(32), extra=d) for d in range(3)]
    outputs = np.stack([np.arange(11, 21), np.full(10, 16), np.full(10, 5)], axis=1)
    cfg = ModelConfig(
        field_shape=shape, mode="full", M=4, k=9, steps=1,
        activation="tanh", placements=[
            Placement("input", np.concatenate(planes), "raw-real"),
            Placement("output", outputs, "raw-real"),
        ],
    )
    cfg.steps = required_steps(cfg)
    return cfg


def cifar_hyper_model(steps=8):
    """Thickness-3 slabs: the RGB image is the first slab."""
    omega = 3
    shape = (32, 32, omega * (steps + 1))
    planes = [_grid_coords(np.arange(32), np.arange(32), extra=d) for d in range(3)]
    outputs = np.stack(
        [np.arange(11, 21), np.full(10, 16), np.full(10, omega * steps)], axis=1)
    return ModelConfig(
        field_shape=shape, mode="hyperplane", M=8, k=9, omega=omega, steps=steps,
        activation="relu", placements=[
            Placement("input", np.concatenate(planes), "raw-real"),
            Placement("output", outputs, "raw-real"),
        ],
    )


def gol_rule_model(shape=(16, 16)):
    """Board pinned on the front plane, next state read off the back plane.

    The board is clamped at depth 0 every step, so the free depth-1 cells
    compute recurrently with the input persistently visible; a single-plane
    layout (outputs on the clamped cells themselves) collapses to one
    effective step, which provably cannot express the survival band.  The
    step count honours the receptive-field bound for this all-to-all layout.
    """
    cells_in = _grid_coords(np.arange(shape[0]), np.arange(shape[1]), extra=0)
    cells_out = _grid_coords(np.arange(shape[0]), np.arange(shape[1]), extra=1)
    cfg = ModelConfig(
        field_shape=shape + (2,), mode="full", M=16, k=3, steps=1,
        activation="tanh", clamp_inputs="every-step", placements=[
            Placement("input", cells_in, "bit"),
            Placement("output", cells_out, "bit"),
        ],
    )
    cfg.steps = required_steps(cfg)
    return cfg


# ---------------------------------------------------------------------------
# Data assembly


def _data_dir(spec):
    return spec.get("dir") or os.environ.get("VNN_DATA_DIR", "data")


def task_datasets(task, data_spec, seed):
    """(train, test) datasets for a task; generated tasks split disjointly."""
    if task == "xor-tape":
        full = vdata.gen_bit_dataset(
            vdata.BitTaskSpec(op="XOR", bit_width=data_spec.get("width", 8)), seed)
        return vdata.split_dataset(full, 0.2, seed + 1)
    if task in ("alu-box", "alu-tape"):
        n = data_spec.get("n_samples", 120_000)
        full = vdata.gen_bit_dataset(
            vdata.BitTaskSpec(op="ALU", policy="sample", n_samples=n), seed)
        return vdata.split_dataset(full, 0.1, seed + 1)
    if task == "clp-wine":
        path = data_spec.get("path") or os.path.join(_data_dir(data_spec), "wine.csv")
        full = vdata.load_wine_csv(path)
        train, test = vdata.split_dataset(full, 0.2, seed + 1)
        train.X, test.X = vdata.standardize_features(train.X, test.X)
        return train, test
    if task == "mnist-hyper":
        d = _data_dir(data_spec)
        train = vdata.load_mnist_idx(
            os.path.join(d, "train-images-idx3-ubyte"),
            os.path.join(d, "train-labels-idx1-ubyte"))
        test = vdata.load_mnist_idx(
            os.path.join(d, "t10k-images-idx3-ubyte"),
            os.path.join(d, "t10k-labels-idx1-ubyte"))
        return train, test
    if task in ("cifar-full", "cifar-hyper"):
        d = _data_dir(data_spec)
        train = vdata.load_cifar10_bin(
            [os.path.join(d, f"data_batch_{i}.bin") for i in range(1, 6)])
        test = vdata.load_cifar10_bin(os.path.join(d, "test_batch.bin"))
        return train, test
    if task == "gol-rule":
        shape = tuple(data_spec.get("board", (16, 16)))
        n = data_spec.get("n_boards", 512)
        densities = data_spec.get("densities", (0.2, 0.35, 0.5))
        pairs = []
        for i, dens in enumerate(densities):
            pairs += vdata.gen_gol_dataset(n // len(densities), shape, dens, seed + i)
        train = vdata.gol_pairs_to_dataset(pairs)
        test_pairs = []
        for i, dens in enumerate(densities):
            test_pairs += vdata.gen_gol_dataset(
                max(8, n // (4 * len(densities))), shape, dens, seed + 100 + i)
        return train, vdata.gol_pairs_to_dataset(test_pairs)
    raise ConfigError(f"task {task!r} has no dataset pipeline")


_MODEL_BUILDERS = {
    "xor-tape": xor_tape_model,
    "alu-box": alu_box_model,
    "alu-tape": alu_tape_model,
    "clp-wine": clp_wine_model,
    "mnist-hyper": mnist_hyper_model,
    "cifar-full": cifar_full_model,
    "cifar-hyper": cifar_hyper_model,
    "gol-rule": gol_rule_model,
}

# Learning rates start from the framework default 1e-3 except where a task
# demonstrably stalls there (the deeper bit tasks need a hotter schedule).
_TRAIN_DEFAULTS = {
    "xor-tape": dict(epochs=30, batch_size=256, weight_decay=1e-4),
    "alu-box": dict(epochs=40, batch_size=128, weight_decay=1e-4,
                    learning_rate_init=1e-2),
    "alu-tape": dict(epochs=40, batch_size=128, weight_decay=1e-4,
                     learning_rate_init=1e-2),
    "clp-wine": dict(epochs=200, batch_size=32, weight_decay=1e-3),
    "mnist-hyper": dict(epochs=12, batch_size=64, weight_decay=1e-4),
    "cifar-full": dict(epochs=3, batch_size=32, weight_decay=1e-4),
    "cifar-hyper": dict(epochs=6, batch_size=32, weight_decay=1e-4),
    "gol-rule": dict(epochs=60, batch_size=32, weight_decay=0.0,
                     learning_rate_init=1e-2),
}


def default_model_config(task, **overrides):
    if task not in _MODEL_BUILDERS:
        raise ConfigError(f"task {task!r} has no model template")
    cfg = _MODEL_BUILDERS[task]()
    for key, val in overrides.items():
        if not hasattr(cfg, key):
            raise ConfigError(f"unknown model field {key!r}")
        setattr(cfg, key, val)
    return cfg


def default_train_config(task, **overrides):
    kw = dict(_TRAIN_DEFAULTS.get(task, {}))
    kw.update(overrides)
    return TrainConfig(**kw)


# Per-task initialization: kernel scale tracks expected window activity so the
# first steps neither die out nor saturate; spread-out W/B break the symmetry
# that otherwise pins bit tasks at chance.
_INIT_PROFILES = {
    "xor-tape": dict(kernel_std=0.4, w_spread=True, b_std=0.3),
    "alu-box": dict(kernel_std=0.3, w_spread=True, b_std=0.3),
    "alu-tape": dict(kernel_std=0.25, w_spread=True, b_std=0.3),
    "gol-rule": dict(kernel_std=0.5, w_spread=True, b_std=0.3),
    "clp-wine": dict(kernel_std=0.3, w_spread=False, b_std=0.1),
    "mnist-hyper": dict(kernel_std=None, w_spread=False, b_std=0.0),
    "cifar-full": dict(kernel_std=None, w_spread=False, b_std=0.0),
    "cifar-hyper": dict(kernel_std=None, w_spread=False, b_std=0.0),
}


def build_model(cfg, seed, task=None):
    rng = np.random.default_rng(seed)
    prof = _INIT_PROFILES.get(task, {})
    params = init_params(
        cfg, rng,
        kernel_std=prof.get("kernel_std"),
        b_std=prof.get("b_std", 0.0),
    )
    if prof.get("w_spread"):
        for ps in params if isinstance(params, list) else [params]:
            ps.W = rng.normal(size=ps.W.shape)
    return VNNModel(cfg, params)
