"""Task data: bit-arithmetic generation, file loaders, and the Game of Life.

Bit vectors are most-significant-bit first: the lowest placement coordinate
carries the highest-order bit.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError

# 4-bit opcode -> operation; ADD/SUB/INC/DEC wrap modulo 2^width (no carry out)
ALU_OPS = (
    "AND", "OR", "XOR", "NOR", "NAND", "XNOR", "NOT-A", "NOT-B",
    "ADD", "SUB", "INC-A", "DEC-A", "SHL-A", "SHR-A", "PASS-A", "PASS-B",
)
ALU_OPCODE = {name: code for code, name in enumerate(ALU_OPS)}


@dataclass
class Dataset:
    """Arrays bound for placements: inputs, optional controls, targets."""

    X: np.ndarray
    Y: np.ndarray
    CTL: np.ndarray = None
    kind: str = "bits"  # "bits" | "classes"

    def __len__(self):
        return len(self.X)

    def subset(self, idx):
        ctl = None if self.CTL is None else self.CTL[idx]
        return Dataset(self.X[idx], self.Y[idx], ctl, self.kind)

    def batch(self, idx):
        ctl = None if self.CTL is None else self.CTL[idx]
        return self.X[idx], ctl, self.Y[idx]


@dataclass
class Sample:
    """One record: input vector, control vector (possibly empty), target."""

    inputs: np.ndarray
    controls: np.ndarray
    target: object


@dataclass
class BitTaskSpec:
    op: str = "XOR"  # an ALU op name, or "ALU" for the full opcode-driven task
    bit_width: int = 8
    policy: str = "exhaustive"  # "exhaustive" | "sample"
    n_samples: int = 0

    def validate(self):
        if self.op != "ALU" and self.op not in ALU_OPCODE:
            raise ValueError(f"unknown op {self.op!r}")
        if self.bit_width < 1:
            raise ValueError("bit_width must be >= 1")
        if self.policy == "exhaustive" and 2 ** (2 * self.bit_width) > 2**20:
            raise ValueError("exhaustive enumeration capped at 2^20 pairs")
        if self.policy not in ("exhaustive", "sample"):
            raise ValueError(f"unknown sample policy {self.policy!r}")


def alu_truth(opcode, a, b, width=8):
    """Ground-truth ALU result, reduced modulo 2^width."""
    opcode, a, b = int(opcode), int(a), int(b)
    if not 0 <= opcode < 16:
        raise ValueError(f"opcode {opcode} out of range")
    lim = 1 << width
    if not (0 <= a < lim and 0 <= b < lim):
        raise ValueError(f"operands must be < 2^{width}")
    mask = lim - 1
    op = ALU_OPS[opcode]
    if op == "AND":
        r = a & b
    elif op == "OR":
        r = a | b
    elif op == "XOR":
        r = a ^ b
    elif op == "NOR":
        r = ~(a | b)
    elif op == "NAND":
        r = ~(a & b)
    elif op == "XNOR":
        r = ~(a ^ b)
    elif op == "NOT-A":
        r = ~a
    elif op == "NOT-B":
        r = ~b
    elif op == "ADD":
        r = a + b
    elif op == "SUB":
        r = a - b
    elif op == "INC-A":
        r = a + 1
    elif op == "DEC-A":
        r = a - 1
    elif op == "SHL-A":
        r = a << 1
    elif op == "SHR-A":
        r = a >> 1
    elif op == "PASS-A":
        r = a
    else:  # PASS-B
        r = b
    return r & mask


def int_to_bits(values, width):
    """Integers -> {0,1} float rows, most significant bit first."""
    values = np.asarray(values, dtype=np.int64)
    shifts = np.arange(width - 1, -1, -1)
    return ((values[..., None] >> shifts) & 1).astype(np.float64)


def bits_to_int(bits):
    bits = np.asarray(bits)
    width = bits.shape[-1]
    weights = 1 << np.arange(width - 1, -1, -1)
    return (bits.astype(np.int64) * weights).sum(axis=-1)


def gen_bit_dataset(spec, seed=0):
    """Deterministic bit-task dataset: inputs a||b, targets from alu_truth.

    Exhaustive mode enumerates every (a, b) pair exactly once (and, for the
    ALU task, every (opcode, a, b) triple); sampling mode draws distinct
    triples without replacement from one seeded generator.
    """
    spec.validate()
    w = spec.bit_width
    lim = 1 << w
    rng = np.random.default_rng(seed)
    if spec.op == "ALU":
        if spec.policy == "exhaustive":
            codes = np.arange(16 * lim * lim, dtype=np.int64)
        else:
            codes = rng.choice(16 * lim * lim, size=spec.n_samples, replace=False)
        ops = codes // (lim * lim)
        a = (codes // lim) % lim
        b = codes % lim
        ctl = int_to_bits(ops, 4)
    else:
        if spec.policy == "exhaustive":
            codes = np.arange(lim * lim, dtype=np.int64)
        else:
            codes = rng.choice(lim * lim, size=spec.n_samples, replace=False)
        a = codes // lim
        b = codes % lim
        ops = np.full(len(codes), ALU_OPCODE[spec.op], dtype=np.int64)
        ctl = None
    targets = np.array([alu_truth(o, x, y, w) for o, x, y in zip(ops, a, b)])
    X = np.concatenate([int_to_bits(a, w), int_to_bits(b, w)], axis=1)
    return Dataset(X=X, Y=int_to_bits(targets, w), CTL=ctl, kind="bits")


def split_dataset(dataset, test_fraction, seed):
    """Seeded disjoint train/test split."""
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(dataset))
    n_test = int(round(len(dataset) * test_fraction))
    return dataset.subset(order[n_test:]), dataset.subset(order[:n_test])


# ---------------------------------------------------------------------------
# File loaders

MNIST_IMAGE_MAGIC = 0x00000803
MNIST_LABEL_MAGIC = 0x00000801


def _read_be32(f, path):
    raw = f.read(4)
    if len(raw) != 4:
        raise FormatError(f"{path}: truncated header", offset=f.tell() - len(raw))
    return struct.unpack(">I", raw)[0]


def load_mnist_idx(images_path, labels_path):
    """Parse the big-endian IDX pair into a Dataset with pixels in [0, 1]."""
    with open(images_path, "rb") as f:
        magic = _read_be32(f, images_path)
        if magic != MNIST_IMAGE_MAGIC:
            raise FormatError(
                f"{images_path}: bad image magic 0x{magic:08x}", offset=0
            )
        count = _read_be32(f, images_path)
        rows = _read_be32(f, images_path)
        cols = _read_be32(f, images_path)
        raw = f.read(count * rows * cols)
        if len(raw) != count * rows * cols:
            raise FormatError(
                f"{images_path}: expected {count * rows * cols} pixel bytes, "
                f"got {len(raw)}", offset=16 + len(raw),
            )
    images = np.frombuffer(raw, dtype=np.uint8).reshape(count, rows * cols)
    with open(labels_path, "rb") as f:
        magic = _read_be32(f, labels_path)
        if magic != MNIST_LABEL_MAGIC:
            raise FormatError(
                f"{labels_path}: bad label magic 0x{magic:08x}", offset=0
            )
        n = _read_be32(f, labels_path)
        if n != count:
            raise FormatError(
                f"{labels_path}: {n} labels for {count} images", offset=4
            )
        raw = f.read(n)
        if len(raw) != n:
            raise FormatError(f"{labels_path}: truncated labels", offset=8 + len(raw))
    labels = np.frombuffer(raw, dtype=np.uint8).astype(np.int64)
    return Dataset(X=images / 255.0, Y=labels, kind="classes")


def load_wine_csv(path):
    """Comma-separated wine rows, class label first (0-2, or 1-3 as published).

    Returns raw (unstandardized) features; standardize with training-split
    statistics via ``standardize_features``.
    """
    features, labels = [], []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 14:
                raise FormatError(
                    f"{path}:{lineno}: expected 14 comma-separated values, "
                    f"got {len(parts)}", offset=lineno,
                )
            try:
                labels.append(int(float(parts[0])))
                features.append([float(p) for p in parts[1:]])
            except ValueError as err:
                raise FormatError(f"{path}:{lineno}: {err}", offset=lineno) from None
    y = np.array(labels, dtype=np.int64)
    if y.min() == 1 and y.max() == 3:
        y = y - 1
    if not np.all((y >= 0) & (y <= 2)):
        raise FormatError(f"{path}: class labels outside 0-2")
    return Dataset(X=np.array(features), Y=y, kind="classes")


def standardize_features(train_X, *others):
    """Zero-mean unit-variance columns, statistics from the training split only."""
    mu = train_X.mean(axis=0)
    sd = train_X.std(axis=0)
    sd[sd == 0] = 1.0
    out = [(train_X - mu) / sd] + [(x - mu) / sd for x in others]
    return out[0] if not others else out


CIFAR_RECORD = 3073  # label byte + 3072 pixel bytes


def load_cifar10_bin(paths):
    """Concatenate CIFAR-10 binary batches; pixels scaled to [0, 1]."""
    if isinstance(paths, (str, bytes)):
        paths = [paths]
    xs, ys = [], []
    for path in paths:
        with open(path, "rb") as f:
            raw = f.read()
        if len(raw) == 0 or len(raw) % CIFAR_RECORD != 0:
            raise FormatError(
                f"{path}: size {len(raw)} is not a multiple of {CIFAR_RECORD}",
                offset=len(raw) - (len(raw) % CIFAR_RECORD),
            )
        rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
        labels = rec[:, 0].astype(np.int64)
        if labels.max(initial=0) > 9:
            raise FormatError(f"{path}: label byte exceeds 9")
        xs.append(rec[:, 1:] / 255.0)
        ys.append(labels)
    return Dataset(X=np.concatenate(xs), Y=np.concatenate(ys), kind="classes")


# ---------------------------------------------------------------------------
# Game of Life (dead border)


def gol_step(board):
    """One synchronous update of Conway's rules on a bool grid.

    Live cells survive with 2 or 3 live 8-neighbours; dead cells come alive
    with exactly 3; everything else dies.  Cells beyond the border are dead.
    """
    board = np.asarray(board, dtype=bool)
    padded = np.pad(board.astype(np.int64), 1)
    n = (
        padded[:-2, :-2] + padded[:-2, 1:-1] + padded[:-2, 2:]
        + padded[1:-1, :-2] + padded[1:-1, 2:]
        + padded[2:, :-2] + padded[2:, 1:-1] + padded[2:, 2:]
    )
    return (board & ((n == 2) | (n == 3))) | (~board & (n == 3))


def gen_gol_dataset(n_boards, shape, density, seed=0):
    """Random boards with their successors; deterministic per seed."""
    if not 0 <= density <= 1:
        raise ValueError("density must be within [0, 1]")
    rng = np.random.default_rng(seed)
    pairs = []
    for _ in range(n_boards):
        board = rng.random(shape) < density
        pairs.append((board, gol_step(board)))
    return pairs


def gol_pairs_to_dataset(pairs):
    """Flatten (board, next) pairs into a per-cell bit-prediction dataset."""
    X = np.stack([b.reshape(-1) for b, _ in pairs]).astype(np.float64)
    Y = np.stack([n.reshape(-1) for _, n in pairs]).astype(np.float64)
    return Dataset(X=X, Y=Y, kind="bits")
