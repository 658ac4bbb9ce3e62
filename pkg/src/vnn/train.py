"""Losses, decoupled-decay Adam with cosine annealing, and the training loop."""

import copy
import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import autograd as ag
from . import model as vm
from .errors import NumericOverflowError


@dataclass
class TrainConfig:
    learning_rate_init: float = 1e-3
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.01
    batch_size: int = 64
    epochs: int = 10
    seed: int = 0
    lr_floor: float = 0.0
    clip_norm: float = None
    val_fraction: float = 0.1

    def validate(self):
        if self.learning_rate_init < 0:
            raise ValueError("learning rate must be non-negative")
        if not (0 <= self.betas[0] < 1 and 0 <= self.betas[1] < 1):
            raise ValueError("betas must lie in [0, 1)")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")


@dataclass
class OptimizerState:
    m: dict
    v: dict
    t: int = 0

    @classmethod
    def zeros_like(cls, params):
        return cls(
            m={k: np.zeros_like(a) for k, a in params.items()},
            v={k: np.zeros_like(a) for k, a in params.items()},
        )


@dataclass
class Metrics:
    loss: float
    accuracy: float = None
    per_bit: float = None
    exact_match: float = None
    param_count: int = 0

    def score(self):
        """Model-selection key: exact-match, then per-bit / accuracy, then loss.

        Lexicographic so that bit tasks with a long all-bits-correct drought
        still improve on per-bit accuracy.
        """
        if self.exact_match is not None:
            return (self.exact_match, self.per_bit, -self.loss)
        if self.accuracy is not None:
            return (self.accuracy, 0.0, -self.loss)
        return (-self.loss, 0.0, 0.0)

    def as_dict(self):
        return {
            "loss": self.loss,
            "accuracy": self.accuracy,
            "per_bit": self.per_bit,
            "exact_match": self.exact_match,
            "param_count": self.param_count,
        }


# ---------------------------------------------------------------------------
# Plain single-sample loss heads (the batched tape versions live in autograd)


def softmax_xent(logits, label):
    """Cross-entropy of softmax(logits) against one class index."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.size < 2:
        raise ValueError("need at least 2 classes")
    label = int(label)
    if not 0 <= label < logits.size:
        raise ValueError(f"label {label} out of range for {logits.size} classes")
    shifted = logits - logits.max()
    return float(np.log(np.exp(shifted).sum()) - shifted[label])


def bitwise_bce(outputs, target_bits):
    """Mean over bits of the stabilized binary cross-entropy on raw outputs."""
    o = np.asarray(outputs, dtype=np.float64)
    t = np.asarray(target_bits, dtype=np.float64)
    if o.shape != t.shape:
        raise ValueError(f"length mismatch: {o.shape} vs {t.shape}")
    return float((np.maximum(o, 0.0) - o * t + np.log1p(np.exp(-np.abs(o)))).mean())


def cosine_lr(t, total, cfg):
    """Cosine decay from the initial rate down to the floor."""
    if total <= 0:
        raise ValueError("total step count must be positive")
    if not 0 <= t <= total:
        raise ValueError(f"step {t} outside [0, {total}]")
    lo, hi = cfg.lr_floor, cfg.learning_rate_init
    return lo + 0.5 * (hi - lo) * (1.0 + math.cos(math.pi * t / total))


def adamw_step(params, grads, state, lr_t, cfg):
    """Decoupled weight decay, then a bias-corrected Adam update, in place.

    State logits never decay (decay would pull the architecture toward
    s=0.5); frozen state cells arrive with exactly zero gradient and stay
    untouched.
    """
    b1, b2 = cfg.betas
    state.t += 1
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for name, p in params.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise NumericOverflowError(f"non-finite gradient for {name}")
        if cfg.weight_decay and not name.endswith("S_logits"):
            p *= 1.0 - lr_t * cfg.weight_decay
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr_t * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
    return params, state


def clip_gradients(grads, clip_norm):
    """Scale all gradients down to the given global L2 norm if they exceed it."""
    total = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if total > clip_norm > 0:
        scale = clip_norm / total
        for g in grads.values():
            g *= scale
    return grads


# ---------------------------------------------------------------------------
# Evaluation


def _batched_outputs(model, X, CTL, batch_size=512):
    if isinstance(model, vm.ReferenceMLP):
        xin = X if CTL is None else np.concatenate([X, CTL], axis=1)
        return model.forward(xin)
    outs = []
    for lo in range(0, len(X), batch_size):
        hi = lo + batch_size
        ctl = None if CTL is None else CTL[lo:hi]
        outs.append(vm.forward_batch(model, X[lo:hi], ctl))
    return np.concatenate(outs)


def evaluate(model, dataset):
    """Metrics on a dataset: accuracies in percent, pure and deterministic."""
    out = _batched_outputs(model, dataset.X, dataset.CTL)
    n = len(dataset.X)
    count = vm.param_count(model)
    if dataset.kind == "classes":
        labels = dataset.Y.astype(np.intp)
        loss = float(ag.softmax_xent_loss(out, labels).value)
        acc = 100.0 * float((out.argmax(axis=1) == labels).mean())
        return Metrics(loss=loss, accuracy=acc, param_count=count)
    bits = dataset.Y
    loss = float(ag.bce_logits_loss(out, bits).value)
    pred = out > 0.0  # sigma(o) > 0.5
    per_bit = 100.0 * float((pred == (bits > 0.5)).mean())
    exact = 100.0 * float(np.all(pred == (bits > 0.5), axis=1).mean())
    return Metrics(loss=loss, per_bit=per_bit, exact_match=exact, param_count=count)


# ---------------------------------------------------------------------------
# Training loop


def make_program(model, kind):
    """Recorded program: batched forward plus the task's loss head."""

    def program(tensors, batch):
        X, CTL, Y = batch
        out = vm.forward_tensors(model, tensors, X, CTL)
        if kind == "classes":
            return ag.softmax_xent_loss(out, Y.astype(np.intp))
        return ag.bce_logits_loss(out, Y)

    return program


def train_mlp(mlp, dataset, cfg, log_fn=None):
    """Train a dense reference MLP with the same optimizer and schedule.

    Controls, when present, are concatenated onto the inputs.  Returns the
    MLP (best-validation weights installed) and the metric history.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    params = {}
    for i, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        params[f"W{i}"] = np.array(w, dtype=np.float64)
        params[f"b{i}"] = np.array(b, dtype=np.float64)
    n_layers = len(mlp.weights)

    def install(p):
        mlp.weights = [p[f"W{i}"] for i in range(n_layers)]
        mlp.biases = [p[f"b{i}"] for i in range(n_layers)]

    install(params)

    def program(pt, batch):
        X, CTL, Y = batch
        h = ag.Tensor(X if CTL is None else np.concatenate([X, CTL], axis=1))
        for i in range(n_layers):
            h = ag.affine(h, pt[f"W{i}"], pt[f"b{i}"])
            if i < n_layers - 1 or mlp.final_activation:
                h = ag.activation(h, mlp.activation)
        if dataset.kind == "classes":
            return ag.softmax_xent_loss(h, Y.astype(np.intp))
        return ag.bce_logits_loss(h, Y)

    state = OptimizerState.zeros_like(params)
    n = len(dataset.X)
    n_val = int(round(n * cfg.val_fraction))
    order = rng.permutation(n)
    val_idx, train_idx = order[:n_val], order[n_val:]
    if len(train_idx) == 0:
        train_idx = order
    val_set = dataset.subset(val_idx) if n_val else dataset
    n_batches = max(1, len(train_idx) // cfg.batch_size)
    total_steps = cfg.epochs * n_batches
    history = []
    best = (None, copy.deepcopy(params))
    step = 0
    for epoch in range(cfg.epochs):
        perm = rng.permutation(len(train_idx))
        epoch_loss, seen = 0.0, 0
        for bi in range(n_batches):
            sel = train_idx[perm[bi * cfg.batch_size : (bi + 1) * cfg.batch_size]]
            if len(sel) == 0:
                continue
            lr_t = cosine_lr(step, total_steps, cfg)
            loss, grads = ag.grad(program, params, dataset.batch(sel))
            if cfg.clip_norm:
                clip_gradients(grads, cfg.clip_norm)
            adamw_step(params, grads, state, lr_t, cfg)
            epoch_loss += loss * len(sel)
            seen += len(sel)
            step += 1
        metrics = evaluate(mlp, val_set)
        metrics.loss = epoch_loss / max(seen, 1)
        history.append(metrics)
        if log_fn:
            log_fn({"epoch": epoch, "lr": cosine_lr(step, total_steps, cfg),
                    **metrics.as_dict()})
        if best[0] is None or metrics.score() > best[0]:
            best = (metrics.score(), copy.deepcopy(params))
    install(best[1])
    return mlp, history


def train_loop(model, dataset, cfg, log_fn=None):
    """Train a model; returns (model with best params, history, optimizer state).

    Fully deterministic given ``cfg.seed``: the validation split, every
    epoch's shuffle, and the optimizer trajectory all derive from one seeded
    generator.  Divergence aborts cleanly with the last finite parameters.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    params = vm.params_to_dict(model)
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    vm.dict_to_params(model, params)
    state = OptimizerState.zeros_like(params)
    program = make_program(model, dataset.kind)

    n = len(dataset.X)
    n_val = int(round(n * cfg.val_fraction))
    order = rng.permutation(n)
    val_idx, train_idx = order[:n_val], order[n_val:]
    if len(train_idx) == 0:
        train_idx = order
    val_set = dataset.subset(val_idx) if n_val else dataset

    n_batches = max(1, len(train_idx) // cfg.batch_size)
    total_steps = cfg.epochs * n_batches
    history = []
    best = (None, copy.deepcopy(params), state.t)
    step = 0
    for epoch in range(cfg.epochs):
        perm = rng.permutation(len(train_idx))
        epoch_loss, seen = 0.0, 0
        aborted = False
        for bi in range(n_batches):
            sel = train_idx[perm[bi * cfg.batch_size : (bi + 1) * cfg.batch_size]]
            if len(sel) == 0:
                continue
            batch = dataset.batch(sel)
            lr_t = cosine_lr(step, total_steps, cfg)
            try:
                loss, grads = ag.grad(program, params, batch)
            except NumericOverflowError:
                aborted = True
                break
            if cfg.clip_norm:
                clip_gradients(grads, cfg.clip_norm)
            adamw_step(params, grads, state, lr_t, cfg)
            epoch_loss += loss * len(sel)
            seen += len(sel)
            step += 1
        if aborted:
            vm.dict_to_params(model, best[1])
            if log_fn:
                log_fn({"epoch": epoch, "event": "diverged", "restored_step": best[2]})
            return model, history, state
        metrics = evaluate(model, val_set)
        metrics.loss = epoch_loss / max(seen, 1)
        history.append(metrics)
        if log_fn:
            log_fn({"epoch": epoch, "lr": cosine_lr(step, total_steps, cfg),
                    **metrics.as_dict()})
        if best[0] is None or metrics.score() > best[0]:
            best = (metrics.score(), copy.deepcopy(params), state.t)
    vm.dict_to_params(model, best[1])
    return model, history, state
