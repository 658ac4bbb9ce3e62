"""Run-configuration files: a strict JSON schema over the task templates.

A config names a task and optionally overrides model, training, and data
fields.  Unknown keys are rejected with a suggestion; everything unspecified
comes from the task's documented defaults.
"""

import dataclasses
import difflib
import json

import numpy as np

from . import tasks
from .errors import ConfigError
from .model import ModelConfig, Placement
from .train import TrainConfig

TOP_KEYS = ("task", "seed", "out_dir", "model", "train", "data")

# geometry is owned by the task template; these knobs are safe to override
MODEL_KEYS = (
    "M", "k", "omega", "steps", "activation", "padding",
    "clamp_inputs", "average_per_step",
)


def _suggest(key, allowed):
    close = difflib.get_close_matches(key, allowed, n=1)
    if close:
        return close[0]
    # abbreviation-style names: an allowed key prefixing the unknown one
    prefixes = [a for a in allowed if key.startswith(a) or a.startswith(key)]
    if prefixes:
        return max(prefixes, key=len)
    return None


def _reject_unknown(given, allowed, where):
    for key in given:
        if key not in allowed:
            hint = _suggest(key, allowed)
            suffix = f"; did you mean {hint!r}?" if hint else ""
            raise ConfigError(f"unknown {where} key {key!r}{suffix}")


def parse_config(path):
    """Load, default-fill, and validate a run configuration."""
    with open(path) as f:
        try:
            raw = json.load(f)
        except json.JSONDecodeError as err:
            raise ConfigError(f"{path}: not valid JSON ({err})") from None
    return config_from_dict(raw, where=str(path))


def config_from_dict(raw, where="config"):
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: top level must be an object")
    _reject_unknown(raw, TOP_KEYS, "top-level")
    if "task" not in raw:
        raise ConfigError(f"{where}: missing required key 'task'")
    task = raw["task"]
    if task not in tasks.TASKS:
        hint = difflib.get_close_matches(task, tasks.TASKS, n=1)
        suffix = f"; did you mean {hint[0]!r}?" if hint else ""
        raise ConfigError(f"unknown task {task!r}{suffix}")

    seed = int(raw.get("seed", 0))
    data_spec = dict(raw.get("data", {}))

    model_over = dict(raw.get("model", {}))
    _reject_unknown(model_over, MODEL_KEYS, "model")
    train_over = dict(raw.get("train", {}))
    train_fields = tuple(f.name for f in dataclasses.fields(TrainConfig))
    _reject_unknown(train_over, train_fields, "train")

    if task == "correspond":
        model_cfg = None
        if model_over:
            raise ConfigError("the correspond task has no model overrides")
    else:
        builder_kwargs = {}
        if task == "xor-tape" and "width" in data_spec:
            builder_kwargs["width"] = int(data_spec["width"])
        if task == "gol-rule" and "board" in data_spec:
            builder_kwargs["shape"] = tuple(data_spec["board"])
        model_cfg = tasks._MODEL_BUILDERS[task](**builder_kwargs)
        for key, val in model_over.items():
            setattr(model_cfg, key, val)
        model_cfg.validate()

    train_cfg = tasks.default_train_config(task, seed=seed, **train_over)
    train_cfg.validate()
    run = tasks.RunConfig(
        task=task, model=model_cfg, train=train_cfg, data=data_spec,
        out_dir=raw.get("out_dir", "runs"),
    )
    return run


# ---------------------------------------------------------------------------
# JSON round-tripping for checkpoints and config echoes


def model_config_to_jsonable(cfg):
    if cfg is None:
        return None
    return {
        "field_shape": list(cfg.field_shape),
        "mode": cfg.mode,
        "M": cfg.M,
        "k": cfg.k,
        "omega": cfg.omega,
        "steps": cfg.steps,
        "activation": cfg.activation,
        "padding": cfg.padding,
        "clamp_inputs": cfg.clamp_inputs,
        "average_per_step": cfg.average_per_step,
        "placements": [
            {"role": p.role, "coords": p.coords.tolist(), "encoding": p.encoding}
            for p in cfg.placements
        ],
    }


def model_config_from_jsonable(d):
    if d is None:
        return None
    placements = [
        Placement(p["role"], np.array(p["coords"], dtype=np.intp), p["encoding"])
        for p in d["placements"]
    ]
    return ModelConfig(
        field_shape=tuple(d["field_shape"]),
        mode=d["mode"],
        M=d["M"],
        k=d["k"],
        omega=d["omega"],
        steps=d["steps"],
        activation=d["activation"],
        padding=d["padding"],
        clamp_inputs=d["clamp_inputs"],
        average_per_step=d["average_per_step"],
        placements=placements,
    )


def train_config_to_jsonable(cfg):
    d = dataclasses.asdict(cfg)
    d["betas"] = list(d["betas"])
    return d


def train_config_from_jsonable(d):
    d = dict(d)
    d["betas"] = tuple(d["betas"])
    return TrainConfig(**d)


def run_config_to_jsonable(run):
    return {
        "task": run.task,
        "out_dir": run.out_dir,
        "data": run.data,
        "model": model_config_to_jsonable(run.model),
        "train": train_config_to_jsonable(run.train),
    }


def run_config_from_jsonable(d):
    return tasks.RunConfig(
        task=d["task"],
        model=model_config_from_jsonable(d["model"]),
        train=train_config_from_jsonable(d["train"]),
        data=d.get("data", {}),
        out_dir=d.get("out_dir", "runs"),
    )
