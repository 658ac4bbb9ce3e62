"""Command-line interface: train, eval, gradcheck, export, correspond, gol."""

import argparse
import json
import os
import sys

import numpy as np

from . import autograd as ag
from . import config as vcfg
from . import data as vdata
from . import tasks
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import VnnError
from .export import export_field
from .model import (ReferenceMLP, build_correspondence, chua_field,
                    forward_batch, param_count)
from .train import evaluate, make_program, train_loop


def _synthetic_batch(model_cfg, n, seed):
    """Placement-compatible random batch (for gradcheck and chua exports)."""
    rng = np.random.default_rng(seed)

    def draw(placements):
        cols = []
        for p in placements:
            if p.encoding == "bit":
                cols.append((rng.random((n, len(p))) < 0.5).astype(np.float64))
            else:
                cols.append(rng.normal(size=(n, len(p))))
        return np.concatenate(cols, axis=1) if cols else None
    x = draw(model_cfg.by_role("input"))
    ctl = draw(model_cfg.by_role("control"))
    n_out = sum(len(p) for p in model_cfg.by_role("output"))
    y = (rng.random((n, n_out)) < 0.5).astype(np.float64)
    return x, ctl, y


def _default_exports(model, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    rank = model.config.rank
    slice_kw = {"axis": rank - 1, "index": 0} if rank == 3 else {}
    written = []
    for what in ("states", "weights"):
        written.append(export_field(
            model, what, os.path.join(out_dir, f"{what}.pgm"), "pgm", **slice_kw))
    n_kernels = len(model.layer_sets()[0].kernels)
    for j in range(n_kernels):
        kern = model.layer_sets()[0].kernels[j]
        kw = {"axis": kern.ndim - 1, "index": kern.shape[-1] // 2} if kern.ndim == 3 else {}
        written.append(export_field(
            model, f"kernel-{j}", os.path.join(out_dir, f"kernel-{j:02d}.pgm"),
            "pgm", **kw))
    return written


def cmd_train(args):
    run = vcfg.parse_config(args.config)
    out_dir = args.out or run.out_dir
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.json"), "w") as f:
        json.dump(vcfg.run_config_to_jsonable(run), f, indent=2, sort_keys=True)

    if run.task == "correspond":
        print("the correspond task does not train; use the correspond subcommand")
        return 2
    train_set, test_set = tasks.task_datasets(run.task, run.data, run.train.seed)
    model = tasks.build_model(run.model, run.train.seed, task=run.task)
    log_path = os.path.join(out_dir, "log.jsonl")
    with open(log_path, "w") as log:
        def log_fn(record):
            log.write(json.dumps(record, sort_keys=True) + "\n")
            log.flush()
            if "loss" in record:
                msg = (f"epoch {record['epoch']!s:>4}  loss {record['loss']:.4f}")
                for key in ("accuracy", "per_bit", "exact_match"):
                    if record.get(key) is not None:
                        msg += f"  {key} {record[key]:.2f}%"
                print(msg, flush=True)
        model, history, state = train_loop(model, train_set, run.train, log_fn)
        final = evaluate(model, test_set)
        log_fn({"epoch": "test", **final.as_dict()})
    save_checkpoint(os.path.join(out_dir, "model.vnnc"), model, state, run)
    _default_exports(model, os.path.join(out_dir, "exports"))
    print(f"test metrics: {json.dumps(final.as_dict(), sort_keys=True)}")
    print(f"artifacts in {out_dir}")
    return 0


def cmd_eval(args):
    model, _, meta = load_checkpoint(args.checkpoint)
    if meta.get("run_config") is None:
        print("checkpoint carries no run configuration; cannot locate data")
        return 2
    run = vcfg.run_config_from_jsonable(meta["run_config"])
    if args.data:
        run.data["dir"] = args.data
    _, test_set = tasks.task_datasets(run.task, run.data, run.train.seed)
    metrics = evaluate(model, test_set)
    print(json.dumps(metrics.as_dict(), sort_keys=True))
    if args.strict:
        ok = True
        if args.min_exact is not None:
            ok &= metrics.exact_match is not None and metrics.exact_match >= args.min_exact
        if args.min_accuracy is not None:
            ok &= metrics.accuracy is not None and metrics.accuracy >= args.min_accuracy
        if not ok:
            print("strict threshold unmet")
            return 1
    return 0


def cmd_gradcheck(args):
    run = vcfg.parse_config(args.config)
    if run.task == "correspond":
        print("nothing to gradcheck for the correspond task")
        return 2
    model = tasks.build_model(run.model, run.train.seed, task=run.task)
    kind = "classes" if run.task in ("clp-wine", "mnist-hyper", "cifar-full",
                                     "cifar-hyper") else "bits"
    program = make_program(model, kind)
    from .model import params_to_dict
    params = params_to_dict(model)
    worst = np.inf
    for seed in (run.train.seed + 1, run.train.seed + 2):
        x, ctl, y = _synthetic_batch(run.model, n=4, seed=seed)
        if kind == "classes":
            y = np.argmax(y, axis=1)
        err = ag.finite_difference_check(
            program, params, (x, ctl, y), epsilon=args.epsilon, n_coords=args.coords)
        worst = min(worst, err)  # a re-draw dodges relu-kink flukes
        if worst < 1e-4:
            break
    print(f"max relative gradient error: {worst:.3e}")
    return 0 if worst < 1e-4 else 1


def cmd_export(args):
    model, _, _ = load_checkpoint(args.checkpoint)
    chua = None
    if args.what == "chua":
        x, ctl, _ = _synthetic_batch(model.config, n=1, seed=args.sample_seed)
        chua = chua_field(model, x[0], None if ctl is None else ctl[0])
    path = args.out or f"{args.what}.{args.format}"
    export_field(model, args.what, path, args.format,
                 axis=args.axis, index=args.index, layer=args.layer, chua=chua)
    print(path)
    return 0


def cmd_correspond(args):
    widths = [int(w) for w in args.widths.split(",")]
    rng = np.random.default_rng(args.seed)
    worst = 0.0
    for _ in range(args.trials):
        mlp = ReferenceMLP.random(widths, rng)
        vnn = build_correspondence(widths, mlp)
        x = rng.normal(size=(8, widths[0]))
        dev = float(np.abs(forward_batch(vnn, x) - mlp.forward(x)).max())
        worst = max(worst, dev)
    n_params = param_count(ReferenceMLP.random(widths, rng))
    print(f"widths {widths}: {args.trials} draws, dense reference has "
          f"{n_params} parameters, max |VNN - MLP| = {worst:.3e}")
    return 0 if worst < 1e-6 else 1


def _read_board(path):
    rows = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            rows.append([c in "1#" for c in line])
    if not rows or len({len(r) for r in rows}) != 1:
        print(f"{path}: board must be non-empty rectangular lines of 0/1 or ./#",
              file=sys.stderr)
        raise SystemExit(2)
    return np.array(rows, dtype=bool)


def cmd_gol(args):
    board = _read_board(args.board)
    for _ in range(args.steps):
        board = vdata.gol_step(board)
    text = "\n".join("".join("#" if v else "." for v in row) for row in board)
    if args.out:
        with open(args.out, "w") as f:
            f.write(text + "\n")
    else:
        print(text)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="vnn",
        description="Train and inspect Von Neumann Networks on cellular fields",
    )
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("train", help="train a task from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="output directory (default: config out_dir)")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on its task's test data")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", help="override data directory")
    p.add_argument("--strict", action="store_true")
    p.add_argument("--min-exact", type=float, default=None)
    p.add_argument("--min-accuracy", type=float, default=None)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check")
    p.add_argument("--config", required=True)
    p.add_argument("--epsilon", type=float, default=1e-5)
    p.add_argument("--coords", type=int, default=64)
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("export", help="export fields/states/kernels from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--what", required=True,
                   help="states | weights | biases | chua | kernel-<j>")
    p.add_argument("--format", choices=("pgm", "csv"), default="pgm")
    p.add_argument("--out")
    p.add_argument("--axis", type=int, default=0)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--layer", type=int, default=0)
    p.add_argument("--sample-seed", type=int, default=0)
    p.set_defaults(fn=cmd_export)

    p = sub.add_parser("correspond", help="verify dense-MLP equivalence")
    p.add_argument("--widths", default="8,4,2")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_correspond)

    p = sub.add_parser("gol", help="evolve a Game of Life board file")
    p.add_argument("--steps", type=int, default=1)
    p.add_argument("--board", required=True)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_gol)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if not getattr(args, "fn", None):
        parser.print_usage()
        return 2
    try:
        return args.fn(args)
    except VnnError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except FileNotFoundError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
