"""Command-line entry point.

Exit codes: 0 success, 1 runtime failure (structured JSON on stderr), 2 usage
error.  Relative ``--out`` paths resolve against ``$QECBENCH_OUT_ROOT`` when it
is set; ``$QECBENCH_JOBS`` supplies the default worker count.
"""

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
import time

import numpy as np

from . import __version__
from .bench import SweepConfig, Timing, evaluate, run_sweep, time_inference
from .checks import TOLERANCE, run_suite
from .dataset import Mode, generate_eval_set, generate_training_set, read_dataset, to_jsonl, write_dataset
from .decoders import ModelConfig, build_lookup_decoder, canonical_architecture, load_checkpoint, save_checkpoint
from .decoders.config import ARCHITECTURES, tabulated_batch_size
from .decoders.estimator import TrivialDecoder
from .exceptions import InvalidParameterError
from .lattice import build_code
from .training import TrainConfig, train

log = logging.getLogger("qecbench")

DESK = {"pool": 100_000, "eval": 100_000, "epochs": 200, "val_interval": 5}
PAPER = {"pool": 10_000_000, "eval": 1_000_000, "epochs": 1000, "val_interval": 1}


# --- argument types ---------------------------------------------------------


def _probability(text):
    try:
        p = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not 0.0 <= p <= 1.0:
        raise argparse.ArgumentTypeError(f"error probability must lie in [0, 1], got {p}")
    return p


def _positive(text):
    try:
        n = int(float(text)) if "e" in text.lower() else int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if n < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {n}")
    return n


def _nonneg(text):
    n = int(text)
    if n < 0:
        raise argparse.ArgumentTypeError(f"must be non-negative, got {n}")
    return n


def _distance(text):
    d = _positive(text)
    if d < 2:
        raise argparse.ArgumentTypeError(f"distance must be >= 2, got {d}")
    return d


def _architecture(text):
    try:
        return canonical_architecture(text)
    except InvalidParameterError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _list_of(item):
    def parse(text):
        return [item(part.strip()) for part in text.split(",") if part.strip()]

    parse.__name__ = f"list of {item.__name__}"
    return parse


# --- manifest ---------------------------------------------------------------


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


class RunManifest:
    """Record of one invocation: argv, parsed flags, seeds, versions and file digests."""

    def __init__(self, argv, args):
        self.data = {
            "tool": "qecbench",
            "version": __version__,
            "subcommand": args.command,
            "argv": list(argv),
            "flags": {k: v for k, v in sorted(vars(args).items()) if k not in ("command", "handler")},
            "seeds": {},
            "inputs": {},
            "outputs": {},
            "python": platform.python_version(),
            "numpy": np.__version__,
            "started_unix": time.time(),
        }

    def seed(self, name, value):
        self.data["seeds"][name] = value

    def add_input(self, path):
        self.data["inputs"][os.path.basename(path)] = sha256_file(path)

    def add_output(self, path):
        self.data["outputs"][os.path.basename(path)] = sha256_file(path)

    def write(self, path):
        self.data["elapsed_s"] = time.time() - self.data["started_unix"]
        with open(path, "w") as fh:
            json.dump(self.data, fh, indent=2, sort_keys=True, default=str)
        return path


def _out_path(path):
    root = os.environ.get("QECBENCH_OUT_ROOT")
    if root and not os.path.isabs(path):
        path = os.path.join(root, path)
    return path


def _out_dir(path):
    path = _out_path(path)
    os.makedirs(path, exist_ok=True)
    return path


def _out_file(path):
    path = _out_path(path)
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    return path


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)


def _scale(args):
    return PAPER if getattr(args, "paper_scale", False) else DESK


# --- subcommands ------------------------------------------------------------


def cmd_generate(args, manifest):
    code = build_code(args.distance)
    out = _out_file(args.out)
    manifest.seed("data", args.seed)
    pool = args.pool or _scale(args)["pool" if args.mode == "train" else "eval"]
    if args.mode == "train":
        ds = generate_training_set(code, args.p, pool, args.seed, jobs=args.jobs)
    else:
        ds = generate_eval_set(code, args.p, pool, args.seed)
    write_dataset(ds, out)
    manifest.add_output(out)
    manifest.write(out + ".manifest.json")
    print(json.dumps({"out": out, "records": len(ds), "pool": pool, "mode": args.mode}))
    return 0


def cmd_train(args, manifest):
    train_set = read_dataset(args.train)
    manifest.add_input(args.train)
    val_set = None
    if args.val:
        val_set = read_dataset(args.val)
        manifest.add_input(args.val)
    out = _out_dir(args.out)
    manifest.seed("model", args.seed)
    scale = _scale(args)
    arch = args.model
    start = time.perf_counter()
    if arch == "Lookup":
        model = build_lookup_decoder(train_set)
        history = {}
    elif arch == "TrivialNoError":
        model = TrivialDecoder(distance=train_set.distance).fit()
        history = {}
    else:
        config = ModelConfig.for_setting(
            arch, train_set.distance, train_set.error_prob, layers=args.layers, hidden=args.hidden, seed=args.seed
        )
        batch = args.batch or tabulated_batch_size(train_set.distance, train_set.error_prob)
        tc = TrainConfig(
            epochs=args.epochs or scale["epochs"], lr=args.lr, batch_size=batch, patience=args.patience,
            val_interval=args.val_interval or scale["val_interval"], seed=args.seed,
        )
        model = train(config, tc, train_set, val_set)
        history = model.history_
    wall = time.perf_counter() - start
    ckpt = os.path.join(out, "model.ckpt")
    save_checkpoint(model, ckpt)
    hist_path = os.path.join(out, "history.json")
    _write_json(hist_path, {**history, "train_wall_s": wall})
    manifest.add_output(ckpt)
    manifest.write(os.path.join(out, "manifest.json"))
    best = max((e for e in history.get("val_ecr", []) if e is not None), default=None)
    print(json.dumps({"out": out, "architecture": arch, "best_val_ecr": best, "train_wall_s": round(wall, 3)}))
    return 0


def cmd_eval(args, manifest):
    model = load_checkpoint(args.ckpt)
    ckpt = args.ckpt if os.path.isfile(args.ckpt) else os.path.join(args.ckpt, "model.ckpt")
    manifest.add_input(ckpt)
    test = read_dataset(args.test)
    manifest.add_input(args.test)
    if test.mode is not Mode.EVAL:
        raise InvalidParameterError("evaluation needs an Eval-mode dataset")
    code = build_code(test.distance)
    metrics = evaluate(model, code, test)
    timing = time_inference(model, code, test, repetitions=args.timing_reps) if args.timing_reps else None
    report = metrics.to_dict()
    if isinstance(timing, Timing):
        report.update(mean_inference_ms=timing.mean_ms, std_inference_ms=timing.std_ms)
    report.update(architecture=model.config_.architecture, distance=test.distance, p=test.error_prob)
    out = _out_file(args.report)
    _write_json(out, report)
    manifest.add_output(out)
    manifest.write(out + ".manifest.json")
    print(json.dumps({k: report[k] for k in ("overall_accuracy", "error_correction_rate")}))
    return 0


def _sweep_config(args, **grid):
    scale = _scale(args)
    return SweepConfig(
        seeds=args.seeds, pool_size=args.pool or scale["pool"], val_size=args.val_size or scale["eval"],
        eval_size=args.eval_size or scale["eval"], epochs=args.epochs or scale["epochs"],
        val_interval=args.val_interval or scale["val_interval"], lr=args.lr, batch_size=args.batch,
        data_seed=args.data_seed, jobs=args.jobs, timing_repetitions=args.timing_reps, **grid,
    )


def _emit_report(report, args, manifest):
    out = _out_dir(args.out)
    csv_path = os.path.join(out, "results.csv")
    json_path = os.path.join(out, "summary.json")
    report.write_csv(csv_path)
    report.write_json(json_path)
    manifest.seed("data", args.data_seed)
    manifest.seed("models", list(range(args.seeds)))
    manifest.add_output(csv_path)
    manifest.add_output(json_path)
    manifest.write(os.path.join(out, "manifest.json"))
    failed = sum(1 for r in report.rows if r["error"])
    print(json.dumps({"out": out, "rows": len(report.rows), "failed_cells": failed}))
    return 0


def cmd_bench(args, manifest):
    cfg = _sweep_config(args, architectures=tuple(args.models), distances=tuple(args.distances),
                        probs=tuple(args.ps))
    return _emit_report(run_sweep(cfg), args, manifest)


def cmd_sweep_depth(args, manifest):
    cfg = _sweep_config(args, architectures=tuple(args.models), distances=(args.distance,),
                        probs=(args.p,), depths=tuple(args.depths))
    return _emit_report(run_sweep(cfg), args, manifest)


def cmd_gradcheck(args, manifest):
    results = run_suite(max_coords=args.max_coords, include_architectures=not args.primitives_only)
    failed = [r for r in results if not r.passed]
    for r in results:
        print(f"{'ok  ' if r.passed else 'FAIL'} {r.name:<28} {r.max_rel_error:.2e}")
    print(f"{len(results) - len(failed)}/{len(results)} passed (tolerance {TOLERANCE:g})")
    if args.out:
        out = _out_dir(args.out)
        path = os.path.join(out, "gradcheck.json")
        _write_json(path, [{"name": r.name, "max_rel_error": float(r.max_rel_error), "passed": bool(r.passed)} for r in results])
        manifest.add_output(path)
        manifest.write(os.path.join(out, "manifest.json"))
    return 1 if failed else 0


def cmd_inspect(args, manifest):
    ds = read_dataset(args.dataset)
    manifest.add_input(args.dataset)
    if args.out:
        out = _out_file(args.out)
        with open(out, "w") as fh:
            to_jsonl(ds, fh)
        manifest.add_output(out)
        manifest.write(out + ".manifest.json")
    else:
        to_jsonl(ds, sys.stdout)
    return 0


def cmd_replay(args, manifest):
    with open(args.manifest) as fh:
        argv = json.load(fh)["argv"]
    if argv and argv[0] == "replay":
        raise InvalidParameterError("refusing to replay a replay manifest")
    return main(argv)


# --- parser -----------------------------------------------------------------


def _add_training_flags(p, sweep=False):
    p.add_argument("--epochs", type=_positive, help="training epochs (desk default 200)")
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--batch", type=_positive, help="batch size (default: tabulated value for d, p)")
    p.add_argument("--val-interval", type=_positive, help="epochs between validation checks")
    p.add_argument("--paper-scale", action="store_true", help="full-scale pools (1e7/1e6) and 1000 epochs")
    if not sweep:
        p.add_argument("--patience", type=_positive, help="validation checks without improvement (default min(50, epochs))")


def _add_sweep_flags(p):
    _add_training_flags(p, sweep=True)
    p.add_argument("--seeds", type=_positive, default=1, help="training seeds per cell")
    p.add_argument("--pool", type=_positive, help="training pool size (desk default 1e5)")
    p.add_argument("--val-size", type=_positive, help="validation samples")
    p.add_argument("--eval-size", type=_positive, help="test samples (desk default 1e5)")
    p.add_argument("--data-seed", type=_nonneg, default=2024)
    p.add_argument("--timing-reps", type=_positive, default=100)
    p.add_argument("--out", required=True)


def build_parser():
    env_jobs = os.environ.get("QECBENCH_JOBS")
    parser = argparse.ArgumentParser(prog="qecbench", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"qecbench {__version__}")
    parser.add_argument("--jobs", type=_positive, default=int(env_jobs) if env_jobs else 1,
                        help="worker processes (env QECBENCH_JOBS)")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("generate", help="sample a training or evaluation dataset")
    p.add_argument("--distance", type=_distance, required=True)
    p.add_argument("--p", type=_probability, required=True)
    p.add_argument("--pool", type=_positive, help="pool size (train) or sample count (eval)")
    p.add_argument("--mode", choices=("train", "eval"), required=True)
    p.add_argument("--seed", type=_nonneg, required=True)
    p.add_argument("--paper-scale", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_generate)

    p = sub.add_parser("train", help="train one decoder and write a checkpoint directory")
    p.add_argument("--model", type=_architecture, required=True, help=", ".join(ARCHITECTURES))
    p.add_argument("--train", required=True)
    p.add_argument("--val")
    p.add_argument("--seed", type=_nonneg, default=0)
    p.add_argument("--layers", type=_positive)
    p.add_argument("--hidden", type=_positive, default=16)
    _add_training_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on an Eval-mode dataset")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--timing-reps", type=_nonneg, default=100, help="0 disables timing")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("bench", help="architecture x distance x p x seed grid")
    p.add_argument("--models", type=_list_of(_architecture), required=True)
    p.add_argument("--distances", type=_list_of(_distance), required=True)
    p.add_argument("--ps", type=_list_of(_probability), required=True)
    _add_sweep_flags(p)
    p.set_defaults(handler=cmd_bench)

    p = sub.add_parser("sweep-depth", help="depth sweep for graph models")
    p.add_argument("--models", type=_list_of(_architecture), default=["GCN", "GCNII"])
    p.add_argument("--depths", type=_list_of(_positive), default=[2, 4, 8, 16, 32])
    p.add_argument("--distance", type=_distance, default=3)
    p.add_argument("--p", type=_probability, default=0.005)
    _add_sweep_flags(p)
    p.set_defaults(handler=cmd_sweep_depth)

    p = sub.add_parser("gradcheck", help="finite-difference check of every primitive and architecture")
    p.add_argument("--max-coords", type=_positive, default=200)
    p.add_argument("--primitives-only", action="store_true")
    p.add_argument("--out")
    p.set_defaults(handler=cmd_gradcheck)

    p = sub.add_parser("inspect", help="dump a dataset as JSON lines")
    p.add_argument("dataset")
    p.add_argument("--out", help="output file (default stdout)")
    p.set_defaults(handler=cmd_inspect)

    p = sub.add_parser("replay", help="re-run the invocation recorded in a manifest")
    p.add_argument("manifest")
    p.set_defaults(handler=cmd_replay)
    return parser


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    manifest = RunManifest(argv, args)
    try:
        return args.handler(args, manifest)
    except BrokenPipeError:
        sys.stdout = open(os.devnull, "w")
        return 0
    except Exception as exc:
        json.dump({"error": type(exc).__name__, "message": str(exc), "subcommand": args.command}, sys.stderr)
        sys.stderr.write("\n")
        log.debug("traceback", exc_info=True)
        return 1


if __name__ == "__main__":
    sys.exit(main())
