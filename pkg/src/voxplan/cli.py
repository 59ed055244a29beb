"""``voxplan`` command line.

Subcommands: estimate, bench-mem, bench-speed, train, eval, phantom.

Exit codes: 0 success, 1 runtime failure, 2 usage error.  Every subcommand
accepts ``--config FILE`` (JSON with the same keys as the flags, or a run
manifest written by a previous run); explicit flags override file values.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import io
import json
import logging
import os
import sys
import time
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import __version__
from .dataio import (
    PhantomSpec,
    Sample,
    Volume,
    load_dataset,
    phantom_corpus,
    read_raw,
    read_volume,
    save_samples,
    split_dataset,
    volume_files,
    write_raw,
)
from .executor.checkpoint import write_checkpoint
from .executor.step import Executor, init_params
from .graph import GraphError, Precision, UNetSpec, build_unet, param_count
from .memplan import (
    SWEEP_AXES,
    estimate_completion_time,
    format_axis_value,
    pad_dims,
    parse_dims,
    plan_training_memory,
    swept_spec,
    sweep_csv,
    SweepRow,
)
from .optim import OPTIMIZERS, OptimizerConfig
from .losses import LOSS_KINDS
from .trainer import TrainConfig, confusion_voxels, metrics_csv, predict_masks, stack_batch, train

log = logging.getLogger("voxplan")

THREADS_ENV = "VOXPLAN_THREADS"
SPEED_HEADER = ("threads", "step_seconds_mean", "images_per_second", "speedup_vs_serial")
EVAL_HEADER = ("name", "dice", "accuracy", "tp", "fp", "fn", "tn")


class UsageError(Exception):
    pass


def env_threads() -> int:
    raw = os.environ.get(THREADS_ENV)
    if not raw:
        return 1
    try:
        value = int(raw)
    except ValueError:
        raise UsageError(f"{THREADS_ENV}={raw!r} is not an integer") from None
    if value < 1:
        raise UsageError(f"{THREADS_ENV} must be >= 1")
    return value


def int_list(text: str) -> List[int]:
    try:
        values = [int(v) for v in str(text).replace(" ", "").split(",") if v]
    except ValueError:
        raise UsageError(f"expected a comma-separated integer list, got {text!r}") from None
    return values


def float_pair(text: str) -> Tuple[float, float]:
    parts = [p for p in str(text).split(",") if p]
    if len(parts) != 2:
        raise UsageError(f"expected 'low,high', got {text!r}")
    return float(parts[0]), float(parts[1])


def fmt(value: float) -> str:
    return f"{value:.6g}"


# --- parser ---------------------------------------------------------------


def _add_spec_flags(p: argparse.ArgumentParser, *, batch: int, depth: int, filters: int, dims: Optional[str]) -> None:
    g = p.add_argument_group("network")
    g.add_argument("--batch", type=int, default=batch, help="batch size N")
    g.add_argument("--dims", default=dims, help="input volume DxHxW, e.g. 240x240x155")
    g.add_argument("--in-channels", type=int, default=1)
    g.add_argument("--classes", type=int, default=1)
    g.add_argument("--depth", type=int, default=depth, help="pooling levels L")
    g.add_argument("--filters", type=int, default=filters, help="base filter count F")
    g.add_argument("--precision", choices=[p.value for p in Precision], default="single")
    g.add_argument("--optimizer", choices=OPTIMIZERS, default="sgd")


def build_parser() -> Tuple[argparse.ArgumentParser, Dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(prog="voxplan", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"voxplan {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    subs: Dict[str, argparse.ArgumentParser] = {}

    def add(name: str, help_: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_, description=help_)
        p.add_argument("--config", help="JSON config or run manifest; flags override its values")
        p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
        subs[name] = p
        return p

    p = add("estimate", "predict peak training memory (and optionally completion time)")
    _add_spec_flags(p, batch=1, depth=2, filters=8, dims=None)
    p.add_argument("--train-samples", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seconds-per-image", type=float)
    p.add_argument("--json", action="store_true", help="print a JSON report instead of a table")
    p.add_argument("--strict-dims", action="store_true", help="reject dims not divisible by 2^depth instead of padding")
    p.add_argument("--dump-graph", help="write the network graph as JSON to this path")
    p.add_argument("--manifest", help="write a run manifest to this path")

    p = add("bench-mem", "sweep predicted (and optionally measured) memory over batch, spatial size or filters")
    _add_spec_flags(p, batch=1, depth=2, filters=8, dims="32x32x32")
    p.add_argument("--sweep", choices=SWEEP_AXES, required=False)
    p.add_argument("--values", help="comma-separated sweep values (spatial: 16x16x16,32x32x32 or 16,32)")
    p.add_argument("--out", help="CSV path (default: stdout)")
    p.add_argument("--measure", action="store_true", help="also run one instrumented training step per point")
    p.add_argument("--measure-limit", type=int, default=2 * 1024**3, help="skip measuring points predicted above this many bytes")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--plot", action="store_true", help="render a PNG next to --out")

    p = add("bench-speed", "time training steps across worker-thread counts")
    _add_spec_flags(p, batch=4, depth=2, filters=8, dims="32x32x32")
    p.add_argument("--threads", help="comma-separated thread counts (default: 1 and $VOXPLAN_THREADS, or 1,2,4)")
    p.add_argument("--steps", type=int, default=3)
    p.add_argument("--warmup", type=int, default=1)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--loss", choices=LOSS_KINDS, default="bce_plus_dice")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="CSV path (default: stdout)")
    p.add_argument("--plot", action="store_true")

    p = add("train", "train a U-Net on a dataset directory or generated phantoms")
    _add_spec_flags(p, batch=2, depth=2, filters=8, dims="32x32x32")
    p.set_defaults(optimizer="adam")
    src = p.add_argument_group("data")
    src.add_argument("--data", help="dataset directory (*.vxv samples, or images/ + masks/)")
    src.add_argument("--phantom-count", type=int, default=80)
    src.add_argument("--phantom-seed", type=int, default=1000)
    src.add_argument("--train-count", type=int, default=64)
    src.add_argument("--test-count", type=int, default=16)
    src.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--loss", choices=LOSS_KINDS, default="bce_plus_dice")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=None, help="worker threads (default: $VOXPLAN_THREADS or 1)")
    p.add_argument("--checked", action="store_true", help="scan every kernel output for NaN/Inf")
    p.add_argument("--out", help="output directory")
    p.add_argument("--plot", action="store_true")
    p.add_argument("--save-predictions", action="store_true", help="write binary test-set predictions to OUT/predictions")
    p.add_argument("--dump-graph", help="write the network graph as JSON to this path")

    p = add("eval", "score predicted masks against ground truth")
    p.add_argument("--pred", help="directory of predicted masks (.nii or .vxv)")
    p.add_argument("--truth", help="directory of ground-truth masks (or a dataset with masks/)")
    p.add_argument("--out", help="CSV path (default: stdout)")

    p = add("phantom", "generate synthetic ellipsoid phantoms as VXV1 sample files")
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--dims", default="32x32x32")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output directory")
    p.add_argument("--ellipsoids", default="1,3", help="min,max ellipsoids per volume")
    p.add_argument("--radius", default="3,7", help="min,max radius in voxels")
    p.add_argument("--intensity", default="1,2", help="min,max foreground intensity")
    p.add_argument("--noise-std", type=float, default=0.35)
    p.add_argument("--precision", choices=[p_.value for p_ in Precision], default="single")
    return parser, subs


def _config_from_file(path: str, command: str, sub: argparse.ArgumentParser) -> Dict[str, Any]:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    if isinstance(data, dict) and "config" in data and "tool" in data:
        if data.get("command") != command:
            raise UsageError(f"manifest {path} is for {data.get('command')!r}, not {command!r}")
        data = data["config"]
    if not isinstance(data, dict):
        raise UsageError(f"config {path} must hold a JSON object")
    known = {a.dest for a in sub._actions}
    out = {}
    for key, value in data.items():
        dest = key.replace("-", "_")
        if dest not in known or dest in ("help", "config"):
            raise UsageError(f"config {path}: unknown key {key!r}")
        out[dest] = value
    return out


def parse_args(argv: Optional[Sequence[str]]) -> argparse.Namespace:
    parser, subs = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        parser.exit(2, "voxplan: error: a command is required\n")
    if args.config:
        sub = subs[args.command]
        try:
            sub.set_defaults(**_config_from_file(args.config, args.command, sub))
        except UsageError as exc:
            sub.error(str(exc))
        args = parser.parse_args(argv)
    args._parser = subs[args.command]
    return args


# --- manifest -------------------------------------------------------------


def resolved_config(args: argparse.Namespace) -> Dict[str, Any]:
    return {k: v for k, v in sorted(vars(args).items()) if not k.startswith("_") and k not in ("command", "config", "verbose")}


def write_manifest(path: Path, args: argparse.Namespace, started: str, extra: Optional[Dict[str, Any]] = None) -> None:
    cfg = resolved_config(args)
    manifest = {
        "tool": "voxplan",
        "version": __version__,
        "command": args.command,
        "config": cfg,
        "seed": cfg.get("seed"),
        "started_at": started,
        "finished_at": _now(),
    }
    if extra:
        manifest.update(extra)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _manifest_path_for(out: Path) -> Path:
    return out.with_name(out.stem + ".manifest.json")


def _write_text(path: Optional[str], text: str) -> None:
    if path:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


# --- helpers --------------------------------------------------------------


def unet_spec_from_args(args: argparse.Namespace, dims: Optional[Tuple[int, int, int]] = None) -> UNetSpec:
    if dims is None:
        if not args.dims:
            raise UsageError("--dims is required (DxHxW)")
        try:
            dims = parse_dims(args.dims)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    try:
        return UNetSpec(
            in_channels=args.in_channels,
            num_classes=args.classes,
            depth=args.depth,
            base_filters=args.filters,
            input_dims=dims,
            batch=args.batch,
            precision=args.precision,
        )
    except GraphError as exc:
        raise UsageError(str(exc)) from None


def spec_dict(spec: UNetSpec) -> Dict[str, Any]:
    return {
        "in_channels": spec.in_channels,
        "num_classes": spec.num_classes,
        "depth": spec.depth,
        "base_filters": spec.base_filters,
        "input_dims": list(spec.input_dims),
        "batch": spec.batch,
        "precision": spec.precision.value,
    }


def _synthetic_batch(spec: UNetSpec, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    rng = np.random.Generator(np.random.PCG64(seed))
    shape = spec.input_shape.as_tuple()
    x = rng.standard_normal(shape).astype(spec.precision.dtype)
    y = (rng.random((spec.batch, spec.num_classes) + spec.input_dims) < 0.1).astype(spec.precision.dtype)
    return x, y


def phantom_spec_for(dims: Tuple[int, int, int], seed: int, precision) -> PhantomSpec:
    """Default phantoms, with the radius range clamped so small volumes still fit."""
    rhi = min(7, (min(dims) - 1) // 2)
    if rhi < 1:
        raise UsageError(f"dims {dims} are too small for phantoms (need at least 3 voxels per axis)")
    return PhantomSpec(dims=dims, radius=(min(3, rhi), rhi), seed=seed, precision=precision)


def measure_step_peak(spec: UNetSpec, optimizer: str, seed: int = 0, threads: int = 1) -> int:
    """Peak live bytes of one instrumented training step."""
    graph = build_unet(spec)
    x, y = _synthetic_batch(spec, seed)
    with Executor(graph, init_params(graph, spec.precision, seed), spec.precision, OptimizerConfig(optimizer), threads=threads) as ex:
        return ex.train_step(x, y, lr=1e-3).stats.peak_live_bytes


# --- commands -------------------------------------------------------------


def cmd_estimate(args: argparse.Namespace) -> int:
    started = _now()
    if not args.dims:
        raise UsageError("--dims is required (DxHxW)")
    try:
        requested = parse_dims(args.dims)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    dims = requested
    if not args.strict_dims and args.depth >= 1:
        dims = pad_dims(requested, args.depth)
        if dims != requested:
            print(
                f"note: dims {'x'.join(map(str, requested))} padded to {'x'.join(map(str, dims))} "
                f"(multiples of 2^{args.depth})",
                file=sys.stderr,
            )
    spec = unet_spec_from_args(args, dims)
    graph = build_unet(spec)
    report, _ = plan_training_memory(graph, spec.precision, args.optimizer)

    timing = None
    time_flags = (args.train_samples, args.epochs, args.seconds_per_image)
    if any(v is not None for v in time_flags):
        if any(v is None for v in time_flags):
            raise UsageError("--train-samples, --epochs and --seconds-per-image must be given together")
        try:
            timing = estimate_completion_time(args.train_samples, spec.batch, args.epochs, args.seconds_per_image)
        except ValueError as exc:
            raise UsageError(str(exc)) from None

    if args.dump_graph:
        Path(args.dump_graph).write_text(graph.to_json() + "\n")

    if args.json:
        doc: Dict[str, Any] = {
            "spec": spec_dict(spec),
            "optimizer": args.optimizer,
            "param_count": param_count(graph),
            "mem_report": report.to_dict(),
        }
        if dims != requested:
            doc["requested_dims"] = list(requested)
        if timing is not None:
            doc["time_estimate"] = timing.to_dict()
        print(json.dumps(doc, indent=2))
    else:
        print(
            f"3D U-Net: depth={spec.depth} filters={spec.base_filters} dims={'x'.join(map(str, spec.input_dims))} "
            f"batch={spec.batch} in={spec.in_channels} classes={spec.num_classes} "
            f"precision={spec.precision.value} optimizer={args.optimizer}"
        )
        print(f"trainable parameters: {param_count(graph):,}")
        print(report.to_table())
        if timing is not None:
            print(
                f"steps/epoch: {timing.steps_per_epoch}  total steps: {timing.total_steps}  "
                f"seconds/epoch: {timing.seconds_per_epoch:g}  seconds total: {timing.seconds_total:g} "
                f"({timing.seconds_total / 3600:.1f} h)"
            )
    if args.manifest:
        write_manifest(Path(args.manifest), args, started)
    return 0


def cmd_bench_mem(args: argparse.Namespace) -> int:
    started = _now()
    if not args.sweep:
        raise UsageError("--sweep is required")
    raw_values = [v for v in str(args.values or "").replace(" ", "").split(",") if v]
    if not raw_values:
        raise UsageError("--values must list at least one value")
    template = unet_spec_from_args(args)
    rows: List[SweepRow] = []
    measured: List[Optional[int]] = []
    errors: List[str] = []
    for raw in raw_values:
        try:
            value: Any = raw if args.sweep == "spatial" else int(raw)
            spec = swept_spec(template, args.sweep, value)
            report, _ = plan_training_memory(build_unet(spec), spec.precision, args.optimizer)
        except (ValueError, GraphError) as exc:
            errors.append(f"{raw}: {exc}")
            continue
        rows.append(SweepRow(format_axis_value(args.sweep, value), report.param_bytes, report.activation_peak_bytes, report.grand_peak_bytes))
        if args.measure:
            if report.grand_peak_bytes > args.measure_limit:
                errors.append(f"{raw}: predicted {report.grand_peak_bytes} bytes exceeds --measure-limit; not measured")
                measured.append(None)
            else:
                measured.append(measure_step_peak(spec, args.optimizer, args.seed))
    extra = {"measured_peak_bytes": ["" if m is None else m for m in measured]} if args.measure else None
    _write_text(args.out, sweep_csv(rows, extra))
    if args.out:
        out = Path(args.out)
        if args.plot and rows:
            from .plotting import plot_memory_sweep

            plot_memory_sweep(
                args.sweep,
                [r.axis_value for r in rows],
                [r.param_bytes for r in rows],
                [r.activation_peak_bytes for r in rows],
                [r.grand_peak_bytes for r in rows],
                out.with_suffix(".png"),
                measured if args.measure else None,
            )
        write_manifest(_manifest_path_for(out), args, started, {"errors": errors})
    for e in errors:
        print(f"error: sweep point {e}", file=sys.stderr)
    return 1 if errors else 0


def cmd_bench_speed(args: argparse.Namespace) -> int:
    started = _now()
    if args.threads:
        threads = int_list(args.threads)
    else:
        t = env_threads()
        threads = [1, t] if t > 1 else [1, 2, 4]
    if not threads or any(t < 1 for t in threads):
        raise UsageError("--threads must list positive integers")
    if args.steps < 1 or args.warmup < 0:
        raise UsageError("--steps must be >= 1 and --warmup >= 0")
    spec = unet_spec_from_args(args)
    graph = build_unet(spec)
    samples = phantom_corpus(phantom_spec_for(spec.input_dims, args.seed, spec.precision), spec.batch)
    x, y = stack_batch(samples, spec.precision.dtype)
    if spec.in_channels != 1 or spec.num_classes != 1:
        x, y = _synthetic_batch(spec, args.seed)
    params = init_params(graph, spec.precision, args.seed)
    opt = OptimizerConfig(args.optimizer)

    def run(n_threads: int) -> Tuple[float, List[float]]:
        with Executor(graph, params, spec.precision, opt, args.loss, n_threads) as ex:
            losses, times = [], []
            for i in range(args.warmup + args.steps):
                t0 = time.perf_counter()
                losses.append(ex.train_step(x, y, args.lr).loss)
                if i >= args.warmup:
                    times.append(time.perf_counter() - t0)
        return float(np.mean(times)), losses

    results: Dict[int, Tuple[float, List[float]]] = {}
    for t in ([1] if 1 not in threads else []) + threads:
        if t not in results:
            results[t] = run(t)
            log.info("threads=%d mean step %.4fs", t, results[t][0])
    serial = results[1][0]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SPEED_HEADER)
    speedups, ips_list = [], []
    for t in threads:
        mean = results[t][0]
        speedup = 1.0 if t == 1 else serial / mean
        ips = spec.batch / mean
        speedups.append(speedup)
        ips_list.append(ips)
        writer.writerow([t, fmt(mean), fmt(ips), fmt(speedup)])
    _write_text(args.out, buf.getvalue())

    reference = results[1][1]
    mismatched = [t for t in threads if results[t][1] != reference]
    if args.out:
        out = Path(args.out)
        if args.plot:
            from .plotting import plot_thread_scaling

            plot_thread_scaling(threads, speedups, ips_list, out.with_suffix(".png"))
        write_manifest(
            _manifest_path_for(out),
            args,
            started,
            {
                "host_cpus": os.cpu_count(),
                "loss_trace": {str(t): [v.hex() for v in results[t][1]] for t in threads},
                "losses_identical": not mismatched,
            },
        )
    if mismatched:
        print(f"error: loss values differ from the serial run for threads {mismatched}", file=sys.stderr)
        return 1
    return 0


def _train_data(args: argparse.Namespace, precision: Precision) -> Tuple[List[Tuple[str, Sample]], Tuple[int, int, int]]:
    if args.data:
        named = load_dataset(args.data, precision)
        dims = named[0][1].image.dims
        for name, s in named:
            if s.image.dims != dims:
                raise ValueError(f"{name}: dims {s.image.dims} differ from {dims}; all volumes must share dims")
        return named, dims
    try:
        dims = parse_dims(args.dims)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    spec = phantom_spec_for(dims, args.phantom_seed, precision)
    corpus = phantom_corpus(spec, args.phantom_count)
    width = max(3, len(str(args.phantom_count - 1)))
    return [(f"phantom_{i:0{width}d}", s) for i, s in enumerate(corpus)], dims


def cmd_train(args: argparse.Namespace) -> int:
    started = _now()
    if not args.out:
        raise UsageError("--out is required")
    threads = args.threads if args.threads is not None else env_threads()
    if threads < 1:
        raise UsageError("--threads must be >= 1")
    args.threads = threads
    precision = Precision.parse(args.precision)
    try:
        config = TrainConfig(
            epochs=args.epochs,
            batch=args.batch,
            learning_rate=args.lr,
            optimizer=args.optimizer,
            loss=args.loss,
            threshold=args.threshold,
            seed=args.seed,
            precision=precision,
            threads=threads,
            checked=args.checked,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    named, dims = _train_data(args, precision)
    spec = unet_spec_from_args(args, dims)
    graph = build_unet(spec)
    if spec.in_channels != 1 or spec.num_classes != 1:
        raise UsageError("training supports single-channel input and a single output class")
    try:
        train_named, test_named = split_dataset(named, args.train_count, args.test_count, args.split_seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.dump_graph:
        Path(args.dump_graph).write_text(graph.to_json() + "\n")
    records, params = train(
        graph,
        [s for _, s in train_named],
        [s for _, s in test_named],
        config,
        on_epoch=lambda r: log.info(
            "epoch %d loss %.4f train dice %.4f test dice %.4f", r.epoch, r.train_loss, r.train_dice, r.test_dice
        ),
    )
    (out / "metrics.csv").write_text(metrics_csv(records))
    write_checkpoint(out / "checkpoint.vxck", graph, params, precision)
    if args.save_predictions and test_named:
        pred_dir = out / "predictions"
        pred_dir.mkdir(exist_ok=True)
        masks = predict_masks(graph, params, [s for _, s in test_named], config)
        for (name, _), m in zip(test_named, masks):
            write_raw(pred_dir / f"{name}.vxv", Volume(m, precision))
    if args.plot:
        from .plotting import plot_training

        plot_training(records, out / "training.png")
    last = records[-1]
    write_manifest(
        out / "manifest.json",
        args,
        started,
        {
            "train_names": [n for n, _ in train_named],
            "test_names": [n for n, _ in test_named],
            "final": {"test_dice": last.test_dice, "test_acc": last.test_acc, "train_loss": last.train_loss},
        },
    )
    print(f"epochs={len(records)} final train_loss={fmt(last.train_loss)} test_dice={fmt(last.test_dice)} test_acc={fmt(last.test_acc)}")
    return 0


def _truth_dir(path: Path) -> Path:
    return path / "masks" if (path / "masks").is_dir() else path


def cmd_eval(args: argparse.Namespace) -> int:
    started = _now()
    if not args.pred or not args.truth:
        raise UsageError("--pred and --truth are required")
    pred_dir, truth_dir = Path(args.pred), _truth_dir(Path(args.truth))
    for d in (pred_dir, truth_dir):
        if not d.is_dir():
            raise UsageError(f"{d} is not a directory")
    preds, truths = volume_files(pred_dir), volume_files(truth_dir)
    errors = [f"{name}: no ground truth in {truth_dir}" for name in preds if name not in truths]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(EVAL_HEADER)
    for name, ppath in preds.items():
        if name not in truths:
            continue
        p = read_volume(ppath, Precision.DOUBLE, part="mask").data
        t = read_volume(truths[name], Precision.DOUBLE, part="mask").data
        if p.shape != t.shape:
            errors.append(f"{name}: prediction dims {p.shape} differ from truth dims {t.shape}")
            continue
        try:
            c = confusion_voxels(p, t)
        except ValueError as exc:
            errors.append(f"{name}: {exc}")
            continue
        writer.writerow([name, fmt(c.dice), fmt(c.accuracy), c.tp, c.fp, c.fn, c.tn])
    _write_text(args.out, buf.getvalue())
    if args.out:
        write_manifest(_manifest_path_for(Path(args.out)), args, started, {"errors": errors})
    for e in errors:
        print(f"error: {e}", file=sys.stderr)
    return 1 if errors else 0


def cmd_phantom(args: argparse.Namespace) -> int:
    started = _now()
    if not args.out:
        raise UsageError("--out is required")
    if args.count < 1:
        raise UsageError("--count must be >= 1")
    lo, hi = int_list(args.ellipsoids) if args.ellipsoids else (1, 3)
    try:
        spec = PhantomSpec(
            dims=parse_dims(args.dims),
            num_ellipsoids=(lo, hi),
            radius=float_pair(args.radius),
            intensity=float_pair(args.intensity),
            noise_std=args.noise_std,
            seed=args.seed,
            precision=args.precision,
        )
        spec.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = Path(args.out)
    paths = save_samples(out, phantom_corpus(spec, args.count))
    write_manifest(out / "manifest.json", args, started, {"files": [p.name for p in paths]})
    print(f"wrote {len(paths)} samples to {out}")
    return 0


COMMANDS = {
    "estimate": cmd_estimate,
    "bench-mem": cmd_bench_mem,
    "bench-speed": cmd_bench_speed,
    "train": cmd_train,
    "eval": cmd_eval,
    "phantom": cmd_phantom,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        args._parser.print_usage(sys.stderr)
        print(f"voxplan {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        log.debug("command failed", exc_info=True)
        print(f"voxplan {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
