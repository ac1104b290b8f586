"""Benchmark command line: dataset generation, training, evaluation,
and the strong/weak scaling drivers.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure
(non-finite parameters), 130 interrupted.
"""

from __future__ import annotations

import argparse
import hashlib
import itertools
import json
import signal
import sys
import threading
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import psutil

from . import __version__, _kernels
from .data import (Dataset, DatasetFormatError, TaskSpec, dataset_filename,
                   load_dataset, model_pearson, save_dataset)
from .model import KanModel, ModelFormatError
from .parallel import (SCALING_CSV_HEADER, ParallelPlan, train_parallel,
                       measure_strong_scaling, measure_weak_scaling,
                       write_scaling_csv)
from .presets import PRESETS, parse_architecture
from .pretrain import pretrain
from .training import (DEFAULT_GRID_HEADROOM, DEFAULT_INNER_SCALE, DEFAULT_MU,
                       TrainConfig, init_model, train_epoch)

ROUND_CSV_HEADER = "round,workers,records_per_worker,pearson_pct,time_s"

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4
EXIT_INTERRUPTED = 130


class UsageError(Exception):
    pass


class NumericalFailure(Exception):
    pass


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DatasetFormatError, ModelFormatError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="plkan",
        description="Piecewise-linear KAN training and scaling benchmarks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate train/val dataset files")
    p.add_argument("--task", required=True, choices=("det4", "det5", "tetra"))
    p.add_argument("--train", type=int, default=100_000, help="training records")
    p.add_argument("--val", type=int, default=20_000, help="validation records")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--range", default="0:1", help="input value range LO:HI")
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="sequential training")
    add_common_train_args(p)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--no-shuffle", action="store_true",
                   help="keep dataset order instead of reshuffling each epoch")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("train-par", help="disjoint-batch train-and-merge")
    add_common_train_args(p)
    p.add_argument("--threads", type=int, default=2)
    p.add_argument("--rounds", type=int, default=10)
    p.add_argument("--batch", type=int, required=True, help="records per worker per round")
    p.add_argument("--report", help="per-round CSV output path")
    p.set_defaults(func=cmd_train_par)

    p = sub.add_parser("eval", help="evaluate a saved model on a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", help="optional metrics JSON output path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench-strong", help="fixed-work scaling over thread counts")
    add_common_bench_args(p)
    p.add_argument("--total", type=int, default=1_000_000,
                   help="total records per cell (fixed work)")
    p.add_argument("--rounds", default="10", help="comma list of round counts")
    p.set_defaults(func=cmd_bench_strong)

    p = sub.add_parser("bench-weak", help="fixed per-thread work over thread counts")
    add_common_bench_args(p)
    p.add_argument("--rounds", type=int, default=10)
    p.add_argument("--batch", type=int, default=25_000,
                   help="records per worker per round")
    p.set_defaults(func=cmd_bench_weak)
    return parser


def add_common_train_args(p) -> None:
    p.add_argument("--data", required=True, help="training dataset file")
    p.add_argument("--val", help="validation dataset file")
    p.add_argument("--arch", default=None,
                   help="preset name (det4|det5|tetra) or custom spec like 70x3,1x25")
    p.add_argument("--mu", type=float, default=None,
                   help="damping factor (default: preset value or 0.5)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pretrain-groups", type=int, default=0)
    p.add_argument("--out", required=True, help="model output path")


def add_common_bench_args(p) -> None:
    p.add_argument("--task", required=True, choices=("det4", "det5", "tetra"))
    p.add_argument("--train", type=int, default=100_000)
    p.add_argument("--val", type=int, default=20_000)
    p.add_argument("--threads", default="1,2,4", help="comma list of thread counts")
    p.add_argument("--arch", default=None)
    p.add_argument("--mu", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--repeats", type=int, default=1,
                   help="timing repetitions per cell (best kept)")
    p.add_argument("--out", required=True, help="scaling CSV output path")


# -- helpers ----------------------------------------------------------------

def parse_range(text: str) -> tuple[float, float]:
    try:
        lo, hi = (float(v) for v in text.split(":"))
    except ValueError:
        raise UsageError(f"bad range {text!r}, expected LO:HI") from None
    if not hi > lo:
        raise UsageError(f"range must satisfy LO < HI, got {text!r}")
    return lo, hi


def parse_int_list(text: str, what: str) -> list[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"bad {what} list {text!r}") from None
    if not values or any(v < 1 for v in values):
        raise UsageError(f"{what} list must hold positive integers, got {text!r}")
    return values


def resolve_model_setup(args, data: Dataset):
    """Returns (architecture, mu, inner_scale, grid_headroom, arch_label)."""
    name = args.arch
    if name is None:
        name = getattr(args, "task", None)
        if name is None:
            raise UsageError("--arch is required for custom datasets")
    if name in PRESETS:
        preset = PRESETS[name]
        arch = preset.architecture
        mu = args.mu if args.mu is not None else preset.mu
        scales = (preset.inner_scale, preset.grid_headroom)
    else:
        arch = parse_architecture(name, data.input_dim)
        mu = args.mu if args.mu is not None else DEFAULT_MU
        scales = (DEFAULT_INNER_SCALE, DEFAULT_GRID_HEADROOM)
    if arch.input_dim != data.input_dim or arch.output_dim != data.output_dim:
        raise UsageError(
            f"architecture {name} maps {arch.input_dim}->{arch.output_dim} "
            f"but dataset has dims {data.input_dim}->{data.output_dim}"
        )
    if not 0.0 <= mu <= 1.0:
        raise UsageError(f"mu must be in [0, 1], got {mu}")
    return arch, mu, scales[0], scales[1], name


def build_model(arch, data: Dataset, seed, inner_scale, grid_headroom) -> KanModel:
    return init_model(arch, data.input_range(), data.target_range(), seed,
                      inner_scale=inner_scale, grid_headroom=grid_headroom)


def check_finite(model: KanModel, where: str) -> None:
    if not np.isfinite(model.flat_values).all():
        raise NumericalFailure(f"non-finite parameters after {where}")


def file_fingerprint(path) -> str:
    digest = hashlib.sha256(Path(path).read_bytes()).hexdigest()
    return f"sha256:{digest}"


def data_fingerprint(data: Dataset) -> str:
    digest = hashlib.sha256(np.ascontiguousarray(data.records).tobytes()).hexdigest()
    return f"sha256:{digest}"


def write_manifest(out_path, command: str, flags: dict, fingerprints: dict,
                   results: dict, incomplete: bool = False) -> Path:
    manifest = {
        "command": command,
        "artifact_version": __version__,
        "created_utc": datetime.now(timezone.utc).isoformat(),
        "flags": flags,
        "dataset_fingerprints": fingerprints,
        "results": results,
        "incomplete": incomplete,
    }
    path = Path(str(out_path) + ".manifest.json")
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def flag_dict(args, skip=("func", "command")) -> dict:
    return {k: v for k, v in vars(args).items() if k not in skip}


def load_train_val(args) -> tuple[Dataset, Dataset | None]:
    data = load_dataset(args.data)
    val = load_dataset(args.val) if args.val else None
    if val is not None and (val.input_dim, val.output_dim) != (data.input_dim,
                                                               data.output_dim):
        raise DatasetFormatError(
            f"validation dims {val.input_dim}->{val.output_dim} do not match "
            f"training dims {data.input_dim}->{data.output_dim}"
        )
    return data, val


def print_core_info(requested: int) -> None:
    physical = psutil.cpu_count(logical=False) or 1
    logical = psutil.cpu_count(logical=True) or 1
    print(f"cores: {physical} physical / {logical} logical")
    if requested > physical:
        print(f"warning: {requested} threads exceed {physical} physical cores; "
              "timings will not scale", file=sys.stderr)


def run_pretrain_if_asked(model, data, args, mu, seed):
    if args.pretrain_groups > 0:
        cfg = TrainConfig(mu=mu if mu > 0 else DEFAULT_MU, epochs=1, seed=seed,
                          shuffle_each_epoch=False)
        model = pretrain(model, data, args.pretrain_groups, cfg)
        check_finite(model, "pretraining")
        print(f"pretrained {args.pretrain_groups} addend groups")
    return model


# -- commands ----------------------------------------------------------------

def cmd_gen(args) -> int:
    value_range = parse_range(args.range)
    if args.train < 1 or args.val < 1:
        raise UsageError("--train and --val must be >= 1")
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    spec = TaskSpec(args.task, args.train, args.val, args.seed, value_range)
    train_ds, val_ds = spec.generate()
    fingerprints = {}
    for split, ds in (("train", train_ds), ("val", val_ds)):
        path = out_dir / dataset_filename(args.task, split, ds.record_count)
        save_dataset(ds, path)
        fingerprints[str(path)] = file_fingerprint(path)
        lo, hi = ds.target_range(margin=0.0)
        print(f"{path}: {ds.record_count} records, "
              f"{ds.input_dim} inputs, {ds.output_dim} outputs, "
              f"target range [{lo:.6g}, {hi:.6g}]")
    write_manifest(out_dir / f"{args.task}_gen", "gen", flag_dict(args),
                   fingerprints, {"files": sorted(fingerprints)})
    return EXIT_OK


def cmd_train(args) -> int:
    if args.epochs < 0:
        raise UsageError("--epochs must be >= 0")
    data, val = load_train_val(args)
    arch, mu, inner_scale, headroom, arch_label = resolve_model_setup(args, data)
    model = build_model(arch, data, args.seed, inner_scale, headroom)
    print(f"arch {arch_label}: {model.total_parameter_count} parameters, mu={mu}")
    _kernels.warmup()
    model = run_pretrain_if_asked(model, data, args, mu, args.seed)
    total_time = 0.0
    if args.epochs > 0 and mu > 0.0:
        cfg = TrainConfig(mu=mu, epochs=args.epochs, seed=args.seed,
                          shuffle_each_epoch=not args.no_shuffle)
        for epoch in range(args.epochs):
            stats = train_epoch(model, data, cfg, epoch_index=epoch)
            total_time += stats.wall_time_s
            check_finite(model, f"epoch {epoch}")
            print(f"epoch {epoch + 1:3d}/{args.epochs}: "
                  f"mean prior residual {stats.mean_prior_residual:.6f} "
                  f"({stats.wall_time_s:.2f}s)")
    results = {"train_time_s": total_time}
    if val is not None:
        pearson = model_pearson(model, val)
        results["val_pearson_pct"] = [float(p) for p in pearson]
        print("validation pearson (%): " + " ".join(f"{p:.2f}" for p in pearson))
    print(f"training time: {total_time:.2f}s")
    model.save(args.out)
    fingerprints = {args.data: file_fingerprint(args.data)}
    if args.val:
        fingerprints[args.val] = file_fingerprint(args.val)
    write_manifest(args.out, "train", flag_dict(args), fingerprints, results)
    print(f"model saved to {args.out}")
    return EXIT_OK


def cmd_train_par(args) -> int:
    data, val = load_train_val(args)
    arch, mu, inner_scale, headroom, arch_label = resolve_model_setup(args, data)
    if args.threads * args.batch > data.record_count:
        raise UsageError(
            f"{args.threads} x {args.batch} records per round exceed the "
            f"{data.record_count}-record dataset"
        )
    print_core_info(args.threads)
    model = build_model(arch, data, args.seed, inner_scale, headroom)
    print(f"arch {arch_label}: {model.total_parameter_count} parameters, mu={mu}")
    _kernels.warmup()
    model = run_pretrain_if_asked(model, data, args, mu, args.seed)
    plan = ParallelPlan(threads=args.threads, rounds=args.rounds,
                        batch_size=args.batch, seed=args.seed, mu=mu)

    stop = threading.Event()
    previous = signal.signal(signal.SIGINT, lambda *_: stop.set())

    def on_round(report):
        shown = "" if np.isnan(report.pearson_pct) else f"pearson {report.pearson_pct:6.2f}%  "
        print(f"round {report.round_index + 1:3d}/{plan.rounds}: "
              f"{shown}({report.time_s:.2f}s)")

    try:
        trained, reports = train_parallel(model, data, val, plan,
                                          stop_event=stop, on_round=on_round)
    finally:
        signal.signal(signal.SIGINT, previous)
    check_finite(trained, f"round {len(reports)}")
    interrupted = stop.is_set()

    if args.report:
        with open(args.report, "w") as fh:
            fh.write(ROUND_CSV_HEADER + "\n")
            for r in reports:
                fh.write(f"{r.round_index},{len(r.worker_records)},"
                         f"{r.worker_records[0]},{'%.17g' % r.pearson_pct},"
                         f"{'%.6f' % r.time_s}\n")
    trained.save(args.out)
    fingerprints = {args.data: file_fingerprint(args.data)}
    if args.val:
        fingerprints[args.val] = file_fingerprint(args.val)
    results = {
        "rounds_completed": len(reports),
        "train_time_s": sum(r.time_s for r in reports),
        "final_pearson_pct": reports[-1].pearson_pct if reports else None,
    }
    write_manifest(args.out, "train-par", flag_dict(args), fingerprints,
                   results, incomplete=interrupted)
    if interrupted:
        print(f"interrupted after {len(reports)} completed rounds; "
              "partial outputs flagged incomplete", file=sys.stderr)
        return EXIT_INTERRUPTED
    print(f"model saved to {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model = KanModel.load(args.model)
    data = load_dataset(args.data)
    if (data.input_dim, data.output_dim) != (model.input_dim, model.output_dim):
        raise DatasetFormatError(
            f"dataset dims {data.input_dim}->{data.output_dim} do not match "
            f"model {model.input_dim}->{model.output_dim}"
        )
    pred = model.predict(data.inputs)
    residual = data.targets - pred
    pearson = model_pearson(model, data)
    print("pearson (%): " + " ".join(f"{p:.2f}" for p in pearson))
    rmse = float(np.sqrt(np.mean(residual ** 2)))
    max_abs = float(np.abs(residual).max())
    print(f"residuals: rmse {rmse:.6g}, max abs {max_abs:.6g}")
    if args.out:
        metrics = {"pearson_pct": [float(p) for p in pearson],
                   "rmse": rmse, "max_abs": max_abs}
        Path(args.out).write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n")
        write_manifest(args.out, "eval",
                       flag_dict(args),
                       {args.model: file_fingerprint(args.model),
                        args.data: file_fingerprint(args.data)},
                       metrics)
    return EXIT_OK


def _bench_setup(args):
    spec = TaskSpec(args.task, args.train, args.val, args.seed)
    train_ds, val_ds = spec.generate()
    arch, mu, inner_scale, headroom, label = resolve_model_setup(args, train_ds)
    threads = parse_int_list(args.threads, "threads")
    print_core_info(max(threads))

    def factory():
        return build_model(arch, train_ds, args.seed, inner_scale, headroom)

    return train_ds, val_ds, factory, mu, threads, label


def _finish_bench(args, rows, label, train_ds, kind) -> int:
    if not rows:
        raise UsageError("no feasible grid cells to run")
    write_scaling_csv(rows, args.out)
    print(f"{SCALING_CSV_HEADER}")
    for r in rows:
        print(f"{r.threads},{r.rounds},{r.batch_size},"
              f"{r.pearson_pct:.2f},{r.time_s:.3f},{r.ratio:.3f}")
    write_manifest(args.out, kind, flag_dict(args) | {"resolved_arch": label},
                   {"train_data": data_fingerprint(train_ds)},
                   {"rows": len(rows)})
    print(f"report written to {args.out}")
    return EXIT_OK


def cmd_bench_strong(args) -> int:
    train_ds, val_ds, factory, mu, threads, label = _bench_setup(args)
    rounds = parse_int_list(args.rounds, "rounds")
    cells, rejected = [], []
    for t, r in itertools.product(threads, rounds):
        if args.total % (t * r) != 0:
            rejected.append((t, r, f"{args.total} records do not divide into "
                                   f"{t} threads x {r} rounds"))
            continue
        batch = args.total // (t * r)
        if t * batch > train_ds.record_count:
            rejected.append((t, r, f"round of {t}x{batch} exceeds the dataset"))
            continue
        cells.append((t, r, batch))
    for t, r, reason in rejected:
        print(f"skipping threads={t} rounds={r}: {reason}", file=sys.stderr)
    if not any(t == 1 for t, _, _ in cells):
        raise UsageError("grid needs a 1-thread cell as the speedup baseline")
    rows = measure_strong_scaling(train_ds, val_ds, factory, cells, mu=mu,
                                  seed=args.seed, repeats=args.repeats)
    return _finish_bench(args, rows, label, train_ds, "bench-strong")


def cmd_bench_weak(args) -> int:
    train_ds, val_ds, factory, mu, threads, label = _bench_setup(args)
    if 1 not in threads:
        raise UsageError("grid needs a 1-thread cell as the efficiency baseline")
    infeasible = [t for t in threads if t * args.batch > train_ds.record_count]
    for t in infeasible:
        print(f"skipping threads={t}: {t} x {args.batch} exceeds the dataset",
              file=sys.stderr)
    threads = [t for t in threads if t not in infeasible]
    rows = measure_weak_scaling(train_ds, val_ds, factory, threads,
                                rounds=args.rounds, batch_size=args.batch,
                                mu=mu, seed=args.seed, repeats=args.repeats)
    return _finish_bench(args, rows, label, train_ds, "bench-weak")


if __name__ == "__main__":
    sys.exit(main())
