"""Command line entry point: ``ngpc run | train | bench | count-params``.

Exit codes: 0 success, 2 configuration error, 3 solver failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import sys
from pathlib import Path

from .config import ConfigError, ExperimentConfig, format_config, load_config
from .harness import (REFERENCE_TIMING_MS, benchmark_timing, disturbance_scenario, export_logs,
                      run_batch, summarize_disturbance)
from .plant import SoftActuatorPlant
from .recnn import ARCHITECTURES, ChildModel, Dims, WeightFileError, count_parameters, flash_bytes, \
    load_model, save_model
from .solver import SolverFailure
from .trainer import collect_dataset, fit_child, generate_excitation, kfold_evaluate, save_dataset

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_IO = 0, 2, 3, 4

log = logging.getLogger("ngpc")


def _config(path) -> ExperimentConfig:
    return load_config(path) if path else ExperimentConfig()


def cmd_run(args) -> int:
    cfg = _config(args.config)
    if args.runs < 1:
        raise ConfigError("--runs must be >= 1")
    if args.task is not None:
        cfg = dataclasses.replace(cfg, task=dataclasses.replace(cfg.task, name=args.task))
    model = load_model(args.model)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if cfg.task.name == "disturbance":
        active = disturbance_scenario(cfg, model)
        frozen = disturbance_scenario(cfg, model, freeze_input=True)
        export_logs(active, out / "disturbance_active.csv")
        export_logs(frozen, out / "disturbance_frozen.csv")
        s = summarize_disturbance(active, frozen, cfg)
        with open(out / "disturbance_summary.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["closed_loop_error_mm", "open_loop_offset_mm", "ratio", "sensor_shift_sigma"])
            w.writerow([repr(s.closed_loop_error), repr(s.open_loop_offset), repr(s.ratio),
                        repr(s.sensor_shift)])
        print(f"disturbance: closed-loop error {s.closed_loop_error:.3f} mm, "
              f"frozen-input offset {s.open_loop_offset:.3f} mm, ratio {s.ratio:.3f}")
        return EXIT_OK
    stats = run_batch(cfg, model, cfg.task.name, args.runs, out, timings=args.timings)
    print(f"{cfg.task.name}: RMSE {stats.mean:.3f} +/- {stats.std:.3f} mm over {stats.runs} run(s)")
    return EXIT_OK


def cmd_train(args) -> int:
    """Write the weights to ``--out`` and sidecar CSVs next to it."""
    cfg = _config(args.config)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    side = lambda suffix: out.with_name(out.stem + suffix)  # noqa: E731
    ex = cfg.excitation
    u, _ = generate_excitation(ex.stage_duration, cfg.run.dt, seed=ex.seed,
                               u_min=cfg.plant.u_min, u_max=cfg.plant.u_max,
                               cycles=ex.cycles, dither=ex.dither)
    ds = collect_dataset(SoftActuatorPlant(cfg.plant), u, cfg.run.dt, seed=ex.seed)
    save_dataset(ds, side("_dataset.csv"))
    model, history = fit_child(args.arch, ds, cfg.horizon, cfg.train)
    save_model(model, out)
    with open(side("_loss.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "loss"])
        w.writerows([k, repr(float(v))] for k, v in enumerate(history))
    if args.folds:
        tc = dataclasses.replace(cfg.train, folds=args.folds)
        p = model.input_size

        def factory():
            return ChildModel.build(ARCHITECTURES[args.arch], p, seed=tc.seed)

        report = kfold_evaluate(factory, ds, cfg.horizon, tc)
        with open(side("_folds.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["fold", "l2_error"])
            w.writerows([k, repr(float(e))] for k, e in enumerate(report.errors))
        print(f"{tc.folds}-fold L2 error {report.mean:.4f} +/- {report.std:.4f}")
    with open(side("_config.txt"), "w") as fh:
        fh.write(format_config(cfg))
    print(f"trained {args.arch}: loss {history[0]:.4g} -> {history[-1]:.4g}, "
          f"{model.parameter_count()} parameters")
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg = _config(args.config)
    model = load_model(args.model)
    rep = benchmark_timing(model, cfg, steps=args.steps)
    print(f"{'phase':<12} {'mean_us':>10}")
    for name, us in rep.rows():
        ref = REFERENCE_TIMING_MS.get(name)
        note = f"   (embedded reference {ref} ms)" if ref else ""
        print(f"{name:<12} {us:10.1f}{note}")
    return EXIT_OK


def cmd_count(args) -> int:
    if args.model:
        n = load_model(args.model).parameter_count()
    else:
        cfg = _config(args.config)
        n = count_parameters(ARCHITECTURES[args.arch], cfg.horizon.input_length(Dims()))
    print(f"parameters {n}  flash_bytes {flash_bytes(n)}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ngpc", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="closed-loop tracking or disturbance runs")
    r.add_argument("--config")
    r.add_argument("--task", choices=["eight", "pringle", "line", "disturbance", "waypoints"])
    r.add_argument("--model", required=True)
    r.add_argument("--runs", type=int, default=1)
    r.add_argument("--out", required=True)
    r.add_argument("--timings", action="store_true", help="add wall-clock columns to the logs")
    r.set_defaults(func=cmd_run)

    t = sub.add_parser("train", help="collect a dataset on the plant and train a child model")
    t.add_argument("--config")
    t.add_argument("--arch", choices=sorted(ARCHITECTURES), default="fc")
    t.add_argument("--folds", type=int, default=0, help="also run k-fold evaluation")
    t.add_argument("--out", required=True, help="weights file to write")
    t.set_defaults(func=cmd_train)

    b = sub.add_parser("bench", help="time prediction and derivative phases")
    b.add_argument("--config")
    b.add_argument("--model", required=True)
    b.add_argument("--steps", type=int, default=5000)
    b.set_defaults(func=cmd_bench)

    c = sub.add_parser("count-params", help="parameter count and flash footprint")
    g = c.add_mutually_exclusive_group(required=True)
    g.add_argument("--model")
    g.add_argument("--arch", choices=sorted(ARCHITECTURES))
    c.add_argument("--config", help="horizon settings used with --arch")
    c.set_defaults(func=cmd_count)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverFailure as exc:
        print(f"solver failure: {exc} {exc.diagnostics}", file=sys.stderr)
        return EXIT_SOLVER
    except (OSError, WeightFileError) as exc:
        print(f"I/O error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
