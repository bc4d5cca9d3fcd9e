"""Command line entry point (``dmmlab`` or ``python -m dmmlab``)."""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import WalkSatConfig, ingest_timings, walksat_solve
from .dmm import DmmParams
from .errors import DmmLabError
from .harness import (
    PRESET_NAMES,
    ExperimentSpec,
    ResultRow,
    ResultsTable,
    analyze,
    preset,
    run_experiment,
)
from .instance import DEFAULT_TYPE_WEIGHTS, generate_planted, parse_dimacs, write_dimacs
from .integrate import IntegratorConfig, solve
from .stats import FAMILIES, Sample, fit_family


def _weights(text: str) -> tuple[float, float, float]:
    parts = [float(x) for x in text.split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected three comma-separated weights")
    return tuple(parts)


def _read_instance(path: str):
    text = sys.stdin.read() if path == "-" else Path(path).read_text()
    return parse_dimacs(text)


def _emit(obj, out: str | None = None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_generate(args) -> int:
    inst, plant = generate_planted(args.n, args.ratio, args.seed, args.weights)
    bits = "".join("1" if b else "0" for b in plant)
    comments = [f"planted 3-SAT n={args.n} ratio={args.ratio} seed={args.seed} weights={list(args.weights)}",
                f"plant {bits}"]
    text = write_dimacs(inst, comments)
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_solve(args) -> int:
    inst = _read_instance(args.instance)
    cfg = IntegratorConfig(method=args.method, dt=args.dt, noise=args.noise, max_steps=args.max_steps,
                           log_stride=args.log_stride)
    out, log = solve(inst, DmmParams(), cfg, args.seed)
    if log is not None and args.trajectory:
        Path(args.trajectory).write_text(log.to_csv())
    report = {
        "solved": out.solved,
        "tts_steps": out.tts_steps,
        "tts_time": out.tts_steps * args.dt,
        "censored": out.censored,
        "seed": out.seed,
        "final_state_digest": out.final_state_digest,
        "error": out.error,
    }
    if args.print_assignment and out.assignment is not None:
        report["assignment"] = [int(i + 1) if b else -int(i + 1) for i, b in enumerate(out.assignment)]
    _emit(report)
    return 0 if out.solved else 1


def cmd_walksat(args) -> int:
    inst = _read_instance(args.instance)
    out = walksat_solve(inst, WalkSatConfig(noise_prob=args.noise, max_flips=args.max_flips, seed=args.seed))
    _emit({"solved": out.solved, "flips": out.tts_steps, "censored": out.censored, "seed": out.seed})
    return 0 if out.solved else 1


def cmd_experiment(args) -> int:
    if args.action == "presets":
        for name in PRESET_NAMES:
            print(name)
        return 0
    if args.preset:
        spec = preset(args.preset)
    elif args.spec:
        spec = ExperimentSpec.load(args.spec)
    else:
        raise SystemExit("experiment: give a spec file or --preset NAME")
    if args.action == "show":
        _emit(spec.to_dict())
        return 0
    out_dir = args.output or os.environ.get("DMMLAB_OUTPUT_DIR") or spec.output_dir or f"runs/{spec.name}"

    def progress(i, total):
        if args.verbose:
            print(f"\r{i}/{total}", end="", file=sys.stderr, flush=True)

    table = run_experiment(spec, workers=args.workers, output_dir=out_dir, progress=progress)
    if args.verbose:
        print(file=sys.stderr)
    if args.analyze:
        analyze(table, family=spec.fit_family, output_dir=out_dir)
    solved = sum(r.solved for r in table.rows)
    print(f"{len(table)} runs, {solved} solved")
    return 0


def cmd_analyze(args) -> int:
    table = ResultsTable.load(args.results)
    out_dir = args.output or str(Path(args.results).parent)
    result = analyze(table, family=args.family, n_boot=args.n_boot, output_dir=out_dir)
    s = result.scaling
    for e in s.entries:
        print(f"N={e.N} solved={e.n_solved} censored={e.n_censored} mean={e.mean:.4g} "
              f"rel_var={e.relative_variance:.4g}+-{e.relative_variance_se:.2g}")
    if s.theta is not None:
        print(f"theta={s.theta:.4f}+-{s.theta_err:.4f}")
    return 0


def _load_sample(path: str, column) -> Sample:
    text = Path(path).read_text()
    if text.startswith("N,instance_id"):
        return Sample.from_outcomes(ResultsTable.from_csv(text).rows)
    t = ingest_timings(text, column=column)
    return Sample(np.asarray(t.times), t.censored_count)


def cmd_fit(args) -> int:
    fit = fit_family(_load_sample(args.data, args.column), args.family)
    _emit(fit.to_dict(), args.output)
    return 0


def cmd_ingest(args) -> int:
    t = ingest_timings(args.source, column=args.column, solver=args.solver, censored_marker=args.censored_marker)
    rows = [ResultRow(args.n, i, 0, 0, True, v, False) for i, v in enumerate(t.times)]
    rows += [ResultRow(args.n, len(t.times) + k, 0, 0, False, 0.0, True) for k in range(t.censored_count)]
    text = ResultsTable(rows).to_csv()
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dmmlab", description=__doc__)
    p.add_argument("--version", action="version", version=f"dmmlab {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a planted 3-SAT instance in DIMACS format")
    g.add_argument("n", type=int, help="number of variables")
    g.add_argument("--ratio", type=float, default=7.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--weights", type=_weights, default=DEFAULT_TYPE_WEIGHTS,
                   help="probabilities of clauses with 1,2,3 true literals under the plant")
    g.add_argument("-o", "--output")
    g.set_defaults(func=cmd_generate)

    s = sub.add_parser("solve", help="integrate the memcomputing dynamics on one instance")
    s.add_argument("instance", help="DIMACS file or - for stdin")
    s.add_argument("--method", choices=("euler", "rk4"), default="euler")
    s.add_argument("--dt", type=float, default=0.2)
    s.add_argument("--noise", type=float, default=0.12, help="noise intensity (0 for deterministic)")
    s.add_argument("--max-steps", type=int, default=100_000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--log-stride", type=int, default=0)
    s.add_argument("--trajectory", help="CSV path for the logged voltages")
    s.add_argument("--print-assignment", action="store_true")
    s.set_defaults(func=cmd_solve)

    w = sub.add_parser("walksat", help="run WalkSAT on one instance")
    w.add_argument("instance")
    w.add_argument("--noise", type=float, default=0.5)
    w.add_argument("--max-flips", type=int, default=10_000_000)
    w.add_argument("--seed", type=int, default=0)
    w.set_defaults(func=cmd_walksat)

    e = sub.add_parser("experiment", help="run or inspect an experiment spec")
    e.add_argument("action", choices=("run", "show", "presets"))
    e.add_argument("spec", nargs="?", help="JSON spec file")
    e.add_argument("--preset", choices=PRESET_NAMES)
    e.add_argument("--output", help="output directory (overrides DMMLAB_OUTPUT_DIR)")
    e.add_argument("--workers", type=int, default=None, help="defaults to DMMLAB_WORKERS or 1")
    e.add_argument("--analyze", action="store_true", help="also write fits/ and plots/")
    e.add_argument("-v", "--verbose", action="store_true")
    e.set_defaults(func=cmd_experiment)

    a = sub.add_parser("analyze", help="fit every N group of a results table")
    a.add_argument("results")
    a.add_argument("--family", choices=FAMILIES, default="invgauss")
    a.add_argument("--n-boot", type=int, default=2000)
    a.add_argument("--output")
    a.set_defaults(func=cmd_analyze)

    f = sub.add_parser("fit", help="fit one distribution to a timing file or results table")
    f.add_argument("data")
    f.add_argument("--family", choices=FAMILIES, default="invgauss")
    f.add_argument("--column", default=None)
    f.add_argument("-o", "--output")
    f.set_defaults(func=cmd_fit)

    i = sub.add_parser("ingest-timings", help="convert an external solver's timings to a results table")
    i.add_argument("source")
    i.add_argument("--n", type=int, required=True, help="instance size the timings belong to")
    i.add_argument("--column", default=None)
    i.add_argument("--solver", default="external")
    i.add_argument("--censored-marker", default=None)
    i.add_argument("-o", "--output")
    i.set_defaults(func=cmd_ingest)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "column", None) is not None and str(args.column).isdigit():
        args.column = int(args.column)
    try:
        return args.func(args)
    except DmmLabError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
