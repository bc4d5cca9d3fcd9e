"""Experiment orchestration: seeded sweeps over N, persisted results and analysis.

Seeds
-----
Every random stream is derived from the experiment's master seed with SplitMix64:

    h = splitmix64(master)
    for x in (stream, N, instance_id, run_id):
        h = splitmix64(h ^ x)

with ``stream = 0`` for solver runs and ``stream = 1`` for instance generation
(``run_id = 0`` there). All arithmetic is modulo 2**64. Each seed initialises a
numpy PCG64 generator, so any implementation with SplitMix64 and PCG64 reproduces
the same streams.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import os
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .baselines import WalkSatConfig, ingest_timings, walksat_solve
from .dmm import DmmParams
from .errors import ConfigError, UnknownPreset
from .instance import DEFAULT_TYPE_WEIGHTS, generate_planted, parse_dimacs
from .integrate import IntegratorConfig, solve
from .stats import (
    DistributionFit,
    Sample,
    fit_exponential,
    fit_family,
    fit_powerlaw,
    histogram,
    relative_variance,
)

MASK64 = (1 << 64) - 1
RUN_STREAM = 0
INSTANCE_STREAM = 1
SOLVERS = ("dmm", "walksat", "external")
MODES = ("fresh-instance", "same-instance")
RESULT_COLUMNS = ("N", "instance_id", "run_id", "seed", "solved", "tts", "censored", "error")


def splitmix64(x: int) -> int:
    z = (x + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def split_seed(master: int, n: int, instance_id: int, run_id: int, stream: int = RUN_STREAM) -> int:
    h = splitmix64(master & MASK64)
    for x in (stream, n, instance_id, run_id):
        h = splitmix64(h ^ (x & MASK64))
    return h


def unbiased_type_weights(all_true: float) -> tuple[float, float, float]:
    """Clause-type weights (1, 2, 3 true literals) whose mean number of true literals
    is 3/2, so a planted literal is as likely to be negated as not."""
    if not 0.0 <= all_true <= 0.25:
        raise ValueError("fraction of all-true clauses must lie in [0, 1/4]")
    return (0.5 + all_true, 0.5 - 2.0 * all_true, all_true)


# instance family used by the figure presets; see README for how it was chosen
PRESET_TYPE_WEIGHTS = unbiased_type_weights(1.0 / 18.0)


@dataclass
class ExperimentSpec:
    name: str
    solver: str = "dmm"
    n_list: tuple[int, ...] = (1000,)
    runs: int = 100
    mode: str = "fresh-instance"
    ratio: float = 7.0
    type_weights: tuple[float, float, float] = DEFAULT_TYPE_WEIGHTS
    instance_dir: str | None = None
    timing_files: dict[int, str] = field(default_factory=dict)
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    params: DmmParams = field(default_factory=DmmParams)
    walksat: WalkSatConfig = field(default_factory=WalkSatConfig)
    master_seed: int = 0
    output_dir: str | None = None
    fit_family: str = "invgauss"
    desk_scale: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.n_list = tuple(int(n) for n in self.n_list)
        self.type_weights = tuple(float(w) for w in self.type_weights)
        if self.solver not in SOLVERS:
            raise ConfigError(f"solver must be one of {SOLVERS}, got {self.solver!r}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.runs < 1:
            raise ConfigError("runs must be >= 1")
        if not self.n_list and self.instance_dir is None and self.solver != "external":
            raise ConfigError("n_list is empty")
        if self.solver == "external" and not self.timing_files:
            raise ConfigError("external solver needs timing_files {N: path}")
        if self.solver == "external" and self.mode != "fresh-instance":
            raise ConfigError("external timings have no notion of repeated runs on one instance")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["timing_files"] = {str(k): v for k, v in self.timing_files.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        d = dict(d)
        if "integrator" in d and isinstance(d["integrator"], dict):
            integ = dict(d["integrator"])
            if integ.get("log_vars") is not None:
                integ["log_vars"] = tuple(integ["log_vars"])
            d["integrator"] = IntegratorConfig(**integ)
        if "params" in d and isinstance(d["params"], dict):
            d["params"] = DmmParams(**d["params"])
        if "walksat" in d and isinstance(d["walksat"], dict):
            d["walksat"] = WalkSatConfig(**d["walksat"])
        if "timing_files" in d:
            d["timing_files"] = {int(k): v for k, v in d["timing_files"].items()}
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown spec fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path: str | os.PathLike) -> "ExperimentSpec":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class ResultRow:
    N: int
    instance_id: int
    run_id: int
    seed: int
    solved: bool
    tts: float
    censored: bool
    error: str = ""
    wall_seconds: float = field(default=0.0, compare=False)

    @property
    def key(self) -> tuple[int, int, int]:
        return (self.N, self.instance_id, self.run_id)

    @property
    def tts_steps(self) -> float:
        return self.tts


@dataclass
class ResultsTable:
    rows: list[ResultRow]

    def __post_init__(self):
        self.rows = sorted(self.rows, key=lambda r: r.key)
        keys = [r.key for r in self.rows]
        if len(set(keys)) != len(keys):
            raise ValueError("duplicate (N, instance_id, run_id) keys")

    def __len__(self):
        return len(self.rows)

    def n_values(self) -> list[int]:
        return sorted({r.N for r in self.rows})

    def group(self, n: int) -> list[ResultRow]:
        return [r for r in self.rows if r.N == n]

    def to_csv(self) -> str:
        """Deterministic table; wall-clock times live in :meth:`timings_csv`."""
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        for r in self.rows:
            tts = int(r.tts) if float(r.tts).is_integer() else repr(float(r.tts))
            w.writerow([r.N, r.instance_id, r.run_id, r.seed, int(r.solved), tts, int(r.censored), r.error])
        return out.getvalue()

    def timings_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["N", "instance_id", "run_id", "wall_seconds"])
        for r in self.rows:
            w.writerow([r.N, r.instance_id, r.run_id, f"{r.wall_seconds:.6f}"])
        return out.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ResultsTable":
        rows = []
        for rec in csv.DictReader(io.StringIO(text)):
            tts = float(rec["tts"])
            rows.append(ResultRow(
                N=int(rec["N"]),
                instance_id=int(rec["instance_id"]),
                run_id=int(rec["run_id"]),
                seed=int(rec["seed"]),
                solved=rec["solved"] == "1",
                tts=tts,
                censored=rec["censored"] == "1",
                error=rec.get("error", "") or "",
            ))
        return cls(rows)

    @classmethod
    def load(cls, path: str | os.PathLike) -> "ResultsTable":
        return cls.from_csv(Path(path).read_text())


# -- running --------------------------------------------------------------------------


@dataclass(frozen=True)
class _Task:
    n: int
    instance_id: int
    run_id: int
    instance_seed: int
    run_seed: int
    instance_path: str | None = None


def _tasks(spec: ExperimentSpec) -> list[_Task]:
    tasks = []
    if spec.instance_dir is not None:
        files = sorted(str(p) for p in Path(spec.instance_dir).glob("*.cnf"))
        if not files:
            raise ConfigError(f"no .cnf files in {spec.instance_dir}")
        if spec.mode == "same-instance":
            files = files[:1]
        for iid, path in enumerate(files):
            n = parse_dimacs(Path(path).read_text()).num_vars
            run_ids = range(spec.runs) if spec.mode == "same-instance" else range(1)
            for rid in run_ids:
                tasks.append(_Task(n, iid, rid, 0, split_seed(spec.master_seed, n, iid, rid), path))
        return tasks
    for n in spec.n_list:
        if spec.mode == "same-instance":
            pairs = [(0, rid) for rid in range(spec.runs)]
        else:
            pairs = [(iid, 0) for iid in range(spec.runs)]
        for iid, rid in pairs:
            tasks.append(_Task(
                n, iid, rid,
                split_seed(spec.master_seed, n, iid, 0, INSTANCE_STREAM),
                split_seed(spec.master_seed, n, iid, rid, RUN_STREAM),
            ))
    return tasks


_INSTANCE_CACHE: dict = {}


def _instance_for(spec: ExperimentSpec, task: _Task):
    key = (task.instance_path, task.n, task.instance_seed, spec.ratio, spec.type_weights)
    inst = _INSTANCE_CACHE.get(key)
    if inst is None:
        if task.instance_path is not None:
            inst = parse_dimacs(Path(task.instance_path).read_text())
        else:
            inst, _ = generate_planted(task.n, spec.ratio, task.instance_seed, spec.type_weights)
        if spec.mode == "same-instance":
            _INSTANCE_CACHE.clear()
            _INSTANCE_CACHE[key] = inst
    return inst


def _run_task(spec: ExperimentSpec, task: _Task) -> ResultRow:
    inst = _instance_for(spec, task)
    t0 = time.perf_counter()
    try:
        if spec.solver == "dmm":
            out, _ = solve(inst, spec.params, spec.integrator, task.run_seed)
        else:
            cfg = dataclasses.replace(spec.walksat, seed=task.run_seed)
            out = walksat_solve(inst, cfg)
        row = ResultRow(task.n, task.instance_id, task.run_id, task.run_seed, out.solved,
                        out.tts_steps, out.censored, out.error)
    except Exception as exc:  # a failed run is a flagged row, never a failed sweep
        row = ResultRow(task.n, task.instance_id, task.run_id, task.run_seed, False, 0, True,
                        type(exc).__name__)
    return dataclasses.replace(row, wall_seconds=time.perf_counter() - t0)


def _run_chunk(spec: ExperimentSpec, tasks: Sequence[_Task]) -> list[ResultRow]:
    return [_run_task(spec, t) for t in tasks]


def _external_rows(spec: ExperimentSpec) -> list[ResultRow]:
    rows = []
    for n, path in sorted(spec.timing_files.items()):
        timings = ingest_timings(path)
        for iid, t in enumerate(timings.times):
            rows.append(ResultRow(n, iid, 0, 0, True, float(t), False))
        for k in range(timings.censored_count):
            rows.append(ResultRow(n, len(timings.times) + k, 0, 0, False, 0.0, True))
    return rows


def default_workers() -> int:
    return max(1, int(os.environ.get("DMMLAB_WORKERS", "1")))


def run_experiment(spec: ExperimentSpec, workers: int | None = None,
                   output_dir: str | os.PathLike | None = None, progress=None) -> ResultsTable:
    """Execute every run of ``spec``; optionally persist ``results.csv`` and ``manifest.json``.

    Results depend only on the spec, never on ``workers`` or scheduling.
    """
    workers = default_workers() if workers is None else max(1, int(workers))
    out_dir = output_dir or os.environ.get("DMMLAB_OUTPUT_DIR") or spec.output_dir
    t0 = time.perf_counter()
    if spec.solver == "external":
        rows = _external_rows(spec)
    else:
        tasks = _tasks(spec)
        if workers == 1:
            rows = []
            for i, task in enumerate(tasks):
                rows.append(_run_task(spec, task))
                if progress is not None:
                    progress(i + 1, len(tasks))
        else:
            chunks = [tasks[i::workers] for i in range(workers)]
            with ProcessPoolExecutor(max_workers=workers) as pool:
                rows = [r for part in pool.map(_run_chunk, [spec] * workers, chunks) for r in part]
    table = ResultsTable(rows)
    if out_dir:
        write_results(spec, table, out_dir, elapsed=time.perf_counter() - t0)
    return table


def manifest(spec: ExperimentSpec) -> dict:
    return {
        "spec": spec.to_dict(),
        "code_version": __version__,
        "numpy_version": np.__version__,
        "python_version": platform.python_version(),
        "rng": {
            "generator": "numpy.random.PCG64",
            "seed_splitting": "h=splitmix64(master); for x in (stream, N, instance_id, run_id): "
                              "h=splitmix64(h ^ x); stream 0 = solver run, 1 = instance (run_id 0)",
            "dmm_draw_order": "N uniforms in [-1,1) for v, then per step M normals for x_s, M for x_l",
            "walksat_draw_order": "N uniforms for the start (bit = u < 0.5), then 3 uniforms per flip",
        },
        "desk_scale": spec.desk_scale,
        "result_columns": list(RESULT_COLUMNS),
    }


def write_results(spec: ExperimentSpec, table: ResultsTable, out_dir, elapsed: float | None = None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "results.csv").write_text(table.to_csv())
    (out / "wall_times.csv").write_text(table.timings_csv())
    (out / "manifest.json").write_text(json.dumps(manifest(spec), indent=2, sort_keys=True) + "\n")
    return out


# -- analysis ---------------------------------------------------------------------------


@dataclass
class ScalingEntry:
    N: int
    n_solved: int
    n_censored: int
    mean: float
    variance: float
    relative_variance: float
    relative_variance_se: float


@dataclass
class ScalingReport:
    entries: list[ScalingEntry]
    theta: float | None
    theta_err: float | None
    fit_residuals: list[float]

    def to_dict(self) -> dict:
        return {
            "entries": [dataclasses.asdict(e) for e in self.entries],
            "theta": self.theta,
            "theta_err": self.theta_err,
            "fit_residuals": self.fit_residuals,
        }


@dataclass
class Analysis:
    fits: dict[int, DistributionFit]
    exponential_fits: dict[int, DistributionFit]
    scaling: ScalingReport
    samples: dict[int, Sample]

    def to_dict(self) -> dict:
        return {
            "fits": {str(n): f.to_dict() for n, f in self.fits.items()},
            "exponential_fits": {str(n): f.to_dict() for n, f in self.exponential_fits.items()},
            "scaling": self.scaling.to_dict(),
        }


def analyze(table: ResultsTable, family: str = "invgauss", n_boot: int = 2000, seed: int = 0,
            output_dir: str | os.PathLike | None = None) -> Analysis:
    """Per-N fits and relative variance, then a power-law fit across N.

    Unsolved runs and zero-length solves are excluded from the fits and counted.
    """
    fits, expfits, samples, entries = {}, {}, {}, []
    for n in table.n_values():
        sample = Sample.from_outcomes(table.group(n))
        samples[n] = sample
        if sample.n < 3:
            continue
        rv = relative_variance(sample, n_boot=n_boot, seed=split_seed(seed, n, 0, 0))
        entries.append(ScalingEntry(n, sample.n, sample.censored_count, rv.mean, rv.variance,
                                    rv.ratio, rv.ratio_se))
        try:
            fits[n] = fit_family(sample, family)
        except ValueError:
            pass
        expfits[n] = fit_exponential(sample)

    theta = theta_err = None
    residuals: list[float] = []
    usable = [e for e in entries if e.relative_variance > 0]
    if len(usable) >= 3:
        pts = [(e.N, e.relative_variance, e.relative_variance_se if e.relative_variance_se > 0 else None)
               for e in usable]
        if any(p[2] is None for p in pts):
            pts = [p[:2] for p in pts]
        pl = fit_powerlaw(pts)
        theta, theta_err, residuals = pl.theta, pl.theta_err, [float(r) for r in pl.residuals]
    result = Analysis(fits, expfits, ScalingReport(entries, theta, theta_err, residuals), samples)
    if output_dir is not None:
        write_analysis(result, output_dir)
    return result


def write_analysis(result: Analysis, out_dir) -> Path:
    out = Path(out_dir)
    (out / "fits").mkdir(parents=True, exist_ok=True)
    (out / "plots").mkdir(parents=True, exist_ok=True)
    for n, fit in result.fits.items():
        (out / "fits" / f"N{n}_{fit.family}.json").write_text(fit.to_json() + "\n")
    for n, fit in result.exponential_fits.items():
        (out / "fits" / f"N{n}_exponential.json").write_text(fit.to_json() + "\n")
    (out / "report.json").write_text(json.dumps(result.to_dict(), indent=2, sort_keys=True) + "\n")

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["N", "n_solved", "n_censored", "mean", "variance", "relative_variance", "relative_variance_se"])
    for e in result.scaling.entries:
        w.writerow([e.N, e.n_solved, e.n_censored, repr(e.mean), repr(e.variance),
                    repr(e.relative_variance), repr(e.relative_variance_se)])
    (out / "plots" / "relative_variance.csv").write_text(buf.getvalue())
    for n, sample in result.samples.items():
        if sample.n:
            (out / "plots" / f"hist_N{n}.csv").write_text(histogram(sample).to_csv())
    return out


# -- presets ----------------------------------------------------------------------------

_DESK_NS = (500, 1000, 2000, 4000)


def _dmm(name, **kw) -> ExperimentSpec:
    kw.setdefault("type_weights", PRESET_TYPE_WEIGHTS)
    kw.setdefault("integrator", IntegratorConfig(method="euler", dt=0.2, noise=0.12, max_steps=100_000))
    return ExperimentSpec(name=name, solver="dmm", **kw)


def _presets() -> dict[str, ExperimentSpec]:
    quiet = IntegratorConfig(method="euler", dt=0.2, noise=0.0, max_steps=100_000)
    return {
        "fig2-desk": _dmm("fig2-desk", n_list=(1000,), runs=300, master_seed=2,
                          desk_scale={"reference_N": [6000], "reference_runs_per_N": 1000}),
        "fig3-desk": _dmm("fig3-desk", n_list=_DESK_NS, runs=300, master_seed=3,
                          desk_scale={"reference_runs_per_N": 1000, "runs_factor": 0.3}),
        "figS4-desk": _dmm("figS4-desk", n_list=(250, 500, 1000, 2000), runs=200, ratio=6.0,
                           integrator=IntegratorConfig(dt=0.05, noise=0.12, max_steps=400_000),
                           master_seed=4, desk_scale={"reference_runs_per_N": 1000, "runs_factor": 0.2}),
        "figS7-desk": _dmm("figS7-desk", n_list=_DESK_NS, runs=300, integrator=quiet, master_seed=7,
                           desk_scale={"reference_N": [2500, 20000], "reference_runs_per_N": 1000,
                                       "runs_factor": 0.3}),
        "figS8-desk": _dmm("figS8-desk", n_list=_DESK_NS, runs=300, master_seed=8,
                           integrator=IntegratorConfig(method="rk4", dt=0.2, noise=0.0, max_steps=100_000),
                           desk_scale={"reference_N": [2500, 20000], "reference_runs_per_N": 1000,
                                       "runs_factor": 0.3}),
        "figS9-desk": _dmm("figS9-desk", n_list=(1000,), runs=500, mode="same-instance", master_seed=9,
                           desk_scale={"reference_N": [6000], "reference_runs": 1000, "runs_factor": 0.5}),
        "fig4-desk": ExperimentSpec(name="fig4-desk", solver="walksat", n_list=(40, 50, 60), runs=200,
                                    type_weights=PRESET_TYPE_WEIGHTS, fit_family="exponential",
                                    walksat=WalkSatConfig(noise_prob=0.5, max_flips=10**8),
                                    master_seed=44, desk_scale={"runs_factor": 1.0}),
        "smoke": _dmm("smoke", n_list=(50, 100, 200), runs=10, master_seed=1,
                      desk_scale={"purpose": "fast end-to-end check"}),
    }


PRESET_NAMES = tuple(sorted(_presets()))


def preset(name: str) -> ExperimentSpec:
    try:
        return _presets()[name]
    except KeyError:
        raise UnknownPreset(f"unknown preset {name!r}; available: {', '.join(PRESET_NAMES)}") from None
