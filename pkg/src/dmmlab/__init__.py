"""Digital memcomputing dynamics for 3-SAT, a WalkSAT baseline and
time-to-solution statistics for studying self-averaging."""

from __future__ import annotations

__version__ = "0.1.0"

from .baselines import ExternalTimings, WalkSatConfig, ingest_timings, walksat_solve
from .dmm import DmmParams, DmmState, FlowField, flow, is_solved
from .instance import Cnf3Instance, check_assignment, generate_planted, parse_dimacs, write_dimacs
from .integrate import IntegratorConfig, RunOutcome, TrajectoryLog, solve
from .stats import (
    DistributionFit,
    Sample,
    fit_exponential,
    fit_invgauss,
    fit_powerlaw,
    fit_weibull,
    relative_variance,
)

__all__ = [
    "__version__",
    "Cnf3Instance",
    "DistributionFit",
    "DmmParams",
    "DmmState",
    "ExternalTimings",
    "FlowField",
    "IntegratorConfig",
    "RunOutcome",
    "Sample",
    "TrajectoryLog",
    "WalkSatConfig",
    "check_assignment",
    "fit_exponential",
    "fit_invgauss",
    "fit_powerlaw",
    "fit_weibull",
    "flow",
    "generate_planted",
    "ingest_timings",
    "is_solved",
    "parse_dimacs",
    "relative_variance",
    "solve",
    "walksat_solve",
    "write_dimacs",
]
