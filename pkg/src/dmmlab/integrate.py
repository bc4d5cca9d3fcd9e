"""Fixed-step integration of the DMM flow, TTS measurement and trajectory logging.

Forward Euler runs with optional additive Gaussian white noise on the memory
variables (Euler-Maruyama: each step adds ``sqrt(noise * dt) * N(0, 1)`` to every
``x_s`` and ``x_l``). RK4 is deterministic only. After each step ``v`` is clamped to
[-1, 1], ``x_s`` to [0, 1] and ``x_l`` to [1, x_l_max_factor * M].

Every run draws from one ``numpy.random.Generator`` (PCG64) seeded with the run
seed: first the N initial voltages, then the noise, step by step, ``x_s`` before
``x_l``. Noise is drawn in blocks but consumed in stream order, so block size never
changes a result.
"""

from __future__ import annotations

import csv
import hashlib
import io
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numba import njit

from .dmm import DmmParams, DmmState, flow_kernel, kernel_arrays, solved_kernel
from .errors import ConfigError, NonFiniteState
from .instance import Cnf3Instance

METHODS = ("euler", "rk4")
_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class IntegratorConfig:
    method: str = "euler"
    dt: float = 0.2
    noise: float = 0.12
    max_steps: int = 100_000
    log_stride: int = 0  # 0 disables trajectory logging
    log_vars: tuple[int, ...] | None = None  # 0-based variable indices; None logs all
    init_x_s: float = 0.5
    init_x_l: float = 1.0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if not self.dt > 0:
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if not self.noise >= 0:
            raise ConfigError(f"noise strength must be nonnegative, got {self.noise}")
        if self.method == "rk4" and self.noise > 0:
            raise ConfigError("rk4 is deterministic; set noise=0 or use method='euler'")
        if int(self.max_steps) != self.max_steps or self.max_steps < 1:
            raise ConfigError(f"max_steps must be a positive integer, got {self.max_steps}")
        if self.log_stride < 0:
            raise ConfigError("log_stride must be >= 0")
        if not 0.0 <= self.init_x_s <= 1.0 or self.init_x_l < 1.0:
            raise ConfigError("initial memories must lie inside their bounds")

    @property
    def noise_std(self) -> float:
        return float(np.sqrt(self.noise * self.dt))


@dataclass
class RunOutcome:
    solved: bool
    tts_steps: int
    seed: int
    final_state_digest: str
    censored: bool
    error: str = ""
    assignment: np.ndarray | None = field(default=None, repr=False, compare=False)


@dataclass
class TrajectoryLog:
    steps: list[int]
    var_indices: np.ndarray
    values: list[np.ndarray]
    dt: float

    @property
    def times(self) -> np.ndarray:
        return np.asarray(self.steps, dtype=float) * self.dt

    def as_array(self) -> np.ndarray:
        """Sampled voltages, shape (n_samples, n_logged_vars)."""
        return np.vstack(self.values)

    def sign_changes(self) -> np.ndarray:
        """Number of sign flips of each logged variable between consecutive samples."""
        s = np.sign(self.as_array())
        return (np.diff(s, axis=0) != 0).sum(axis=0)

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["step", "time", "var_index", "v"])
        for step, row in zip(self.steps, self.values):
            t = step * self.dt
            for idx, val in zip(self.var_indices, row):
                w.writerow([step, repr(float(t)), int(idx) + 1, repr(float(val))])
        return out.getvalue()


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed) & _MASK64))


def _initial_state(inst: Cnf3Instance, cfg: IntegratorConfig, rng: np.random.Generator) -> DmmState:
    v = rng.uniform(-1.0, 1.0, size=inst.num_vars)
    xs = np.full(inst.num_clauses, cfg.init_x_s)
    xl = np.full(inst.num_clauses, cfg.init_x_l)
    return DmmState(v, xs, xl)


def init_state(inst: Cnf3Instance, seed: int, cfg: IntegratorConfig | None = None) -> DmmState:
    """Random voltages uniform in [-1, 1]; memories at their configured start values."""
    return _initial_state(inst, cfg or IntegratorConfig(), make_rng(seed))


def state_digest(state: DmmState) -> str:
    h = hashlib.sha256()
    for arr in (state.v, state.x_s, state.x_l):
        h.update(np.ascontiguousarray(arr, dtype=np.float64).tobytes())
    return h.hexdigest()[:16]


# -- kernels --------------------------------------------------------------------


@njit(cache=True)
def _clamp_and_check(v, xs, xl, xl_max):
    for i in range(v.shape[0]):
        x = v[i]
        if not np.isfinite(x):
            return False
        v[i] = min(1.0, max(-1.0, x))
    for m in range(xs.shape[0]):
        a = xs[m]
        b = xl[m]
        if not (np.isfinite(a) and np.isfinite(b)):
            return False
        xs[m] = min(1.0, max(0.0, a))
        xl[m] = min(xl_max, max(1.0, b))
    return True


@njit(cache=True)
def _euler_block(var, q, v, xs, xl, a, b, g, d, e, z, dt, sigma, noise, nsteps, xl_max, check):
    """Run up to ``nsteps`` steps; stop early once solved.

    Returns (steps_taken, solved, finite).
    """
    n = v.shape[0]
    mm = xs.shape[0]
    dv = np.empty(n)
    dxs = np.empty(mm)
    dxl = np.empty(mm)
    for s in range(nsteps):
        flow_kernel(var, q, v, xs, xl, a, b, g, d, e, z, dv, dxs, dxl)
        for i in range(n):
            v[i] += dt * dv[i]
        if sigma > 0.0:
            for m in range(mm):
                xs[m] += dt * dxs[m] + sigma * noise[s, 0, m]
                xl[m] += dt * dxl[m] + sigma * noise[s, 1, m]
        else:
            for m in range(mm):
                xs[m] += dt * dxs[m]
                xl[m] += dt * dxl[m]
        if not _clamp_and_check(v, xs, xl, xl_max):
            return s + 1, False, False
        if check and solved_kernel(var, q, v):
            return s + 1, True, True
    return nsteps, False, True


@njit(cache=True)
def _rk4_block(var, q, v, xs, xl, a, b, g, d, e, z, dt, nsteps, xl_max, check):
    n = v.shape[0]
    mm = xs.shape[0]
    k = np.empty((4, n))
    ks = np.empty((4, mm))
    kl = np.empty((4, mm))
    tv = np.empty(n)
    ts = np.empty(mm)
    tl = np.empty(mm)
    coef = (0.5 * dt, 0.5 * dt, dt)
    for s in range(nsteps):
        flow_kernel(var, q, v, xs, xl, a, b, g, d, e, z, k[0], ks[0], kl[0])
        for stage in range(3):
            h = coef[stage]
            for i in range(n):
                tv[i] = v[i] + h * k[stage, i]
            for m in range(mm):
                ts[m] = xs[m] + h * ks[stage, m]
                tl[m] = xl[m] + h * kl[stage, m]
            flow_kernel(var, q, tv, ts, tl, a, b, g, d, e, z,
                        k[stage + 1], ks[stage + 1], kl[stage + 1])
        w = dt / 6.0
        for i in range(n):
            v[i] += w * (k[0, i] + 2.0 * k[1, i] + 2.0 * k[2, i] + k[3, i])
        for m in range(mm):
            xs[m] += w * (ks[0, m] + 2.0 * ks[1, m] + 2.0 * ks[2, m] + ks[3, m])
            xl[m] += w * (kl[0, m] + 2.0 * kl[1, m] + 2.0 * kl[2, m] + kl[3, m])
        if not _clamp_and_check(v, xs, xl, xl_max):
            return s + 1, False, False
        if check and solved_kernel(var, q, v):
            return s + 1, True, True
    return nsteps, False, True


# -- generic steppers (test hooks and references) ---------------------------------


def euler_update(f: Callable, y, dt: float):
    return y + dt * f(y)


def rk4_update(f: Callable, y, dt: float):
    """One classical Runge-Kutta step for dy/dt = f(y)."""
    k1 = f(y)
    k2 = f(y + 0.5 * dt * k1)
    k3 = f(y + 0.5 * dt * k2)
    k4 = f(y + dt * k3)
    return y + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


# -- public steppers ----------------------------------------------------------------


def _advance(inst, params, cfg, state, nsteps, rng, check, arrays=None):
    var, q = arrays if arrays is not None else kernel_arrays(inst)
    xl_max = params.x_l_max(inst.num_clauses)
    args = params.as_tuple()
    if cfg.method == "rk4":
        return _rk4_block(var, q, state.v, state.x_s, state.x_l, *args, cfg.dt, nsteps, xl_max, check)
    sigma = cfg.noise_std
    if sigma > 0.0:
        noise = rng.standard_normal((nsteps, 2, inst.num_clauses))
    else:
        noise = np.empty((0, 2, 0))
    return _euler_block(var, q, state.v, state.x_s, state.x_l, *args, cfg.dt, sigma, noise,
                        nsteps, xl_max, check)


def euler_step(inst: Cnf3Instance, params: DmmParams, cfg: IntegratorConfig, state: DmmState,
               rng: np.random.Generator | None = None) -> DmmState:
    """One forward Euler(-Maruyama) step; returns a new state."""
    if cfg.method != "euler":
        cfg = IntegratorConfig(**{**cfg.__dict__, "method": "euler"})
    if cfg.noise > 0 and rng is None:
        raise ConfigError("a random generator is required when noise > 0")
    new = state.copy()
    _, _, finite = _advance(inst, params, cfg, new, 1, rng, False)
    if not finite:
        raise NonFiniteState("non-finite value after Euler step")
    return new


def rk4_step(inst: Cnf3Instance, params: DmmParams, cfg: IntegratorConfig, state: DmmState) -> DmmState:
    if cfg.noise > 0:
        raise ConfigError("rk4 is deterministic; noise must be 0")
    if cfg.method != "rk4":
        cfg = IntegratorConfig(**{**cfg.__dict__, "method": "rk4"})
    new = state.copy()
    _, _, finite = _advance(inst, params, cfg, new, 1, None, False)
    if not finite:
        raise NonFiniteState("non-finite value after RK4 step")
    return new


def _noise_block(num_clauses: int) -> int:
    # keeps one block of Gaussian draws around 16 MB at most
    return int(max(1, min(256, 1_000_000 // max(1, 2 * num_clauses))))


def solve(
    inst: Cnf3Instance,
    params: DmmParams | None = None,
    cfg: IntegratorConfig | None = None,
    seed: int = 0,
) -> tuple[RunOutcome, TrajectoryLog | None]:
    """Integrate from a seeded random start until the sign-read assignment solves ``inst``.

    TTS counts integration steps; a start that already satisfies the formula has
    TTS 0. Hitting ``max_steps`` (or a non-finite state) yields a censored outcome.
    """
    params = params or DmmParams()
    cfg = cfg or IntegratorConfig()
    rng = make_rng(seed)
    state = _initial_state(inst, cfg, rng)
    arrays = kernel_arrays(inst)

    log = None
    if cfg.log_stride:
        idx = np.arange(inst.num_vars) if cfg.log_vars is None else np.asarray(cfg.log_vars, dtype=int)
        log = TrajectoryLog([0], idx, [state.v[idx].copy()], cfg.dt)
        block = cfg.log_stride
    else:
        block = _noise_block(inst.num_clauses)

    steps = 0
    solved = bool(solved_kernel(arrays[0], arrays[1], state.v))
    finite = True
    while not solved and steps < cfg.max_steps:
        n = min(block, cfg.max_steps - steps)
        taken, solved, finite = _advance(inst, params, cfg, state, n, rng, True, arrays)
        steps += taken
        if log is not None and (solved or taken == n or not finite):
            log.steps.append(steps)
            log.values.append(state.v[log.var_indices].copy())
        if not finite:
            break

    outcome = RunOutcome(
        solved=bool(solved),
        tts_steps=int(steps),
        seed=int(seed),
        final_state_digest=state_digest(state),
        censored=not solved,
        error="" if finite else "NonFiniteState",
        assignment=state.v > 0.0,
    )
    return outcome, log
