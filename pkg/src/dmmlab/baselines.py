"""WalkSAT local search (flip-count TTS) and ingestion of external solver timings.

The WalkSAT kernel consumes exactly three uniforms per flip (clause pick, noise
coin, variable pick / tie-break), drawn in chunks from a PCG64 generator seeded
with the run seed, after the N draws of the random start.
"""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import ConfigError, NonPositiveTime, ParseError
from .instance import Cnf3Instance
from .integrate import RunOutcome, make_rng

_CHUNK = 1 << 15


@dataclass(frozen=True)
class WalkSatConfig:
    noise_prob: float = 0.5
    max_flips: int = 10_000_000
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.noise_prob <= 1.0:
            raise ConfigError(f"noise_prob must lie in [0, 1], got {self.noise_prob}")
        if int(self.max_flips) != self.max_flips or self.max_flips < 1:
            raise ConfigError(f"max_flips must be a positive integer, got {self.max_flips}")


def _occurrences(inst: Cnf3Instance) -> tuple[np.ndarray, np.ndarray]:
    """CSR layout: clauses containing variable i are occ[ptr[i]:ptr[i+1]]."""
    var = inst.var_index.ravel()
    clause = np.repeat(np.arange(inst.num_clauses), 3)
    order = np.argsort(var, kind="stable")
    ptr = np.zeros(inst.num_vars + 1, dtype=np.int64)
    np.cumsum(np.bincount(var, minlength=inst.num_vars), out=ptr[1:])
    return ptr, clause[order].astype(np.int64)


@njit(cache=True)
def _init_counts(var, pos, bits, numtrue, unsat, where):
    nunsat = 0
    for m in range(var.shape[0]):
        c = 0
        for s in range(3):
            if bits[var[m, s]] == pos[m, s]:
                c += 1
        numtrue[m] = c
        if c == 0:
            unsat[nunsat] = m
            where[m] = nunsat
            nunsat += 1
        else:
            where[m] = -1
    return nunsat


@njit(cache=True)
def _break_count(x, var, pos, bits, numtrue, ptr, occ):
    b = 0
    for j in range(ptr[x], ptr[x + 1]):
        m = occ[j]
        if numtrue[m] == 1:
            for s in range(3):
                if var[m, s] == x and bits[x] == pos[m, s]:
                    b += 1
    return b


@njit(cache=True)
def _flip(x, var, pos, bits, numtrue, unsat, where, nunsat, ptr, occ):
    bits[x] = not bits[x]
    for j in range(ptr[x], ptr[x + 1]):
        m = occ[j]
        for s in range(3):
            if var[m, s] == x:
                if bits[x] == pos[m, s]:
                    numtrue[m] += 1
                    if numtrue[m] == 1:
                        # leaves the unsat list: swap with the last entry
                        k = where[m]
                        last = unsat[nunsat - 1]
                        unsat[k] = last
                        where[last] = k
                        where[m] = -1
                        nunsat -= 1
                else:
                    numtrue[m] -= 1
                    if numtrue[m] == 0:
                        unsat[nunsat] = m
                        where[m] = nunsat
                        nunsat += 1
    return nunsat


@njit(cache=True)
def _walksat_block(var, pos, bits, numtrue, unsat, where, nunsat, ptr, occ, p, u, flipped):
    """Run up to ``u.shape[0]`` flips. Returns (flips_done, nunsat)."""
    brk = np.empty(3, dtype=np.int64)
    for f in range(u.shape[0]):
        if nunsat == 0:
            return f, nunsat
        m = unsat[min(int(u[f, 0] * nunsat), nunsat - 1)]
        best = 1 << 62
        for s in range(3):
            brk[s] = _break_count(var[m, s], var, pos, bits, numtrue, ptr, occ)
            if brk[s] < best:
                best = brk[s]
        if best > 0 and u[f, 1] < p:
            s = min(int(u[f, 2] * 3), 2)
        else:
            ntied = 0
            for s2 in range(3):
                if brk[s2] == best:
                    ntied += 1
            pick = min(int(u[f, 2] * ntied), ntied - 1)
            s = 0
            for s2 in range(3):
                if brk[s2] == best:
                    if pick == 0:
                        s = s2
                        break
                    pick -= 1
        flipped[f] = var[m, s]
        nunsat = _flip(var[m, s], var, pos, bits, numtrue, unsat, where, nunsat, ptr, occ)
    return u.shape[0], nunsat


def walksat_solve(inst: Cnf3Instance, cfg: WalkSatConfig | None = None,
                  trace: list | None = None) -> RunOutcome:
    """WalkSAT/SKC from a uniform random start; TTS is the number of flips.

    Pick an unsatisfied clause uniformly. A zero-break variable in it is flipped
    (ties uniform); otherwise with probability ``noise_prob`` a uniform variable of
    the clause is flipped, else a minimum-break one (ties uniform). No restarts.
    ``trace``, if given, receives the 0-based index of every flipped variable.
    """
    cfg = cfg or WalkSatConfig()
    rng = make_rng(cfg.seed)
    bits = rng.random(inst.num_vars) < 0.5
    var = np.ascontiguousarray(inst.var_index, dtype=np.int64)
    pos = np.ascontiguousarray(inst.literals > 0)
    ptr, occ = _occurrences(inst)
    numtrue = np.zeros(inst.num_clauses, dtype=np.int64)
    unsat = np.zeros(inst.num_clauses, dtype=np.int64)
    where = np.zeros(inst.num_clauses, dtype=np.int64)
    nunsat = _init_counts(var, pos, bits, numtrue, unsat, where)

    flips = 0
    while nunsat > 0 and flips < cfg.max_flips:
        n = min(_CHUNK, cfg.max_flips - flips)
        u = rng.random((n, 3))
        flipped = np.empty(n, dtype=np.int64)
        done, nunsat = _walksat_block(var, pos, bits, numtrue, unsat, where, nunsat,
                                      ptr, occ, cfg.noise_prob, u, flipped)
        if trace is not None:
            trace.extend(flipped[:done].tolist())
        flips += done

    solved = nunsat == 0
    digest = format(int.from_bytes(np.packbits(bits).tobytes()[:8].ljust(8, b"\0"), "big"), "016x")
    return RunOutcome(
        solved=bool(solved),
        tts_steps=int(flips),
        seed=int(cfg.seed),
        final_state_digest=digest,
        censored=not solved,
        assignment=bits.copy(),
    )


# -- external timings -------------------------------------------------------------


@dataclass(frozen=True)
class ExternalTimings:
    solver: str
    times: tuple[float, ...]
    censored_count: int = 0

    def __post_init__(self):
        if self.censored_count < 0:
            raise ValueError("censored_count must be nonnegative")
        for t in self.times:
            if not t > 0:
                raise NonPositiveTime(f"time {t} is not strictly positive")


def _parse_number(token: str, where: str) -> float:
    try:
        value = float(token)
    except ValueError:
        raise ParseError(f"{where}: cannot parse {token!r} as a number") from None
    if not np.isfinite(value):
        raise ParseError(f"{where}: non-finite value {token!r}")
    if value <= 0:
        raise NonPositiveTime(f"{where}: time {value} is not strictly positive")
    return value


def ingest_timings(source, column: str | int | None = None, solver: str = "external",
                   censored_marker: str | None = None) -> ExternalTimings:
    """Read solver timings (seconds) from a path, stream or string.

    With ``column=None`` the input holds one number per line (blank lines and ``#``
    comments skipped). Otherwise it is CSV with a header row and ``column`` selects
    a field by name or 0-based position. Cells equal to ``censored_marker`` count as
    censored runs instead of times.
    """
    if isinstance(source, (str, os.PathLike)) and os.path.exists(source):
        with open(source, newline="") as fh:
            text = fh.read()
    elif isinstance(source, str):
        text = source
    else:
        text = source.read()

    times: list[float] = []
    censored = 0
    if column is None:
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if censored_marker is not None and line == censored_marker:
                censored += 1
                continue
            times.append(_parse_number(line, f"line {lineno}"))
    else:
        reader = csv.reader(io.StringIO(text))
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError("empty CSV input") from None
        if isinstance(column, int):
            if not 0 <= column < len(header):
                raise ParseError(f"column {column} out of range for header {header}")
            col = column
        else:
            if column not in header:
                raise ParseError(f"column {column!r} not in header {header}")
            col = header.index(column)
        for lineno, row in enumerate(reader, 2):
            if not row or all(not c.strip() for c in row):
                continue
            if col >= len(row):
                raise ParseError(f"line {lineno}: missing column {column!r}")
            cell = row[col].strip()
            if censored_marker is not None and cell == censored_marker:
                censored += 1
                continue
            times.append(_parse_number(cell, f"line {lineno}"))
    return ExternalTimings(solver, tuple(times), censored)
