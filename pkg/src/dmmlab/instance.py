"""3-SAT instances: DIMACS I/O, planted-solution generation and assignment checks.

Clauses are stored as an ``(M, 3)`` integer array of signed DIMACS literals, so the
variable index of a literal is ``abs(lit)`` (1-based) and its polarity ``q`` is
``sign(lit)``.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence, TextIO

import numpy as np

from .errors import (
    DimacsSyntaxError,
    IndexOutOfRange,
    InvalidRatio,
    InvalidWeights,
    LengthMismatch,
    NotThreeSat,
)

DEFAULT_TYPE_WEIGHTS = (0.25, 0.50, 0.25)
_MASK64 = (1 << 64) - 1


@dataclass(frozen=True, eq=False)
class Cnf3Instance:
    num_vars: int
    literals: np.ndarray = field(repr=False)

    def __post_init__(self):
        lits = np.array(self.literals, dtype=np.int64).reshape(-1, 3)
        lits.setflags(write=False)
        object.__setattr__(self, "literals", lits)
        _validate(self.num_vars, lits)

    @classmethod
    def from_clauses(cls, num_vars: int, clauses: Iterable[Sequence[tuple[int, int]]]) -> "Cnf3Instance":
        """Build from ``[(var, q), (var, q), (var, q)]`` clause triples."""
        rows = []
        for clause in clauses:
            if len(clause) != 3:
                raise NotThreeSat(f"clause {list(clause)} does not have exactly 3 literals")
            rows.append([int(q) * int(var) for var, q in clause])
        return cls(num_vars, np.array(rows, dtype=np.int64).reshape(-1, 3))

    @property
    def num_clauses(self) -> int:
        return self.literals.shape[0]

    @property
    def ratio(self) -> float:
        return self.num_clauses / self.num_vars

    @property
    def var_index(self) -> np.ndarray:
        """0-based variable indices, shape (M, 3)."""
        return np.abs(self.literals) - 1

    @property
    def polarity(self) -> np.ndarray:
        """Literal polarities q in {+1, -1}, shape (M, 3)."""
        return np.sign(self.literals)

    @property
    def clauses(self) -> tuple[tuple[tuple[int, int], ...], ...]:
        return tuple(
            tuple((abs(int(l)), 1 if l > 0 else -1) for l in row) for row in self.literals
        )

    def __eq__(self, other):
        if not isinstance(other, Cnf3Instance):
            return NotImplemented
        return self.num_vars == other.num_vars and np.array_equal(self.literals, other.literals)

    def __hash__(self):
        return hash((self.num_vars, self.literals.tobytes()))


def _validate(num_vars: int, lits: np.ndarray) -> None:
    if int(num_vars) != num_vars or num_vars < 1:
        raise ValueError(f"num_vars must be a positive integer, got {num_vars}")
    if lits.size == 0:
        return
    if np.any(lits == 0):
        raise DimacsSyntaxError("literal 0 inside a clause")
    var = np.abs(lits)
    if np.any(var > num_vars):
        bad = int(var.max())
        raise IndexOutOfRange(f"variable {bad} exceeds declared N={num_vars}")
    dup = (var[:, 0] == var[:, 1]) | (var[:, 0] == var[:, 2]) | (var[:, 1] == var[:, 2])
    if np.any(dup):
        m = int(np.flatnonzero(dup)[0])
        raise NotThreeSat(f"clause {m} repeats a variable: {lits[m].tolist()}")


def parse_dimacs(text: str | TextIO) -> Cnf3Instance:
    """Parse DIMACS CNF text (or a readable stream) holding a 3-SAT formula."""
    if not isinstance(text, str):
        text = text.read()
    header = None
    clauses: list[list[int]] = []
    current: list[int] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("c") or line.startswith("%"):
            continue
        if line.startswith("p"):
            parts = line.split()
            if header is not None or len(parts) != 4 or parts[0] != "p" or parts[1] != "cnf":
                raise DimacsSyntaxError(f"line {lineno}: bad header {line!r}")
            try:
                header = (int(parts[2]), int(parts[3]))
            except ValueError:
                raise DimacsSyntaxError(f"line {lineno}: bad header {line!r}") from None
            if header[0] < 1 or header[1] < 0:
                raise DimacsSyntaxError(f"line {lineno}: bad header {line!r}")
            continue
        if header is None:
            raise DimacsSyntaxError(f"line {lineno}: clause before 'p cnf' header")
        for tok in line.split():
            try:
                lit = int(tok)
            except ValueError:
                raise DimacsSyntaxError(f"line {lineno}: bad literal {tok!r}") from None
            if lit == 0:
                _close_clause(current, header[0])
                clauses.append(current)
                current = []
            else:
                current.append(lit)
    if header is None:
        raise DimacsSyntaxError("missing 'p cnf N M' header")
    if current:
        raise DimacsSyntaxError("last clause is not 0-terminated")
    n, m = header
    if len(clauses) != m:
        raise DimacsSyntaxError(f"header declares {m} clauses, found {len(clauses)}")
    return Cnf3Instance(n, np.array(clauses, dtype=np.int64).reshape(-1, 3))


def _close_clause(clause: list[int], n: int) -> None:
    if len(clause) != 3:
        raise NotThreeSat(f"clause {clause} has {len(clause)} literals, expected 3")
    if len({abs(l) for l in clause}) != 3:
        raise NotThreeSat(f"clause {clause} repeats a variable")
    for lit in clause:
        if abs(lit) > n:
            raise IndexOutOfRange(f"literal {lit} exceeds declared N={n}")


def write_dimacs(inst: Cnf3Instance, comments: Sequence[str] = ()) -> str:
    out = io.StringIO()
    for c in comments:
        out.write(f"c {c}\n")
    out.write(f"p cnf {inst.num_vars} {inst.num_clauses}\n")
    for row in inst.literals:
        out.write(f"{row[0]} {row[1]} {row[2]} 0\n")
    return out.getvalue()


def clause_count(n_vars: int, ratio) -> int:
    """round(ratio * n_vars) with ties rounded up, computed exactly."""
    r = Fraction(str(ratio)) if isinstance(ratio, float) else Fraction(ratio)
    return math.floor(r * n_vars + Fraction(1, 2))


def generate_planted(
    n_vars: int,
    ratio,
    seed: int,
    type_weights: Sequence[float] = DEFAULT_TYPE_WEIGHTS,
) -> tuple[Cnf3Instance, np.ndarray]:
    """Random 3-SAT formula with a hidden satisfying assignment.

    ``type_weights[k-1]`` is the relative probability that a clause has exactly k
    literals satisfied by the planted assignment; clauses with none are never
    produced. Returns ``(instance, plant)`` with ``plant`` a boolean array.
    """
    if n_vars < 3:
        raise NotThreeSat(f"need at least 3 variables for 3-SAT, got {n_vars}")
    if ratio <= 0:
        raise InvalidRatio(f"ratio must be positive, got {ratio}")
    m = clause_count(n_vars, ratio)
    if m < 1:
        raise InvalidRatio(f"ratio {ratio} * N={n_vars} rounds to M={m} < 1")
    w = np.asarray(type_weights, dtype=float)
    if w.shape != (3,) or np.any(w < 0) or not np.all(np.isfinite(w)) or w.sum() <= 0:
        raise InvalidWeights(f"type_weights must be 3 nonnegative reals, not all zero: {type_weights}")

    rng = np.random.default_rng(int(seed) & _MASK64)
    plant = rng.random(n_vars) < 0.5

    var = rng.integers(0, n_vars, size=(m, 3))
    while True:
        dup = (var[:, 0] == var[:, 1]) | (var[:, 0] == var[:, 2]) | (var[:, 1] == var[:, 2])
        k = int(dup.sum())
        if k == 0:
            break
        var[dup] = rng.integers(0, n_vars, size=(k, 3))

    n_sat = rng.choice(3, size=m, p=w / w.sum()) + 1
    rank = rng.random((m, 3)).argsort(axis=1).argsort(axis=1)
    satisfied = rank < n_sat[:, None]

    # literal is true under the plant iff q agrees with the planted bit
    plant_sign = np.where(plant[var], 1, -1)
    q = np.where(satisfied, plant_sign, -plant_sign)
    inst = Cnf3Instance(n_vars, q * (var + 1))
    return inst, plant


def _as_bits(inst: Cnf3Instance, assignment) -> np.ndarray:
    bits = np.asarray(assignment, dtype=bool)
    if bits.shape != (inst.num_vars,):
        raise LengthMismatch(f"assignment has length {bits.size}, instance has N={inst.num_vars}")
    return bits


def clause_satisfied(inst: Cnf3Instance, assignment) -> np.ndarray:
    """Per-clause boolean: does the clause have at least one true literal."""
    bits = _as_bits(inst, assignment)
    if inst.num_clauses == 0:
        return np.zeros(0, dtype=bool)
    lit_true = bits[inst.var_index] == (inst.literals > 0)
    return lit_true.any(axis=1)


def check_assignment(inst: Cnf3Instance, assignment) -> bool:
    return bool(clause_satisfied(inst, assignment).all())
