"""Flow field of the digital memcomputing machine for 3-SAT.

State: voltages ``v`` (one per variable, in [-1, 1]), short memories ``x_s`` (per
clause, in [0, 1]) and long memories ``x_l`` (per clause, in [1, x_l_max_factor*M]).

Two implementations live here: small pure-Python/numpy functions that mirror the
equations term by term (used by tests and for single evaluations), and numba
kernels that the integrator runs in its inner loop. Both accumulate ``dv`` in the
same order, clause by clause and slot by slot, so they agree bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np
from numba import njit

from .errors import StateOutOfBounds, VariableNotInClause
from .instance import Cnf3Instance


@dataclass(frozen=True)
class DmmParams:
    alpha: float = 5.0
    beta: float = 20.0
    gamma: float = 0.25
    delta_param: float = 0.05
    epsilon: float = 1e-3
    zeta: float = 0.1
    x_l_max_factor: float = 1e4

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not value > 0:
                raise ValueError(f"{name} must be strictly positive, got {value}")
        if not self.gamma > self.delta_param:
            raise ValueError("gamma must exceed delta_param")

    def x_l_max(self, num_clauses: int) -> float:
        return self.x_l_max_factor * num_clauses

    def as_tuple(self) -> tuple[float, ...]:
        return (self.alpha, self.beta, self.gamma, self.delta_param, self.epsilon, self.zeta)


@dataclass
class DmmState:
    v: np.ndarray
    x_s: np.ndarray
    x_l: np.ndarray

    def copy(self) -> "DmmState":
        return DmmState(self.v.copy(), self.x_s.copy(), self.x_l.copy())

    def in_bounds(self, x_l_max: float) -> bool:
        return bool(
            np.all(np.abs(self.v) <= 1.0)
            and np.all((self.x_s >= 0.0) & (self.x_s <= 1.0))
            and np.all((self.x_l >= 1.0) & (self.x_l <= x_l_max))
        )


@dataclass
class FlowField:
    dv: np.ndarray
    dx_s: np.ndarray
    dx_l: np.ndarray


# -- term-by-term reference -----------------------------------------------------


def _clause(inst: Cnf3Instance, m: int) -> tuple[np.ndarray, np.ndarray]:
    return inst.var_index[m], inst.polarity[m].astype(float)


def _position(inst: Cnf3Instance, m: int, i: int) -> int:
    """Clause slot holding variable ``i`` (1-based, as in DIMACS)."""
    slots = np.flatnonzero(np.abs(inst.literals[m]) == i)
    if slots.size == 0:
        raise VariableNotInClause(f"variable {i} does not occur in clause {m}")
    return int(slots[0])


def clause_value(inst: Cnf3Instance, m: int, v) -> float:
    idx, q = _clause(inst, m)
    v = np.asarray(v, dtype=float)
    return 0.5 * float(np.min(1.0 - q * v[idx]))


def gradient_term(inst: Cnf3Instance, m: int, i: int, v) -> float:
    """Gradient-like term for variable ``i`` (1-based) in clause ``m``."""
    p = _position(inst, m, i)
    idx, q = _clause(inst, m)
    v = np.asarray(v, dtype=float)
    others = [k for k in range(3) if k != p]
    return 0.5 * q[p] * min(1.0 - q[k] * v[idx[k]] for k in others)


def rigidity_term(inst: Cnf3Instance, m: int, i: int, v) -> float:
    """Rigidity term for variable ``i`` (1-based) in clause ``m``.

    Only the literal attaining the clause minimum gets a nonzero value; on exact
    ties the lowest clause slot wins.
    """
    p = _position(inst, m, i)
    idx, q = _clause(inst, m)
    v = np.asarray(v, dtype=float)
    terms = 1.0 - q * v[idx]
    if int(np.argmin(terms)) != p:
        return 0.0
    return 0.5 * (q[p] - v[idx[p]])


def flow(inst: Cnf3Instance, params: DmmParams, state: DmmState) -> FlowField:
    if not state.in_bounds(params.x_l_max(inst.num_clauses)):
        raise StateOutOfBounds("state violates the variable/memory bounds")
    return flow_unchecked(inst, params, state)


def flow_unchecked(inst: Cnf3Instance, params: DmmParams, state: DmmState) -> FlowField:
    """``flow`` without the bounds check (intermediate Runge-Kutta stages may leave the box)."""
    if inst.num_clauses == 0:
        return FlowField(np.zeros(inst.num_vars), np.zeros(0), np.zeros(0))
    a, b, g, d, e, z = params.as_tuple()
    idx = inst.var_index
    q = inst.polarity.astype(float)
    v, xs, xl = state.v, state.x_s, state.x_l

    terms = 1.0 - q * v[idx]
    arg = np.argmin(terms, axis=1)
    rows = np.arange(len(arg))
    c = 0.5 * terms[rows, arg]

    # min over the two other slots, per slot
    other = np.stack(
        [np.minimum(terms[:, 1], terms[:, 2]),
         np.minimum(terms[:, 0], terms[:, 2]),
         np.minimum(terms[:, 0], terms[:, 1])],
        axis=1,
    )
    grad = 0.5 * q * other
    rig = np.zeros_like(terms)
    rig[rows, arg] = 0.5 * (q[rows, arg] - v[idx[rows, arg]])

    w_grad = (xl * xs)[:, None]
    w_rig = ((1.0 + z * xl) * (1.0 - xs))[:, None]
    contrib = w_grad * grad + w_rig * rig
    dv = np.bincount(idx.ravel(), weights=contrib.ravel(), minlength=inst.num_vars)

    dxs = b * (xs + e) * (c - g)
    dxl = a * (c - d)
    return FlowField(dv, dxs, dxl)


def assignment_from_state(state: DmmState) -> np.ndarray:
    return np.asarray(state.v) > 0.0


def is_solved(inst: Cnf3Instance, state: DmmState) -> bool:
    from .instance import check_assignment

    return check_assignment(inst, assignment_from_state(state))


# -- numba kernels --------------------------------------------------------------
# ``var`` is the (M, 3) 0-based index array, ``q`` the (M, 3) float polarity array.


@njit(cache=True)
def flow_kernel(var, q, v, xs, xl, a, b, g, d, e, z, dv, dxs, dxl):
    dv[:] = 0.0
    for m in range(var.shape[0]):
        i0, i1, i2 = var[m, 0], var[m, 1], var[m, 2]
        q0, q1, q2 = q[m, 0], q[m, 1], q[m, 2]
        t0 = 1.0 - q0 * v[i0]
        t1 = 1.0 - q1 * v[i1]
        t2 = 1.0 - q2 * v[i2]
        if t0 <= t1 and t0 <= t2:
            k = 0
            tmin = t0
        elif t1 <= t2:
            k = 1
            tmin = t1
        else:
            k = 2
            tmin = t2
        c = 0.5 * tmin
        wg = xl[m] * xs[m]
        wr = (1.0 + z * xl[m]) * (1.0 - xs[m])
        r0 = 0.5 * (q0 - v[i0]) if k == 0 else 0.0
        r1 = 0.5 * (q1 - v[i1]) if k == 1 else 0.0
        r2 = 0.5 * (q2 - v[i2]) if k == 2 else 0.0
        dv[i0] += wg * (0.5 * q0 * min(t1, t2)) + wr * r0
        dv[i1] += wg * (0.5 * q1 * min(t0, t2)) + wr * r1
        dv[i2] += wg * (0.5 * q2 * min(t0, t1)) + wr * r2
        dxs[m] = b * (xs[m] + e) * (c - g)
        dxl[m] = a * (c - d)


@njit(cache=True)
def solved_kernel(var, q, v):
    """Sign reading: variable true iff v > 0; a clause needs one true literal."""
    for m in range(var.shape[0]):
        ok = False
        for s in range(3):
            x = v[var[m, s]]
            if (q[m, s] > 0.0 and x > 0.0) or (q[m, s] < 0.0 and x <= 0.0):
                ok = True
                break
        if not ok:
            return False
    return True


def kernel_arrays(inst: Cnf3Instance) -> tuple[np.ndarray, np.ndarray]:
    var = np.ascontiguousarray(inst.var_index, dtype=np.int64)
    q = np.ascontiguousarray(inst.polarity, dtype=np.float64)
    return var, q
