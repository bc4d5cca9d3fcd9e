import csv
import io
import math

import numpy as np
import pytest

from dmmlab.dmm import DmmParams, DmmState, flow_unchecked
from dmmlab.errors import ConfigError, NonFiniteState
from dmmlab.instance import Cnf3Instance, check_assignment, generate_planted
from dmmlab.integrate import (
    IntegratorConfig,
    euler_step,
    init_state,
    make_rng,
    rk4_step,
    rk4_update,
    solve,
)

QUIET = IntegratorConfig(noise=0.0)


def _match_signs(inst, plant, target):
    """Relabel polarities so that ``target`` satisfies every clause ``plant`` satisfies."""
    flip = np.where(plant != target, -1, 1)
    lits = inst.literals * flip[inst.var_index]
    return Cnf3Instance(inst.num_vars, lits)


def _unsat_instance():
    signs = [(a, b, c) for a in (1, -1) for b in (1, -1) for c in (1, -1)]
    return Cnf3Instance.from_clauses(3, [[(1, a), (2, b), (3, c)] for a, b, c in signs])


def test_config_validation():
    with pytest.raises(ConfigError):
        IntegratorConfig(dt=0)
    with pytest.raises(ConfigError):
        IntegratorConfig(noise=-0.1)
    with pytest.raises(ConfigError):
        IntegratorConfig(method="rk4", noise=0.12)
    with pytest.raises(ConfigError):
        IntegratorConfig(method="heun")
    assert IntegratorConfig().dt == 0.2 and IntegratorConfig().noise == 0.12


def test_init_state_deterministic_and_bounded():
    inst, _ = generate_planted(100, 7, 0)
    a, b = init_state(inst, 42), init_state(inst, 42)
    assert np.array_equal(a.v, b.v) and np.array_equal(a.x_s, b.x_s) and np.array_equal(a.x_l, b.x_l)
    assert np.all(a.x_l == 1.0) and np.all(a.x_s == 0.5)
    assert np.all(np.abs(a.v) <= 1.0)


def test_init_state_seeds_differ():
    inst, _ = generate_planted(20, 7, 0)
    for s in range(100):
        assert not np.array_equal(init_state(inst, 2 * s).v, init_state(inst, 2 * s + 1).v)


def test_euler_identity_without_clauses():
    inst = Cnf3Instance(4, np.zeros((0, 3), dtype=int))
    st = DmmState(np.array([0.1, -0.2, 0.3, -0.4]), np.zeros(0), np.zeros(0))
    new = euler_step(inst, DmmParams(), QUIET, st)
    assert np.array_equal(new.v, st.v)


def test_euler_clamped_fixed_point():
    inst = Cnf3Instance.from_clauses(3, [[(1, 1), (2, 1), (3, 1)]])
    st = DmmState(np.ones(3), np.zeros(1), np.ones(1))
    new = euler_step(inst, DmmParams(), QUIET, st)
    assert np.array_equal(new.v, st.v) and new.x_s[0] == 0.0 and new.x_l[0] == 1.0


def test_euler_satisfied_rail_long_memory_decay():
    inst = Cnf3Instance.from_clauses(3, [[(1, 1), (2, 1), (3, 1)]])
    st = DmmState(np.ones(3), np.array([0.5]), np.array([5.0]))
    new = euler_step(inst, DmmParams(), QUIET, st)
    assert np.array_equal(new.v, np.ones(3))
    # dt * alpha * delta = 0.2 * 5 * 0.05
    assert st.x_l[0] - new.x_l[0] == pytest.approx(0.05, rel=1e-12)
    assert st is not new and st.x_l[0] == 5.0


def test_euler_matches_numpy_update():
    inst, _ = generate_planted(40, 5, 1)
    rng = np.random.default_rng(1)
    st = DmmState(rng.uniform(-0.5, 0.5, 40), rng.uniform(0.2, 0.8, 200), rng.uniform(2, 10, 200))
    f = flow_unchecked(inst, DmmParams(), st)
    new = euler_step(inst, DmmParams(), QUIET, st)
    assert np.allclose(new.v, np.clip(st.v + 0.2 * f.dv, -1, 1), rtol=0, atol=1e-14)
    assert np.allclose(new.x_s, np.clip(st.x_s + 0.2 * f.dx_s, 0, 1), rtol=0, atol=1e-14)
    assert np.allclose(new.x_l, np.clip(st.x_l + 0.2 * f.dx_l, 1, None), rtol=0, atol=1e-14)


def test_euler_noise_increment_variance():
    # 10^4 disjoint clauses, each at C = delta so dx_l = 0; 10 steps -> 10^5 increments
    k = 10_000
    inst = Cnf3Instance(3 * k, np.arange(1, 3 * k + 1).reshape(k, 3))
    cfg = IntegratorConfig(noise=0.12, dt=0.2)
    st = DmmState(np.full(3 * k, 0.9), np.full(k, 0.5), np.full(k, 100.0))
    rng = make_rng(99)
    incs = [euler_step(inst, DmmParams(), cfg, st, rng).x_l - st.x_l for _ in range(10)]
    incs = np.concatenate(incs)
    assert incs.size == 100_000
    assert abs(np.var(incs) / (0.12 * 0.2) - 1.0) < 0.05
    assert abs(np.mean(incs)) < 4 * math.sqrt(0.024 / incs.size)


def test_euler_needs_rng_with_noise():
    inst, _ = generate_planted(10, 3, 0)
    with pytest.raises(ConfigError):
        euler_step(inst, DmmParams(), IntegratorConfig(), init_state(inst, 0))


def test_euler_nonfinite_raises():
    inst, _ = generate_planted(10, 3, 0)
    cfg = IntegratorConfig(noise=0.0, dt=1e308)
    st = init_state(inst, 0)
    st.x_l[:] = 1e3
    with pytest.raises(NonFiniteState):
        for _ in range(5):
            st = euler_step(inst, DmmParams(), cfg, st)


def test_state_bounds_fuzz():
    rng = np.random.default_rng(2)
    for trial in range(20):
        inst, _ = generate_planted(int(rng.integers(5, 60)), float(rng.uniform(3, 8)), trial)
        cfg = IntegratorConfig(noise=float(rng.uniform(0, 2)), dt=float(rng.uniform(0.05, 1.0)))
        st = DmmState(rng.uniform(-1, 1, inst.num_vars), rng.uniform(0, 1, inst.num_clauses),
                      rng.uniform(1, 10 * inst.num_clauses, inst.num_clauses))
        r = make_rng(trial)
        for _ in range(30):
            st = euler_step(inst, DmmParams(x_l_max_factor=10.0), cfg, st, r)
            assert st.in_bounds(10.0 * inst.num_clauses)


# -- RK4 ------------------------------------------------------------------------------------


def test_rk4_identity_without_clauses():
    inst = Cnf3Instance(3, np.zeros((0, 3), dtype=int))
    st = DmmState(np.array([0.5, -0.5, 0.0]), np.zeros(0), np.zeros(0))
    assert np.array_equal(rk4_step(inst, DmmParams(), IntegratorConfig(method="rk4", noise=0), st).v, st.v)


def test_rk4_rejects_noise():
    inst, _ = generate_planted(10, 3, 0)
    with pytest.raises(ConfigError):
        rk4_step(inst, DmmParams(), IntegratorConfig(noise=0.1), init_state(inst, 0))


@pytest.mark.parametrize("dt", [0.2, 0.1, 0.05, 0.5])
def test_rk4_scalar_taylor(dt):
    y = rk4_update(lambda x: -x, 1.0, dt)
    assert y == pytest.approx(1 - dt + dt**2 / 2 - dt**3 / 6 + dt**4 / 24, rel=1e-15, abs=1e-16)


def _rk4_global_error(dt, t_end=2.0):
    y = 1.0
    for _ in range(int(round(t_end / dt))):
        y = rk4_update(lambda x: -x, y, dt)
    return abs(y - math.exp(-t_end))


def test_rk4_fourth_order_convergence():
    errs = [_rk4_global_error(dt) for dt in (0.2, 0.1, 0.05)]
    for coarse, fine in zip(errs, errs[1:]):
        assert abs(coarse / fine / 16.0 - 1.0) < 0.10


def test_rk4_step_matches_generic_rk4():
    inst, _ = generate_planted(30, 4, 2)
    rng = np.random.default_rng(5)
    st = DmmState(rng.uniform(-0.5, 0.5, 30), rng.uniform(0.3, 0.7, 120), rng.uniform(3, 6, 120))
    params = DmmParams()
    dt = 0.01

    def f(y):
        s = DmmState(y[:30], y[30:150], y[150:])
        ff = flow_unchecked(inst, params, s)
        return np.concatenate([ff.dv, ff.dx_s, ff.dx_l])

    ref = rk4_update(f, np.concatenate([st.v, st.x_s, st.x_l]), dt)
    new = rk4_step(inst, params, IntegratorConfig(method="rk4", noise=0, dt=dt), st)
    assert np.allclose(np.concatenate([new.v, new.x_s, new.x_l]), ref, rtol=1e-12, atol=1e-13)


# -- solve ----------------------------------------------------------------------------------


def test_solve_immediate_solution():
    inst, plant = generate_planted(50, 7, 3)
    target = init_state(inst, 17).v > 0
    inst = _match_signs(inst, plant, target)
    out, _ = solve(inst, cfg=IntegratorConfig(), seed=17)
    assert out.solved and out.tts_steps == 0 and not out.censored


def test_solve_timeout_censored():
    out, _ = solve(_unsat_instance(), cfg=IntegratorConfig(max_steps=1), seed=0)
    assert not out.solved and out.censored and out.tts_steps == 1


def test_solve_finds_solution_and_is_deterministic():
    inst, _ = generate_planted(200, 7, 4, (0.556, 0.389, 0.056))
    a, _ = solve(inst, seed=5)
    b, _ = solve(inst, seed=5)
    assert a == b
    assert a.solved and 0 < a.tts_steps <= IntegratorConfig().max_steps
    assert check_assignment(inst, a.assignment)
    c, _ = solve(inst, seed=6)
    assert c.final_state_digest != a.final_state_digest


def test_solve_independent_of_block_size():
    inst, _ = generate_planted(150, 7, 8, (0.556, 0.389, 0.056))
    plain, _ = solve(inst, seed=1)
    logged, log = solve(inst, cfg=IntegratorConfig(log_stride=3), seed=1)
    assert plain == logged
    assert log.steps[-1] == plain.tts_steps


def test_solve_nonfinite_flagged():
    inst, _ = generate_planted(20, 7, 0)
    out, _ = solve(inst, cfg=IntegratorConfig(dt=1e308, noise=0.0, init_x_l=1e3, max_steps=50), seed=0)
    assert not out.solved and out.censored and out.error == "NonFiniteState"


def test_trajectory_log_format_and_instantons():
    with_flips = 0
    solved = 0
    for seed in range(20):
        inst, _ = generate_planted(100, 7, 100 + seed, (0.556, 0.389, 0.056))
        out, log = solve(inst, cfg=IntegratorConfig(log_stride=1), seed=seed)
        assert np.all(np.diff(log.times) > 0)
        if out.solved and out.tts_steps > 0:
            solved += 1
            with_flips += log.sign_changes().sum() >= 1
    assert solved >= 18
    assert with_flips >= 0.9 * solved

    inst, _ = generate_planted(10, 4, 0)
    _, log = solve(inst, cfg=IntegratorConfig(log_stride=2, log_vars=(0, 3)), seed=1)
    rows = list(csv.reader(io.StringIO(log.to_csv())))
    assert rows[0] == ["step", "time", "var_index", "v"]
    assert {r[2] for r in rows[1:]} == {"1", "4"}
    assert len(rows) - 1 == 2 * len(log.steps)


def test_euler_and_rk4_same_order_of_magnitude():
    ratios = []
    for seed in range(5):
        inst, _ = generate_planted(100, 7, 200 + seed, (0.556, 0.389, 0.056))
        e, _ = solve(inst, cfg=IntegratorConfig(noise=0.0), seed=seed)
        r, _ = solve(inst, cfg=IntegratorConfig(method="rk4", noise=0.0), seed=seed)
        assert e.solved and r.solved
        ratios.append(max(r.tts_steps, 1) / max(e.tts_steps, 1))
    assert 0.1 < np.median(ratios) < 10
