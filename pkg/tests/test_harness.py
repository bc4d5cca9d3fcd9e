import json

import numpy as np
import pytest
from scipy import stats as sps

from dmmlab import harness
from dmmlab.baselines import WalkSatConfig
from dmmlab.errors import ConfigError, UnknownPreset
from dmmlab.harness import (
    ExperimentSpec,
    ResultRow,
    ResultsTable,
    analyze,
    preset,
    run_experiment,
    split_seed,
    splitmix64,
    unbiased_type_weights,
)
from dmmlab.instance import Cnf3Instance, generate_planted, write_dimacs
from dmmlab.integrate import IntegratorConfig


def _unsat_dir(tmp_path):
    signs = [(a, b, c) for a in (1, -1) for b in (1, -1) for c in (1, -1)]
    inst = Cnf3Instance.from_clauses(3, [[(1, a), (2, b), (3, c)] for a, b, c in signs])
    d = tmp_path / "cnf"
    d.mkdir()
    (d / "unsat.cnf").write_text(write_dimacs(inst))
    return d


def _small_spec(**kw):
    base = dict(name="t", n_list=(30, 60), runs=4, type_weights=harness.PRESET_TYPE_WEIGHTS,
                integrator=IntegratorConfig(max_steps=20_000), master_seed=5)
    base.update(kw)
    return ExperimentSpec(**base)


# -- seeds ------------------------------------------------------------------------------


def test_splitmix64_reference_values():
    # first outputs of the reference SplitMix64 generator started from state 0
    state, outs = 0, []
    for _ in range(3):
        outs.append(splitmix64(state))
        state = (state + 0x9E3779B97F4A7C15) % 2**64
    assert outs == [0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4, 0x06C45D188009454F]


def test_split_seed_distinct_and_stable():
    seeds = {split_seed(7, n, i, r) for n in (10, 20) for i in range(20) for r in range(20)}
    assert len(seeds) == 800
    assert split_seed(7, 10, 1, 2) == split_seed(7, 10, 1, 2)
    assert split_seed(7, 10, 1, 2, stream=0) != split_seed(7, 10, 1, 2, stream=1)
    assert all(0 <= s < 2**64 for s in seeds)


def test_unbiased_weights_have_mean_three_halves():
    for t in (0.0, 1 / 18, 0.1, 0.25):
        w = unbiased_type_weights(t)
        assert sum(w) == pytest.approx(1.0)
        assert w[0] + 2 * w[1] + 3 * w[2] == pytest.approx(1.5)
    with pytest.raises(ValueError):
        unbiased_type_weights(0.3)


# -- spec -------------------------------------------------------------------------------


@pytest.mark.parametrize("kw", [
    dict(runs=0),
    dict(solver="minisat"),
    dict(mode="parallel"),
    dict(solver="external"),
    dict(n_list=()),
])
def test_spec_validation(kw):
    with pytest.raises(ConfigError):
        _small_spec(**kw)


def test_spec_json_round_trip(tmp_path):
    spec = _small_spec(integrator=IntegratorConfig(log_vars=(1, 2), log_stride=3), walksat=WalkSatConfig(0.3))
    p = tmp_path / "spec.json"
    p.write_text(json.dumps(spec.to_dict()))
    assert ExperimentSpec.load(p) == spec
    with pytest.raises(ConfigError):
        ExperimentSpec.from_dict({**spec.to_dict(), "colour": "red"})


# -- running ----------------------------------------------------------------------------


def test_one_step_on_hard_instance_gives_one_censored_row(tmp_path):
    spec = ExperimentSpec(name="hard", instance_dir=str(_unsat_dir(tmp_path)), n_list=(), runs=1,
                          integrator=IntegratorConfig(max_steps=1))
    table = run_experiment(spec)
    assert len(table) == 1
    row = table.rows[0]
    assert row.censored and not row.solved and row.N == 3


def test_same_spec_twice_byte_identical_and_worker_independent(tmp_path):
    spec = _small_spec()
    a = run_experiment(spec, output_dir=tmp_path / "a")
    b = run_experiment(spec, output_dir=tmp_path / "b", workers=2)
    assert (tmp_path / "a" / "results.csv").read_bytes() == (tmp_path / "b" / "results.csv").read_bytes()
    assert a.to_csv() == b.to_csv()
    assert len(a) == 8 and all(r.solved for r in a.rows)


def test_fresh_and_same_instance_keys():
    fresh = run_experiment(_small_spec(n_list=(30,)))
    assert [r.instance_id for r in fresh.rows] == [0, 1, 2, 3]
    assert {r.run_id for r in fresh.rows} == {0}
    same = run_experiment(_small_spec(n_list=(30,), mode="same-instance"))
    assert {r.instance_id for r in same.rows} == {0}
    assert [r.run_id for r in same.rows] == [0, 1, 2, 3]
    assert len({r.seed for r in same.rows}) == 4


def test_row_seeds_follow_split_rule():
    spec = _small_spec(n_list=(30,))
    for r in run_experiment(spec).rows:
        assert r.seed == split_seed(spec.master_seed, 30, r.instance_id, r.run_id)


def test_walksat_solver_rows():
    spec = _small_spec(solver="walksat", n_list=(40,), runs=5)
    table = run_experiment(spec)
    assert all(r.solved and r.tts >= 0 for r in table.rows)


def test_failed_run_becomes_flagged_row(monkeypatch):
    def boom(*a, **k):
        raise RuntimeError("broken")

    monkeypatch.setattr(harness, "solve", boom)
    table = run_experiment(_small_spec(n_list=(30,), runs=2))
    assert len(table) == 2
    assert all(r.censored and not r.solved and r.error == "RuntimeError" for r in table.rows)


def test_nonfinite_run_flagged_not_fatal():
    spec = _small_spec(n_list=(20,), runs=2,
                       integrator=IntegratorConfig(dt=1e308, noise=0.0, init_x_l=1e3, max_steps=20))
    table = run_experiment(spec)
    assert all(r.censored and r.error == "NonFiniteState" for r in table.rows)


def test_env_output_dir_and_manifest(tmp_path, monkeypatch):
    monkeypatch.setenv("DMMLAB_OUTPUT_DIR", str(tmp_path / "env"))
    spec = _small_spec(n_list=(30,), runs=2)
    run_experiment(spec)
    out = tmp_path / "env"
    assert (out / "results.csv").exists() and (out / "wall_times.csv").exists()
    man = json.loads((out / "manifest.json").read_text())
    assert ExperimentSpec.from_dict(man["spec"]) == spec
    assert man["rng"]["generator"] == "numpy.random.PCG64"
    assert "splitmix64" in man["rng"]["seed_splitting"]
    assert man["code_version"]


def test_workers_env(monkeypatch):
    monkeypatch.setenv("DMMLAB_WORKERS", "3")
    assert harness.default_workers() == 3


def test_external_timings_spec(tmp_path):
    p = tmp_path / "t.txt"
    p.write_text("1.0\n2.0\n4.0\n")
    spec = ExperimentSpec(name="ext", solver="external", n_list=(100,), timing_files={100: str(p)})
    table = run_experiment(spec)
    assert [r.tts for r in table.rows] == [1.0, 2.0, 4.0]


def test_results_table_csv_round_trip_and_unique_keys():
    rows = [ResultRow(10, 0, 1, 5, True, 12, False), ResultRow(10, 0, 0, 4, False, 100, True, "x")]
    t = ResultsTable(rows)
    assert [r.run_id for r in t.rows] == [0, 1]
    assert ResultsTable.from_csv(t.to_csv()).rows == t.rows
    assert t.to_csv().splitlines()[0] == "N,instance_id,run_id,seed,solved,tts,censored,error"
    with pytest.raises(ValueError):
        ResultsTable(rows + [ResultRow(10, 0, 0, 9, True, 3, False)])


# -- analysis ---------------------------------------------------------------------------


def _table(samples: dict[int, np.ndarray], censored: dict[int, int] | None = None) -> ResultsTable:
    rows = []
    for n, xs in samples.items():
        for i, x in enumerate(xs):
            rows.append(ResultRow(n, i, 0, 0, True, float(x), False))
        for k in range((censored or {}).get(n, 0)):
            rows.append(ResultRow(n, len(xs) + k, 0, 0, False, 0.0, True))
    return ResultsTable(rows)


def test_identical_groups_give_zero_theta():
    xs = np.random.default_rng(0).gamma(4.0, 10.0, 200).round() + 1
    res = analyze(_table({100: xs, 200: xs, 400: xs}), n_boot=200)
    assert res.scaling.theta == pytest.approx(0.0, abs=1e-12)


def test_inverse_gaussian_groups_recover_unit_exponent():
    # IG(mu=N, lambda=N^2) has relative variance mu/lambda = 1/N exactly
    rng = np.random.default_rng(1)
    samples = {n: sps.invgauss.rvs(1.0 / n, scale=float(n) ** 2, size=3000, random_state=rng)
               for n in (10, 30, 100, 300)}
    res = analyze(_table(samples), n_boot=400)
    s = res.scaling
    assert abs(s.theta - 1.0) < 3 * s.theta_err
    assert all(f.family == "invgauss" for f in res.fits.values())


def test_sample_sizes_account_for_censoring(tmp_path):
    rng = np.random.default_rng(2)
    samples = {n: rng.exponential(50.0, 100) + 1 for n in (10, 20, 40)}
    res = analyze(_table(samples, {20: 7}), family="exponential", n_boot=100, output_dir=tmp_path)
    by_n = {e.N: e for e in res.scaling.entries}
    assert by_n[20].n_solved == 100 and by_n[20].n_censored == 7
    assert res.fits[20].n == 100 and res.fits[20].censored_count == 7
    assert (tmp_path / "fits" / "N20_exponential.json").exists()
    rv_csv = (tmp_path / "plots" / "relative_variance.csv").read_text().splitlines()
    assert rv_csv[0].startswith("N,n_solved") and len(rv_csv) == 4
    assert (tmp_path / "plots" / "hist_N40.csv").exists()
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["scaling"]["theta"] == pytest.approx(res.scaling.theta)


def test_analysis_recomputable_from_table(tmp_path):
    rng = np.random.default_rng(3)
    table = _table({n: rng.gamma(3.0, n, 150) + 1 for n in (5, 10, 20)})
    p = tmp_path / "results.csv"
    p.write_text(table.to_csv())
    a = analyze(table, n_boot=200)
    b = analyze(ResultsTable.load(p), n_boot=200)
    assert json.dumps(a.to_dict(), sort_keys=True) == json.dumps(b.to_dict(), sort_keys=True)


# -- presets ----------------------------------------------------------------------------


def test_fig3_preset():
    s = preset("fig3-desk")
    assert s.solver == "dmm" and s.ratio == 7.0 and s.runs == 300
    assert s.n_list == (500, 1000, 2000, 4000)
    assert s.integrator.method == "euler" and s.integrator.noise == 0.12 and s.integrator.dt == 0.2
    assert s.desk_scale


def test_figS9_preset_is_single_instance():
    s = preset("figS9-desk")
    assert s.mode == "same-instance" and s.runs == 500 and s.n_list == (1000,)


def test_other_presets():
    assert preset("figS4-desk").ratio == 6.0 and preset("figS4-desk").integrator.dt == 0.05
    assert preset("figS7-desk").integrator.noise == 0.0
    assert preset("figS8-desk").integrator.method == "rk4"
    w = preset("fig4-desk")
    assert w.solver == "walksat" and w.n_list == (40, 50, 60) and w.runs == 200
    for name in harness.PRESET_NAMES:
        assert preset(name).name == name


def test_unknown_preset():
    with pytest.raises(UnknownPreset):
        preset("unknown")


def test_preset_instances_are_satisfiable_by_plant():
    spec = preset("smoke")
    inst, plant = generate_planted(50, spec.ratio, 0, spec.type_weights)
    from dmmlab.instance import check_assignment
    assert check_assignment(inst, plant)
