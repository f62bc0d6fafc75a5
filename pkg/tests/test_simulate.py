import io
import math

import numpy as np
import pytest

from linealloc import simulate
from linealloc.distributions import Deterministic, Exponential, HyperExponential, Uniform, h2_from_cv
from linealloc.policies import mtr
from linealloc.simulate import (
    SimConfig,
    analytic_value,
    figure_sweeps,
    generate_instance,
    run,
    run_trial,
    sweep,
    sweep_csv_text,
    verify_theorem1,
    with_axis,
)

SMALL = SimConfig(n_users=2000, trials=3, seed=123)


def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig(n_users=0)
    with pytest.raises(ValueError):
        SimConfig(capacity=0)
    with pytest.raises(ValueError):
        SimConfig(capacity_pmf=(0.5, 0.4))
    with pytest.raises(ValueError):
        SimConfig(policies=("nearest",))
    assert SimConfig(policies=("gs",)).policies == ("mtr", "gs")


def test_config_dict_roundtrip():
    cfg = SimConfig(inter_server=h2_from_cv(4.0, 1.0), capacity_pmf=(0.5, 0.5), capacity=2, policies=("ugs",))
    assert SimConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        SimConfig.from_dict({"bogus": 1})


def test_instances_are_reproducible_and_independent():
    a, b = generate_instance(SMALL, 0), generate_instance(SMALL, 0)
    assert np.array_equal(a.users, b.users) and np.array_equal(a.servers, b.servers)
    c = generate_instance(SMALL, 1)
    assert not np.array_equal(a.users[:10], c.users[:10])
    other = generate_instance(SMALL.replace(seed=124), 0)
    assert not np.array_equal(a.users[:10], other.users[:10])


def test_generated_instance_matches_everyone():
    for cfg in (SMALL, SMALL.replace(inter_user=Exponential(1.9), capacity=2)):
        inst = generate_instance(cfg, 0)
        assert inst.n_users == cfg.total_users
        assert mtr(inst).n_matched == inst.n_users


def test_server_cap_leaves_users_unmatched():
    cfg = SMALL.replace(max_servers=500)
    tr = run_trial(cfg, 0)
    assert tr.n_servers == 500
    assert tr.matched_fraction < 1


def test_parallel_matches_serial():
    cfg = SMALL.replace(policies=("ugs", "gs"))
    r1, r2 = run(cfg, jobs=1), run(cfg, jobs=2)
    for p in cfg.policies:
        assert np.array_equal(r1.trial_means(p), r2.trial_means(p))


def test_ugs_mean_equals_mtr_mean():
    res = run(SMALL.replace(policies=("ugs",)))
    assert np.allclose(res.trial_means("mtr"), res.trial_means("ugs"), rtol=1e-12)
    assert res.variance("ugs") >= res.variance("mtr")


def test_bidirectional_policies_do_better():
    res = run(SMALL.replace(policies=("gs", "optimal")))
    assert res.mean("optimal") <= res.mean("gs") <= res.mean("mtr")


def test_optimal_falls_back_to_heap_cost(monkeypatch):
    cfg = SMALL.replace(trials=1, policies=("optimal",))
    exact = run_trial(cfg, 0).stats["optimal"]
    monkeypatch.setattr(simulate, "DP_CELL_LIMIT", 0)
    heap = run_trial(cfg, 0).stats["optimal"]
    assert heap.mean == pytest.approx(exact.mean, rel=1e-12)
    assert math.isnan(heap.variance)


def test_mm1_mean_close_to_analytic():
    res = run(SimConfig(n_users=20_000, trials=10, seed=9))
    assert res.mean() == pytest.approx(2.0, rel=0.05)


def test_load_profile_checker():
    rep = verify_theorem1(SimConfig(n_users=300, capacity=3, inter_user=Exponential(2.0), seed=5), 20)
    assert rep.passed and rep.checked == 20
    assert rep.cycle_cost_max_diff < 1e-9


@pytest.mark.parametrize(
    "cfg,expected",
    [
        (SimConfig(), 2.0),
        (SimConfig(inter_user=Exponential(0.5), capacity=2), 1.1547005383792515),
        (SimConfig(inter_user=Deterministic(2.0), inter_server=Deterministic(1.0)), 1.0),
    ],
)
def test_analytic_value_routes(cfg, expected):
    assert analytic_value(cfg) == pytest.approx(expected, rel=1e-9)


def test_analytic_value_unstable_is_nan():
    assert math.isnan(analytic_value(SimConfig(inter_user=Exponential(3.0))))


def test_with_axis():
    base = SimConfig(inter_server=Uniform(2.0), capacity=2)
    assert with_axis(base, "rho", 0.8).lam == pytest.approx(0.8)
    assert with_axis(base, "load", 0.8).lam == pytest.approx(1.6)
    assert with_axis(base, "capacity", 5).capacity == 5
    h = with_axis(base, "cv2_server", 4.0).inter_server
    assert isinstance(h, HyperExponential) and h.mean() == pytest.approx(1.0)
    assert isinstance(with_axis(base, "cv2_user", 1.0).inter_user, Exponential)
    with pytest.raises(ValueError):
        with_axis(base, "speed", 1.0)


def test_sweep_rows_and_csv():
    rows = sweep(SMALL.replace(trials=2), "rho", [0.5, 1.5], analytic_kind="auto")
    assert [r["policy"] for r in rows] == ["mtr", "mtr"]
    ok = rows[0]
    assert ok["ratio"] == pytest.approx(ok["analytic_value"] / ok["mean_distance"])
    # unstable load: the simulation still runs, no model applies
    assert math.isnan(rows[1]["analytic_value"])
    bad = sweep(SMALL.replace(trials=2), "capacity", [1, 0])
    assert [r["policy"] for r in bad] == ["mtr", "error"]
    text = sweep_csv_text(bad, {"seed": 123})
    lines = text.splitlines()
    assert lines[0] == "# seed: 123"
    assert lines[1] == ",".join(simulate.SWEEP_FIELDS)
    assert lines[2].startswith("1,mtr,")
    assert lines[3].startswith("# error at 0")


@pytest.mark.parametrize("fig", sorted(simulate.FIGURES))
def test_figure_specs(fig):
    specs = figure_sweeps(fig, scale=0.01)
    assert specs
    for s in specs:
        cfg = s.configure(s.template, s.values[0]) if s.configure else with_axis(s.template, s.axis, s.values[0])
        assert cfg.n_users == 1000
        assert cfg.rho < cfg.mean_capacity


def test_figure_8_uses_load_of_mean_capacity():
    spec = next(s for s in figure_sweeps(8) if s.name == "fig8_det_variable")
    cfg = spec.configure(spec.template, 3)
    assert cfg.capacity_pmf == tuple([1 / 6] * 6)
    assert cfg.rho == pytest.approx(0.8 * 3.5)


def test_unknown_figure():
    with pytest.raises(ValueError):
        figure_sweeps(4)
