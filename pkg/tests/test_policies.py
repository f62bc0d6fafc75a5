import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from linealloc.errors import InfeasibleInstanceError
from linealloc.policies import (
    SpatialInstance,
    brute_force_optimal,
    gale_shapley,
    gale_shapley_rounds,
    gs_worst_case,
    load_profile,
    mtr,
    optimal_cost,
    optimal_cost_heap,
    optimal_dp,
    read_instance_csv,
    ugs,
    ugs_events,
    write_assignment_csv,
    write_instance_csv,
)


def random_instance(rng, n_users, n_servers, max_cap=3, integer=False):
    if integer:
        u = rng.integers(0, 8, n_users).astype(float)
        s = rng.integers(0, 8, n_servers).astype(float)
    else:
        u = rng.uniform(0, 10, n_users)
        s = rng.uniform(0, 10, n_servers)
    caps = rng.integers(1, max_cap + 1, n_servers)
    order = np.argsort(s, kind="stable")
    return SpatialInstance(np.sort(u), s[order], caps[order])


@st.composite
def instances(draw, max_users=7, max_servers=9, integer=True):
    nu = draw(st.integers(0, max_users))
    ns = draw(st.integers(1, max_servers))
    coord = st.integers(0, 12).map(float) if integer else st.floats(0, 100, allow_nan=False)
    u = sorted(draw(st.lists(coord, min_size=nu, max_size=nu)))
    s = sorted(draw(st.lists(coord, min_size=ns, max_size=ns)))
    caps = draw(st.lists(st.integers(1, 3), min_size=ns, max_size=ns))
    return SpatialInstance(np.array(u), np.array(s), np.array(caps))


def mtr_reference(inst):
    left = inst.capacities.astype(int).tolist()
    out = []
    for x in inst.users:
        j = next((j for j, s in enumerate(inst.servers) if s >= x and left[j] > 0), -1)
        if j >= 0:
            left[j] -= 1
        out.append(j)
    return np.array(out)


def test_instance_validation():
    with pytest.raises(ValueError):
        SpatialInstance(np.array([1.0, 0.0]), np.array([2.0]))
    with pytest.raises(ValueError):
        SpatialInstance(np.array([0.0]), np.array([2.0]), np.array([0]))
    inst = SpatialInstance(np.array([0.0]), np.array([1.0, 2.0]), np.array([2, 1]))
    assert inst.total_capacity == 3
    with pytest.raises(ValueError):
        inst.users[0] = 5.0


@given(instances())
def test_mtr_matches_sequential_reference(inst):
    assert np.array_equal(mtr(inst).match, mtr_reference(inst))


@given(instances())
def test_ugs_matches_event_reference(inst):
    assert np.array_equal(ugs(inst).match, ugs_events(inst).match)


@given(instances())
def test_gs_matches_round_reference(inst):
    a, b = gale_shapley(inst), gale_shapley_rounds(inst)
    assert a.total_cost == pytest.approx(b.total_cost)
    assert np.array_equal(a.match, b.match)


@given(instances(integer=False))
def test_gs_is_stable(inst):
    a = gale_shapley(inst)
    n_match = min(inst.n_users, inst.total_capacity)
    assert a.n_matched == n_match
    loads = a.server_loads(inst.n_servers)
    # no user/server pair that both strictly prefer each other
    for i, x in enumerate(inst.users):
        di = a.distances[i] if a.match[i] >= 0 else np.inf
        for j, s in enumerate(inst.servers):
            d = abs(x - s)
            if d < di:
                worst = max((a.distances[k] for k in np.nonzero(a.match == j)[0]), default=-np.inf)
                assert loads[j] == inst.capacities[j] and worst <= d


@given(instances())
@settings(max_examples=200)
def test_optimal_dp_equals_brute_force(inst):
    if inst.n_users > inst.total_capacity:
        with pytest.raises(InfeasibleInstanceError):
            optimal_dp(inst)
        return
    dp = optimal_dp(inst)
    bf = brute_force_optimal(inst)
    assert dp.total_cost == pytest.approx(bf.total_cost, abs=1e-9)
    assert optimal_cost(inst) == pytest.approx(bf.total_cost, abs=1e-9)
    assert optimal_cost_heap(inst) == pytest.approx(bf.total_cost, abs=1e-9)
    assert np.all(dp.server_loads(inst.n_servers) <= inst.capacities)


def test_heap_matches_dp_on_larger_instances():
    rng = np.random.default_rng(3)
    for _ in range(40):
        inst = random_instance(rng, 300, 200, integer=bool(rng.integers(2)))
        if inst.n_users > inst.total_capacity:
            continue
        assert optimal_cost_heap(inst) == pytest.approx(optimal_cost(inst), rel=1e-11, abs=1e-9)


@given(instances(integer=False))
def test_optimal_has_no_crossings(inst):
    if inst.n_users > inst.total_capacity:
        return
    a = optimal_dp(inst)
    s = inst.servers[a.match]
    # sorted users must map to non-decreasing server positions
    assert np.all(np.diff(s) >= 0)


@given(instances())
def test_ordering_of_policy_costs(inst):
    if inst.n_users > inst.total_capacity:
        return
    assert optimal_dp(inst).total_cost <= gale_shapley(inst).total_cost + 1e-9


@pytest.mark.parametrize("caps", ["c1", "c3", "random"])
def test_ugs_and_mtr_share_load_profile(caps):
    rng = np.random.default_rng(11)
    for _ in range(100):
        n, m = rng.integers(1, 40), rng.integers(1, 40)
        u = np.sort(rng.exponential(2.0, n).cumsum())
        s = np.sort(rng.exponential(1.0, m).cumsum())
        c = {"c1": np.ones(m, int), "c3": np.full(m, 3), "random": rng.integers(1, 5, m)}[caps]
        # a final server past every user so all users get matched
        s = np.append(s, max(s[-1], u[-1]) + 1.0)
        c = np.append(c, n)
        inst = SpatialInstance(u, s, c)
        assert mtr(inst).n_matched == n
        a, b = mtr(inst), ugs(inst)
        assert np.array_equal(a.matched, b.matched)
        pa, pb = load_profile(inst, a), load_profile(inst, b)
        assert pa == pb
        assert a.total_cost == pytest.approx(pb.integral())


def test_load_profile_shape():
    inst = SpatialInstance(np.array([0.0, 1.0, 5.0]), np.array([2.0, 3.0, 6.0]))
    p = load_profile(inst, mtr(inst))
    assert p.at(0.5) == 1 and p.at(1.5) == 2 and p.at(2.5) == 1 and p.at(4.0) == 0
    assert np.array_equal(p.busy_cycles, [[0.0, 3.0], [5.0, 6.0]])
    assert p.integral() == pytest.approx(mtr(inst).total_cost)
    assert list(p.cycle_of([0.1, 4.0, 5.5])) == [0, -1, 1]


def test_unmatched_users_when_capacity_runs_out():
    inst = SpatialInstance(np.array([0.0, 1.0, 9.0]), np.array([2.0]), np.array([1]))
    a = mtr(inst)
    assert a.n_matched == 1
    assert list(a.match) == [0, -1, -1]
    assert np.isnan(a.distances[2])


def test_gs_worst_case_ratio_increases():
    ratios = []
    for t in range(1, 8):
        inst = gs_worst_case(t)
        assert inst.n_users == 2 ** (t - 1)
        ratios.append(gale_shapley(inst).total_cost / optimal_dp(inst).total_cost)
    assert all(b > a for a, b in zip(ratios[1:], ratios[2:]))
    assert ratios[-1] > 10


def test_instance_csv_roundtrip(tmp_path):
    rng = np.random.default_rng(5)
    inst = random_instance(rng, 20, 15)
    path = tmp_path / "inst.csv"
    write_instance_csv(path, inst)
    back = read_instance_csv(path)
    assert np.array_equal(back.users, inst.users)
    assert np.array_equal(back.servers, inst.servers)
    assert np.array_equal(back.capacities, inst.capacities)


def test_read_instance_csv_errors(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("role,position\nuser,abc\n")
    with pytest.raises(ValueError, match="bad position"):
        read_instance_csv(p)
    p.write_text("role,position\ncar,1\n")
    with pytest.raises(ValueError, match="role"):
        read_instance_csv(p)


def test_assignment_csv():
    inst = SpatialInstance(np.array([0.0, 4.0]), np.array([1.0]))
    buf = io.StringIO()
    write_assignment_csv(buf, inst, mtr(inst))
    lines = buf.getvalue().strip().splitlines()
    assert lines[0] == "user_index,user_pos,server_index,server_pos,distance"
    assert lines[1] == "0,0.0,0,1.0,1.0"
    assert lines[2] == "1,4.0,,,"
