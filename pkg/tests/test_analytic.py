import io
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from linealloc import analytic
from linealloc.analytic import (
    BulkMM1Model,
    GrpsModel,
    HetCapModel,
    PrgsModel,
    bulk_mm1_expected_distance,
    bulk_mm1_root,
    grps_expected_distance,
    grps_solve,
    heavy_traffic_estimate,
    hetcap_expected_distance,
    hetcap_solve,
    prgs_expected_distance,
    prgs_solve,
    ugs_distance_cdf,
    ugs_distance_density,
    uncapacitated_expected_distance,
)
from linealloc.distributions import Deterministic, Exponential, Uniform, h2_from_cv
from linealloc.errors import UnstableModelError

BASES = [Exponential(1.0), Deterministic(1.0), Uniform(2.0), h2_from_cv(4.0, 1.0)]


def pk_mean_queue(lam, dist):
    rho = lam * dist.mean()
    return rho + lam**2 * dist.second_moment() / (2 * (1 - rho))


def test_bulk_c1_is_mm1():
    assert bulk_mm1_expected_distance(BulkMM1Model(0.5, 1.0, 1)) == pytest.approx(2.0, rel=1e-12)


def test_bulk_c2_cubic_root():
    m = BulkMM1Model(0.5, 1.0, 2)
    # mu r^3 - (lam + mu) r + lam = (r - 1)(r^2 + r - 1/2)
    assert bulk_mm1_root(m) == pytest.approx((math.sqrt(3) - 1) / 2, abs=1e-14)
    assert bulk_mm1_expected_distance(m) == pytest.approx(1.1547005383792515, abs=1e-12)


def test_bulk_unstable():
    with pytest.raises(UnstableModelError):
        bulk_mm1_expected_distance(BulkMM1Model(2.0, 1.0, 2))


@pytest.mark.parametrize("lam", [0.3, 0.5, 0.8])
@pytest.mark.parametrize("c", [1, 2, 4])
def test_reduction_to_bulk(lam, c):
    ref = bulk_mm1_expected_distance(BulkMM1Model(lam, 1.0, c))
    assert grps_expected_distance(GrpsModel(Exponential(lam), 1.0, c)) == pytest.approx(ref, abs=1e-10)
    assert prgs_expected_distance(PrgsModel(lam, Exponential(1.0), c)) == pytest.approx(ref, abs=1e-10)
    assert hetcap_expected_distance(HetCapModel.fixed(lam, Exponential(1.0), c)) == pytest.approx(ref, abs=1e-10)


@pytest.mark.parametrize("base", BASES, ids=repr)
@pytest.mark.parametrize("c", [1, 2, 3, 6])
def test_prgs_and_hetcap_agree(base, c):
    lam = 0.7 * c * base.rate
    a = prgs_expected_distance(PrgsModel(lam, base, c))
    b = hetcap_expected_distance(HetCapModel.fixed(lam, base, c))
    assert a == pytest.approx(b, rel=1e-9)


@pytest.mark.parametrize("base", BASES, ids=repr)
def test_prgs_pollaczek_khinchine(base):
    lam = 0.6
    sol = prgs_solve(PrgsModel(lam, base, 1, first_service=base))
    rho = lam * base.mean()
    assert sol.a[0] / lam == pytest.approx(1 - rho, abs=1e-12)
    assert sol.mean_queue() == pytest.approx(pk_mean_queue(lam, base), rel=1e-10)


@pytest.mark.parametrize("base", BASES[1:], ids=repr)
def test_prgs_exceptional_empty_probability(base):
    lam = 0.6
    m = PrgsModel(lam, base, 1)
    sol = prgs_solve(m)
    rho, rz = lam * base.mean(), lam * m.fz().mean()
    assert sol.a[0] / lam == pytest.approx((1 - rho) / (1 - rho + rz), abs=1e-12)


def test_prgs_mm1_closed_form():
    assert prgs_expected_distance(PrgsModel(0.4, Exponential(1.0), 1)) == pytest.approx(1 / 0.6, rel=1e-12)


@pytest.mark.parametrize("base", BASES, ids=repr)
def test_prgs_pgf_coefficients(base):
    sol = prgs_solve(PrgsModel(1.4, base, 2))
    n = 3000
    coef = sol.taylor_coefficients(n, points=4 * n)
    assert np.all(coef > -1e-9)
    assert coef.sum() == pytest.approx(1.0, abs=1e-8)
    assert np.dot(np.arange(n), coef) == pytest.approx(sol.mean_queue(), rel=1e-6)


@pytest.mark.parametrize("base", BASES, ids=repr)
def test_hetcap_stationary_pmf(base):
    sol = hetcap_solve(HetCapModel(2.0 * base.rate, base, (0.25, 0.25, 0.25, 0.25)))
    n = 3000
    pmf = sol.stationary_pmf(n, points=4 * n)
    assert np.all(pmf > -1e-9)
    assert pmf.sum() == pytest.approx(1.0, abs=1e-8)
    assert np.dot(np.arange(n), pmf) == pytest.approx(sol.hbar, rel=1e-6)
    # boundary probabilities from substitution agree with the transform
    assert np.allclose(sol.pi, pmf[: len(sol.pi)], atol=1e-9)


def test_hetcap_unstable_against_mean_capacity():
    with pytest.raises(UnstableModelError):
        hetcap_expected_distance(HetCapModel(2.6, Exponential(1.0), (0.5, 0.5)))
    hetcap_expected_distance(HetCapModel(1.4, Exponential(1.0), (0.5, 0.5)))


@given(st.floats(0.05, 0.95), st.integers(1, 6))
@settings(max_examples=40, deadline=None)
def test_grps_closed_form(load, c):
    lam = load * c
    res = grps_solve(GrpsModel(Deterministic(1 / lam), 1.0, c))
    r0 = res.details["r0"]
    assert res.expected_distance == pytest.approx(1 / (1 - r0**c), rel=1e-12)
    assert r0 == pytest.approx(math.exp(-(1 - r0**c) / lam), abs=1e-12)


def test_grps_printed_constant_is_diagnostic():
    res = grps_solve(GrpsModel(Deterministic(2.0), 1.0, 64))
    assert "C_printed" in res.details
    assert math.isfinite(res.expected_distance)


def test_ugs_density_moments():
    lam, mu = 0.5, 1.0
    from scipy import integrate

    f = lambda x: ugs_distance_density(lam, mu, x)  # noqa: E731
    total = integrate.quad(f, 0, np.inf, limit=400, epsabs=1e-13)[0]
    mean = integrate.quad(lambda x: x * f(x), 0, np.inf, limit=400, epsabs=1e-13)[0]
    assert total == pytest.approx(1.0, abs=1e-9)
    assert mean == pytest.approx(1 / (mu - lam), abs=1e-8)
    assert ugs_distance_density(lam, mu, 0.0) == mu
    cdf = ugs_distance_cdf(lam, mu, np.array([0.0, 1.0, 50.0, 1000.0]))
    assert cdf[0] == 0 and 0 < cdf[1] < cdf[2] <= 1
    assert cdf[3] == pytest.approx(1.0, abs=1e-9)


def test_ugs_cdf_matches_adaptive_quadrature():
    from scipy import integrate

    xs = np.array([3.0, 0.2, -1.0, 40.0, 1.0])
    got = ugs_distance_cdf(1, 2, xs)  # integer rates on purpose
    f = lambda t: ugs_distance_density(1.0, 2.0, t)  # noqa: E731
    ref = [integrate.quad(f, 0, x, epsabs=1e-14, limit=400)[0] if x > 0 else 0.0 for x in xs]
    assert np.allclose(got, ref, atol=1e-13)


@pytest.mark.parametrize("base", BASES, ids=repr)
def test_uncapacitated_limits(base):
    lam, c = 0.5, 64
    prgs_lim = uncapacitated_expected_distance("prgs", base)
    assert prgs_lim == pytest.approx(base.second_moment() / (2 * base.mean()))
    assert prgs_expected_distance(PrgsModel(lam * base.rate, base, c)) == pytest.approx(prgs_lim, rel=1e-6)
    user = Exponential(lam) if isinstance(base, Exponential) else base.__class__(**_scaled(base, lam))
    assert grps_expected_distance(GrpsModel(user, 1.0, c)) == pytest.approx(1.0, rel=1e-6)


def _scaled(base, rate):
    # same family with the given rate
    if isinstance(base, Deterministic):
        return {"d0": 1 / rate}
    if isinstance(base, Uniform):
        return {"b": 2 / rate}
    h = h2_from_cv(base.scv(), 1 / rate)
    return {"probs": h.probs, "rates": h.rates}


def test_uncapacitated_bad_side():
    with pytest.raises(ValueError):
        uncapacitated_expected_distance("left", Exponential(1.0))


def test_heavy_traffic_mm1_limit():
    # for M/M/1 the estimate approaches 1/(mu - lam) as rho -> 1
    est = heavy_traffic_estimate(Exponential(0.999), Exponential(1.0))
    assert est * (1 - 0.999) == pytest.approx(1.0, rel=2e-3)


def test_result_serialization():
    res = prgs_solve(PrgsModel(0.8, Deterministic(1.0), 2)).result()
    d = json.loads(res.to_json())
    assert d["model"] == "prgs"
    assert d["expected_distance"] == pytest.approx(res.expected_distance)
    buf = io.StringIO()
    analytic.write_results_csv(buf, [res])
    header, row = buf.getvalue().strip().splitlines()
    assert header == ",".join(analytic.CSV_FIELDS)
    assert row.startswith("prgs,")
