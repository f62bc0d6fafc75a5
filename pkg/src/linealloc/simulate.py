"""Monte Carlo experiments on random line instances.

Protocol per trial: draw users and servers from renewal processes, assign
users by MTR, keep the MTR-matched users and run every requested policy on
that user set against all servers. A prefix of warm-up users (whole busy
cycles) is simulated but not measured, so statistics reflect the steady
state rather than a system that starts empty. Trials use independent counter-based streams keyed
by ``(seed, trial, role)`` so results do not depend on execution order.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from . import analytic
from .distributions import (
    DistanceDistribution,
    Deterministic,
    Exponential,
    HyperExponential,
    Uniform,
    distribution_from_dict,
    h2_from_cv,
)
from .errors import InfeasibleInstanceError, NumericalError, RootMultiplicityError, UnstableModelError
from .policies import (
    SpatialInstance,
    gale_shapley,
    load_profile,
    mtr,
    optimal_cost_heap,
    optimal_dp,
    ugs,
)

__all__ = [
    "DEFAULT_SEED",
    "SimConfig",
    "PolicyStats",
    "TrialResult",
    "SimResult",
    "generate_instance",
    "run_trial",
    "run",
    "verify_theorem1",
    "Theorem1Report",
    "variance_comparison",
    "VarianceReport",
    "analytic_value",
    "with_axis",
    "sweep",
    "SWEEP_FIELDS",
    "write_sweep_csv",
    "figure_sweeps",
    "FIGURES",
]

DEFAULT_SEED = 20240917
ROLE_USERS, ROLE_SERVERS, ROLE_CAPACITY = 0, 1, 2
KNOWN_POLICIES = ("mtr", "ugs", "gs", "optimal")
DP_CELL_LIMIT = 30_000_000


def _stream(seed: int, trial: int, role: int) -> np.random.Generator:
    ss = np.random.SeedSequence(seed, spawn_key=(trial, role))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class SimConfig:
    n_users: int = 100_000
    inter_user: DistanceDistribution = Exponential(0.5)
    inter_server: DistanceDistribution = Exponential(1.0)
    capacity: int = 1
    capacity_pmf: tuple[float, ...] | None = None
    trials: int = 50
    seed: int = DEFAULT_SEED
    policies: tuple[str, ...] = ("mtr",)
    max_servers: int | None = None
    drop_last_cycle: bool = True
    warmup: int | None = None  # unmeasured leading users; None means n_users // 5

    def __post_init__(self):
        if self.n_users < 1 or self.trials < 1:
            raise ValueError("n_users and trials must be >= 1")
        if int(self.capacity) != self.capacity or self.capacity < 1:
            raise ValueError("capacity must be a positive integer")
        if self.capacity_pmf is not None:
            pmf = tuple(float(p) for p in self.capacity_pmf)
            if any(p < 0 for p in pmf) or abs(sum(pmf) - 1.0) > 1e-12 or pmf[-1] <= 0:
                raise ValueError("capacity pmf must be nonnegative, sum to 1 and end in a positive entry")
            object.__setattr__(self, "capacity_pmf", pmf)
        pols = tuple(p.lower() for p in self.policies)
        bad = [p for p in pols if p not in KNOWN_POLICIES]
        if bad:
            raise ValueError(f"unknown policies {bad}; choose from {KNOWN_POLICIES}")
        if "mtr" not in pols:
            pols = ("mtr",) + pols
        object.__setattr__(self, "policies", pols)

    @property
    def lam(self) -> float:
        return self.inter_user.rate

    @property
    def mu(self) -> float:
        return self.inter_server.rate

    @property
    def rho(self) -> float:
        return self.lam / self.mu

    @property
    def mean_capacity(self) -> float:
        if self.capacity_pmf is None:
            return float(self.capacity)
        return float(np.dot(np.arange(1, len(self.capacity_pmf) + 1), self.capacity_pmf))

    @property
    def warmup_users(self) -> int:
        return self.n_users // 5 if self.warmup is None else int(self.warmup)

    @property
    def total_users(self) -> int:
        return self.n_users + self.warmup_users

    @property
    def server_cap(self) -> int:
        if self.max_servers is not None:
            return int(self.max_servers)
        return int(4 * self.total_users * max(1.0, self.mu / self.lam)) + 1000

    def replace(self, **kw) -> "SimConfig":
        return dataclasses.replace(self, **kw)

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["inter_user"] = self.inter_user.to_dict()
        d["inter_server"] = self.inter_server.to_dict()
        d["policies"] = list(self.policies)
        if self.capacity_pmf is not None:
            d["capacity_pmf"] = list(self.capacity_pmf)
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "SimConfig":
        d = dict(d)
        for key in ("inter_user", "inter_server"):
            if key in d and isinstance(d[key], dict):
                d[key] = distribution_from_dict(d[key])
        if d.get("capacity_pmf") is not None:
            d["capacity_pmf"] = tuple(d["capacity_pmf"])
        if "policies" in d:
            d["policies"] = tuple(d["policies"])
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config fields {sorted(unknown)}")
        return cls(**d)


# ---------------------------------------------------------------------------
# instances


def _capacities(cfg: SimConfig, rng: np.random.Generator, n: int) -> np.ndarray:
    if cfg.capacity_pmf is None:
        return np.full(n, cfg.capacity, dtype=np.int64)
    return rng.choice(len(cfg.capacity_pmf), size=n, p=cfg.capacity_pmf) + 1


def generate_instance(cfg: SimConfig, trial: int) -> SpatialInstance:
    """Users from ``inter_user``; servers appended until MTR matches everyone or the cap is hit."""
    rng_u = _stream(cfg.seed, trial, ROLE_USERS)
    rng_s = _stream(cfg.seed, trial, ROLE_SERVERS)
    rng_c = _stream(cfg.seed, trial, ROLE_CAPACITY)
    n = cfg.total_users
    users = np.cumsum(cfg.inter_user.sample(rng_u, n))
    cap_limit = cfg.server_cap
    chunk = min(cap_limit, int(math.ceil(n / cfg.rho)) + 64)
    gaps = [cfg.inter_server.sample(rng_s, chunk)]
    caps = [_capacities(cfg, rng_c, chunk)]
    while True:
        servers = np.cumsum(np.concatenate(gaps))
        capacities = np.concatenate(caps)
        inst = SpatialInstance(users, servers, capacities)
        unmatched = n - mtr(inst).n_matched
        room = cap_limit - len(servers)
        if unmatched == 0 or room <= 0:
            return inst
        extra = min(room, max(64, int(2 * unmatched / cfg.mean_capacity) + 64, len(servers) // 4))
        gaps.append(cfg.inter_server.sample(rng_s, extra))
        caps.append(_capacities(cfg, rng_c, extra))


def _included_users(inst: SpatialInstance, a, drop_last_cycle: bool, warmup: int) -> np.ndarray:
    """Measured users: MTR-matched, in busy cycles that start after the warm-up prefix.

    The last busy cycle is dropped only when the server supply ran out. A
    user's MTR distance never depends on later users, so a last cycle that
    closes at a server is complete; dropping it anyway would favour short
    cycles (the cycle covering the horizon is length-biased).
    """
    include = a.matched.copy()
    if not include.any():
        return include
    prof = load_profile(inst, a)
    cyc = prof.cycle_of(inst.users)
    idx = np.arange(inst.n_users)
    if len(prof.busy_cycles):
        first = np.searchsorted(inst.users, prof.busy_cycles[:, 0], side="left")
        start = np.where(cyc >= 0, first[np.maximum(cyc, 0)], idx)
    else:
        start = idx
    include &= start >= warmup
    if drop_last_cycle and not a.matched.all():
        last = cyc[np.nonzero(a.matched)[0][-1]]
        if last >= 0:
            include &= cyc != last
    return include


# ---------------------------------------------------------------------------
# trials


@dataclass(frozen=True)
class PolicyStats:
    mean: float
    variance: float  # nan when only the total cost is known
    total: float
    n: int


@dataclass(frozen=True)
class TrialResult:
    trial: int
    n_users: int
    n_matched: int
    n_included: int
    n_servers: int
    stats: dict[str, PolicyStats]

    @property
    def matched_fraction(self) -> float:
        return self.n_matched / self.n_users


def _stats(d: np.ndarray) -> PolicyStats:
    n = len(d)
    if n == 0:
        return PolicyStats(math.nan, math.nan, 0.0, 0)
    return PolicyStats(float(np.mean(d)), float(np.var(d, ddof=1)) if n > 1 else 0.0, float(np.sum(d)), n)


def _optimal_stats(sub: SpatialInstance) -> PolicyStats:
    slots = sub.total_capacity
    cells = sub.n_users * (slots - sub.n_users + 1)
    if cells <= DP_CELL_LIMIT:
        return _stats(optimal_dp(sub).distances)
    total = optimal_cost_heap(sub)
    n = sub.n_users
    return PolicyStats(total / n if n else math.nan, math.nan, total, n)


def run_trial(cfg: SimConfig, trial: int) -> TrialResult:
    """One instance; UGS runs on all MTR-matched users, GS and optimal on the measured ones."""
    inst = generate_instance(cfg, trial)
    a = mtr(inst)
    w = cfg.warmup_users
    include = _included_users(inst, a, cfg.drop_last_cycle, w)
    stats = {"mtr": _stats(a.distances[include])}
    if "ugs" in cfg.policies:
        m = a.matched
        b = ugs(SpatialInstance(inst.users[m], inst.servers, inst.capacities))
        stats["ugs"] = _stats(b.distances[include[m]])
    if "gs" in cfg.policies or "optimal" in cfg.policies:
        sub = SpatialInstance(inst.users[include], inst.servers, inst.capacities)
        if "gs" in cfg.policies:
            stats["gs"] = _stats(gale_shapley(sub).distances)
        if "optimal" in cfg.policies:
            stats["optimal"] = _optimal_stats(sub)
    n_matched = int(np.count_nonzero(a.matched[w:]))
    return TrialResult(trial, cfg.n_users, n_matched, int(include.sum()), inst.n_servers, stats)


def _run_trial_args(args):
    return run_trial(*args)


@dataclass(frozen=True)
class SimResult:
    config: SimConfig
    trials: tuple[TrialResult, ...]
    warning: str | None = None

    def trial_means(self, policy: str) -> np.ndarray:
        return np.array([t.stats[policy].mean for t in self.trials])

    def mean(self, policy: str = "mtr") -> float:
        return float(np.mean(self.trial_means(policy)))

    def stderr(self, policy: str = "mtr") -> float:
        m = self.trial_means(policy)
        return float(np.std(m, ddof=1) / math.sqrt(len(m))) if len(m) > 1 else math.nan

    def variance(self, policy: str = "mtr") -> float:
        """Mean within-trial variance of request distances."""
        return float(np.mean([t.stats[policy].variance for t in self.trials]))

    @property
    def matched_fraction(self) -> float:
        return float(np.mean([t.matched_fraction for t in self.trials]))

    def summary(self) -> dict[str, dict[str, float]]:
        return {
            p: {
                "mean_distance": self.mean(p),
                "stderr": self.stderr(p),
                "variance": self.variance(p),
                "matched_fraction": self.matched_fraction,
            }
            for p in self.config.policies
        }


def run(cfg: SimConfig, jobs: int = 1) -> SimResult:
    """All trials of ``cfg``; ``jobs > 1`` runs trials in worker processes."""
    args = [(cfg, t) for t in range(cfg.trials)]
    if jobs > 1 and cfg.trials > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            trials = tuple(ex.map(_run_trial_args, args))
    else:
        trials = tuple(run_trial(*a) for a in args)
    res = SimResult(cfg, trials)
    if res.matched_fraction < 0.5:
        msg = f"matched fraction {res.matched_fraction:.3f} < 0.5; configuration looks unstable"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        res = dataclasses.replace(res, warning=msg)
    return res


# ---------------------------------------------------------------------------
# structural checks


@dataclass(frozen=True)
class Theorem1Report:
    checked: int
    mismatches: list[str]
    cycle_cost_max_diff: float

    @property
    def passed(self) -> bool:
        return not self.mismatches


def _instance_text(inst: SpatialInstance) -> str:
    return json.dumps(
        {"users": inst.users.tolist(), "servers": inst.servers.tolist(), "capacities": inst.capacities.tolist()}
    )


def verify_theorem1(cfg: SimConfig, instances: int) -> Theorem1Report:
    """Exact equality of MTR and UGS load profiles on random instances.

    Also checks that each busy cycle carries the same total distance under
    both policies.
    """
    mismatches = []
    worst = 0.0
    for t in range(instances):
        inst = generate_instance(cfg, t)
        a, b = mtr(inst), ugs(inst)
        pa, pb = load_profile(inst, a), load_profile(inst, b)
        if pa != pb:
            mismatches.append(_instance_text(inst))
            continue
        cyc = pa.cycle_of(inst.users)
        ok = a.matched & (cyc >= 0)
        if ok.any():
            n_cyc = len(pa.busy_cycles)
            ca = np.bincount(cyc[ok], weights=a.distances[ok], minlength=n_cyc)
            cb = np.bincount(cyc[ok], weights=b.distances[ok], minlength=n_cyc)
            worst = max(worst, float(np.max(np.abs(ca - cb))))
    return Theorem1Report(instances, mismatches, worst)


@dataclass(frozen=True)
class VarianceReport:
    var_mtr: np.ndarray
    var_ugs: np.ndarray

    @property
    def fraction_mtr_not_larger(self) -> float:
        return float(np.mean(self.var_mtr <= self.var_ugs))


def instance_variances(inst: SpatialInstance) -> tuple[float, float]:
    """Population variance of request distances under MTR and UGS."""
    a, b = mtr(inst), ugs(inst)
    return float(np.nanvar(a.distances)), float(np.nanvar(b.distances))


def variance_comparison(cfg: SimConfig) -> VarianceReport:
    """Per-trial variance of MTR vs UGS distances on identical instances."""
    vm, vu = [], []
    for t in range(cfg.trials):
        inst = generate_instance(cfg, t)
        a = mtr(inst)
        include = _included_users(inst, a, cfg.drop_last_cycle, cfg.warmup_users)
        m = a.matched
        b = ugs(SpatialInstance(inst.users[m], inst.servers, inst.capacities))
        vm.append(np.var(a.distances[include]))
        vu.append(np.var(b.distances[include[m]]))
    return VarianceReport(np.array(vm), np.array(vu))


# ---------------------------------------------------------------------------
# analytic counterparts and sweeps


def _rescale(d: DistanceDistribution, mean: float) -> DistanceDistribution:
    if isinstance(d, Exponential):
        return Exponential(1.0 / mean)
    if isinstance(d, Deterministic):
        return Deterministic(mean)
    if isinstance(d, Uniform):
        return Uniform(2.0 * mean)
    if isinstance(d, HyperExponential):
        f = mean / d.mean()
        return HyperExponential(d.probs, tuple(r / f for r in d.rates))
    raise TypeError(f"cannot rescale {d!r}")


def analytic_value(cfg: SimConfig, kind: str = "auto") -> float:
    """Model prediction of the unidirectional mean distance for ``cfg`` (nan if none applies)."""
    uy, sx = cfg.inter_user, cfg.inter_server
    try:
        if kind == "heavy":
            return analytic.heavy_traffic_estimate(uy, sx)
        if kind != "auto":
            raise ValueError(f"unknown analytic kind {kind!r}")
        poisson_users = isinstance(uy, Exponential)
        poisson_servers = isinstance(sx, Exponential)
        if cfg.capacity_pmf is not None:
            if poisson_users:
                return analytic.hetcap_expected_distance(analytic.HetCapModel(cfg.lam, sx, cfg.capacity_pmf))
            return math.nan
        c = cfg.capacity
        if poisson_users and poisson_servers:
            return analytic.bulk_mm1_expected_distance(analytic.BulkMM1Model(cfg.lam, cfg.mu, c))
        if poisson_users:
            return analytic.prgs_expected_distance(analytic.PrgsModel(cfg.lam, sx, c))
        if poisson_servers:
            return analytic.grps_expected_distance(analytic.GrpsModel(uy, cfg.mu, c))
        if c == 1:
            return analytic.heavy_traffic_estimate(uy, sx)
    except (UnstableModelError, NumericalError, RootMultiplicityError):
        return math.nan
    return math.nan


def with_axis(cfg: SimConfig, axis: str, value: float) -> SimConfig:
    """Move ``cfg`` along a sweep axis.

    ``load`` sets ``lam / (c_bar mu)``; ``rho`` sets ``lam / mu``; ``capacity``
    sets a fixed ``c``; ``cv2_server`` / ``cv2_user`` swap in an H2 law with the
    same mean (exponential when the value is 1); ``n_users`` resizes.
    """
    if axis == "rho":
        return cfg.replace(inter_user=_rescale(cfg.inter_user, 1.0 / (value * cfg.mu)))
    if axis == "load":
        lam = value * cfg.mean_capacity * cfg.mu
        return cfg.replace(inter_user=_rescale(cfg.inter_user, 1.0 / lam))
    if axis == "capacity":
        return cfg.replace(capacity=int(value), capacity_pmf=None)
    if axis in ("cv2_server", "cv2_user"):
        side = "inter_server" if axis == "cv2_server" else "inter_user"
        mean = getattr(cfg, side).mean()
        law = Exponential(1.0 / mean) if value == 1 else h2_from_cv(value, mean)
        return cfg.replace(**{side: law})
    if axis == "n_users":
        return cfg.replace(n_users=int(value))
    raise ValueError(f"unknown sweep axis {axis!r}")


SWEEP_FIELDS = [
    "axis_value",
    "policy",
    "mean_distance",
    "stderr",
    "variance",
    "matched_fraction",
    "analytic_value",
    "ratio",
]


def sweep(
    template: SimConfig,
    axis: str,
    values: Sequence[float],
    analytic_kind: str | None = "auto",
    jobs: int = 1,
    configure: Callable[[SimConfig, float], SimConfig] | None = None,
    progress: Callable[[str], None] | None = None,
) -> list[dict[str, Any]]:
    """One row per (value, policy). Failing points are recorded and skipped.

    ``ratio`` is ``analytic_value / mean_distance`` on unidirectional rows.
    """
    rows = []
    for v in values:
        try:
            cfg = configure(template, v) if configure else with_axis(template, axis, v)
            res = run(cfg, jobs=jobs)
        except (ValueError, InfeasibleInstanceError, ArithmeticError) as exc:
            rows.append({"axis_value": v, "policy": "error", "mean_distance": math.nan, "error": str(exc)})
            continue
        av = analytic_value(cfg, analytic_kind) if analytic_kind else math.nan
        for p in cfg.policies:
            m = res.mean(p)
            a = av if p in ("mtr", "ugs") else math.nan
            rows.append(
                {
                    "axis_value": v,
                    "policy": p,
                    "mean_distance": m,
                    "stderr": res.stderr(p),
                    "variance": res.variance(p),
                    "matched_fraction": res.matched_fraction,
                    "analytic_value": a,
                    "ratio": a / m if m > 0 else math.nan,
                }
            )
        if progress:
            progress(f"{axis}={v}: mtr={res.mean('mtr'):.6g}")
    return rows


def _fmt(v) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def write_sweep_csv(fh, rows: Iterable[dict[str, Any]], header: dict[str, Any] | None = None) -> None:
    """Sweep rows as CSV; ``header`` items become leading ``# key: value`` comment lines."""
    if header:
        for k, v in header.items():
            fh.write(f"# {k}: {v}\n")
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(SWEEP_FIELDS)
    for r in rows:
        if r.get("policy") == "error":
            fh.write(f"# error at {r['axis_value']}: {r.get('error', '')}\n")
            continue
        w.writerow([_fmt(r.get(k, math.nan)) for k in SWEEP_FIELDS])


def sweep_csv_text(rows, header=None) -> str:
    buf = io.StringIO()
    write_sweep_csv(buf, rows, header)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# figure presets


@dataclass(frozen=True)
class SweepSpec:
    name: str
    template: SimConfig
    axis: str
    values: tuple[float, ...]
    analytic_kind: str | None = "auto"
    configure: Callable[[SimConfig, float], SimConfig] | None = field(default=None, compare=False)


def _h2(cv2=4.0, mean=1.0):
    return h2_from_cv(cv2, mean)


def _hetcap_configure(c_bar_of: Callable[[int], tuple[float, ...] | None]):
    def configure(cfg: SimConfig, c: float) -> SimConfig:
        c = int(c)
        pmf = c_bar_of(c)
        new = cfg.replace(capacity=c, capacity_pmf=pmf)
        return with_axis(new, "load", 0.8)

    return configure


def _uniform_pmf(c: int) -> tuple[float, ...]:
    return tuple([1.0 / (2 * c)] * (2 * c))


def figure_sweeps(fig: int, scale: float = 1.0, seed: int = DEFAULT_SEED, part: str | None = None,
                  trials: int | None = None) -> list[SweepSpec]:
    """Sweep definitions reproducing one figure. ``scale`` shrinks the user count."""
    n = max(200, int(round(100_000 * scale)))
    base = SimConfig(n_users=n, trials=trials or 50, seed=seed)
    exp1, det1 = Exponential(1.0), Deterministic(1.0)
    specs: list[SweepSpec] = []
    if fig == 3:
        loads = (0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.98)
        for name, law in (("det", det1), ("unif", Uniform(2.0))):
            specs.append(SweepSpec(f"fig3_{name}", base.replace(inter_server=law), "rho", loads, "heavy"))
    elif fig == 5:
        loads = tuple(round(0.1 * k, 1) for k in range(1, 10))
        for name, law in (("det", det1), ("exp", exp1), ("h2", _h2())):
            specs.append(SweepSpec(f"fig5_{name}", base.replace(inter_server=law, capacity=2), "load", loads))
    elif fig == 6:
        cvs = (1.0, 2.0, 4.0, 6.0, 8.0, 10.0)
        t = base.replace(inter_user=Exponential(1.0), inter_server=exp1, capacity=2)
        specs.append(SweepSpec("fig6_M_H2", t, "cv2_server", cvs))
        specs.append(SweepSpec("fig6_H2_M", t, "cv2_user", cvs))
    elif fig == 7:
        caps = tuple(float(c) for c in range(1, 17))
        for name, law in (("det", det1), ("exp", exp1), ("h2", _h2())):
            cfg = base.replace(inter_server=law)
            specs.append(
                SweepSpec(f"fig7_{name}", cfg, "capacity", caps,
                          configure=lambda cf, c: with_axis(with_axis(cf, "capacity", c), "load", 0.8))
            )
    elif fig == 8:
        caps = (1.0, 2.0, 3.0, 4.0, 6.0, 8.0)
        for name, law in (("h2", _h2()), ("det", det1)):
            if part and part != {"h2": "a", "det": "b"}[name]:
                continue
            cfg = base.replace(inter_server=law)
            specs.append(SweepSpec(f"fig8_{name}_variable", cfg, "capacity", caps,
                                   configure=_hetcap_configure(_uniform_pmf)))
            specs.append(SweepSpec(f"fig8_{name}_constant", cfg, "capacity", caps,
                                   configure=_hetcap_configure(lambda c: None)))
    elif fig == 9:
        pols = ("mtr", "ugs", "gs", "optimal")
        if part in (None, "a"):
            loads = tuple(round(0.1 * k, 1) for k in range(1, 10))
            specs.append(SweepSpec("fig9a", base.replace(policies=pols), "rho", loads))
        if part in (None, "b"):
            caps = (1.0, 2.0, 3.0, 4.0, 6.0, 8.0)
            specs.append(
                SweepSpec("fig9b", base.replace(policies=pols), "capacity", caps,
                          configure=lambda cf, c: with_axis(with_axis(cf, "capacity", c), "load", 0.4))
            )
    else:
        raise ValueError(f"unknown figure {fig}; choose from {sorted(FIGURES)}")
    return specs


FIGURES = {3, 5, 6, 7, 8, 9}
