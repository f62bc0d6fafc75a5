"""Expected request distance from the queueing analogues of the line model.

Distance along the line plays the role of time: users are customers,
servers are batch-service epochs. Every model reduces to one scalar
``E[D]`` plus solver internals kept for diagnostics.

Models
------
* :class:`BulkMM1Model` -- Poisson users and Poisson servers, capacity ``c``.
* :class:`GrpsModel` -- renewal users, Poisson servers.
* :class:`PrgsModel` -- Poisson users, renewal servers; the first batch of
  a busy period has the exceptional law ``F_Z``.
* :class:`HetCapModel` -- Poisson users, renewal servers with i.i.d. random
  capacities, analysed at server positions.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Any, Iterable

import numpy as np
from numpy.polynomial import Polynomial

from .distributions import (
    DistanceDistribution,
    ExceptionalDistribution,
    Exponential,
    exceptional,
)
from .errors import NumericalError, RootMultiplicityError, UnstableModelError
from .numerics import (
    UnitDiskRoots,
    bessel_i1_scaled,
    root_in_unit_interval,
    solve_small_linear,
    unit_disk_roots,
)

__all__ = [
    "AnalyticResult",
    "BulkMM1Model",
    "GrpsModel",
    "PrgsModel",
    "PrgsSolution",
    "HetCapModel",
    "HetCapSolution",
    "bulk_mm1_root",
    "bulk_mm1_expected_distance",
    "ugs_distance_density",
    "ugs_distance_cdf",
    "grps_solve",
    "grps_expected_distance",
    "prgs_solve",
    "prgs_expected_distance",
    "prgs_queue_pgf",
    "hetcap_solve",
    "hetcap_expected_distance",
    "heavy_traffic_estimate",
    "uncapacitated_expected_distance",
    "write_results_csv",
]

STABILITY_MARGIN = 1e-9
IMAG_TOL = 1e-8


def _check_stable(rho: float, cap: float) -> None:
    if not rho < cap - STABILITY_MARGIN:
        raise UnstableModelError(f"load {rho:.6g} is not below capacity {cap:.6g}")


def _check_c(c) -> int:
    if int(c) != c or c < 1:
        raise ValueError(f"capacity must be a positive integer, got {c}")
    return int(c)


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (complex, np.complexfloating)):
        return [float(x.real), float(x.imag)]
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, DistanceDistribution):
        return x.to_dict()
    return x


@dataclass(frozen=True)
class AnalyticResult:
    """Solved model: ``E[D]`` and the internals that produced it."""

    model: str
    params: dict[str, Any]
    expected_distance: float
    details: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return _jsonable(
            {
                "model": self.model,
                "params": self.params,
                "expected_distance": self.expected_distance,
                "details": self.details,
            }
        )

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    def summary(self) -> str:
        d = self.details
        if "r0" in d:
            return f"r0={d['r0']:.12g}"
        if "roots" in d:
            roots = np.asarray(d["roots"])
            return f"roots={len(roots)} min|xi|={np.min(np.abs(roots)):.6g}"
        return ""

    def csv_row(self) -> dict[str, Any]:
        params = ";".join(f"{k}={_param_text(v)}" for k, v in self.params.items())
        return {
            "model": self.model,
            "params": params,
            "summary": self.summary(),
            "expected_distance": repr(self.expected_distance),
        }


def _param_text(v) -> str:
    if isinstance(v, DistanceDistribution):
        return repr(v)
    return str(v)


CSV_FIELDS = ["model", "params", "summary", "expected_distance"]


def write_results_csv(fh, results: Iterable[AnalyticResult]) -> None:
    w = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
    w.writeheader()
    for r in results:
        w.writerow(r.csv_row())


# ---------------------------------------------------------------------------
# bulk-service M/M/1


@dataclass(frozen=True)
class BulkMM1Model:
    lam: float
    mu: float
    c: int = 1

    def __post_init__(self):
        if not (self.lam > 0 and self.mu > 0):
            raise ValueError("rates must be positive")
        object.__setattr__(self, "c", _check_c(self.c))

    @property
    def rho(self) -> float:
        return self.lam / self.mu


def bulk_mm1_root(m: BulkMM1Model) -> float:
    """Root in (0, 1) of ``mu r**(c+1) - (lam + mu) r + lam``."""
    _check_stable(m.rho, m.c)
    lam, mu, c = m.lam, m.mu, m.c
    return root_in_unit_interval(
        lambda r: mu * r ** (c + 1) - (lam + mu) * r + lam,
        lambda r: mu * (c + 1) * r**c - (lam + mu),
    )


def bulk_mm1_solve(m: BulkMM1Model) -> AnalyticResult:
    r0 = bulk_mm1_root(m)
    ed = r0 / (m.lam * (1.0 - r0))
    return AnalyticResult("bulk", {"lam": m.lam, "mu": m.mu, "c": m.c}, ed, {"r0": r0, "rho": m.rho})


def bulk_mm1_expected_distance(m: BulkMM1Model) -> float:
    """``E[D] = r0 / (lam (1 - r0))``."""
    return bulk_mm1_solve(m).expected_distance


def ugs_distance_density(lam: float, mu: float, x):
    """Density of the UGS request distance for Poisson users and servers, ``c = 1``.

    ``f(x) = exp(-(lam + mu) x) I1(2 x sqrt(lam mu)) / (x sqrt(rho))``, the
    M/M/1 busy-period law; ``f(0+) = mu``.
    """
    rho = lam / mu
    _check_stable(rho, 1.0)
    x = np.asarray(x, dtype=float)
    xs = np.atleast_1d(x)
    out = np.full(xs.shape, float(mu))
    pos = xs > 0
    xp = xs[pos]
    out[pos] = bessel_i1_scaled(2.0 * xp * math.sqrt(lam * mu), (lam + mu) * xp) / (xp * math.sqrt(rho))
    out[xs < 0] = 0.0
    return float(out[0]) if x.ndim == 0 else out


def ugs_distance_cdf(lam: float, mu: float, x, max_step: float = 0.25):
    """CDF of :func:`ugs_distance_density`.

    The density is smooth, so each gap between sorted evaluation points is
    split into pieces no wider than ``max_step`` and integrated by 16-point
    Gauss-Legendre; the pieces are summed cumulatively.
    """
    _check_stable(lam / mu, 1.0)
    x = np.asarray(x, dtype=float)
    xs = np.atleast_1d(x)
    pts = np.unique(np.concatenate([[0.0], xs[xs > 0]]))
    gaps = np.diff(pts)
    pieces = np.maximum(1, np.ceil(gaps / max_step).astype(np.int64))
    first = np.cumsum(pieces) - pieces
    width = np.repeat(gaps / pieces, pieces)
    lo = np.repeat(pts[:-1], pieces) + (np.arange(pieces.sum()) - np.repeat(first, pieces)) * width
    nodes, weights = np.polynomial.legendre.leggauss(16)
    piece_mass = np.empty(len(lo))
    for start in range(0, len(lo), 4096):
        a, w = lo[start : start + 4096, None], width[start : start + 4096, None]
        t = a + 0.5 * w * (nodes + 1.0)
        f = ugs_distance_density(lam, mu, t.ravel()).reshape(t.shape)
        piece_mass[start : start + 4096] = 0.5 * w[:, 0] * (f @ weights)
    cum = np.concatenate([[0.0], np.add.reduceat(piece_mass, first) if len(lo) else []])
    F = np.minimum(np.cumsum(cum), 1.0)
    out = np.where(xs > 0, F[np.searchsorted(pts, np.maximum(xs, 0.0))], 0.0)
    return float(out[0]) if x.ndim == 0 else out


# ---------------------------------------------------------------------------
# GRPS: renewal users, Poisson servers


@dataclass(frozen=True)
class GrpsModel:
    inter_user: DistanceDistribution
    mu: float
    c: int = 1

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError("server rate must be positive")
        object.__setattr__(self, "c", _check_c(self.c))

    @property
    def lam(self) -> float:
        return self.inter_user.rate

    @property
    def rho(self) -> float:
        return self.lam / self.mu


def grps_solve(m: GrpsModel) -> AnalyticResult:
    """Queue-length law ``P_{n,1} = K r0**(n-1)`` and ``E[D] = E[N_q]/lam + 1/mu``.

    ``r0`` solves ``r = F_Y*(mu - mu r**c)``. The normalising constant is
    ``C = lam r0**c (1 - r0)``, which makes ``E[N_q] = lam r0**c / (mu (1 - r0**c))``
    and hence ``E[D] = 1 / (mu (1 - r0**c))``.
    """
    _check_stable(m.rho, m.c)
    fy, mu, c, lam = m.inter_user, m.mu, m.c, m.lam

    def f(r):
        return r - float(np.real(fy.lst(mu - mu * r**c)))

    def fp(r):
        return 1.0 + float(np.real(fy.lst_derivative(mu - mu * r**c))) * mu * c * r ** (c - 1)

    r0 = root_in_unit_interval(f, fp)
    rc = r0**c
    C = lam * rc * (1.0 - r0)
    nq = C / (mu * (1.0 - rc) * (1.0 - r0))
    ed = nq / lam + 1.0 / mu
    fy_mu = float(np.real(fy.lst(mu)))
    omega = 1.0 / fy_mu
    p01 = C / mu * ((r0 ** (c - 1) - rc) / (1.0 - rc) + 1.0 / r0 - 1.0)
    details = {
        "r0": r0,
        "omega": omega,
        "C": C,
        "C_printed": _grps_printed_constant(lam, r0, omega, fy_mu, c),
        "P01": p01,
        "ENq": nq,
        "rho": m.rho,
    }
    return AnalyticResult("grps", {"inter_user": fy, "mu": mu, "c": c}, ed, details)


def _grps_printed_constant(lam, r0, omega, fy_mu, c) -> float:
    """The constant as printed in the source formula; diagnostics only (nan where singular)."""
    if r0**c == 0.0 or r0 * omega == 1.0:
        return math.nan
    geo_w = c if abs(1.0 - omega) < 1e-14 else (1.0 - omega**c) / (1.0 - omega)
    bracket = (
        geo_w
        + 1.0 / (1.0 - r0)
        - omega * (r0 - fy_mu) / (r0**c * (1.0 - r0 * omega))
        * ((1.0 - r0**c) / (1.0 - r0) - r0 ** (c - 1) * geo_w)
    )
    return lam / bracket


def grps_expected_distance(m: GrpsModel) -> float:
    return grps_solve(m).expected_distance


# ---------------------------------------------------------------------------
# disk roots shared by PRGS and HetCap


def _characteristic_roots(dist: DistanceDistribution, lam: float, c: int, qcoef=None) -> UnitDiskRoots:
    """Roots in ``|z| <= 1`` of ``z**c - K(z) Q(z)`` with ``K(z) = F*(lam (1 - z))``.

    ``qcoef`` holds the ascending coefficients of the polynomial pgf ``Q``
    (``Q = 1`` when omitted).
    """
    q = Polynomial([1.0]) if qcoef is None else Polynomial(qcoef)

    def A(z):
        return complex(dist.lst(lam * (1.0 - z))) * complex(q(z))

    poly = None
    rat = dist.rational_lst()
    if rat is not None:
        num, den = rat
        theta = Polynomial([lam, -lam])
        poly = Polynomial.basis(c) * den(theta) - num(theta) * q

    def series(n):
        return np.convolve(dist.poisson_mixture_pmf(lam, n), q.coef)[:n]

    def log_A(z):
        out = complex(dist.log_lst(lam * (1.0 - z)))
        return out if qcoef is None else out + np.log(complex(q(z)))

    roots = unit_disk_roots(A, c, polynomial=poly, series=series, log_A=log_A)
    if roots.multiplicity_flag:
        raise RootMultiplicityError(
            f"characteristic roots cluster within tolerance (c={c}); simple roots are required"
        )
    return roots


def _derivatives_at_last_node(nodes: np.ndarray, values: np.ndarray) -> tuple[complex, complex, float]:
    """First and second derivative at ``nodes[-1]`` of the polynomial interpolant.

    Barycentric differentiation; avoids monomial coefficients. Also returns a
    rounding-error bound, which grows like ``(1/r)**c`` when the other nodes
    sit on a small circle of radius ``r``.
    """
    n = len(nodes)
    if n == 1:
        return 0.0, 0.0, 0.0
    xj = nodes[-1]
    diff_j = xj - nodes[:-1]
    # w_k / w_j = prod_{m != j}(x_j - x_m) / prod_{m != k}(x_k - x_m)
    pj = np.prod(diff_j)
    ratio = np.array([pj / np.prod(nodes[k] - np.delete(nodes, k)) for k in range(n - 1)])
    D = ratio / diff_j
    Djj = -np.sum(D)
    D2 = 2.0 * D * (Djj - 1.0 / diff_j)
    df = values[:-1] - values[-1]
    err = 8 * np.finfo(float).eps * float(max(np.sum(np.abs(D * df)), np.sum(np.abs(D2 * df))))
    return complex(np.sum(D * df)), complex(np.sum(D2 * df)), err


def _real(x, what: str) -> float:
    x = complex(x)
    if abs(x.imag) > IMAG_TOL * max(1.0, abs(x.real)):
        raise NumericalError(f"{what} has imaginary part {x.imag:.3g}")
    return x.real


# ---------------------------------------------------------------------------
# PRGS: Poisson users, renewal servers, exceptional first batch


@dataclass(frozen=True)
class PrgsModel:
    """``first_service`` overrides ``F_Z`` (defaults to the exceptional law of ``F_X``)."""

    lam: float
    inter_server: DistanceDistribution
    c: int = 1
    first_service: Any = None

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("user rate must be positive")
        object.__setattr__(self, "c", _check_c(self.c))

    @property
    def rho(self) -> float:
        return self.lam * self.inter_server.mean()

    def fz(self):
        if self.first_service is not None:
            return self.first_service
        law = self.__dict__.get("_fz")
        if law is None:
            # moments of the exceptional law may need quadrature; build it once
            law = exceptional(self.inter_server, self.lam)
            object.__setattr__(self, "_fz", law)
        return law


@dataclass(frozen=True, eq=False)
class PrgsSolution:
    model: PrgsModel
    roots: UnitDiskRoots
    total_a: float | None  # sum_k a_k = lam p(0)
    moment1: float | None  # sum_k k a_k
    moment2: float | None  # sum_k k^2 a_k
    a: np.ndarray | None  # a_1..a_c from the linear system, None if ill-conditioned
    rho: float
    rho_z: float
    residual: float
    route: str = "transform"

    @property
    def empty_prob(self) -> float:
        if self.total_a is None:
            raise NumericalError("boundary constants unavailable (interpolation ill-conditioned)")
        return self.total_a / self.model.lam

    def mean_queue(self) -> float:
        m = self.model
        if self.route == "embedded":
            ed = _embedded_expected_distance(m.lam, m.inter_server, (0.0,) * (m.c - 1) + (1.0,), self.roots)
            return ed * m.lam
        lam, c, rho, rz = m.lam, m.c, self.rho, self.rho_z
        fz = m.fz()
        sx2 = m.inter_server.second_moment()
        sz2 = fz.second_moment()
        const = (
            lam**2 * sz2 * c * (c - rho)
            + lam**2 * sx2 * c * (1.0 + rz)
            - c * (c - 1) * rho
            + 2 * c * c * rz
            - c * (c + 1) * rz * rho
        )
        lin = -(lam**2) * sx2 * c + c * c * rho - rho * rho
        quad = -c * rho + rho * rho
        nbar = (self.total_a * const + self.moment1 * lin + self.moment2 * quad) / (2 * lam * (c - rho) ** 2)
        if not nbar > 0:
            raise NumericalError(f"mean queue length {nbar:.3g} is not positive")
        return nbar

    def expected_distance(self) -> float:
        return self.mean_queue() / self.model.lam

    def queue_pgf(self, z) -> complex:
        """``N(z)``; removable at ``z = 1``."""
        if self.a is None:
            raise NumericalError("coefficients a_k unavailable (system ill-conditioned)")
        m = self.model
        z = complex(z)
        if z == 1:
            return 1.0 + 0.0j
        if abs(z) > 1 + 1e-12:
            raise ValueError("queue_pgf is defined on the closed unit disk")
        c, lam = m.c, m.lam
        th = lam * (1.0 - z)
        fx = complex(m.inter_server.lst(th))
        fzv = complex(m.fz().lst(th))
        den = th * (z**c - fx)
        if abs(den) < 1e-13:
            raise NumericalError(f"z={z} is a root of the denominator")
        k = np.arange(1, c + 1)
        num = np.sum(self.a * (z**c - z**k + z * (1 - z**c) * fzv - (1 - z**k) * fx))
        return complex(num / den)

    def taylor_coefficients(self, n: int, points: int = 1024) -> np.ndarray:
        """First ``n`` coefficients of ``N(z)`` by FFT on the unit circle."""
        points = max(points, 4 * n)
        z = np.exp(2j * np.pi * np.arange(points) / points)
        vals = np.array([self.queue_pgf(zz) for zz in z])
        return np.real(np.fft.fft(vals) / points)[:n]

    def result(self) -> AnalyticResult:
        m = self.model
        return AnalyticResult(
            "prgs",
            {"lam": m.lam, "inter_server": m.inter_server, "c": m.c},
            self.expected_distance(),
            {
                "roots": self.roots.roots,
                "root_method": self.roots.method,
                "a": None if self.a is None else self.a,
                "sum_a": self.total_a,
                "p0": None if self.total_a is None else self.empty_prob,
                "route": self.route,
                "rho": self.rho,
                "rho_z": self.rho_z,
                "residual": self.residual,
            },
        )


def _prgs_linear_system(m: PrgsModel, roots: UnitDiskRoots, rho: float, rho_z: float):
    """Rows of the vanishing conditions scaled by ``xi**(c+1)``, plus normalisation."""
    c, lam = m.c, m.lam
    fz = m.fz()
    k = np.arange(1, c + 1)
    M = np.zeros((c, c), dtype=complex)
    b = np.zeros(c, dtype=complex)
    for i, xi in enumerate(roots.interior):
        # U(xi) xi^(c+1) = xi F_Z*(theta(xi)) since F_X*(theta(xi)) = xi^c
        M[i] = xi * complex(fz.lst(lam * (1.0 - xi))) - xi**k
    M[c - 1] = c * (1.0 + rho_z) - rho * k
    b[c - 1] = lam * (c - rho)
    return M, b


def prgs_solve(m: PrgsModel) -> PrgsSolution:
    """Solve for the boundary constants of the PRGS queue-length transform.

    The vanishing conditions at the interior roots say that
    ``a(z) = sum_k a_k z**k`` satisfies ``a(xi) = S xi F_Z*(theta(xi))`` with
    ``S = a(1)``; so ``a(z)/z`` is ``S`` times the interpolant of
    ``F_Z*(theta(z))`` on all ``c`` roots. The moments of ``a`` needed by the
    mean queue length come from derivatives of that interpolant at ``z = 1``,
    which is well conditioned unless the interior roots crowd a small circle
    (deterministic gaps at high load and large ``c``). In that case the mean
    comes from the server-embedded chain of the same system, which needs only
    ``sum 1/(1 - xi_i)``. The explicit ``a_k`` are also solved from the linear
    system when it is well conditioned.
    """
    c, lam = m.c, m.lam
    rho = m.rho
    _check_stable(rho, c)
    fz = m.fz()
    rho_z = lam * fz.mean()
    roots = _characteristic_roots(m.inter_server, lam, c)
    nodes = roots.roots
    fvals = np.array([complex(fz.lst(lam * (1.0 - z))) for z in nodes])
    fvals[-1] = 1.0
    g1, g2, err = _derivatives_at_last_node(nodes, fvals)
    if err > 1e-9 * max(1.0, abs(g1), abs(g2)):
        if m.first_service is not None:
            raise NumericalError(f"interpolation error bound {err:.3g} too large for a custom first-service law")
        return PrgsSolution(m, roots, None, None, None, None, rho, rho_z, 0.0, "embedded")
    beta1 = _real(g1, "interpolant slope")
    beta2 = _real(g2, "interpolant curvature")
    denom = c * (1.0 + rho_z) - rho * (1.0 + beta1)
    if not denom > 0:
        raise NumericalError("normalisation condition is degenerate")
    total = lam * (c - rho) / denom
    mom1 = total * (1.0 + beta1)
    mom2 = total * (3.0 * beta1 + beta2 + 1.0)

    a = None
    residual = 0.0
    try:
        M, b = _prgs_linear_system(m, roots, rho, rho_z)
        x, residual = solve_small_linear(M, b)
        if np.max(np.abs(x.imag)) <= IMAG_TOL * max(1.0, np.max(np.abs(x.real))):
            a = x.real.copy()
    except NumericalError:
        a = None
    return PrgsSolution(m, roots, total, mom1, mom2, a, rho, rho_z, residual)


def prgs_expected_distance(m: PrgsModel | PrgsSolution) -> float:
    sol = m if isinstance(m, PrgsSolution) else prgs_solve(m)
    return sol.expected_distance()


def prgs_queue_pgf(m: PrgsModel | PrgsSolution, z) -> complex:
    sol = m if isinstance(m, PrgsSolution) else prgs_solve(m)
    return sol.queue_pgf(z)


# ---------------------------------------------------------------------------
# heterogeneous capacities


@dataclass(frozen=True)
class HetCapModel:
    """``pmf[j-1] = P(capacity = j)`` for ``j = 1..len(pmf)``."""

    lam: float
    inter_server: DistanceDistribution
    pmf: tuple[float, ...] = (1.0,)

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("user rate must be positive")
        p = tuple(float(v) for v in self.pmf)
        if not p or any(v < 0 for v in p) or abs(sum(p) - 1.0) > 1e-12:
            raise ValueError("capacity pmf must be nonnegative and sum to 1")
        if p[-1] <= 0:
            raise ValueError("the largest capacity must have positive probability")
        object.__setattr__(self, "pmf", p)

    @classmethod
    def fixed(cls, lam, inter_server, c: int) -> "HetCapModel":
        return cls(lam, inter_server, tuple([0.0] * (c - 1) + [1.0]))

    @property
    def c(self) -> int:
        return len(self.pmf)

    @property
    def mean_capacity(self) -> float:
        return float(np.dot(np.arange(1, self.c + 1), self.pmf))

    @property
    def rho(self) -> float:
        return self.lam * self.inter_server.mean()


@dataclass(frozen=True, eq=False)
class HetCapSolution:
    """Left-behind count ``H`` at server positions: ``H' = max(H + V - C, 0)``."""

    model: HetCapModel
    roots: UnitDiskRoots
    scale: float  # numerator = scale * prod(z - xi_i)
    hbar: float
    pi: np.ndarray  # P(H = h), h < c
    k: np.ndarray  # P(V = v), v < c

    def expected_distance(self) -> float:
        m = self.model
        fx = m.inter_server
        mu = fx.rate
        return (self.hbar / mu + 0.5 * m.lam * (fx.variance() + 1.0 / mu**2)) / m.rho

    def _q_poly(self) -> Polynomial:
        p = np.asarray(self.model.pmf)
        c = self.model.c
        coef = np.zeros(c + 1)
        coef[c - np.arange(1, c + 1)] = p
        return Polynomial(coef)

    def queue_pgf(self, z) -> complex:
        m = self.model
        z = complex(z)
        if z == 1:
            return 1.0 + 0.0j
        num = self.scale * np.prod(z - self.roots.roots)
        den = z**m.c - complex(m.inter_server.lst(m.lam * (1.0 - z))) * complex(self._q_poly()(z))
        if abs(den) < 1e-13:
            raise NumericalError(f"z={z} is a root of the denominator")
        return complex(num / den)

    def stationary_pmf(self, n: int, points: int = 4096) -> np.ndarray:
        """``P(H = h)`` for ``h < n`` by FFT on the unit circle."""
        points = max(points, 4 * n)
        z = np.exp(2j * np.pi * np.arange(points) / points)
        vals = np.array([self.queue_pgf(zz) for zz in z])
        return np.real(np.fft.fft(vals) / points)[:n]

    def result(self) -> AnalyticResult:
        m = self.model
        return AnalyticResult(
            "hetcap",
            {"lam": m.lam, "inter_server": m.inter_server, "pmf": list(m.pmf)},
            self.expected_distance(),
            {
                "roots": self.roots.roots,
                "root_method": self.roots.method,
                "pi": self.pi,
                "hbar": self.hbar,
                "mean_capacity": m.mean_capacity,
                "rho": m.rho,
            },
        )


def hetcap_solve(m: HetCapModel) -> HetCapSolution:
    """Solve the embedded chain at server positions.

    With ``q_m = P(H + V - C = -m)``, the transform is
    ``N(z) = sum_m q_m (z**c - z**(c-m)) / (z**c - K(z) Q(z))`` where
    ``Q(z) = sum_j p_j z**(c-j)``. The numerator is a degree-``c``
    polynomial vanishing at the ``c`` disk roots, so it equals
    ``kappa * prod(z - xi_i)`` with ``kappa`` fixed by ``N(1) = 1``.
    """
    c = m.c
    lam = m.lam
    cbar = m.mean_capacity
    rho = m.rho
    _check_stable(rho, cbar)
    p = np.asarray(m.pmf)
    qcoef = np.zeros(c + 1)
    qcoef[c - np.arange(1, c + 1)] = p
    roots = _characteristic_roots(m.inter_server, lam, c, qcoef)
    hbar, scale = _embedded_hbar(lam, m.inter_server, p, roots)
    jj = np.arange(1, c + 1)

    # recover q_m from the numerator, then P(H + V = t) and pi by substitution
    numer = Polynomial.fromroots(roots.roots).coef * scale
    numer = np.real_if_close(numer, tol=1e6).real
    qm = -numer[c - jj]  # q_m = -[z^(c-m)] numerator
    kv = m.inter_server.poisson_mixture_pmf(lam, c)
    w = np.zeros(c)
    for t in range(c):
        # q_{c-t} = sum_{s<=t} w_s p_{s+c-t}
        acc = qm[c - t - 1] - sum(w[s] * p[s + c - t - 1] for s in range(t))
        w[t] = acc / p[c - 1]
    pi = np.zeros(c)
    for h in range(c):
        pi[h] = (w[h] - sum(pi[s] * kv[h - s] for s in range(h))) / kv[0]
    return HetCapSolution(m, roots, scale, hbar, pi, kv)


def _embedded_hbar(lam, dist, pmf, roots: UnitDiskRoots) -> tuple[float, float]:
    """Mean left-behind count and the numerator scale ``kappa``.

    With ``Num = kappa (z - 1) prod(z - xi_i)`` and ``Den = z**c - K Q``,
    ``N'(1) = sum 1/(1 - xi_i) - Den''(1) / (2 Den'(1))``.
    """
    p = np.asarray(pmf, dtype=float)
    c = len(p)
    jj = np.arange(1, c + 1)
    rho = lam * dist.mean()
    d1 = float(np.dot(jj, p)) - rho
    q1 = float(np.dot(p, c - jj))
    q2 = float(np.dot(p, (c - jj) * (c - jj - 1)))
    d2 = c * (c - 1) - (lam**2 * dist.second_moment() + 2 * rho * q1 + q2)
    interior = roots.interior
    hbar = _real(np.sum(1.0 / (1.0 - interior)), "sum over roots") - d2 / (2 * d1)
    scale = d1 / _real(np.prod(1.0 - interior), "root product")
    return hbar, scale


def _embedded_expected_distance(lam, dist, pmf, roots) -> float:
    hbar, _ = _embedded_hbar(lam, dist, pmf, roots)
    mu = dist.rate
    return (hbar / mu + 0.5 * lam * dist.second_moment()) / (lam / mu)


def hetcap_expected_distance(m: HetCapModel) -> float:
    """``E[D] = (H/mu + lam (sigma_X^2 + 1/mu^2) / 2) / rho``."""
    return hetcap_solve(m).expected_distance()


# ---------------------------------------------------------------------------
# approximations and limits


def heavy_traffic_estimate(inter_user: DistanceDistribution, inter_server: DistanceDistribution) -> float:
    """G/G/1 heavy-traffic estimate ``a_X + (s_X^2 + s_Y^2) / (2 a_Y (1 - rho))``."""
    ax, ay = inter_server.mean(), inter_user.mean()
    rho = ax / ay
    _check_stable(rho, 1.0)
    return ax + (inter_server.variance() + inter_user.variance()) / (2.0 * ay * (1.0 - rho))


def uncapacitated_expected_distance(side: str, dist: DistanceDistribution, rate: float | None = None) -> float:
    """``c -> inf`` limits: GRPS gives ``1/mu``; PRGS gives ``(mu/2)(s_X^2 + 1/mu^2)``.

    For GRPS ``rate`` is the Poisson server rate ``mu``. For PRGS ``dist`` is
    the server gap law ``F_X``.
    """
    side = side.lower()
    if side == "grps":
        if rate is None or not rate > 0:
            raise ValueError("GRPS limit needs the server rate")
        return 1.0 / rate
    if side == "prgs":
        mu = dist.rate
        return 0.5 * mu * (dist.variance() + 1.0 / mu**2)
    raise ValueError(f"side must be 'grps' or 'prgs', got {side!r}")
