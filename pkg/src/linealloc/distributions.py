"""Inter-point distance laws on the half-line.

Each law describes the gap between consecutive users or consecutive servers.
Besides sampling and moments, every law knows the pieces needed by the
queueing analysis: its Laplace-Stieltjes transform (at complex arguments),
the mixed-Poisson counts ``k_v`` of Poisson points falling in one gap, and
the integral ``B(x) = int_0^x F(z) exp(-lam z) dz``.

:func:`exceptional` builds the law of the first service in a busy period
when users are Poisson: ``Z = X - Y`` conditioned on ``Y < X`` with
``Y ~ Exp(lam)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np
from numpy.polynomial import Polynomial
from scipy import integrate, special, stats

from .errors import NumericalError

__all__ = [
    "DistanceDistribution",
    "Exponential",
    "Deterministic",
    "Uniform",
    "HyperExponential",
    "ExceptionalDistribution",
    "exceptional",
    "h2_from_cv",
    "parse_distribution",
    "distribution_from_dict",
    "sample",
    "lst",
]

_SMALL_S = 1e-8


def _as_array(x):
    return np.asarray(x, dtype=complex if np.iscomplexobj(x) else float)


def _scalarize(value, like):
    if np.ndim(like) == 0:
        return value.item() if isinstance(value, np.ndarray) else value
    return value


class DistanceDistribution:
    """Base class; concrete laws are frozen dataclasses below."""

    kind: str = ""

    # moments -----------------------------------------------------------
    def mean(self) -> float:
        raise NotImplementedError

    def variance(self) -> float:
        raise NotImplementedError

    def second_moment(self) -> float:
        return self.variance() + self.mean() ** 2

    @property
    def rate(self) -> float:
        """Point density of the renewal process built from this gap law."""
        return 1.0 / self.mean()

    def scv(self) -> float:
        """Squared coefficient of variation."""
        return self.variance() / self.mean() ** 2

    # functions ---------------------------------------------------------
    def cdf(self, x):
        raise NotImplementedError

    def lst(self, s):
        """Laplace-Stieltjes transform ``E[exp(-s X)]``; ``s`` may be complex."""
        raise NotImplementedError

    def lst_derivative(self, s):
        """First derivative of :meth:`lst` with respect to ``s``."""
        raise NotImplementedError

    def log_lst(self, s):
        """Logarithm of :meth:`lst`, continuous on ``Re s >= 0``."""
        return np.log(self.lst(s))

    def rational_lst(self) -> tuple[Polynomial, Polynomial] | None:
        """``(num, den)`` with ``lst(s) = num(s) / den(s)``, or None if not rational."""
        return None

    def sample(self, rng: np.random.Generator, size=None):
        raise NotImplementedError

    def poisson_mixture_pmf(self, lam: float, n: int) -> np.ndarray:
        """``k_v = P(V = v)`` for ``v < n`` where ``V ~ Poisson(lam X)``."""
        raise NotImplementedError

    def b_integral(self, x, lam: float):
        """``B(x) = int_0^x F(z) exp(-lam z) dz``."""
        raise NotImplementedError

    def laplace_cdf(self, lam: float) -> float:
        """``A(F) = B(inf) = lst(lam) / lam``."""
        return float(np.real(self.lst(lam))) / lam

    # pieces of the exceptional law (Z = X - Y | Y < X, Y ~ Exp(lam)) ----
    def _excess_survival(self, x, lam: float):
        """``P(X - Y > x)`` for ``x >= 0``."""
        raise NotImplementedError

    def _excess_density(self, x, lam: float):
        """``-d/dx P(X - Y > x)`` for ``x >= 0``."""
        raise NotImplementedError

    def upper_support(self) -> float:
        """Right end of the support (``inf`` for unbounded laws)."""
        return math.inf

    def to_dict(self) -> dict[str, Any]:
        raise NotImplementedError


@dataclass(frozen=True)
class Exponential(DistanceDistribution):
    mu: float

    kind = "exp"

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError(f"exponential rate must be positive, got {self.mu}")

    @property
    def rate(self) -> float:
        return self.mu

    def mean(self):
        return 1.0 / self.mu

    def variance(self):
        return 1.0 / self.mu**2

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        out = np.where(x > 0, -np.expm1(-self.mu * np.maximum(x, 0.0)), 0.0)
        return _scalarize(out, x)

    def lst(self, s):
        s = _as_array(s)
        return _scalarize(self.mu / (self.mu + s), s)

    def lst_derivative(self, s):
        s = _as_array(s)
        return _scalarize(-self.mu / (self.mu + s) ** 2, s)

    def log_lst(self, s):
        s = _as_array(s)
        return _scalarize(np.log(self.mu) - np.log(self.mu + s), s)

    def rational_lst(self):
        return Polynomial([self.mu]), Polynomial([self.mu, 1.0])

    def sample(self, rng, size=None):
        return rng.exponential(1.0 / self.mu, size)

    def poisson_mixture_pmf(self, lam, n):
        q = lam / (lam + self.mu)
        return (1.0 - q) * q ** np.arange(n)

    def b_integral(self, x, lam):
        x = np.asarray(x, dtype=float)
        mu = self.mu
        out = -np.expm1(-lam * x) / lam + np.expm1(-(lam + mu) * x) / (lam + mu)
        return _scalarize(out, x)

    def _excess_survival(self, x, lam):
        return lam / (lam + self.mu) * np.exp(-self.mu * np.asarray(x, dtype=float))

    def _excess_density(self, x, lam):
        mu = self.mu
        return lam * mu / (lam + mu) * np.exp(-mu * np.asarray(x, dtype=float))

    def to_dict(self):
        return {"kind": "exp", "rate": self.mu}

    def __repr__(self):
        return f"Exponential(mu={self.mu:g})"


@dataclass(frozen=True)
class Deterministic(DistanceDistribution):
    d0: float

    kind = "det"

    def __post_init__(self):
        if not self.d0 > 0:
            raise ValueError(f"deterministic gap must be positive, got {self.d0}")

    def mean(self):
        return self.d0

    def variance(self):
        return 0.0

    def cdf(self, x):
        # right-continuous step at d0
        x = np.asarray(x, dtype=float)
        return _scalarize(np.where(x >= self.d0, 1.0, 0.0), x)

    def lst(self, s):
        s = _as_array(s)
        return _scalarize(np.exp(-s * self.d0), s)

    def lst_derivative(self, s):
        s = _as_array(s)
        return _scalarize(-self.d0 * np.exp(-s * self.d0), s)

    def log_lst(self, s):
        s = _as_array(s)
        return _scalarize(-s * self.d0, s)

    def sample(self, rng, size=None):
        if size is None:
            return float(self.d0)
        return np.full(size, float(self.d0))

    def poisson_mixture_pmf(self, lam, n):
        return stats.poisson.pmf(np.arange(n), lam * self.d0)

    def b_integral(self, x, lam):
        x = np.asarray(x, dtype=float)
        d0 = self.d0
        tail = (np.exp(-lam * d0) - np.exp(-lam * np.maximum(x, d0))) / lam
        return _scalarize(np.where(x >= d0, tail, 0.0), x)

    def _excess_survival(self, x, lam):
        u = self.d0 - np.asarray(x, dtype=float)
        return np.where(u > 0, -np.expm1(-lam * np.maximum(u, 0.0)), 0.0)

    def _excess_density(self, x, lam):
        u = self.d0 - np.asarray(x, dtype=float)
        return np.where(u > 0, lam * np.exp(-lam * np.maximum(u, 0.0)), 0.0)

    def upper_support(self):
        return self.d0

    def to_dict(self):
        return {"kind": "det", "d0": self.d0}

    def __repr__(self):
        return f"Deterministic(d0={self.d0:g})"


@dataclass(frozen=True)
class Uniform(DistanceDistribution):
    """Uniform gap on ``(0, b)``."""

    b: float

    kind = "unif"

    def __post_init__(self):
        if not self.b > 0:
            raise ValueError(f"uniform upper bound must be positive, got {self.b}")

    def mean(self):
        return self.b / 2.0

    def variance(self):
        return self.b**2 / 12.0

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        return _scalarize(np.clip(x / self.b, 0.0, 1.0), x)

    def lst(self, s):
        s = _as_array(s)
        u = s * self.b
        small = np.abs(u) < _SMALL_S
        safe = np.where(small, 1.0, u)
        out = np.where(small, 1.0 - u / 2.0 + u * u / 6.0, -np.expm1(-safe) / safe)
        return _scalarize(out, s)

    def lst_derivative(self, s):
        s = _as_array(s)
        b = self.b
        u = s * b
        small = np.abs(u) < 1e-4
        safe = np.where(small, 1.0, u)
        # d/du [(1 - e^{-u}) / u] = (u e^{-u} - (1 - e^{-u})) / u^2
        g = (safe * np.exp(-safe) + np.expm1(-safe)) / safe**2
        series = -0.5 + u / 3.0 - u * u / 8.0 + u**3 / 30.0
        return _scalarize(b * np.where(small, series, g), s)

    def log_lst(self, s):
        # log(1 - e^{-u}) - log(u); both principal logs are continuous for Re u > 0
        s = _as_array(s)
        u = s * self.b
        small = np.abs(u) < _SMALL_S
        safe = np.where(small, 1.0, u)
        out = np.where(small, -u / 2.0 + u * u / 24.0, np.log(-np.expm1(-safe)) - np.log(safe))
        return _scalarize(out, s)

    def sample(self, rng, size=None):
        return rng.uniform(0.0, self.b, size)

    def poisson_mixture_pmf(self, lam, n):
        # (1 / (lam b)) * P(Poisson(lam b) >= v + 1)
        lb = lam * self.b
        return special.gammainc(np.arange(1, n + 1), lb) / lb

    def b_integral(self, x, lam):
        x = np.asarray(x, dtype=float)
        b = self.b
        xc = np.minimum(np.maximum(x, 0.0), b)
        inner = (-np.expm1(-lam * xc) / lam**2 - xc * np.exp(-lam * xc) / lam) / b
        # for x >= b this reduces to the closed form listed for the uniform law
        tail = (np.exp(-lam * b) - np.exp(-lam * np.maximum(x, b))) / lam
        return _scalarize(inner + np.where(x > b, tail, 0.0), x)

    def _excess_survival(self, x, lam):
        u = self.b - np.asarray(x, dtype=float)
        up = np.maximum(u, 0.0)
        return np.where(u > 0, (up + np.expm1(-lam * up) / lam) / self.b, 0.0)

    def _excess_density(self, x, lam):
        u = self.b - np.asarray(x, dtype=float)
        return np.where(u > 0, -np.expm1(-lam * np.maximum(u, 0.0)) / self.b, 0.0)

    def upper_support(self):
        return self.b

    def to_dict(self):
        return {"kind": "unif", "b": self.b}

    def __repr__(self):
        return f"Uniform(b={self.b:g})"


@dataclass(frozen=True)
class HyperExponential(DistanceDistribution):
    probs: tuple[float, ...]
    rates: tuple[float, ...]

    kind = "hyperexp"

    def __post_init__(self):
        probs = tuple(float(p) for p in self.probs)
        rates = tuple(float(r) for r in self.rates)
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "rates", rates)
        if len(probs) != len(rates) or not probs:
            raise ValueError("hyperexponential needs matching, non-empty phase lists")
        if any(p < 0 or p > 1 for p in probs):
            raise ValueError(f"phase probabilities must lie in [0, 1], got {probs}")
        if abs(sum(probs) - 1.0) > 1e-12:
            raise ValueError(f"phase probabilities must sum to 1, got {sum(probs)!r}")
        if any(not r > 0 for r in rates):
            raise ValueError(f"phase rates must be positive, got {rates}")

    @property
    def order(self) -> int:
        return len(self.probs)

    def _pr(self):
        return np.array(self.probs), np.array(self.rates)

    def mean(self):
        p, m = self._pr()
        return float(np.sum(p / m))

    def second_moment(self):
        p, m = self._pr()
        return float(np.sum(2.0 * p / m**2))

    def variance(self):
        return self.second_moment() - self.mean() ** 2

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        p, m = self._pr()
        xp = np.maximum(x, 0.0)[..., None]
        out = 1.0 - np.sum(p * np.exp(-m * xp), axis=-1)
        return _scalarize(np.where(x > 0, out, 0.0), x)

    def lst(self, s):
        s = _as_array(s)
        p, m = self._pr()
        out = np.sum(p * m / (m + s[..., None]), axis=-1)
        return _scalarize(out, s)

    def lst_derivative(self, s):
        s = _as_array(s)
        p, m = self._pr()
        out = -np.sum(p * m / (m + s[..., None]) ** 2, axis=-1)
        return _scalarize(out, s)

    def rational_lst(self):
        den = Polynomial([1.0])
        for m in self.rates:
            den = den * Polynomial([m, 1.0])
        num = Polynomial([0.0])
        for j, (pj, mj) in enumerate(zip(self.probs, self.rates)):
            term = Polynomial([pj * mj])
            for i, mi in enumerate(self.rates):
                if i != j:
                    term = term * Polynomial([mi, 1.0])
            num = num + term
        return num, den

    def sample(self, rng, size=None):
        p, m = self._pr()
        phase = rng.choice(len(p), size=size, p=p)
        return rng.exponential(1.0 / m[phase])

    def poisson_mixture_pmf(self, lam, n):
        v = np.arange(n)
        out = np.zeros(n)
        for pj, mj in zip(self.probs, self.rates):
            q = lam / (lam + mj)
            out += pj * (1.0 - q) * q**v
        return out

    def b_integral(self, x, lam):
        x = np.asarray(x, dtype=float)
        out = -np.expm1(-lam * x) / lam
        for pj, mj in zip(self.probs, self.rates):
            out = out + pj * np.expm1(-(lam + mj) * x) / (lam + mj)
        return _scalarize(out, x)

    def _excess_survival(self, x, lam):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for pj, mj in zip(self.probs, self.rates):
            out = out + pj * lam / (lam + mj) * np.exp(-mj * x)
        return out

    def _excess_density(self, x, lam):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for pj, mj in zip(self.probs, self.rates):
            out = out + pj * lam * mj / (lam + mj) * np.exp(-mj * x)
        return out

    def to_dict(self):
        return {"kind": "hyperexp", "probs": list(self.probs), "rates": list(self.rates)}

    def __repr__(self):
        return f"HyperExponential(probs={self.probs}, rates={self.rates})"


def h2_from_cv(cv2: float, mean_dist: float) -> HyperExponential:
    """Order-2 hyperexponential with balanced means and the given squared CV."""
    if cv2 < 1:
        raise ValueError(f"balanced H2 needs cv2 >= 1, got {cv2}")
    if not mean_dist > 0:
        raise ValueError(f"mean must be positive, got {mean_dist}")
    p1 = 0.5 * (1.0 + math.sqrt((cv2 - 1.0) / (cv2 + 1.0)))
    p2 = 1.0 - p1
    return HyperExponential((p1, p2), (2.0 * p1 / mean_dist, 2.0 * p2 / mean_dist))


def sample(d: DistanceDistribution, rng: np.random.Generator, size=None):
    return d.sample(rng, size)


def lst(d: DistanceDistribution, s):
    return d.lst(s)


# ---------------------------------------------------------------------------
# exceptional first-service law


@dataclass(frozen=True)
class ExceptionalDistribution:
    """Law of ``Z = X - Y`` given ``Y < X``, with ``X ~ base`` and ``Y ~ Exp(lam)``.

    The cdf is ``(D(x) - D(0)) / (1 - D(0))`` where ``D`` is the cdf of
    ``X - Y``; ``1 - D(0) = 1 - lst(lam)``. For an exponential base the law
    coincides with the base.
    """

    base: DistanceDistribution
    arrival_rate: float
    _moments: tuple[float, float] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.arrival_rate > 0:
            raise ValueError(f"arrival rate must be positive, got {self.arrival_rate}")
        object.__setattr__(self, "_moments", self._compute_moments())

    @property
    def lam(self) -> float:
        return self.arrival_rate

    @property
    def accept_prob(self) -> float:
        """``P(Y < X) = 1 - lst_X(lam)``."""
        return 1.0 - float(np.real(self.base.lst(self.lam)))

    def difference_cdf(self, x):
        """``D(x) = P(X - Y <= x)`` for ``x >= 0``."""
        return 1.0 - self.base._excess_survival(x, self.lam)

    def survival(self, x):
        x = np.asarray(x, dtype=float)
        if isinstance(self.base, Exponential):
            return _scalarize(np.where(x > 0, np.exp(-self.base.mu * np.maximum(x, 0)), 1.0), x)
        s = self.base._excess_survival(np.maximum(x, 0.0), self.lam) / self.accept_prob
        return _scalarize(np.where(x > 0, np.clip(s, 0.0, 1.0), 1.0), x)

    def cdf(self, x):
        if isinstance(self.base, Exponential):
            return self.base.cdf(x)
        x = np.asarray(x, dtype=float)
        return _scalarize(1.0 - np.asarray(self.survival(x)), x)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        f = self.base._excess_density(np.maximum(x, 0.0), self.lam) / self.accept_prob
        return _scalarize(np.where(x >= 0, f, 0.0), x)

    def lst(self, s):
        """``E[exp(-s Z)] = lam (F*(lam) - F*(s)) / ((s - lam) (1 - F*(lam)))``."""
        s = _as_array(s)
        lam = self.lam
        base = self.base
        if isinstance(base, Exponential):
            return base.lst(s)
        fl = base.lst(lam)
        h = s - lam
        near = np.abs(h) < 1e-7
        safe_h = np.where(near, 1.0, h)
        quotient = (fl - base.lst(np.where(near, lam + 1.0, s))) / safe_h
        # divided difference -> -F*'(midpoint) at the removable point s = lam
        quotient = np.where(near, -base.lst_derivative(lam + h / 2.0), quotient)
        return _scalarize(lam * quotient / (1.0 - fl), s)

    def tail_bound(self, eps: float = 1e-10) -> float:
        """Smallest power-of-two multiple ``x`` of the base mean with ``P(Z > x) < eps``."""
        up = self.base.upper_support()
        if math.isfinite(up):
            return up
        x = self.base.mean()
        while self.survival(x) >= eps:
            x *= 2.0
            if x > 1e12:
                raise NumericalError("exceptional law tail does not decay")
        return x

    def _compute_moments(self) -> tuple[float, float]:
        base, lam = self.base, self.lam
        if isinstance(base, Exponential):
            mu = base.mu
            return 1.0 / mu, 2.0 / mu**2
        if isinstance(base, Uniform):
            b = base.b
            k = 1.0 / (b * lam + math.expm1(-lam * b))
            m1 = b * b * lam * k / 2.0 - 1.0 / lam
            var = (
                b**3 * lam * k / 3.0
                - (k / lam) * (b * (b * lam - 2.0) - (2.0 / lam) * math.expm1(-lam * b))
                - m1 * m1
            )
            return m1, var + m1 * m1
        if isinstance(base, Deterministic):
            d0 = base.d0
            cl = 1.0 / -math.expm1(-lam * d0)
            m1 = cl * (d0 * lam + math.expm1(-lam * d0)) / lam
            m2 = (cl / lam) * (d0 * (d0 * lam - 2.0) - (2.0 / lam) * math.expm1(-lam * d0))
            return m1, m2
        return self._quadrature_moments()

    def _quadrature_moments(self) -> tuple[float, float]:
        xmax = self.tail_bound(1e-10)
        # tail beyond xmax is below 1e-10 in probability; extend to be safe
        xmax *= 4.0
        m = []
        for power in (1, 2):
            val, err = integrate.quad(
                lambda x: x**power * self.pdf(x), 0.0, xmax, limit=500, epsabs=1e-13, epsrel=1e-11
            )
            if not np.isfinite(val) or err > 1e-7 * max(1.0, abs(val)):
                raise NumericalError(f"moment quadrature did not converge (err={err:g})")
            m.append(val)
        return m[0], m[1]

    def mean(self) -> float:
        return self._moments[0]

    def second_moment(self) -> float:
        return self._moments[1]

    def variance(self) -> float:
        return self._moments[1] - self._moments[0] ** 2

    def load(self) -> float:
        """``rho_z = lam * E[Z]``."""
        return self.lam * self.mean()


def exceptional(base: DistanceDistribution, lam: float) -> ExceptionalDistribution:
    return ExceptionalDistribution(base, float(lam))


# ---------------------------------------------------------------------------
# parsing / serialization


def distribution_from_dict(spec: Mapping[str, Any]) -> DistanceDistribution:
    """Build a law from a tagged record such as ``{"kind": "hyperexp", "cv2": 4, "mean": 1}``."""
    kind = str(spec.get("kind", "")).lower()
    if kind in ("exp", "exponential", "poisson"):
        if "rate" in spec:
            return Exponential(float(spec["rate"]))
        return Exponential(1.0 / float(spec.get("mean", 1.0)))
    if kind in ("det", "deterministic"):
        return Deterministic(float(spec.get("d0", spec.get("mean", 1.0))))
    if kind in ("unif", "uniform"):
        if "b" in spec:
            return Uniform(float(spec["b"]))
        return Uniform(2.0 * float(spec.get("mean", 0.5)))
    if kind in ("hyperexp", "h2", "hyperexponential"):
        if "probs" in spec:
            return HyperExponential(tuple(spec["probs"]), tuple(spec["rates"]))
        return h2_from_cv(float(spec.get("cv2", 4.0)), float(spec.get("mean", 1.0)))
    raise ValueError(f"unknown distribution kind {spec.get('kind')!r}")


def parse_distribution(text: str) -> DistanceDistribution:
    """Parse the compact CLI form.

    ``exp:RATE``, ``det:D0``, ``unif:B``, ``h2:CV2[:MEAN]``.
    """
    parts = text.strip().split(":")
    kind, args = parts[0].lower(), [float(a) for a in parts[1:]]
    try:
        if kind in ("exp", "exponential"):
            return Exponential(args[0] if args else 1.0)
        if kind in ("det", "deterministic"):
            return Deterministic(args[0] if args else 1.0)
        if kind in ("unif", "uniform"):
            return Uniform(args[0] if args else 2.0)
        if kind in ("h2", "hyperexp"):
            cv2 = args[0] if args else 4.0
            mean = args[1] if len(args) > 1 else 1.0
            return h2_from_cv(cv2, mean)
    except IndexError:
        pass
    raise ValueError(f"cannot parse distribution {text!r}")
