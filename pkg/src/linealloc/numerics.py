"""Numerical kernels used by the analytic models.

Root finding on (0, 1), roots of ``z**c - A(z)`` in the closed unit disk,
small dense solves, the modified Bessel function I1 by its power series,
and a checked wrapper around adaptive quadrature.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial import Polynomial
from scipy import integrate, optimize
from scipy.special import gammaln

from .errors import NumericalError, RootMultiplicityError, UnstableModelError

__all__ = [
    "UnitDiskRoots",
    "root_in_unit_interval",
    "unit_disk_roots",
    "solve_small_linear",
    "bessel_i1",
    "bessel_i1_scaled",
    "integrate_adaptive",
]

CLUSTER_TOL = 1e-6
MAX_FIXED_POINT_ITER = 10_000


def root_in_unit_interval(
    f: Callable[[float], float],
    fprime: Callable[[float], float] | None = None,
    tol: float = 1e-12,
) -> float:
    """Root of ``f`` strictly inside (0, 1).

    ``f(1) = 0`` is expected to be a trivial root, so the bracket's right end
    is pulled towards 1 until ``f`` changes sign relative to ``f(0)``.
    """
    f0 = f(0.0)
    if f0 == 0.0:
        raise UnstableModelError("f(0) = 0: degenerate model, no interior root")
    right = None
    eps = 1e-2
    while eps > 1e-15:
        if np.sign(f(1.0 - eps)) != np.sign(f0):
            right = 1.0 - eps
            break
        eps /= 4.0
    if right is None:
        raise UnstableModelError("no sign change on (0, 1); the model is not stable")
    r = optimize.brentq(f, 0.0, right, xtol=min(tol, 1e-14), rtol=4 * np.finfo(float).eps, maxiter=500)
    if fprime is not None:
        for _ in range(3):
            d = fprime(r)
            if d == 0.0:
                break
            step = f(r) / d
            if not 0.0 < r - step < 1.0:
                break
            r -= step
            if abs(step) < 1e-16:
                break
    return float(r)


@dataclass(frozen=True)
class UnitDiskRoots:
    """Roots of ``z**c - A(z)`` with ``|z| <= 1``; the last entry is ``z = 1``."""

    roots: np.ndarray
    multiplicity_flag: bool
    residual: float
    method: str

    def __len__(self):
        return len(self.roots)

    @property
    def interior(self) -> np.ndarray:
        """All roots except the one at ``z = 1``."""
        return self.roots[:-1]


def _newton_polish(g, z: complex, steps: int = 8) -> complex:
    for _ in range(steps):
        h = 1e-7 * max(1.0, abs(z))
        dg = (g(z + h) - g(z - h)) / (2 * h)
        if dg == 0:
            break
        step = g(z) / dg
        z = z - step
        if abs(step) < 1e-15:
            break
    return z


def _fixed_point_branch(log_A, c: int, k: int) -> complex | None:
    omega = np.exp(2j * np.pi * k / c)
    z = 0.5 * omega
    for _ in range(MAX_FIXED_POINT_ITER):
        znew = np.exp((complex(log_A(z)) + 2j * np.pi * k) / c)
        if abs(znew - z) < 1e-13:
            return znew
        z = znew
    return None


def _cluster_flag(roots: np.ndarray) -> bool:
    n = len(roots)
    for i in range(n):
        for j in range(i + 1, n):
            if abs(roots[i] - roots[j]) < CLUSTER_TOL:
                return True
    return False


def _finalize(candidates: Sequence[complex], c: int, g, method: str) -> UnitDiskRoots | None:
    roots = [complex(_newton_polish(g, z)) for z in candidates]
    roots = [z for z in roots if abs(z) <= 1 + 1e-9 and abs(z - 1.0) > 1e-7]
    if len(roots) != c - 1:
        return None
    for i, z in enumerate(roots):
        if abs(z.imag) < 1e-12:
            roots[i] = complex(z.real, 0.0)
    roots.sort(key=lambda z: (z.real, z.imag))
    arr = np.array(roots + [1.0 + 0.0j], dtype=complex)
    residual = float(max(abs(g(z)) for z in arr))
    return UnitDiskRoots(arr, _cluster_flag(arr), residual, method)


def unit_disk_roots(
    A: Callable[[complex], complex],
    c: int,
    polynomial: Polynomial | None = None,
    series: Callable[[int], np.ndarray] | None = None,
    log_A: Callable[[complex], complex] | None = None,
) -> UnitDiskRoots:
    """All ``c`` roots of ``z**c - A(z)`` in the closed unit disk.

    ``A`` must be a probability generating function with ``A'(1) < c``. The
    root at ``z = 1`` is known and returned exactly as the last entry.

    When ``polynomial`` is given, its roots (a polynomial whose zeros in the
    disk coincide with those of ``z**c - A(z)``, e.g. after clearing the
    denominator of a rational ``A``) are taken from the companion matrix.
    Otherwise each branch ``z = exp((log A(z) + 2 pi i k) / c)`` is iterated,
    using ``log_A`` when given (a logarithm continuous on the disk avoids
    branch-cut jumps) and the principal logarithm otherwise; if that fails,
    the power series of ``A`` (``series(n)`` returns its first ``n``
    coefficients) is truncated and solved as a polynomial.
    """
    if c < 1:
        raise ValueError("c must be a positive integer")

    def g(z):
        return z**c - A(z)

    if c == 1:
        return UnitDiskRoots(np.array([1.0 + 0.0j]), False, float(abs(g(1.0 + 0j))), "trivial")

    result = None
    if polynomial is not None:
        result = _finalize(list(polynomial.roots()), c, g, "companion")
    else:
        if log_A is None:
            log_A = lambda z: np.log(complex(A(z)))  # noqa: E731
        cands = []
        for k in range(1, c):
            z = _fixed_point_branch(log_A, c, k)
            if z is None:
                cands = None
                break
            cands.append(z)
        if cands is not None:
            result = _finalize(cands, c, g, "fixed-point")
            if result is not None and result.multiplicity_flag:
                # two branches landing on one root usually means a branch cut
                # was crossed; confirm with the series method before trusting it
                alt = _series_roots(g, c, series) if series is not None else None
                if alt is not None:
                    result = alt
        if result is None and series is not None:
            result = _series_roots(g, c, series)
    if result is None:
        raise NumericalError(f"could not isolate {c} roots of z^c - A(z) in the unit disk")
    if result.residual > 1e-9:
        raise NumericalError(f"root residual {result.residual:g} exceeds 1e-9")
    return result


def _series_roots(g, c: int, series) -> UnitDiskRoots | None:
    n = 64
    while n <= 4096:
        coef = np.asarray(series(n), dtype=float)
        tail = 1.0 - coef.sum()
        if tail < 1e-15:
            last = np.nonzero(np.abs(coef) > 1e-300)[0]
            coef = coef[: last[-1] + 1] if len(last) else coef
            poly = np.zeros(max(len(coef), c + 1))
            poly[: len(coef)] -= coef
            poly[c] += 1.0
            return _finalize(list(Polynomial(poly).roots()), c, g, "series")
        n *= 2
    return None


def solve_small_linear(M, b) -> tuple[np.ndarray, float]:
    """Solve ``M x = b`` by LU with partial pivoting; returns ``(x, residual_inf)``."""
    M = np.asarray(M)
    b = np.asarray(b)
    if M.ndim != 2 or M.shape[0] != M.shape[1] or M.shape[0] != b.shape[0]:
        raise ValueError(f"incompatible shapes {M.shape} and {b.shape}")
    if M.shape[0] > 64:
        raise ValueError("solve_small_linear is meant for systems of size <= 64")
    if not np.all(np.isfinite(M)) or not np.all(np.isfinite(b)):
        raise NumericalError("non-finite entries in linear system")
    cond = np.linalg.cond(M)
    if not np.isfinite(cond) or cond > 1e12:
        raise NumericalError(f"linear system is near-singular (condition {cond:.3g})")
    x = np.linalg.solve(M, b)
    residual = float(np.max(np.abs(M @ x - b))) if len(b) else 0.0
    return x, residual


def bessel_i1(x: float) -> float:
    """Modified Bessel function ``I1(x)`` by its defining power series."""
    x = float(x)
    if x < 0 or not math.isfinite(x):
        raise ValueError(f"bessel_i1 expects 0 <= x, got {x}")
    if x > 700:
        raise OverflowError(f"bessel_i1 argument {x} is outside the supported range [0, 700]")
    if x == 0.0:
        return 0.0
    half = 0.5 * x
    q = half * half
    term = half
    total = term
    m = 0
    while True:
        m += 1
        term *= q / (m * (m + 1))
        total += term
        if term <= 1e-16 * total and m > half:
            return total


def bessel_i1_scaled(x, log_scale=0.0):
    """``exp(-log_scale) * I1(x)`` for arrays, summed in log space to avoid overflow."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    log_scale = np.broadcast_to(np.asarray(log_scale, dtype=float), x.shape)
    out = np.zeros_like(x)
    pos = x > 0
    if not np.any(pos):
        return out
    xp = x[pos]
    mmax = int(np.max(xp) / 2 + 12 * np.sqrt(np.max(xp)) + 60)
    m = np.arange(mmax + 1)[:, None]
    lhalf = np.log(xp / 2.0)

    logt = (2 * m + 1) * lhalf - gammaln(m + 1) - gammaln(m + 2)
    peak = logt.max(axis=0)
    s = np.exp(logt - peak).sum(axis=0)
    out[pos] = np.exp(peak + np.log(s) - log_scale[pos])
    return out


def integrate_adaptive(f, a: float, b: float, tol: float = 1e-11, points=None) -> float:
    """Adaptive Gauss-Kronrod integral with a convergence check."""
    val, err = integrate.quad(f, a, b, epsabs=tol, epsrel=tol, limit=1000, points=points)
    if not math.isfinite(val) or err > 1e3 * tol * max(1.0, abs(val)):
        raise NumericalError(f"quadrature on [{a}, {b}] did not converge (err={err:g})")
    return float(val)
