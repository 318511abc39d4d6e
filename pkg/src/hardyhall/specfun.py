"""Scalar special functions: Riemann-Siegel theta, core zeros, harmonic sums,
and the accelerated coefficient vector.

All functions accept scalars or numpy arrays and are pure.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, DomainError

__all__ = [
    "ThetaExpansion",
    "DEFAULT_THETA",
    "T_MIN",
    "theta",
    "theta_prime",
    "theta_second",
    "core_zero",
    "core_zero_index_range",
    "core_count",
    "harmonic_hn",
    "acc_coeffs",
]

T_MIN = 50.0

# Stirling-series corrections: theta(t) ~ main(t) + sum_j c_j / t**(2j-1).
_CORRECTIONS = (1.0 / 48.0, 7.0 / 5760.0, 31.0 / 80640.0, 127.0 / 430080.0)


@dataclass(frozen=True)
class ThetaExpansion:
    """Asymptotic expansion of theta with ``order`` correction terms."""

    order: int = 2
    t_min: float = T_MIN

    def __post_init__(self):
        if not 0 <= self.order <= len(_CORRECTIONS):
            raise ValueError(f"order must be in [0, {len(_CORRECTIONS)}]")
        if not self.t_min > 2 * np.pi:
            raise ValueError("t_min must exceed 2*pi")

    def _check(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(~(t >= self.t_min)):
            bad = t[~(t >= self.t_min)]
            raise DomainError(f"theta expansion needs t >= {self.t_min}, got {bad.flat[0]!r}")
        return t

    def value(self, t):
        t = self._check(t)
        out = 0.5 * t * np.log(t / (2 * np.pi)) - 0.5 * t - np.pi / 8
        for j, c in enumerate(_CORRECTIONS[: self.order], start=1):
            out = out + c / t ** (2 * j - 1)
        return out

    def prime(self, t):
        t = self._check(t)
        out = 0.5 * np.log(t / (2 * np.pi))
        for j, c in enumerate(_CORRECTIONS[: self.order], start=1):
            out = out - (2 * j - 1) * c / t ** (2 * j)
        return out

    def second(self, t):
        t = self._check(t)
        out = 0.5 / t
        for j, c in enumerate(_CORRECTIONS[: self.order], start=1):
            out = out + (2 * j - 1) * (2 * j) * c / t ** (2 * j + 1)
        return out


DEFAULT_THETA = ThetaExpansion()


def _scalar(x):
    return float(x) if np.ndim(x) == 0 else x


def theta(t, expansion=DEFAULT_THETA):
    """Riemann-Siegel theta function for ``t >= expansion.t_min``."""
    return _scalar(expansion.value(t))


def theta_prime(t, expansion=DEFAULT_THETA):
    return _scalar(expansion.prime(t))


def theta_second(t, expansion=DEFAULT_THETA):
    return _scalar(expansion.second(t))


def core_zero_index_range(lo, hi, expansion=DEFAULT_THETA):
    """Indices ``n`` with ``theta(t_n) = pi*(n + 1/2)`` and ``lo <= t_n <= hi``.

    Returned as a half-open ``range``.
    """
    first = int(np.ceil(theta(lo, expansion) / np.pi - 0.5))
    last = int(np.floor(theta(hi, expansion) / np.pi - 0.5))
    return range(first, last + 1)


def core_count(lo, hi, expansion=DEFAULT_THETA):
    """Number of zeros of cos(theta(t)) in ``[lo, hi]``."""
    return len(core_zero_index_range(lo, hi, expansion))


def core_zero(n, expansion=DEFAULT_THETA, tol=1e-12, max_iter=100):
    """Solve ``theta(t) = pi*(n + 1/2)`` by Newton with a bisection safeguard."""
    target = np.pi * (n + 0.5)
    lo = expansion.t_min
    if theta(lo, expansion) > target:
        raise DomainError(f"core zero {n} lies below t_min={lo}")
    hi = 2.0 * lo
    while theta(hi, expansion) < target:
        lo, hi = hi, 2.0 * hi
    # Initial guess from the leading-order inverse is usually within the bracket.
    t = 0.5 * (lo + hi)
    for _ in range(max_iter):
        r = theta(t, expansion) - target
        if abs(r) <= tol * max(1.0, abs(target)) * 1e-2 or abs(r) < 1e-13:
            return t
        if r > 0:
            hi = t
        else:
            lo = t
        step = t - r / theta_prime(t, expansion)
        if not lo < step < hi:
            step = 0.5 * (lo + hi)
        if abs(step - t) <= 4 * np.finfo(float).eps * t:
            return step
        t = step
    raise ConvergenceError(f"core_zero({n}) did not converge; bracket [{lo}, {hi}]")


def harmonic_hn(N):
    """``sum_{k=1}^{N} 1/(k+1)``."""
    if N < 1:
        raise ValueError("N must be >= 1")
    k = np.arange(N, 0, -1, dtype=float)  # smallest terms first
    return float(np.sum(1.0 / (k + 1.0)))


def acc_coeffs(N, with_zero=False):
    """Accelerated coefficients ``a_k(N) = sum_{n=k}^{N} 2^-(n+1) C(n, k)``.

    Uses the Pascal-type averaging ``a_k(N) = (a_k(N-1) + a_{k-1}(N-1)) / 2``
    starting from ``a_0(0) = 1/2``; every step is an average of nonnegative
    numbers, so nothing overflows.  Returns ``k = 1..N`` (or ``k = 0..N``
    when ``with_zero``).
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    a = np.zeros(N + 1)
    a[0] = 0.5
    for m in range(1, N + 1):
        # In-place, high index first so a[k-1] is still the previous row.
        a[1 : m + 1] = 0.5 * (a[1 : m + 1] + a[0:m])
        a[0] = 0.5 * a[0] + 0.5
    return a if with_zero else a[1:].copy()
