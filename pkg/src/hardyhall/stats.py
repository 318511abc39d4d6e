"""Spacing and pair-correlation statistics with GUE references.

Unfolding, the Wigner surmise, the sine-kernel pair-correlation integral,
local and global pair-correlation functionals of zeros of sections,
cross-window decorrelation tables and the truncated S'(t) series.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
from scipy import stats as sps
from scipy.integrate import quad
from scipy.special import erf

from .errors import DomainError, NonIntegrable
from .specfun import theta

__all__ = [
    "PairCorrResult",
    "TestFunction",
    "get_test_function",
    "TEST_FUNCTIONS",
    "unfold_spacings",
    "unfold_by_density",
    "wigner_surmise",
    "wigner_cdf",
    "ks_distance",
    "ks_two_sample",
    "gue_pc_integral",
    "pc_local",
    "pc_global",
    "zero_count_norm",
    "decorrelation_table",
    "von_mangoldt",
    "sprime_truncated",
]


# -- spacings ---------------------------------------------------------------


def _zeros_and_N(zeros, N=None):
    if hasattr(zeros, "zeros"):
        if N is None:
            N = zeros.window.index
        zeros = zeros.zeros
    return np.asarray(zeros, dtype=float), N


def unfold_spacings(zeros, N=None):
    """Consecutive gaps of ``(log N / 2 pi) t_j``, rescaled to mean one.

    ``zeros`` is a ZeroConfig or an ordered array.  Without ``N`` (free
    windows) the log factor is omitted; it cancels in the rescaling anyway.
    """
    t, N = _zeros_and_N(zeros, N)
    if t.size < 2:
        raise ValueError("need at least two zeros")
    scale = np.log(N) / (2 * np.pi) if N else 1.0
    s = np.diff(scale * t)
    return s / np.mean(s)


def unfold_by_density(zeros):
    """Gaps of ``theta(t_j) / pi``: unit mean density to leading order."""
    t, _ = _zeros_and_N(zeros)
    return np.diff(theta(t) / np.pi)


def wigner_surmise(s):
    """GUE Wigner surmise ``(32/pi^2) s^2 exp(-4 s^2 / pi)``."""
    s_arr = np.asarray(s, dtype=float)
    if np.any(s_arr < 0):
        raise DomainError("spacing must be nonnegative")
    out = 32.0 / np.pi**2 * s_arr**2 * np.exp(-4.0 * s_arr**2 / np.pi)
    return out if out.ndim else float(out)


def wigner_cdf(s):
    s = np.maximum(np.asarray(s, dtype=float), 0.0)
    out = erf(2.0 * s / np.sqrt(np.pi)) - 4.0 * s / np.pi * np.exp(-4.0 * s**2 / np.pi)
    return out if out.ndim else float(out)


def ks_distance(sample, cdf=wigner_cdf):
    """Kolmogorov-Smirnov distance of a sample from a reference CDF."""
    return float(sps.kstest(np.asarray(sample, dtype=float), cdf).statistic)


def ks_two_sample(a, b):
    return float(sps.ks_2samp(a, b).statistic)


# -- test functions -----------------------------------------------------------


@dataclass(frozen=True)
class TestFunction:
    """A bounded even test function, keyed by ``id``."""

    __test__ = False  # not a pytest class

    id: str
    f: Callable
    radius: float = np.inf
    tail: Optional[Callable] = None  # L -> int_{|x|>L} f(x)(1 - sinc(x)^2) dx

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return self.f(x)

    @property
    def compact(self):
        return np.isfinite(self.radius)


def _bump(R):
    def f(x):
        u = np.asarray(x, dtype=float) / R
        return np.where(np.abs(u) < 1.0, (1.0 - u * u) ** 3, 0.0)

    return f


def _triangle(R):
    def f(x):
        return np.maximum(1.0 - np.abs(np.asarray(x, dtype=float)) / R, 0.0)

    return f


def _gauss(x):
    return np.exp(-np.asarray(x, dtype=float) ** 2)


def _sinc2(x):
    return np.sinc(np.asarray(x, dtype=float)) ** 2


def _fourier_tail(c, p, w, L):
    """``int_L^inf c cos(w x) / x^p dx`` (``w = 0``: closed form)."""
    if w == 0:
        return c * L ** (1 - p) / (p - 1)
    v, _ = quad(lambda x: c / x**p, L, np.inf, weight="cos", wvar=w)
    return v


def _sinc2_tail(L):
    # sinc^2 (1 - sinc^2) = sin^2/(pi x)^2 - sin^4/(pi x)^4 with
    # sin^2 = (1 - cos 2 pi x)/2 and sin^4 = (3 - 4 cos 2 pi x + cos 4 pi x)/8.
    a = 1.0 / (2 * np.pi**2)
    b = 1.0 / (8 * np.pi**4)
    one = (
        _fourier_tail(a, 2, 0, L)
        - _fourier_tail(a, 2, 2 * np.pi, L)
        - _fourier_tail(3 * b, 4, 0, L)
        + _fourier_tail(4 * b, 4, 2 * np.pi, L)
        - _fourier_tail(b, 4, 4 * np.pi, L)
    )
    return 2.0 * one


TEST_FUNCTIONS = ("gauss", "sinc2", "bump:R", "triangle:R")


def get_test_function(fid):
    """Registry lookup: ``gauss``, ``sinc2``, ``bump:R`` (C^2), ``triangle:R``."""
    if isinstance(fid, TestFunction):
        return fid
    if fid == "gauss":
        return TestFunction("gauss", _gauss, tail=lambda L: 0.0 if L > 30 else None)
    if fid == "sinc2":
        return TestFunction("sinc2", _sinc2, tail=_sinc2_tail)
    m = re.fullmatch(r"(bump|triangle):([0-9.eE+-]+)", fid)
    if m:
        R = float(m.group(2))
        if not R > 0:
            raise ValueError("support radius must be positive")
        make = _bump if m.group(1) == "bump" else _triangle
        return TestFunction(f"{m.group(1)}:{m.group(2)}", make(R), R)
    if fid == "zero":
        return TestFunction("zero", lambda x: np.zeros_like(np.asarray(x, dtype=float)), 0.0)
    raise KeyError(f"unknown test function {fid!r}")


def gue_pc_integral(f, epsabs=1e-10):
    """``int f(x) (1 - sinc(x)^2) dx`` with ``sinc(x) = sin(pi x) / (pi x)``."""
    tf = get_test_function(f) if isinstance(f, str) else f
    g = lambda x: float(tf(x)) * (1.0 - np.sinc(x) ** 2)  # noqa: E731
    radius = getattr(tf, "radius", np.inf)
    total, err = 0.0, 0.0
    if np.isfinite(radius):
        # Break at integers so the oscillation is resolved piecewise.
        edges = np.arange(-np.ceil(radius), np.ceil(radius) + 1.0)
        for a, b in zip(edges[:-1], edges[1:]):
            v, e = quad(g, a, b, epsabs=epsabs / edges.size, epsrel=1e-12, limit=200)
            total += v
            err += e
    else:
        # Integer-spaced pieces out to a cutoff, then the two tails.
        L = 64.0
        edges = np.arange(-L, L + 1.0)
        for a, b in zip(edges[:-1], edges[1:]):
            v, e = quad(g, a, b, epsabs=epsabs / 256, epsrel=1e-12, limit=200)
            total += v
            err += e
        tail = tf.tail(L) if getattr(tf, "tail", None) is not None else None
        if tail is not None:
            total += tail
        else:
            for a, b in ((L, np.inf), (-np.inf, -L)):
                v, e = quad(g, a, b, epsabs=epsabs / 4, limit=2000)
                total += v
                err += e
    if not np.isfinite(total) or err > 10 * epsabs:
        raise NonIntegrable(f"quadrature error estimate {err:.3e} exceeds {10 * epsabs:.1e}")
    return total


# -- pair correlation ---------------------------------------------------------


@dataclass
class PairCorrResult:
    value: float
    window: Optional[int]
    f_id: str
    count: int
    mode: str  # "local" (log N) or "global" (log(T / 2 pi))

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise ValueError("pair correlation must be finite")


def _pair_sum(f, t, scale, centers=None):
    """``sum_{j in centers, k != j} f(scale (t_j - t_k))`` for sorted ``t``."""
    t = np.asarray(t, dtype=float)
    if centers is None:
        centers = np.arange(t.size)
    if np.isfinite(f.radius):
        reach = f.radius / scale
        lo = np.searchsorted(t, t[centers] - reach, side="left")
        hi = np.searchsorted(t, t[centers] + reach, side="right")
        total = 0.0
        for j, a, b in zip(centers, lo, hi):
            d = t[j] - t[a:b]
            d = d[np.arange(a, b) != j]
            total += float(np.sum(f(scale * d)))
        return total
    d = t[centers][:, None] - t[None, :]
    mask = np.ones(d.shape, dtype=bool)
    mask[np.arange(len(centers)), centers] = False
    return float(np.sum(f(scale * d[mask])))


def pc_local(f, zeros, N=None, core=None):
    """``(1/M) sum_{j != k} f((log N / 2 pi)(t_j - t_k))`` over a window.

    With ``core = (lo, hi)`` only zeros ``t_j`` inside ``core`` are centres
    (and ``M`` counts them) while partners ``t_k`` range over all of
    ``zeros``: a padded window then removes the loss of partners beyond the
    core edges.
    """
    tf = get_test_function(f) if isinstance(f, str) else f
    t, N = _zeros_and_N(zeros, N)
    if N is None:
        raise ValueError("pc_local needs the window index N")
    t = np.sort(t)
    if core is None:
        centers = np.arange(t.size)
    else:
        centers = np.flatnonzero((t >= core[0]) & (t <= core[1]))
    M = centers.size
    if M == 0:
        return PairCorrResult(0.0, N, tf.id, 0, "local")
    val = _pair_sum(tf, t, np.log(N) / (2 * np.pi), centers) / M
    return PairCorrResult(val, N, tf.id, int(M), "local")


def zero_count_norm(T, lo=50.0, mode="pooled"):
    """Normalizer ``N(T)``.

    ``pooled``: the expected number of zeros in ``[lo, T]``,
    ``(theta(T) - theta(lo)) / pi``.  ``asymptotic``: ``(T/2 pi) log(T/2 pi)``.
    """
    if mode == "pooled":
        return (theta(T) - theta(lo)) / np.pi
    if mode == "asymptotic":
        return T / (2 * np.pi) * np.log(T / (2 * np.pi))
    raise ValueError(f"unknown normalization {mode!r}")


def pc_global(f, family, T, norm="pooled"):
    """Approximate and genuine global pair correlation up to height ``T``.

    ``family`` maps each window index ``N`` to the zeros of its section in
    ``[2N, 2N+2)``.  Windows with ``2N + 2 > T`` are ignored.  Returns
    ``(approx, genuine, pooled zero count)``.
    """
    tf = get_test_function(f) if isinstance(f, str) else f
    Ns = sorted(N for N in family if 2 * N + 2 <= T)
    if not Ns:
        raise ValueError("no window fits below T")
    lo = 2.0 * Ns[0]
    NT = zero_count_norm(T, lo, norm)
    approx = 0.0
    pooled = []
    for N in Ns:
        t, _ = _zeros_and_N(family[N])
        t = np.sort(t[(t >= 2 * N) & (t < 2 * N + 2)])
        if t.size >= 2:
            approx += _pair_sum(tf, t, np.log(N) / (2 * np.pi))
        pooled.append(t)
    gamma = np.sort(np.concatenate(pooled))
    genuine = _pair_sum(tf, gamma, np.log(T / (2 * np.pi)) / (2 * np.pi)) if gamma.size >= 2 else 0.0
    return approx / NT, genuine / NT, int(gamma.size)


def decorrelation_table(values, indices, bins):
    """Empirical covariance of per-window values binned by index separation.

    ``bins`` is a list of ``(lo, hi)`` separation ranges (inclusive).  Each
    row carries the covariance, the pair count and the 1-sigma half-width of
    the independence null band ``var / sqrt(pairs)``.
    """
    x = np.asarray(values, dtype=float)
    idx = np.asarray(indices)
    if x.size < 30:
        raise ValueError("decorrelation needs at least 30 windows")
    xc = x - x.mean()
    var = float(np.mean(xc**2))
    sep = np.abs(idx[:, None] - idx[None, :])
    iu = np.triu_indices(x.size, 1)
    prod = (xc[:, None] * xc[None, :])[iu]
    sep = sep[iu]
    rows = []
    for a, b in bins:
        m = (sep >= a) & (sep <= b)
        n = int(m.sum())
        cov = float(prod[m].mean()) if n else float("nan")
        band = var / np.sqrt(n) if n else float("nan")
        rows.append({"sep_lo": a, "sep_hi": b, "cov": cov, "pairs": n, "sigma": band, "var": var})
    return rows


# -- S'(t) --------------------------------------------------------------------


@lru_cache(maxsize=16)
def _mangoldt(X):
    lam = np.zeros(X + 1)
    spf = np.zeros(X + 1, dtype=np.int64)  # smallest prime factor
    primes = []
    for i in range(2, X + 1):
        if spf[i] == 0:
            spf[i] = i
            primes.append(i)
        for p in primes:
            if p > spf[i] or i * p > X:
                break
            spf[i * p] = p
    for i in range(2, X + 1):
        p = spf[i]
        m = i
        while m % p == 0:
            m //= p
        if m == 1:
            lam[i] = np.log(p)
    lam.setflags(write=False)
    return lam


def von_mangoldt(X):
    """``Lambda(n)`` for ``n = 0..X`` from a linear sieve (cached)."""
    if X < 1:
        raise ValueError("X must be positive")
    return _mangoldt(int(X))


def sprime_truncated(t, X):
    """``-(1/pi) sum_{n <= X} Lambda(n) n^{-1/2} sin(t log n)``."""
    if X < 2:
        raise ValueError("cutoff must be >= 2")
    lam = von_mangoldt(X)
    n = np.flatnonzero(lam)
    w = lam[n] / np.sqrt(n)
    L = np.log(n.astype(float))
    t_arr = np.asarray(t, dtype=float)
    flat = t_arr.reshape(-1)
    out = np.empty(flat.size)
    step = max(1, (1 << 20) // max(n.size, 1))
    for i in range(0, flat.size, step):
        out[i : i + step] = np.sin(flat[i : i + step, None] * L[None, :]) @ w
    out = -out / np.pi
    return out.reshape(t_arr.shape) if t_arr.shape else float(out[0])
