"""Sections Z_N(t; a), their real zeros in windows, and real-hall certification.

A section of order N is

    Z_N(t; a) = cos(theta(t)) + sum_{k=1}^{N} a_k / sqrt(k+1) * cos(theta(t) - t log(k+1)).

Windows are real intervals ``[lo, hi]``; the critical window of index N is
``[2N - pad_lo, 2N + 2 + pad_hi]``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import CollisionSuspected, DomainError
from .specfun import DEFAULT_THETA, acc_coeffs, core_count, theta_prime

__all__ = [
    "Section",
    "Window",
    "ZeroConfig",
    "HallReport",
    "find_zeros",
    "default_grid_per_unit",
    "hall_certificate",
    "sample_hall_section",
    "SIMPLICITY_FLOOR",
    "COLLISION_FRACTION",
]

SIMPLICITY_FLOOR = 1e-8  # relative to max |Z'| over the window
COLLISION_FRACTION = 1e-6  # relative to the mean zero gap
ROOT_XTOL = 1e-12
_CHUNK_ELEMENTS = 1 << 21


@dataclass(frozen=True)
class Section:
    """A point of coefficient space; ``coeffs[k-1]`` is ``a_k``."""

    coeffs: np.ndarray
    expansion: object = field(default=DEFAULT_THETA, repr=False, compare=False)

    def __post_init__(self):
        a = np.array(self.coeffs, dtype=float).reshape(-1)
        if a.size < 1:
            raise ValueError("a section needs order N >= 1")
        if not np.all(np.isfinite(a)):
            raise ValueError("section coefficients must be finite")
        a.setflags(write=False)
        object.__setattr__(self, "coeffs", a)

    @classmethod
    def zero(cls, N):
        return cls(np.zeros(N))

    @classmethod
    def ones(cls, N):
        return cls(np.ones(N))

    @classmethod
    def acc(cls, N):
        return cls(acc_coeffs(N))

    @property
    def N(self) -> int:
        return self.coeffs.size

    @property
    def logs(self):
        return np.log(np.arange(2, self.N + 2, dtype=float))

    @property
    def scale(self):
        return 1.0 / np.sqrt(np.arange(2, self.N + 2, dtype=float))

    def with_coeffs(self, coeffs):
        return Section(coeffs, self.expansion)

    # -- evaluation -------------------------------------------------------

    def _chunks(self, t):
        step = max(1, _CHUNK_ELEMENTS // max(self.N, 1))
        for i in range(0, t.size, step):
            yield slice(i, i + step)

    def phases(self, t):
        """Matrix ``psi[j, k] = theta(t_j) - t_j log(k+1)``."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        th = self.expansion.value(t)
        return th[:, None] - t[:, None] * self.logs[None, :]

    def _derivs(self, t, order):
        t_arr = np.asarray(t, dtype=float)
        flat = np.atleast_1d(t_arr).reshape(-1)
        th = self.expansion.value(flat)
        thp = self.expansion.prime(flat) if order >= 1 else None
        thpp = self.expansion.second(flat) if order >= 2 else None
        w = self.coeffs * self.scale
        L = self.logs
        out = [np.empty(flat.size) for _ in range(order + 1)]
        for sl in self._chunks(flat):
            tt = flat[sl]
            psi = th[sl, None] - tt[:, None] * L[None, :]
            c = np.cos(psi)
            out[0][sl] = np.cos(th[sl]) + c @ w
            if order >= 1:
                s = np.sin(psi)
                dphi = thp[sl, None] - L[None, :]
                out[1][sl] = -thp[sl] * np.sin(th[sl]) - (dphi * s) @ w
                if order >= 2:
                    out[2][sl] = (
                        -thpp[sl] * np.sin(th[sl])
                        - thp[sl] ** 2 * np.cos(th[sl])
                        - (thpp[sl, None] * s + dphi**2 * c) @ w
                    )
        shape = t_arr.shape
        res = [o.reshape(shape) if shape else float(o[0]) for o in out]
        return res

    def value(self, t):
        """Z_N(t; a)."""
        return self._derivs(t, 0)[0]

    def dt(self, t):
        """dZ_N/dt."""
        return self._derivs(t, 1)[1]

    def dtt(self, t):
        """d^2 Z_N/dt^2."""
        return self._derivs(t, 2)[2]

    def derivs(self, t, order=2):
        """Tuple ``(Z, Z', Z'')`` up to ``order``; one pass over the phases."""
        return tuple(self._derivs(t, order))

    def partials(self, t):
        """``dZ/da_k`` at each t: matrix ``cos(psi) / sqrt(k+1)``."""
        return np.cos(self.phases(t)) * self.scale[None, :]

    def mixed(self, t):
        """``d^2 Z/(dt da_k)``: ``-(theta'(t) - log(k+1)) sin(psi) / sqrt(k+1)``."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        dphi = self.expansion.prime(t)[:, None] - self.logs[None, :]
        return -dphi * np.sin(self.phases(t)) * self.scale[None, :]

    __call__ = value


@dataclass(frozen=True)
class Window:
    """Real interval ``[lo, hi]`` holding the zeros of interest.

    Critical windows have ``index`` N with ``lo = 2N - pad_lo`` and
    ``hi = 2N + 2 + pad_hi``; free windows built by :meth:`span` carry
    ``index=None``.
    """

    lo: float
    hi: float
    index: Optional[int] = None
    pad_lo: float = 0.0
    pad_hi: float = 0.0

    def __post_init__(self):
        if self.pad_lo < 0 or self.pad_hi < 0:
            raise ValueError("window padding must be nonnegative")
        if not self.lo < self.hi:
            raise ValueError(f"empty window [{self.lo}, {self.hi}]")
        if self.lo < DEFAULT_THETA.t_min:
            raise DomainError(f"window starts at {self.lo} < t_min={DEFAULT_THETA.t_min}")
        if self.index is not None:
            if not (
                np.isclose(self.lo, 2 * self.index - self.pad_lo, rtol=0, atol=1e-12)
                and np.isclose(self.hi, 2 * self.index + 2 + self.pad_hi, rtol=0, atol=1e-12)
            ):
                raise ValueError("critical window endpoints do not match index and padding")

    @classmethod
    def critical(cls, N, pad_lo=0.0, pad_hi=0.0):
        return cls(2.0 * N - pad_lo, 2.0 * N + 2.0 + pad_hi, int(N), float(pad_lo), float(pad_hi))

    @classmethod
    def span(cls, lo, hi):
        return cls(float(lo), float(hi))

    @property
    def width(self):
        return self.hi - self.lo

    @property
    def core_count(self) -> int:
        return core_count(self.lo, self.hi)

    def mean_gap(self):
        """Expected zero spacing ``pi / theta'`` at the window midpoint."""
        return np.pi / theta_prime(0.5 * (self.lo + self.hi))

    def shifted(self, k):
        """The window moved by ``k`` widths (same padding, index dropped)."""
        return Window.span(self.lo + k * self.width, self.hi + k * self.width)

    def to_dict(self):
        return {
            "lo": self.lo,
            "hi": self.hi,
            "index": self.index,
            "pad_lo": self.pad_lo,
            "pad_hi": self.pad_hi,
        }


@dataclass
class ZeroConfig:
    """Ordered simple real zeros of a section inside a window."""

    zeros: np.ndarray
    derivs: np.ndarray
    window: Window
    deriv_scale: float = 1.0  # max |Z'| over the window (grid estimate)

    @property
    def M(self) -> int:
        return int(self.zeros.size)

    def gaps(self):
        return np.diff(self.zeros)

    def csv_rows(self):
        idx = "" if self.window.index is None else self.window.index
        return [(idx, j, repr(float(t)), repr(float(d))) for j, (t, d) in enumerate(zip(self.zeros, self.derivs), 1)]

    def to_csv(self, fh=None, header=True):
        own = fh is None
        fh = io.StringIO() if own else fh
        w = csv.writer(fh, lineterminator="\n")
        if header:
            w.writerow(["window_index", "j", "t_j", "zprime_j"])
        w.writerows(self.csv_rows())
        return fh.getvalue() if own else None


def default_grid_per_unit(window):
    """Grid density: at least 16 points per unit and 4 per expected gap."""
    need = 4.0 * theta_prime(window.hi) / np.pi
    return int(max(16, np.ceil(need)))


def _refine(section, lo, hi, flo, fhi, xtol=ROOT_XTOL, max_iter=200):
    """Vectorized Illinois false position with bisection safeguard.

    ``flo`` and ``fhi`` must have opposite signs elementwise.  Returns roots.
    """
    lo, hi, flo, fhi = (np.array(x, dtype=float) for x in (lo, hi, flo, fhi))
    root = np.full(lo.size, np.nan)
    side = np.zeros(lo.size, dtype=int)  # which end was kept last time
    width_ref = hi - lo
    active = np.ones(lo.size, dtype=bool)
    for it in range(max_iter):
        tol = xtol + 4 * np.finfo(float).eps * np.abs(hi)
        done = active & (hi - lo <= tol)
        root[done] = 0.5 * (lo[done] + hi[done])
        active &= ~done
        if not active.any():
            break
        ia = np.flatnonzero(active)
        a, b, fa, fb = lo[ia], hi[ia], flo[ia], fhi[ia]
        c = (a * fb - b * fa) / (fb - fa)
        bisect = ~((c > a) & (c < b))
        if it % 4 == 3:
            # Every fourth step insist on halving progress.
            slow = (b - a) > 0.5 * width_ref[ia]
            bisect |= slow
            width_ref[ia] = b - a
        c = np.where(bisect, 0.5 * (a + b), c)
        fc = section.value(c)
        hit = fc == 0
        if hit.any():
            root[ia[hit]] = c[hit]
            active[ia[hit]] = False
        left = (np.sign(fc) == np.sign(fa)) & ~hit  # root in [c, b]
        right = ~left & ~hit
        il, ir = ia[left], ia[right]
        lo[il], flo[il] = c[left], fc[left]
        hi[ir], fhi[ir] = c[right], fc[right]
        # Illinois: shrink the stale endpoint when the same side moves twice.
        stale_l = il[side[il] == -1]
        fhi[stale_l] *= 0.5
        stale_r = ir[side[ir] == 1]
        flo[stale_r] *= 0.5
        side[il] = -1
        side[ir] = 1
    if active.any():
        root[active] = 0.5 * (lo[active] + hi[active])
    return root


def _hidden_pairs(section, t, z, h):
    """Split same-sign cells hiding a close pair of roots.

    Looks at interior local minima of |z| whose three grid values share a
    sign and whose curvature could carry the parabola across zero.  Returns
    a list of extra brackets ``(lo, hi)``; raises on numerical tangency.
    """
    s = np.sign(z)
    az = np.abs(z)
    i = np.arange(1, z.size - 1)
    same = (s[i - 1] == s[i]) & (s[i] == s[i + 1]) & (s[i] != 0)
    dip = (az[i] <= az[i - 1]) & (az[i] <= az[i + 1])
    curv = z[i - 1] - 2 * z[i] + z[i + 1]
    toward = s[i] * curv > 0
    close = az[i] <= np.abs(curv)
    cand = i[same & dip & toward & close]
    brackets = []
    scale = np.max(az) if az.size else 1.0
    for j in cand:
        sg = s[j]
        res = minimize_scalar(
            lambda x: sg * section.value(x),
            bounds=(t[j - 1], t[j + 1]),
            method="bounded",
            options={"xatol": 1e-13},
        )
        fmin = sg * res.fun
        if np.sign(fmin) == -sg:
            brackets.append((t[j - 1], float(res.x)))
            brackets.append((float(res.x), t[j + 1]))
        elif abs(fmin) <= 1e-12 * max(scale, 1.0):
            raise CollisionSuspected(
                f"tangency near t={res.x:.12g} (min |Z|={abs(fmin):.3e})",
                where=(t[j - 1], t[j + 1]),
            )
    return brackets


def find_zeros(section, window, grid_per_unit=None, collision_fraction=COLLISION_FRACTION):
    """All real zeros of ``section`` in ``window``, refined to ~1e-12.

    Sign changes on a uniform grid are refined by bracketed false position;
    same-sign dips are inspected for hidden close pairs.  Raises
    :class:`CollisionSuspected` when a root is not certifiably simple or
    two roots are closer than the collision tolerance.
    """
    need = 4.0 * theta_prime(window.hi) / np.pi
    if grid_per_unit is None:
        grid_per_unit = default_grid_per_unit(window)
    elif grid_per_unit < need:
        raise ValueError(f"grid_per_unit={grid_per_unit} below required {need:.2f}")
    n = int(np.ceil(window.width * grid_per_unit)) + 1
    t = np.linspace(window.lo, window.hi, n)
    h = t[1] - t[0]
    z = section.value(t)

    exact = t[z == 0]
    s = np.sign(z)
    cells = np.flatnonzero(s[:-1] * s[1:] < 0)
    lo, hi = list(t[cells]), list(t[cells + 1])
    for a, b in _hidden_pairs(section, t, z, h):
        lo.append(a)
        hi.append(b)
    lo, hi = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
    roots = _refine(section, lo, hi, section.value(lo), section.value(hi)) if lo.size else np.empty(0)
    roots = np.sort(np.concatenate([roots, exact]))

    deriv_scale = float(np.max(np.abs(np.diff(z))) / h) if z.size > 1 else 1.0
    derivs = section.dt(roots) if roots.size else np.empty(0)
    floor = SIMPLICITY_FLOOR * deriv_scale
    weak = np.flatnonzero(np.abs(derivs) < floor)
    if weak.size:
        r = roots[weak[0]]
        raise CollisionSuspected(
            f"zero at t={r:.12g} not simple: |Z'|={abs(derivs[weak[0]]):.3e} < floor {floor:.3e}",
            where=(r - h, r + h),
        )
    if roots.size > 1:
        gaps = np.diff(roots)
        tol = collision_fraction * window.mean_gap()
        bad = np.flatnonzero(gaps < tol)
        if bad.size:
            j = bad[0]
            raise CollisionSuspected(
                f"zeros {roots[j]:.12g} and {roots[j + 1]:.12g} closer than {tol:.3e}",
                where=(roots[j], roots[j + 1]),
            )
    return ZeroConfig(roots, derivs, window, deriv_scale)


@dataclass
class HallReport:
    """Outcome of walking the segment ``s * a`` from the core section."""

    certified: bool
    core_count: int
    count: Optional[int]
    steps: list  # (s, count, min_gap, min_abs_deriv)
    failed_at: Optional[float] = None
    reason: Optional[str] = None

    def __bool__(self):
        return self.certified

    def min_gap(self):
        g = [st[2] for st in self.steps if st[2] is not None]
        return min(g) if g else None

    def to_dict(self):
        return {
            "certified": self.certified,
            "core_count": self.core_count,
            "count": self.count,
            "failed_at": self.failed_at,
            "reason": self.reason,
            "steps": [
                {"s": s, "count": c, "min_gap": g, "min_abs_deriv": d} for s, c, g, d in self.steps
            ],
        }


def _step_summary(zc):
    g = float(np.min(zc.gaps())) if zc.M > 1 else None
    d = float(np.min(np.abs(zc.derivs))) if zc.M else None
    return g, d


class _ScaledSection:
    """``Section(s * a)`` that reuses grid sums along the homotopy.

    On a full grid ``Z(t; s a) = cos(theta) + s * S(t)`` with ``S`` independent
    of ``s``; ``cache`` keeps ``(cos(theta), S)`` per grid.  Other points go
    through the ordinary evaluation.
    """

    def __init__(self, section, s, cache):
        self._base = section
        self._sec = section.with_coeffs(s * section.coeffs)
        self._s = s
        self._cache = cache

    def value(self, t):
        if not (isinstance(t, np.ndarray) and t.ndim == 1 and t.size > 64):
            return self._sec.value(t)
        key = (t.size, float(t[0]), float(t[-1]))
        if key not in self._cache:
            d = np.diff(t)
            if not np.allclose(d, d[0], rtol=1e-9, atol=0.0):
                return self._sec.value(t)
            core = np.cos(self._base.expansion.value(t))
            self._cache[key] = (core, self._base.value(t) - core)
        core, tail = self._cache[key]
        return core + self._s * tail

    def __getattr__(self, name):
        return getattr(self._sec, name)


def hall_certificate(section, window, homotopy_steps=16, grid_per_unit=None, strict=False, locate_iters=20):
    """Check that zeros stay real and simple along ``s * a``, ``s`` in [0, 1].

    At each of ``homotopy_steps + 1`` uniformly spaced ``s`` the zeros are
    recomputed; the count must equal the core count throughout.  On failure
    the crossing is localized by bisection in ``s``.  With ``strict`` a
    collision re-raises :class:`CollisionSuspected` carrying ``s``; otherwise
    it is reported as a failed certificate.
    """
    if homotopy_steps < 8:
        raise ValueError("homotopy_steps must be >= 8")
    base = window.core_count
    steps = []
    a = section.coeffs

    cache = {}

    def probe(s):
        return find_zeros(_ScaledSection(section, s, cache), window, grid_per_unit)

    def fail(s_ok, s_bad, reason, exc=None):
        # Bisect to the first failing parameter value.
        for _ in range(locate_iters):
            mid = 0.5 * (s_ok + s_bad)
            try:
                ok = probe(mid).M == base
            except CollisionSuspected:
                ok = False
            if ok:
                s_ok = mid
            else:
                s_bad = mid
        if exc is not None and strict:
            exc.s = s_bad
            raise exc
        return HallReport(False, base, None if exc else steps[-1][1], steps, s_bad, reason)

    s_prev = 0.0
    for i in range(homotopy_steps + 1):
        s = i / homotopy_steps
        try:
            zc = probe(s)
        except CollisionSuspected as exc:
            exc.s = s
            if i == 0:
                raise
            steps.append((s, None, None, None))
            return fail(s_prev, s, "collision", exc)
        g, d = _step_summary(zc)
        steps.append((s, zc.M, g, d))
        if zc.M != base:
            if i == 0:
                raise CollisionSuspected(f"core section count {zc.M} != expected {base}", s=0.0)
            return fail(s_prev, s, "count change")
        s_prev = s
    return HallReport(True, base, base, steps)


def sample_hall_section(N, window, rng, center=1.0, half_width=0.2, max_tries=200, homotopy_steps=16, grid_per_unit=None):
    """Draw ``a`` uniformly from the box ``center +- half_width`` until certified.

    Returns ``(section, report, tries)``; raises HallSamplingError when the
    budget runs out.
    """
    from .errors import HallSamplingError

    for tries in range(1, max_tries + 1):
        a = rng.uniform(center - half_width, center + half_width, size=N)
        sec = Section(a)
        # Cheap endpoint screen; rejected draws need no failure localization.
        try:
            if find_zeros(sec, window, grid_per_unit).M != window.core_count:
                continue
        except CollisionSuspected:
            continue
        rep = hall_certificate(sec, window, homotopy_steps, grid_per_unit, locate_iters=0)
        if rep.certified:
            return sec, rep, tries
    raise HallSamplingError(f"no certified section in {max_tries} draws on [{window.lo}, {window.hi}]")
