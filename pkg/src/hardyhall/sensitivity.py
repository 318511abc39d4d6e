"""Zero-sensitivity calculus for sections.

Gradients of zeros in coefficient space, Gram and correlation matrices
(two independent routes), Hessians by the implicit function theorem and
in Coulomb form, and the split of the normalized pairwise drift.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad

from .errors import NonIntegrable, SimplicityViolated, TailTooLarge
from .sections import SIMPLICITY_FLOOR, Window, find_zeros
from .specfun import harmonic_hn, theta_prime

__all__ = [
    "SensitivityBundle",
    "CoulombHessian",
    "DriftTerms",
    "grad_zeros",
    "gram_two_ways",
    "sensitivity",
    "hessian_ift",
    "hessian_trace",
    "hessian_coulomb",
    "chi",
    "ito_drift",
    "collision_path",
    "loglog_slope",
    "dirichlet_poly",
    "dirichlet_meanvalue",
    "matrix_to_json",
    "matrix_from_json",
]


def _check_simple(zc, derivs=None):
    d = zc.derivs if derivs is None else derivs
    floor = SIMPLICITY_FLOOR * zc.deriv_scale
    bad = np.flatnonzero(np.abs(d) < floor)
    if bad.size:
        raise SimplicityViolated(f"|Z'| = {abs(d[bad[0]]):.3e} below floor {floor:.3e} at zero {bad[0]}")


def grad_zeros(section, zc):
    """Matrix ``g[n, k-1] = dt_n/da_k = -cos(psi_nk) / (Z'(t_n) sqrt(k+1))``."""
    _check_simple(zc)
    return -section.partials(zc.zeros) / zc.derivs[:, None]


def gram_two_ways(section, zc):
    """Gram matrix of the zero gradients by two independent formulas.

    ``direct`` is ``g g^T``.  ``trig`` expands the products of cosines into
    ``cos(psi_n - psi_m) + cos(psi_n + psi_m)`` sums over ``k`` with weights
    ``1/(2(k+1))`` and never forms ``g``.
    """
    g = grad_zeros(section, zc)
    direct = g @ g.T
    psi = section.phases(zc.zeros)
    w = 1.0 / np.arange(2, section.N + 2, dtype=float)
    M = zc.M
    trig = np.empty((M, M))
    zp = zc.derivs
    for n in range(M):
        diff = np.cos(psi[n][None, :] - psi)
        summ = np.cos(psi[n][None, :] + psi)
        trig[n] = ((diff + summ) @ w) / (2.0 * zp[n] * zp)
        trig[n, n] = (np.sum(0.5 * w) + np.cos(2 * psi[n]) @ (0.5 * w)) / zp[n] ** 2
    return direct, trig


@dataclass
class SensitivityBundle:
    grads: np.ndarray
    gram: np.ndarray
    norms: np.ndarray
    rho: np.ndarray
    zeros: np.ndarray

    def to_dict(self):
        return {
            "zeros": self.zeros.tolist(),
            "grads": matrix_to_json(self.grads),
            "gram": matrix_to_json(self.gram),
            "norms": self.norms.tolist(),
            "rho": matrix_to_json(self.rho),
        }

    def to_json(self):
        return json.dumps(self.to_dict())


def sensitivity(section, zc):
    g = grad_zeros(section, zc)
    G = g @ g.T
    G = 0.5 * (G + G.T)
    norms = np.sqrt(np.diag(G))
    rho = G / np.outer(norms, norms)
    np.fill_diagonal(rho, 1.0)
    rho = np.clip(rho, -1.0, 1.0)
    return SensitivityBundle(g, G, norms, rho, zc.zeros.copy())


def _ift_pieces(section, zc):
    t = zc.zeros
    _, zp, zpp = section.derivs(t, 2)
    _check_simple(zc, zp)
    g = -section.partials(t) / zp[:, None]
    return g, zp, zpp, section.mixed(t)


def hessian_ift(section, zc, n):
    """``d^2 t_n / da_i da_j`` from differentiating ``Z(t_n(a); a) = 0`` twice.

    With ``Z`` affine in ``a`` the result is
    ``-(Z'' g_i g_j + Z_ti g_j + Z_tj g_i) / Z'``.
    """
    g, zp, zpp, mix = _ift_pieces(section, zc)
    gn, fti = g[n], mix[n]
    H = np.outer(gn, gn) * zpp[n] + np.outer(fti, gn) + np.outer(gn, fti)
    H = -H / zp[n]
    return 0.5 * (H + H.T)


def hessian_trace(section, zc):
    """``trace`` of every zero's Hessian, without forming the matrices."""
    g, zp, zpp, mix = _ift_pieces(section, zc)
    return -(zpp * np.sum(g * g, axis=1) + 2.0 * np.sum(mix * g, axis=1)) / zp


@dataclass
class CoulombHessian:
    """Coulomb representation of one zero's Hessian and its defect."""

    n: int
    coulomb: np.ndarray
    defect: np.ndarray
    reference: np.ndarray
    tail: float
    region: tuple
    zeros: np.ndarray  # zeros in the enlarged region
    grads: np.ndarray  # their gradients
    center: int  # index of t_n inside ``zeros``

    def pair_term(self, m):
        """The (n, m) summand ``(g_m g_n^T + g_n g_m^T) / (t_n - t_m)``; m indexes ``zeros``."""
        gn, gm = self.grads[self.center], self.grads[m]
        return (np.outer(gm, gn) + np.outer(gn, gm)) / (self.zeros[self.center] - self.zeros[m])


def _enlarged(window, shells):
    lo = max(window.lo - shells * window.width, 50.0)
    return Window.span(lo, window.hi + shells * window.width)


def _tail_estimate(t_n, region, shell, g_n_norm, g_mean):
    """Size of the next shell of the zero sum, with density ``theta'/pi``."""

    def shell_int(a, b):
        if b <= a:
            return 0.0
        val, _ = quad(lambda t: theta_prime(t) / np.pi / abs(t_n - t), a, b, limit=200)
        return val

    left = shell_int(max(region.lo - shell, 50.0), region.lo)
    right = shell_int(region.hi, region.hi + shell)
    return 2.0 * g_n_norm * g_mean * (left + right)


def hessian_coulomb(section, zc, n, shells=5, tail_tol=None, grid_per_unit=None):
    """Coulomb form of ``hessian_ift`` for zero ``n`` of ``zc``.

    Sums ``(g_m g_n^T + g_n g_m^T)/(t_n - t_m)`` over the zeros in the window
    enlarged by ``shells`` widths on each side, adds ``2 g_n g_n^T / t_n``,
    and returns the defect ``hessian_ift - coulomb`` which carries the
    log-derivative of the Hadamard remainder.
    """
    region = _enlarged(zc.window, shells)
    big = find_zeros(section, region, grid_per_unit)
    t_n = zc.zeros[n]
    c = int(np.argmin(np.abs(big.zeros - t_n)))
    if abs(big.zeros[c] - t_n) > 1e-8:
        raise SimplicityViolated(f"zero {t_n!r} not recovered in the enlarged region")
    G = -section.partials(big.zeros) / big.derivs[:, None]
    gn = G[c]
    w = np.zeros(big.M)
    others = np.arange(big.M) != c
    w[others] = 1.0 / (t_n - big.zeros[others])
    s = w @ G
    C = np.outer(s, gn) + np.outer(gn, s) + 2.0 * np.outer(gn, gn) / t_n
    ref = hessian_ift(section, zc, n)
    norms = np.linalg.norm(G, axis=1)
    tail = _tail_estimate(t_n, region, zc.window.width, norms[c], float(np.mean(norms)))
    if tail_tol is not None and tail > tail_tol:
        raise TailTooLarge(f"truncation estimate {tail:.3e} exceeds tolerance {tail_tol:.3e}")
    defect = ref - C
    return CoulombHessian(n, C, 0.5 * (defect + defect.T), ref, tail, (region.lo, region.hi), big.zeros, G, c)


def chi(x):
    """C^2 cutoff: 1 on [0, 1], 0 on [2, inf), quintic smoothstep between."""
    x = np.abs(np.asarray(x, dtype=float))
    u = np.clip(x - 1.0, 0.0, 1.0)
    out = 1.0 - u**3 * (10.0 - 15.0 * u + 6.0 * u**2)
    return out if out.ndim else float(out)


@dataclass
class DriftTerms:
    ctilde: np.ndarray
    phi: np.ndarray
    rgap: np.ndarray
    b_err: np.ndarray
    b_reg: np.ndarray
    b_sko: np.ndarray
    b_1body: np.ndarray
    coulomb: np.ndarray  # sum_m 1/(Xt_n - Xt_m)
    pairwise: np.ndarray  # sum_m |g_m| rho_nm / (X_n - X_m), the uncut drift
    cut: np.ndarray  # chi_N(Xt_n - Xt_m; delta)
    delta: float
    h_N: float

    def total(self):
        return self.coulomb + self.b_err + self.b_reg + self.b_sko + self.b_1body

    def to_dict(self):
        out = {"delta": self.delta, "h_N": self.h_N}
        for name in ("ctilde", "phi", "rgap", "cut"):
            out[name] = matrix_to_json(getattr(self, name))
        for name in ("b_err", "b_reg", "b_sko", "b_1body", "coulomb", "pairwise"):
            out[name] = getattr(self, name).tolist()
        return out

    def to_json(self):
        return json.dumps(self.to_dict())


def ito_drift(section, zc, bundle=None, delta=0.1, xtilde=None, b_sko=None):
    """Split the normalized pairwise drift of each zero by the cutoff ``chi``.

    ``xtilde`` defaults to the zeros themselves (the normalized paths start
    at the zeros).  ``h_N`` is the window width over the zero count.
    """
    if not 0 < delta <= 1:
        raise ValueError("delta must lie in (0, 1]")
    b = sensitivity(section, zc) if bundle is None else bundle
    M = zc.M
    X = zc.zeros
    Xt = X.copy() if xtilde is None else np.asarray(xtilde, dtype=float)
    nu = b.norms
    h_N = zc.window.width / max(M, 1)
    ct = 0.5 * (1.0 + nu[None, :] / nu[:, None]) * b.rho
    phi = 0.5 * (1.0 / nu[:, None] + 1.0 / nu[None, :])
    off = ~np.eye(M, dtype=bool)
    dX = np.where(off, X[:, None] - X[None, :], 1.0)
    dXt = np.where(off, Xt[:, None] - Xt[None, :], 1.0)
    rgap = np.where(off, ct * (1.0 / (phi * dX) - 1.0 / dXt), 0.0)
    term = np.where(off, (ct - 1.0) / dXt + rgap, 0.0)
    cut = np.where(off, chi(np.abs(dXt) / (delta * h_N)), 0.0)
    b_err = np.sum(cut * term, axis=1)
    b_reg = np.sum((1.0 - cut) * term, axis=1)
    coulomb = np.sum(np.where(off, 1.0 / dXt, 0.0), axis=1)
    pairwise = np.sum(np.where(off, nu[None, :] * b.rho / dX, 0.0), axis=1)
    # One-body part: whatever of half the Hessian trace is not window Coulomb.
    half_tr = 0.5 * hessian_trace(section, zc)
    win = np.sum(np.where(off, b.gram / dX, 0.0), axis=1)
    b_1body = (half_tr - win) / nu
    sko = np.zeros(M) if b_sko is None else np.asarray(b_sko, dtype=float)
    return DriftTerms(ct, phi, rgap, b_err, b_reg, sko, b_1body, coulomb, pairwise, cut, float(delta), float(h_N))


def dirichlet_poly(x, N):
    """``D(x) = sum_{k<=N} exp(-i x log(k+1)) / (2(k+1))``."""
    x_arr = np.asarray(x, dtype=float)
    L = np.log(np.arange(2, N + 2, dtype=float))
    w = 0.5 / np.arange(2, N + 2, dtype=float)
    flat = x_arr.reshape(-1)
    out = np.exp(-1j * flat[:, None] * L[None, :]) @ w
    return out.reshape(x_arr.shape) if x_arr.shape else complex(out[0])


def dirichlet_meanvalue(N, interval=None, epsabs=1e-10, epsrel=1e-9):
    """``int |D(2x)|^2 dx`` over ``interval`` (default ``[2N, 2N+2]``)."""
    a, b = (2.0 * N, 2.0 * N + 2.0) if interval is None else interval
    # Oscillation frequency up to 2 log(N+1): give quad enough subintervals.
    limit = int(max(200, 4 * (b - a) * np.log(N + 1)))
    val, err = quad(lambda x: abs(dirichlet_poly(2.0 * x, N)) ** 2, a, b, limit=limit, epsabs=epsabs, epsrel=epsrel)
    if not np.isfinite(val) or err > max(epsabs, epsrel * abs(val)) * 100:
        raise NonIntegrable(f"mean value quadrature error {err:.3e}")
    return val


def matrix_to_json(A):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    return {"shape": list(A.shape), "data": A.ravel(order="C").tolist()}


def matrix_from_json(obj):
    return np.asarray(obj["data"], dtype=float).reshape(obj["shape"])


def dirichlet_bound(N):
    """Trivial bound ``|D(x)| <= H_N / 2``."""
    return 0.5 * harmonic_hn(N)


def collision_path(section, window, n, points=13, span=(1e-2, 1e-7), grid_per_unit=None):
    """Shrink the gap between zeros ``n`` and ``n+1`` along a straight line.

    Moves ``a`` along ``grad t_n - grad t_{n+1}`` (which closes the gap to
    first order), locates the first parameter ``s*`` where the zero count
    changes, and samples ``points`` configurations geometrically close to
    it.  Each row holds the gap, the normalized Hessian reference
    ``tr(H_n) / (2 |grad t_n|^2)``, the normalized Coulomb pair term
    ``tr(C_nm) / (2 |grad t_n|^2)``, the normalized defect size, ``ctilde``
    and ``rho`` of the pair.
    """
    from .errors import CollisionSuspected

    zc = find_zeros(section, window, grid_per_unit)
    if not 0 <= n < zc.M - 1:
        raise ValueError("need zeros n and n+1 inside the window")
    g = grad_zeros(section, zc)
    d = g[n] - g[n + 1]
    d = d / np.linalg.norm(d)
    M = zc.M

    def intact(s):
        try:
            return find_zeros(section.with_coeffs(section.coeffs + s * d), window, grid_per_unit).M == M
        except CollisionSuspected:
            return False

    lo, hi = 0.0, 0.05
    while intact(hi):
        lo, hi = hi, 2 * hi
        if hi > 1e3:
            raise ValueError("gap does not close along the gradient-difference line")
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if intact(mid):
            lo = mid
        else:
            hi = mid
    z_end = find_zeros(section.with_coeffs(section.coeffs + lo * d), window, grid_per_unit)
    if z_end.zeros[n + 1] - z_end.zeros[n] > 1e-2 * (zc.zeros[n + 1] - zc.zeros[n]):
        raise ValueError("the count changes along the line without this pair colliding")
    rows = []
    for eps in np.geomspace(span[0], span[1], points):
        s = lo - eps * lo
        sec = section.with_coeffs(section.coeffs + s * d)
        z = find_zeros(sec, window, grid_per_unit)
        b = sensitivity(sec, z)
        ch = hessian_coulomb(sec, z, n, grid_per_unit=grid_per_unit)
        nn = b.norms[n] ** 2
        ref = 0.5 * np.trace(ch.reference) / nn
        pair = 0.5 * np.trace(ch.pair_term(ch.center + 1)) / nn
        dr = ito_drift(sec, z, b)
        rows.append(
            (
                z.zeros[n + 1] - z.zeros[n],
                ref,
                pair,
                float(np.max(np.abs(ch.defect)) / nn),
                dr.ctilde[n, n + 1],
                b.rho[n, n + 1],
            )
        )
    return {"s_star": lo, "direction": d, "rows": np.array(rows)}


def loglog_slope(x, y):
    """Least-squares slope of ``log|y|`` against ``log x``."""
    return float(np.polyfit(np.log(np.asarray(x)), np.log(np.abs(np.asarray(y))), 1)[0])
