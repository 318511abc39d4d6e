"""Reference Coulomb gas at beta = 2: Dyson Brownian motion and GUE samplers.

The DBM convention is ``d lambda_n = dB_n + sum_{m != n} dt / (lambda_n - lambda_m)``
with unit-variance noise; started from zero its law at time ``t`` is GUE
with density proportional to ``|Delta|^2 exp(-sum lambda^2 / (2t))``, whose
semicircle has radius ``2 sqrt(M t)``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh_tridiagonal

from .errors import CollisionError

__all__ = [
    "GasState",
    "drift",
    "dbm_step",
    "dbm_run",
    "semicircle_cdf",
    "semicircle_quantiles",
    "unfold_semicircle",
    "gue_tridiagonal",
    "gue_spacing_sample",
    "dbm_spacing_sample",
    "write_spacings",
    "read_spacings",
]


@dataclass
class GasState:
    """Particles (last axis ordered; leading axes index independent systems)."""

    lam: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.lam = np.asarray(self.lam, dtype=float)
        if np.any(np.diff(self.lam, axis=-1) <= 0):
            raise CollisionError("particles must be strictly increasing")


# Sub-steps never exceed this multiple of the squared smallest gap, so the
# 1/gap drift of a close pair cannot throw a particle past its neighbour.
_GAP_CFL = 0.05


def drift(lam):
    """``sum_{m != n} 1 / (lambda_n - lambda_m)`` along the last axis."""
    lam = np.asarray(lam, dtype=float)
    d = lam[..., :, None] - lam[..., None, :]
    M = lam.shape[-1]
    idx = np.arange(M)
    d[..., idx, idx] = np.inf
    return np.sum(1.0 / d, axis=-1)


def dbm_step(state, dt, rng, max_halvings=8):
    """One Euler-Maruyama step with per-system reject-and-halve.

    Sub-steps are capped at ``0.05 * min_gap**2``.  A system whose ordering
    would still break redraws its increment with half the sub-step, at most
    ``max_halvings`` times in a row; after a successful sub-step the size
    grows back towards ``dt``.  Every system advances by exactly ``dt``.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    lam = state.lam.copy()
    batch = lam.reshape(-1, lam.shape[-1])
    for r in range(batch.shape[0]):
        batch[r] = _advance(batch[r], dt, rng, max_halvings)
    return GasState(batch.reshape(lam.shape), state.time + dt)


def _advance(x, dt, rng, max_halvings):
    remaining = dt
    h = dt
    fails = 0
    while remaining > 1e-15 * dt:
        h = min(h, remaining, _GAP_CFL * np.min(np.diff(x)) ** 2)
        xi = rng.standard_normal(x.size)
        y = x + drift(x) * h + np.sqrt(h) * xi
        if np.all(np.diff(y) > 0):
            x = y
            remaining -= h
            fails = 0
            h = min(2.0 * h, dt)
            continue
        fails += 1
        if fails > max_halvings:
            raise CollisionError(f"ordering broken after {max_halvings} halvings at dt={dt}")
        h = 0.5 * h
    return x


def _batch_step(lam, dt, rng, max_halvings=8):
    """Advance a batch ``(R, M)`` by ``dt`` with per-system adaptive sub-steps.

    Same rule as :func:`dbm_step`, vectorized over the systems still owing
    time.
    """
    lam = lam.copy()
    R = lam.shape[0]
    remaining = np.full(R, dt)
    h = np.full(R, dt)
    fails = np.zeros(R, dtype=int)
    active = np.arange(R)
    while active.size:
        x = lam[active]
        cap = _GAP_CFL * np.min(np.diff(x, axis=-1), axis=-1) ** 2
        hh = np.minimum(np.minimum(h[active], remaining[active]), cap)
        y = x + drift(x) * hh[:, None] + np.sqrt(hh)[:, None] * rng.standard_normal(x.shape)
        ok = np.all(np.diff(y, axis=-1) > 0, axis=-1)
        good, bad = active[ok], active[~ok]
        lam[good] = y[ok]
        remaining[good] -= hh[ok]
        fails[good] = 0
        h[good] = np.minimum(2.0 * hh[ok], dt)
        fails[bad] += 1
        if np.any(fails[bad] > max_halvings):
            raise CollisionError(f"ordering broken after {max_halvings} halvings at dt={dt}")
        h[bad] = 0.5 * hh[~ok]
        active = active[remaining[active] > 1e-15 * dt]
    return lam


def dbm_run(lam0, t_end, dt, rng):
    """Evolve a batch ``(R, M)`` (or a single system) to time ``t_end``."""
    lam = np.atleast_2d(np.asarray(lam0, dtype=float)).copy()
    n = int(np.ceil(t_end / dt - 1e-9))
    h = t_end / n
    for _ in range(n):
        lam = _batch_step(lam, h, rng)
    return lam if np.ndim(lam0) > 1 else lam[0]


def semicircle_cdf(x, M, var=1.0):
    """Expected number of eigenvalues below ``x`` for the semicircle of
    radius ``R = 2 sqrt(M var)``."""
    R = 2.0 * np.sqrt(M * var)
    u = np.clip(np.asarray(x, dtype=float) / R, -1.0, 1.0)
    return M * (0.5 + (u * np.sqrt(1.0 - u * u) + np.arcsin(u)) / np.pi)


def semicircle_quantiles(M, var=1.0):
    """Points ``x_j`` with ``semicircle_cdf(x_j) = j - 1/2``."""
    from scipy.optimize import brentq

    R = 2.0 * np.sqrt(M * var)
    return np.array([brentq(lambda x: semicircle_cdf(x, M, var) - (j + 0.5), -R, R) for j in range(M)])


def unfold_semicircle(lam, var=1.0, keep=1.0 / 3.0):
    """Unfolded nearest-neighbour spacings of the central ``keep`` fraction."""
    lam = np.sort(np.asarray(lam, dtype=float), axis=-1)
    M = lam.shape[-1]
    F = semicircle_cdf(lam, M, var)
    i0 = int(round(M * (1.0 - keep) / 2.0))
    i1 = M - i0
    return np.diff(F[..., i0:i1], axis=-1).reshape(-1)


def gue_tridiagonal(M, rng):
    """Eigenvalues of an ``M x M`` GUE matrix via the beta = 2 tridiagonal model.

    Diagonal ``N(0, 1)``, off-diagonal ``chi_{2k} / sqrt 2`` for
    ``k = M-1, ..., 1``; joint density ``|Delta|^2 exp(-sum lambda^2 / 2)``.
    """
    d = rng.standard_normal(M)
    k = np.arange(M - 1, 0, -1)
    e = np.sqrt(rng.chisquare(2 * k) / 2.0)
    return eigh_tridiagonal(d, e, eigvals_only=True)


def gue_spacing_sample(M, count, rng):
    """``count`` unfolded bulk spacings from independent GUE matrices."""
    if M < 32:
        raise ValueError("M must be at least 32")
    out = []
    have = 0
    while have < count:
        s = unfold_semicircle(gue_tridiagonal(M, rng))
        out.append(s)
        have += s.size
    return np.concatenate(out)[:count]


def dbm_spacing_sample(M, systems, rng, t_relax=1.0, t0=1.0, dt=2e-4):
    """Bulk spacings of ``systems`` DBM runs started on a rigid semicircle lattice.

    The start is the quantile lattice of the variance-``t0`` semicircle; after
    time ``t_relax`` the macroscopic profile is the variance ``t0 + t_relax``
    semicircle, used for unfolding.
    """
    lam0 = np.tile(semicircle_quantiles(M, t0), (systems, 1))
    lam = dbm_run(lam0, t_relax, dt, rng)
    return unfold_semicircle(lam, t0 + t_relax)


def write_spacings(path, spacings, M, count, seed):
    with open(path, "w", newline="") as fh:
        fh.write(f"# M={M} count={count} seed={seed}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["spacing"])
        for s in spacings:
            w.writerow([repr(float(s))])


def read_spacings(path):
    meta = {}
    vals = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                for tok in line[1:].split():
                    k, _, v = tok.partition("=")
                    meta[k] = v
                continue
            if line == "spacing":
                continue
            vals.append(float(line))
    return np.array(vals), meta
