"""Reflected Brownian motion in coefficient space and the induced zero paths.

One Euler step proposes ``a' = a + sqrt(dt) xi``.  A proposal that loses
or gains a zero in the window, or produces a numerical collision, is
reflected across the hyperplane of the most threatened constraint
(adjacent gap, window edge or an outside neighbour) and retried.  The
difference between the accepted and the proposed increment is the
discrete local time.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .errors import CollisionSuspected, HardyHallError, ReflectionFailed
from .sections import COLLISION_FRACTION, Section, Window, find_zeros, hall_certificate
from .sensitivity import grad_zeros, hessian_trace

__all__ = [
    "DiffusionConfig",
    "State",
    "Trajectory",
    "default_dt",
    "rng_stream",
    "initial_state",
    "step",
    "run",
    "run_many",
    "occupation_profile",
    "bracket_summary",
    "save_trajectory",
]


def default_dt(N):
    """``1e-5`` at ``N = 100``, scaled like ``1 / log(N)^2``."""
    return 1e-5 * (np.log(100.0) / np.log(N)) ** 2


def rng_stream(seed, index=0):
    """Generator for trajectory ``index`` under master ``seed``.

    Uses ``SeedSequence(seed, spawn_key=(index,))``, identical to the
    ``index``-th child of ``SeedSequence(seed).spawn``.
    """
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(index),)))


@dataclass
class DiffusionConfig:
    dt: float = 1e-5
    horizon: float = 0.01
    seed: int = 0
    collision_tol: float = COLLISION_FRACTION
    reflection_max_retries: int = 5
    record_stride: int = 1
    grid_per_unit: Optional[int] = None
    # Per-coefficient noise scales; None is identity covariance.
    noise_weights: Optional[tuple] = None

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.horizon >= self.dt:
            raise ValueError("horizon must be at least dt")
        if not self.collision_tol > 0:
            raise ValueError("collision_tol must be positive")
        if self.reflection_max_retries < 0 or self.record_stride < 1:
            raise ValueError("invalid retry count or record stride")
        if self.noise_weights is not None:
            w = np.asarray(self.noise_weights, dtype=float)
            if w.ndim != 1 or not np.all(np.isfinite(w)) or np.any(w < 0):
                raise ValueError("noise_weights must be a finite nonnegative vector")

    @property
    def n_steps(self):
        return int(round(self.horizon / self.dt))


@dataclass
class State:
    section: Section
    zc: object  # ZeroConfig
    xtilde: np.ndarray
    time: float = 0.0
    step_index: int = 0

    @property
    def coeffs(self):
        return self.section.coeffs


@dataclass
class Trajectory:
    window: Window
    config: DiffusionConfig
    seed_index: int
    times: list = field(default_factory=list)
    coeff_states: list = field(default_factory=list)
    zero_paths: list = field(default_factory=list)
    normalized_paths: list = field(default_factory=list)
    local_time_events: list = field(default_factory=list)
    bracket: Optional[np.ndarray] = None
    bracket_time: float = 0.0
    # Per-step records (every step, independent of record_stride).
    step_dt: list = field(default_factory=list)
    step_min_gap: list = field(default_factory=list)
    step_min_xgap: list = field(default_factory=list)  # normalized paths
    step_dz: list = field(default_factory=list)  # raw zero increments
    step_dxt: list = field(default_factory=list)  # normalized increments

    def record(self, state):
        self.times.append(state.time)
        self.coeff_states.append(state.coeffs.copy())
        self.zero_paths.append(state.zc)
        self.normalized_paths.append(state.xtilde.copy())

    @property
    def M(self):
        return self.zero_paths[0].M

    def occupation(self, delta, h_N=None, normalized=True):
        """``int 1{min gap <= delta h_N} dt`` along the run.

        Gaps are those of the normalized paths ``Xt`` by default, or of the
        zeros themselves with ``normalized=False``.
        """
        h = self.window.width / max(self.M, 1) if h_N is None else h_N
        gaps = np.asarray(self.step_min_xgap if normalized else self.step_min_gap, dtype=float)
        dts = np.asarray(self.step_dt, dtype=float)
        return float(np.sum(dts[gaps <= delta * h])) if gaps.size else 0.0


def initial_state(section, window, config=None, certify=True):
    gpu = None if config is None else config.grid_per_unit
    if certify:
        rep = hall_certificate(section, window, grid_per_unit=gpu)
        if not rep.certified:
            raise CollisionSuspected(f"initial section not hall-certified ({rep.reason})", s=rep.failed_at)
    tol = COLLISION_FRACTION if config is None else config.collision_tol
    zc = find_zeros(section, window, gpu, tol)
    if zc.M != window.core_count:
        raise CollisionSuspected(f"initial count {zc.M} differs from core count {window.core_count}")
    return State(section, zc, zc.zeros.copy())


def _constraints(state, grads, window, config):
    """Linearized boundary constraints ``margin + normal . d >= 0``."""
    t = state.zc.zeros
    M = t.size
    out = []
    for j in range(M - 1):
        out.append((f"gap:{j}", t[j + 1] - t[j], grads[j + 1] - grads[j]))
    if M:
        out.append(("edge:lo", t[0] - window.lo, grads[0]))
        out.append(("edge:hi", window.hi - t[-1], -grads[-1]))
    # Zeros just outside the window may enter it.
    ext = Window.span(max(window.lo - window.width, 50.0), window.hi + window.width)
    try:
        big = find_zeros(state.section, ext, config.grid_per_unit, config.collision_tol)
    except CollisionSuspected:
        return out
    below = big.zeros[big.zeros < window.lo]
    above = big.zeros[big.zeros > window.hi]
    if below.size or above.size:
        gb = -state.section.partials(big.zeros) / big.derivs[:, None]
        if below.size:
            i = int(np.flatnonzero(big.zeros < window.lo)[-1])
            out.append(("out:lo", window.lo - big.zeros[i], -gb[i]))
        if above.size:
            i = int(np.flatnonzero(big.zeros > window.hi)[0])
            out.append(("out:hi", big.zeros[i] - window.hi, gb[i]))
    return out


def _try(state, coeffs, window, config):
    sec = state.section.with_coeffs(coeffs)
    try:
        zc = find_zeros(sec, window, config.grid_per_unit, config.collision_tol)
    except CollisionSuspected:
        return None, "collision"
    if zc.M != state.zc.M:
        return None, "count"
    old = state.zc.zeros
    if zc.M:
        # Ordered assignment must also be the nearest-neighbour assignment.
        ext = np.concatenate([[window.lo - np.inf], old, [window.hi + np.inf]])
        half = 0.5 * np.minimum(np.diff(ext)[:-1], np.diff(ext)[1:])
        if np.any(np.abs(zc.zeros - old) >= half):
            rep = hall_certificate(sec, window, grid_per_unit=config.grid_per_unit)
            if not rep.certified:
                return None, "assignment"
    return (sec, zc), None


def step(state, config, window, rng, xi=None):
    """Advance one Euler step with reflection; returns ``(state, info)``.

    ``info`` carries the step length, the normalized noise increment used
    for the bracket, and the local-time event (or ``None``).
    """
    grads = grad_zeros(state.section, state.zc)
    norms = np.linalg.norm(grads, axis=1)
    N = state.section.N
    if xi is None:
        xi = rng.standard_normal(N)
        if config.noise_weights is not None:
            w = np.asarray(config.noise_weights, dtype=float)
            if w.size != N:
                raise ValueError(f"noise_weights has length {w.size}, section order is {N}")
            xi = xi * w
    dt = config.dt
    constraints = None
    for round_ in range(2):
        proposed = np.sqrt(dt) * xi
        d = proposed.copy()
        last = None
        for attempt in range(config.reflection_max_retries + 1):
            res, why = _try(state, state.coeffs + d, window, config)
            if res is not None:
                return _accept(state, res, grads, norms, proposed, d, dt, last)
            if attempt == config.reflection_max_retries:
                break
            if constraints is None:
                constraints = _constraints(state, grads, window, config)
            label, normal = _pick(constraints, d)
            if normal is None:
                d = 0.5 * d
                last = ("shrink", None)
                continue
            d = d - 2.0 * (d @ normal) * normal
            last = (label, normal)
        dt = 0.5 * dt
    raise ReflectionFailed(
        f"no admissible step after {config.reflection_max_retries} reflections and one halving",
        step=state.step_index,
        seed=config.seed,
    )


def _pick(constraints, d):
    """Most threatened constraint that ``d`` pushes outward; unit normal."""
    best, best_val = (None, None), np.inf
    for label, margin, normal in constraints:
        nn = np.linalg.norm(normal)
        if nn == 0:
            continue
        u = normal / nn
        if d @ u >= 0:
            continue
        pred = (margin + normal @ d) / nn
        if pred < best_val:
            best, best_val = (label, u), pred
    return best


def _accept(state, res, grads, norms, proposed, d, dt, last):
    sec, zc = res
    dz = zc.zeros - state.zc.zeros
    dxt = dz / norms
    push = d - proposed
    mag = float(np.linalg.norm(push))
    event = None
    if mag > 0:
        label = last[0] if last else "reflect"
        event = (state.time + dt, state.step_index + 1, label, push / mag, mag)
    # Measured drift: half the Hessian trace plus the boundary push.
    drift = 0.5 * hessian_trace(state.section, state.zc) / norms
    dbeta = dxt - drift * dt - (grads @ push) / norms
    new = State(sec, zc, state.xtilde + dxt, state.time + dt, state.step_index + 1)
    info = {"dt": dt, "dz": dz, "dxt": dxt, "dbeta": dbeta, "event": event}
    return new, info


def run(section0, window, config, seed_index=0, rng=None, state=None):
    """Iterate :func:`step` to the horizon; returns a :class:`Trajectory`."""
    rng = rng_stream(config.seed, seed_index) if rng is None else rng
    state = initial_state(section0, window, config) if state is None else state
    traj = Trajectory(window, config, seed_index)
    traj.record(state)
    M = state.zc.M
    bracket = np.zeros((M, M))
    for i in range(config.n_steps):
        state, info = step(state, config, window, rng)
        bracket += np.outer(info["dbeta"], info["dbeta"])
        traj.step_dt.append(info["dt"])
        g = state.zc.gaps()
        traj.step_min_gap.append(float(g.min()) if g.size else np.inf)
        xg = np.diff(state.xtilde)
        traj.step_min_xgap.append(float(xg.min()) if xg.size else np.inf)
        traj.step_dz.append(info["dz"])
        traj.step_dxt.append(info["dxt"])
        if info["event"] is not None:
            traj.local_time_events.append(info["event"])
        if (i + 1) % config.record_stride == 0 or i + 1 == config.n_steps:
            traj.record(state)
    traj.bracket = bracket
    traj.bracket_time = state.time
    return traj


def _run_one(args):
    section0, window, config, idx = args
    return run(section0, window, config, seed_index=idx)


def run_many(section0, window, config, count, workers=1):
    """``count`` independent trajectories; stream ``i`` drives trajectory ``i``."""
    jobs = [(section0, window, config, i) for i in range(count)]
    if workers <= 1:
        return [_run_one(j) for j in jobs]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(_run_one, jobs))


def bracket_summary(trajectories):
    """Mean diagonal bracket over time and mean |off-diagonal| bracket over time."""
    diag, off = [], []
    for tr in trajectories:
        B = tr.bracket / tr.bracket_time
        diag.extend(np.diag(B))
        M = B.shape[0]
        if M > 1:
            off.extend(np.abs(B[~np.eye(M, dtype=bool)]))
    return {
        "diag_mean": float(np.mean(diag)),
        "diag_sem": float(np.std(diag, ddof=1) / np.sqrt(len(diag))) if len(diag) > 1 else float("nan"),
        "off_mean": float(np.mean(off)) if off else float("nan"),
        "count": len(diag),
    }


def occupation_profile(trajectories, deltas):
    """Mean occupation time of ``{min normalized gap <= delta h_N}`` for each delta."""
    if len(trajectories) < 20:
        raise ValueError("occupation_profile needs at least 20 trajectories")
    rows = []
    for dl in deltas:
        occ = [tr.occupation(dl) for tr in trajectories]
        rows.append((float(dl), float(np.mean(occ)), float(np.std(occ, ddof=1) / np.sqrt(len(occ)))))
    return rows


def save_trajectory(traj, path):
    """Write ``meta.json``, ``zeros.csv``, ``xtilde.csv`` and ``events.csv``."""
    os.makedirs(path, exist_ok=True)
    meta = {
        "config": asdict(traj.config),
        "seed": traj.config.seed,
        "seed_index": traj.seed_index,
        "window": traj.window.to_dict(),
        "frames": len(traj.times),
        "M": traj.M,
        "bracket_time": traj.bracket_time,
        "bracket": None if traj.bracket is None else traj.bracket.tolist(),
    }
    with open(os.path.join(path, "meta.json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
    with open(os.path.join(path, "zeros.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame", "j", "t_j"])
        for f, zc in enumerate(traj.zero_paths):
            for j, t in enumerate(zc.zeros, 1):
                w.writerow([f, j, repr(float(t))])
    with open(os.path.join(path, "xtilde.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame", "time", "j", "xtilde_j"])
        for f, (tm, xt) in enumerate(zip(traj.times, traj.normalized_paths)):
            for j, x in enumerate(xt, 1):
                w.writerow([f, repr(float(tm)), j, repr(float(x))])
    with open(os.path.join(path, "events.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "step", "constraint", "magnitude", "direction"])
        for tm, st, label, u, mag in traj.local_time_events:
            w.writerow([repr(float(tm)), st, label, repr(float(mag)), " ".join(repr(float(x)) for x in u)])
