"""Acceptance experiments.

Each ``criterion_*`` function runs one experiment at its stated tolerance
and returns a dict with ``passed`` plus the measured numbers.  Nothing
here adjusts a tolerance to make a check pass.
"""

from __future__ import annotations

import time

import numpy as np

from . import dbm as dbm_mod
from .diffusion import DiffusionConfig, bracket_summary, default_dt, occupation_profile, rng_stream, run_many
from .errors import CollisionSuspected, HallSamplingError
from .sections import Section, Window, find_zeros, hall_certificate, sample_hall_section
from .sensitivity import collision_path, grad_zeros, gram_two_ways, hessian_ift, loglog_slope, sensitivity
from .stats import (
    decorrelation_table,
    get_test_function,
    gue_pc_integral,
    ks_distance,
    ks_two_sample,
    pc_global,
    pc_local,
    unfold_spacings,
)

__all__ = ["CRITERIA", "run_criterion", "run_all", "min_pad_window", "hall_window", "hall_family"]

FIG1_WINDOW = (755.0, 965.0)
FIG1_ORDER = 300
PC_FUNCTION = "bump:3"


def _result(name, passed, started, **metrics):
    return {"criterion": name, "passed": bool(passed), "seconds": round(time.time() - started, 2), **metrics}


def min_pad_window(N, min_zeros=2, step=0.25):
    """Critical window with the smallest symmetric padding holding ``min_zeros`` core zeros."""
    p = 0.0
    while Window.critical(N, p, p).core_count < min_zeros:
        p += step
    return Window.critical(N, p, p)


def hall_window(N, min_zeros=2, pad=0.0):
    """Critical window whose edges sit at midpoints between consecutive core zeros.

    The window covers ``[2N - pad, 2N + 2 + pad]`` and holds at least
    ``min_zeros`` core zeros; each edge has half a core gap of slack, so
    moderately perturbed sections keep their count.
    """
    from .specfun import core_zero, core_zero_index_range

    r = core_zero_index_range(2.0 * N, 2.0 * N + 2.0)
    a, b = r.start, r.stop - 1
    while b - a + 1 < min_zeros:
        b += 1
    lo = 0.5 * (core_zero(a - 1) + core_zero(a))
    while lo > 2.0 * N - pad:
        a -= 1
        lo = 0.5 * (core_zero(a - 1) + core_zero(a))
    hi = 0.5 * (core_zero(b) + core_zero(b + 1))
    while hi < 2.0 * N + 2.0 + pad:
        b += 1
        hi = 0.5 * (core_zero(b) + core_zero(b + 1))
    return Window.critical(N, 2.0 * N - lo, hi - 2.0 * N - 2.0)


def hall_family(N, window, count, seed, half_width=0.2, max_tries=200):
    """``count`` hall-certified sections drawn from the box ``1 +- half_width``."""
    out = []
    for i in range(count):
        rng = rng_stream(seed, N * 100003 + i)
        sec, rep, _ = sample_hall_section(N, window, rng, half_width=half_width, max_tries=max_tries)
        out.append(sec)
    return out


# -- 1, 2: the 164-zero window -------------------------------------------------


def _fig1_sections(count, seed):
    w = Window.span(*FIG1_WINDOW)
    rng = rng_stream(seed, 0)
    secs = []
    tries = 0
    while len(secs) < count:
        sec, rep, k = sample_hall_section(FIG1_ORDER, w, rng)
        tries += k
        secs.append(sec)
    return w, secs, tries


def criterion_1(seed=7, count=10):
    t0 = time.time()
    w = Window.span(*FIG1_WINDOW)
    core = find_zeros(Section.zero(FIG1_ORDER), w).M
    _, secs, tries = _fig1_sections(count, seed)
    gpu = 2 * 16  # independent recount on a doubled grid
    counts = [find_zeros(s, w, gpu).M for s in secs]
    ok = core == 164 and all(c == 164 for c in counts)
    return _result("1 fig1 zero count", ok, t0, core=core, counts=counts, draws=tries)


def criterion_2(seed=11, count=20):
    t0 = time.time()
    w, secs, tries = _fig1_sections(count, seed)
    spacings = [unfold_spacings(find_zeros(s, w), FIG1_ORDER) for s in secs]
    single = [ks_distance(s) for s in spacings]
    agg = ks_distance(np.concatenate(spacings))
    ok = agg <= 0.05 and max(single) <= 0.15
    return _result("2 fig1 spacing law", ok, t0, ks_aggregate=agg, ks_single_max=max(single), realizations=count, draws=tries)


# -- 3, 4, 5: sensitivity oracles ---------------------------------------------


def _random_case(rng, n_lo, n_hi, pad=1.0):
    while True:
        N = int(rng.integers(max(n_lo, int(np.ceil(25 + pad / 2))), n_hi + 1))
        w = Window.critical(N, pad, pad)
        sec = Section(rng.uniform(0.8, 1.2, N))
        try:
            zc = find_zeros(sec, w)
        except CollisionSuspected:
            continue
        if zc.M >= 1:
            return sec, w, zc


def _resolve(sec, w, zc, a):
    z = find_zeros(sec.with_coeffs(a), w)
    if z.M != zc.M:
        raise CollisionSuspected("count changed under perturbation")
    return z


def criterion_3(seed=3, cases=30, eps=1e-6):
    t0 = time.time()
    rng = rng_stream(seed, 0)
    errs = []
    while len(errs) < cases:
        sec, w, zc = _random_case(rng, 25, 50)
        g = grad_zeros(sec, zc)
        fd = np.empty_like(g)
        try:
            for k in range(sec.N):
                e = np.zeros(sec.N)
                e[k] = eps
                fd[:, k] = (_resolve(sec, w, zc, sec.coeffs + e).zeros - _resolve(sec, w, zc, sec.coeffs - e).zeros) / (2 * eps)
        except CollisionSuspected:
            continue
        errs.append(float(np.max(np.abs(fd - g)) / np.max(np.abs(g))))
    return _result("3 gradient oracle", max(errs) <= 1e-5, t0, max_rel_err=max(errs), cases=cases)


def criterion_4(seed=4, cases=20):
    t0 = time.time()
    rng = rng_stream(seed, 0)
    errs = []
    while len(errs) < cases:
        sec, w, zc = _random_case(rng, 25, 100, pad=2.0)
        d, t = gram_two_ways(sec, zc)
        errs.append(float(np.max(np.abs(d - t)) / np.max(np.abs(d))))
    return _result("4 gram two-way", max(errs) <= 1e-10, t0, max_rel_err=max(errs), cases=cases)


def criterion_5(seed=5, cases=10, eps=1e-5):
    t0 = time.time()
    rng = rng_stream(seed, 0)
    errs = []
    while len(errs) < cases:
        sec, w, zc = _random_case(rng, 25, 30)
        n = int(rng.integers(0, zc.M))
        H = hessian_ift(sec, zc, n)
        fd = np.empty_like(H)
        try:
            for j in range(sec.N):
                e = np.zeros(sec.N)
                e[j] = eps
                zp = _resolve(sec, w, zc, sec.coeffs + e)
                zm = _resolve(sec, w, zc, sec.coeffs - e)
                gp = grad_zeros(sec.with_coeffs(sec.coeffs + e), zp)[n]
                gm = grad_zeros(sec.with_coeffs(sec.coeffs - e), zm)[n]
                fd[:, j] = (gp - gm) / (2 * eps)
        except CollisionSuspected:
            continue
        errs.append(float(np.max(np.abs(fd - H)) / np.max(np.abs(H))))
    # Near-collision growth along a gap-shrinking line.
    while True:
        N = int(rng.integers(26, 31))
        w = Window.critical(N, 2.0, 2.0)
        sec = Section(rng.uniform(0.8, 1.2, N))
        try:
            zc = find_zeros(sec, w)
        except CollisionSuspected:
            continue
        if zc.M < 2:
            continue
        try:
            path = collision_path(sec, w, 0)
        except ValueError:
            continue
        break
    rows = path["rows"]
    slope_ref = loglog_slope(rows[:, 0], rows[:, 1])
    slope_pair = loglog_slope(rows[:, 0], rows[:, 2])
    defect_bounded = float(np.max(rows[:, 3]) / np.min(rows[:, 3]))
    ok = max(errs) <= 1e-4 and abs(slope_pair + 1) <= 0.1 and abs(slope_ref + 1) <= 0.1
    return _result(
        "5 hessian oracle",
        ok,
        t0,
        max_rel_err=max(errs),
        slope_coulomb=slope_pair,
        slope_reference=slope_ref,
        defect_spread=defect_bounded,
        ctilde_last=float(rows[-1, 4]),
    )


# -- 6: correlation decay ------------------------------------------------------


def rho_profile(Ns=(50, 100, 200, 400), sections=30, seed=6):
    out = {}
    for N in Ns:
        w = hall_window(N)
        vals = []
        for sec in hall_family(N, w, sections, seed):
            b = sensitivity(sec, find_zeros(sec, w))
            M = b.rho.shape[0]
            vals.extend(np.abs(b.rho[~np.eye(M, dtype=bool)]))
        out[N] = float(np.mean(vals))
    return out


def criterion_6(seed=6, sections=100):
    t0 = time.time()
    Ns = (50, 100, 200, 400)
    prof = rho_profile(Ns, sections, seed)
    vals = np.array([prof[N] for N in Ns])
    decreasing = bool(np.all(np.diff(vals) < 0))
    expo = -loglog_slope(np.log(Ns), vals)
    ok = decreasing and 0.3 <= expo <= 0.7
    return _result("6 rho decay", ok, t0, mean_abs_rho=prof, exponent=expo, decreasing=decreasing)


# -- 7, 8: diffusion ------------------------------------------------------------


def criterion_7(seed=17, trajectories=20, horizon=0.005, workers=1):
    t0 = time.time()
    out = {}
    for N in (50, 100, 200):
        w = min_pad_window(N)
        cfg = DiffusionConfig(dt=default_dt(N), horizon=horizon, seed=seed)
        trs = run_many(Section.zero(N), w, cfg, trajectories, workers)
        out[N] = bracket_summary(trs)
    diag_ok = all(0.9 <= out[N]["diag_mean"] <= 1.1 for N in out)
    offs = [out[N]["off_mean"] for N in (50, 100, 200)]
    ok = diag_ok and offs[0] > offs[1] > offs[2]
    return _result("7 diffusion brackets", ok, t0, brackets=out)


def near_collision_start(section, window, gap_fraction=0.02):
    """Push ``section`` along the gap-closing line of its closest pair until
    that gap is ``gap_fraction * h_N`` (``h_N`` = width over zero count)."""
    zc = find_zeros(section, window)
    if zc.M < 2:
        raise ValueError("need two zeros in the window")
    n = int(np.argmin(zc.gaps()))
    target = gap_fraction * window.width / zc.M
    g = grad_zeros(section, zc)
    d = g[n] - g[n + 1]
    d = d / np.linalg.norm(d)

    def gap(s):
        try:
            z = find_zeros(section.with_coeffs(section.coeffs + s * d), window)
        except CollisionSuspected:
            return -1.0
        return z.zeros[n + 1] - z.zeros[n] if z.M == zc.M else -1.0

    lo, hi = 0.0, 0.05
    while gap(hi) > target:
        lo, hi = hi, 2.0 * hi
    for _ in range(50):
        mid = 0.5 * (lo + hi)
        if gap(mid) > target:
            lo = mid
        else:
            hi = mid
    return section.with_coeffs(section.coeffs + lo * d)


def occupation_experiment(N=50, trajectories=20, horizon=0.1, seed=18, deltas=None, gap_fraction=0.02):
    """Occupation of ``{min gap <= delta h_N}`` for runs started next to a collision."""
    from .diffusion import run

    deltas = np.round(np.arange(0.05, 0.4001, 0.05), 2) if deltas is None else deltas
    w = hall_window(N)
    cfg = DiffusionConfig(dt=default_dt(N), horizon=horizon, seed=seed)
    trs = []
    for i, sec in enumerate(hall_family(N, w, trajectories, seed)):
        trs.append(run(near_collision_start(sec, w, gap_fraction), w, cfg, seed_index=i))
    return occupation_profile(trs, deltas), trs


def linear_fit(x, y):
    C, c0 = np.polyfit(x, y, 1)
    rng_ = abs(C) * (max(x) - min(x))
    return float(C), float(c0), float(rng_)


def criterion_8(seed=18, trajectories=20, horizon=0.1):
    t0 = time.time()
    rows, _ = occupation_experiment(50, trajectories, horizon, seed)
    d = np.array([r[0] for r in rows])
    occ = np.array([r[1] for r in rows])
    C, c0, span = linear_fit(d, occ)
    ok = span > 0 and abs(c0) <= 0.1 * span
    return _result("8 occupation linearity", ok, t0, deltas=d.tolist(), occupation=occ.tolist(), slope=C, intercept=c0, fit_range=span)


# -- 9, 10: references -----------------------------------------------------------


def criterion_9(seed=9, M=200, systems=24, dt=5e-4, gue_count=100000):
    t0 = time.time()
    rng = rng_stream(seed, 0)
    g = dbm_mod.gue_spacing_sample(M, gue_count, rng)
    d = dbm_mod.dbm_spacing_sample(M, systems, rng_stream(seed, 1), t_relax=1.0, dt=dt)
    ks = ks_two_sample(d, g)
    return _result("9 dbm vs gue", ks <= 0.05, t0, ks=ks, dbm_spacings=int(d.size), gue_spacings=int(g.size))


def criterion_10():
    t0 = time.time()
    v = gue_pc_integral("sinc2")
    return _result("10 sine-kernel quadrature", abs(v - 1 / 3) <= 1e-6, t0, value=v)


# -- 11, 12, 13: pair correlation -----------------------------------------------


def padded_pc_window(N, f):
    """Critical window padded by at least the support of ``f`` in t-units."""
    tf = get_test_function(f)
    return hall_window(N, 1, tf.radius * 2 * np.pi / np.log(N))


def pc_convergence(f=PC_FUNCTION, Ns=(100, 200, 400), sections=50, seed=21):
    tf = get_test_function(f)
    target = gue_pc_integral(tf)
    rows = {}
    for N in Ns:
        w = padded_pc_window(N, tf)
        vals = []
        for sec in hall_family(N, w, sections, seed):
            zc = find_zeros(sec, w)
            vals.append(pc_local(tf, zc, N, core=(2.0 * N, 2.0 * N + 2.0)).value)
        vals = np.array(vals)
        rows[N] = {
            "mean": float(vals.mean()),
            "sem": float(vals.std(ddof=1) / np.sqrt(vals.size)),
            "gap": float(abs(vals.mean() - target)),
        }
    return target, rows


def criterion_11(f=PC_FUNCTION, sections=50, seed=21):
    t0 = time.time()
    Ns = (100, 200, 400)
    target, rows = pc_convergence(f, Ns, sections, seed)
    gaps = [rows[N]["gap"] for N in Ns]
    tol = 0.1 * abs(target) + 0.05
    ok = gaps[0] > gaps[1] > gaps[2] and gaps[-1] <= tol
    return _result("11 pc convergence", ok, t0, f=f, gue=target, rows=rows, tolerance=tol)


def global_family(T_max, seed, N0=25):
    """Hall-sampled sections on ``[2N, 2N+2]`` for ``N0 <= N <= T_max/2 - 1``.

    Returns ``(family, skipped)``; windows where no box draw certifies are
    left out of the family.
    """
    fam, skipped = {}, []
    for N in range(N0, int(T_max // 2)):
        w = Window.critical(N)
        if w.core_count == 0:
            fam[N] = np.empty(0)
            continue
        try:
            sec, _, _ = sample_hall_section(N, w, rng_stream(seed, N))
        except HallSamplingError:
            skipped.append(N)
            continue
        fam[N] = find_zeros(sec, w).zeros
    return fam, skipped


def criterion_12(f=PC_FUNCTION, seed=12, Ts=(200, 400, 800, 1600)):
    t0 = time.time()
    fam, skipped = global_family(max(Ts), seed)
    rows = {}
    for T in Ts:
        approx, gen, count = pc_global(f, fam, T)
        rows[T] = {"approx": approx, "genuine": gen, "diff": abs(approx - gen), "zeros": count}
    diffs = [rows[T]["diff"] for T in Ts]
    ok = all(a > b for a, b in zip(diffs, diffs[1:]))
    return _result("12 approx vs genuine", ok, t0, f=f, rows=rows, skipped_windows=skipped)


def ones_values(f, Ns):
    """``PC_N(f; 1)`` on the windows where the all-ones section is hall-certified."""
    tf = get_test_function(f)
    idx, vals, skipped = [], [], []
    for N in Ns:
        w = Window.critical(N)
        sec = Section.ones(N)
        try:
            ok = hall_certificate(sec, w).certified
        except CollisionSuspected:
            ok = False
        if not ok:
            skipped.append(N)
            continue
        idx.append(N)
        vals.append(pc_local(tf, find_zeros(sec, w), N).value)
    return np.array(idx), np.array(vals), skipped


def criterion_13(f=PC_FUNCTION, Ns=range(100, 400), blocks=6):
    t0 = time.time()
    idx, vals, skipped = ones_values(f, Ns)
    # The expected value drifts with N (more zeros per window); the null band
    # assumes a stationary mean, so fluctuations are taken about a log N fit.
    A = np.vstack([np.log(idx), np.ones(idx.size)]).T
    mean_fit = np.linalg.lstsq(A, vals, rcond=None)[0]
    vals = vals - A @ mean_fit
    bins = [(1, 1), (2, 2), (3, 4), (5, 9), (10, 19), (20, 49), (50, 99), (100, 299)]
    table = decorrelation_table(vals, idx, bins)
    far = [r for r in table if r["sep_lo"] >= 5 and r["pairs"]]
    band_ok = all(abs(r["cov"]) <= 3 * r["sigma"] for r in far)
    # Variance trend over blocks of consecutive windows against log N.
    parts = np.array_split(np.arange(idx.size), blocks)
    logN = np.array([np.log(idx[p]).mean() for p in parts])
    var = np.array([vals[p].var(ddof=1) for p in parts])
    A = np.vstack([logN, np.ones_like(logN)]).T
    coef, res, *_ = np.linalg.lstsq(A, var, rcond=None)
    dof = max(len(var) - 2, 1)
    s2 = float(np.sum((var - A @ coef) ** 2) / dof)
    se = float(np.sqrt(s2 / np.sum((logN - logN.mean()) ** 2)))
    slope = float(coef[0])
    trend_ok = slope - 2 * se <= 0
    return _result(
        "13 decorrelation",
        band_ok and trend_ok,
        t0,
        f=f,
        windows=int(idx.size),
        skipped=len(skipped),
        table=table,
        variance_slope=slope,
        variance_slope_se=se,
        mean_trend=mean_fit.tolist(),
    )


# -- 14: determinism ------------------------------------------------------------


def criterion_14(workdir=None):
    """Manifest replay through the CLI: byte-identical single worker,
    multiset-identical with two workers."""
    import contextlib
    import io
    import os
    import tempfile

    from .cli import main

    t0 = time.time()
    base = tempfile.mkdtemp(prefix="replay-") if workdir is None else workdir

    def digest(d):
        out = {}
        for root, _, files in os.walk(d):
            for fn in sorted(files):
                if fn.endswith(".csv"):
                    p = os.path.join(root, fn)
                    with open(p, "rb") as fh:
                        out[os.path.relpath(p, d)] = fh.read()
        return out

    checks = {}
    commands = {
        "zeros": ["zeros", "--lo", "755", "--hi", "965", "--order", "300", "--source", "random", "--seed", "7"],
        "simulate": ["simulate", "--n", "50", "--pad", "1.25", "--horizon", "0.0005", "--trajectories", "3", "--seed", "5"],
        "dbm": ["dbm", "--m", "64", "--count", "2000", "--seed", "1"],
        "decorr": ["decorr", "--n-lo", "100", "--n-hi", "140", "--f", "bump:3"],
    }
    for name, argv in commands.items():
        a, b, c = (os.path.join(base, f"{name}-{k}") for k in ("a", "b", "c"))
        with contextlib.redirect_stdout(io.StringIO()):
            rc1 = main(argv + ["--out", a, "--workers", "1"])
            rc2 = main([name, "--config", os.path.join(a, "manifest.cfg"), "--out", b])
            rc3 = main(argv + ["--out", c, "--workers", "2"])
        da, db, dc = digest(a), digest(b), digest(c)
        same = rc1 == rc2 == 0 and da == db and len(da) > 0
        multiset = rc3 == 0 and set(da) == set(dc) and all(
            sorted(da[k].splitlines()) == sorted(dc[k].splitlines()) for k in da
        )
        checks[name] = {"byte_identical": same, "multiset_identical": multiset}
    ok = all(v["byte_identical"] and v["multiset_identical"] for v in checks.values())
    return _result("14 determinism", ok, t0, checks=checks)


CRITERIA = {
    1: criterion_1,
    2: criterion_2,
    3: criterion_3,
    4: criterion_4,
    5: criterion_5,
    6: criterion_6,
    7: criterion_7,
    8: criterion_8,
    9: criterion_9,
    10: criterion_10,
    11: criterion_11,
    12: criterion_12,
    13: criterion_13,
    14: criterion_14,
}


def run_criterion(k, **kw):
    return CRITERIA[k](**kw)


def run_all(which=None):
    return [run_criterion(k) for k in (which or sorted(CRITERIA))]
