"""Command-line front end.

Every command accepts ``--seed``, ``--workers``, ``--out`` and ``--config``.
A config file is flat ``key = value`` text (``#`` starts a comment); flags
given on the command line win over it.  Each run writes ``manifest.cfg``
with the fully resolved configuration, so ``<command> --config
out/manifest.cfg`` replays it.

Exit codes: 0 success, 2 numerical-certification failure, 3 invalid config.
Errors are reported on stderr as one JSON object.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .errors import (
    CollisionError,
    CollisionSuspected,
    ConvergenceError,
    DomainError,
    HallSamplingError,
    NonIntegrable,
    ReflectionFailed,
)

EXIT_OK, EXIT_CERT, EXIT_CONFIG = 0, 2, 3

SOURCES = ("zero", "ones", "acc", "random")


class ConfigError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


# -- config files -----------------------------------------------------------


def read_config(path):
    """Parse flat ``key = value`` lines into a dict of strings."""
    out = {}
    try:
        fh = open(path)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    with fh:
        for no, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, val = line.partition("=")
            if not sep or not key.strip():
                raise ConfigError(f"{path}:{no}: expected key = value")
            out[key.strip().replace("-", "_")] = val.strip()
    return out


def write_manifest(path, command, ns):
    keys = sorted(k for k in vars(ns) if k not in ("command", "config", "func"))
    with open(path, "w") as fh:
        fh.write(f"command = {command}\n")
        for k in keys:
            v = getattr(ns, k)
            if v is None:
                continue
            fh.write(f"{k} = {v}\n")


def _config_argv(sub, cfg, command):
    """Turn config entries into flags understood by ``sub``; unknown keys are errors."""
    flags = {}
    for act in sub._actions:
        if act.option_strings and act.dest != "help":
            flags[act.dest] = act
    argv = []
    for k, v in cfg.items():
        if k == "command":
            if v != command:
                raise ConfigError(f"config is for command {v!r}, not {command!r}")
            continue
        if k in ("config",):
            continue
        act = flags.get(k)
        if act is None:
            raise ConfigError(f"unknown config key {k!r} for {command}")
        opt = act.option_strings[-1]
        if isinstance(act, argparse._StoreTrueAction):
            if v.lower() in ("1", "true", "yes", "on"):
                argv.append(opt)
            elif v.lower() not in ("0", "false", "no", "off"):
                raise ConfigError(f"{k} must be a boolean, got {v!r}")
        else:
            argv += [opt, v]
    return argv


# -- shared option groups ----------------------------------------------------


def _common(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default="out")
    p.add_argument("--config", default=None)


def _window_opts(p, require=False):
    p.add_argument("--n", default=None, help="N or a half-open range lo:hi of window indices")
    p.add_argument("--lo", type=float, default=None)
    p.add_argument("--hi", type=float, default=None)
    p.add_argument("--pad-lo", type=float, default=0.0)
    p.add_argument("--pad-hi", type=float, default=0.0)
    p.add_argument("--order", type=int, default=None, help="section order for --lo/--hi windows")
    p.add_argument("--source", choices=SOURCES, default="zero")
    p.add_argument("--half-width", type=float, default=0.2)
    p.add_argument("--grid", type=int, default=None, help="grid points per unit t")


def _parse_n(spec):
    try:
        if ":" in spec:
            a, b = spec.split(":")
            r = list(range(int(a), int(b)))
        else:
            r = [int(spec)]
    except ValueError:
        raise ConfigError(f"bad --n {spec!r}") from None
    if not r:
        raise ConfigError(f"empty --n range {spec!r}")
    return r


def _windows(ns):
    """List of (order, Window) pairs from the window options."""
    from .sections import Window

    try:
        if ns.n is not None:
            return [(N, Window.critical(N, ns.pad_lo, ns.pad_hi)) for N in _parse_n(ns.n)]
        if ns.lo is None or ns.hi is None or ns.order is None:
            raise ConfigError("give --n, or --lo, --hi and --order")
        return [(ns.order, Window.span(ns.lo, ns.hi))]
    except DomainError as exc:
        raise ConfigError(str(exc)) from None


def _section(ns, N, window, stream):
    """Build the section requested by ``--source``; random draws are hall-sampled."""
    from .diffusion import rng_stream
    from .sections import Section, sample_hall_section

    if ns.source == "random":
        sec, rep, _ = sample_hall_section(N, window, rng_stream(ns.seed, stream), half_width=ns.half_width, grid_per_unit=ns.grid)
        return sec, rep
    sec = {"zero": Section.zero, "ones": Section.ones, "acc": Section.acc}[ns.source](N)
    return sec, None


def _pool_map(fn, jobs, workers):
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, jobs))


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(type(o).__name__)


# -- commands -----------------------------------------------------------------


def _zeros_job(args):
    from .sections import find_zeros, hall_certificate

    ns, N, w = args
    sec, rep = _section(ns, N, w, N if w.index is not None else 0)
    if rep is None:
        rep = hall_certificate(sec, w, grid_per_unit=ns.grid)
    zc = find_zeros(sec, w, ns.grid)
    return zc.csv_rows(), {"window": w.to_dict(), "order": N, "M": zc.M, "hall": rep.to_dict()}


def cmd_zeros(ns):
    jobs = [(ns, N, w) for N, w in _windows(ns)]
    res = _pool_map(_zeros_job, jobs, ns.workers)
    rows = [r for rr, _ in res for r in rr]
    _write_csv(os.path.join(ns.out, "zeros.csv"), ["window_index", "j", "t_j", "zprime_j"], rows)
    info = [i for _, i in res]
    _write_json(os.path.join(ns.out, "hall.json"), info)
    print(json.dumps({"zeros": len(rows), "windows": len(info), "hall_certified": all(i["hall"]["certified"] for i in info)}))
    return EXIT_OK


def _hall_job(args):
    from .sections import hall_certificate

    ns, N, w = args
    sec, rep = _section(ns, N, w, N if w.index is not None else 0)
    if rep is None:
        rep = hall_certificate(sec, w, ns.homotopy_steps, ns.grid)
    return N, w, rep


def cmd_hall_check(ns):
    jobs = [(ns, N, w) for N, w in _windows(ns)]
    res = _pool_map(_hall_job, jobs, ns.workers)
    rows = []
    for N, w, rep in res:
        for s, c, g, d in rep.steps:
            rows.append((N, repr(s), "" if c is None else c, "" if g is None else repr(g), "" if d is None else repr(d)))
    _write_csv(os.path.join(ns.out, "homotopy.csv"), ["order", "s", "count", "min_gap", "min_abs_deriv"], rows)
    summary = [{"order": N, "window": w.to_dict(), **rep.to_dict()} for N, w, rep in res]
    _write_json(os.path.join(ns.out, "hall.json"), summary)
    ok = all(r.certified for _, _, r in res)
    print(json.dumps({"certified": ok, "windows": len(res)}))
    return EXIT_OK if ok else EXIT_CERT


def _sim_job(args):
    from .diffusion import DiffusionConfig, run, save_trajectory

    ns, sec, w, i = args
    cfg = DiffusionConfig(dt=ns.dt, horizon=ns.horizon, seed=ns.seed, record_stride=ns.stride, grid_per_unit=ns.grid)
    tr = run(sec, w, cfg, seed_index=i)
    save_trajectory(tr, os.path.join(ns.out, f"traj_{i:04d}"))
    B = tr.bracket / tr.bracket_time
    return [(i, j + 1, k + 1, repr(float(B[j, k]))) for j in range(tr.M) for k in range(tr.M)]


def cmd_simulate(ns):
    from .diffusion import default_dt
    from .experiments import min_pad_window
    from .sections import Window

    if ns.n is None:
        raise ConfigError("simulate needs --n")
    N = int(ns.n)
    if ns.pad is None:
        w = min_pad_window(N)
        ns.pad = w.pad_lo
    try:
        w = Window.critical(N, ns.pad, ns.pad)
    except DomainError as exc:
        raise ConfigError(str(exc)) from None
    if ns.dt is None:
        ns.dt = default_dt(N)
    if ns.trajectories < 1:
        raise ConfigError("--trajectories must be positive")
    sec, _ = _section(ns, N, w, 10**6)
    jobs = [(ns, sec, w, i) for i in range(ns.trajectories)]
    res = _pool_map(_sim_job, jobs, ns.workers)
    rows = [r for rr in res for r in rr]
    _write_csv(os.path.join(ns.out, "brackets.csv"), ["trajectory", "n", "m", "bracket_per_time"], rows)
    print(json.dumps({"trajectories": len(res), "window": w.to_dict(), "dt": ns.dt}))
    return EXIT_OK


def _gue_job(args):
    from .dbm import gue_tridiagonal, unfold_semicircle
    from .diffusion import rng_stream

    M, seed, i = args
    return unfold_semicircle(gue_tridiagonal(M, rng_stream(seed, i)))


def _dbm_job(args):
    from .dbm import dbm_spacing_sample
    from .diffusion import rng_stream

    M, seed, i, systems, t_relax, dt = args
    return dbm_spacing_sample(M, systems, rng_stream(seed, i), t_relax=t_relax, dt=dt)


def cmd_dbm(ns):
    from .dbm import write_spacings

    if ns.m < 32 or ns.count < 1:
        raise ConfigError("need --m >= 32 and --count >= 1")
    per = ns.m - 2 * int(round(ns.m / 3.0)) - 1
    if ns.mode == "gue":
        # One RNG stream per matrix, so the rows do not depend on --workers.
        n = -(-ns.count // per)
        parts = _pool_map(_gue_job, [(ns.m, ns.seed, i) for i in range(n)], ns.workers)
    else:
        chunk = 4
        n = -(-ns.count // (per * chunk))
        jobs = [(ns.m, ns.seed, i, chunk, ns.t_relax, ns.dt) for i in range(n)]
        parts = _pool_map(_dbm_job, jobs, ns.workers)
    s = np.concatenate(parts)[: ns.count]
    write_spacings(os.path.join(ns.out, "spacings.csv"), s, ns.m, ns.count, ns.seed)
    print(json.dumps({"spacings": int(s.size), "mean": float(s.mean()), "mode": ns.mode}))
    return EXIT_OK


def _read_spacing_input(path):
    """Spacings from a ``spacings.csv`` or unfolded gaps from a ``zeros.csv``."""
    from .dbm import read_spacings
    from .stats import unfold_spacings

    with open(path) as fh:
        head = ""
        for line in fh:
            if line.strip() and not line.startswith("#"):
                head = line.strip()
                break
    if head == "spacing":
        return read_spacings(path)[0]
    if head.startswith("window_index"):
        groups = {}
        with open(path) as fh:
            for row in csv.DictReader(fh):
                groups.setdefault(row["window_index"], []).append(float(row["t_j"]))
        out = [unfold_spacings(np.array(v)) for v in groups.values() if len(v) >= 3]
        if not out:
            raise ConfigError("no window in the zeros file has three or more zeros")
        return np.concatenate(out)
    raise ConfigError(f"unrecognized input file {path}")


def cmd_spacings(ns):
    from .stats import ks_distance, wigner_cdf

    if ns.input is None:
        raise ConfigError("spacings needs --input")
    s = _read_spacing_input(ns.input)
    if s.size < 2:
        raise ConfigError("need at least two spacings")
    ks = ks_distance(s)
    edges = np.linspace(0.0, ns.smax, ns.bins + 1)
    counts, _ = np.histogram(s, edges)
    dens = counts / (s.size * np.diff(edges))
    ref = np.diff(wigner_cdf(edges)) / np.diff(edges)
    rows = [(repr(float(a)), repr(float(b)), repr(float(d)), repr(float(r))) for a, b, d, r in zip(edges[:-1], edges[1:], dens, ref)]
    _write_csv(os.path.join(ns.out, "histogram.csv"), ["s_lo", "s_hi", "density", "surmise"], rows)
    summary = [("count", s.size), ("mean", repr(float(s.mean()))), ("ks_surmise", repr(float(ks)))]
    _write_csv(os.path.join(ns.out, "summary.csv"), ["key", "value"], summary)
    print(json.dumps({"count": int(s.size), "mean": float(s.mean()), "ks_surmise": float(ks)}))
    return EXIT_OK


def _pc_job(args):
    from .sections import find_zeros
    from .stats import pc_local

    ns, N, w = args
    sec, _ = _section(ns, N, w, N)
    zc = find_zeros(sec, w, ns.grid)
    core = (2.0 * N, 2.0 * N + 2.0) if (w.pad_lo or w.pad_hi) else None
    r = pc_local(ns.f, zc, N, core=core)
    return (N, repr(float(r.value)), r.count)


def cmd_paircorr(ns):
    from .stats import get_test_function, gue_pc_integral

    try:
        tf = get_test_function(ns.f)
    except (KeyError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    ref = gue_pc_integral(tf)
    if ns.gue_only:
        _write_csv(os.path.join(ns.out, "gue.csv"), ["f", "gue"], [(ns.f, repr(float(ref)))])
        print(f"{ref:.6f}")
        return EXIT_OK
    if ns.n is None:
        raise ConfigError("paircorr needs --n (or --gue-only)")
    wins = _windows(ns)
    rows = _pool_map(_pc_job, [(ns, N, w) for N, w in wins], ns.workers)
    _write_csv(os.path.join(ns.out, "paircorr.csv"), ["N", "pc", "zeros"], rows)
    vals = np.array([float(r[1]) for r in rows])
    print(json.dumps({"f": ns.f, "gue": ref, "mean": float(vals.mean()), "windows": len(rows)}))
    return EXIT_OK


def _decorr_job(args):
    from .sections import Section, Window, find_zeros, hall_certificate
    from .stats import pc_local

    ns, N = args
    w = Window.critical(N)
    sec = Section.ones(N)
    try:
        ok = hall_certificate(sec, w, grid_per_unit=ns.grid).certified
    except CollisionSuspected:
        ok = False
    if not ok:
        return None
    return N, pc_local(ns.f, find_zeros(sec, w, ns.grid), N).value


def cmd_decorr(ns):
    from .stats import decorrelation_table

    if ns.n_hi <= ns.n_lo:
        raise ConfigError("need --n-hi > --n-lo")
    res = [r for r in _pool_map(_decorr_job, [(ns, N) for N in range(ns.n_lo, ns.n_hi)], ns.workers) if r is not None]
    _write_csv(os.path.join(ns.out, "values.csv"), ["N", "pc"], [(N, repr(float(v))) for N, v in res])
    if len(res) < 30:
        raise ConfigError(f"only {len(res)} certified windows; need at least 30")
    idx = np.array([r[0] for r in res])
    vals = np.array([r[1] for r in res])
    bins = [(1, 1), (2, 2), (3, 4), (5, 9), (10, 19), (20, 49), (50, 99), (100, 299)]
    table = decorrelation_table(vals, idx, bins)
    rows = [(r["sep_lo"], r["sep_hi"], r["pairs"], repr(float(r["cov"])), repr(float(r["sigma"]))) for r in table]
    _write_csv(os.path.join(ns.out, "decorr.csv"), ["sep_lo", "sep_hi", "pairs", "cov", "sigma"], rows)
    print(json.dumps({"windows": len(res), "variance": float(vals.var(ddof=1))}))
    return EXIT_OK


def cmd_report(ns):
    from .experiments import CRITERIA, run_criterion

    if ns.suite != "acceptance":
        raise ConfigError(f"unknown suite {ns.suite!r}")
    which = sorted(CRITERIA) if not ns.criteria else [int(x) for x in ns.criteria.split(",")]
    if any(k not in CRITERIA for k in which):
        raise ConfigError(f"criteria must be among {sorted(CRITERIA)}")
    results = []
    for k in which:
        r = run_criterion(k)
        print(f"{'PASS' if r['passed'] else 'FAIL'}  {r['criterion']}  ({r['seconds']} s)", flush=True)
        results.append(r)
    _write_json(os.path.join(ns.out, "summary.json"), {"suite": ns.suite, "results": results, "passed": sum(r["passed"] for r in results), "total": len(results)})
    return EXIT_OK


# -- entry point --------------------------------------------------------------


def build_parser():
    p = _Parser(prog="hardyhall", description="Zeros, sensitivities and statistics of truncated Hardy sections.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("zeros", help="zeros of a section in one or more windows")
    _common(s)
    _window_opts(s)
    s.set_defaults(func=cmd_zeros)

    s = sub.add_parser("hall-check", help="homotopy certificate of a section")
    _common(s)
    _window_opts(s)
    s.add_argument("--homotopy-steps", type=int, default=16)
    s.set_defaults(func=cmd_hall_check)

    s = sub.add_parser("simulate", help="reflected coefficient diffusion")
    _common(s)
    _window_opts(s)
    s.add_argument("--pad", type=float, default=None, help="symmetric padding; default is the smallest giving two core zeros")
    s.add_argument("--dt", type=float, default=None)
    s.add_argument("--horizon", type=float, default=0.001)
    s.add_argument("--trajectories", type=int, default=1)
    s.add_argument("--stride", type=int, default=1)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("dbm", help="GUE or Dyson Brownian motion spacing samples")
    _common(s)
    s.add_argument("--m", type=int, default=200)
    s.add_argument("--count", type=int, default=10000)
    s.add_argument("--mode", choices=("gue", "dbm"), default="gue")
    s.add_argument("--t-relax", type=float, default=1.0)
    s.add_argument("--dt", type=float, default=2e-4)
    s.set_defaults(func=cmd_dbm)

    s = sub.add_parser("spacings", help="spacing histogram and KS distance to the surmise")
    _common(s)
    s.add_argument("--input", default=None)
    s.add_argument("--bins", type=int, default=40)
    s.add_argument("--smax", type=float, default=4.0)
    s.set_defaults(func=cmd_spacings)

    s = sub.add_parser("paircorr", help="local pair correlation against the sine kernel")
    _common(s)
    _window_opts(s)
    s.add_argument("--f", default="bump:3")
    s.add_argument("--gue-only", action="store_true")
    s.set_defaults(func=cmd_paircorr)

    s = sub.add_parser("decorr", help="decorrelation of the all-ones pair correlation across windows")
    _common(s)
    s.add_argument("--n-lo", type=int, default=100)
    s.add_argument("--n-hi", type=int, default=400)
    s.add_argument("--f", default="bump:3")
    s.add_argument("--grid", type=int, default=None)
    s.set_defaults(func=cmd_decorr)

    s = sub.add_parser("report", help="run the acceptance suite")
    _common(s)
    s.add_argument("--suite", default="acceptance")
    s.add_argument("--criteria", default=None, help="comma-separated subset")
    s.set_defaults(func=cmd_report)
    return p, sub


def _error(kind, exc, **extra):
    payload = {"error": kind, "type": type(exc).__name__, "message": str(exc), **extra}
    if hasattr(exc, "to_dict"):
        payload.update(exc.to_dict())
    sys.stderr.write(json.dumps(payload, default=_json_default) + "\n")


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, sub = build_parser()
    try:
        ns = parser.parse_args(argv)
        if ns.command is None:
            raise ConfigError("no command given")
        if ns.config:
            subp = sub.choices[ns.command]
            extra = _config_argv(subp, read_config(ns.config), ns.command)
            ns = parser.parse_args([ns.command] + extra + argv[1:])
        if ns.workers < 1:
            raise ConfigError("--workers must be >= 1")
        os.makedirs(ns.out, exist_ok=True)
        manifest = os.path.join(ns.out, "manifest.cfg")
        write_manifest(manifest, ns.command, ns)
        rc = ns.func(ns)
        # Commands may fill in defaults (padding, step size); echo them too.
        write_manifest(manifest, ns.command, ns)
        return rc
    except ConfigError as exc:
        _error("invalid_config", exc)
        return EXIT_CONFIG
    except (CollisionSuspected, HallSamplingError, ReflectionFailed, ConvergenceError, CollisionError, NonIntegrable) as exc:
        _error("certification_failure", exc)
        return EXIT_CERT
    except (DomainError, ValueError) as exc:
        _error("invalid_config", exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
