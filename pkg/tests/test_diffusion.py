import csv
import json
import os

import numpy as np
import pytest

from hardyhall.diffusion import (
    DiffusionConfig,
    bracket_summary,
    default_dt,
    initial_state,
    occupation_profile,
    rng_stream,
    run,
    run_many,
    save_trajectory,
    step,
)
from hardyhall.errors import CollisionSuspected, ReflectionFailed
from hardyhall.sections import Section, Window
from hardyhall.sensitivity import grad_zeros, hessian_trace

W50 = Window.critical(50, 1.25, 1.25)


def test_default_dt_scaling():
    assert default_dt(100) == pytest.approx(1e-5)
    assert default_dt(400) < default_dt(100) < default_dt(50)


def test_rng_stream_matches_spawn():
    kids = np.random.SeedSequence(42).spawn(3)
    for i, k in enumerate(kids):
        assert np.array_equal(rng_stream(42, i).random(4), np.random.default_rng(k).random(4))


def test_config_validation():
    with pytest.raises(ValueError):
        DiffusionConfig(dt=0)
    with pytest.raises(ValueError):
        DiffusionConfig(dt=1e-3, horizon=1e-4)
    assert DiffusionConfig(dt=1e-4, horizon=1e-2).n_steps == 100


def test_noise_weights():
    with pytest.raises(ValueError):
        DiffusionConfig(noise_weights=(1.0, -1.0))
    st = initial_state(Section.zero(50), W50)
    w = np.zeros(50)
    w[:3] = 1.0
    cfg = DiffusionConfig(dt=1e-6, horizon=1e-5, noise_weights=tuple(w))
    new, _ = step(st, cfg, W50, rng_stream(3, 0))
    moved = new.coeffs != st.coeffs
    assert moved[:3].all() and not moved[3:].any()
    with pytest.raises(ValueError):
        step(st, DiffusionConfig(dt=1e-6, horizon=1e-5, noise_weights=(1.0,) * 7), W50, rng_stream(3, 0))


def test_initial_state_requires_certificate():
    a = np.zeros(50)
    a[0] = 1e3
    with pytest.raises(CollisionSuspected):
        initial_state(Section(a), W50)


def test_zero_noise_step_is_pure_drift():
    st = initial_state(Section.zero(50), W50)
    cfg = DiffusionConfig(dt=1e-5, horizon=1e-4)
    new, info = step(st, cfg, W50, None, xi=np.zeros(50))
    assert np.array_equal(new.coeffs, st.coeffs)
    assert np.all(info["dz"] == 0) and info["event"] is None
    nu = np.linalg.norm(grad_zeros(st.section, st.zc), axis=1)
    assert np.allclose(info["dbeta"], -0.5 * hessian_trace(st.section, st.zc) / nu * cfg.dt)


def test_step_is_first_order_consistent():
    st = initial_state(Section.ones(50), W50)
    cfg = DiffusionConfig(dt=1e-6, horizon=1e-5)
    xi = rng_stream(0, 0).standard_normal(50)
    new, info = step(st, cfg, W50, None, xi=xi)
    lin = grad_zeros(st.section, st.zc) @ (np.sqrt(cfg.dt) * xi)
    assert np.max(np.abs(info["dz"] - lin)) < 50 * cfg.dt * (1 + np.abs(lin).max())


def test_reflection_at_window_edge():
    st = initial_state(Section.zero(50), W50)
    g0 = grad_zeros(st.section, st.zc)[0]
    margin = st.zc.zeros[0] - W50.lo
    cfg = DiffusionConfig(dt=1e-5, horizon=1e-4)
    # Linear move of the first zero is 2.5x its distance to the lower edge.
    xi = -(2.5 * margin / (np.sqrt(cfg.dt) * g0 @ g0)) * g0
    new, info = step(st, cfg, W50, None, xi=xi)
    assert new.zc.M == st.zc.M
    assert info["event"] is not None
    _, _, label, unit, mag = info["event"]
    assert mag > 0 and np.linalg.norm(unit) == pytest.approx(1.0)
    assert new.zc.zeros[0] >= W50.lo


def test_reflection_failure_raises():
    st = initial_state(Section.zero(50), W50)
    g0 = grad_zeros(st.section, st.zc)[0]
    cfg = DiffusionConfig(dt=1e-5, horizon=1e-4, reflection_max_retries=0)
    xi = -1e6 * g0 / np.linalg.norm(g0)
    with pytest.raises(ReflectionFailed) as exc:
        step(st, cfg, W50, None, xi=xi)
    assert exc.value.step == 0


def test_run_determinism_and_streams():
    cfg = DiffusionConfig(dt=default_dt(50), horizon=20 * default_dt(50), seed=3)
    a = run(Section.zero(50), W50, cfg, seed_index=0)
    b = run(Section.zero(50), W50, cfg, seed_index=0)
    c = run(Section.zero(50), W50, cfg, seed_index=1)
    assert all(np.array_equal(x.zeros, y.zeros) for x, y in zip(a.zero_paths, b.zero_paths))
    assert not np.array_equal(a.zero_paths[-1].zeros, c.zero_paths[-1].zeros)
    assert len(a.times) == cfg.n_steps + 1 and a.bracket_time == pytest.approx(cfg.horizon)


def test_bracket_near_unit_rate():
    cfg = DiffusionConfig(dt=default_dt(50), horizon=100 * default_dt(50), seed=9)
    trs = run_many(Section.zero(50), W50, cfg, 5)
    s = bracket_summary(trs)
    assert 0.8 <= s["diag_mean"] <= 1.2
    assert s["count"] == 5 * trs[0].M


def test_occupation():
    cfg = DiffusionConfig(dt=default_dt(50), horizon=10 * default_dt(50), seed=1)
    trs = run_many(Section.zero(50), W50, cfg, 3)
    with pytest.raises(ValueError):
        occupation_profile(trs, [0.1])
    tr = trs[0]
    # Every step counts once the level exceeds the largest gap.
    assert tr.occupation(10.0) == pytest.approx(cfg.horizon)
    assert tr.occupation(0.0) == 0.0
    assert tr.occupation(0.2) <= tr.occupation(0.4)


def test_save_trajectory(tmp_path):
    cfg = DiffusionConfig(dt=default_dt(50), horizon=5 * default_dt(50), seed=2)
    tr = run(Section.zero(50), W50, cfg)
    save_trajectory(tr, tmp_path / "t")
    meta = json.loads((tmp_path / "t" / "meta.json").read_text())
    assert meta["frames"] == 6 and meta["M"] == tr.M
    with open(tmp_path / "t" / "zeros.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 6 * tr.M
    assert set(os.listdir(tmp_path / "t")) == {"meta.json", "zeros.csv", "xtilde.csv", "events.csv"}
