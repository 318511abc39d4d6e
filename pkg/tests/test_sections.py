import csv
import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hardyhall.diffusion import rng_stream
from hardyhall.errors import CollisionSuspected, DomainError, HallSamplingError
from hardyhall.sections import Section, Window, find_zeros, hall_certificate, sample_hall_section
from hardyhall.specfun import theta


def z_fsum(a, t):
    """Compensated scalar evaluation of the section, term by term."""
    th = theta(t)
    terms = [math.cos(th)] + [ak / math.sqrt(k + 1) * math.cos(th - t * math.log(k + 1)) for k, ak in enumerate(a, 1)]
    return math.fsum(terms)


def test_value_against_compensated_sum():
    a = np.ones(30)
    for t in (200.0, 61.3, 523.25):
        assert Section(a).value(t) == pytest.approx(z_fsum(a, t), abs=1e-13)


def test_value_random_coefficients():
    rng = np.random.default_rng(0)
    a = rng.normal(size=57)
    t = np.linspace(100, 140, 9)
    assert np.allclose(Section(a).value(t), [z_fsum(a, x) for x in t], atol=1e-12, rtol=0)


def test_derivatives_by_finite_difference():
    s = Section(np.random.default_rng(1).uniform(0.5, 1.5, 40))
    t, h = 133.7, 1e-5
    assert s.dt(t) == pytest.approx((s.value(t + h) - s.value(t - h)) / (2 * h), rel=1e-7)
    assert s.dtt(t) == pytest.approx((s.dt(t + h) - s.dt(t - h)) / (2 * h), rel=1e-6)


def test_partials_and_mixed():
    s = Section(np.random.default_rng(2).uniform(0.5, 1.5, 12))
    t, h = 88.0, 1e-6
    P = s.partials(np.array([t]))[0]
    for k in (0, 5, 11):
        e = np.zeros(12)
        e[k] = h
        fd = (s.with_coeffs(s.coeffs + e).value(t) - s.with_coeffs(s.coeffs - e).value(t)) / (2 * h)
        assert P[k] == pytest.approx(fd, rel=1e-6, abs=1e-10)
    mix = s.mixed(np.array([t]))[0]
    fd = (s.partials(np.array([t + h]))[0] - s.partials(np.array([t - h]))[0]) / (2 * h)
    assert np.allclose(mix, fd, rtol=1e-6, atol=1e-8)


def test_coeffs_read_only():
    s = Section.ones(5)
    with pytest.raises(ValueError):
        s.coeffs[0] = 2.0


def test_constructors():
    assert Section.zero(7).N == 7 and not Section.zero(7).coeffs.any()
    assert np.all(Section.ones(4).coeffs == 1)
    assert Section.acc(10).coeffs.max() <= 1


def test_window_validation():
    with pytest.raises(DomainError):
        Window.critical(20)
    with pytest.raises(ValueError):
        Window(100.0, 100.0)
    with pytest.raises(ValueError):
        Window.critical(60, -1.0, 0.0)
    w = Window.critical(100, 0.5, 1.0)
    assert (w.lo, w.hi, w.width) == (199.5, 203.0, 3.5)


def test_fig1_window_count():
    zc = find_zeros(Section.zero(300), Window.span(755, 965))
    assert zc.M == 164


def test_core_zeros_match_phase_condition():
    w = Window.critical(100, 3, 3)
    zc = find_zeros(Section.zero(100), w)
    ph = np.array([theta(t) for t in zc.zeros]) / np.pi - 0.5
    assert np.allclose(ph, np.round(ph), atol=1e-10)
    assert zc.M == w.core_count


def test_zeros_are_roots_and_stable_under_grid_refinement():
    s = Section.ones(100)
    w = Window.critical(100, 2, 2)
    a = find_zeros(s, w)
    b = find_zeros(s, w, grid_per_unit=64)
    assert a.M == b.M and np.allclose(a.zeros, b.zeros, atol=1e-11)
    assert np.max(np.abs(s.value(a.zeros))) < 1e-10
    assert np.all(np.sign(a.derivs[:-1]) != np.sign(a.derivs[1:]))


def test_coarse_grid_rejected():
    with pytest.raises(ValueError):
        find_zeros(Section.ones(100), Window.critical(100), grid_per_unit=2)


def test_csv_roundtrip():
    zc = find_zeros(Section.ones(80), Window.critical(80, 1, 1))
    rows = list(csv.DictReader(io.StringIO(zc.to_csv())))
    assert [float(r["t_j"]) for r in rows] == zc.zeros.tolist()
    assert [int(r["j"]) for r in rows] == list(range(1, zc.M + 1))


def test_hall_certificate_ones_and_acc():
    for N in (50, 100, 200):
        w = Window.critical(N)
        assert hall_certificate(Section.ones(N), w).certified
        assert hall_certificate(Section.acc(N), w).certified


def test_hall_certificate_detects_failure():
    a = np.zeros(60)
    a[0] = 1e3
    w = Window.critical(60, 1, 1)
    rep = hall_certificate(Section(a), w)
    assert not rep.certified and 0 < rep.failed_at <= 1
    assert rep.reason in ("count change", "collision")
    assert rep.to_dict()["certified"] is False


def test_sampler_reproducible_and_certified():
    w = Window.critical(100, 1, 1)
    s1, rep, _ = sample_hall_section(100, w, rng_stream(3, 0))
    s2, _, _ = sample_hall_section(100, w, rng_stream(3, 0))
    assert rep.certified and np.array_equal(s1.coeffs, s2.coeffs)
    assert np.all(np.abs(s1.coeffs - 1) <= 0.2)


def test_sampler_budget():
    w = Window.critical(60)
    with pytest.raises(HallSamplingError):
        sample_hall_section(60, w, rng_stream(0, 0), center=400.0, half_width=1.0, max_tries=3)


@settings(max_examples=15, deadline=None)
@given(st.integers(30, 150), st.floats(0.0, 2.0), st.integers(0, 2**31 - 1))
def test_count_parity_and_sign_alternation(N, pad, seed):
    """Simple zeros alternate the sign of Z'; the sign change count matches endpoint signs."""
    s = Section(np.random.default_rng(seed).uniform(0.8, 1.2, N))
    w = Window.critical(N, pad, pad)
    try:
        zc = find_zeros(s, w)
    except CollisionSuspected:
        return
    ends = np.sign(s.value(np.array([w.lo, w.hi])))
    assert (zc.M % 2 == 0) == (ends[0] == ends[1])
    assert np.all(zc.derivs[:-1] * zc.derivs[1:] < 0)
