import math
from fractions import Fraction

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hardyhall.errors import DomainError
from hardyhall.specfun import (
    ThetaExpansion,
    acc_coeffs,
    core_count,
    core_zero,
    core_zero_index_range,
    harmonic_hn,
    theta,
    theta_prime,
    theta_second,
)


def theta_mp(t):
    """Theta from the log-gamma definition, in high precision."""
    with mpmath.workdps(40):
        t = mpmath.mpf(t)
        return float(mpmath.im(mpmath.loggamma(mpmath.mpf(1) / 4 + 0.5j * t)) - t / 2 * mpmath.log(mpmath.pi))


@pytest.mark.parametrize("t", [50.0, 100.0, 201.5, 965.0, 1e4])
def test_theta_matches_loggamma(t):
    assert theta(t) == pytest.approx(theta_mp(t), abs=1e-9)


def test_theta_at_100_frozen():
    # Frozen from the 40-digit log-gamma evaluation above.
    assert theta(100.0) == pytest.approx(theta_mp(100.0), abs=1e-10)
    assert theta(100.0) == pytest.approx(87.97216523178722, abs=1e-10)


def test_higher_orders_improve():
    t = 60.0
    ref = theta_mp(t)
    errs = [abs(ThetaExpansion(order=k).value(t) - ref) for k in range(4)]
    assert errs[0] > errs[1] > errs[2]


@pytest.mark.parametrize("t", [55.0, 300.0, 2000.0])
def test_derivatives_by_finite_difference(t):
    h = 1e-4
    d1 = (theta(t + h) - theta(t - h)) / (2 * h)
    d2 = (theta_prime(t + h) - theta_prime(t - h)) / (2 * h)
    assert theta_prime(t) == pytest.approx(d1, rel=1e-8)
    assert theta_second(t) == pytest.approx(d2, rel=1e-7)


def test_domain():
    with pytest.raises(DomainError):
        theta(49.9)
    with pytest.raises(DomainError):
        theta_prime(np.array([60.0, 10.0]))


def test_vectorized():
    t = np.linspace(60, 90, 7)
    assert np.allclose(theta(t), [theta(x) for x in t])


def test_core_count_small_windows():
    assert core_count(200, 202) == 1
    # Floor form agrees with counting the solved core zeros directly.
    for lo, hi in [(100, 102), (400, 402), (755, 965)]:
        r = core_zero_index_range(lo, hi)
        zs = [core_zero(n) for n in r]
        assert all(lo <= z <= hi for z in zs)
        assert not lo <= core_zero(r.start - 1) <= hi
        assert not lo <= core_zero(r.stop) <= hi
    assert core_count(755, 965) == 164


def test_core_zero_solves_phase():
    for n in (20, 100, 500):
        t = core_zero(n)
        assert theta(t) == pytest.approx(math.pi * (n + 0.5), abs=1e-10)


@settings(max_examples=40, deadline=None)
@given(st.floats(60, 5000), st.floats(0.1, 30))
def test_core_count_additive(lo, w):
    mid = lo + w / 3
    assert core_count(lo, lo + w) == core_count(lo, mid) + core_count(mid, lo + w) - core_count(mid, mid)


def test_harmonic():
    assert harmonic_hn(1) == 0.5
    assert harmonic_hn(10) == pytest.approx(float(sum(Fraction(1, k + 1) for k in range(1, 11))), rel=1e-15)
    with pytest.raises(ValueError):
        harmonic_hn(0)


@pytest.mark.parametrize("N", [1, 2, 7, 40])
def test_acc_coeffs_against_binomial_sum(N):
    exact = [sum(Fraction(math.comb(n, k), 2 ** (n + 1)) for n in range(k, N + 1)) for k in range(0, N + 1)]
    got = acc_coeffs(N, with_zero=True)
    assert np.allclose(got, [float(x) for x in exact], rtol=1e-14, atol=0)
    assert np.allclose(acc_coeffs(N), got[1:])


def test_acc_coeffs_large_N_bounded():
    a = acc_coeffs(2000)
    assert np.all(np.isfinite(a)) and np.all(a >= 0) and np.all(a <= 1)
    # a_k(N) -> 1 for fixed k as N grows.
    assert a[0] == pytest.approx(1.0, abs=1e-12)
