import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hardyhall.errors import SimplicityViolated, TailTooLarge
from hardyhall.sections import Section, Window, ZeroConfig, find_zeros
from hardyhall.sensitivity import (
    chi,
    collision_path,
    dirichlet_bound,
    dirichlet_meanvalue,
    dirichlet_poly,
    grad_zeros,
    gram_two_ways,
    hessian_coulomb,
    hessian_ift,
    hessian_trace,
    ito_drift,
    loglog_slope,
    matrix_from_json,
    matrix_to_json,
    sensitivity,
)


@pytest.fixture(scope="module")
def case():
    sec = Section(np.random.default_rng(30).uniform(0.8, 1.2, 30))
    w = Window.critical(30, 2.0, 2.0)
    zc = find_zeros(sec, w)
    assert zc.M >= 2
    return sec, w, zc


def _resolve(sec, w, a):
    return find_zeros(sec.with_coeffs(a), w)


def test_gradient_matches_resolve(case):
    sec, w, zc = case
    g = grad_zeros(sec, zc)
    eps = 1e-6
    for k in (0, 7, 29):
        e = np.zeros(sec.N)
        e[k] = eps
        fd = (_resolve(sec, w, sec.coeffs + e).zeros - _resolve(sec, w, sec.coeffs - e).zeros) / (2 * eps)
        assert np.allclose(fd, g[:, k], rtol=1e-5, atol=1e-7 * np.abs(g).max())


def test_gram_routes_agree(case):
    sec, w, zc = case
    d, t = gram_two_ways(sec, zc)
    assert np.max(np.abs(d - t)) <= 1e-12 * np.max(np.abs(d))


def test_bundle_properties(case):
    sec, w, zc = case
    b = sensitivity(sec, zc)
    assert np.allclose(b.gram, b.gram.T)
    assert np.all(np.linalg.eigvalsh(b.gram) > -1e-12 * b.gram.max())
    assert np.allclose(np.diag(b.rho), 1.0) and np.all(np.abs(b.rho) <= 1)
    back = json.loads(b.to_json())
    assert np.array_equal(matrix_from_json(back["gram"]), b.gram)


def test_simplicity_guard(case):
    sec, w, zc = case
    bad = ZeroConfig(zc.zeros, np.zeros_like(zc.derivs), w, zc.deriv_scale)
    with pytest.raises(SimplicityViolated):
        grad_zeros(sec, bad)


def test_hessian_matches_gradient_differences(case):
    sec, w, zc = case
    n = 0
    H = hessian_ift(sec, zc, n)
    assert np.allclose(H, H.T)
    eps = 1e-5
    for j in (0, 11, 29):
        e = np.zeros(sec.N)
        e[j] = eps
        gp = grad_zeros(sec.with_coeffs(sec.coeffs + e), _resolve(sec, w, sec.coeffs + e))[n]
        gm = grad_zeros(sec.with_coeffs(sec.coeffs - e), _resolve(sec, w, sec.coeffs - e))[n]
        assert np.allclose((gp - gm) / (2 * eps), H[:, j], rtol=1e-4, atol=1e-6 * np.abs(H).max())


def test_hessian_trace(case):
    sec, w, zc = case
    tr = hessian_trace(sec, zc)
    assert np.allclose(tr, [np.trace(hessian_ift(sec, zc, n)) for n in range(zc.M)], rtol=1e-12)


def test_coulomb_decomposition(case):
    sec, w, zc = case
    ch = hessian_coulomb(sec, zc, 0)
    assert np.allclose(ch.coulomb + ch.defect, ch.reference, rtol=0, atol=1e-12 * np.abs(ch.reference).max())
    assert ch.tail > 0
    m = ch.center + 1
    P = ch.pair_term(m)
    assert np.allclose(P, P.T)
    with pytest.raises(TailTooLarge):
        hessian_coulomb(sec, zc, 0, tail_tol=1e-12)


def test_collision_path_growth_and_ctilde_sign(case):
    sec, w, zc = case
    rows = collision_path(sec, w, 0, points=9)["rows"]
    assert np.all(np.diff(rows[:, 0]) < 0)
    assert loglog_slope(rows[:, 0], rows[:, 1]) == pytest.approx(-1.0, abs=0.1)
    assert loglog_slope(rows[:, 0], rows[:, 2]) == pytest.approx(-1.0, abs=0.1)
    # The normalized Hessian defect stays bounded while the pair term blows up.
    assert rows[:, 3].max() < 10 * rows[:, 3].min()
    # Merging zeros have opposite-sign gradients: ctilde and rho tend to -1.
    assert rows[-1, 4] == pytest.approx(-1.0, abs=1e-3)
    assert rows[-1, 5] == pytest.approx(-1.0, abs=1e-3)


def test_drift_partition(case):
    sec, w, zc = case
    b = sensitivity(sec, zc)
    xt = zc.zeros + np.linspace(0, 1e-3, zc.M)
    dr = ito_drift(sec, zc, b, delta=0.2, xtilde=xt)
    # Coulomb plus both cut pieces reassemble the uncut pairwise drift.
    assert np.allclose(dr.coulomb + dr.b_err + dr.b_reg, dr.pairwise, rtol=1e-12, atol=1e-12)
    # Half the normalized Hessian trace splits into pairwise plus one-body.
    assert np.allclose(0.5 * hessian_trace(sec, zc) / b.norms, dr.pairwise + dr.b_1body, rtol=1e-10)
    assert np.allclose(dr.total(), dr.pairwise + dr.b_1body)
    assert np.allclose(np.diag(dr.rgap), 0.0)
    json.loads(dr.to_json())


def test_drift_default_xtilde_and_validation(case):
    sec, w, zc = case
    dr = ito_drift(sec, zc)
    assert dr.h_N == pytest.approx(w.width / zc.M)
    with pytest.raises(ValueError):
        ito_drift(sec, zc, delta=0.0)


def test_chi_shape():
    x = np.linspace(0, 3, 3001)
    y = chi(x)
    assert np.all(y[x <= 1] == 1) and np.all(y[x >= 2] == 0)
    assert np.all(np.diff(y) <= 0)
    h = 1e-4
    for a in (1.0, 2.0):
        d1 = (chi(a + h) - chi(a - h)) / (2 * h)
        d2 = (chi(a + h) - 2 * chi(a) + chi(a - h)) / h**2
        assert abs(d1) < 1e-6 and abs(d2) < 1e-2
    assert chi(-1.5) == chi(1.5)


def test_dirichlet_meanvalue_exact():
    N = 12
    a, b = 2.0 * N, 2.0 * N + 2.0
    L = np.log(np.arange(2, N + 2))
    w = 0.5 / np.arange(2, N + 2)
    # Closed form of int |sum w_k e^{-2 i x L_k}|^2 dx.
    dL = 2 * (L[:, None] - L[None, :])
    with np.errstate(divide="ignore", invalid="ignore"):
        I = np.where(dL == 0, b - a, (np.sin(dL * b) - np.sin(dL * a)) / np.where(dL == 0, 1, dL))
    exact = float(w @ I @ w)
    assert dirichlet_meanvalue(N) == pytest.approx(exact, rel=1e-8)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 300), st.floats(0, 1e4))
def test_dirichlet_trivial_bound(N, x):
    assert abs(dirichlet_poly(x, N)) <= dirichlet_bound(N) * (1 + 1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 1000))
def test_matrix_json_roundtrip(r, c, seed):
    A = np.random.default_rng(seed).normal(size=(r, c))
    assert np.array_equal(matrix_from_json(json.loads(json.dumps(matrix_to_json(A)))), A)
