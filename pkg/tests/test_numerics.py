import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from hardiag.numerics import (
    DegenerateForm,
    McConfig,
    QuadFormProblem,
    adaptive_gauss_legendre,
    imhof_nonneg_prob,
    mc_expectation,
    normal_block,
    philox_key,
    quadform_nonneg_prob,
    toeplitz_from_spectral,
)
from hardiag.covmodel import ar_spectral, spiked_ar2, tabulated


# -- quadrature -----------------------------------------------------------------


def test_gauss_legendre_sine():
    val = adaptive_gauss_legendre(np.sin, 0.0, math.pi)
    assert abs(val - 2.0) < 1e-13


def test_gauss_legendre_peaked_with_breakpoint():
    # narrow Lorentzian, integral arctan(1/eps)*2*eps/eps
    eps = 1e-4
    f = lambda x: 1.0 / (x**2 + eps**2)
    val = adaptive_gauss_legendre(f, -1.0, 1.0, tol=1e-12, breakpoints=[0.0])
    assert val == pytest.approx(2.0 * math.atan(1.0 / eps) / eps, rel=1e-10)


# -- Toeplitz construction -----------------------------------------------------


def test_toeplitz_quadrature_matches_exact_ar1():
    f = ar_spectral([0.7])
    exact = toeplitz_from_spectral(f, 12)
    quad = toeplitz_from_spectral(f, 12, method="quadrature")
    assert np.abs(exact - quad).max() < 1e-10


def test_toeplitz_quadrature_matches_exact_spiked():
    f = spiked_ar2(0.95, 1.1)
    assert np.abs(toeplitz_from_spectral(f, 10) - toeplitz_from_spectral(f, 10, "quadrature")).max() < 1e-9


def test_tabulated_flat_density_is_identity():
    S = toeplitz_from_spectral(tabulated(np.ones(64)), 6)
    assert np.abs(S - np.eye(6)).max() < 1e-8


# -- Imhof ---------------------------------------------------------------------


@pytest.mark.parametrize("c", [0.001, 0.3, 1.0, 4.0, 50.0])
def test_imhof_two_weights_closed_form(c):
    # P(Z1^2 >= c Z2^2) = 1 - (2/pi) arctan(sqrt(c))
    got = imhof_nonneg_prob(np.array([1.0, -c]), tol=1e-9)
    assert abs(got - (1 - 2 / math.pi * math.atan(math.sqrt(c)))) < 1e-9


@pytest.mark.parametrize("a,b,c", [(1, 5, 0.2), (3, 7, 1.5), (2, 2, 1.0), (4, 20, 0.05)])
def test_imhof_equal_weights_match_f_tail(a, b, c):
    # chi2_a - c chi2_b >= 0  <=>  F_{a,b} >= c b / a
    lam = np.r_[np.ones(a), -c * np.ones(b)]
    oracle = stats.f.sf(c * b / a, a, b)
    assert abs(imhof_nonneg_prob(lam, tol=1e-9) - oracle) < 1e-8


def test_imhof_sign_definite_shortcuts():
    assert imhof_nonneg_prob(np.array([1.0, 2.0])) == 1.0
    assert imhof_nonneg_prob(np.array([-1.0, -2.0])) == 0.0


def test_quadform_drops_tiny_eigenvalues():
    # -1e-14 is below the 1e-12 relative clipping threshold and is treated as zero
    p = QuadFormProblem(np.diag([1.0, -1e-14]), np.eye(2))
    assert quadform_nonneg_prob(p) == 1.0


def test_quadform_degenerate_handling():
    p = QuadFormProblem(np.zeros((3, 3)), np.eye(3))
    with pytest.raises(DegenerateForm):
        quadform_nonneg_prob(p)
    assert quadform_nonneg_prob(p, on_degenerate="one") == 1.0


def test_quadform_degenerate_on_range_of_sigma():
    A = np.diag([0.0, 1.0])
    Sigma = np.diag([1.0, 0.0])
    assert quadform_nonneg_prob(QuadFormProblem(A, Sigma), on_degenerate="one") == 1.0


@pytest.mark.parametrize("tol", [1e-11, 0.02])
def test_quadform_rejects_tolerance_outside_range(tol):
    with pytest.raises(ValueError):
        quadform_nonneg_prob(QuadFormProblem(np.eye(2), np.eye(2)), tol=tol)


def test_quadform_rejects_asymmetric_input():
    with pytest.raises(ValueError):
        QuadFormProblem(np.array([[1.0, 2.0], [0.0, 1.0]]), np.eye(2))


@settings(max_examples=30, deadline=None)
@given(st.floats(0.05, 20.0), st.floats(1e-3, 1e3))
def test_quadform_scale_invariance(c, s2):
    A = np.diag([1.0, 0.5, -c])
    Sigma = np.array([[1.0, 0.3, 0.0], [0.3, 1.0, 0.2], [0.0, 0.2, 1.0]])
    p1 = quadform_nonneg_prob(QuadFormProblem(A, Sigma), tol=1e-9)
    p2 = quadform_nonneg_prob(QuadFormProblem(A, s2 * Sigma), tol=1e-9)
    assert abs(p1 - p2) < 1e-9


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-5, 5).filter(lambda x: abs(x) > 1e-3), min_size=2, max_size=8))
def test_imhof_complement_symmetry(lam):
    lam = np.array(lam)
    # P(Q >= 0) + P(-Q >= 0) = 1 for a continuous form
    total = imhof_nonneg_prob(lam, 1e-9) + imhof_nonneg_prob(-lam, 1e-9)
    assert abs(total - 1.0) < 1e-8


# -- Monte Carlo ---------------------------------------------------------------


def test_normal_block_rows_depend_only_on_index():
    key = philox_key(123)
    whole = normal_block(key, 0, 50, 7)
    part = normal_block(key, 20, 10, 7)
    assert np.array_equal(whole[20:30], part)


def test_normal_block_moments():
    z = normal_block(philox_key(5), 0, 200_000, 3)
    assert abs(z.mean()) < 0.01 and abs(z.std() - 1) < 0.01


def test_mc_independent_of_chunk_and_threads(monkeypatch):
    f = lambda Z: (Z[:, 0] * Z[:, 1] > 0.3).astype(float)
    a = mc_expectation(f, 2, McConfig(25_000, 9, chunk=10_000))
    monkeypatch.setenv("HARDIAG_THREADS", "1")
    b = mc_expectation(f, 2, McConfig(25_000, 9, chunk=777))
    assert a.estimate == b.estimate and a.se == b.se


def test_mc_streams_differ():
    f = lambda Z: Z[:, 0]
    a = mc_expectation(f, 1, McConfig(1000, 9), stream=0)
    b = mc_expectation(f, 1, McConfig(1000, 9), stream=1)
    assert a.estimate != b.estimate


def test_mc_matches_imhof_on_fixed_instance():
    A = np.diag([1.0, 0.7, -0.4, -1.3])
    exact = imhof_nonneg_prob(np.diag(A), 1e-9)
    res = mc_expectation(lambda Z: ((Z**2) @ np.diag(A) >= 0).astype(float), 4, McConfig(200_000, 1))
    assert abs(res.estimate - exact) <= 4 * res.se


def test_mc_excludes_few_nonfinite_and_fails_on_many():
    from hardiag.numerics import NumericalFailure

    def few(Z):
        out = np.ones(len(Z))
        out[:5] = np.nan
        return out

    r = mc_expectation(few, 1, McConfig(1000, 0))
    assert r.excluded == 5 and r.estimate == 1.0
    with pytest.raises(NumericalFailure):
        mc_expectation(lambda Z: np.full(len(Z), np.nan), 1, McConfig(100, 0))
