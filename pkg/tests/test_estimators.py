import math
from dataclasses import dataclass

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hardiag.design import DesignProblem, polynomial_design
from hardiag.estimators import (
    AndrewsMonahan,
    BVDataDriven,
    BVFixed,
    Eicker,
    InvalidEstimator,
    KERNELS,
    KernelLRV,
    Vogelsang,
    am_bandwidth,
    autocov_form,
    b_bv,
    c_bv,
    check_assumption5,
    check_assumption7,
    higher_trends,
    j_statistic,
    kernel_weight_matrix,
    lrv,
    rho_hat,
    selection_matrix_A,
)


def trend_dp(n=30, k_F=2):
    R = np.zeros((1, k_F))
    R[0, 1] = 1.0
    return DesignProblem(polynomial_design(n, k_F), R, np.zeros(1), k_F=k_F)


def ols_resid(X, y):
    return y - X @ np.linalg.lstsq(X, y, rcond=None)[0]


# -- kernels -------------------------------------------------------------------


@pytest.mark.parametrize("name", sorted(KERNELS))
def test_kernels_equal_one_at_zero_and_even(name):
    k = KERNELS[name]
    x = np.array([0.0, 0.3, -0.3, 0.9, -0.9])
    v = k(x)
    assert v[0] == pytest.approx(1.0)
    assert v[1] == pytest.approx(v[2]) and v[3] == pytest.approx(v[4])


def test_quadratic_spectral_series_branch_is_continuous():
    k = KERNELS["quadratic_spectral"]
    x = 1e-4
    z = 6 * math.pi * x / 5
    direct = 25 / (12 * math.pi**2 * x**2) * (math.sin(z) / z - math.cos(z))
    assert abs(k(np.array([x * (1 - 1e-9)]))[0] - direct) < 1e-8
    assert abs(k(np.array([0.7]))[0] - 25 / (12 * math.pi**2 * 0.49) * (
        math.sin(6 * math.pi * 0.7 / 5) / (6 * math.pi * 0.7 / 5) - math.cos(6 * math.pi * 0.7 / 5))) < 1e-14


def test_bartlett_weights_psd_rectangular_not():
    assert np.linalg.eigvalsh(kernel_weight_matrix("bartlett", 7, 40))[0] > -1e-12
    assert np.linalg.eigvalsh(kernel_weight_matrix("rectangular", 7, 40))[0] < -1e-3


def test_rectangular_all_ones_when_bandwidth_exceeds_lags():
    assert np.all(kernel_weight_matrix("rectangular", 0.994 * 150, 150) == 1.0)
    assert not np.all(kernel_weight_matrix("rectangular", 0.993 * 150, 150) == 1.0)


def test_invalid_kernel_arguments():
    with pytest.raises(InvalidEstimator):
        kernel_weight_matrix("nope", 3, 5)
    with pytest.raises(InvalidEstimator):
        kernel_weight_matrix("bartlett", 0.0, 5)


@settings(max_examples=25, deadline=None)
@given(st.sampled_from(["bartlett", "parzen", "quadratic_spectral", "daniell"]), st.floats(0.5, 30), st.integers(0, 999))
def test_matrix_form_equals_autocovariance_sum(kernel, M, seed):
    u = np.random.default_rng(seed).standard_normal(25)
    W = kernel_weight_matrix(kernel, M, 25)
    assert lrv(W, u) == pytest.approx(autocov_form(kernel, M, u), rel=1e-10, abs=1e-12)


# -- fixed-W estimators --------------------------------------------------------


def test_kernel_lrv_flags():
    dp = trend_dp()
    assert KernelLRV.from_kernel(dp, "bartlett", 5).nnd_everywhere
    assert not KernelLRV.from_kernel(dp, "rectangular", 5).nnd_everywhere


def test_eicker_identity_is_classical_variance():
    dp = trend_dp(20)
    y = np.random.default_rng(1).standard_normal(20)
    u = ols_resid(dp.X, y)
    O = Eicker(dp).omega(y)
    s2 = u @ u / (20 - 2)
    assert O[0, 0] == pytest.approx(s2 * np.linalg.inv(dp.X.T @ dp.X)[1, 1], rel=1e-12)


def test_eicker_rejects_indefinite_weights():
    dp = trend_dp(6)
    with pytest.raises(InvalidEstimator):
        Eicker(dp, np.diag([1.0, 1, 1, 1, 1, -1]))


# -- Andrews-Monahan -----------------------------------------------------------


def am_oracle(X, y):
    # loop-based reimplementation of the prewhitened QS estimator
    u = ols_resid(X, y)
    n = len(u)
    rh = sum(u[i] * u[i - 1] for i in range(1, n)) / sum(u[i] ** 2 for i in range(n - 1))
    v = np.array([u[i + 1] - rh * u[i] for i in range(n - 1)])
    rt = sum(v[i] * v[i - 1] for i in range(1, n - 1)) / sum(v[i] ** 2 for i in range(n - 2))
    M = 1.3221 * (n * 4 * rt**2 / (1 - rt) ** 4) ** 0.2
    acc = 0.0
    for j in range(-(n - 2), n - 1):
        x = j / M
        if j == 0:
            w = 1.0
        else:
            z = 6 * math.pi * x / 5
            w = 25 / (12 * math.pi**2 * x**2) * (math.sin(z) / z - math.cos(z))
        acc += w * sum(v[t] * v[t + abs(j)] for t in range(n - 1 - abs(j)))
    return acc / n / (1 - rh) ** 2


@pytest.mark.parametrize("seed", range(4))
def test_am_matches_loop_oracle(seed):
    dp = trend_dp(25)
    rng = np.random.default_rng(seed)
    y = np.cumsum(rng.standard_normal(25)) * 0.3 + rng.standard_normal(25)
    est = AndrewsMonahan(dp)
    assert est.nu(y) == pytest.approx(am_oracle(dp.X, y), rel=1e-10)


def test_am_bandwidth_zero_when_rho_tilde_zero():
    assert am_bandwidth(0.0, 50) == 0.0


def test_am_exceptional_set_contains_span_X():
    dp = trend_dp(12)
    est = AndrewsMonahan(dp)
    assert est.in_N(dp.X @ np.array([1.0, 2.0]))
    assert not est.in_N(np.random.default_rng(0).standard_normal(12))


# -- Vogelsang and Bunzel-Vogelsang -------------------------------------------


def wald_oracle(XU, y, m):
    # textbook Wald statistic of the last m coefficients, divided by n
    n = len(y)
    b = np.linalg.solve(XU.T @ XU, XU.T @ y)
    e = y - XU @ b
    s2 = e @ e / n
    V = np.linalg.inv(XU.T @ XU)[-m:, -m:]
    g = b[-m:]
    return g @ np.linalg.solve(s2 * V, g) / n


@pytest.mark.parametrize("i", [1, 2])
def test_j_statistics_match_textbook_wald(i):
    dp = trend_dp(30)
    rng = np.random.default_rng(4)
    U = rng.standard_normal((30, 2))
    y = rng.standard_normal(30)
    XU = np.column_stack([dp.X, U])
    if i == 2:
        A = selection_matrix_A(30)
        want = wald_oracle(A @ XU, A @ y, 2)
    else:
        want = wald_oracle(XU, y, 2)
    assert j_statistic(dp, U, y, i) == pytest.approx(want, rel=1e-9)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.floats(-50, 50).filter(lambda d: abs(d) > 1e-2))
def test_j_statistic_invariance(seed, delta):
    dp = trend_dp(30)
    rng = np.random.default_rng(seed)
    U = higher_trends(30, 2, 3)
    y = rng.standard_normal(30)
    y2 = delta * y + dp.X @ rng.standard_normal(2) * 10
    for i in (1, 2):
        assert j_statistic(dp, U, y2, i) == pytest.approx(j_statistic(dp, U, y, i), rel=1e-8)


def test_vogelsang_beta_uses_partial_sums_for_V_A():
    dp = trend_dp(20)
    y = np.random.default_rng(2).standard_normal(20)
    A = selection_matrix_A(20)
    want = np.linalg.lstsq(A @ dp.X, A @ y, rcond=None)[0]
    assert np.allclose(Vogelsang(dp, V="A").beta(y), want, rtol=1e-10)
    assert Vogelsang(dp, V="I").beta_is_ols and not Vogelsang(dp, V="A").beta_is_ols


def test_vogelsang_rejects_bad_arguments():
    dp = trend_dp(20)
    with pytest.raises(InvalidEstimator):
        Vogelsang(dp, i=3)
    with pytest.raises(InvalidEstimator):
        Vogelsang(dp, U=dp.X[:, :1])


def test_bv_fixed_without_U_uses_partial_sum_ratio():
    dp = trend_dp(20)
    W = kernel_weight_matrix("daniell", 4, 20)
    y = np.random.default_rng(3).standard_normal(20)
    u = ols_resid(dp.X, y)
    A = selection_matrix_A(20)
    ratio = (A @ u) @ (A @ u) / (u @ u) / 20**2
    want = (u @ W @ u / 20) * math.exp(0.7 * ratio) * np.linalg.inv(dp.X.T @ dp.X)[1, 1]
    assert BVFixed(dp, W, c=0.7).omega(y)[0, 0] == pytest.approx(want, rel=1e-10)


def test_bv_bandwidth_and_polynomials():
    a, abar = (0.1, 0.2, 0.3), (0.2, 0.6)
    assert b_bv(a, abar, 0.0) == pytest.approx(0.1)
    assert b_bv(a, abar, 0.2) == pytest.approx(0.3)
    assert b_bv(a, abar, 0.9) == pytest.approx(0.6)
    assert c_bv((1.0, 2.0, 3.0), 0.5) == pytest.approx(1 + 1 + 0.75)


def test_bv_datadriven_critical_value_and_minimum_bandwidth():
    dp = trend_dp(40)
    est = BVDataDriven(dp, a=(0.01, 0.2), abar=(0.5,), h=(1.0, 2.0), p=(0.0, 1.0))
    rng = np.random.default_rng(8)
    y = rng.standard_normal(40)
    b = est.bandwidth(y)
    assert est.critical_value(y) == pytest.approx(1 + 2 * b)
    if b * 40 < 2:
        assert np.array_equal(est.weight_matrix(y), kernel_weight_matrix("daniell", 2.0, 40))


def test_bv_datadriven_level_set_in_N():
    dp = trend_dp(20)
    est = BVDataDriven(dp)
    assert est.n_kind == "N_BV"
    # y with rho_hat exactly at the threshold is found by the checker's level-set construction
    from hardiag.estimators import _level_set_point

    y = _level_set_point(est, 0.5, np.random.default_rng(0))
    assert y is not None and est.in_N(y)


def test_bv_datadriven_validation():
    dp = trend_dp(20)
    with pytest.raises(InvalidEstimator):
        BVDataDriven(dp, a=(0.1,), abar=(0.5,))
    with pytest.raises(InvalidEstimator):
        BVDataDriven(dp, h=(1.0, 0.0))


# -- assumption checkers -------------------------------------------------------


@dataclass(eq=False)
class NotScaleEquivariant(Eicker):
    """Planted defect: nu grows linearly in the scale of y."""

    def nu(self, y):
        return math.sqrt(super().nu(y))


@dataclass(eq=False)
class IsotropicInverse(Eicker):
    """Planted defect: Omega^{-1} has a fixed isotropic direction."""

    @property
    def P(self):
        return np.diag([1.0, -1.0])


def test_planted_defects_fail():
    dp = trend_dp(20)
    assert not check_assumption5(NotScaleEquivariant(dp)).passed
    dp2 = DesignProblem(polynomial_design(20, 2), np.eye(2), np.zeros(2), k_F=2)
    assert not check_assumption7(IsotropicInverse(dp2)).passed


def test_checkers_pass_on_simple_estimators():
    dp = trend_dp(20)
    for est in (Eicker(dp), KernelLRV.from_kernel(dp, "parzen", 4)):
        assert check_assumption5(est, trials=30).passed
        assert check_assumption7(est, trials=30).passed
