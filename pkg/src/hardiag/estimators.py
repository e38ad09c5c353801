"""Coefficient and covariance estimators behind the F-type statistics.

Every shipped estimator has the scalar form Omega(y) = nu(y) * P with a
fixed positive definite q x q matrix P, so an estimator is described by
``beta(y)``, ``nu(y)``, ``P`` and membership in its exceptional set N.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Literal, Optional, Sequence

import numpy as np

from .design import DesignProblem, SubspaceBasis

KernelName = Literal["bartlett", "parzen", "quadratic_spectral", "daniell", "rectangular"]

SPAN_TOL = 1e-12  # relative size of OLS residuals treated as y in span(X)
RHO_GUARD = 1e-24


class InvalidEstimator(ValueError):
    pass


# ---------------------------------------------------------------------------
# kernels


def bartlett(x):
    return np.clip(1.0 - np.abs(x), 0.0, None)


def parzen(x):
    a = np.abs(x)
    return np.where(a <= 0.5, 1.0 - 6.0 * a**2 + 6.0 * a**3,
                    np.where(a <= 1.0, 2.0 * (1.0 - a) ** 3, 0.0))


def quadratic_spectral(x):
    # Andrews (1991): 25/(12 pi^2 x^2) (sin(6 pi x/5)/(6 pi x/5) - cos(6 pi x/5))
    x = np.asarray(x, dtype=float)
    z = 6.0 * math.pi * x / 5.0
    out = np.ones_like(x)
    nz = np.abs(x) > 1e-4
    zz = z[nz]
    out[nz] = 25.0 / (12.0 * math.pi**2 * x[nz] ** 2) * (np.sin(zz) / zz - np.cos(zz))
    # series near zero: 1 - z^2/10 + z^4/280
    zs = z[~nz]
    out[~nz] = 1.0 - zs**2 / 10.0 + zs**4 / 280.0
    return out


def daniell(x):
    return np.sinc(x)  # sin(pi x) / (pi x)


def rectangular(x):
    return (np.abs(x) < 1.0).astype(float)


KERNELS: dict[str, Callable] = {
    "bartlett": bartlett,
    "parzen": parzen,
    "quadratic_spectral": quadratic_spectral,
    "qs": quadratic_spectral,
    "daniell": daniell,
    "rectangular": rectangular,
}


def kernel_weight_matrix(kernel: str, M: float, n: int) -> np.ndarray:
    """W with entries kappa(|i - j| / M)."""
    if kernel not in KERNELS:
        raise InvalidEstimator(f"unknown kernel {kernel!r}")
    if not M > 0:
        raise InvalidEstimator("bandwidth M must be positive")
    lags = np.arange(n, dtype=float)
    col = KERNELS[kernel](lags / M)
    idx = np.abs(np.subtract.outer(np.arange(n), np.arange(n)))
    return col[idx]


def selection_matrix_A(n: int) -> np.ndarray:
    """Lower-triangular matrix of ones (partial sums)."""
    return np.tril(np.ones((n, n)))


def prewhitening_matrix(rho: float, n: int) -> np.ndarray:
    """(n-1) x n matrix mapping u to (u_{i+1} - rho u_i)_{i=1..n-1}."""
    Amat = np.zeros((n - 1, n))
    i = np.arange(n - 1)
    Amat[i, i] = -rho
    Amat[i, i + 1] = 1.0
    return Amat


# ---------------------------------------------------------------------------
# functional forms


def ols(dp: DesignProblem, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    beta = dp.beta_hat(y)
    return beta, y - dp.X @ beta


def lrv(W: np.ndarray, residuals: np.ndarray) -> float:
    """n^{-1} u'Wu."""
    u = np.asarray(residuals, dtype=float)
    return float(u @ W @ u) / u.size


def autocov_form(kernel: str, M: float, residuals: np.ndarray) -> float:
    """sum_{|i|<n} kappa(|i|/M) gamma_i with gamma_i = n^{-1} sum_j u_j u_{j+|i|}."""
    u = np.asarray(residuals, dtype=float)
    n = u.size
    g = np.array([u[: n - i] @ u[i:] for i in range(n)]) / n
    w = KERNELS[kernel](np.arange(n) / M)
    return float(g[0] * w[0] + 2.0 * (g[1:] * w[1:]).sum())


def rho_hat(u: np.ndarray) -> float:
    den = float(u[:-1] @ u[:-1])
    return float(u[1:] @ u[:-1]) / den


def s2(D1: Optional[np.ndarray], D2: np.ndarray, y: np.ndarray) -> float:
    """n^{-1} y'D1' P_{span(D1 D2)-perp} D1 y (D1 = None means identity)."""
    z = y if D1 is None else D1 @ y
    B = D2 if D1 is None else D1 @ D2
    Q, _ = np.linalg.qr(B / np.abs(B).max(axis=0))
    res = z - Q @ (Q.T @ z)
    return float(res @ res) / y.size


def _ols_on(B: np.ndarray, z: np.ndarray) -> np.ndarray:
    scale = np.abs(B).max(axis=0)
    Q, Rb = np.linalg.qr(B / scale)
    return np.linalg.solve(Rb, Q.T @ z) / scale


def _inv_gram(B: np.ndarray) -> np.ndarray:
    scale = np.abs(B).max(axis=0)
    _, Rb = np.linalg.qr(B / scale)
    Ri = np.linalg.inv(Rb)
    return (Ri @ Ri.T) / np.outer(scale, scale)


def _orth(B: np.ndarray) -> np.ndarray:
    Q, _ = np.linalg.qr(B / np.abs(B).max(axis=0))
    return Q


def j_statistic(dp: DesignProblem, U: np.ndarray, y: np.ndarray, i: int) -> float:
    """Variable-addition statistics J^1 (levels) and J^2 (partial sums).

    Computed by partialling out X first: with z and U~ the residuals of
    (D y, D U) on D X, the Wald statistic of the U block equals
    |P_{U~} z|^2 / s^2, which avoids forming the ill-conditioned (X, U) Gram
    matrix when U holds high trend powers.
    """
    if i == 1:
        D = None
    elif i == 2:
        D = selection_matrix_A(dp.n)
    else:
        raise InvalidEstimator("i must be 1 or 2")
    X, z, Ut = (dp.X, y, U) if D is None else (D @ dp.X, D @ y, D @ U)
    Qx = _orth(X)
    z = z - Qx @ (Qx.T @ z)
    Ut = Ut - Qx @ (Qx.T @ Ut)
    Qu = _orth(Ut)
    fit = Qu.T @ z
    res = z - Qu @ fit
    s = float(res @ res) / dp.n
    return float(fit @ fit) / s / dp.n


# ---------------------------------------------------------------------------
# estimator classes


@dataclass(eq=False)
class Estimator:
    """Base class: Omega(y) = nu(y) * P with exceptional set N."""

    dp: DesignProblem
    name: str = field(default="estimator", init=False)
    n_kind: str = field(default="empty", init=False)
    nnd_everywhere: bool = field(default=False, init=False)
    positive_off_N: bool = field(default=False, init=False)
    beta_is_ols: bool = field(default=True, init=False)

    # subclasses override -------------------------------------------------
    def nu(self, y: np.ndarray) -> float:
        raise NotImplementedError

    @property
    def P(self) -> np.ndarray:
        return self.dp.sigma_R

    def beta(self, y: np.ndarray) -> np.ndarray:
        return self.dp.beta_hat(y)

    def in_N(self, y: np.ndarray) -> bool:
        return False

    def quad_matrix(self) -> Optional[np.ndarray]:
        """Q with nu(y) = y'Qy when nu is a fixed quadratic form, else None."""
        return None

    def critical_value(self, y: np.ndarray) -> Optional[float]:
        return None

    def quad_scale(self) -> Optional[float]:
        """Magnitude of the unprojected weights behind quad_matrix, if any."""
        return None

    # shared ------------------------------------------------------------------
    def residuals(self, y: np.ndarray) -> np.ndarray:
        return self.dp.span_X.residual(y)

    def in_span_X(self, y: np.ndarray) -> bool:
        u = self.residuals(y)
        return float(np.linalg.norm(u)) <= SPAN_TOL * max(float(np.linalg.norm(y)), 1e-300)

    def nu_scale(self, y: np.ndarray) -> float:
        """Reference magnitude against which nu(y) is compared with zero."""
        return float(y @ y) / self.dp.n

    def omega(self, y: np.ndarray) -> Optional[np.ndarray]:
        """Omega(y), or None on N."""
        if self.in_N(y):
            return None
        return self.nu(y) * self.P

    def describe(self) -> str:
        return self.name


@dataclass(eq=False)
class KernelLRV(Estimator):
    """Constant weights-matrix long-run variance: nu = n^{-1} u'Wu."""

    W: np.ndarray = None
    label: str = "custom"

    def __post_init__(self):
        W = np.asarray(self.W, dtype=float)
        if W.shape != (self.dp.n, self.dp.n) or np.abs(W - W.T).max() > 1e-12:
            raise InvalidEstimator("W must be a symmetric n x n matrix")
        self.W = W
        self.name = f"kernel:{self.label}"
        M = self.dp.residual_projector
        self._Q = M @ W @ M / self.dp.n
        self._Q = 0.5 * (self._Q + self._Q.T)
        ev = np.linalg.eigvalsh(self._Q)
        self.nnd_everywhere = bool(ev[0] >= -1e-12 * max(abs(ev[-1]), 1e-300))
        self._wnorm = max(float(np.abs(np.linalg.eigvalsh(W)).max()), 1e-300)

    @classmethod
    def from_kernel(cls, dp: DesignProblem, kernel: str, M: float) -> "KernelLRV":
        return cls(dp, kernel_weight_matrix(kernel, M, dp.n), label=f"{kernel}:M={M!r}")

    def nu(self, y):
        return lrv(self.W, self.residuals(y))

    def quad_matrix(self):
        return self._Q

    def quad_scale(self):
        return self._wnorm / self.dp.n

    def nu_scale(self, y):
        return self._wnorm * float(y @ y) / self.dp.n


@dataclass(eq=False)
class Eicker(Estimator):
    """(u' Wm u / (n - k)) * R (X'X)^{-1} R' with Wm positive definite."""

    Wm: np.ndarray = None
    label: str = "identity"

    def __post_init__(self):
        n = self.dp.n
        Wm = np.eye(n) if self.Wm is None else np.asarray(self.Wm, dtype=float)
        if Wm.shape != (n, n) or np.abs(Wm - Wm.T).max() > 1e-12:
            raise InvalidEstimator("weight matrix must be symmetric n x n")
        ev = np.linalg.eigvalsh(Wm)
        if ev[0] <= 0:
            raise InvalidEstimator("Eicker weight matrix must be positive definite")
        self.Wm = Wm
        self.name = f"eicker:{self.label}"
        self.nnd_everywhere = True
        M = self.dp.residual_projector
        self._Q = M @ Wm @ M / (n - self.dp.k)
        self._Q = 0.5 * (self._Q + self._Q.T)
        self._wnorm = float(ev[-1])

    def nu(self, y):
        u = self.residuals(y)
        return float(u @ self.Wm @ u) / (self.dp.n - self.dp.k)

    def quad_matrix(self):
        return self._Q

    def quad_scale(self):
        return self._wnorm / (self.dp.n - self.dp.k)

    def nu_scale(self, y):
        return self._wnorm * float(y @ y) / (self.dp.n - self.dp.k)


def omega_lrv(dp: DesignProblem, W: np.ndarray, y: np.ndarray) -> np.ndarray:
    return KernelLRV(dp, W).omega(y)


def omega_eicker(dp: DesignProblem, Wm: np.ndarray, y: np.ndarray) -> np.ndarray:
    return Eicker(dp, Wm).omega(y)


# -- Andrews-Monahan -----------------------------------------------------------


@dataclass
class AMParts:
    rho_hat: float
    rho_tilde: float
    M: float
    omega_hat: float


@dataclass(eq=False)
class AndrewsMonahan(Estimator):
    """AR(1)-prewhitened QS-kernel LRV with plug-in bandwidth."""

    tol: float = 1e-13

    def __post_init__(self):
        self.name = "am"
        self.n_kind = "N_AM"
        self.positive_off_N = True

    def in_N(self, y):
        u = self.residuals(y)
        scale = float(u @ u)
        if scale <= RHO_GUARD * float(y @ y) or self.in_span_X(y):
            return True
        if abs(float(u[:-1] @ (u[1:] - u[:-1]))) <= self.tol * scale:
            return True
        v = prewhitening_matrix(rho_hat(u), u.size) @ u
        return abs(float(v[:-1] @ (v[1:] - v[:-1]))) <= self.tol * float(v @ v)

    def parts(self, y) -> AMParts:
        u = self.residuals(y)
        n = u.size
        rh = rho_hat(u)
        v = prewhitening_matrix(rh, n) @ u
        rt = float(v[1:] @ v[:-1]) / float(v[:-1] @ v[:-1])
        M = 1.3221 * (n * 4.0 * rt**2 / (1.0 - rt) ** 4) ** 0.2
        if M == 0.0:
            quad = float(v @ v)
        else:
            K = kernel_weight_matrix("quadratic_spectral", M, n - 1)
            quad = float(v @ K @ v)
        return AMParts(rh, rt, M, quad / (1.0 - rh) ** 2 / n)

    def nu(self, y):
        return self.parts(y).omega_hat


def am_bandwidth(rho_tilde: float, n: int) -> float:
    return 1.3221 * (n * 4.0 * rho_tilde**2 / (1.0 - rho_tilde) ** 4) ** 0.2


def omega_am(dp: DesignProblem, y: np.ndarray) -> tuple[Optional[np.ndarray], bool]:
    est = AndrewsMonahan(dp)
    if est.in_N(y):
        return None, True
    return est.omega(y), False


# -- Vogelsang and Bunzel-Vogelsang -------------------------------------------------


DEFAULT_U_COLUMNS = 9


def _check_U(dp: DesignProblem, U: Optional[np.ndarray]) -> np.ndarray:
    if U is None:
        # higher-order trend powers, as in the usual choice for the J statistics
        start = dp.k_F if dp.k_F is not None else dp.k
        U = higher_trends(dp.n, start, max(1, min(DEFAULT_U_COLUMNS, dp.n - dp.k - 2)))
    U = np.asarray(U, dtype=float)
    if U.ndim == 1:
        U = U[:, None]
    XU = np.column_stack([dp.X, U])
    if U.shape[0] != dp.n or XU.shape[1] >= dp.n:
        raise InvalidEstimator("(X, U) must have k + m < n columns")
    if np.linalg.matrix_rank(XU / np.abs(XU).max(axis=0)) < XU.shape[1]:
        raise InvalidEstimator("(X, U) must have full column rank")
    return U


def higher_trends(n: int, start: int, m: int) -> np.ndarray:
    """Columns (j/n)^s for s = start..start+m-1, a default choice of U."""
    j = np.arange(1, n + 1, dtype=float) / n
    return np.column_stack([j**s for s in range(start, start + m)])


@dataclass(eq=False)
class Vogelsang(Estimator):
    c: float = 1.0
    U: np.ndarray = None
    i: int = 1
    V: str = "A"

    def __post_init__(self):
        if self.i not in (1, 2) or self.V not in ("A", "I"):
            raise InvalidEstimator("need i in {1, 2} and V in {A, I}")
        self.U = _check_U(self.dp, self.U)
        n = self.dp.n
        self.name = f"vogelsang:c={self.c!r},i={self.i},V={self.V}"
        self.n_kind = "span_XU"
        self.positive_off_N = True
        self.beta_is_ols = self.V == "I"
        self._A = selection_matrix_A(n)
        VX = self._A @ self.dp.X if self.V == "A" else self.dp.X
        self._VX = VX
        self._P = self.dp.R @ _inv_gram(VX) @ self.dp.R.T
        XU = np.column_stack([self.dp.X, self.U])
        self._span_XU = SubspaceBasis.span(XU / np.abs(XU).max(axis=0))

    @property
    def P(self):
        return self._P

    def beta(self, y):
        if self.V == "I":
            return self.dp.beta_hat(y)
        return _ols_on(self._VX, self._A @ y)

    def in_N(self, y):
        res = self._span_XU.residual(y)
        return float(np.linalg.norm(res)) <= SPAN_TOL * max(float(np.linalg.norm(y)), 1e-300)

    def nu(self, y):
        n = self.dp.n
        jV = 1 if self.V == "A" else -1
        sA = s2(self._A, self.dp.X, y)
        J = j_statistic(self.dp, self.U, y, self.i)
        return n**jV * sA * math.exp(self.c * J)


def omega_vogelsang(dp, c, U, i, V, y):
    est = Vogelsang(dp, c=c, U=U, i=i, V=V)
    if est.in_N(y):
        return None, True
    return est.omega(y), False


def _exp_factor(dp: DesignProblem, U: Optional[np.ndarray], c: float, y: np.ndarray, u: np.ndarray) -> float:
    if U is not None:
        return math.exp(c * j_statistic(dp, U, y, 1))
    Au = np.cumsum(u)
    return math.exp(c * float(Au @ Au) / float(u @ u) / dp.n**2)


@dataclass(eq=False)
class BVFixed(Estimator):
    W: np.ndarray = None
    c: float = 1.0
    U: Optional[np.ndarray] = None
    label: str = "custom"

    def __post_init__(self):
        W = np.asarray(self.W, dtype=float)
        if W.shape != (self.dp.n, self.dp.n) or np.abs(W - W.T).max() > 1e-12:
            raise InvalidEstimator("W must be a symmetric n x n matrix")
        self.W = W
        if self.U is not None:
            self.U = _check_U(self.dp, self.U)
            XU = np.column_stack([self.dp.X, self.U])
            self._span_XU = SubspaceBasis.span(XU / np.abs(XU).max(axis=0))
        self.n_kind = "span_XU" if self.U is not None else "span_X"
        self.name = f"bvfixed:{self.label}:c={self.c!r}" + (":J" if self.U is not None else "")
        M = self.dp.residual_projector
        ev = np.linalg.eigvalsh(M @ W @ M)
        psd = ev[0] >= -1e-12 * max(abs(ev[-1]), 1e-300)
        self.positive_off_N = bool(psd and np.linalg.eigvalsh(W)[0] > 0)

    def in_N(self, y):
        if self.U is not None:
            res = self._span_XU.residual(y)
            return float(np.linalg.norm(res)) <= SPAN_TOL * max(float(np.linalg.norm(y)), 1e-300)
        return self.in_span_X(y)

    def nu(self, y):
        u = self.residuals(y)
        return lrv(self.W, u) * _exp_factor(self.dp, self.U, self.c, y, u)


def omega_bv_fixed(dp, W, c, y, U=None):
    est = BVFixed(dp, W=W, c=c, U=U)
    if est.in_N(y):
        return None, True
    return est.omega(y), False


def _poly(coefs: Sequence[float], b: float) -> float:
    return float(sum(c * b**i for i, c in enumerate(coefs)))


@dataclass(eq=False)
class BVDataDriven(Estimator):
    """Daniell-kernel LRV with bandwidth, exponent and critical value driven by rho_hat."""

    a: Sequence[float] = (0.1, 0.2)
    abar: Sequence[float] = (0.5,)
    h: Sequence[float] = (1.0, 2.0)
    p: Sequence[float] = (0.0, 1.0)
    U: Optional[np.ndarray] = None
    level_tol: float = 1e-10

    def __post_init__(self):
        self.a = tuple(float(x) for x in self.a)
        self.abar = tuple(float(x) for x in self.abar)
        self.h = tuple(float(x) for x in self.h)
        self.p = tuple(float(x) for x in self.p)
        if len(self.a) != len(self.abar) + 1 or len(self.abar) < 1:
            raise InvalidEstimator("need len(a) = len(abar) + 1 >= 2")
        if min(self.a) <= 0:
            raise InvalidEstimator("a_i must be positive")
        if len(self.h) < 2 or self.h[-1] == 0 or len(self.p) < 2 or self.p[-1] == 0:
            raise InvalidEstimator("h and p need degree >= 1 with nonzero leading coefficient")
        if self.U is not None:
            self.U = _check_U(self.dp, self.U)
            XU = np.column_stack([self.dp.X, self.U])
            self._span_XU = SubspaceBasis.span(XU / np.abs(XU).max(axis=0))
        self.positive_off_N = True
        self._rho_constant = self._detect_constant_rho()
        base = "N_BV_U" if self.U is not None else "N_BV"
        self.n_kind = base if not self._rho_constant else ("span_XU" if self.U is not None else "span_X")
        self.name = "bvdd" + (":J" if self.U is not None else "")

    def _detect_constant_rho(self, trials: int = 64) -> bool:
        rng = np.random.default_rng(20240917)
        vals = []
        for _ in range(trials):
            u = self.residuals(rng.standard_normal(self.dp.n))
            den = float(u[:-1] @ u[:-1])
            if den > RHO_GUARD * float(u @ u):
                vals.append(float(u[1:] @ u[:-1]) / den)
        return len(vals) > 0 and (max(vals) - min(vals)) <= 1e-10

    def in_N_tilde(self, y):
        u = self.residuals(y)
        return float(u[:-1] @ u[:-1]) <= RHO_GUARD * float(y @ y)

    def in_N(self, y):
        if self.U is not None:
            res = self._span_XU.residual(y)
            if float(np.linalg.norm(res)) <= SPAN_TOL * max(float(np.linalg.norm(y)), 1e-300):
                return True
        if self.in_span_X(y) or self.in_N_tilde(y):
            return True
        if self._rho_constant:
            return False
        r = rho_hat(self.residuals(y))
        return any(abs(r - ab) <= self.level_tol for ab in self.abar)

    def bandwidth(self, y) -> float:
        r = rho_hat(self.residuals(y))
        return self.a[0] + sum(ai for ai, ab in zip(self.a[1:], self.abar) if r >= ab)

    def weight_matrix(self, y) -> np.ndarray:
        b = self.bandwidth(y)
        return kernel_weight_matrix("daniell", max(b * self.dp.n, 2.0), self.dp.n)

    def nu(self, y):
        u = self.residuals(y)
        b = self.bandwidth(y)
        W = kernel_weight_matrix("daniell", max(b * self.dp.n, 2.0), self.dp.n)
        c = _poly(self.p, b)
        return lrv(W, u) * _exp_factor(self.dp, self.U, c, y, u)

    def critical_value(self, y):
        if self.in_N_tilde(y):
            return 0.0
        return _poly(self.h, self.bandwidth(y))


def b_bv(a: Sequence[float], abar: Sequence[float], rho: float) -> float:
    return a[0] + sum(ai for ai, ab in zip(a[1:], abar) if rho >= ab)


def c_bv(h: Sequence[float], b: float) -> float:
    return _poly(h, b)


def omega_bv_datadriven(dp, a, abar, h, p, y, U=None):
    est = BVDataDriven(dp, a=a, abar=abar, h=h, p=p, U=U)
    if est.in_N(y):
        return None, est.critical_value(y), True
    return est.omega(y), est.critical_value(y), False


# ---------------------------------------------------------------------------
# assumption checkers


@dataclass
class AssumptionReport:
    passed: bool
    trials: int
    max_beta_residual: float = 0.0
    max_omega_residual: float = 0.0
    membership_mismatches: int = 0
    singular_fraction: float = 0.0
    isotropic_fraction: float = 0.0
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _rel(a: np.ndarray, b: np.ndarray) -> float:
    den = max(float(np.abs(b).max()), 1e-300)
    return float(np.abs(a - b).max()) / den


def _n_points(est: Estimator, rng: np.random.Generator, count: int) -> list[np.ndarray]:
    """Points of the exceptional set, for the membership-invariance check."""
    dp = est.dp
    pts = []
    if est.n_kind != "empty":
        pts += [dp.X @ rng.standard_normal(dp.k) for _ in range(count)]
    U = getattr(est, "U", None)
    if U is not None:
        XU = np.column_stack([dp.X, U])
        pts += [XU @ rng.standard_normal(XU.shape[1]) for _ in range(count)]
    if isinstance(est, BVDataDriven) and not est._rho_constant:
        pts += [_level_set_point(est, ab, rng) for ab in est.abar for _ in range(count)]
    return [p for p in pts if p is not None]


def _level_set_point(est: BVDataDriven, target: float, rng) -> Optional[np.ndarray]:
    # rho_hat(y) = target is the quadratic equation u'(B - target D)u = 0 in the
    # residual u; solve along a random line through a random point
    n = est.dp.n
    Mx = est.dp.residual_projector
    B = np.zeros((n, n))
    B[np.arange(1, n), np.arange(n - 1)] = 0.5
    B = B + B.T
    D = np.diag(np.r_[np.ones(n - 1), 0.0])
    Qm = Mx @ (B - target * D) @ Mx
    for _ in range(50):
        y0, d = rng.standard_normal(n), rng.standard_normal(n)
        a2, a1, a0 = d @ Qm @ d, 2 * (y0 @ Qm @ d), y0 @ Qm @ y0
        disc = a1 * a1 - 4 * a2 * a0
        if disc < 0 or a2 == 0:
            continue
        t = (-a1 + math.sqrt(disc)) / (2 * a2)
        y = y0 + t * d
        if abs(rho_hat(est.residuals(y)) - target) <= 1e-12:
            return y
    return None


def check_assumption5(est: Estimator, trials: int = 100, seed: int = 0, tol: float = 1e-9) -> AssumptionReport:
    """Equivariance of (beta, Omega) and invariance of N under y -> d y + X eta."""
    rng = np.random.default_rng(seed)
    dp = est.dp
    rep = AssumptionReport(True, trials)
    singular = 0
    for _ in range(trials):
        y = rng.standard_normal(dp.n) * math.exp(rng.uniform(-3, 3))
        delta = rng.choice([-1.0, 1.0]) * math.exp(rng.uniform(-2, 2))
        eta = rng.standard_normal(dp.k) * math.exp(rng.uniform(-2, 2))
        y2 = delta * y + dp.X @ eta
        if est.in_N(y) != est.in_N(y2):
            rep.membership_mismatches += 1
            continue
        if est.in_N(y):
            continue
        rep.max_beta_residual = max(rep.max_beta_residual, _rel(est.beta(y2), delta * est.beta(y) + eta))
        O1, O2 = est.omega(y), est.omega(y2)
        rep.max_omega_residual = max(rep.max_omega_residual, _rel(O2, delta**2 * O1))
        if abs(np.linalg.det(O1)) <= 1e-12 * np.prod(np.linalg.norm(O1, axis=1)) or np.all(O1 == 0):
            singular += 1
    for z in _n_points(est, rng, max(2, trials // 20)):
        delta = rng.choice([-1.0, 1.0]) * math.exp(rng.uniform(-2, 2))
        eta = rng.standard_normal(dp.k)
        if est.in_N(z) != est.in_N(delta * z + dp.X @ eta):
            rep.membership_mismatches += 1
        if not est.in_N(z):
            rep.notes.append("constructed exceptional point not recognized as such")
            rep.membership_mismatches += 1
    rep.singular_fraction = singular / trials
    rep.passed = (
        rep.max_beta_residual < tol
        and rep.max_omega_residual < tol
        and rep.membership_mismatches == 0
        and rep.singular_fraction == 0.0
    )
    return rep


def _isotropic_vector(Oinv: np.ndarray) -> Optional[np.ndarray]:
    w, V = np.linalg.eigh(Oinv)
    if w[0] >= 0 or w[-1] <= 0:
        return None
    a, b = math.sqrt(w[-1]), math.sqrt(-w[0])
    v = b * V[:, -1] + a * V[:, 0]
    return v / np.linalg.norm(v)


def check_assumption7(est: Estimator, trials: int = 100, seed: int = 0, tol: float = 1e-12) -> AssumptionReport:
    """Fraction of (v, y) with |v' Omega^{-1}(y) v| <= tol * ||Omega^{-1}(y)||.

    Candidate directions are random unit vectors, the coordinate axes and
    any isotropic direction of the first sampled Omega^{-1}, so a fixed
    null direction shared across y is found.
    """
    rng = np.random.default_rng(seed)
    dp = est.dp
    q = dp.q
    ys = [rng.standard_normal(dp.n) for _ in range(trials)]
    invs = []
    for y in ys:
        if est.in_N(y):
            continue
        O = est.omega(y)
        try:
            invs.append(np.linalg.inv(O))
        except np.linalg.LinAlgError:
            invs.append(None)
    vs = [v / np.linalg.norm(v) for v in rng.standard_normal((8, q))] + list(np.eye(q))
    first = next((I for I in invs if I is not None), None)
    if first is not None:
        iso = _isotropic_vector(first)
        if iso is not None:
            vs.append(iso)
    hits = total = 0
    for I in invs:
        for v in vs:
            total += 1
            if I is None or abs(float(v @ I @ v)) <= tol * float(np.linalg.norm(I, 2)):
                hits += 1
    frac = hits / total if total else 1.0
    rep = AssumptionReport(frac == 0.0, trials, isotropic_fraction=frac)
    if not invs:
        rep.notes.append("every sampled y fell in N")
    return rep
