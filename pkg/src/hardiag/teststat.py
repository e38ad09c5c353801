"""F-type statistics with exceptional-set handling and affine constancy checks."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .design import SubspaceBasis
from .estimators import Estimator

DET_TOL = 1e-12
NU_TOL = 1e-12


@dataclass(eq=False)
class FTypeTest:
    """T(y) = (R b(y) - r)' Omega(y)^{-1} (R b(y) - r), and 0 on N*."""

    est: Estimator
    r: Optional[np.ndarray] = None

    def __post_init__(self):
        self.r = self.est.dp.r if self.r is None else np.atleast_1d(np.asarray(self.r, dtype=float))

    @property
    def dp(self):
        return self.est.dp

    def in_N_star(self, y: np.ndarray) -> bool:
        if self.est.in_N(y):
            return True
        return self._degenerate(y, self.est.omega(y))

    def _degenerate(self, y: np.ndarray, O: np.ndarray) -> bool:
        nu = self.est.nu(y)
        if abs(nu) <= NU_TOL * self.est.nu_scale(y):
            return True
        rows = np.linalg.norm(O, axis=1)
        return abs(np.linalg.det(O)) <= DET_TOL * float(np.prod(rows))

    def __call__(self, y: np.ndarray) -> float:
        return evaluate(self, y)


def evaluate(test: FTypeTest, y: np.ndarray) -> float:
    est = test.est
    y = np.asarray(y, dtype=float)
    if est.in_N(y):
        return 0.0
    O = est.omega(y)
    if test._degenerate(y, O):
        return 0.0
    d = test.dp.R @ est.beta(y) - test.r
    return float(d @ np.linalg.solve(O, d))


def evaluate_many(test: FTypeTest, Y: np.ndarray) -> np.ndarray:
    """Rowwise statistics; fast path for fixed quadratic-form estimators."""
    Y = np.atleast_2d(Y)
    est = test.est
    Q = est.quad_matrix()
    if Q is not None and type(est).in_N is Estimator.in_N and est.beta_is_ols:
        dp = test.dp
        B = dp.beta_hat(Y.T).T
        D = B @ dp.R.T - test.r
        nu = np.einsum("ij,jk,ik->i", Y, Q, Y)
        ref = np.array([est.nu_scale(y) for y in Y])
        Pinv = np.linalg.inv(est.P)
        T = np.einsum("ij,jk,ik->i", D, Pinv, D) / np.where(nu == 0, 1.0, nu)
        T[np.abs(nu) <= NU_TOL * ref] = 0.0
        return T
    return np.array([evaluate(test, y) for y in Y])


@dataclass
class Constancy:
    status: str  # "constant", "not-constant" or "inconclusive"
    value: Optional[float] = None
    values: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.status == "constant"


def constant_on_affine(test: FTypeTest, S: SubspaceBasis, mu0: Optional[np.ndarray] = None,
                       points: int = 16, seed: int = 0, rtol: float = 1e-8) -> Constancy:
    """Check whether T is constant on mu0 + S by sampling ``points`` points."""
    if S.d == 0:
        raise ValueError("S must be nonzero-dimensional")
    mu0 = test.dp.mu0 if mu0 is None else np.asarray(mu0, dtype=float)
    rng = np.random.default_rng(seed)
    vals = []
    for _ in range(points):
        y = mu0 + S.vectors @ rng.standard_normal(S.d)
        if test.in_N_star(y):
            continue
        vals.append(evaluate(test, y))
    if not vals:
        return Constancy("inconclusive")
    v = np.array(vals)
    spread = float(v.max() - v.min())
    # T is scale invariant, so an absolute floor of rtol is meaningful
    if spread <= rtol * max(abs(float(v.mean())), 1.0):
        return Constancy("constant", float(np.median(v)), vals)
    return Constancy("not-constant", None, vals)


class ConstancyFailure(ValueError):
    def __init__(self, basis: SubspaceBasis, result: Constancy):
        super().__init__(f"T is not certified constant on the subspace ({result.status})")
        self.basis = basis
        self.result = result


def minimal_members(K: Sequence[SubspaceBasis]) -> list[SubspaceBasis]:
    """Drop members that strictly contain another member, and duplicates."""
    keep: list[SubspaceBasis] = []
    for i, S in enumerate(K):
        redundant = False
        for j, T in enumerate(K):
            if i == j:
                continue
            inside = T.d <= S.d and S.contains(T.vectors)
            if inside and (T.d < S.d or j < i):
                redundant = True
                break
        if not redundant:
            keep.append(S)
    return keep


def cstar_bounds(test: FTypeTest, K: Sequence[SubspaceBasis], mu0=None) -> tuple[float, float]:
    """(C_*, C^*) = (inf, sup) of C(S) over K; (inf, -inf) for empty K."""
    vals = []
    for S in minimal_members(list(K)):
        res = constant_on_affine(test, S, mu0)
        if not res.ok:
            raise ConstancyFailure(S, res)
        vals.append(res.value)
    if not vals:
        return math.inf, -math.inf
    return min(vals), max(vals)
