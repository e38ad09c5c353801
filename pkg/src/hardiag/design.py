"""Testing problems and frequency bookkeeping for trigonometric blocks."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

TAU_INCL = 1e-9
GRID_POINTS = 200_000


class InvalidDesign(ValueError):
    pass


@dataclass(frozen=True)
class SubspaceBasis:
    """Orthonormal basis (n x d) of a linear subspace of R^n."""

    vectors: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=float)
        if v.ndim != 2:
            raise ValueError("basis must be a 2-d array")
        if v.shape[1] and np.abs(v.T @ v - np.eye(v.shape[1])).max() > 1e-12:
            raise ValueError("basis columns are not orthonormal")
        object.__setattr__(self, "vectors", v)

    @classmethod
    def span(cls, M: np.ndarray, n: Optional[int] = None, rtol: float = 1e-10) -> "SubspaceBasis":
        """Orthonormal basis of the column span of M (rank-revealing SVD)."""
        M = np.asarray(M, dtype=float)
        if M.ndim == 1:
            M = M[:, None]
        if M.shape[1] == 0:
            return cls.zero(M.shape[0] if n is None else n)
        U, s, _ = np.linalg.svd(M, full_matrices=False)
        rank = int((s > rtol * s[0]).sum()) if s.size and s[0] > 0 else 0
        return cls(U[:, :rank].copy())

    @classmethod
    def zero(cls, n: int) -> "SubspaceBasis":
        return cls(np.zeros((n, 0)))

    @property
    def n(self) -> int:
        return self.vectors.shape[0]

    @property
    def d(self) -> int:
        return self.vectors.shape[1]

    def project(self, y: np.ndarray) -> np.ndarray:
        Q = self.vectors
        return Q @ (Q.T @ y)

    def residual(self, y: np.ndarray) -> np.ndarray:
        return y - self.project(y)

    def projector(self) -> np.ndarray:
        return self.vectors @ self.vectors.T

    def complement_projector(self) -> np.ndarray:
        return np.eye(self.n) - self.projector()

    def contains(self, M: np.ndarray, tol: float = TAU_INCL) -> bool:
        return inclusion_residual(M, self) <= tol


def inclusion_residual(M: np.ndarray, L: SubspaceBasis) -> float:
    """Relative Frobenius norm of the part of M outside L."""
    M = np.asarray(M, dtype=float)
    if M.ndim == 1:
        M = M[:, None]
    norm = np.linalg.norm(M)
    if norm == 0.0:
        return 0.0
    return float(np.linalg.norm(L.residual(M)) / norm)


@dataclass(frozen=True)
class FrequencyProfile:
    omegas: np.ndarray = field(default_factory=lambda: np.zeros(0))
    orders: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    def __post_init__(self):
        om = np.asarray(self.omegas, dtype=float)
        od = np.asarray(self.orders, dtype=int)
        if om.shape != od.shape:
            raise ValueError("omegas and orders differ in length")
        if om.size > 1 and np.any(np.diff(om) <= 0):
            raise ValueError("omegas must be strictly increasing")
        if np.any(od < 1):
            raise ValueError("orders must be positive")
        object.__setattr__(self, "omegas", om)
        object.__setattr__(self, "orders", od)

    @property
    def p(self) -> int:
        return int(self.omegas.size)


# ---------------------------------------------------------------------------
# design matrices


def polynomial_design(n: int, k_F: int, extra: Optional[np.ndarray] = None) -> np.ndarray:
    """Trend block with columns (1^s, ..., n^s)' for s = 0..k_F-1, then ``extra``."""
    if k_F < 1:
        raise InvalidDesign("k_F must be at least 1")
    j = np.arange(1, n + 1, dtype=float)
    X = np.column_stack([j**s for s in range(k_F)])
    return _append(X, extra)


def cyclical_design(n: int, omega: float, extra: Optional[np.ndarray] = None) -> np.ndarray:
    if not 0.0 < omega < math.pi:
        raise InvalidDesign("omega must lie strictly between 0 and pi")
    return _append(trig_basis(n, 0, omega), extra)


def _append(X: np.ndarray, extra: Optional[np.ndarray]) -> np.ndarray:
    if extra is not None:
        extra = np.asarray(extra, dtype=float)
        if extra.ndim == 1:
            extra = extra[:, None]
        X = np.column_stack([X, extra])
    n, k = X.shape
    if k >= n:
        raise InvalidDesign(f"need k < n, got k={k}, n={n}")
    if np.linalg.matrix_rank(_colscale(X)) < k:
        raise InvalidDesign("design matrix is rank deficient")
    return X


def _colscale(X: np.ndarray) -> np.ndarray:
    s = np.abs(X).max(axis=0)
    s[s == 0] = 1.0
    return X / s


def trig_basis(n: int, s: int, omega: float) -> np.ndarray:
    """E_{n,s}(omega): rows (j^s cos(j omega), j^s sin(j omega)), j = 1..n."""
    if s < 0:
        raise ValueError("s must be nonnegative")
    j = np.arange(1, n + 1, dtype=float)
    w = j**s
    return np.column_stack([w * np.cos(j * omega), w * np.sin(j * omega)])


def is_boundary(omega: float) -> bool:
    return omega == 0.0 or omega == math.pi


def reduced_trig_basis(n: int, s: int, omega: float) -> np.ndarray:
    """First column of E_{n,s}(omega) at 0 and pi, the full block elsewhere."""
    E = trig_basis(n, s, omega)
    return E[:, :1] if is_boundary(omega) else E


# ---------------------------------------------------------------------------
# the testing problem


@dataclass(frozen=True, eq=False)
class DesignProblem:
    """Regression y = X beta + u with restriction R beta = r."""

    X: np.ndarray
    R: np.ndarray
    r: np.ndarray
    k_F: Optional[int] = None  # width of a leading polynomial trend block, if any

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        r = np.atleast_1d(np.asarray(self.r, dtype=float))
        if X.ndim != 2:
            raise InvalidDesign("X must be a matrix")
        n, k = X.shape
        if not 1 <= k < n:
            raise InvalidDesign(f"need 1 <= k < n, got k={k}, n={n}")
        if np.linalg.matrix_rank(_colscale(X)) < k:
            raise InvalidDesign("X must have full column rank")
        if R.shape[1] != k:
            raise InvalidDesign(f"R must have {k} columns")
        q = R.shape[0]
        if not 1 <= q <= k or np.linalg.matrix_rank(R) < q:
            raise InvalidDesign("R must have full row rank q with 1 <= q <= k")
        if r.shape != (q,):
            raise InvalidDesign(f"r must have length {q}")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "r", r)

    n = property(lambda self: self.X.shape[0])
    k = property(lambda self: self.X.shape[1])
    q = property(lambda self: self.R.shape[0])

    @cached_property
    def _qr(self):
        # scaling the columns leaves the span and the fitted values unchanged
        scale = np.abs(self.X).max(axis=0)
        Q, Rx = np.linalg.qr(self.X / scale)
        return Q, Rx, scale

    @cached_property
    def span_X(self) -> SubspaceBasis:
        return SubspaceBasis(self._qr[0])

    def beta_hat(self, y: np.ndarray) -> np.ndarray:
        """OLS coefficients; ``y`` may be (n,) or (n, m)."""
        Q, Rx, scale = self._qr
        b = np.linalg.solve(Rx, Q.T @ y)
        return b / (scale if b.ndim == 1 else scale[:, None])

    @cached_property
    def xtx_inv(self) -> np.ndarray:
        _, Rx, scale = self._qr
        Ri = np.linalg.inv(Rx)
        return (Ri @ Ri.T) / np.outer(scale, scale)

    @cached_property
    def sigma_R(self) -> np.ndarray:
        """R (X'X)^{-1} R'."""
        return self.R @ self.xtx_inv @ self.R.T

    @cached_property
    def residual_projector(self) -> np.ndarray:
        return self.span_X.complement_projector()

    @cached_property
    def mu0(self) -> np.ndarray:
        """A point X beta of the null set with R beta = r (minimum-norm beta)."""
        beta = np.linalg.lstsq(self.R, self.r, rcond=None)[0]
        return self.X @ beta

    def null_beta(self, rng: np.random.Generator) -> np.ndarray:
        beta = np.linalg.lstsq(self.R, self.r, rcond=None)[0]
        N = _null_space(self.R)
        return beta + N @ rng.standard_normal(N.shape[1])

    def to_dict(self) -> dict:
        return {"X": {"matrix": self.X.tolist()}, "R": self.R.tolist(), "r": self.r.tolist(), "n": self.n}


def _null_space(R: np.ndarray) -> np.ndarray:
    _, s, Vt = np.linalg.svd(R)
    rank = int((s > 1e-12 * s.max()).sum())
    return Vt[rank:].T


def m0lin(dp: DesignProblem) -> SubspaceBasis:
    """Orthonormal basis of {X beta : R beta = 0}.

    This is the orthogonal complement, inside span(X), of the columns of
    X (X'X)^{-1} R'; working in the coordinates of the QR factor keeps the
    computation well conditioned for high-order trend columns.
    """
    Q, Rx, scale = dp._qr
    B = np.linalg.solve(Rx.T, (dp.R / scale).T)
    N = _null_space(B.T)
    if N.shape[1] == 0:
        return SubspaceBasis.zero(dp.n)
    return SubspaceBasis(Q @ N)


# ---------------------------------------------------------------------------
# frequency bookkeeping


def kappa(omega: float, d: int) -> int:
    if d < 1:
        raise ValueError("d must be positive")
    return d if is_boundary(omega) else 2 * d


def kappa_total(profile: FrequencyProfile) -> int:
    return int(sum(kappa(w, d) for w, d in zip(profile.omegas, profile.orders)))


def rho(omega: float, L: SubspaceBasis) -> int:
    """Smallest s such that span(E_{n,s}(omega)) is not contained in L."""
    n = L.n
    if L.d >= n:
        raise ValueError("L must be a proper subspace")
    s = 0
    while True:
        if inclusion_residual(reduced_trig_basis(n, s, omega), L) > TAU_INCL:
            return s
        s += 1
        if s > n:  # cannot happen for a proper subspace
            raise RuntimeError("rho failed to terminate")


def _scan_values(omegas: np.ndarray, L: SubspaceBasis, chunk: int = 4096) -> np.ndarray:
    """Relative g(w) = ||P_{L-perp} E_{n,0}(w)||^2 / ||E_{n,0}(w)||^2 on a grid."""
    n = L.n
    j = np.arange(1, n + 1, dtype=float)
    Q = L.vectors
    out = np.empty(omegas.size)
    for a in range(0, omegas.size, chunk):
        w = omegas[a : a + chunk]
        C = np.cos(np.outer(j, w))
        S = np.sin(np.outer(j, w))
        tot = (C * C).sum(0) + (S * S).sum(0)
        inside = ((Q.T @ C) ** 2).sum(0) + ((Q.T @ S) ** 2).sum(0)
        out[a : a + chunk] = np.maximum(tot - inside, 0.0) / tot
    return out


def _rel_g(omega: float, L: SubspaceBasis) -> float:
    E = trig_basis(L.n, 0, omega)
    return float(np.linalg.norm(L.residual(E)) ** 2 / np.linalg.norm(E) ** 2)


def _deriv_block(n: int, s: int, omega: float) -> np.ndarray:
    # s-th derivative of E_{n,0} in omega; spans the same space as E_{n,s}
    j = np.arange(1, n + 1, dtype=float)
    ph = j * omega + s * math.pi / 2
    return (j**s)[:, None] * np.column_stack([np.cos(ph), np.sin(ph)])


def _newton_polish(omega: float, L: SubspaceBasis, lo: float, hi: float) -> float:
    # Newton steps on <P D_s, P D_{s+1}> = 0 with D_s the s-th derivative
    # block. At a root of order d the blocks D_0..D_{d-1} lie in L, so the
    # level-(d-1) equation has a simple root; climb levels while the next
    # block stays (numerically) inside L.
    n = L.n
    s = 0
    while True:
        for _ in range(30):
            PE = L.residual(_deriv_block(n, s, omega))
            PD = L.residual(_deriv_block(n, s + 1, omega))
            den = float((PD * PD).sum())
            if den == 0.0:
                break
            new = min(max(omega - float((PE * PD).sum()) / den, lo), hi)
            if abs(new - omega) <= 1e-15 * max(1.0, abs(omega)):
                omega = new
                break
            omega = new
        nxt = _deriv_block(n, s + 1, omega)
        if s + 1 >= n or inclusion_residual(nxt, L) > 1e-4:
            return omega
        s += 1


def _golden(fun, lo: float, hi: float, xtol: float = 1e-13) -> float:
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c, d = b - invphi * (b - a), a + invphi * (b - a)
    fc, fd = fun(c), fun(d)
    while b - a > xtol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = fun(d)
    return 0.5 * (a + b)


def singular_frequencies(L: SubspaceBasis, grid_points: int = GRID_POINTS) -> FrequencyProfile:
    """All w in [0, pi] with rho(w, L) > 0, together with their orders."""
    n = L.n
    if L.d >= n:
        raise ValueError("L must be a proper subspace")
    if L.d == 0:
        return FrequencyProfile()
    grid = np.linspace(0.0, math.pi, grid_points)
    g = _scan_values(grid, L)
    # one candidate per connected run of grid points below the threshold
    low = g < 1e-6
    edges = np.flatnonzero(np.diff(np.r_[0, low.astype(int), 0]))
    found: list[float] = []
    for start, stop in zip(edges[::2], edges[1::2]):
        i = start + int(np.argmin(g[start:stop]))
        edge = 0 if start == 0 else (grid_points - 1 if stop == grid_points else None)
        if edge is not None and _rel_g(grid[edge], L) < 1e-16:
            w = grid[edge]  # a run touching 0 or pi belongs to the endpoint when it is a root
        elif i in (0, grid_points - 1):
            w = grid[i]
        else:
            lo, hi = grid[max(start - 1, 0)], grid[min(stop, grid_points - 1)]
            w0 = _golden(lambda w: _rel_g(w, L), grid[i - 1], grid[i + 1])
            w = _newton_polish(w0, L, lo, hi)
            if not lo <= w <= hi:
                raise RuntimeError(f"refinement failed in grid cell [{lo}, {hi}]")
        if _rel_g(w, L) < 1e-16:
            found.append(w)
    omegas = np.array(found)
    orders = np.array([rho(w, L) for w in omegas], dtype=int)
    keep = orders > 0
    prof = FrequencyProfile(omegas[keep], orders[keep])
    if kappa_total(prof) > L.d:
        raise RuntimeError(
            f"frequency scan violated kappa bound: {kappa_total(prof)} > dim(L) = {L.d}"
        )
    return prof


# ---------------------------------------------------------------------------
# parsing


def _matrix(obj) -> np.ndarray:
    return np.atleast_2d(np.asarray(obj, dtype=float))


def design_from_dict(doc: dict) -> DesignProblem:
    """Build a DesignProblem from the JSON schema used by the CLI."""
    try:
        n = int(doc["n"])
        xs = doc["X"]
        extra = doc.get("extra")
        extra = None if extra is None else _matrix(extra)
        k_F = None
        if "polynomial" in xs:
            k_F = int(xs["polynomial"])
            X = polynomial_design(n, k_F, extra)
        elif "cyclical" in xs:
            X = cyclical_design(n, float(xs["cyclical"]), extra)
        elif "matrix" in xs:
            X = _append(_matrix(xs["matrix"]), extra)
        else:
            raise InvalidDesign("X must contain one of polynomial, cyclical, matrix")
        R = _matrix(doc["R"])
        r = np.asarray(doc.get("r", np.zeros(R.shape[0])), dtype=float)
    except (KeyError, TypeError) as exc:
        raise InvalidDesign(f"malformed design: {exc!r}") from exc
    if X.shape[0] != n:
        raise InvalidDesign("X row count differs from n")
    return DesignProblem(X, R, r, k_F=k_F)


def parse_design(text: str, R: Optional[Sequence[float]] = None,
                 r: Optional[Sequence[float]] = None) -> DesignProblem:
    """Parse a design given as a JSON file path or a shorthand.

    Shorthands: ``poly:n=50,kF=2``, ``cyc:n=40,omega=1.0``,
    ``gauss:n=25,k=3,seed=7``. ``R`` and ``r`` override the file values.
    """
    if ":" in text and text.split(":", 1)[0] in {"poly", "cyc", "gauss"}:
        kind, _, rest = text.partition(":")
        kv = dict(item.split("=", 1) for item in rest.split(",") if item)
        n = int(kv["n"])
        if kind == "poly":
            k_F = int(kv.get("kF", kv.get("k", 1)))
            X, kf = polynomial_design(n, k_F), k_F
        elif kind == "cyc":
            X, kf = cyclical_design(n, float(kv["omega"])), None
        else:
            rng = np.random.default_rng(int(kv.get("seed", 0)))
            X, kf = rng.standard_normal((n, int(kv["k"]))), None
        if R is None:
            raise InvalidDesign("shorthand designs need --R")
        Rm = _matrix(R)
        rv = np.zeros(Rm.shape[0]) if r is None else np.asarray(r, dtype=float)
        return DesignProblem(X, Rm, rv, k_F=kf)
    with open(text) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InvalidDesign(f"{text}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    if R is not None:
        doc["R"] = _matrix(R).tolist()
        if r is None:
            doc.pop("r", None)
    if r is not None:
        doc["r"] = list(r)
    return design_from_dict(doc)
