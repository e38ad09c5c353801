"""Numerical kernels shared by the rest of the package.

Three pieces live here: adaptive Gauss-Legendre quadrature (used to build
Toeplitz covariance matrices from spectral densities), the Imhof inversion
for the sign of a Gaussian quadratic form, and a seeded Monte Carlo driver
whose per-replication random streams come from a counter-based generator.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.special import ndtri

EIG_DROP = 1e-12


class NumericalFailure(RuntimeError):
    """Raised when a numerical routine cannot reach its tolerance."""


class DegenerateForm(ValueError):
    """Raised when a quadratic form vanishes on the support of the Gaussian."""


# ---------------------------------------------------------------------------
# quadrature

_GL_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _gl(order: int) -> tuple[np.ndarray, np.ndarray]:
    if order not in _GL_CACHE:
        _GL_CACHE[order] = np.polynomial.legendre.leggauss(order)
    return _GL_CACHE[order]


def adaptive_gauss_legendre(
    func: Callable[[np.ndarray], np.ndarray],
    a: float,
    b: float,
    tol: float = 1e-12,
    breakpoints: Optional[np.ndarray] = None,
    order: int = 20,
    max_panels: int = 200_000,
) -> np.ndarray:
    """Integrate a vectorized function over [a, b] on adaptive panels.

    ``func`` maps a 1-d array of nodes of length m to an array of shape
    (m,) or (m, p). Each panel compares an ``order``-point rule with an
    ``order // 2``-point rule and is bisected until the difference is at
    most ``tol`` (absolute, per output component).
    """
    xs, ws = _gl(order)
    xh, wh = _gl(order // 2)
    edges = np.array([a, b], dtype=float) if breakpoints is None else np.unique(
        np.concatenate([[a, b], np.asarray(breakpoints, dtype=float)])
    )
    edges = edges[(edges >= a) & (edges <= b)]
    panels = np.column_stack([edges[:-1], edges[1:]])
    total = None
    evaluated = 0
    while len(panels):
        lo, hi = panels[:, 0], panels[:, 1]
        half = 0.5 * (hi - lo)
        mid = 0.5 * (hi + lo)
        nodes = (mid[:, None] + half[:, None] * xs[None, :]).ravel()
        nodes_h = (mid[:, None] + half[:, None] * xh[None, :]).ravel()
        fv = np.asarray(func(nodes), dtype=float)
        fh = np.asarray(func(nodes_h), dtype=float)
        tail = fv.shape[1:]
        fv = fv.reshape((len(panels), order) + tail)
        fh = fh.reshape((len(panels), order // 2) + tail)
        shape = (len(panels),) + (1,) * len(tail)
        hi_est = half.reshape(shape) * np.einsum("pk...,k->p...", fv, ws)
        lo_est = half.reshape(shape) * np.einsum("pk...,k->p...", fh, wh)
        err = np.abs(hi_est - lo_est)
        if err.ndim > 1:
            err = err.reshape(len(panels), -1).max(axis=1)
        ok = err <= tol
        # panels too narrow to split further are accepted as they stand
        ok |= half <= 1e-15 * np.maximum(1.0, np.abs(mid))
        done = hi_est[ok].sum(axis=0)
        total = done if total is None else total + done
        evaluated += len(panels)
        if evaluated > max_panels:
            raise NumericalFailure(
                f"adaptive quadrature did not converge on [{a}, {b}] "
                f"({evaluated} panels)"
            )
        bad = panels[~ok]
        if len(bad) == 0:
            break
        mids = 0.5 * (bad[:, 0] + bad[:, 1])
        panels = np.concatenate(
            [np.column_stack([bad[:, 0], mids]), np.column_stack([mids, bad[:, 1]])]
        )
    return total


def toeplitz_from_spectral(f, n: int, method: str = "auto") -> np.ndarray:
    """Correlation matrix Sigma(f) with entries 2 int_0^pi cos((j-l)w) f(w) dw.

    ``f`` is either a :class:`hardiag.covmodel.SpectralModel` or a plain
    vectorized callable. Models that know their autocorrelations exactly
    (AR, ARMA, spiked AR(2), convex mixtures of those) use them unless
    ``method="quadrature"`` is requested.
    """
    if n < 1:
        raise ValueError("n must be positive")
    acf = None
    if method == "auto" and hasattr(f, "autocorrelation"):
        acf = f.autocorrelation(n)
    if acf is None:
        dens = f.density if hasattr(f, "density") else f
        peaks = getattr(f, "peaks", lambda: None)()
        mass = 2.0 * adaptive_gauss_legendre(dens, 0.0, math.pi, 1e-12, peaks)
        if abs(mass - 1.0) > 1e-8:
            raise ValueError(f"spectral density not normalized: integral {mass!r}")
        lags = np.arange(n)
        acf = 2.0 * adaptive_gauss_legendre(
            lambda w: np.cos(np.outer(w, lags)) * dens(w)[:, None],
            0.0,
            math.pi,
            1e-12,
            peaks,
        )
    acf = np.asarray(acf, dtype=float)
    idx = np.abs(np.subtract.outer(np.arange(n), np.arange(n)))
    return acf[idx]


# ---------------------------------------------------------------------------
# quadratic forms


@dataclass(frozen=True)
class QuadFormProblem:
    """Target P(u'Au >= 0) for u ~ N(0, Sigma)."""

    A: np.ndarray
    Sigma: np.ndarray

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        S = np.asarray(self.Sigma, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1] or S.shape != A.shape:
            raise ValueError("A and Sigma must be square matrices of equal size")
        scale = max(np.abs(A).max(), np.finfo(float).tiny)
        if np.abs(A - A.T).max() > 1e-12 * scale:
            raise ValueError("A is not symmetric")
        if np.abs(S - S.T).max() > 1e-12 * max(np.abs(S).max(), 1e-300):
            raise ValueError("Sigma is not symmetric")
        ev = np.linalg.eigvalsh(S)
        if ev[0] < -1e-10 * max(ev[-1], 0.0):
            raise ValueError("Sigma is not positive semidefinite")
        object.__setattr__(self, "A", 0.5 * (A + A.T))
        object.__setattr__(self, "Sigma", 0.5 * (S + S.T))

    @property
    def n(self) -> int:
        return self.A.shape[0]


def psd_sqrt(Sigma: np.ndarray) -> np.ndarray:
    """A factor L with L L' = Sigma, negative eigenvalues clipped to zero."""
    w, V = np.linalg.eigh(Sigma)
    return V * np.sqrt(np.clip(w, 0.0, None))


def form_eigenvalues(A: np.ndarray, Sigma: np.ndarray) -> np.ndarray:
    L = psd_sqrt(Sigma)
    B = L.T @ A @ L
    return np.linalg.eigvalsh(0.5 * (B + B.T))


def _imhof_integrand(u: np.ndarray, lam: np.ndarray) -> np.ndarray:
    lu = np.multiply.outer(u, lam)
    theta = 0.5 * np.arctan(lu).sum(axis=1)
    logrho = 0.25 * np.log1p(lu * lu).sum(axis=1)
    out = np.empty_like(u)
    small = u < 1e-8
    out[~small] = np.sin(theta[~small]) / (u[~small] * np.exp(logrho[~small]))
    out[small] = 0.5 * lam.sum()
    return out


def _truncation_point(lam: np.ndarray, tol: float) -> float:
    # |tail beyond U| <= 1/(pi k U^k prod_J |lam|^(1/2)) with k = |J|/2, for
    # any subset J of eigenvalues; take the best prefix of the sorted list.
    a = np.sort(np.abs(lam))[::-1]
    half_logs = 0.5 * np.cumsum(np.log(a))
    k = 0.5 * np.arange(1, len(a) + 1)
    log_u = (-math.log(tol) - np.log(math.pi * k) - half_logs) / k
    return float(np.exp(log_u.min()))


def imhof_nonneg_prob(lam: np.ndarray, tol: float = 1e-6) -> float:
    """P(sum lam_i chi2_1 >= 0) by numerical characteristic-function inversion.

    Eigenvalues are assumed already clipped; zeros are ignored.
    """
    lam = np.asarray(lam, dtype=float)
    lam = lam[lam != 0.0]
    if lam.size == 0:
        raise DegenerateForm("no nonzero eigenvalues")
    if np.all(lam > 0):
        return 1.0
    if np.all(lam < 0):
        return 0.0
    lam = lam / np.abs(lam).max()
    int_tol = math.pi * tol / 10.0
    upper = _truncation_point(lam, int_tol)
    # panel edges on a geometric ladder through the eigenvalue scales
    edges = np.unique(np.concatenate([[0.0], np.geomspace(0.5, upper, 64)])) if upper > 0.5 else None
    n_panels = 64 if edges is not None else 1
    val = adaptive_gauss_legendre(
        lambda u: _imhof_integrand(u, lam),
        0.0,
        upper,
        tol=int_tol / (4.0 * n_panels),
        breakpoints=edges,
    )
    p = 0.5 + float(val) / math.pi
    return min(1.0, max(0.0, p))


def quadform_nonneg_prob(
    p: QuadFormProblem, tol: float = 1e-6, on_degenerate: str = "raise", scale: Optional[float] = None
) -> float:
    """P(u'Au >= 0) for u ~ N(0, Sigma), with absolute error at most ``tol``.

    Parameters
    ----------
    p : QuadFormProblem
    tol : float
        Absolute error target, in (1e-10, 1e-2).
    on_degenerate : {"raise", "one"}
        What to do when A vanishes on the range of Sigma. ``"one"`` returns
        1.0 because u'Au = 0 >= 0 holds surely.
    scale : float, optional
        Reference magnitude for the eigenvalue clipping threshold. Forms
        like M W M are zero in exact arithmetic for some W but carry rounding
        residue; passing the magnitude of W (times that of Sigma) lets the
        residue be recognized as zero.
    """
    if not 1e-10 < tol < 1e-2:
        raise ValueError("tol must lie in (1e-10, 1e-2)")
    lam = form_eigenvalues(p.A, p.Sigma)
    big = max(np.abs(lam).max(), 0.0 if scale is None else float(scale))
    if big == 0.0:
        keep = lam[:0]
    else:
        keep = lam[np.abs(lam) > EIG_DROP * big]
    if keep.size == 0:
        if on_degenerate == "one":
            return 1.0
        raise DegenerateForm("quadratic form vanishes on the range of Sigma")
    return imhof_nonneg_prob(keep, tol)


# ---------------------------------------------------------------------------
# Monte Carlo


@dataclass(frozen=True)
class McConfig:
    replications: int
    master_seed: int
    chunk: int = 10_000

    def __post_init__(self):
        if self.replications < 1 or self.chunk < 1:
            raise ValueError("replications and chunk must be positive")
        if not 0 <= self.master_seed < 2**64:
            raise ValueError("master_seed must be a 64-bit unsigned integer")


@dataclass(frozen=True)
class McResult:
    estimate: float
    se: float
    used: int
    excluded: int

    def __iter__(self):
        return iter((self.estimate, self.se))


def thread_count() -> int:
    raw = os.environ.get("HARDIAG_THREADS")
    if raw:
        return max(1, int(raw))
    return min(8, os.cpu_count() or 1)


def philox_key(master_seed: int, stream: int = 0) -> np.ndarray:
    ss = np.random.SeedSequence(master_seed, spawn_key=(stream,))
    return ss.generate_state(2, dtype=np.uint64)


def normal_block(key: np.ndarray, start: int, count: int, dim: int) -> np.ndarray:
    """Standard normals for replications [start, start + count).

    Replication i owns Philox counter blocks [i*B, (i+1)*B), B = ceil(dim/4),
    so each row depends only on (key, i). Uniforms come from the top 53 bits
    and are mapped through the normal quantile function, which consumes a
    fixed number of raw draws per variate.
    """
    blocks = -(-dim // 4)
    bg = np.random.Philox(key=key)
    st = bg.state
    st["state"]["counter"] = np.array([start * blocks, 0, 0, 0], dtype=np.uint64)
    st["buffer_pos"] = 4
    bg.state = st
    raw = bg.random_raw(count * blocks * 4).reshape(count, blocks * 4)[:, :dim]
    u = ((raw >> np.uint64(11)).astype(float) + 0.5) * 2.0**-53
    return ndtri(u)


def mc_expectation(
    sampler: Callable[[np.ndarray], np.ndarray],
    dim: int,
    cfg: McConfig,
    stream: int = 0,
    max_excluded: float = 0.01,
) -> McResult:
    """Mean and standard error of ``sampler`` over seeded replications.

    ``sampler`` receives a (batch, dim) array whose row i holds the standard
    normal stream of one replication and returns one value per row. The
    result does not depend on ``cfg.chunk`` or on the thread count: values
    are gathered in replication order and summed with ``math.fsum``.
    """
    key = philox_key(cfg.master_seed, stream)
    starts = list(range(0, cfg.replications, cfg.chunk))

    def run(start: int) -> np.ndarray:
        count = min(cfg.chunk, cfg.replications - start)
        z = normal_block(key, start, count, dim)
        out = np.asarray(sampler(z), dtype=float).reshape(count)
        return out

    workers = min(thread_count(), len(starts))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(run, starts))
    else:
        parts = [run(s) for s in starts]
    vals = np.concatenate(parts)
    finite = np.isfinite(vals)
    excluded = int((~finite).sum())
    if excluded > max_excluded * cfg.replications:
        raise NumericalFailure(
            f"{excluded} of {cfg.replications} replications were non-finite"
        )
    vals = vals[finite]
    m = len(vals)
    mean = math.fsum(vals) / m
    if m > 1:
        var = math.fsum((vals - mean) ** 2) / (m - 1)
        se = math.sqrt(var / m)
    else:
        se = 0.0
    return McResult(mean, se, m, excluded)
