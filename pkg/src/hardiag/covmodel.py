"""Normalized spectral densities and the correlation matrices they generate.

Every model integrates to one over [-pi, pi], so the Toeplitz matrices it
produces are correlation matrices. Rational models carry an exact
autocorrelation routine; tabulated densities fall back to quadrature.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .design import SubspaceBasis, singular_frequencies
from .numerics import adaptive_gauss_legendre, toeplitz_from_spectral


class InvalidModel(ValueError):
    pass


def _check_stationary(coefs: np.ndarray, what: str) -> None:
    if coefs.size == 0:
        return
    # roots of 1 - c_1 z - ... - c_p z^p
    roots = np.roots(np.r_[-coefs[::-1], 1.0])
    if np.any(np.abs(roots) <= 1.0 + 1e-12):
        raise InvalidModel(f"{what} polynomial has a root on or inside the unit circle")


def arma_autocovariance(phi: Sequence[float], theta: Sequence[float], nlags: int) -> np.ndarray:
    """Autocovariances (unit innovation variance) of a stationary ARMA(p, q).

    Solves the linear system for gamma(0..max(p, q)) and extends it with the
    AR recursion.
    """
    phi = np.asarray(phi, dtype=float)
    theta = np.asarray(theta, dtype=float)
    p, q = phi.size, theta.size
    th = np.r_[1.0, theta]
    # psi weights up to lag q
    psi = np.zeros(q + 1)
    for j in range(q + 1):
        psi[j] = th[j] + sum(phi[i - 1] * psi[j - i] for i in range(1, min(j, p) + 1))
    m = max(p, q)
    A = np.zeros((m + 1, m + 1))
    rhs = np.zeros(m + 1)
    for k in range(m + 1):
        A[k, k] += 1.0
        for i in range(1, p + 1):
            A[k, abs(k - i)] -= phi[i - 1]
        rhs[k] = sum(th[j] * psi[j - k] for j in range(k, q + 1))
    g = np.linalg.solve(A, rhs)
    out = np.zeros(max(nlags, m + 1))
    out[: m + 1] = g
    for k in range(m + 1, out.size):
        out[k] = sum(phi[i - 1] * out[k - i] for i in range(1, p + 1))
    return out[:nlags]


@dataclass(frozen=True)
class SpectralModel:
    """One member of a spectral-density family, stored in normalized form.

    ``kind`` is one of ``white``, ``ar``, ``arma``, ``spiked_ar2``,
    ``convex`` and ``tabulated``. Use the constructor functions below
    rather than building instances directly.
    """

    kind: str
    ar: tuple = ()
    ma: tuple = ()
    rho: float = 0.0
    xi: float = 0.0
    base: Optional["SpectralModel"] = None
    c1: float = 1.0
    values: tuple = ()
    _scale: float = field(default=1.0, repr=False)

    # -- densities -----------------------------------------------------------
    def density(self, w: np.ndarray) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        if self.kind == "white":
            return np.full_like(w, 1.0 / (2.0 * math.pi))
        if self.kind in ("ar", "arma"):
            z = np.exp(-1j * w)
            num = np.abs(np.polyval(np.r_[list(self.ma)[::-1], 1.0], z)) ** 2
            den = np.abs(np.polyval(np.r_[(-np.asarray(self.ar))[::-1], 1.0], z)) ** 2
            return self._scale * num / den / (2.0 * math.pi)
        if self.kind == "spiked_ar2":
            r, xi = self.rho, self.xi
            const = (1 - r**2) * ((1 + r**2) ** 2 - 4 * r**2 * math.cos(xi) ** 2) / (1 + r**2)
            z = np.exp(-1j * w)
            d1 = np.abs(1 - r * np.exp(-1j * xi) * z) ** 2
            d2 = np.abs(1 - r * np.exp(1j * xi) * z) ** 2
            return const / (2.0 * math.pi) / (d1 * d2)
        if self.kind == "convex":
            return self.c1 * self.base.density(w) + (1.0 - self.c1) / (2.0 * math.pi)
        if self.kind == "tabulated":
            vals = np.asarray(self.values)
            grid = np.linspace(0.0, math.pi, vals.size)
            return self._scale * np.interp(np.abs(w), grid, vals)
        raise InvalidModel(f"unknown kind {self.kind!r}")

    __call__ = density

    def peaks(self) -> Optional[np.ndarray]:
        """Frequencies near which the density is sharply peaked (quadrature hints)."""
        if self.kind == "spiked_ar2":
            return np.array([self.xi])
        if self.kind == "convex":
            return self.base.peaks()
        if self.kind in ("ar", "arma") and len(self.ar):
            roots = np.roots(np.r_[-np.asarray(self.ar)[::-1], 1.0])
            return np.unique(np.abs(np.angle(roots)))
        return None

    # -- autocorrelations ----------------------------------------------------
    def autocorrelation(self, n: int) -> Optional[np.ndarray]:
        """Exact autocorrelations at lags 0..n-1, or None when unavailable."""
        if self.kind == "white":
            out = np.zeros(n)
            out[0] = 1.0
            return out
        if self.kind in ("ar", "arma"):
            g = arma_autocovariance(self.ar, self.ma, n)
            return g / g[0]
        if self.kind == "spiked_ar2":
            r, xi = self.rho, self.xi
            h = np.arange(n, dtype=float)
            c = (1 - r**2) / (1 + r**2) / math.tan(xi)
            return r**h * (np.cos(h * xi) + c * np.sin(h * xi))
        if self.kind == "convex":
            b = self.base.autocorrelation(n)
            if b is None:
                return None
            out = self.c1 * b
            out[0] += 1.0 - self.c1
            return out
        return None

    def integral(self) -> float:
        return 2.0 * float(adaptive_gauss_legendre(self.density, 0.0, math.pi, 1e-12, self.peaks()))

    def covariance(self, n: int, method: str = "auto") -> np.ndarray:
        return toeplitz_from_spectral(self, n, method)

    # -- description -----------------------------------------------------------
    def label(self) -> str:
        if self.kind == "white":
            return "white"
        if self.kind == "ar":
            return "ar" + str(len(self.ar)) + ":" + ",".join(repr(float(c)) for c in self.ar)
        if self.kind == "arma":
            return "arma:" + ",".join(map(repr, map(float, self.ar))) + "|" + ",".join(map(repr, map(float, self.ma)))
        if self.kind == "spiked_ar2":
            return f"spiked:{self.rho!r},{self.xi!r}"
        if self.kind == "convex":
            return f"ext:{self.c1!r}@{self.base.label()}"
        return f"tabulated[{len(self.values)}]"

    def to_dict(self) -> dict:
        if self.kind == "white":
            return {"kind": "white"}
        if self.kind == "ar":
            return {"kind": "ar", "coefficients": list(map(float, self.ar))}
        if self.kind == "arma":
            return {"kind": "arma", "ar": list(map(float, self.ar)), "ma": list(map(float, self.ma))}
        if self.kind == "spiked_ar2":
            return {"kind": "spiked_ar2", "rho": self.rho, "xi": self.xi}
        if self.kind == "convex":
            return {"kind": "convex", "c1": self.c1, "c2": 1.0 - self.c1, "base": self.base.to_dict()}
        return {"kind": "tabulated", "values": list(map(float, self.values))}


# ---------------------------------------------------------------------------
# constructors


def white_noise() -> SpectralModel:
    return SpectralModel("white")


def ar_spectral(coefficients: Sequence[float]) -> SpectralModel:
    """Normalized AR(p) density; the empty tuple gives white noise."""
    phi = np.atleast_1d(np.asarray(coefficients, dtype=float))
    if phi.size == 0:
        return white_noise()
    _check_stationary(phi, "AR")
    g0 = arma_autocovariance(phi, [], 1)[0]
    return SpectralModel("ar", ar=tuple(phi.tolist()), _scale=1.0 / g0)


def arma_spectral(ar: Sequence[float], ma: Sequence[float]) -> SpectralModel:
    phi = np.atleast_1d(np.asarray(ar, dtype=float))
    th = np.atleast_1d(np.asarray(ma, dtype=float))
    _check_stationary(phi, "AR")
    g0 = arma_autocovariance(phi, th, 1)[0]
    return SpectralModel("arma", ar=tuple(phi.tolist()), ma=tuple(th.tolist()), _scale=1.0 / g0)


def spiked_ar2(rho_: float, xi: float) -> SpectralModel:
    """AR(2) density with conjugate poles rho * exp(+-i xi)."""
    if not (0.0 < rho_ < 1.0 and 0.0 < xi < math.pi):
        raise InvalidModel("spiked AR(2) needs rho in (0,1) and xi in (0,pi)")
    return SpectralModel("spiked_ar2", rho=float(rho_), xi=float(xi))


def ar2ext(base: SpectralModel, c1: float, c2: float) -> SpectralModel:
    """Convex combination c1 * base + c2 * white noise."""
    if c1 < 0 or c2 < 0 or abs(c1 + c2 - 1.0) > 1e-12:
        raise InvalidModel("need c1, c2 >= 0 with c1 + c2 = 1")
    if c1 == 0.0:
        return white_noise()
    if c1 == 1.0:
        return base
    return SpectralModel("convex", base=base, c1=float(c1))


def tabulated(values: Sequence[float]) -> SpectralModel:
    """Piecewise-linear density on a uniform grid over [0, pi], renormalized."""
    vals = np.asarray(values, dtype=float)
    if vals.size < 2 or np.any(vals < 0):
        raise InvalidModel("tabulated density needs at least two nonnegative values")
    # trapezoid rule is exact for the piecewise-linear interpolant
    h = math.pi / (vals.size - 1)
    mass = 2.0 * h * (vals.sum() - 0.5 * (vals[0] + vals[-1]))
    if mass <= 0:
        raise InvalidModel("tabulated density has zero mass")
    return SpectralModel("tabulated", values=tuple(vals.tolist()), _scale=1.0 / mass)


def boundary_sequence(gamma: float, L: SubspaceBasis, m: int) -> SpectralModel:
    """Spiked AR(2) member approaching the concentration limit at ``gamma``.

    rho_m = 1 - 1/(m+1) and the pole angle moves towards ``gamma`` at rate
    1/(m+3), staying clear of the singular frequencies of ``L``.
    """
    if m < 1:
        raise ValueError("m must be at least 1")
    if L.d >= L.n:
        raise ValueError("L must be a proper subspace")
    r = 1.0 - 1.0 / (m + 1)
    step = 1.0 / (m + 3)
    if gamma <= 0.0:
        xi = step
    elif gamma >= math.pi:
        xi = math.pi - step
    else:
        xi = gamma + step if gamma + step < math.pi else gamma - step
    xi = min(max(xi, 1e-300), math.pi - 1e-16)
    bad = singular_frequencies(L).omegas if L.d else np.zeros(0)
    while np.any(np.abs(bad - xi) < 1e-12):
        xi += step / 7.0
    return spiked_ar2(r, xi)


@dataclass(frozen=True)
class CovModelGrid:
    members: tuple
    label: str = ""

    def __post_init__(self):
        if len(self.members) == 0:
            raise InvalidModel("grid must be nonempty")
        object.__setattr__(self, "members", tuple(self.members))

    def __iter__(self):
        return iter(self.members)

    def __len__(self):
        return len(self.members)


def ar1_boundary_grid(js: Sequence[int] = range(2, 13)) -> CovModelGrid:
    """AR(1) members with rho = 1 - 10^(-j/2)."""
    return CovModelGrid(tuple(ar_spectral([1.0 - 10.0 ** (-j / 2)]) for j in js), "ar1-boundary")


# ---------------------------------------------------------------------------
# covariance-model transforms


def _check_pd(S: np.ndarray) -> None:
    if np.abs(S - S.T).max() > 1e-10 * np.abs(S).max():
        raise InvalidModel("Sigma must be symmetric")
    if np.linalg.eigvalsh(S)[0] <= 0:
        raise InvalidModel("Sigma must be positive definite")


def l_of_sigma(Sigma: np.ndarray, L: SubspaceBasis) -> np.ndarray:
    """P_{L-perp} Sigma P_{L-perp}, normalized to unit Frobenius norm."""
    _check_pd(Sigma)
    P = L.complement_projector()
    M = P @ Sigma @ P
    M = 0.5 * (M + M.T)
    return M / np.linalg.norm(M)


def sharp_transform(Sigma: np.ndarray, L: SubspaceBasis) -> np.ndarray:
    LS = l_of_sigma(Sigma, L)
    lam = np.linalg.eigvalsh(LS)[L.d]  # (l+1)-th smallest
    return LS + lam * L.projector()


def natural_transform(Sigma: np.ndarray, L: SubspaceBasis) -> np.ndarray:
    return l_of_sigma(Sigma, L) + L.projector()


# ---------------------------------------------------------------------------
# parsing


def model_from_dict(d: dict) -> SpectralModel:
    kind = d["kind"]
    if kind == "white":
        return white_noise()
    if kind == "ar":
        return ar_spectral(d["coefficients"])
    if kind == "arma":
        return arma_spectral(d.get("ar", []), d.get("ma", []))
    if kind in ("spiked", "spiked_ar2"):
        return spiked_ar2(d["rho"], d["xi"])
    if kind in ("convex", "ext"):
        c1 = float(d["c1"])
        return ar2ext(model_from_dict(d["base"]), c1, float(d.get("c2", 1.0 - c1)))
    if kind == "tabulated":
        return tabulated(d["values"])
    raise InvalidModel(f"unknown kind {kind!r}")


def _floats(s: str) -> list[float]:
    return [float(t) for t in s.split(",") if t.strip()]


def parse_model(text: str) -> SpectralModel:
    """Shorthand such as ``ar1:0.5``, ``ar2:0.5,-0.3``, ``spiked:0.999,1.2``,
    ``ext:0.7@spiked:0.99,0.3``, ``arma:0.5|0.3`` or ``white``."""
    text = text.strip()
    if text == "white":
        return white_noise()
    head, _, rest = text.partition(":")
    if head == "ext":
        c1, _, base = rest.partition("@")
        c1 = float(c1)
        return ar2ext(parse_model(base), c1, 1.0 - c1)
    if head.startswith("ar") and head[2:].isdigit():
        coefs = _floats(rest)
        if len(coefs) != int(head[2:]):
            raise InvalidModel(f"{head} needs {head[2:]} coefficients")
        return ar_spectral(coefs)
    if head == "arma":
        a, _, b = rest.partition("|")
        return arma_spectral(_floats(a), _floats(b))
    if head == "spiked":
        r, xi = _floats(rest)
        return spiked_ar2(r, xi)
    raise InvalidModel(f"cannot parse model {text!r}")


def parse_grid(text: str) -> CovModelGrid:
    """Grid from a JSON file path, ``ar1-boundary``, or ``;``-separated shorthands."""
    if text == "ar1-boundary":
        return ar1_boundary_grid()
    if text.endswith(".json"):
        with open(text) as fh:
            items = json.load(fh)
        return CovModelGrid(tuple(model_from_dict(d) for d in items), text)
    return CovModelGrid(tuple(parse_model(t) for t in text.split(";") if t.strip()), text)
