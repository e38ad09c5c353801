"""Decision procedures for size and power of F-type tests.

The verdict engine looks for frequencies whose trigonometric block lies in
the column span of the design (those force size one under autocorrelated
errors), computes lower bounds on size when that conclusion is not
available, and evaluates null rejection probabilities exactly (Imhof) or
by Monte Carlo over a user-supplied grid of spectral models.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .covmodel import CovModelGrid, SpectralModel
from .design import (
    TAU_INCL,
    DesignProblem,
    SubspaceBasis,
    inclusion_residual,
    is_boundary,
    kappa,
    kappa_total,
    m0lin,
    reduced_trig_basis,
    rho,
    singular_frequencies,
)
from .estimators import Estimator, check_assumption7
from .numerics import (
    McConfig,
    McResult,
    QuadFormProblem,
    mc_expectation,
    psd_sqrt,
    quadform_nonneg_prob,
    thread_count,
)
from .teststat import FTypeTest, constant_on_affine, cstar_bounds, evaluate, evaluate_many

# rule tags attached to verdicts
RULE_SIZE_ONE = "size_one_AR2"
RULE_SUFF_NEC = "suff_nec"
RULE_LOWER = "lower_bound_AR2ext"
RULE_EXTENSION = "size_one_extension"
RULE_POLY_BOUND = "size_bound_polynomial"
RULE_POWER = "improved_L_5.10"
RULE_NEG_POWER = "neg_power"

ASSUMED_MODEL = "covariance model contains all stationary AR(2) correlations"


class PreconditionError(ValueError):
    pass


class SizeOneRefusal(RuntimeError):
    def __init__(self, verdict: "Verdict"):
        w = verdict.witness or {}
        super().__init__(
            f"size equals one for every critical value (witness frequency {w.get('gamma')}); "
            "no size-controlling critical value exists"
        )
        self.verdict = verdict


@dataclass
class Verdict:
    outcome: str  # SizeOne | SizeControllable | LowerBound | Inconclusive
    rule: str
    value: Optional[float] = None
    se: Optional[float] = None
    witness: Optional[dict] = None
    certificate: list = field(default_factory=list)
    assumes: str = ASSUMED_MODEL
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        d = {"outcome": self.outcome, "rule": self.rule, "assumes": self.assumes}
        if self.value is not None:
            d["value"] = self.value
        if self.se is not None:
            d["se"] = self.se
        if self.witness is not None:
            d["gamma"] = self.witness["gamma"]
            d["witness"] = self.witness
        if self.certificate:
            d["certificate"] = self.certificate
        if self.notes:
            d["notes"] = self.notes
        return d


# ---------------------------------------------------------------------------
# candidate frequencies and concentration subspaces


def candidate_frequencies(dp: DesignProblem, extra: Sequence[float] = ()) -> list[float]:
    prof = singular_frequencies(dp.span_X)
    cands = set(float(w) for w in prof.omegas) | {0.0, math.pi} | set(float(g) for g in extra)
    return sorted(cands)


def concentration_subspace(dp: DesignProblem, gamma: float, L: Optional[SubspaceBasis] = None) -> SubspaceBasis:
    """span(P_{L-perp} E_{n, rho(gamma, L)}(gamma)) with L = M0lin by default."""
    L = m0lin(dp) if L is None else L
    E = reduced_trig_basis(dp.n, rho(gamma, L), gamma)
    E = E / np.linalg.norm(E, 2)
    U, sv, _ = np.linalg.svd(L.residual(E), full_matrices=False)
    # directions whose residual is at rounding level relative to E lie in L
    return SubspaceBasis(U[:, sv > TAU_INCL]) if np.any(sv > TAU_INCL) else SubspaceBasis.zero(dp.n)


def j_singletons(dp: DesignProblem, extra: Sequence[float] = ()) -> list[tuple[float, SubspaceBasis]]:
    """Singleton-frequency members of the higher-order concentration family.

    Interior frequencies need kappa(profile of M0lin) + kappa(gamma, 1) < n;
    the frequencies 0 and pi always contribute a one-dimensional member.
    """
    L = m0lin(dp)
    kt = kappa_total(singular_frequencies(L)) if L.d else 0
    out = []
    for g in candidate_frequencies(dp, extra):
        if is_boundary(g) or kt + kappa(g, 1) < dp.n:
            out.append((g, concentration_subspace(dp, g, L)))
    return out


def frequency_witnesses(dp: DesignProblem, extra: Sequence[float] = ()) -> tuple[list[dict], list[dict]]:
    """Check span(E_{n, rho(gamma)}(gamma)) in span(X) for each candidate."""
    L = m0lin(dp)
    hits, scanned = [], []
    for g in candidate_frequencies(dp, extra):
        s = rho(g, L)
        E = reduced_trig_basis(dp.n, s, g)
        res = inclusion_residual(E, dp.span_X)
        entry = {"gamma": g, "rho": s, "inclusion_residual": res}
        scanned.append(entry)
        if res <= TAU_INCL:
            hits.append(dict(entry, basis=SubspaceBasis.span(E / np.abs(E).max()).vectors.tolist()))
    return hits, scanned


def nstar_equals_span_X(test: FTypeTest, samples: int = 256, seed: int = 1) -> bool:
    """Sampling evidence that N* = span(X)."""
    rng = np.random.default_rng(seed)
    dp = test.dp
    for _ in range(samples):
        if test.in_N_star(rng.standard_normal(dp.n)):
            return False
    for _ in range(16):
        y = dp.X @ rng.standard_normal(dp.k)
        if not test.in_N_star(y):
            return False
    return True


# ---------------------------------------------------------------------------
# lower bounds


def _degenerate_one(A: np.ndarray, n: int, tol: float, scale: Optional[float] = None) -> float:
    return quadform_nonneg_prob(QuadFormProblem(A, np.eye(n)), tol, on_degenerate="one", scale=scale)


def nonneg_prob_exact(est: Estimator, tol: float = 1e-6) -> Optional[float]:
    """P_{0,I}(nu >= 0) when it is available without simulation."""
    if est.nnd_everywhere or est.positive_off_N:
        return 1.0
    Q = est.quad_matrix()
    if Q is None:
        return None
    return _degenerate_one(Q, est.dp.n, tol, est.quad_scale())


@dataclass
class BoundResult:
    value: float
    se: float = 0.0
    method: str = "exact"


def poly_lower_bound(dp: DesignProblem, est: Estimator, cfg: Optional[McConfig] = None,
                     tol: float = 1e-6) -> BoundResult:
    """P_{0,I}(R_{.i0}' Omega^{-1} R_{.i0} >= 0) for a polynomial-trend design."""
    if dp.k_F is None:
        raise PreconditionError("design has no declared polynomial trend block")
    block = dp.R[:, : dp.k_F]
    if not np.any(block != 0):
        raise PreconditionError("R has no nonzero column in the trend block")
    exact = nonneg_prob_exact(est, tol)
    if exact is not None:
        return BoundResult(exact)
    if cfg is None:
        raise PreconditionError("this estimator needs a Monte Carlo configuration")
    i0 = int(np.flatnonzero(np.any(dp.R != 0, axis=0))[0])
    v = dp.R[:, i0]

    def sampler(Z):
        out = np.empty(len(Z))
        for t, y in enumerate(Z):
            O = est.omega(y)
            out[t] = 1.0 if O is None else float(v @ np.linalg.solve(O, v) >= 0)
        return out

    res = mc_expectation(sampler, dp.n, cfg)
    return BoundResult(res.estimate, res.se, "mc")


def k_gamma(dp: DesignProblem, est: Estimator, gamma: float, cfg: McConfig) -> McResult:
    """Monte Carlo K(gamma) for a frequency whose block lies in span(X)."""
    L = m0lin(dp)
    s = rho(gamma, L)
    Ebar = reduced_trig_basis(dp.n, s, gamma)
    res = inclusion_residual(Ebar, dp.span_X)
    if res > TAU_INCL:
        raise PreconditionError(f"block at gamma={gamma} is not inside span(X) (residual {res:.3g})")
    Ebar = Ebar / np.abs(Ebar).max()
    test = FTypeTest(est)
    n, kap = dp.n, Ebar.shape[1]
    RB = dp.R @ dp.beta_hat(Ebar)  # q x kap

    def sampler(Z):
        out = np.empty(len(Z))
        for t, z in enumerate(Z):
            G, x = z[:n], z[n:]
            if test.in_N_star(G):
                out[t] = 1.0
                continue
            v = RB @ x
            out[t] = float(v @ np.linalg.solve(est.omega(G), v) >= 0)
        return out

    return mc_expectation(sampler, n + kap, cfg)


def k_gamma_value(dp, est, gamma, cfg: Optional[McConfig], tol: float = 1e-6) -> BoundResult:
    exact = nonneg_prob_exact(est, tol)
    if exact is not None:
        return BoundResult(exact)
    if cfg is None:
        raise PreconditionError("this estimator needs a Monte Carlo configuration")
    r = k_gamma(dp, est, gamma, cfg)
    return BoundResult(r.estimate, r.se, "mc")


# ---------------------------------------------------------------------------
# verdicts


def _extension_applies(dp: DesignProblem, est: Estimator, test: FTypeTest) -> Optional[dict]:
    if dp.q != 1 or not est.beta_is_ols or not (est.nnd_everywhere or est.positive_off_N):
        return None
    rng = np.random.default_rng(3)
    for g, S in j_singletons(dp):
        if S.d == 0:
            continue
        if np.linalg.norm(dp.span_X.project(S.vectors)) <= TAU_INCL:
            continue  # orthogonal to span(X)
        pts = [S.vectors @ rng.standard_normal(S.d) for _ in range(16)]
        if all((not est.in_N(s)) and test.in_N_star(s) for s in pts):
            return {"gamma": g, "subspace": S.vectors.tolist()}
    return None


def size_control_verdict(dp: DesignProblem, est: Estimator, cfg: Optional[McConfig] = None,
                         extra: Sequence[float] = (), tol: float = 1e-6) -> Verdict:
    """Size-one / size-controllable / lower-bound decision for T built from ``est``."""
    if est.dp is not dp:
        raise PreconditionError("estimator was built for a different design")
    Q = est.quad_matrix()
    if Q is not None and est.nnd_everywhere:
        ev = np.linalg.eigvalsh(Q)
        if ev[0] < -1e-10 * max(abs(ev[-1]), 1e-300):
            raise PreconditionError("inconsistent estimator flags: form declared nonnegative is indefinite")
    test = FTypeTest(est)
    hits, scanned = frequency_witnesses(dp, extra)
    n_empty = est.n_kind == "empty"
    if hits and n_empty and est.nnd_everywhere:
        return Verdict("SizeOne", RULE_SIZE_ONE, witness=hits[0], certificate=scanned)
    if not hits and n_empty and est.nnd_everywhere:
        if nstar_equals_span_X(test):
            return Verdict("SizeControllable", RULE_SUFF_NEC, certificate=scanned)
        return Verdict("Inconclusive", RULE_SUFF_NEC, certificate=scanned,
                       notes=["N* differs from span(X) on sampled points"])
    ext = _extension_applies(dp, est, test)
    if ext is not None:
        return Verdict("SizeOne", RULE_EXTENSION, witness=ext, certificate=scanned)
    if hits:
        rep = check_assumption7(est, trials=50)
        if not rep.passed:
            return Verdict("Inconclusive", RULE_LOWER, certificate=scanned,
                           notes=["isotropic directions found for Omega^{-1}"])
        best, best_w = None, None
        for w in hits:
            b = k_gamma_value(dp, est, w["gamma"], cfg, tol)
            if best is None or b.value > best.value:
                best, best_w = b, w
        return Verdict("LowerBound", RULE_LOWER, value=best.value,
                       se=best.se if best.method == "mc" else None,
                       witness=best_w, certificate=scanned)
    return Verdict("Inconclusive", RULE_SUFF_NEC, certificate=scanned,
                   notes=["no frequency block inside span(X), but the estimator is outside the "
                          "scope of the necessary-and-sufficient condition"])


# ---------------------------------------------------------------------------
# rejection probabilities


CriticalValue = Union[float, str]


def exact_rejection_prob(dp: DesignProblem, est: Estimator, Sigma: np.ndarray, C: float,
                         sigma2: float = 1.0, tol: float = 1e-6) -> float:
    """P(T >= C) under the null with u ~ N(0, sigma2 Sigma), via Imhof."""
    Q = est.quad_matrix()
    if Q is None or dp.q != 1 or not est.nnd_everywhere or not est.beta_is_ols or est.n_kind != "empty":
        raise PreconditionError("exact path needs q = 1, OLS and a fixed nonnegative quadratic form")
    if C <= 0:
        return 1.0
    b = dp.X @ (dp.xtx_inv @ dp.R[0])
    sR = float(dp.sigma_R[0, 0])
    A = np.outer(b, b) - C * sR * Q
    return quadform_nonneg_prob(QuadFormProblem(A, sigma2 * Sigma), tol, on_degenerate="one")


def mc_rejection_prob(dp: DesignProblem, est: Estimator, Sigma: np.ndarray, C: CriticalValue,
                      cfg: McConfig, sigma2: float = 1.0, mu0: Optional[np.ndarray] = None,
                      stream: int = 0) -> McResult:
    """Simulated P(T >= C); C may be ``"data-driven"`` to use est.critical_value."""
    test = FTypeTest(est)
    mu0 = dp.mu0 if mu0 is None else mu0
    L = psd_sqrt(sigma2 * Sigma)

    def sampler(Z):
        Y = mu0 + Z @ L.T
        T = evaluate_many(test, Y)
        if C == "data-driven":
            crit = np.array([est.critical_value(y) for y in Y])
        else:
            crit = float(C)
        return (T >= crit).astype(float)

    return mc_expectation(sampler, dp.n, cfg, stream=stream)


def exact_available(dp: DesignProblem, est: Estimator) -> bool:
    return (est.quad_matrix() is not None and dp.q == 1 and est.nnd_everywhere
            and est.beta_is_ols and est.n_kind == "empty")


@dataclass
class CurveRow:
    label: str
    probability: float
    se: Optional[float] = None


def size_curve(dp: DesignProblem, est: Estimator, grid: CovModelGrid, C: CriticalValue,
               method: str = "exact", cfg: Optional[McConfig] = None, tol: float = 1e-6) -> list[CurveRow]:
    """Null rejection probability for each member of ``grid``."""
    if method not in ("exact", "mc"):
        raise ValueError("method must be 'exact' or 'mc'")
    if method == "mc" and cfg is None:
        raise PreconditionError("Monte Carlo path needs a seed and replication count")
    members = list(grid)

    def one(item):
        i, f = item
        Sigma = f.covariance(dp.n)
        if method == "exact":
            return CurveRow(f.label(), exact_rejection_prob(dp, est, Sigma, float(C), tol=tol))
        r = mc_rejection_prob(dp, est, Sigma, C, cfg, stream=i)
        return CurveRow(f.label(), r.estimate, r.se)

    if method == "exact" and len(members) > 1 and thread_count() > 1:
        with ThreadPoolExecutor(min(thread_count(), len(members))) as pool:
            return list(pool.map(one, enumerate(members)))
    return [one(item) for item in enumerate(members)]


# ---------------------------------------------------------------------------
# power degeneracy


@dataclass
class PowerReport:
    outcome: str  # "classified" or "Inconclusive"
    members: list
    C_lower: float = math.inf
    C_upper: float = -math.inf
    classification: list = field(default_factory=list)
    rule: str = RULE_POWER
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "outcome": self.outcome,
            "rule": self.rule,
            "C_lower": self.C_lower,
            "C_upper": self.C_upper,
            "classification": self.classification,
            "members": self.members,
            "notes": self.notes,
        }


def boundary_constants(dp: DesignProblem, est: Estimator, mu0=None) -> list[dict]:
    """C(S) for the one-dimensional subspaces at the frequencies 0 and pi."""
    test = FTypeTest(est)
    L = m0lin(dp)
    out = []
    for g in (0.0, math.pi):
        S = concentration_subspace(dp, g, L)
        if S.d == 0:
            out.append({"gamma": g, "status": "empty", "value": None, "n_star_free": False, "basis": S})
            continue
        res = constant_on_affine(test, S, mu0)
        out.append({"gamma": g, "status": res.status, "value": res.value,
                    "n_star_free": len(res.values) == 16, "basis": S})
    return out


def power_degeneracy(dp: DesignProblem, est: Estimator, C: float, mu0=None) -> PowerReport:
    """Locate C relative to the constants of T on the boundary subspaces."""
    if est.n_kind != "empty" or not est.nnd_everywhere:
        raise PreconditionError("needs N empty and a nonnegative definite Omega")
    test = FTypeTest(est)
    if not nstar_equals_span_X(test):
        raise PreconditionError("N* does not coincide with span(X) on sampled points")
    info = boundary_constants(dp, est, mu0)
    members = [{k: v for k, v in m.items() if k != "basis"} for m in info]
    K = [m["basis"] for m in info if m["status"] == "constant" and m["n_star_free"]]
    if not K:
        return PowerReport("Inconclusive", members, notes=["no subspace with certified constant value"])
    lo, hi = cstar_bounds(test, K, mu0)
    cls = []
    consts = [m["value"] for m in info if m["status"] == "constant" and m["n_star_free"]]
    if any(abs(C - c) <= 1e-12 * max(1.0, abs(c)) for c in consts):
        cls.append("undetermined")
    if C < hi:
        cls.append("size_one")
    if C > lo:
        cls.append("infimal_power_zero")
    notes = []
    if hi > lo:
        notes.append("two distinct constants: every critical value with size below one has infimal power zero")
    rep = PowerReport("classified", members, lo, hi, cls, notes=notes)
    if hi > lo:
        rep.rule = RULE_NEG_POWER
    return rep


# ---------------------------------------------------------------------------
# critical values


def critical_value_search(dp: DesignProblem, est: Estimator, grid: CovModelGrid, alpha: float,
                          bracket: tuple[float, float] = (0.0, 100.0), cfg: Optional[McConfig] = None,
                          prob_tol: float = 1e-3, tol: float = 1e-7) -> float:
    """Smallest C (to tolerance) whose maximal rejection probability over ``grid`` is <= alpha.

    Valid only relative to the supplied grid.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    verdict = size_control_verdict(dp, est, cfg)
    if verdict.outcome == "SizeOne":
        raise SizeOneRefusal(verdict)
    exact = exact_available(dp, est)
    if not exact and cfg is None:
        raise PreconditionError("Monte Carlo path needs a seed and replication count")
    Sigmas = [f.covariance(dp.n) for f in grid]

    def worst(C):
        if exact:
            return max(exact_rejection_prob(dp, est, S, C, tol=tol) for S in Sigmas)
        return max(mc_rejection_prob(dp, est, S, C, cfg, stream=i).estimate for i, S in enumerate(Sigmas))

    lo, hi = bracket
    f_hi = worst(hi)
    while f_hi > alpha:
        lo, hi = hi, 2.0 * hi if hi > 0 else 1.0
        if hi > 1e12:
            raise PreconditionError("no critical value below 1e12 controls the rejection probability")
        f_hi = worst(hi)
    f_lo = worst(lo)
    if f_lo <= alpha:
        return lo
    while f_lo - f_hi > prob_tol and hi - lo > 1e-12 * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        f_mid = worst(mid)
        if f_mid > alpha:
            lo, f_lo = mid, f_mid
        else:
            hi, f_hi = mid, f_mid
    return hi


# ---------------------------------------------------------------------------
# nonnegativity sweep for the rectangular kernel


def _poly_basis(n: int, k: int) -> np.ndarray:
    from .design import polynomial_design

    Q, _ = np.linalg.qr(polynomial_design(n, k) / float(n) ** np.arange(k))
    return Q


def _nonneg_form(Q: np.ndarray, W: np.ndarray, tol: float) -> float:
    WQ = W @ Q
    # M W M with M = I - QQ'
    A = W - Q @ WQ.T - WQ @ Q.T + Q @ (Q.T @ WQ) @ Q.T
    return _degenerate_one(0.5 * (A + A.T), W.shape[0], tol, float(np.abs(np.linalg.eigvalsh(W)).max()))


def nonneg_lrv_prob(n: int, k: int, b: float, kernel: str = "rectangular", tol: float = 1e-4) -> float:
    """P_{0,I}(n^{-1} u'Wu >= 0) for the degree-(k-1) polynomial trend design with M = bn."""
    from .estimators import kernel_weight_matrix

    return _nonneg_form(_poly_basis(n, k), kernel_weight_matrix(kernel, b * n, n), tol)


def figure1_table(n: int = 150, ks: Sequence[int] = range(2, 11), bs: Optional[Sequence[float]] = None,
                  kernel: str = "rectangular", tol: float = 1e-4) -> list[tuple[int, float, float]]:
    """Rows (k, b, P(omega_hat >= 0)); results are cached per distinct weights matrix."""
    from .estimators import kernel_weight_matrix

    if bs is None:
        bs = [round(i * 0.001, 3) for i in range(1, 1001)]
    rows = []
    for k in ks:
        Q = _poly_basis(n, k)
        cache: dict[bytes, float] = {}

        def value(b):
            W = kernel_weight_matrix(kernel, b * n, n)
            key = W[0].tobytes()
            if key not in cache:
                cache[key] = _nonneg_form(Q, W, tol)
            return cache[key]

        # fill the cache for distinct matrices first so threads never duplicate work
        firsts: dict[bytes, float] = {}
        for b in bs:
            firsts.setdefault(kernel_weight_matrix(kernel, b * n, n)[0].tobytes(), b)
        todo = list(firsts.values())
        if thread_count() > 1 and len(todo) > 1:
            with ThreadPoolExecutor(thread_count()) as pool:
                list(pool.map(value, todo))
        else:
            for b in todo:
                value(b)
        rows += [(k, float(b), value(b)) for b in bs]
    return rows
