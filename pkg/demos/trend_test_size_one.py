"""Why a HAC trend test can have size one, and what a richer covariance model does.

We test for a zero slope in y_t = a + b t + u_t with a Bartlett long-run
variance estimator. The verdict engine looks for frequencies whose
trigonometric design block falls inside the regressor space. The intercept
and trend span the frequency-0 block, so the engine reports size one with
witness gamma = 0.

Two boundary paths are then compared at the usual chi-square critical
value. AR(1) errors with rho near one make the residual look like a
demeaned random walk and the rejection probability levels off well below
one. Spiked AR(2) members that pile the mass onto the trend direction
drive it to one.
"""

from scipy.stats import chi2

from hardiag.covmodel import ar_spectral, boundary_sequence
from hardiag.design import m0lin, parse_design
from hardiag.diagnostics import exact_rejection_prob, size_control_verdict
from hardiag.estimators import KernelLRV

n = 50
dp = parse_design(f"poly:n={n},kF=2", R=[[0, 1]])
est = KernelLRV.from_kernel(dp, "bartlett", 10)

verdict = size_control_verdict(dp, est)
print(f"verdict: {verdict.outcome} via {verdict.rule}, witness gamma = {verdict.witness['gamma']}")

C = chi2.ppf(0.95, 1)
print(f"\ncritical value C = {C:.4f}")
print("AR(1) errors, rho = 1 - 10^-j")
for j in range(1, 7):
    p = exact_rejection_prob(dp, est, ar_spectral([1 - 10.0**-j]).covariance(n), C)
    print(f"  j = {j}: P(T >= C) = {p:.4f}")

print("spiked AR(2) boundary sequence at gamma = 0")
L = m0lin(dp)
for m in (10, 100, 1_000, 10_000):
    p = exact_rejection_prob(dp, est, boundary_sequence(0.0, L, m).covariance(n), C)
    print(f"  m = {m:>6}: P(T >= C) = {p:.4f}")
