"""Finding a size-controlling critical value for a design where one exists.

With a generic (random) design no trigonometric block falls inside the
regressor space, and the verdict engine reports that size can be
controlled. We then search for the smallest critical value whose maximal
null rejection probability over a grid of AR(1) models is at most alpha.
For the trend design the same search is refused.
"""

from hardiag.covmodel import ar1_boundary_grid
from hardiag.design import parse_design
from hardiag.diagnostics import SizeOneRefusal, critical_value_search, size_control_verdict
from hardiag.estimators import KernelLRV

dp = parse_design("gauss:n=25,k=3,seed=7", R=[[1, 0, 0]])
est = KernelLRV.from_kernel(dp, "bartlett", 5)
print("verdict:", size_control_verdict(dp, est).outcome)

grid = ar1_boundary_grid(range(1, 7))
for alpha in (0.1, 0.05, 0.01):
    C = critical_value_search(dp, est, grid, alpha)
    print(f"alpha = {alpha}: C = {C:.4f} (relative to rho = 1 - 10^-j, j = 1..6)")

trend = parse_design("poly:n=25,kF=2", R=[[0, 1]])
try:
    critical_value_search(trend, KernelLRV.from_kernel(trend, "bartlett", 5), grid, 0.05)
except SizeOneRefusal as err:
    print("trend design refused:", err.verdict.outcome, "at gamma =", err.verdict.witness["gamma"])
