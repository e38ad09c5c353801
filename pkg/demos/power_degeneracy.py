"""Critical values for the location model: size one or infimal power zero.

In the location model with the classical (Eicker, W = I) variance the
covariance model can concentrate on the alternating vector. On that line
the statistic is constant, equal to 1 / (n + 1). Any critical value below
that constant has size one; any above it has infimal power zero. We show
the classification and the exact rejection probabilities near the
boundary rho = -1.
"""

import numpy as np

from hardiag.covmodel import ar_spectral
from hardiag.design import DesignProblem
from hardiag.diagnostics import exact_rejection_prob, power_degeneracy
from hardiag.estimators import Eicker

n = 11
dp = DesignProblem(np.ones((n, 1)), np.array([[1.0]]), np.array([0.0]))
est = Eicker(dp)

for m in power_degeneracy(dp, est, 0.0).members:
    print(f"gamma = {m['gamma']:.4f}: status {m['status']}, value {m['value']}")

c_pi = 1.0 / (n + 1)
Sigma = ar_spectral([-(1 - 1e-6)]).covariance(n)
for C in (0.5 * c_pi, c_pi, 1.5 * c_pi, 0.5):
    rep = power_degeneracy(dp, est, C)
    p = exact_rejection_prob(dp, est, Sigma, C)
    print(f"C = {C:.4f}: {', '.join(rep.classification)}; P(T >= C) at rho = -(1 - 1e-6): {p:.4f}")
