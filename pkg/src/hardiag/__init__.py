"""Finite-sample size and power diagnostics for autocorrelation-robust trend tests."""

__version__ = "0.1.0"

from .covmodel import CovModelGrid, SpectralModel, ar1_boundary_grid, boundary_sequence
from .design import DesignProblem, SubspaceBasis, polynomial_design, cyclical_design
from .diagnostics import (
    Verdict,
    critical_value_search,
    exact_rejection_prob,
    mc_rejection_prob,
    power_degeneracy,
    size_control_verdict,
    size_curve,
)
from .numerics import McConfig, quadform_nonneg_prob, QuadFormProblem
from .teststat import FTypeTest
