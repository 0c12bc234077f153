"""Anderson-accelerated ADMM for ``min f(x) + g(z)  s.t.  A x - B z = c``."""

from .anderson import AndersonWindow
from .convergence import (ConvergenceCertificate, construct_verification_problem,
                          gamma_bound, verify_shrinkage)
from .core import (FactorizationError, GOracle, ProxError, SeparableProblem, SolverState,
                   augmented_lagrangian, make_state, residuals, step_xzu, step_zxu)
from .estimator import AndersonADMM
from .strategies import SCHEMES, AccelConfig, RunTrace, classify_applicability, solve

__version__ = "0.1.0"

__all__ = [
    "AccelConfig", "AndersonADMM", "AndersonWindow", "ConvergenceCertificate",
    "FactorizationError", "GOracle", "ProxError", "RunTrace", "SCHEMES", "SeparableProblem",
    "SolverState", "augmented_lagrangian", "classify_applicability",
    "construct_verification_problem", "gamma_bound", "make_state", "residuals", "solve",
    "step_xzu", "step_zxu", "verify_shrinkage",
]
