"""scikit-learn style wrapper around :func:`aaadmm.strategies.solve`."""

import numpy as np
from sklearn.base import BaseEstimator

from .core import make_state
from .strategies import AccelConfig, classify_applicability, solve

_NO_RAW_STOP = np.finfo(float).tiny


class AndersonADMM(BaseEstimator):
    """Accelerated ADMM solver with estimator-style parameters.

    ``fit`` takes a :class:`~aaadmm.core.SeparableProblem` in place of a
    data matrix, so this is not a drop-in scikit-learn estimator; it reuses
    ``get_params`` / ``set_params`` / ``clone`` for parameter sweeps.

    Parameters
    ----------
    scheme : str
        A scheme name from :data:`aaadmm.strategies.SCHEMES` or ``"auto"``.
    m : int
    mu : float
        Penalty parameter, used when ``fit`` builds the start state.
    max_iters : int
    tol : float
        Stop once the normalized combined residual drops below ``tol``.
    beta, alpha, scale : float
        See :class:`~aaadmm.strategies.AccelConfig`.

    Attributes
    ----------
    x_, z_, u_ : ndarray
        Final iterate.
    trace_ : RunTrace
    n_iter_ : int
        Number of ADMM steps evaluated.
    scheme_ : str
        Scheme actually used.
    """

    def __init__(self, scheme="auto", m=6, mu=1.0, max_iters=1000, tol=1e-6,
                 beta=1.0, alpha=1.7, scale=1.0):
        self.scheme = scheme
        self.m = m
        self.mu = mu
        self.max_iters = max_iters
        self.tol = tol
        self.beta = beta
        self.alpha = alpha
        self.scale = scale

    def fit(self, problem, state0=None):
        scheme = self.scheme
        if scheme == "auto":
            scheme = classify_applicability(problem)["recommended"]
        if state0 is None:
            state0 = make_state(problem, mu=self.mu)
        config = AccelConfig(m=self.m, max_iters=self.max_iters, epsilon=_NO_RAW_STOP, scheme=scheme,
                             beta=self.beta, alpha=self.alpha, rc_tol=self.tol, scale=self.scale)
        state, trace = solve(problem, state0, config)
        self.x_, self.z_, self.u_ = state.x, state.z, state.u
        self.state_ = state
        self.trace_ = trace
        self.n_iter_ = len(trace)
        self.scheme_ = config.scheme
        return self

    def objective(self, problem):
        """``f(x_) + g(z_)`` of the fitted iterate."""
        return problem.objective(self.x_, self.z_)
