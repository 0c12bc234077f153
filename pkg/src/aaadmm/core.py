"""Separable ADMM problem model, the two iteration orderings and their residuals.

The problem solved is::

    min_x,z  f(x) + g(z)   s.t.  A x - B z = c

with ``f(x) = 1/2 (x - x_tilde)^T G (x - x_tilde)``. The dual variable ``u`` is
kept in scaled form, so the augmented Lagrangian reads::

    L(x, z, u) = f(x) + g(z) + mu/2 |A x - B z + u - c|^2 - mu/2 |u|^2

Rows of the constraint can optionally be declared *soft*: such a row carries a
penalty ``w/2 |A_i x - B_i z_i - c_i|^2`` in the objective instead of a hard
equality, has no dual variable, and its ``z_i`` is updated in the z-step with
penalty weight ``w`` in place of ``mu``. Geometry problems with soft and hard
projection constraints use this; every other problem has hard rows only.
"""

import logging
from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ._validation import (check_matrix, check_positive, check_symmetric,
                          check_vector, diagonal_entries)

logger = logging.getLogger(__name__)

LINEAR_SOLVE_RTOL = 1e-10
_DENSE_LIMIT = 4000


class FactorizationError(RuntimeError):
    """Raised when ``G + mu A^T A`` cannot be factorized as positive definite."""


class ProxError(RuntimeError):
    """Raised when a local z-subproblem solve fails; carries the block index."""

    def __init__(self, message, index=None):
        super().__init__(message if index is None else f"{message} (element {index})")
        self.index = index


class GOracle:
    """Interface for the second objective term ``g``.

    Subclasses implement ``value`` and ``prox``; smooth ones also ``grad``.
    ``prox(target, weights)`` must return the deterministic minimizer of::

        g(z) + 1/2 sum_j weights_j (z_j - target_j)^2

    The class-level flags declare structural properties used to decide which
    acceleration scheme applies:

    ``bounded_below``
        g is lower semicontinuous and bounded below.
    ``smooth``
        g is strictly differentiable on the domain of its subdifferential.
    ``domain_affine``
        the domain of the subdifferential is an affine set.
    ``strictly_convex``
        g is strictly convex, so the inverse subdifferential is single-valued.
    ``range_affine``
        the range of the subdifferential is an affine set.
    ``has_indicator``
        g contains an indicator of a non-affine feasible set.
    """

    bounded_below = True
    smooth = False
    domain_affine = False
    strictly_convex = False
    range_affine = False
    has_indicator = False
    quadratic = False

    def value(self, z):
        raise NotImplementedError

    def grad(self, z):
        """Gradient of g at ``z``, or ``None`` when g is not differentiable."""
        return None

    def prox(self, target, weights):
        raise NotImplementedError

    def prox_general(self, v, mu, B):
        """Minimize ``g(z) + mu/2 |v - B z|^2`` for a non-diagonal ``B``."""
        raise NotImplementedError(
            f"{type(self).__name__} only supports a diagonal B")


class _SPDFactor:
    """Cholesky factorization of a symmetric positive-definite matrix."""

    def __init__(self, M):
        self.M = sp.csc_matrix(M)
        n = self.M.shape[0]
        self.dense = n <= _DENSE_LIMIT
        try:
            if self.dense:
                self._cho = sla.cho_factor(self.M.toarray(), lower=True, check_finite=True)
            else:
                diag = self.M.diagonal()
                if np.any(diag <= 0):
                    raise np.linalg.LinAlgError("non-positive diagonal entry")
                self._lu = spla.splu(self.M, permc_spec="MMD_AT_PLUS_A",
                                     options={"SymmetricMode": True})
        except (np.linalg.LinAlgError, RuntimeError, ValueError) as exc:
            raise FactorizationError(
                f"matrix of size {n} is not numerically positive definite: {exc}") from exc

    def _raw(self, b):
        if self.dense:
            return sla.cho_solve(self._cho, b, check_finite=False)
        return self._lu.solve(b)

    def solve(self, b):
        x = self._raw(b)
        res = b - self.M @ x
        bnorm = np.linalg.norm(b)
        if np.linalg.norm(res) > LINEAR_SOLVE_RTOL * max(bnorm, 1e-300):
            x = x + self._raw(res)
            res = b - self.M @ x
            if np.linalg.norm(res) > LINEAR_SOLVE_RTOL * max(bnorm, 1e-300):
                logger.warning("linear solve relative residual %.3e exceeds %.0e",
                               np.linalg.norm(res) / max(bnorm, 1e-300), LINEAR_SOLVE_RTOL)
        return x


@dataclass(frozen=True)
class SolverState:
    x: np.ndarray
    z: np.ndarray
    u: np.ndarray
    mu: float
    k: int = 0

    def copy(self, **changes):
        fields = {"x": self.x.copy(), "z": self.z.copy(), "u": self.u.copy()}
        fields.update(changes)
        return replace(self, **fields)


@dataclass(frozen=True)
class ResidualReport:
    primal: float
    dual: float
    combined: float
    forward: float
    normalized_combined: float
    normalized_forward: float


class SeparableProblem:
    """Problem data ``(A, B, c, G, x_tilde, g)``.

    Parameters
    ----------
    A : (q, n) matrix
    B : (q, q) invertible matrix
    c : (q,) vector
    G : (n, n) symmetric positive (semi-)definite matrix
    x_tilde : (n,) vector
    g_oracle : GOracle
    soft_weights : (q,) array, optional
        Positive entries mark soft penalty rows (see module docstring).
    allow_singular_G : bool
        Accept a positive semidefinite ``G`` as long as ``G + mu A^T A`` is
        positive definite.
    """

    def __init__(self, A, B, c, G, x_tilde, g_oracle, soft_weights=None,
                 allow_singular_G=False, name=None):
        A = check_matrix(A, "A")
        q, n = A.shape
        self.A = A
        self.B = check_matrix(B, "B", shape=(q, q))
        self.c = check_vector(c, "c", size=q)
        self.G = check_symmetric(check_matrix(G, "G", shape=(n, n)), "G")
        self.x_tilde = check_vector(x_tilde, "x_tilde", size=n)
        if not isinstance(g_oracle, GOracle):
            raise TypeError("g_oracle must be a GOracle instance")
        self.g = g_oracle
        self.name = name or "problem"
        self.n_x, self.q = n, q

        self.b_diag = diagonal_entries(self.B)
        if self.b_diag is not None:
            if np.any(self.b_diag == 0):
                raise ValueError("B is diagonal with a zero entry and hence singular")
            self._B_lu = None
        else:
            try:
                self._B_lu = spla.splu(sp.csc_matrix(self.B))
            except RuntimeError as exc:
                raise ValueError(f"B is singular: {exc}") from exc

        if soft_weights is None:
            soft_weights = np.zeros(q)
        self.soft_weights = check_vector(soft_weights, "soft_weights", size=q)
        if np.any(self.soft_weights < 0):
            raise ValueError("soft_weights must be non-negative")
        self.hard = self.soft_weights == 0
        self.has_soft = not bool(np.all(self.hard))
        if self.has_soft:
            if self.b_diag is None:
                raise ValueError("soft rows require a diagonal B")
            soft = ~self.hard
            As = A[soft]
            self._As = As
            self._Ws = sp.diags(self.soft_weights[soft])
            self._Bs = self.b_diag[soft]
            self._cs = self.c[soft]
            self._Ah = A[self.hard]
            self.H0 = (self.G + As.T @ self._Ws @ As).tocsr()
        else:
            self._Ah = A
            self.H0 = self.G
        self._AhT = sp.csr_matrix(self._Ah.T)
        self._AT = sp.csr_matrix(A.T)

        if not allow_singular_G:
            try:
                self._G_factor = _SPDFactor(self.G)
            except FactorizationError as exc:
                raise ValueError(f"G must be positive definite: {exc}") from exc
        else:
            self._G_factor = None
        self._H0_factor = None
        self._factors = {}

    # -- objective ---------------------------------------------------------
    def f(self, x):
        d = x - self.x_tilde
        val = 0.5 * float(d @ (self.G @ d))
        if self.has_soft:
            r = self._soft_residual(x, self._z_soft(None, x))
            val += 0.5 * float(r @ (self._Ws @ r))
        return val

    def objective(self, x, z):
        """Target function ``f(x) + g(z)`` (soft penalties use ``z``)."""
        d = x - self.x_tilde
        val = 0.5 * float(d @ (self.G @ d))
        if self.has_soft:
            r = self._soft_residual(x, z[~self.hard])
            val += 0.5 * float(r @ (self._Ws @ r))
        return val + float(self.g.value(z))

    def _z_soft(self, z, x):
        return z[~self.hard] if z is not None else (self._As @ x - self._cs) / self._Bs

    def _soft_residual(self, x, z_soft):
        return self._As @ x - self._Bs * z_soft - self._cs

    # -- linear algebra ----------------------------------------------------
    def Bz(self, z):
        return self.b_diag * z if self.b_diag is not None else self.B @ z

    def B_inv_T(self, v):
        if self.b_diag is not None:
            return v / self.b_diag
        return self._B_lu.solve(v, trans="T")

    def B_inv(self, v):
        if self.b_diag is not None:
            return v / self.b_diag
        return self._B_lu.solve(v)

    def G_solve(self, b):
        if self._G_factor is None:
            raise FactorizationError("G is singular for this problem")
        return self._G_factor.solve(b)

    def factor(self, mu):
        """Cached factorization of ``G + A_s^T W A_s + mu A_h^T A_h``."""
        mu = float(mu)
        fac = self._factors.get(mu)
        if fac is None:
            M = (self.H0 + mu * (self._AhT @ self._Ah)).tocsc()
            try:
                fac = _SPDFactor(M)
            except FactorizationError as exc:
                raise FactorizationError(
                    f"G + mu A^T A is not positive definite for mu={mu}: {exc}") from exc
            self._factors[mu] = fac
        return fac

    # -- ADMM sub-steps ----------------------------------------------------
    def constraint_residual(self, x, z):
        """``A x - B z - c`` on the hard rows."""
        r = self.A @ x - self.Bz(z) - self.c
        return r[self.hard] if self.has_soft else r

    def x_rhs0(self, z):
        """The z-dependent part of the x-step right-hand side without dual terms."""
        rhs = self.G @ self.x_tilde
        if self.has_soft:
            rhs = rhs + self._As.T @ (self._Ws @ (self._Bs * z[~self.hard] + self._cs))
        return rhs

    def x_update(self, z, u, mu):
        if self.has_soft:
            h = self.hard
            t = (self.Bz(z) + self.c - u)[h]
        else:
            t = self.Bz(z) + self.c - u
        rhs = self.x_rhs0(z) + mu * (self._AhT @ t)
        return self.factor(mu).solve(rhs)

    def z_update(self, x, u, mu, v=None):
        """Solve the z-subproblem for ``v = A x + u - c`` (``v`` may be passed directly)."""
        if v is None:
            v = self.A @ x + u - self.c
        if self.b_diag is None:
            return np.asarray(self.g.prox_general(v, mu, self.B), dtype=float)
        b = self.b_diag
        pen = np.where(self.hard, mu, self.soft_weights)
        return np.asarray(self.g.prox(v / b, pen * b * b), dtype=float)

    def u_update(self, u, x, z):
        r = self.A @ x - self.Bz(z) - self.c
        if self.has_soft:
            r = np.where(self.hard, r, 0.0)
        return u + r

    def dual_from_z(self, z, mu):
        """Dual variable compatible with ``z`` for smooth g: ``B^-T grad g(z) / mu``."""
        grad = self.g.grad(z)
        if grad is None:
            raise ValueError("g is not differentiable; the dual cannot be recovered from z")
        return self.B_inv_T(np.asarray(grad, dtype=float)) / mu

    def grad_x_phi(self, x, z):
        """Gradient in x of the x-dependent objective terms."""
        gx = self.G @ (x - self.x_tilde)
        if self.has_soft:
            gx = gx + self._As.T @ (self._Ws @ self._soft_residual(x, z[~self.hard]))
        return gx

    def x_from_u(self, z, u, mu):
        """The x compatible with ``u`` after a zxu x-step, ``x_tilde - mu G^-1 A^T u`` when no soft rows."""
        if self._H0_factor is None:
            self._H0_factor = _SPDFactor(self.H0)
        rhs = self.x_rhs0(z) - mu * (self._AT @ np.where(self.hard, u, 0.0))
        return self._H0_factor.solve(rhs)


def augmented_lagrangian(problem, state):
    """``f(x) + g(z) + mu/2 |Ax - Bz + u - c|^2 - mu/2 |u|^2`` (``inf`` off the domain of g)."""
    gz = float(problem.g.value(state.z))
    if not np.isfinite(gz):
        return np.inf
    mu = state.mu
    r = problem.constraint_residual(state.x, state.z)
    uh = state.u[problem.hard] if problem.has_soft else state.u
    return (problem.objective(state.x, state.z)
            + 0.5 * mu * float((r + uh) @ (r + uh)) - 0.5 * mu * float(uh @ uh))


def make_state(problem, x=None, z=None, u=None, mu=1.0, k=0):
    """Build a validated ``SolverState``; missing vectors default to zero."""
    mu = check_positive(mu, "mu")
    x = np.zeros(problem.n_x) if x is None else check_vector(x, "x", problem.n_x)
    z = np.zeros(problem.q) if z is None else check_vector(z, "z", problem.q)
    u = np.zeros(problem.q) if u is None else check_vector(u, "u", problem.q)
    return SolverState(x.copy(), z.copy(), u.copy(), mu, int(k))


def x_update_xzu(problem, z, u, mu):
    """``(G + mu A^T A)^-1 (G x_tilde + mu A^T (B z + c - u))``."""
    return problem.x_update(z, u, mu)


def z_update(problem, x, u, mu):
    return problem.z_update(x, u, mu)


def u_update(problem, state, x_new, z_new):
    """``u + A x_new - B z_new - c``."""
    return problem.u_update(state.u, x_new, z_new)


def step_xzu(problem, state):
    mu = state.mu
    x = problem.x_update(state.z, state.u, mu)
    z = problem.z_update(x, state.u, mu)
    u = problem.u_update(state.u, x, z)
    return SolverState(x, z, u, mu, state.k + 1)


def step_zxu(problem, state):
    mu = state.mu
    z = problem.z_update(state.x, state.u, mu)
    x = problem.x_update(z, state.u, mu)
    u = problem.u_update(state.u, x, z)
    return SolverState(x, z, u, mu, state.k + 1)


def step_over_relaxed(problem, state, alpha):
    """xzu step with ``A x`` replaced by ``alpha A x + (1 - alpha)(B z + c)`` on the hard rows."""
    if not 1.0 <= alpha <= 2.0:
        raise ValueError(f"alpha must lie in [1, 2], got {alpha}")
    mu = state.mu
    x = problem.x_update(state.z, state.u, mu)
    Ax = problem.A @ x
    if alpha != 1.0:
        relaxed = alpha * Ax + (1.0 - alpha) * (problem.Bz(state.z) + problem.c)
        Ax = np.where(problem.hard, relaxed, Ax) if problem.has_soft else relaxed
    z = problem.z_update(None, state.u, mu, v=Ax + state.u - problem.c)
    r = Ax - problem.Bz(z) - problem.c
    if problem.has_soft:
        r = np.where(problem.hard, r, 0.0)
    return SolverState(x, z, state.u + r, mu, state.k + 1)


def _hard(problem, v):
    return v[problem.hard] if problem.has_soft else v


def residuals(problem, prev, new, scheme="xzu", scale=1.0):
    """Residuals of the step ``prev -> new``.

    ``scheme`` selects the dual/combined/forward residual forms (``"xzu"`` or
    ``"zxu"``). ``scale`` is the typical variable range used to normalize.
    """
    mu = new.mu
    rp = problem.constraint_residual(new.x, new.z)
    primal2 = float(rp @ rp)
    if scheme == "xzu":
        dBz = _hard(problem, problem.Bz(new.z - prev.z))
        dual = mu * np.linalg.norm(problem._AhT @ dBz)
        change2 = float(dBz @ dBz)
        fwd = problem.constraint_residual(new.x, prev.z)
    elif scheme == "zxu":
        dAx = problem._Ah @ (new.x - prev.x)
        if problem.b_diag is not None:
            dual = mu * np.linalg.norm(_hard(problem, problem.b_diag) * dAx)
        else:
            dual = mu * np.linalg.norm(problem.B.T @ dAx)
        change2 = float(dAx @ dAx)
        fwd = problem.constraint_residual(prev.x, new.z)
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    combined = mu * (primal2 + change2)
    forward2 = float(fwd @ fwd)
    denom = problem.q * scale * scale
    return ResidualReport(
        primal=float(np.sqrt(primal2)), dual=float(dual), combined=combined,
        forward=float(np.sqrt(forward2)),
        normalized_combined=float(np.sqrt(combined / denom)),
        normalized_forward=float(np.sqrt(forward2 / denom)))


def check_stationary(problem, state, tol=1e-8):
    """Test the stationarity conditions of the augmented Lagrangian.

    Returns ``(ok, violations)`` where ``violations`` holds the primal,
    x-dual and z-dual violation magnitudes. For non-smooth g the z-condition is
    replaced by the prox fixed-point test ``z = prox(Ax + u - c)``.
    """
    mu = state.mu
    scale = 1.0 + np.linalg.norm(problem.x_tilde)
    rp = problem.constraint_residual(state.x, state.z)
    uh = np.where(problem.hard, state.u, 0.0)
    gx = problem.grad_x_phi(state.x, state.z) + mu * (problem._AT @ uh)
    grad = problem.g.grad(state.z)
    if grad is not None and not problem.has_soft:
        gz = np.asarray(grad) - problem.B.T @ (mu * state.u)
        z_viol = float(np.linalg.norm(gz))
    else:
        z_fix = problem.z_update(state.x, state.u, mu)
        z_viol = float(np.linalg.norm(z_fix - state.z))
    viol = {"primal": float(np.linalg.norm(rp)), "x_dual": float(np.linalg.norm(gx)),
            "z_dual": z_viol}
    ok = viol["primal"] <= tol and viol["x_dual"] <= tol * scale and viol["z_dual"] <= tol * scale
    return ok, viol
