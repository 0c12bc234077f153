"""Computable linear-convergence bounds for separable ADMM on StVK problems.

With ``K = A G^-1 A^T`` and ``g_hat(y) = g(B^-1 y)``, the x-z-u iteration
shrinks ``|B dz|`` by ``gamma_xzu`` per step and the z-x-u iteration shrinks
``|dv|`` with ``v = (I - mu K) u`` by ``gamma_zxu``, provided the local
Lipschitz constant of ``grad g_hat`` is small relative to ``1/rho(K)`` and the
penalty ``mu`` is large. The helpers here evaluate every constant involved
and build small elastic problems on which the bounds are certified.

Theorem identifiers used by :func:`gamma_bound`:

``"xzu_global"`` / ``"xzu_local"``
    ``gamma = (mu rho/(1 + mu rho) + L/mu) / (1 - L/mu)``, needs ``rho < 1/(2L)``.
``"zxu_global"`` / ``"zxu_local"``
    ``gamma = mu rho/(1 + mu rho) + L/(mu - L)``, needs ``rho < 1/L``.
"""

import logging
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .core import (GOracle, SeparableProblem, augmented_lagrangian, make_state, step_xzu,
                   step_zxu)
from .oracles import ZeroOracle
from .problems.elastic import (ElasticOracle, box_tet_mesh, energy_hessian, make_model,
                               newton_prox)

logger = logging.getLogger(__name__)

THEOREMS = ("xzu_global", "zxu_global", "xzu_local", "zxu_local")
POWER_RTOL = 1e-8
POWER_MAX_ITERS = 100000
SHRINK_FLOOR = 1e-10
MU_CAP = 2.0 ** 64
LINE_SEARCH_POINTS = 1024

_SQRT3 = np.sqrt(3.0)
_B_MIN = 3.0 * _SQRT3


class NotConvergedError(RuntimeError):
    pass


# -- spectral quantities ------------------------------------------------------
def _power_iteration(apply, n, rtol=POWER_RTOL, max_iters=POWER_MAX_ITERS, seed=0):
    if n == 0:
        return 0.0
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iters):
        w = apply(v)
        lam_new = float(v @ w)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
        if abs(lam_new - lam) <= rtol * abs(lam_new):
            return abs(lam_new)
        lam = lam_new
    raise NotConvergedError(f"power iteration did not reach rtol={rtol} in {max_iters} steps")


def K_operator(problem):
    """Return a function applying ``K = A G^-1 A^T``."""
    A, AT = problem.A, problem._AT
    return lambda y: A @ problem.G_solve(AT @ y)


def spectral_radius_K(problem, rtol=POWER_RTOL, max_iters=POWER_MAX_ITERS):
    """Spectral radius of ``K = A G^-1 A^T`` by power iteration.

    ``K`` is symmetric positive semidefinite, so the Rayleigh quotient of the
    power iterate increases to the largest eigenvalue.
    """
    return _power_iteration(K_operator(problem), problem.q, rtol, max_iters)


def dense_K(problem):
    A = problem.A.toarray()
    return A @ problem.G_solve(A.T)


def eta_lower_bound(A, K):
    """Smallest ``eta`` with ``|K y| >= eta |y|`` guaranteed on ``range(A)``.

    Parameters
    ----------
    A : (q, n) matrix
    K : (q, q) symmetric positive semidefinite matrix with ``range(K) = range(A)``

    Returns
    -------
    float
        ``lambda_min(U_r^T K U_r)`` with ``U_r`` the left singular vectors of
        ``A`` belonging to nonzero singular values.
    """
    A = A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)
    K = K.toarray() if sp.issparse(K) else np.asarray(K, dtype=float)
    U, s, _ = np.linalg.svd(A, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        raise ValueError("A must be nonzero")
    r = int(np.sum(s > s[0] * max(A.shape) * np.finfo(float).eps))
    Ur = U[:, :r]
    M = Ur.T @ K @ Ur
    return float(np.linalg.eigvalsh(0.5 * (M + M.T))[0])


# -- StVK level-set bounds ------------------------------------------------------
def _quartic_coeff(lam1, lam2):
    return 16.0 / 729.0 * lam1 + 72.0 / 729.0 * lam2


def stvk_levelset_radius(a, lam1, lam2):
    """Radius ``b`` of a Frobenius ball containing ``conv{F : psi(F) <= a}``."""
    a = np.maximum(np.asarray(a, dtype=float), 0.0)
    r = (a / _quartic_coeff(np.asarray(lam1, float), np.asarray(lam2, float))) ** 0.25
    out = np.maximum(_B_MIN, r)
    return float(out) if out.ndim == 0 else out


def stvk_lipschitz_bound(b, lam1, lam2):
    """Lipschitz constant of the StVK Piola stress on ``|F| <= b``."""
    b = np.asarray(b, dtype=float)
    out = (2 * lam1 + _SQRT3 * lam2) * b ** 2 + (lam1 + 1.5 * lam2) * np.sqrt(b ** 4 + 3)
    return float(out) if np.ndim(out) == 0 else out


def stvk_grad_sup_bound(b, lam1, lam2):
    """Upper bound of ``|P(F)|^2`` on ``|F| <= b``."""
    b = np.asarray(b, dtype=float)
    out = (2 * lam1 + 3 * lam2) ** 2 * b ** 2 * (0.25 * b ** 4 + 0.75)
    return float(out) if np.ndim(out) == 0 else out


def per_element_bounds(model, a):
    """Lipschitz and gradient-sup bounds for ``g(z) = sum_i v_i psi(F_i)`` on ``lev_a(g)``.

    Every term is nonnegative, so ``g <= a`` forces ``psi(F_i) <= a / v_i``.

    Returns
    -------
    L : float
        ``max_i v_i Lip(b_i)``.
    grad_sup : float
        ``sum_i v_i^2 sup|P|^2(b_i)``.
    """
    v = np.asarray(model.volume, dtype=float)
    if np.any(v <= 0):
        raise ValueError("element volumes must be positive")
    l1, l2 = model.lam1, model.lam2
    b = np.maximum(_B_MIN, (np.maximum(a, 0.0) / v / _quartic_coeff(l1, l2)) ** 0.25)
    L = float(np.max(v * stvk_lipschitz_bound(b, l1, l2)))
    sup = float(np.sum(v ** 2 * stvk_grad_sup_bound(b, l1, l2)))
    return L, sup


def _stvk_model(problem):
    g = problem.g
    if isinstance(g, ElasticOracle) and g.model.energy_kind == "stvk" and g.limits is None:
        return g.model
    if isinstance(g, StVKDisplacementOracle):
        return g.model
    return None


def _b_min(problem):
    """Smallest singular value of ``B``, used to bound ``|B^-T w| <= |w| / b_min``."""
    if problem.b_diag is not None:
        return float(np.min(np.abs(problem.b_diag)))
    return float(np.linalg.svd(problem.B.toarray(), compute_uv=False)[-1])


def g_bounds(problem, a):
    """``(L, grad_sup)`` for ``g_hat`` on ``lev_a(g)``, expressed in ``B z`` space.

    Supports the zero function and unconstrained StVK elastic oracles.
    """
    if isinstance(problem.g, ZeroOracle):
        return 0.0, 0.0
    model = _stvk_model(problem)
    if model is None:
        raise NotImplementedError("bounds are only available for zero and StVK g")
    L, sup = per_element_bounds(model, a)
    bm = _b_min(problem)
    return L / bm ** 2, sup / bm ** 2


def c1_constant(problem, T0, mu):
    """``sup_{lev_{T0+1}(g)} |B^-T grad g|^2 / (2 mu)`` via the gradient-sup bound."""
    _, sup = g_bounds(problem, T0 + 1.0)
    return sup / (2.0 * mu)


def _upper_bound_sup(h, lo, hi, rounds=4, n=LINE_SEARCH_POINTS):
    """Certified ``sup_{t in [lo, hi]} h(t)`` for ``h(t) = inc(t) + dec(t)``.

    ``h`` returns the pair ``(inc, dec)`` of a nondecreasing and a
    nonincreasing part, so on ``[t0, t1]`` the sum is at most
    ``inc(t1) + dec(t0)``. The grid is refined around the largest bound.
    """
    best_lo, best = -np.inf, -np.inf
    bound = -np.inf
    a, b = lo, hi
    outside = -np.inf
    for _ in range(rounds):
        t = np.linspace(a, b, n + 1)
        inc, dec = h(t)
        interval = inc[1:] + dec[:-1]
        j = int(np.argmax(interval))
        others = np.delete(interval, j)
        outside = max(outside, float(others.max()) if others.size else -np.inf)
        best = float(interval[j])
        best_lo = float(np.max(inc + dec))
        bound = max(outside, best)
        if best <= outside or best - best_lo <= 1e-12 * abs(best):
            break
        a, b = t[j], t[j + 1]
    return bound


def c2_c3_constants(problem, T0, eta, mu, rho_K, z0):
    """Constants of the z-x-u initial-value assumption.

    ``c2`` bounds the scaled dual energy over ``lev_{T0+1}(f + g)`` by
    splitting the level into ``f <= t`` and ``g <= a - t`` and searching
    ``t`` on a refined grid. ``c3`` uses the gradient of ``g`` at ``z0``.
    """
    a = T0 + 1.0
    A_norm2 = float(sla.svdvals(problem.A.toarray())[0] ** 2)
    q_min = float(np.linalg.eigvalsh(problem.G.toarray())[0])
    if q_min <= 0:
        raise ValueError("G must be positive definite")
    coeff_g = 2.0 * rho_K ** 2 / (mu * eta ** 2) + 1.0 / mu

    # |A(x - x_tilde)|^2 <= rho(K) |x - x_tilde|_G^2 is never weaker than
    # |A|^2 |x - x_tilde|^2 with |x - x_tilde|^2 <= |x - x_tilde|_G^2 / q_min
    a_coeff = min(A_norm2 / q_min, rho_K)

    def parts(t):
        inc = 2.0 / (eta ** 2 * mu) * 2.0 * a_coeff * t
        dec = np.array([coeff_g * g_bounds(problem, a - ti)[1] for ti in np.atleast_1d(t)])
        return inc, dec

    c2 = _upper_bound_sup(parts, 0.0, a)
    grad0 = problem.B_inv_T(np.asarray(problem.g.grad(z0)))
    c3 = (8.0 * rho_K ** 2 / (mu * eta ** 2) + 4.0 / mu) * float(grad0 @ grad0)
    return float(c2), float(c3)


def gamma_bound(theorem_id, mu, rho_K, L):
    """Theoretical shrinkage ratio; ``inf`` when the hypotheses fail.

    Examples
    --------
    >>> round(gamma_bound("xzu_global", 10.0, 0.25, 1.0), 6)
    0.904762
    >>> round(gamma_bound("zxu_global", 10.0, 0.25, 1.0), 6)
    0.825397
    """
    if theorem_id not in THEOREMS:
        raise ValueError(f"unknown theorem id {theorem_id!r}")
    a = mu * rho_K / (1.0 + mu * rho_K)
    if theorem_id.startswith("xzu"):
        if not (2.0 * L * rho_K < 1.0 and mu > L):
            return np.inf
        return (a + L / mu) / (1.0 - L / mu)
    if not (L * rho_K < 1.0 and mu > L):
        return np.inf
    return a + L / (mu - L)


# -- certificates ---------------------------------------------------------------
@dataclass
class ConvergenceCertificate:
    """Constants of a linear-convergence certificate.

    ``certified`` is true when every hypothesis inequality holds and
    ``gamma < 1``. Unused constants are zero.
    """

    theorem_id: str
    mu: float
    L_bound: float
    b: float
    rho_K: float
    eta: float = 0.0
    c1: float = 0.0
    c2: float = 0.0
    c3: float = 0.0
    gamma: float = np.inf
    T0: float = 0.0
    grad_sup: float = 0.0
    G_scale: float = 1.0
    conditions: dict = field(default_factory=dict)

    @property
    def certified(self):
        return bool(all(self.conditions.values()) and self.gamma < 1.0)

    def as_dict(self):
        d = asdict(self)
        d["certified"] = self.certified
        return d

    def to_text(self):
        """Flat ``key = value`` text with 17 significant digits."""
        lines = []
        for key, val in self.as_dict().items():
            if key == "conditions":
                for name, ok in val.items():
                    lines.append(f"condition.{name} = {str(bool(ok)).lower()}")
            elif isinstance(val, bool):
                lines.append(f"{key} = {str(val).lower()}")
            elif isinstance(val, float):
                lines.append(f"{key} = {val:.17g}")
            else:
                lines.append(f"{key} = {val}")
        return "\n".join(lines) + "\n"


def _xzu_conditions(mu, L, rho, c1):
    return {
        "c1_le_1": c1 <= 1.0,
        "rho_K_lt_half_inv_L": 2.0 * L * rho < 1.0,
        "descent": mu / 2.0 - L ** 2 / mu > L / 2.0,
        "mu_gt_bound": mu > max(1.0 / (1.0 / (2.0 * L) - rho), 1.0 / L) if 2 * L * rho < 1 else False,
    }


def _zxu_conditions(mu, L, rho, eta, c2, c3, sigma_min):
    return {
        "c2_c3_le_1": c2 + c3 <= 1.0,
        "rho_K_lt_inv_L": L * rho < 1.0,
        "dual_descent": mu / 2.0 >= 4.0 / (eta ** 2 * mu),
        "primal_descent": (mu - L) / 2.0 >= 4.0 * rho ** 2 * L ** 2 / (mu * eta ** 2) + 2.0 * L ** 2 / mu,
        # the gamma < 1 threshold is 2 / (1/L - rho)
        "mu_gt_bound": mu > max(2.0 / (1.0 / L - rho), 1.0 / L) if L * rho < 1 else False,
        "I_minus_mu_K_invertible": sigma_min >= 1e-8,
    }


def certify_xzu(problem, state0, mu):
    """Certificate of the local x-z-u bound for ``problem`` started at ``state0``."""
    T0 = problem.objective(state0.x, state0.z)
    L, sup = g_bounds(problem, T0 + 1.0)
    rho = spectral_radius_K(problem)
    c1 = sup / (2.0 * mu)
    cert = ConvergenceCertificate(
        "xzu_local", float(mu), L, _radius(problem, T0 + 1.0), rho, c1=c1,
        gamma=gamma_bound("xzu_local", mu, rho, L), T0=T0, grad_sup=sup,
        conditions=_xzu_conditions(mu, L, rho, c1))
    return cert


def _sigma_min_I_minus_muK(Kd, mu):
    ev = np.linalg.eigvalsh(Kd)
    return float(np.min(np.abs(1.0 - mu * ev)))


def certify_zxu(problem, state0, mu):
    """Certificate of the local z-x-u bound for ``problem`` started at ``state0``."""
    T0 = problem.objective(state0.x, state0.z)
    L, sup = g_bounds(problem, T0 + 1.0)
    rho = spectral_radius_K(problem)
    Kd = dense_K(problem)
    eta = eta_lower_bound(problem.A, Kd)
    c2, c3 = c2_c3_constants(problem, T0, eta, mu, rho, state0.z)
    cert = ConvergenceCertificate(
        "zxu_local", float(mu), L, _radius(problem, T0 + 1.0), rho, eta=eta, c2=c2, c3=c3,
        gamma=gamma_bound("zxu_local", mu, rho, L), T0=T0, grad_sup=sup,
        conditions=_zxu_conditions(mu, L, rho, eta, c2, c3, _sigma_min_I_minus_muK(Kd, mu)))
    return cert


def _radius(problem, a):
    model = _stvk_model(problem)
    if model is None:
        return 0.0
    b = stvk_levelset_radius(a / model.volume, model.lam1, model.lam2)
    return float(np.max(b))


class StVKDisplacementOracle(GOracle):
    """``g(z) = sum_i v_i psi(I + H_i)`` for stacked displacement gradients ``H_i``.

    Evaluating StVK directly in ``H = F - I`` keeps round-off proportional to
    the strain rather than to the identity, which matters when shrinkage is
    measured down to tiny relative differences.
    """

    bounded_below = True
    smooth = True
    domain_affine = True
    supports_extended = True

    def __init__(self, model):
        if model.energy_kind != "stvk":
            raise ValueError("StVKDisplacementOracle needs an StVK model")
        self.model = model

    @staticmethod
    def _strain(H):
        return 0.5 * (H + np.swapaxes(H, -1, -2) + np.swapaxes(H, -1, -2) @ H)

    @classmethod
    def energy(cls, H, lam1, lam2):
        E = cls._strain(H)
        tr = np.trace(E, axis1=-2, axis2=-1)
        return lam1 * np.sum(E * E, axis=(-2, -1)) + 0.5 * lam2 * tr * tr

    @classmethod
    def piola(cls, H, lam1, lam2):
        E = cls._strain(H)
        tr = np.trace(E, axis1=-2, axis2=-1)
        l1 = np.asarray(lam1, dtype=float)[..., None, None]
        l2 = np.asarray(lam2, dtype=float)[..., None, None]
        S = 2.0 * l1 * E + l2 * tr[..., None, None] * np.eye(3)
        return S + H @ S

    @staticmethod
    def hessian(H, lam1, lam2):
        return energy_hessian("stvk", H + np.eye(3), lam1, lam2)

    def _H(self, z):
        # keeps long double input in long double
        z = np.asarray(z)
        return z.astype(np.result_type(z.dtype, np.float64), copy=False).reshape(-1, 3, 3)

    def value(self, z):
        m = self.model
        return float(np.sum(m.volume * self.energy(self._H(z), m.lam1, m.lam2)))

    def grad(self, z):
        m = self.model
        return (m.volume[:, None, None] * self.piola(self._H(z), m.lam1, m.lam2)).ravel()

    def prox(self, target, weights):
        m = self.model
        mu_eff = np.asarray(weights, dtype=float).reshape(-1, 9)[:, 0]
        H = newton_prox(self._H(target), mu_eff, m.volume, m.lam1, m.lam2,
                        self.energy, self.piola, self.hessian)
        return H.ravel()


def verification_model(lam1=1e-3, lam2=1e-3, cells=(1, 1, 1), h=1.0):
    nodes, tets = box_tet_mesh(*cells, h=h)
    return make_model(nodes, tets, density=1.0, dt=1.0, lam1=lam1, lam2=lam2,
                      energy_kind="stvk")


def construct_verification_problem(scheme, lam1=1e-3, lam2=1e-3, stretch=(1.04, 0.98, 1.02),
                                   noise=0.01, seed=0, rho_fraction=None, f_budget=5.0,
                                   mu=None):
    """Small StVK problem with ``B = I`` on which the local bound is certified.

    Unknowns are node displacements ``x`` and displacement gradients
    ``z = D x``, so ``g(z) = sum_i v_i psi(I + z_i)``. The target
    ``x_tilde`` is a stretched and perturbed unit cube and
    ``G = s (D^T D + 0.1 sigma_min^2 I)``, which keeps ``K`` well conditioned
    on the range of ``D``. The scale ``s`` puts ``rho(K)`` at ``rho_fraction``
    of its admissible limit, then ``mu`` is doubled from 1 until every
    hypothesis holds. Passing ``mu`` skips the search and may give a
    certificate with ``certified == False``.

    For x-z-u the start is ``x0 = x_tilde + d`` with ``f(x0) = f_budget``,
    ``z0 = D x0`` and ``u0 = grad g(z0) / mu``. For z-x-u it is
    ``x0 = x_tilde``, ``z0 = D x0`` and ``u0 = 0``.

    Parameters
    ----------
    scheme : {"xzu", "zxu"}

    Returns
    -------
    problem : SeparableProblem
    state0 : SolverState
    certificate : ConvergenceCertificate
    """
    if scheme not in ("xzu", "zxu"):
        raise ValueError(f"scheme must be 'xzu' or 'zxu', got {scheme!r}")
    if rho_fraction is None:
        rho_fraction = 0.01 if scheme == "xzu" else 0.03
    if not 0.0 < rho_fraction < 1.0:
        raise ValueError("rho_fraction must lie in (0, 1)")
    if f_budget < 0:
        raise ValueError("f_budget must be non-negative")
    model = verification_model(lam1, lam2)
    D = model.deformation_operator()
    q, n = D.shape
    oracle = StVKDisplacementOracle(model)
    rng = np.random.default_rng(seed)
    X = model.nodes
    x_tilde = (X * (np.asarray(stretch, dtype=float) - 1.0)
               + noise * rng.standard_normal(X.shape)).ravel()

    DtD = (D.T @ D).toarray()
    ev, V = np.linalg.eigh(DtD)
    positive = ev > ev[-1] * n * np.finfo(float).eps
    G0 = DtD + 0.1 * ev[positive][0] * np.eye(n)
    K0 = D @ np.linalg.solve(G0, D.T.toarray())
    rho0 = float(np.linalg.eigvalsh(0.5 * (K0 + K0.T))[-1])

    budget = f_budget if scheme == "xzu" else 0.0
    T_bound = oracle.value(D @ x_tilde) + budget
    if budget > 0:
        # the offset moves g(z0) a little, so allow slack in the bound used for G
        T_bound = 2.0 * T_bound + 1.0
    L, _ = per_element_bounds(model, T_bound + 1.0)
    limit = 1.0 / (2.0 * L) if scheme == "xzu" else 1.0 / L
    s = rho0 / (rho_fraction * limit)
    G = sp.csr_matrix(s * G0)
    problem = SeparableProblem(D, sp.identity(q, format="csr"), np.zeros(q), G, x_tilde,
                               oracle, name=f"stvk_verification_{scheme}")
    problem.model = model
    problem.D = D

    x0 = x_tilde.copy()
    if budget > 0:
        d = rng.standard_normal(n)
        x0 = x_tilde + d * np.sqrt(2.0 * budget / float(d @ (G @ d)))
    z0 = D @ x0
    certify = certify_xzu if scheme == "xzu" else certify_zxu

    def start(m):
        u0 = oracle.grad(z0) / m if scheme == "xzu" else np.zeros(q)
        return make_state(problem, x0, z0, u0, mu=m)

    if mu is not None:
        state0 = start(mu)
        cert = certify(problem, state0, mu)
    else:
        m = 1.0
        Kd = dense_K(problem) if scheme == "zxu" else None
        while True:
            if Kd is not None and _sigma_min_I_minus_muK(Kd, m) < 1e-8:
                m *= 1.0 + 1e-6
            state0 = start(m)
            cert = certify(problem, state0, m)
            if cert.certified:
                break
            if m >= MU_CAP:
                raise RuntimeError(f"no certifying mu below {MU_CAP:g}: {cert.conditions}")
            m *= 2.0
    cert.G_scale = float(s)
    logger.info("%s certificate: mu=%g gamma=%.6g", scheme, cert.mu, cert.gamma)
    return problem, state0, cert


@dataclass
class ShrinkageReport:
    """Measured shrinkage of a plain ADMM run against a certificate.

    ``diffs[k]`` is ``|B z^{k+1} - B z^k|`` (x-z-u) or ``|v^{k+1} - v^k|``
    (z-x-u). ``ratios[j] = diffs[j+1] / diffs[j]`` for all ``j`` before the
    numerical floor.
    """

    scheme: str
    gamma: float
    diffs: np.ndarray
    ratios: np.ndarray
    lagrangian: np.ndarray

    @property
    def max_ratio(self):
        return float(np.max(self.ratios)) if self.ratios.size else float("nan")

    def passed(self, tol=1e-8):
        return bool(self.ratios.size == 0 or self.max_ratio <= self.gamma + tol)

    def rows(self):
        """``(k, ratio, gamma_bound)`` rows, ``k`` counting from 1."""
        return [(k + 1, float(r), float(self.gamma)) for k, r in enumerate(self.ratios)]


class _ExtendedPlainADMM:
    """Plain ADMM replica in ``np.longdouble`` for small problems with diagonal ``B``.

    Linear solves use a double-precision Cholesky factor plus iterative
    refinement with long double residuals; the prox must accept long double
    targets.
    """

    def __init__(self, problem, mu):
        if problem.b_diag is None or problem.has_soft:
            raise ValueError("extended precision needs a diagonal B and hard rows only")
        ld = np.longdouble
        self.problem, self.mu = problem, ld(mu)
        self.A = problem.A.toarray().astype(ld)
        self.AT = self.A.T.copy()
        self.G = problem.G.toarray().astype(ld)
        self.b = problem.b_diag.astype(ld)
        self.c = problem.c.astype(ld)
        self.Gxt = self.G @ problem.x_tilde.astype(ld)
        self.M = self.G + self.mu * (self.AT @ self.A)
        self._M_fac = sla.cho_factor(self.M.astype(float))
        self._G_fac = sla.cho_factor(self.G.astype(float))

    @staticmethod
    def _solve(M, fac, rhs, rounds=4):
        x = sla.cho_solve(fac, rhs.astype(float)).astype(np.longdouble)
        for _ in range(rounds):
            x += sla.cho_solve(fac, (rhs - M @ x).astype(float))
        return x

    def K(self, y):
        return self.A @ self._solve(self.G, self._G_fac, self.AT @ y)

    def x_update(self, z, u):
        rhs = self.Gxt + self.mu * (self.AT @ (self.b * z + self.c - u))
        return self._solve(self.M, self._M_fac, rhs)

    def z_update(self, x, u):
        v = self.A @ x + u - self.c
        return np.asarray(self.problem.g.prox(v / self.b, self.mu * self.b * self.b))

    def step(self, scheme, x, z, u):
        if scheme == "xzu":
            x = self.x_update(z, u)
            z = self.z_update(x, u)
        else:
            z = self.z_update(x, u)
            x = self.x_update(z, u)
        return x, z, u + self.A @ x - self.b * z - self.c


def verify_shrinkage(problem, state0, certificate, n_iters=5000, floor=SHRINK_FLOOR,
                     precision="auto"):
    """Run plain ADMM and compare consecutive difference ratios with ``gamma``.

    Comparison stops once a difference drops below ``floor`` times the first
    one. A start that is already stationary yields an empty report.

    Parameters
    ----------
    precision : {"auto", "double", "extended"}
        ``"extended"`` runs the iteration in ``np.longdouble``, which pushes the
        round-off plateau of the differences well below ``floor``. It needs a
        diagonal ``B`` and a prox that preserves long double input
        (``g.supports_extended``). ``"auto"`` picks it when available.
    """
    scheme = "xzu" if certificate.theorem_id.startswith("xzu") else "zxu"
    mu = state0.mu
    if precision == "auto":
        ok = (getattr(problem.g, "supports_extended", False) and problem.b_diag is not None
              and not problem.has_soft)
        precision = "extended" if ok else "double"
    if precision == "double":
        step = step_xzu if scheme == "xzu" else step_zxu
        Kop = K_operator(problem)

        def advance(st):
            return step(problem, st)

        def lagr(st):
            return augmented_lagrangian(problem, st)
    elif precision == "extended":
        ext = _ExtendedPlainADMM(problem, mu)
        Kop = ext.K

        def advance(st):
            x, z, u = ext.step(scheme, *st)
            return (x, z, u)

        def lagr(st):
            x, z, u = (np.asarray(a, dtype=float) for a in st)
            return augmented_lagrangian(problem, make_state(problem, x, z, u, mu))
    else:
        raise ValueError(f"unknown precision {precision!r}")

    def parts(st):
        return (st.x, st.z, st.u) if precision == "double" else st

    def measure(st):
        _, z, u = parts(st)
        if scheme == "xzu":
            return problem.Bz(z) if precision == "double" else ext.b * z
        return u - mu * Kop(u)

    state = state0 if precision == "double" else tuple(
        a.astype(np.longdouble) for a in (state0.x, state0.z, state0.u))
    prev = measure(state)
    diffs, lag = [], [lagr(state)]
    for _ in range(n_iters):
        state = advance(state)
        cur = measure(state)
        diffs.append(float(np.linalg.norm((cur - prev).astype(float))))
        lag.append(lagr(state))
        prev = cur
        if diffs[0] == 0.0 or diffs[-1] < floor * diffs[0]:
            break
    diffs = np.asarray(diffs)
    ratios = []
    if diffs.size and diffs[0] > 0:
        for k in range(diffs.size - 1):
            if diffs[k + 1] < floor * diffs[0] or diffs[k] == 0.0:
                break
            ratios.append(diffs[k + 1] / diffs[k])
    return ShrinkageReport(scheme, float(certificate.gamma), diffs, np.asarray(ratios),
                           np.asarray(lag))
