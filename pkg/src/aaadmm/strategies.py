"""Anderson-accelerated ADMM solvers with residual-based fall-back.

Four accelerated schemes are provided:

``general_xzu``
    accelerate the pair ``(z, u)`` of the x-z-u iteration, accept on a
    decrease of the combined residual.
``general_zxu``
    same for the pair ``(x, u)`` of the z-x-u iteration.
``separable_xzu_z``
    accelerate ``z`` alone and recover ``u`` from the gradient of g; accept on
    a decrease of the forward residual ``|A x_next - B z - c|``.
``separable_zxu_u``
    accelerate ``u`` alone, combining the x history with the same
    coefficients; accept on a decrease of ``|A x - B z_next - c|``.

Baselines ``plain_xzu``, ``plain_zxu`` and ``over_relaxed`` share the same
trace format.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from .anderson import AndersonWindow
from .core import SolverState, step_over_relaxed, step_xzu, step_zxu

SCHEMES = ("general_xzu", "general_zxu", "separable_xzu_z", "separable_zxu_u",
           "plain_xzu", "plain_zxu", "over_relaxed")
_ALIASES = {"plain": "plain_xzu"}


@dataclass
class AccelConfig:
    """Solver settings.

    Parameters
    ----------
    m : int
        Window size. The general schemes fit ``m - 1`` residual differences,
        the separable schemes ``m``.
    max_iters : int
        Maximum number of accepted iterations.
    epsilon : float
        Threshold on the scheme's acceptance residual.
    scheme : str
    beta : float
        Anderson mixing parameter.
    alpha : float
        Relaxation parameter of ``over_relaxed``.
    rc_tol : float, optional
        Also stop once the normalized combined residual of an accepted step
        drops below this value.
    scale : float
        Typical range of the variables, used to normalize residuals.
    """

    m: int = 6
    max_iters: int = 1000
    epsilon: float = 1e-10
    scheme: str = "separable_xzu_z"
    beta: float = 1.0
    alpha: float = 1.7
    rc_tol: float = None
    scale: float = 1.0

    def __post_init__(self):
        self.scheme = _ALIASES.get(self.scheme, self.scheme)
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if int(self.m) != self.m or self.m < 0:
            raise ValueError("m must be a non-negative integer")
        if self.scheme.startswith("general") and self.m < 1:
            raise ValueError("general schemes need m >= 1")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if not self.scale > 0:
            raise ValueError("scale must be positive")


@dataclass
class TraceRow:
    k: int
    residual: float
    R_c: float
    R_f: float
    accepted: bool
    reset: bool
    wall_time: float


@dataclass
class RunTrace:
    """Per-step records of one solve. Every row is one evaluated ADMM step."""

    scheme: str
    rows: list = field(default_factory=list)
    n_invalid: int = 0

    def __len__(self):
        return len(self.rows)

    def column(self, name):
        return np.array([getattr(r, name) for r in self.rows])

    def iterations_to(self, rc_tol):
        """Number of steps until an accepted step reaches ``R_c < rc_tol`` (``None`` if never)."""
        for i, row in enumerate(self.rows):
            if row.accepted and row.R_c < rc_tol:
                return i + 1
        return None

    def time_to(self, rc_tol):
        for row in self.rows:
            if row.accepted and row.R_c < rc_tol:
                return row.wall_time
        return None

    def is_safe(self):
        """Accepted rows not exempted by a reset have a smaller residual than the previous accepted row."""
        prev = None
        for row in self.rows:
            if not row.accepted:
                continue
            if prev is not None and not row.reset and not row.residual < prev:
                return False
            prev = row.residual
        return True


def _split_metrics(problem, prev, new, order, scale):
    """Raw combined residual (no mu), normalized combined and forward residuals."""
    rp = problem.constraint_residual(new.x, new.z)
    if order == "xzu":
        d = problem.Bz(new.z - prev.z)
        d = d[problem.hard] if problem.has_soft else d
        fwd = problem.constraint_residual(new.x, prev.z)
    else:
        d = problem._Ah @ (new.x - prev.x)
        fwd = problem.constraint_residual(prev.x, new.z)
    raw = float(rp @ rp) + float(d @ d)
    denom = problem.q * scale * scale
    return raw, float(np.sqrt(new.mu * raw / denom)), float(np.sqrt(float(fwd @ fwd) / denom))


class _Clock:
    def __init__(self):
        self.t0 = time.perf_counter()

    def __call__(self):
        return time.perf_counter() - self.t0


def _valid(problem, vec, z=None):
    if not np.all(np.isfinite(vec)):
        return False
    if z is not None and problem.g.has_indicator:
        return bool(np.isfinite(problem.g.value(z)))
    return True


def solve_plain(problem, state0, config, callback=None):
    """Un-accelerated ADMM (``plain_xzu``, ``plain_zxu`` or ``over_relaxed``).

    Stops when the combined residual (without ``mu``) drops below
    ``epsilon``.
    """
    scheme = config.scheme if config.scheme in ("plain_zxu", "over_relaxed") else "plain_xzu"
    order = "zxu" if scheme == "plain_zxu" else "xzu"
    if scheme == "over_relaxed":
        def step(s):
            return step_over_relaxed(problem, s, config.alpha)
    else:
        step = {"xzu": step_xzu, "zxu": step_zxu}[order]
        step = (lambda f: (lambda s: f(problem, s)))(step)
    trace = RunTrace(scheme)
    clock = _Clock()
    cur = state0
    for k in range(config.max_iters):
        new = step(cur)
        if callback is not None:
            callback(new)
        raw, rc, rf = _split_metrics(problem, cur, new, order, config.scale)
        trace.rows.append(TraceRow(k, raw, rc, rf, True, k == 0, clock()))
        cur = new
        if raw < config.epsilon or (config.rc_tol is not None and rc < config.rc_tol):
            break
    return cur, trace


def _solve_general(problem, state0, config, order, callback, aa_hook):
    mu = state0.mu
    step = step_xzu if order == "xzu" else step_zxu
    window = AndersonWindow(max(config.m - 1, 0), beta=config.beta)
    trace = RunTrace(f"general_{order}")
    clock = _Clock()
    cur = state0
    default = state0
    r_prev = np.inf
    reset = True
    k = 0
    nfirst = problem.q if order == "xzu" else problem.n_x
    while True:
        star = step(problem, cur)
        if callback is not None:
            callback(star)
        raw, rc, rf = _split_metrics(problem, cur, star, order, config.scale)
        bypass = reset
        if reset or raw < r_prev:
            accepted = True
            default = star
            r_prev = raw
            reset = False
            if order == "xzu":
                q = np.concatenate([cur.z, cur.u])
                g = np.concatenate([star.z, star.u])
            else:
                q = np.concatenate([cur.x, cur.u])
                g = np.concatenate([star.x, star.u])
            window.push(q, g)
            aa = window.accelerate()
            if aa_hook is not None:
                aa = aa_hook(aa)
            first, u_aa = aa[:nfirst], aa[nfirst:]
            if not _valid(problem, aa, first if order == "xzu" else None):
                trace.n_invalid += 1
                cur = star
                window.reset()
                reset = True
            elif order == "xzu":
                cur = SolverState(star.x, first, u_aa, mu, star.k)
            else:
                cur = SolverState(first, star.z, u_aa, mu, star.k)
            k += 1
        else:
            accepted = False
            cur = default
            reset = True
            window.reset()
        trace.rows.append(TraceRow(k, raw, rc, rf, accepted, bypass, clock()))
        if k >= config.max_iters or raw < config.epsilon or \
                (accepted and config.rc_tol is not None and rc < config.rc_tol):
            return SolverState(default.x, default.z, default.u, mu, k), trace


def solve_general_xzu(problem, state0, config, callback=None, aa_hook=None):
    """Accelerate ``(z, u)`` of the x-z-u iteration.

    Each loop runs one ADMM step from the current iterate. The step is
    accepted when the combined residual ``|Ax-Bz-c|^2 + |B dz|^2`` decreased
    or a reset is pending; otherwise the solver reverts to the last accepted
    step and clears the window. Returns the last accepted step and the trace.

    ``callback(state)`` sees every ADMM step; ``aa_hook(vec)`` may modify the
    accelerated vector (testing aid).
    """
    if problem.g.has_indicator:
        raise ValueError("general_xzu cannot accelerate z when g holds an indicator on z; "
                         "use general_zxu or separable_zxu_u")
    return _solve_general(problem, state0, config, "xzu", callback, aa_hook)


def solve_general_zxu(problem, state0, config, callback=None, aa_hook=None):
    """Accelerate ``(x, u)`` of the z-x-u iteration (combined residual uses ``A dx``)."""
    return _solve_general(problem, state0, config, "zxu", callback, aa_hook)


def _require_separable(problem, what):
    if problem.has_soft:
        raise ValueError(f"{what} needs a separable target; this problem has soft rows")
    if problem._G_factor is None:
        raise ValueError(f"{what} needs a positive definite G")


def solve_separable_xzu_z(problem, state0, config, callback=None, aa_hook=None):
    """Accelerate ``z`` alone in the x-z-u iteration.

    The dual is recovered as ``u = B^-T grad g(z) / mu``. When the window
    holds no differences the plain dual update is used instead, which keeps
    an un-accelerated run bitwise identical to plain ADMM.
    """
    _require_separable(problem, "separable_xzu_z")
    g = problem.g
    if not (g.smooth and g.domain_affine):
        raise ValueError("separable_xzu_z needs a differentiable g with affine domain")
    mu = state0.mu
    window = AndersonWindow(config.m, beta=config.beta)
    trace = RunTrace("separable_xzu_z")
    clock = _Clock()
    x_prev, z, u = state0.x, state0.z, state0.u
    z_def_prev = u_def_prev = None
    r_prev = np.inf
    reset = True
    k = 0
    while True:
        x_new = problem.x_update(z, u, mu)
        r = float(np.linalg.norm(problem.constraint_residual(x_new, z)))
        bypass = reset
        reset = False
        accepted = True
        if not bypass and not r < r_prev:
            accepted = False
            trace.rows.append(TraceRow(k, r, np.nan, np.nan, False, False, clock()))
            z, u = z_def_prev, u_def_prev
            x_new = problem.x_update(z, u, mu)
            r = float(np.linalg.norm(problem.constraint_residual(x_new, z)))
            reset = True
            window.reset()
        z_d = problem.z_update(x_new, u, mu)
        u_d = problem.u_update(u, x_new, z_d)
        star = SolverState(x_new, z_d, u_d, mu, k + 1)
        if callback is not None:
            callback(star)
        _, rc, rf = _split_metrics(problem, SolverState(x_prev, z, u, mu), star, "xzu",
                                   config.scale)
        trace.rows.append(TraceRow(k, r, rc, rf, True, bypass or not accepted, clock()))
        # the initial dual need not match the separable iterate, so a zero
        # first residual is not a fixed point
        if k + 1 >= config.max_iters or (k > 0 and r < config.epsilon) or \
                (config.rc_tol is not None and rc < config.rc_tol):
            return star, trace
        window.push(z, z_d)
        z_next = window.accelerate()
        if aa_hook is not None:
            z_next = aa_hook(z_next)
        if window.n_diffs == 0:
            u_next = u_d
        elif _valid(problem, z_next, z_next):
            u_next = problem.dual_from_z(z_next, mu)
        else:
            u_next = None
        if u_next is None or not np.all(np.isfinite(u_next)):
            trace.n_invalid += 1
            z_next, u_next = z_d, u_d
            window.reset()
            reset = True
        x_prev = x_new
        z_def_prev, u_def_prev = z_d, u_d
        z, u = z_next, u_next
        k += 1
        r_prev = r


def solve_separable_zxu_u(problem, state0, config, callback=None, aa_hook=None):
    """Accelerate ``u`` alone in the z-x-u iteration.

    Coefficients come from the u history; the x history is combined with the
    same coefficients so that each accelerated pair keeps
    ``x = x_tilde - mu G^-1 A^T u``.
    """
    _require_separable(problem, "separable_zxu_u")
    mu = state0.mu
    window = AndersonWindow(config.m, beta=config.beta)
    trace = RunTrace("separable_zxu_u")
    clock = _Clock()
    x, u = state0.x, state0.u
    x_def_prev = u_def_prev = None
    r_prev = np.inf
    reset = True
    k = 0
    while True:
        z_new = problem.z_update(x, u, mu)
        r = float(np.linalg.norm(problem.constraint_residual(x, z_new)))
        bypass = reset
        reset = False
        accepted = True
        if not bypass and not r < r_prev:
            accepted = False
            trace.rows.append(TraceRow(k, r, np.nan, np.nan, False, False, clock()))
            x, u = x_def_prev, u_def_prev
            z_new = problem.z_update(x, u, mu)
            r = float(np.linalg.norm(problem.constraint_residual(x, z_new)))
            reset = True
            window.reset()
        x_d = problem.x_update(z_new, u, mu)
        u_d = problem.u_update(u, x_d, z_new)
        star = SolverState(x_d, z_new, u_d, mu, k + 1)
        if callback is not None:
            callback(star)
        _, rc, rf = _split_metrics(problem, SolverState(x, z_new, u, mu), star, "zxu",
                                   config.scale)
        trace.rows.append(TraceRow(k, r, rc, rf, True, bypass or not accepted, clock()))
        # the initial dual need not match the separable iterate, so a zero
        # first residual is not a fixed point
        if k + 1 >= config.max_iters or (k > 0 and r < config.epsilon) or \
                (config.rc_tol is not None and rc < config.rc_tol):
            return star, trace
        window.push(u, u_d, extra=x_d)
        u_next, x_next = window.accelerate(with_extra=True)
        if aa_hook is not None:
            u_next = aa_hook(u_next)
        if not (_valid(problem, u_next) and _valid(problem, x_next)):
            trace.n_invalid += 1
            x_next, u_next = x_d, u_d
            window.reset()
            reset = True
        x_def_prev, u_def_prev = x_d, u_d
        x, u = x_next, u_next
        k += 1
        r_prev = r


_SOLVERS = {
    "general_xzu": solve_general_xzu,
    "general_zxu": solve_general_zxu,
    "separable_xzu_z": solve_separable_xzu_z,
    "separable_zxu_u": solve_separable_zxu_u,
}


def solve(problem, state0, config, callback=None):
    """Dispatch on ``config.scheme``."""
    if config.scheme in _SOLVERS:
        return _SOLVERS[config.scheme](problem, state0, config, callback=callback)
    return solve_plain(problem, state0, config, callback=callback)


def classify_applicability(problem):
    """Report the structural conditions of g and recommend a scheme.

    Returns a dict with the booleans ``C1``, ``C2``, ``C3'``, ``C4``,
    ``C5'``, ``C6``, the list ``applicable`` of usable schemes, the
    ``recommended`` scheme and ``linear_u_map`` (u is a linear function of z,
    which holds for quadratic g).
    """
    g = problem.g
    cond = {
        "C1": bool(g.bounded_below),
        "C2": True,
        "C3'": bool(g.smooth),
        "C4": bool(g.domain_affine),
        "C5'": bool(g.strictly_convex),
        "C6": bool(g.range_affine),
    }
    separable = not problem.has_soft and problem._G_factor is not None
    applicable = ["plain_xzu", "plain_zxu", "over_relaxed", "general_zxu"]
    if not g.has_indicator:
        applicable.append("general_xzu")
    if separable and cond["C2"] and cond["C3'"] and cond["C4"]:
        applicable.append("separable_xzu_z")
    if separable:
        applicable.append("separable_zxu_u")
    if separable and cond["C2"] and cond["C3'"] and cond["C4"]:
        rec = "separable_xzu_z"
    elif separable and cond["C5'"] and cond["C6"]:
        rec = "separable_zxu_u"
    elif g.has_indicator:
        rec = "general_zxu"
    else:
        rec = "general_xzu"
    return {**cond, "applicable": applicable, "recommended": rec,
            "linear_u_map": bool(g.quadratic and rec == "separable_xzu_z")}
