import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, strategies as st

from aaadmm.core import (FactorizationError, SeparableProblem, augmented_lagrangian,
                         check_stationary, make_state, residuals, step_over_relaxed, step_xzu,
                         step_zxu, u_update, x_update_xzu, z_update)
from aaadmm.oracles import ProjectionOracle, QuadraticOracle, ZeroOracle


def _nonneg():
    return ProjectionOracle(lambda P: np.maximum(P, 0.0), 1)


def _state(x, z, u, mu=1.0):
    return make_state_arrays(np.atleast_1d(x), np.atleast_1d(z), np.atleast_1d(u), mu)


def make_state_arrays(x, z, u, mu):
    from aaadmm.core import SolverState
    return SolverState(np.asarray(x, float), np.asarray(z, float), np.asarray(u, float), mu)


# -- augmented Lagrangian ------------------------------------------------------------

@pytest.mark.parametrize("x, z, u, expected", [(0, 0, 0, 0.0), (1, 0, 0, 1.0), (0, 0, 2, 0.0)])
def test_augmented_lagrangian_hand_values(scalar_problem, x, z, u, expected):
    p = scalar_problem()
    assert augmented_lagrangian(p, _state(x, z, u)) == pytest.approx(expected, abs=1e-15)


def test_augmented_lagrangian_infinite_off_domain():
    p = SeparableProblem(np.eye(1), np.eye(1), [0.0], np.eye(1), [0.0],
                         _nonneg())
    assert augmented_lagrangian(p, _state(0, -1, 0)) == np.inf


@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5), st.floats(0.1, 10))
def test_augmented_lagrangian_matches_expanded_form(x, z, u, mu):
    p = SeparableProblem(np.array([[2.0]]), np.array([[0.5]]), [0.3], np.array([[3.0]]), [1.0],
                         QuadraticOracle(1.5, [0.2]))
    expected = (1.5 * (x - 1.0) ** 2 + 0.75 * (z - 0.2) ** 2
                + 0.5 * mu * (2 * x - 0.5 * z + u - 0.3) ** 2 - 0.5 * mu * u ** 2)
    got = augmented_lagrangian(p, _state(x, z, u, mu))
    assert got == pytest.approx(expected, rel=1e-12, abs=1e-10)


# -- updates -------------------------------------------------------------------------

def test_x_update_hand_values(scalar_problem):
    assert x_update_xzu(scalar_problem(), np.array([1.0]), np.array([0.0]), 1.0)[0] == \
        pytest.approx(0.5)
    p = scalar_problem(G=2.0, x_tilde=1.0)
    assert x_update_xzu(p, np.array([1.0]), np.array([1.0]), 2.0)[0] == pytest.approx(0.5)


def test_x_update_without_coupling_returns_x_tilde():
    xt = np.array([1.0, -2.0, 3.0])
    p = SeparableProblem(sp.csr_matrix((2, 3)), np.eye(2), np.zeros(2), np.diag([1.0, 2, 3]),
                         xt, ZeroOracle())
    np.testing.assert_allclose(x_update_xzu(p, np.zeros(2), np.zeros(2), 1.0), xt, atol=1e-14)


def test_x_update_solves_linear_system_to_tolerance(random_convex):
    p = random_convex(3)
    rng = np.random.default_rng(0)
    z, u, mu = rng.standard_normal(p.q), rng.standard_normal(p.q), 2.5
    x = x_update_xzu(p, z, u, mu)
    M = p.G.toarray() + mu * p.A.T @ p.A
    rhs = p.G @ p.x_tilde + mu * p.A.T @ (p.B @ z + p.c - u)
    assert np.linalg.norm(M @ x - rhs) <= 1e-10 * np.linalg.norm(rhs)


def test_singular_system_raises():
    p = SeparableProblem(sp.csr_matrix((1, 2)), np.eye(1), [0.0], np.diag([1.0, 0.0]),
                         [0.0, 0.0], ZeroOracle(), allow_singular_G=True)
    with pytest.raises(FactorizationError):
        x_update_xzu(p, np.zeros(1), np.zeros(1), 1.0)


def test_z_update_examples(scalar_problem):
    assert z_update(scalar_problem(), np.array([1.0]), np.array([0.0]), 1.0)[0] == \
        pytest.approx(0.5)
    hp = SeparableProblem(np.eye(1), np.eye(1), [0.0], np.eye(1), [0.0],
                          _nonneg())
    assert z_update(hp, np.array([-3.0]), np.array([0.0]), 1.0)[0] == 0.0
    B = np.array([[2.0, 1.0], [0.0, 1.0]])
    zp = SeparableProblem(np.eye(2), B, np.zeros(2), np.eye(2), np.zeros(2), ZeroOracle())
    r = np.array([1.0, 3.0])
    np.testing.assert_allclose(z_update(zp, r, np.zeros(2), 1.0), np.linalg.solve(B, r),
                               atol=1e-12)


def test_z_update_prox_optimality(random_convex):
    # grad g(z*) - mu B^T (v - B z*) = 0 with v = A x + u - c
    for diag in (True, False):
        p = random_convex(5, diag_B=diag)
        rng = np.random.default_rng(1)
        x, u, mu = rng.standard_normal(p.n_x), rng.standard_normal(p.q), 1.7
        z = z_update(p, x, u, mu)
        v = p.A @ x + u - p.c
        res = p.g.grad(z) - mu * p.B.T @ (v - p.B @ z)
        assert np.linalg.norm(res) <= 1e-10 * (1 + np.linalg.norm(p.g.grad(z)))


@pytest.mark.parametrize("u, Ax, Bz, c, expected", [
    (0.0, 1.0, 1.0, 0.0, 0.0), (1.0, 2.0, 0.5, 0.0, 2.5), (0.0, 1.0, 0.0, 1.0, 0.0)])
def test_u_update_examples(u, Ax, Bz, c, expected):
    p = SeparableProblem(np.eye(1), np.eye(1), [c], np.eye(1), [0.0], ZeroOracle())
    st_ = _state(0.0, 0.0, u)
    assert u_update(p, st_, np.array([Ax]), np.array([Bz]))[0] == pytest.approx(expected)


# -- steps ---------------------------------------------------------------------------

def test_step_chains_updates(scalar_problem):
    p = scalar_problem()
    new = step_xzu(p, _state(0, 1, 0))
    assert new.x[0] == pytest.approx(0.5)
    assert new.z[0] == pytest.approx(0.25)
    assert new.u[0] == pytest.approx(0.25)
    assert new.k == 1


def test_degenerate_objective_reaches_fixed_point_in_one_step():
    p = SeparableProblem(np.eye(2), np.eye(2), np.zeros(2), 1e-12 * np.eye(2), np.zeros(2),
                         ZeroOracle())
    s = make_state(p, x=[1.0, 2.0], z=[3.0, -1.0], mu=1.0)
    s1 = step_xzu(p, s)
    s2 = step_xzu(p, s1)
    np.testing.assert_allclose(s1.x, s.z, atol=1e-10)
    np.testing.assert_allclose(s2.x, s1.x, atol=1e-10)
    np.testing.assert_allclose(p.A @ s1.x, p.B @ s1.z, atol=1e-10)


def test_step_zxu_from_x_tilde_gives_initial_z(random_convex):
    p = random_convex(2)
    s = make_state(p, x=p.x_tilde, mu=2.0)
    z0 = p.B_inv(p.A @ p.x_tilde - p.c)
    # with u = 0 and g = 0 the z-step reproduces B^-1 (A x0 - c)
    q = SeparableProblem(p.A, p.B, p.c, p.G, p.x_tilde, ZeroOracle())
    np.testing.assert_allclose(step_zxu(q, s).z, z0, atol=1e-12)


def test_feasible_fixed_point_is_invariant(scalar_problem):
    p = scalar_problem()
    s = _state(0.0, 0.0, 0.0)
    for step in (step_xzu, step_zxu, lambda pr, st_: step_over_relaxed(pr, st_, 1.6)):
        s1 = step(p, s)
        np.testing.assert_array_equal(s1.x, s.x)
        np.testing.assert_array_equal(s1.z, s.z)
        np.testing.assert_array_equal(s1.u, s.u)


def test_steps_are_deterministic(random_convex):
    p = random_convex(4)
    s = make_state(p, mu=3.0)
    a, b = s, s
    for _ in range(20):
        a, b = step_xzu(p, a), step_xzu(p, b)
    assert a.x.tobytes() == b.x.tobytes() and a.u.tobytes() == b.u.tobytes()


def test_over_relaxation(scalar_problem):
    p = scalar_problem()
    s = _state(0, 1, 0)
    a1, ref = step_over_relaxed(p, s, 1.0), step_xzu(p, s)
    assert a1.x.tobytes() == ref.x.tobytes() and a1.z.tobytes() == ref.z.tobytes()
    assert a1.u.tobytes() == ref.u.tobytes()
    # alpha = 1.5: x = 0.5, relaxed Ax = 1.5*0.5 - 0.5*1 = 0.25, z = 0.125, u = 0.125
    r = step_over_relaxed(p, s, 1.5)
    assert (r.x[0], r.z[0], r.u[0]) == pytest.approx((0.5, 0.125, 0.125))
    with pytest.raises(ValueError):
        step_over_relaxed(p, s, 2.5)


# -- residuals and stationarity ------------------------------------------------------

def test_residual_hand_values():
    p = SeparableProblem(np.eye(2), np.eye(2), np.zeros(2), np.eye(2), np.zeros(2), ZeroOracle())
    prev = make_state(p, x=[0, 0], z=[0, 0], mu=2.0)
    new = make_state(p, x=[1, 1], z=[0, 1], mu=2.0)
    rep = residuals(p, prev, new, "xzu", scale=1.0)
    assert rep.combined == pytest.approx(4.0)
    assert rep.primal == pytest.approx(1.0)
    assert rep.normalized_combined == pytest.approx(np.sqrt(4.0 / 2))


def test_normalized_combined_example():
    p = SeparableProblem(np.eye(4), np.eye(4), np.zeros(4), np.eye(4), np.zeros(4), ZeroOracle())
    prev = make_state(p, mu=1.0)
    new = make_state(p, x=[2, 0, 0, 0], mu=1.0)
    rep = residuals(p, prev, new, "xzu")
    assert rep.combined == pytest.approx(4.0)
    assert rep.normalized_combined == pytest.approx(1.0)


def test_residuals_zero_at_fixed_point(scalar_problem):
    p = scalar_problem()
    s = _state(0, 0, 0)
    for scheme in ("xzu", "zxu"):
        rep = residuals(p, s, s, scheme)
        assert rep.primal == rep.dual == rep.combined == rep.forward == 0.0


@given(st.integers(0, 10_000), st.sampled_from(["xzu", "zxu"]))
def test_combined_matches_independent_formula(seed, scheme):
    rng = np.random.default_rng(seed)
    q, n = 4, 3
    A, B = rng.standard_normal((q, n)), np.diag(rng.uniform(0.5, 2, q))
    p = SeparableProblem(A, B, rng.standard_normal(q), np.eye(n), np.zeros(n), ZeroOracle())
    prev = make_state(p, rng.standard_normal(n), rng.standard_normal(q), mu=1.3)
    new = make_state(p, rng.standard_normal(n), rng.standard_normal(q), mu=1.3)
    rp = A @ new.x - B @ new.z - p.c
    change = B @ (new.z - prev.z) if scheme == "xzu" else A @ (new.x - prev.x)
    rep = residuals(p, prev, new, scheme)
    assert rep.combined == pytest.approx(1.3 * (rp @ rp + change @ change), rel=1e-12)
    assert min(rep.primal, rep.dual, rep.combined, rep.forward) >= 0


def test_check_stationary(scalar_problem):
    p = scalar_problem()
    ok, _ = check_stationary(p, _state(0.0, 0.0, 0.0))
    assert ok
    # f = (x-1)^2/2, g = z^2/2, x = z: optimum x = z = 0.5, mu u = g'(z) = 0.5
    p = scalar_problem(x_tilde=1.0)
    ok, viol = check_stationary(p, _state(0.5, 0.5, 0.25, mu=2.0))
    assert ok, viol
    ok, viol = check_stationary(p, _state(3.0, -1.0, 0.7))
    assert not ok and viol["primal"] == pytest.approx(4.0)
    zp = SeparableProblem(np.eye(2), np.eye(2), np.zeros(2), 1e-3 * np.eye(2), np.zeros(2),
                          ZeroOracle())
    assert check_stationary(zp, make_state(zp))[0]


def test_construction_validation():
    with pytest.raises(ValueError):
        SeparableProblem(np.eye(2), np.diag([1.0, 0.0]), np.zeros(2), np.eye(2), np.zeros(2),
                         ZeroOracle())
    with pytest.raises(ValueError):
        SeparableProblem(np.eye(2), np.eye(2), np.zeros(2), np.array([[1.0, 1.0], [0.0, 1.0]]),
                         np.zeros(2), ZeroOracle())
    with pytest.raises(ValueError):
        SeparableProblem(np.eye(2), np.eye(3), np.zeros(2), np.eye(2), np.zeros(2), ZeroOracle())
    p = SeparableProblem(np.eye(1), np.eye(1), [0.0], np.eye(1), [0.0], ZeroOracle())
    with pytest.raises(ValueError):
        make_state(p, mu=0.0)
