import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.optimize import minimize
from scipy.spatial.transform import Rotation

from aaadmm.core import check_stationary, make_state
from aaadmm.problems import elastic as el
from aaadmm.strategies import AccelConfig, solve

KINDS = el.ENERGY_KINDS


def fd_gradient(energy, F, h=1e-5):
    g = np.zeros((3, 3))
    for i in range(3):
        for j in range(3):
            E = np.zeros((3, 3))
            E[i, j] = h
            g[i, j] = (energy(F + E) - energy(F - E)) / (2 * h)
    return g


def test_stvk_hand_values():
    assert el.stvk_energy(np.eye(3), 1.0, 1.0) == 0.0
    assert el.stvk_energy(2 * np.eye(3), 1.0, 1.0) == pytest.approx(16.875)
    assert el.stvk_energy(np.diag([1.0, 1.0, 0.0]), 1.0, 1.0) == pytest.approx(0.375)
    np.testing.assert_allclose(el.stvk_piola(np.eye(3), 1.0, 1.0), 0.0)
    np.testing.assert_allclose(el.stvk_piola(2 * np.eye(3), 1.0, 1.0), 15 * np.eye(3))


@pytest.mark.parametrize("kind", KINDS)
def test_rest_state_has_zero_energy_and_stress(kind):
    assert el.energy_density(kind, np.eye(3), 2.0, 3.0) == pytest.approx(0.0, abs=1e-14)
    np.testing.assert_allclose(el.piola(kind, np.eye(3), 2.0, 3.0), 0.0, atol=1e-13)


@pytest.mark.parametrize("kind", KINDS)
def test_gradient_matches_finite_differences(kind):
    rng = np.random.default_rng(1)
    for _ in range(30):
        F = rng.uniform(-2, 2, (3, 3))
        fd = fd_gradient(lambda X: float(el.energy_density(kind, X, 1.3, 0.7)), F)
        P = el.piola(kind, F, 1.3, 0.7)
        assert np.linalg.norm(P - fd) <= 1e-6 * max(1.0, np.linalg.norm(fd))


@pytest.mark.parametrize("kind", KINDS)
def test_hessian_matches_finite_differences(kind):
    rng = np.random.default_rng(2)
    F = np.eye(3) + 0.3 * rng.standard_normal((3, 3))
    H = el.energy_hessian(kind, F, 1.0, 2.0)[0]
    h = 1e-6
    for j in range(9):
        dF = np.zeros(9)
        dF[j] = h
        dF = dF.reshape(3, 3)
        col = (el.piola(kind, F + dF, 1.0, 2.0) - el.piola(kind, F - dF, 1.0, 2.0)).ravel() / (2 * h)
        np.testing.assert_allclose(H[:, j], col, atol=1e-5 * max(1, np.abs(col).max()))


@given(st.integers(0, 10_000))
def test_frame_invariance(seed):
    rng = np.random.default_rng(seed)
    F = rng.uniform(-2, 2, (3, 3))
    R = Rotation.random(random_state=seed).as_matrix()
    for kind in ("corotational", "neohookean", "stvk"):
        a = el.energy_density(kind, F, 1.0, 1.0)
        b = el.energy_density(kind, R @ F, 1.0, 1.0)
        assert b == pytest.approx(a, rel=1e-10, abs=1e-10)


def test_svd_rotation_safe():
    rng = np.random.default_rng(0)
    F = rng.standard_normal((50, 3, 3))
    U, s, Vt = el.svd_rotation_safe(F)
    np.testing.assert_allclose(np.linalg.det(U), 1.0, atol=1e-12)
    np.testing.assert_allclose(np.linalg.det(Vt), 1.0, atol=1e-12)
    np.testing.assert_allclose(np.einsum("nij,nj,njk->nik", U, s, Vt), F, atol=1e-12)
    np.testing.assert_array_equal(np.sign(np.prod(s, axis=1)), np.sign(np.linalg.det(F)))


def test_element_state_caches_singular_values():
    rng = np.random.default_rng(4)
    F = rng.standard_normal((3, 3))
    es = el.ElementState.from_F(F)
    np.testing.assert_allclose(np.abs(es.singulars), np.linalg.svd(F, compute_uv=False),
                               atol=1e-10)


# -- prox ------------------------------------------------------------------------------

@pytest.mark.parametrize("kind", KINDS)
def test_prox_of_identity_is_identity(kind):
    F = el.element_prox(np.eye(3), 1.0, 1.0, 1.0, 1.0, kind)
    np.testing.assert_allclose(F, np.eye(3), atol=1e-14)


@pytest.mark.parametrize("kind", KINDS)
def test_prox_large_penalty_returns_target(kind):
    T = np.diag([1.1, 0.9, 1.05]) + 0.05
    F = el.element_prox(T, 1e8, 1.0, 1.0, 1.0, kind)
    np.testing.assert_allclose(F, T, atol=1e-6)


def test_stvk_prox_matches_cubic_oracle():
    # by symmetry the minimizer is s I with 7.5 s^3 - 4.5 s - 6 = 0
    roots = np.roots([7.5, 0.0, -4.5, -6.0])
    s = max(r.real for r in roots if abs(r.imag) < 1e-12)
    F = el.element_prox(2 * np.eye(3), 1.0, 1.0, 1.0, 1.0, "stvk")
    np.testing.assert_allclose(F, s * np.eye(3), atol=1e-8)


def test_stvk_prox_matches_generic_minimizer():
    rng = np.random.default_rng(7)
    T = np.eye(3) + 0.4 * rng.standard_normal((3, 3))

    def obj(f):
        X = f.reshape(3, 3)
        return 2.0 * el.stvk_energy(X, 1.0, 0.5) + 1.5 * np.sum((X - T) ** 2)

    def jac(f):
        X = f.reshape(3, 3)
        return (2.0 * el.stvk_piola(X, 1.0, 0.5) + 3.0 * (X - T)).ravel()

    ref = minimize(obj, T.ravel(), jac=jac, method="BFGS", options={"gtol": 1e-12}).x
    F = el.element_prox(T, 3.0, 2.0, 1.0, 0.5, "stvk")
    np.testing.assert_allclose(F.ravel(), ref, atol=1e-7)


@pytest.mark.parametrize("kind", KINDS)
def test_prox_optimality(kind):
    rng = np.random.default_rng(3)
    T = np.eye(3)[None] + 0.3 * rng.standard_normal((20, 3, 3))
    mu, v = 5.0, 0.7
    F = el.element_prox(T, mu, v, 2.0, 1.0, kind)
    grad = v * el.piola(kind, F, 2.0, 1.0) + mu * (F - T)
    assert np.max(np.linalg.norm(grad.reshape(20, 9), axis=1)) <= 1e-8


def test_prox_with_limits_projects_after_minimizing():
    T = np.diag([1.5, 1.0, 0.7])
    F = el.element_prox(T, 1.0, 1.0, 1.0, 1.0, "stvk", limits=(0.95, 1.05))
    free = el.element_prox(T, 1.0, 1.0, 1.0, 1.0, "stvk")
    np.testing.assert_allclose(F, el.strain_limit_project(free, 0.95, 1.05), atol=1e-14)
    s = np.linalg.svd(F, compute_uv=False)
    assert np.all((s >= 0.95 - 1e-12) & (s <= 1.05 + 1e-12))


def test_prox_rejects_bad_penalty():
    with pytest.raises(ValueError):
        el.element_prox(np.eye(3), 0.0, 1.0, 1.0, 1.0)


# -- projections -----------------------------------------------------------------------

def test_strain_limit_examples():
    np.testing.assert_allclose(el.strain_limit_project(np.eye(3)), np.eye(3), atol=1e-14)
    np.testing.assert_allclose(el.strain_limit_project(np.diag([2.0, 1.0, 1.0])),
                               np.diag([1.05, 1.0, 1.0]), atol=1e-14)


@given(st.integers(0, 10_000))
def test_strain_limit_idempotent(seed):
    F = np.random.default_rng(seed).uniform(-2, 2, (3, 3))
    P = el.strain_limit_project(F)
    np.testing.assert_allclose(el.strain_limit_project(P), P, atol=1e-10)


def test_halfspace_examples():
    floor = (np.array([0.0, 1.0, 0.0]), 0.0)
    np.testing.assert_array_equal(el.halfspace_project(np.array([1.0, 2.0, 3.0]), floor),
                                  [1.0, 2.0, 3.0])
    np.testing.assert_allclose(el.halfspace_project(np.array([0.0, -1.0, 0.0]), floor), 0.0)
    n = np.array([1.0, 2.0, 2.0]) / 3.0
    p = np.array([-1.0, 0.5, -2.0])
    expected = p - (p @ n - 0.5) * n
    np.testing.assert_allclose(el.halfspace_project(p, (n, 0.5)), expected, atol=1e-15)


# -- model and problem -----------------------------------------------------------------

def test_model_invariants():
    nodes, tets = el.box_tet_mesh(2, 1, 1, h=0.5)
    model = el.make_model(nodes, tets)
    assert np.all(model.volume > 0)
    assert model.volume.sum() == pytest.approx(0.25)
    P = nodes[model.tets]
    Dm = np.swapaxes(P[:, 1:] - P[:, :1], 1, 2)
    np.testing.assert_allclose(model.rest_inverse @ Dm, np.broadcast_to(np.eye(3), Dm.shape),
                               atol=1e-10)
    F = (model.deformation_operator() @ nodes.ravel()).reshape(-1, 3, 3)
    np.testing.assert_allclose(F, np.broadcast_to(np.eye(3), F.shape), atol=1e-12)
    assert model.mass.sum() == pytest.approx(1000.0 * 0.25)


def test_degenerate_tet_rejected():
    nodes = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]], float)
    with pytest.raises(ValueError):
        el.make_model(nodes, [[0, 1, 2, 3]])


def test_boundary_faces_form_closed_surface():
    nodes, tets = el.box_tet_mesh(2, 2, 1)
    faces = el.boundary_faces(tets)
    edges = np.sort(np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]]), axis=1)
    _, counts = np.unique(edges, axis=0, return_counts=True)
    assert np.all(counts == 2)
    # 2x2x1 box has 2*(4 + 2 + 2) squares split into two triangles each
    assert len(faces) == 32


def test_rest_pose_is_stationary():
    nodes = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], float)
    model = el.make_model(nodes, [[0, 1, 2, 3]], lam1=1.0, lam2=1.0)
    prob = el.build_problem(model, nodes.ravel())
    x, z, u = el.initial_state_arrays(prob, nodes.ravel())
    assert check_stationary(prob, make_state(prob, x, z, u, mu=1.0), 1e-12)[0]


def _two_tet_bar(kind="stvk"):
    nodes = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1], [1, 1, 1]], float) * 0.1
    model = el.make_model(nodes, [[0, 1, 2, 3], [1, 2, 3, 4]], density=1000.0, dt=0.05,
                          lam1=2e3, lam2=1e3, energy_kind=kind)
    g = np.tile([0.0, -9.8, 0.0], 5)
    x_tilde = nodes.ravel() + model.dt ** 2 * g
    return model, x_tilde


def _dense_minimizer(model, x_tilde):
    G = np.repeat(model.mass, 3) / model.dt ** 2
    D = model.deformation_operator()

    def obj(x):
        d = x - x_tilde
        return 0.5 * d @ (G * d) + model.elastic_energy(x)

    def jac(x):
        F = model.deformation_gradients(x)
        P = model.volume[:, None, None] * el.piola(model.energy_kind, F, model.lam1, model.lam2)
        return G * (x - x_tilde) + D.T @ P.ravel()

    return minimize(obj, x_tilde, jac=jac, method="BFGS", options={"gtol": 1e-11}).x


@pytest.mark.parametrize("kind", KINDS)
def test_two_tet_bar_matches_dense_minimizer(kind):
    model, x_tilde = _two_tet_bar(kind)
    ref = _dense_minimizer(model, x_tilde)
    for scaling in (True, False):
        prob = el.build_problem(model, x_tilde, use_scaling=scaling)
        x, z, u = el.initial_state_arrays(prob, x_tilde)
        state, trace = solve(prob, make_state(prob, x, z, u, mu=1.0),
                             AccelConfig(scheme="separable_xzu_z", max_iters=2000,
                                         epsilon=1e-300, rc_tol=1e-12))
        assert np.linalg.norm(prob.constraint_residual(state.x, state.z)) < 1e-8
        np.testing.assert_allclose(state.x, ref, atol=1e-7)


def test_bar_scenario_accelerated_and_plain_agree():
    model, x_tilde, _ = el.bar_scenario("stvk", dims=(3, 1, 1))
    prob = el.build_problem(model, x_tilde)
    x, z, u = el.initial_state_arrays(prob, x_tilde)
    s0 = make_state(prob, x, z, u, mu=1.0)
    xs = []
    for scheme in ("plain_xzu", "separable_xzu_z"):
        state, trace = solve(prob, s0, AccelConfig(scheme=scheme, max_iters=3000,
                                                   epsilon=1e-300, rc_tol=1e-10))
        assert trace.is_safe()
        xs.append(state.x)
    assert np.linalg.norm(xs[0] - xs[1]) < 1e-6


def test_strain_limited_flag_runs_with_general_zxu():
    model, x_tilde, x0 = el.flag_scenario(dims=(3, 2, 1))
    prob = el.build_problem(model, x_tilde, strain_limits=el.STRAIN_LIMITS)
    x, z, u = el.initial_state_arrays(prob, x_tilde)
    state, trace = solve(prob, make_state(prob, x, z, u, mu=1.0),
                         AccelConfig(scheme="general_zxu", max_iters=300, epsilon=1e-300,
                                     rc_tol=1e-6))
    assert trace.is_safe()
    assert np.isfinite(prob.g.value(state.z))


def test_collision_scenario_separable_zxu_u():
    model, x_tilde, x0, plane = el.collision_scenario(dims=(2, 1, 1))
    prob = el.build_problem(model, x_tilde, collision_plane=plane)
    x, z, u = el.initial_state_arrays(prob, x0)
    state, trace = solve(prob, make_state(prob, x, z, u, mu=1.0),
                         AccelConfig(scheme="separable_zxu_u", max_iters=2000, epsilon=1e-300,
                                     rc_tol=1e-6))
    assert trace.is_safe()
    assert trace.iterations_to(1e-6) is not None
    assert np.min(state.x.reshape(-1, 3)[:, 1]) > -1e-4
