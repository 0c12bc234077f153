import numpy as np
import pytest
from hypothesis import given, strategies as st

from aaadmm.anderson import AndersonWindow


def oracle_accelerate(qs, gs, m, beta=1.0):
    """Textbook type-II Anderson step from the last min(m, len-1) differences."""
    qs, gs = [np.asarray(v, float) for v in qs], [np.asarray(v, float) for v in gs]
    fs = [g - q for q, g in zip(qs, gs)]
    k = min(m, len(qs) - 1)
    if k == 0:
        return beta * gs[-1] + (1 - beta) * qs[-1]
    dF = np.column_stack([fs[-1 - j] - fs[-2 - j] for j in range(k)])
    theta = np.linalg.lstsq(dF, fs[-1], rcond=None)[0]
    dG = np.column_stack([gs[-1 - j] - gs[-2 - j] for j in range(k)])
    dQ = np.column_stack([qs[-1 - j] - qs[-2 - j] for j in range(k)])
    return beta * (gs[-1] - dG @ theta) + (1 - beta) * (qs[-1] - dQ @ theta)


def test_scalar_hand_example():
    w = AndersonWindow(m=1)
    w.push(np.array([0.0]), np.array([1.0]))
    w.push(np.array([1.0]), np.array([1.5]))
    assert w.coefficients()[0] == pytest.approx(-1.0)
    assert w.accelerate()[0] == pytest.approx(2.0)


def test_single_push_returns_image():
    w = AndersonWindow(m=4)
    w.push(np.array([1.0, 2.0]), np.array([3.0, -1.0]))
    assert w.n_diffs == 0
    np.testing.assert_array_equal(w.accelerate(), [3.0, -1.0])


def test_identical_residuals_give_plain_image():
    w = AndersonWindow(m=3)
    w.push(np.array([0.0, 0.0]), np.array([1.0, 1.0]))
    w.push(np.array([2.0, 1.0]), np.array([3.0, 2.0]))
    np.testing.assert_allclose(w.coefficients(), [0.0], atol=1e-15)
    np.testing.assert_array_equal(w.accelerate(), [3.0, 2.0])


def test_ring_behavior_and_reset():
    m = 3
    w = AndersonWindow(m=m)
    rng = np.random.default_rng(0)
    w.push(rng.standard_normal(5), rng.standard_normal(5))
    assert w.size == 1 and w.n_diffs == 0
    w.push(rng.standard_normal(5), rng.standard_normal(5))
    assert w.n_diffs == 1
    for _ in range(m + 2):
        w.push(rng.standard_normal(5), rng.standard_normal(5))
    assert w.size == m + 1 and w.n_diffs == m
    w.reset()
    assert w.size == 0 and w.n_diffs == 0
    w.push(np.ones(5), 2 * np.ones(5))
    np.testing.assert_array_equal(w.accelerate(), 2 * np.ones(5))


def test_dimension_mismatch_raises():
    w = AndersonWindow(m=2)
    w.push(np.zeros(3), np.ones(3))
    with pytest.raises(ValueError):
        w.push(np.zeros(4), np.ones(4))
    with pytest.raises(ValueError):
        w.push(np.zeros(3), np.ones(2))


def test_empty_window_raises():
    with pytest.raises(RuntimeError):
        AndersonWindow().accelerate()


@given(st.integers(0, 10_000), st.integers(1, 6), st.integers(1, 12),
       st.sampled_from([1.0, 0.5]))
def test_matches_textbook_oracle(seed, m, n_push, beta):
    rng = np.random.default_rng(seed)
    n = 7
    qs, gs = [], []
    w = AndersonWindow(m=m, beta=beta)
    for _ in range(n_push):
        q, g = rng.standard_normal(n), rng.standard_normal(n)
        qs.append(q)
        gs.append(g)
        w.push(q, g)
    np.testing.assert_allclose(w.accelerate(), oracle_accelerate(qs, gs, m, beta),
                               rtol=1e-9, atol=1e-9)


@given(st.integers(0, 10_000), st.integers(1, 5))
def test_normal_matrix_is_gram_of_differences(seed, m):
    rng = np.random.default_rng(seed)
    w = AndersonWindow(m=m)
    fs = []
    for _ in range(m + 3):
        q, g = rng.standard_normal(6), rng.standard_normal(6)
        fs.append(g - q)
        w.push(q, g)
    D = np.column_stack([fs[-1 - j] - fs[-2 - j] for j in range(m)])
    G = D.T @ D
    assert np.max(np.abs(w.normal_matrix - G)) <= 1e-10 * np.max(np.abs(G))


@given(st.integers(0, 10_000))
def test_affine_combination_weights_sum_to_one(seed):
    rng = np.random.default_rng(seed)
    m, n = 4, 5
    w = AndersonWindow(m=m)
    gs = []
    for _ in range(m + 1):
        q, g = rng.standard_normal(n), rng.standard_normal(n)
        gs.append(g)
        w.push(q, g)
    theta = w.coefficients()
    # G_k - sum theta_j (G_{k-j+1} - G_{k-j}) written as sum_j w_j G_j
    weights = np.zeros(m + 1)
    weights[-1] = 1.0
    for j, t in enumerate(theta):
        weights[-1 - j] -= t
        weights[-2 - j] += t
    assert weights.sum() == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(np.column_stack(gs) @ weights, w.accelerate(), atol=1e-10)


def test_exact_on_affine_contraction():
    rng = np.random.default_rng(3)
    n = 8
    M = rng.standard_normal((n, n))
    M *= 0.9 / max(abs(np.linalg.eigvals(M)))
    b = rng.standard_normal(n)
    fixed = np.linalg.solve(np.eye(n) - M, b)
    w = AndersonWindow(m=n)
    q = np.zeros(n)
    for _ in range(n + 1):
        g = M @ q + b
        w.push(q, g)
        q = w.accelerate()
    assert np.linalg.norm(q - fixed) <= 1e-10 * max(1.0, np.linalg.norm(fixed))


def test_extra_history_uses_same_coefficients():
    rng = np.random.default_rng(5)
    w = AndersonWindow(m=3)
    L = rng.standard_normal((4, 6))
    for _ in range(5):
        q, g = rng.standard_normal(6), rng.standard_normal(6)
        w.push(q, g, extra=L @ g)
    out, ext = w.accelerate(with_extra=True)
    np.testing.assert_allclose(ext, L @ out, atol=1e-10)


def test_normal_solver_agrees_with_lstsq():
    rng = np.random.default_rng(8)
    a, b = AndersonWindow(m=3), AndersonWindow(m=3, solver="normal", reg=0.0)
    for _ in range(5):
        q, g = rng.standard_normal(10), rng.standard_normal(10)
        a.push(q, g)
        b.push(q, g)
    np.testing.assert_allclose(a.accelerate(), b.accelerate(), rtol=1e-8)


@pytest.mark.parametrize("kwargs", [{"m": -1}, {"m": 1.5}, {"beta": 0.0}, {"beta": 1.5},
                                    {"solver": "qr"}])
def test_invalid_parameters(kwargs):
    with pytest.raises(ValueError):
        AndersonWindow(**kwargs)
