import numpy as np
from sklearn.base import clone

from aaadmm import AndersonADMM
from aaadmm.core import make_state
from aaadmm.problems.imaging import deconv_scenario


def test_params_and_clone():
    est = AndersonADMM(m=3, mu=10.0)
    params = est.get_params()
    assert params["m"] == 3 and params["scheme"] == "auto"
    other = clone(est).set_params(m=5)
    assert other.m == 5 and est.m == 3


def test_fit_sets_attributes():
    problem, _, _ = deconv_scenario(size=8)
    est = AndersonADMM(mu=10.0, tol=1e-8).fit(problem)
    assert est.scheme_ == "general_xzu"
    assert est.n_iter_ == len(est.trace_)
    assert est.trace_.rows[-1].R_c < 1e-8
    np.testing.assert_array_equal(est.x_, est.state_.x)
    plain = AndersonADMM(scheme="plain_xzu", mu=10.0, tol=1e-8, max_iters=5000).fit(
        problem, make_state(problem, mu=10.0))
    assert plain.n_iter_ > est.n_iter_
    assert abs(est.objective(problem) - plain.objective(problem)) < 1e-5 * abs(plain.objective(problem))
