import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from fusionopt import exact, instance
from fusionopt.estimator import DOptimalSelector


@pytest.fixture
def X():
    return np.random.default_rng(0).standard_normal((10, 4))


def test_exact_fit_matches_brute_force(X):
    sel = DOptimalSelector(n_select=3).fit(X)
    inst = instance.build(np.eye(4), X.T, 3)
    assert sel.objective_ == pytest.approx(exact.brute_force(inst).objective, abs=1e-6)
    assert sel.upper_bound_ >= sel.objective_ - 1e-9
    assert sel.support_.sum() == 3 and sel.n_features_in_ == 4
    assert sel.score(X) == pytest.approx(sel.objective_)


@pytest.mark.parametrize("method", ["local_search", "greedy", "derandomized", "sampling"])
def test_approximate_methods(X, method):
    sel = DOptimalSelector(n_select=4, method=method, random_state=0).fit(X)
    assert len(sel.get_support(indices=True)) == 4
    assert sel.upper_bound_ >= sel.objective_ - 1e-9


def test_transform_keeps_selected_rows(X):
    sel = DOptimalSelector(n_select=2, method="greedy").fit(X)
    out = sel.transform(X)
    assert np.array_equal(out, X[sel.get_support()])
    with pytest.raises(ValueError):
        sel.transform(X[:5])


def test_prior_changes_objective(X):
    prior = 5.0 * np.eye(4)
    sel = DOptimalSelector(n_select=3, prior=prior).fit(X)
    inst = instance.build(prior, X.T, 3)
    assert sel.objective_ == pytest.approx(instance.objective(inst, sel.selected_indices_))


def test_params_and_errors(X):
    sel = DOptimalSelector(n_select=2, method="greedy")
    assert clone(sel).get_params()["method"] == "greedy"
    with pytest.raises(NotFittedError):
        sel.transform(X)
    with pytest.raises(ValueError):
        DOptimalSelector(method="nope").fit(X)
