"""scikit-learn style front end.

Candidates are the rows of ``X`` (each row is one measurement vector
``a_i``); fitting picks ``n_select`` rows maximizing
``logdet(prior + X_S^T X_S)``.
"""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from . import approx, exact, instance, relax

_METHODS = ("exact", "local_search", "greedy", "derandomized", "sampling")


class DOptimalSelector(BaseEstimator):
    """Pick the subset of rows that maximizes the log-determinant of the
    total Fisher information.

    Parameters
    ----------
    n_select : int
        Number of rows to keep.
    method : {"exact", "local_search", "greedy", "derandomized", "sampling"}
    prior : array of shape (n_features, n_features), optional
        Information already available; identity when omitted.
    time_limit : float, optional
        Wall-clock limit in seconds for ``method="exact"``.
    random_state : int, optional
        Seed for ``method="sampling"``.

    Attributes
    ----------
    selected_indices_ : ndarray of int
    support_ : ndarray of bool
    objective_ : float
    upper_bound_ : float
        Certified upper bound on the best achievable objective.
    """

    def __init__(self, n_select=1, method="exact", prior=None, time_limit=None,
                 random_state=None):
        self.n_select = n_select
        self.method = method
        self.prior = prior
        self.time_limit = time_limit
        self.random_state = random_state

    def _instance(self, X):
        X = check_array(X, dtype=float)
        d = X.shape[1]
        C = np.eye(d) if self.prior is None else check_array(self.prior, dtype=float)
        return instance.build(C, X.T, self.n_select)

    def fit(self, X, y=None):
        if self.method not in _METHODS:
            raise ValueError(f"method must be one of {_METHODS}, got {self.method!r}")
        inst = self._instance(X)
        if self.method == "exact":
            res = exact.solve_bnb(inst, exact.BnbConfig(time_limit=self.time_limit))
            sel, ub = res.incumbent, res.global_bound
        else:
            bounds = relax.relaxation_bounds(inst)
            rep = approx.approximate(inst, self.method, seed=self.random_state, bounds=bounds)
            sel = rep.selection
            ub = bounds["best"]
        self.n_features_in_ = inst.d
        self.selected_indices_ = np.array(sel.indices, dtype=int)
        self.support_ = np.zeros(inst.n, dtype=bool)
        self.support_[self.selected_indices_] = True
        self.objective_ = sel.objective
        self.upper_bound_ = ub
        return self

    def get_support(self, indices=False):
        check_is_fitted(self, "support_")
        return self.selected_indices_.copy() if indices else self.support_.copy()

    def transform(self, X):
        """Keep the selected rows of ``X``."""
        check_is_fitted(self, "support_")
        X = check_array(X, dtype=float)
        if X.shape[0] != self.support_.size:
            raise ValueError(f"X has {X.shape[0]} rows, the selector was fit on {self.support_.size}")
        return X[self.support_]

    def score(self, X, y=None):
        """Log-determinant achieved by the fitted subset on ``X``."""
        check_is_fitted(self, "support_")
        inst = self._instance(X)
        return instance.objective(inst, self.selected_indices_)
