"""Estimator-style wrappers around the adaptive stepper and the snapshot POD.

Only part of the scikit-learn protocol applies: the "data" is a discrete
system plus an initial value rather than a sample matrix, so ``fit`` takes
those explicitly. Hyperparameters live in ``__init__`` so ``get_params``,
``set_params`` and ``clone`` work as usual.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from ._validation import check_int, check_theta
from .errors import InvalidArgumentError
from .gelfand import DiscreteSystem
from .laplace_mor import build_reduced_basis, build_snapshots, epsilon_M
from .radau import adaptive_loop
from .sinc import DEFAULT_ALPHA, DEFAULT_D, SincGrid

__all__ = ["AdaptiveTimeStepper", "SnapshotPOD"]


def _check_system(system):
    if not isinstance(system, DiscreteSystem):
        raise InvalidArgumentError("expected a DiscreteSystem")
    return system


class AdaptiveTimeStepper(BaseEstimator):
    """Adaptive Radau IIA solve of ``M u' + K u = F`` on ``[0, t_end]``.

    After ``fit``, ``predict(t)`` evaluates the final iterate and
    ``history_`` keeps every solve of the loop.
    """

    def __init__(self, theta=0.5, G=4, tol=0.0, max_iter=30, scheme="hybrid", t_end=1.0, n_initial=1):
        self.theta = theta
        self.G = G
        self.tol = tol
        self.max_iter = max_iter
        self.scheme = scheme
        self.t_end = t_end
        self.n_initial = n_initial

    def fit(self, system, u0, F=None):
        system = _check_system(system)
        check_theta(self.theta)
        check_int(self.G, name="G", minimum=1)
        self.history_ = adaptive_loop(
            system, F, u0, theta=self.theta, G=self.G, tol=self.tol, max_iter=self.max_iter,
            scheme=self.scheme, t_end=self.t_end, n_initial=check_int(self.n_initial, name="n_initial", minimum=1),
        )
        last = self.history_[-1]
        self.mesh_ = last.mesh
        self.solution_ = last.solution
        self.eta_ = last.eta
        self.n_iter_ = len(self.history_)
        return self

    def predict(self, t):
        """Solution values at times ``t``, shape ``(len(t), dim)``."""
        check_is_fitted(self, "solution_")
        t = check_array(np.atleast_1d(t), ensure_2d=False)
        u, _ = self.solution_.evaluate(t)
        return u


class SnapshotPOD(BaseEstimator):
    """Reduced basis from Laplace-domain sinc snapshots.

    ``transform`` maps full coefficient rows to reduced coordinates of their
    V-orthogonal projection; ``inverse_transform`` lifts them back.
    """

    def __init__(self, n_components=10, n_samples=50, alpha=DEFAULT_ALPHA, d=DEFAULT_D, descent_steps=1000):
        self.n_components = n_components
        self.n_samples = n_samples
        self.alpha = alpha
        self.d = d
        self.descent_steps = descent_steps

    def fit(self, system, u0, fhat=None):
        system = _check_system(system)
        grid = SincGrid(self.alpha, self.d, check_int(self.n_samples, name="n_samples", minimum=0))
        snaps = build_snapshots(system, fhat, u0, grid)
        basis = build_reduced_basis(system, snaps, check_int(self.n_components, name="n_components", minimum=1),
                                    descent_steps=self.descent_steps)
        self.system_ = system
        self.basis_ = basis
        self.components_ = basis.W.T
        self.singular_values_ = basis.singular_values
        self.epsilon_ = epsilon_M(system, snaps, basis)
        self.n_components_ = basis.R
        return self

    def transform(self, X):
        check_is_fitted(self, "basis_")
        X = check_array(X)
        if X.shape[1] != self.system_.dim:
            raise InvalidArgumentError(f"expected {self.system_.dim} columns, got {X.shape[1]}")
        return (self.system_.K @ X.T).T @ self.basis_.W

    def inverse_transform(self, Z):
        check_is_fitted(self, "basis_")
        Z = check_array(Z)
        return Z @ self.components_

    @property
    def explained_decay(self):
        """``sigma_k / sigma_1`` of the snapshot matrix."""
        check_is_fitted(self, "singular_values_")
        s = self.singular_values_
        return s / s[0] if s.size and s[0] > 0 else s

