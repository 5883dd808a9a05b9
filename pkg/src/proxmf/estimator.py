"""Scikit-learn style wrapper around the schedules."""
from __future__ import annotations

import numbers

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils import check_scalar
from sklearn.utils.validation import check_is_fitted

from .energy import free_energy
from .harness import accuracy, decode_map
from .lipschitz import spectral_norm, suggest_damping
from .model import GroundTruth
from .schedules import ALGORITHMS, ScheduleConfig, run_schedule
from .validation import check_field


class MeanFieldInference(BaseEstimator):
    """Fit a fully factorized approximation to a discrete random field.

    ``fit`` takes the field itself as ``X`` (a :class:`DiscreteField`, UAI
    text or a file path). ``damping="auto"`` sets ``d = margin * L`` from
    power iteration, which requires a pairwise field.

    Attributes set by ``fit``: ``field_``, ``state_``, ``marginals_``,
    ``trace_``, ``n_iter_``, ``damping_``, ``free_energy_``, ``stop_reason_``.
    """

    def __init__(self, schedule="ours_fixed", damping="auto", eta_adhoc=0.5, gamma1=None,
                 gamma2=0.999, epsilon=1e-8, max_iter=500, tol=None, time_budget=None,
                 init="uniform", margin=1.05, momentum_lag=False, n_jobs=1, random_state=0):
        self.schedule = schedule
        self.damping = damping
        self.eta_adhoc = eta_adhoc
        self.gamma1 = gamma1
        self.gamma2 = gamma2
        self.epsilon = epsilon
        self.max_iter = max_iter
        self.tol = tol
        self.time_budget = time_budget
        self.init = init
        self.margin = margin
        self.momentum_lag = momentum_lag
        self.n_jobs = n_jobs
        self.random_state = random_state

    def _validate_params(self):
        if self.schedule not in ALGORITHMS:
            raise ValueError(f"schedule must be one of {ALGORITHMS}, got {self.schedule!r}")
        if self.init not in ("uniform", "unary"):
            raise ValueError("init must be 'uniform' or 'unary'")
        if self.damping != "auto":
            check_scalar(self.damping, "damping", numbers.Real, min_val=0)
        check_scalar(self.max_iter, "max_iter", numbers.Integral, min_val=0)
        check_scalar(self.margin, "margin", numbers.Real, min_val=1, include_boundaries="neither")
        check_scalar(self.n_jobs, "n_jobs", numbers.Integral, min_val=1)

    def _resolve_damping(self, field) -> float:
        if self.damping != "auto":
            return float(self.damping)
        return suggest_damping(spectral_norm(field, seed=self.random_state), self.margin)

    def fit(self, X, y=None):
        self._validate_params()
        field = check_field(X)
        d = self._resolve_damping(field) if self.schedule.startswith("ours_") else 0.0
        config = ScheduleConfig(
            algorithm=self.schedule, d=d, eta_adhoc=self.eta_adhoc, gamma1=self.gamma1,
            gamma2=self.gamma2, epsilon=self.epsilon, max_iterations=self.max_iter,
            time_budget=self.time_budget, tolerance=self.tol, momentum_lag=self.momentum_lag)
        run = run_schedule(field, config, self.init, n_jobs=self.n_jobs)
        self._fit_input = X
        self.field_ = field
        self.damping_ = d
        self.state_ = run.state
        self.marginals_ = run.state.q.copy()
        self.trace_ = run.trace
        self.n_iter_ = run.trace[-1].iteration
        self.stop_reason_ = run.stop_reason
        self.free_energy_ = free_energy(field, run.state).free_energy
        return self

    def _ensure_fitted(self, X):
        known = (getattr(self, "field_", None), getattr(self, "_fit_input", None))
        if X is not None and all(X is not k for k in known):
            self.fit(X)
        check_is_fitted(self, "state_")

    def transform(self, X=None) -> np.ndarray:
        """Marginals ``q`` as an ``(N, L)`` array (padded labels are zero)."""
        self._ensure_fitted(X)
        return self.marginals_

    def predict(self, X=None) -> np.ndarray:
        """Per-variable MAP labels of the fitted approximation."""
        self._ensure_fitted(X)
        return decode_map(self.state_)

    def fit_transform(self, X, y=None) -> np.ndarray:
        return self.fit(X).marginals_

    def fit_predict(self, X, y=None) -> np.ndarray:
        return self.fit(X).predict()

    def score(self, X, y: GroundTruth) -> float:
        """Labelling accuracy against ``y`` over its evaluation mask."""
        return accuracy(self.predict(X), y)
