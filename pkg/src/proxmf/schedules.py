"""Mean-field update schedules and the iteration driver.

Parallel schedules compute every coordinate-wise optimum from one snapshot of
the current means and then commit them together. The KL-proximal family damps
in natural-parameter space::

    theta <- eta * target + (1 - eta) * theta,    eta = 1 / (1 + d)

where ``target`` is the coordinate-wise optimum (fixed, adaptive) or its
running average (momentum, adam), and ``d`` may vary per entry.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field as dc_field

import numpy as np

from .energy import (
    MeanFieldState,
    ObjectiveValue,
    free_energy,
    kl_to_posterior,
    theta_star,
    theta_star_all,
)
from .model import DiscreteField

ALGORITHMS = (
    "sweep",
    "full_parallel",
    "adhoc",
    "ours_fixed",
    "ours_adaptive",
    "ours_momentum",
    "ours_adam",
)
MOMENTUM_GAMMA1 = 0.95
ADAM_GAMMA1 = 0.99


@dataclass
class ScheduleConfig:
    """Algorithm choice, its step parameters and the stopping rules.

    ``gamma1=None`` picks 0.95 for momentum and 0.99 for adam. ``time_budget``
    is in seconds. With ``momentum_lag`` the natural-space update uses the
    momentum from before this step's averaging instead of the fresh one.
    """

    algorithm: str = "ours_fixed"
    d: float = 1.0
    eta_adhoc: float = 0.5
    gamma1: float | None = None
    gamma2: float = 0.999
    epsilon: float = 1e-8
    max_iterations: int = 500
    time_budget: float | None = None
    tolerance: float | None = None
    momentum_lag: bool = False

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}; expected one of {ALGORITHMS}")
        if not self.d >= 0:
            raise ValueError("d must be >= 0")
        if not 0 < self.eta_adhoc <= 1:
            raise ValueError("eta_adhoc must be in (0, 1]")
        if self.gamma1 is not None and not 0 <= self.gamma1 <= 1:
            raise ValueError("gamma1 must be in [0, 1]")
        if not 0 <= self.gamma2 <= 1:
            raise ValueError("gamma2 must be in [0, 1]")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")
        if int(self.max_iterations) < 0:
            raise ValueError("max_iterations must be >= 0")
        if self.time_budget is not None and self.time_budget <= 0:
            raise ValueError("time_budget must be positive")
        if self.tolerance is not None and self.tolerance < 0:
            raise ValueError("tolerance must be >= 0")

    @property
    def effective_gamma1(self) -> float:
        if self.gamma1 is not None:
            return self.gamma1
        return ADAM_GAMMA1 if self.algorithm == "ours_adam" else MOMENTUM_GAMMA1

    @property
    def label(self) -> str:
        a = self.algorithm
        if a in ("sweep", "full_parallel"):
            return a
        if a == "adhoc":
            return f"adhoc(eta={self.eta_adhoc:g})"
        if a in ("ours_fixed", "ours_adaptive"):
            return f"{a}(d={self.d:g})"
        return f"{a}(d={self.d:g},gamma1={self.effective_gamma1:g})"


@dataclass
class OptimizerState:
    m: np.ndarray
    v: np.ndarray
    D_diag: np.ndarray


@dataclass(frozen=True)
class TraceRecord:
    iteration: int
    wall_time: float  # seconds since the step loop started
    objective: ObjectiveValue
    kl: float | None
    max_mean_delta: float


@dataclass
class ScheduleRun:
    trace: list[TraceRecord]
    state: MeanFieldState
    stop_reason: str
    optimizer: OptimizerState | None = dc_field(default=None, repr=False)


def init_state(field: DiscreteField, mode: str = "uniform") -> MeanFieldState:
    arrays = field.arrays
    if mode == "uniform":
        return MeanFieldState(np.zeros(arrays.shape), arrays.mask)
    if mode == "unary":
        return MeanFieldState(-arrays.unary, arrays.mask)
    raise ValueError(f"unknown init mode {mode!r}; expected 'uniform' or 'unary'")


def init_optimizer(field: DiscreteField, state: MeanFieldState, epsilon: float = 1e-8,
                   n_jobs: int = 1) -> OptimizerState:
    """Momentum starts at the current gradient; the second moment at ``epsilon``."""
    mask = field.arrays.mask
    m = theta_star_all(field, state, n_jobs=n_jobs)
    v = np.where(mask, epsilon, 0.0)
    return OptimizerState(m=m, v=v, D_diag=np.zeros(mask.shape))


def step_size(d):
    """``eta = 1 / (1 + d)``."""
    return 1.0 / (1.0 + np.asarray(d, dtype=np.float64))


def _damped(state: MeanFieldState, target: np.ndarray, eta) -> MeanFieldState:
    return MeanFieldState(eta * target + (1.0 - eta) * state.theta, state.mask)


def update_coordinate(field: DiscreteField, state: MeanFieldState, variable: int):
    """Set one variable to its coordinate-wise optimum, in place."""
    state.update_variable(variable, theta_star(field, state, variable))


def step_sweep(field: DiscreteField, state: MeanFieldState) -> MeanFieldState:
    """One sequential pass over variables in ascending index order."""
    new = state.copy()
    for i in range(field.num_variables):
        update_coordinate(field, new, i)
    return new


def step_full_parallel(field, state, n_jobs: int = 1) -> MeanFieldState:
    return MeanFieldState(theta_star_all(field, state, n_jobs=n_jobs), state.mask)


def step_adhoc(field, state, eta_adhoc: float, n_jobs: int = 1) -> MeanFieldState:
    """Convex combination of current and coordinate-optimal means."""
    if not 0 < eta_adhoc <= 1:
        raise ValueError("eta_adhoc must be in (0, 1]")
    q_star = MeanFieldState(theta_star_all(field, state, n_jobs=n_jobs), state.mask).q
    q_new = (1.0 - eta_adhoc) * state.q + eta_adhoc * q_star
    return MeanFieldState.from_mean(q_new, state.mask)


def step_fixed(field, state, d: float, n_jobs: int = 1) -> MeanFieldState:
    if d < 0:
        raise ValueError("d must be >= 0")
    return _damped(state, theta_star_all(field, state, n_jobs=n_jobs), step_size(d))


def adaptive_step_sizes(q: np.ndarray, d: float) -> np.ndarray:
    """Per-variable ``eta_i = 1 / (1 + q_i0 * q_i1 * d)`` for binary variables."""
    return 1.0 / (1.0 + q[:, 0] * q[:, 1] * d)


def step_adaptive(field, state, d: float, n_jobs: int = 1) -> MeanFieldState:
    if not field.is_binary:
        raise ValueError("adaptive step requires binary variables")
    eta = adaptive_step_sizes(state.q, d)[:, None]
    return _damped(state, theta_star_all(field, state, n_jobs=n_jobs), eta)


def step_momentum(field, state, opt: OptimizerState, d: float, gamma1: float,
                  lag: bool = False, n_jobs: int = 1) -> tuple[MeanFieldState, OptimizerState]:
    grad = theta_star_all(field, state, n_jobs=n_jobs)
    m_new = gamma1 * opt.m + (1.0 - gamma1) * grad
    eta = step_size(d)
    new = _damped(state, opt.m if lag else m_new, eta)
    D = np.where(state.mask, float(d), 0.0)
    return new, OptimizerState(m=m_new, v=opt.v, D_diag=D)


def adam_damping(v: np.ndarray, d: float, epsilon: float) -> np.ndarray:
    """Per-entry proximal weight ``sqrt(v) * d + epsilon - 1``, clamped at zero."""
    return np.maximum(np.sqrt(v) * d + epsilon - 1.0, 0.0)


def step_adam(field, state, opt: OptimizerState, d: float, gamma1: float,
              gamma2: float, epsilon: float, lag: bool = False,
              n_jobs: int = 1) -> tuple[MeanFieldState, OptimizerState]:
    """Momentum direction with a second-moment-driven diagonal damping.

    The second moment tracks the squared natural gradient ``theta - theta*``,
    which vanishes at a fixed point.
    """
    mask = state.mask
    grad = theta_star_all(field, state, n_jobs=n_jobs)
    m_new = gamma1 * opt.m + (1.0 - gamma1) * grad
    nat_grad = state.theta - grad
    v_new = np.where(mask, gamma2 * nat_grad**2 + (1.0 - gamma2) * opt.v, 0.0)
    D = np.where(mask, adam_damping(v_new, d, epsilon), 0.0)
    new = _damped(state, opt.m if lag else m_new, step_size(D))
    return new, OptimizerState(m=m_new, v=v_new, D_diag=D)


def make_stepper(field: DiscreteField, config: ScheduleConfig, n_jobs: int = 1):
    """Return ``step(state, opt) -> (state, opt)`` for the configured algorithm."""
    a = config.algorithm
    if a == "ours_adaptive" and not field.is_binary:
        raise ValueError("adaptive step requires binary variables")
    if a == "sweep":
        return lambda s, o: (step_sweep(field, s), o)
    if a == "full_parallel":
        return lambda s, o: (step_full_parallel(field, s, n_jobs), o)
    if a == "adhoc":
        return lambda s, o: (step_adhoc(field, s, config.eta_adhoc, n_jobs), o)
    if a == "ours_fixed":
        return lambda s, o: (step_fixed(field, s, config.d, n_jobs), o)
    if a == "ours_adaptive":
        return lambda s, o: (step_adaptive(field, s, config.d, n_jobs), o)
    g1 = config.effective_gamma1
    if a == "ours_momentum":
        return lambda s, o: step_momentum(field, s, o, config.d, g1, config.momentum_lag, n_jobs)
    return lambda s, o: step_adam(field, s, o, config.d, g1, config.gamma2, config.epsilon,
                                  config.momentum_lag, n_jobs)


def run_schedule(field: DiscreteField, config: ScheduleConfig, init_mode: str = "uniform",
                 oracle_log_z: float | None = None, n_jobs: int = 1,
                 initial_state: MeanFieldState | None = None) -> ScheduleRun:
    """Iterate the configured step until a stopping rule fires.

    The trace starts with the initial state at iteration 0 and then holds one
    record per committed step. Stop reasons are ``max_iterations``,
    ``time_budget`` and ``tolerance``.
    """
    step = make_stepper(field, config, n_jobs)
    state = initial_state.copy() if initial_state is not None else init_state(field, init_mode)
    opt = None
    if config.algorithm in ("ours_momentum", "ours_adam"):
        opt = init_optimizer(field, state, config.epsilon, n_jobs)

    def record(it, t0, obj, delta):
        kl = None if oracle_log_z is None else kl_to_posterior(obj, oracle_log_z)
        return TraceRecord(it, (time.perf_counter_ns() - t0) * 1e-9, obj, kl, delta)

    t0 = time.perf_counter_ns()
    obj = free_energy(field, state)
    trace = [record(0, t0, obj, 0.0)]
    reason = "max_iterations"
    for it in range(1, int(config.max_iterations) + 1):
        if config.time_budget is not None and (time.perf_counter_ns() - t0) * 1e-9 >= config.time_budget:
            reason = "time_budget"
            break
        prev_q, prev_f = state.q, obj.free_energy
        state, opt = step(state, opt)
        obj = free_energy(field, state)
        delta = float(np.max(np.abs(state.q - prev_q)))
        trace.append(record(it, t0, obj, delta))
        if config.tolerance is not None and abs(obj.free_energy - prev_f) < config.tolerance:
            reason = "tolerance"
            break
    return ScheduleRun(trace=trace, state=state, stop_reason=reason, optimizer=opt)
