"""Exact inference by exhaustive enumeration for small fields."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import DiscreteField

DEFAULT_CAP = 2**20
DEFAULT_CHUNK = 2**15


class StateSpaceTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class OracleResult:
    log_z: float
    marginals: np.ndarray  # (N, L) padded with zeros
    map_assignment: np.ndarray
    map_log_potential: float


def _assignments(cards: tuple[int, ...], start: int, stop: int) -> np.ndarray:
    """Rows ``start..stop-1`` of the lexicographic assignment table."""
    idx = np.arange(start, stop)
    return np.stack(np.unravel_index(idx, cards), axis=1) if cards else idx[:, None]


def log_potentials(field: DiscreteField, states: np.ndarray) -> np.ndarray:
    """``sum_c phi_c(x_c)`` for each row of ``states``, factors summed in order."""
    total = np.zeros(len(states))
    for factor in field.factors:
        cols = states[:, list(factor.scope)]
        total += factor.table[tuple(cols.T)]
    return total


class _StreamingLogSumExp:
    """Running ``log sum exp`` over chunks, combined in arrival order."""

    def __init__(self, shape=()):
        self.value = np.full(shape, -np.inf)

    def add(self, chunk_lse):
        self.value = np.logaddexp(self.value, chunk_lse)


def _lse(values: np.ndarray, axis=0) -> np.ndarray:
    m = np.max(values, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        return np.squeeze(m, axis=axis) + np.log(np.sum(np.exp(values - m), axis=axis))


def stream_logsumexp(values: np.ndarray, chunk_size: int = DEFAULT_CHUNK) -> float:
    acc = _StreamingLogSumExp()
    for start in range(0, len(values), chunk_size):
        acc.add(_lse(values[start:start + chunk_size]))
    return float(acc.value)


def enumerate_field(field: DiscreteField, cap: int = DEFAULT_CAP,
                    chunk_size: int = DEFAULT_CHUNK) -> OracleResult:
    """Exact ``log Z``, marginals and MAP by visiting every joint state.

    States are visited in lexicographic order (variable 0 most significant),
    so the first maximizer found is the lexicographically smallest MAP.
    """
    size = field.state_space_size
    if size > cap:
        raise StateSpaceTooLarge(f"joint state space {size} exceeds cap {cap}")
    cards = field.cardinalities
    n, lmax = field.num_variables, field.max_cardinality

    z = _StreamingLogSumExp()
    marg = _StreamingLogSumExp((n, lmax))
    best_val, best_state = -np.inf, None
    for start in range(0, size, chunk_size):
        states = _assignments(cards, start, min(size, start + chunk_size))
        lp = log_potentials(field, states)
        z.add(_lse(lp))
        for i in range(n):
            for l in range(cards[i]):
                sel = lp[states[:, i] == l]
                if len(sel):
                    marg.value[i, l] = np.logaddexp(marg.value[i, l], _lse(sel))
        k = int(np.argmax(lp))
        if lp[k] > best_val:
            best_val, best_state = float(lp[k]), states[k].copy()

    log_z = float(z.value)
    mask = np.arange(lmax)[None, :] < np.asarray(cards)[:, None]
    marginals = np.where(mask, np.exp(marg.value - log_z), 0.0)
    marginals /= marginals.sum(axis=1, keepdims=True)
    return OracleResult(log_z, marginals, best_state.astype(np.int64), best_val)


def best_factorized_kl(field: DiscreteField, restarts: int = 10, seed: int = 0,
                       max_sweeps: int = 1000, tol: float = 1e-12,
                       cap: int = DEFAULT_CAP) -> float:
    """Smallest ``KL(Q || P)`` reached by sweep from several starting points.

    Starts are the uniform state, the unary state and ``restarts`` random
    natural parameters drawn from a standard normal.
    """
    from .energy import MeanFieldState, free_energy, kl_to_posterior
    from .schedules import init_state, step_sweep

    log_z = enumerate_field(field, cap=cap).log_z
    arrays = field.arrays
    rng = np.random.default_rng(seed)
    starts = [init_state(field, "uniform"), init_state(field, "unary")]
    starts += [MeanFieldState(rng.standard_normal(arrays.shape), arrays.mask)
               for _ in range(restarts)]
    best = np.inf
    for state in starts:
        f_prev = free_energy(field, state).free_energy
        for _ in range(max_sweeps):
            state = step_sweep(field, state)
            f = free_energy(field, state).free_energy
            if abs(f_prev - f) < tol:
                break
            f_prev = f
        best = min(best, kl_to_posterior(free_energy(field, state), log_z))
    return float(best)
