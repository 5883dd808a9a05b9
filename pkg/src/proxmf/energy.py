"""Variational objective and coordinate-wise optima for factorized distributions.

The state of a fully factorized distribution is held in natural parameters
``theta`` (shape ``(N, L)``, labels padded to the largest cardinality) with
``q_i = softmax(-theta_i)`` over the real labels of variable ``i``.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .model import DiscreteField, Factor, FieldArrays


def _softmax_neg(theta: np.ndarray, mask: np.ndarray) -> np.ndarray:
    z = np.where(mask, -theta, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def mean_from_natural(theta_i) -> np.ndarray:
    """Mean parameters ``softmax(-theta_i)`` for one variable.

    >>> mean_from_natural([0.0, 0.0])
    array([0.5, 0.5])
    """
    theta_i = np.asarray(theta_i, dtype=np.float64)
    if not np.all(np.isfinite(theta_i)):
        raise ValueError("natural parameters must be finite")
    return _softmax_neg(theta_i, np.ones(theta_i.shape, dtype=bool))


class MeanFieldState:
    """Natural parameters of a factorized distribution plus cached means.

    ``theta`` is canonical; ``q`` is recomputed whenever ``theta`` is
    assigned. Padded label slots hold ``theta = 0`` and ``q = 0``.
    """

    def __init__(self, theta: np.ndarray, mask: np.ndarray):
        self.mask = np.asarray(mask, dtype=bool)
        self.theta = theta

    @property
    def theta(self) -> np.ndarray:
        return self._theta

    @theta.setter
    def theta(self, value):
        value = np.where(self.mask, np.asarray(value, dtype=np.float64), 0.0)
        if value.shape != self.mask.shape:
            raise ValueError(f"theta shape {value.shape} != {self.mask.shape}")
        if not np.all(np.isfinite(value)):
            raise ValueError("natural parameters must be finite")
        self._theta = value
        self._q = _softmax_neg(value, self.mask)

    @property
    def q(self) -> np.ndarray:
        return self._q

    @property
    def shape(self) -> tuple[int, int]:
        return self.mask.shape

    def copy(self) -> "MeanFieldState":
        return MeanFieldState(self._theta.copy(), self.mask)

    def update_variable(self, i: int, theta_i: np.ndarray):
        """Overwrite the natural parameters of one variable in place."""
        row = np.where(self.mask[i], np.asarray(theta_i, dtype=np.float64), 0.0)
        if not np.all(np.isfinite(row)):
            raise ValueError("natural parameters must be finite")
        self._theta[i] = row
        self._q[i] = _softmax_neg(row, self.mask[i])

    @classmethod
    def from_mean(cls, q: np.ndarray, mask: np.ndarray) -> "MeanFieldState":
        """Build a state from strictly positive mean parameters via ``-log q``."""
        mask = np.asarray(mask, dtype=bool)
        q = np.asarray(q, dtype=np.float64)
        if np.any(q[mask] <= 0):
            raise ValueError("mean parameters must be strictly positive")
        with np.errstate(divide="ignore"):
            theta = np.where(mask, -np.log(np.where(mask, q, 1.0)), 0.0)
        return cls(theta, mask)


@dataclass(frozen=True)
class ObjectiveValue:
    expected_energy: float
    neg_entropy: float
    free_energy: float


def _check_state(field: DiscreteField, state: MeanFieldState) -> FieldArrays:
    arrays = field.arrays
    if state.shape != arrays.shape:
        raise ValueError(f"state shape {state.shape} does not match field {arrays.shape}")
    return arrays


def _contract(table: np.ndarray, qs: list[np.ndarray], skip: int | None = None) -> np.ndarray:
    """Contract ``table`` with ``qs[k]`` along every axis except ``skip``.

    Axes are contracted from the last to the first so the result does not
    depend on how the caller orders its loop.
    """
    t = table
    for axis in range(table.ndim - 1, -1, -1):
        if axis == skip:
            continue
        t = np.tensordot(t, qs[axis], axes=([axis], [0]))
    return t


def _higher_message(factor: Factor, q: np.ndarray, cards: np.ndarray, pos: int) -> np.ndarray:
    qs = [q[v, : cards[v]] for v in factor.scope]
    return _contract(factor.table, qs, skip=pos)


def neg_entropy(q: np.ndarray, mask: np.ndarray) -> float:
    """``sum q log q`` over real labels, with ``0 log 0 = 0``."""
    safe = np.where(mask & (q > 0), q, 1.0)
    return float(np.sum(np.sum(np.where(mask, q * np.log(safe), 0.0), axis=1)))


def expected_energy(field: DiscreteField, q: np.ndarray) -> float:
    """``-E_Q[sum_c phi_c]`` for a factorized ``Q`` with means ``q``."""
    arrays = field.arrays
    total = -np.sum(np.sum(arrays.unary * q, axis=1))
    if len(arrays.edge_i):
        qi = q[arrays.edge_i]
        qj = q[arrays.edge_j]
        per_edge = np.einsum("elm,el,em->e", arrays.edge_tables, qi, qj)
        total -= np.sum(per_edge)
    cards = arrays.cardinalities
    for factor in arrays.higher:
        qs = [q[v, : cards[v]] for v in factor.scope]
        total -= float(_contract(factor.table, qs))
    return float(total)


def free_energy(field: DiscreteField, state: MeanFieldState) -> ObjectiveValue:
    """Expected energy, negative entropy and their sum ``F = E - H``."""
    arrays = _check_state(field, state)
    e = expected_energy(field, state.q)
    nh = neg_entropy(state.q, arrays.mask)
    return ObjectiveValue(e, nh, e + nh)


def _pairwise_rows(arrays: FieldArrays, x: np.ndarray, out: np.ndarray, lo: int, hi: int):
    """``out[lo:hi] -= sum_k T_k @ x[nbr_k]`` with a fixed slot/label order.

    Only elementwise array operations are used, so each row's result is
    bit-identical no matter how the rows are chunked across workers.
    """
    tables = arrays.nbr_table[lo:hi]
    nbrs = arrays.nbr_var[lo:hi]
    for k in range(arrays.degree):
        xk = x[nbrs[:, k]]
        for m in range(arrays.num_labels):
            out[lo:hi] -= tables[:, k, :, m] * xk[:, m, None]


def _chunks(n: int, n_jobs: int) -> list[tuple[int, int]]:
    n_jobs = max(1, min(n_jobs, n))
    bounds = np.linspace(0, n, n_jobs + 1).astype(int)
    return [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def pairwise_operator(arrays: FieldArrays, x: np.ndarray, n_jobs: int = 1) -> np.ndarray:
    """Apply the constant pairwise Hessian: ``y_i = -sum_j phi_ij x_j``."""
    out = np.zeros(arrays.shape)
    chunks = _chunks(arrays.num_variables, n_jobs)
    if len(chunks) == 1:
        _pairwise_rows(arrays, x, out, 0, arrays.num_variables)
    else:
        with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
            list(pool.map(lambda c: _pairwise_rows(arrays, x, out, *c), chunks))
    return out


def theta_star_all(field: DiscreteField, state: MeanFieldState, n_jobs: int = 1) -> np.ndarray:
    """Coordinate-wise optimal natural parameters for every variable.

    Everything is computed from the current snapshot of ``state.q``, which is
    what parallel schedules require. Equals the gradient of the expected
    energy with respect to ``q``.
    """
    arrays = _check_state(field, state)
    out = pairwise_operator(arrays, state.q, n_jobs=n_jobs)
    out -= arrays.unary
    if arrays.higher:
        cards = arrays.cardinalities
        for factor in arrays.higher:
            for pos, v in enumerate(factor.scope):
                out[v, : cards[v]] -= _higher_message(factor, state.q, cards, pos)
    return np.where(arrays.mask, out, 0.0)


def theta_star(field: DiscreteField, state: MeanFieldState, variable: int) -> np.ndarray:
    """Optimal natural parameters of one variable with the others held fixed.

    ``theta*_{i,l} = -sum_{c containing i} E[phi_c | x_i = l]``; factors not
    touching ``i`` only add a label-independent constant and are left out.
    Returns a length-``L`` vector (padded labels are zero).
    """
    arrays = _check_state(field, state)
    i = int(variable)
    if not 0 <= i < arrays.num_variables:
        raise IndexError(f"variable {i} out of range")
    q = state.q
    row = -arrays.unary[i].copy()
    if arrays.degree:
        row -= np.einsum("klm,km->l", arrays.nbr_table[i], q[arrays.nbr_var[i]])
    cards = arrays.cardinalities
    for factor, pos in arrays.higher_by_var[i]:
        row[: cards[i]] -= _higher_message(factor, q, cards, pos)
    return np.where(arrays.mask[i], row, 0.0)


def kl_to_posterior(objective: ObjectiveValue, log_z: float) -> float:
    """``KL(Q || P) = F(q) + log Z``."""
    return objective.free_energy + log_z
