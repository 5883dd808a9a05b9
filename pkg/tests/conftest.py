import itertools

import numpy as np
import pytest

from proxmf.model import DiscreteField, Factor, generate_synthetic, potts_field, validate


def brute_expected_energy(field: DiscreteField, q: np.ndarray) -> float:
    """``-sum_x Q(x) sum_c phi_c(x_c)`` by visiting every joint state."""
    total = 0.0
    for x in itertools.product(*[range(c) for c in field.cardinalities]):
        weight = np.prod([q[i, l] for i, l in enumerate(x)])
        lp = sum(f.table[tuple(x[v] for v in f.scope)] for f in field.factors)
        total -= weight * lp
    return total


def brute_log_z(field: DiscreteField) -> float:
    vals = []
    for x in itertools.product(*[range(c) for c in field.cardinalities]):
        vals.append(sum(f.table[tuple(x[v] for v in f.scope)] for f in field.factors))
    vals = np.array(vals)
    m = vals.max()
    return float(m + np.log(np.exp(vals - m).sum()))


def dense_hessian(field: DiscreteField) -> np.ndarray:
    """Assemble the pairwise potential matrix over padded ``(i, l)`` coordinates."""
    n, L = field.num_variables, field.max_cardinality
    H = np.zeros((n * L, n * L))
    for f in field.factors:
        if f.arity != 2:
            continue
        i, j = f.scope
        t = f.table
        H[i * L:i * L + t.shape[0], j * L:j * L + t.shape[1]] -= t
        H[j * L:j * L + t.shape[1], i * L:i * L + t.shape[0]] -= t.T
    return H


def random_interior_q(field: DiscreteField, rng) -> np.ndarray:
    arrays = field.arrays
    q = np.where(arrays.mask, rng.uniform(0.1, 1.0, arrays.shape), 0.0)
    return q / q.sum(axis=1, keepdims=True)


def random_mixed_field(seed: int, labels: int = 2, higher: bool = False) -> DiscreteField:
    """Small field on a random graph, optionally with a third-order factor."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 6))
    cards = tuple(int(rng.integers(2, labels + 1)) for _ in range(n))
    factors = [Factor((i,), rng.normal(size=cards[i])) for i in range(n)]
    for i, j in itertools.combinations(range(n), 2):
        if rng.random() < 0.6:
            factors.append(Factor((i, j), rng.normal(scale=2.0, size=(cards[i], cards[j]))))
    if higher and n >= 3:
        scope = tuple(int(v) for v in rng.choice(n, 3, replace=False))
        factors.append(Factor(scope, rng.normal(size=[cards[v] for v in scope])))
    return validate(DiscreteField(n, cards, tuple(factors)))


@pytest.fixture
def single_var():
    return validate(DiscreteField(1, (2,), (Factor((0,), [np.log(3.0), 0.0]),)))


@pytest.fixture
def potts_pair():
    def make(w):
        return potts_field("chain", 1, 2, 2, w)
    return make


@pytest.fixture
def mixed_grid_3x3():
    return generate_synthetic("grid", 3, 3, 2, 1.0, 1.5, "mixed", seed=42)[0]
