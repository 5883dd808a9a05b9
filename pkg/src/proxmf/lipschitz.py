"""Lipschitz constant of the expected-energy gradient for pairwise fields.

For unary + pairwise fields the expected energy is quadratic in the means,
with a constant Hessian whose ``(i,l),(j,m)`` block entry is
``-phi_ij(l, m)``. Its spectral norm bounds the gradient's Lipschitz constant.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .energy import pairwise_operator
from .model import DiscreteField

DEFAULT_MARGIN = 1.05


@dataclass(frozen=True)
class SpectralEstimate:
    value: float
    iterations_used: int
    residual: float
    converged: bool = True


def _require_pairwise(field: DiscreteField):
    if not field.is_pairwise:
        raise ValueError(
            "Hessian is not constant for factors of arity >= 3; supply d manually"
        )


def hessian_matvec(field: DiscreteField, x: np.ndarray, n_jobs: int = 1) -> np.ndarray:
    """Multiply ``x`` (shaped like theta) by the pairwise potential matrix."""
    _require_pairwise(field)
    arrays = field.arrays
    x = np.where(arrays.mask, np.asarray(x, dtype=np.float64), 0.0)
    return pairwise_operator(arrays, x, n_jobs=n_jobs)


def spectral_norm(field: DiscreteField, max_iters: int = 1000, tol: float = 1e-8,
                  seed: int = 0) -> SpectralEstimate:
    """Power iteration for the largest absolute eigenvalue of the Hessian.

    The estimate at step ``k`` is ``||H x_k||`` for the normalized iterate
    ``x_k``; for a symmetric operator it increases monotonically towards
    ``||H||_2`` even when ``+lambda`` and ``-lambda`` are both dominant.
    Stops when successive estimates differ by at most
    ``tol * max(1, estimate)``. If ``max_iters`` runs out first the last
    estimate is returned with ``converged=False``.
    """
    _require_pairwise(field)
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    arrays = field.arrays
    rng = np.random.default_rng(seed)
    x = np.where(arrays.mask, rng.standard_normal(arrays.shape), 0.0)
    x /= np.linalg.norm(x)

    prev = 0.0
    residual = np.inf
    for k in range(1, max_iters + 1):
        y = pairwise_operator(arrays, x)
        est = float(np.linalg.norm(y))
        if est == 0.0:
            return SpectralEstimate(0.0, k, 0.0)
        residual = abs(est - prev)
        if k > 1 and residual <= tol * max(1.0, est):
            return SpectralEstimate(est, k, residual)
        prev = est
        x = y / est
    return SpectralEstimate(prev, max_iters, residual, converged=False)


def suggest_damping(estimate: SpectralEstimate | float, margin: float = DEFAULT_MARGIN) -> float:
    """Damping weight ``d = margin * L``; ``margin`` must exceed one."""
    if not margin > 1:
        raise ValueError("margin must be > 1")
    value = estimate.value if isinstance(estimate, SpectralEstimate) else float(estimate)
    return margin * value
