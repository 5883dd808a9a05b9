"""Input checks shared by the estimator and the harness."""
from __future__ import annotations

import os

import numpy as np

from .energy import MeanFieldState
from .model import DiscreteField, load_field, parse_uai, validate


def check_field(X) -> DiscreteField:
    """Coerce ``X`` to a validated :class:`DiscreteField`.

    Accepts a field, a path to a ``.uai``/``.json`` file, or UAI text.
    """
    if isinstance(X, DiscreteField):
        return validate(X)
    if isinstance(X, (str, os.PathLike)):
        text = str(X)
        if text.lstrip().upper().startswith("MARKOV"):
            return parse_uai(text)
        return load_field(text)[0]
    raise TypeError(f"expected a DiscreteField, UAI text or a path, got {type(X).__name__}")


def check_state(field: DiscreteField, state: MeanFieldState) -> MeanFieldState:
    if state.shape != field.arrays.shape:
        raise ValueError(f"state shape {state.shape} does not match field {field.arrays.shape}")
    if not np.array_equal(state.mask, field.arrays.mask):
        raise ValueError("state label mask does not match the field cardinalities")
    return state
