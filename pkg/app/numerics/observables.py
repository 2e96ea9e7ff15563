"""
Named observables phi: T^d -> R for reweighted estimation.

Each observable takes a (N, d) array of points and the reaction-coordinate
count m, and returns (N,) values. "z" refers to the first reaction
coordinate, "y" to the first orthogonal coordinate.
"""
from typing import Callable, Dict

import numpy as np

Observable = Callable[[np.ndarray, int], np.ndarray]


def _first_z(x: np.ndarray, m: int) -> np.ndarray:
    return x[:, x.shape[1] - m]


def _first_y(x: np.ndarray, m: int) -> np.ndarray:
    if x.shape[1] == m:
        raise ValueError("Observable needs an orthogonal coordinate but d == m")
    return x[:, 0]


OBSERVABLES: Dict[str, Observable] = {
    "one": lambda x, m: np.ones(x.shape[0]),
    "cos_z": lambda x, m: np.cos(_first_z(x, m)),
    "sin_z": lambda x, m: np.sin(_first_z(x, m)),
    "cos_2z": lambda x, m: np.cos(2.0 * _first_z(x, m)),
    "cos_y": lambda x, m: np.cos(_first_y(x, m)),
    "sin_y": lambda x, m: np.sin(_first_y(x, m)),
}


def get_observable(name: str) -> Observable:
    try:
        return OBSERVABLES[name]
    except KeyError:
        raise ValueError(
            f"Unknown observable '{name}'; available: {', '.join(sorted(OBSERVABLES))}"
        ) from None
