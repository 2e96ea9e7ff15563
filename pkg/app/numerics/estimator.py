"""
Kernel-weighted mean-force accumulators over the z-grid.

For the weighted empirical measure mu = sum_s w_s delta_{x_s} the estimate at
node g is

    F(g) = sum_s w_s grad_z V(x_s) K(z_s, g) / sum_s w_s K(z_s, g).

Each node keeps its sums relative to a running log-scale so that kernel
values far below the double-precision range still contribute exactly.
"""
import logging
from typing import Dict, List, Union

import numpy as np
from scipy.special import softmax

from .grid import GridFunction, PeriodicGrid, TorusPoint
from .kernel import KernelParams, log_kernel_to_nodes

logger = logging.getLogger(__name__)

SamplePosition = Union[TorusPoint, np.ndarray]


def _reaction_coordinate(grid: PeriodicGrid, x: SamplePosition) -> np.ndarray:
    if isinstance(x, TorusPoint):
        z = x.z
    else:
        z = np.asarray(x, dtype=float)
    z = np.atleast_1d(z)
    if z.shape[-1] != grid.dims:
        raise ValueError(f"Sample has {z.shape[-1]} reaction coordinates, grid expects {grid.dims}")
    return z


def _check_samples(grid: PeriodicGrid, grads: np.ndarray, weights: np.ndarray) -> None:
    if grads.shape[-1] != grid.dims:
        raise ValueError(f"Gradient has {grads.shape[-1]} components, grid expects {grid.dims}")
    if not np.all(np.isfinite(grads)):
        raise ValueError("Non-finite gradient passed to the accumulator")
    if not (np.all(np.isfinite(weights)) and np.all(weights > 0)):
        raise ValueError("Sample weights must be finite and positive")


class BiasAccumulator:
    """Running numerator/denominator grids representing F^eps of the empirical measure. Single writer."""

    def __init__(self, grid: PeriodicGrid, kernel: KernelParams):
        if grid.dims != kernel.dims:
            raise ValueError(f"Grid has {grid.dims} dims, kernel has {kernel.dims}")
        self.grid = grid
        self.kernel = kernel
        self.log_scale = np.full(grid.shape, -np.inf)
        self.scaled_denominator = np.zeros(grid.shape)
        self.scaled_numerator = np.zeros((grid.dims,) + grid.shape)
        self.total_weight = 0.0
        self.sample_count = 0

    @property
    def is_empty(self) -> bool:
        return self.sample_count == 0

    def accumulate(self, x: SamplePosition, grad_z_v, weight: float) -> "BiasAccumulator":
        """Add one sample at x (or its reaction coordinate) with mean-force sample grad_z_v."""
        z = _reaction_coordinate(self.grid, x)
        grad = np.atleast_1d(np.asarray(grad_z_v, dtype=float))
        return self.accumulate_many(z[None, :], grad[None, :], np.array([float(weight)]))

    def accumulate_many(self, z: np.ndarray, grads: np.ndarray, weights: np.ndarray) -> "BiasAccumulator":
        """Vectorized accumulate for n samples: z (n, m), grads (n, m), weights (n,)."""
        z = np.asarray(z, dtype=float).reshape(-1, self.grid.dims)
        grads = np.asarray(grads, dtype=float).reshape(z.shape)
        weights = np.asarray(weights, dtype=float).reshape(z.shape[0])
        _check_samples(self.grid, grads, weights)

        log_terms = log_kernel_to_nodes(self.kernel, self.grid, z) + np.log(weights).reshape(
            (-1,) + (1,) * self.grid.dims
        )
        new_scale = np.maximum(self.log_scale, log_terms.max(axis=0))
        rescale = np.exp(self.log_scale - new_scale)
        terms = np.exp(log_terms - new_scale)

        self.scaled_denominator = self.scaled_denominator * rescale + terms.sum(axis=0)
        self.scaled_numerator = self.scaled_numerator * rescale + np.einsum("n...,nk->k...", terms, grads)
        self.log_scale = new_scale
        self.total_weight += float(weights.sum())
        self.sample_count += z.shape[0]
        return self

    def force_estimate(self) -> GridFunction:
        """Nodewise numerator/denominator."""
        if self.total_weight <= 0.0:
            raise ValueError("no samples")
        return GridFunction(self.grid, self.scaled_numerator / self.scaled_denominator)

    @property
    def log_denominator(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.scaled_denominator) + self.log_scale

    @property
    def denominator(self) -> np.ndarray:
        return self.scaled_denominator * np.exp(self.log_scale)

    @property
    def numerator(self) -> np.ndarray:
        return self.scaled_numerator * np.exp(self.log_scale)

    def copy(self) -> "BiasAccumulator":
        clone = BiasAccumulator(self.grid, self.kernel)
        clone.log_scale = self.log_scale.copy()
        clone.scaled_denominator = self.scaled_denominator.copy()
        clone.scaled_numerator = self.scaled_numerator.copy()
        clone.total_weight = self.total_weight
        clone.sample_count = self.sample_count
        return clone

    def snapshot_rows(self) -> List[Dict[str, float]]:
        """One row per node: node, z_j, denominator, log_denominator, numerator_j."""
        points = self.grid.points()
        log_den = self.log_denominator.reshape(-1)
        den = self.denominator.reshape(-1)
        num = self.numerator.reshape(self.grid.dims, -1)
        rows = []
        for node in range(self.grid.size):
            row = {"node": node}
            for j in range(self.grid.dims):
                row[f"z_{j + 1}"] = float(points[node, j])
            row["denominator"] = float(den[node])
            row["log_denominator"] = float(log_den[node])
            for j in range(self.grid.dims):
                row[f"numerator_{j + 1}"] = float(num[j, node])
            rows.append(row)
        return rows


def merge(a: BiasAccumulator, b: BiasAccumulator) -> BiasAccumulator:
    """Fieldwise sum of two accumulators sharing grid and kernel; inputs are left untouched."""
    if a.grid != b.grid or a.kernel != b.kernel:
        raise ValueError("Cannot merge accumulators with different grids or kernels")
    if b.is_empty:
        return a.copy()
    if a.is_empty:
        return b.copy()
    out = BiasAccumulator(a.grid, a.kernel)
    scale = np.maximum(a.log_scale, b.log_scale)
    ra = np.exp(a.log_scale - scale)
    rb = np.exp(b.log_scale - scale)
    out.log_scale = scale
    out.scaled_denominator = a.scaled_denominator * ra + b.scaled_denominator * rb
    out.scaled_numerator = a.scaled_numerator * ra + b.scaled_numerator * rb
    out.total_weight = a.total_weight + b.total_weight
    out.sample_count = a.sample_count + b.sample_count
    return out


class SampleListEstimator:
    """Keeps every sample and evaluates F^eps from scratch; for validating BiasAccumulator on small runs."""

    def __init__(self, grid: PeriodicGrid, kernel: KernelParams):
        if grid.dims != kernel.dims:
            raise ValueError(f"Grid has {grid.dims} dims, kernel has {kernel.dims}")
        self.grid = grid
        self.kernel = kernel
        self._z: List[np.ndarray] = []
        self._grads: List[np.ndarray] = []
        self._weights: List[float] = []

    @property
    def total_weight(self) -> float:
        return float(np.sum(self._weights)) if self._weights else 0.0

    def accumulate(self, x: SamplePosition, grad_z_v, weight: float) -> "SampleListEstimator":
        z = _reaction_coordinate(self.grid, x)
        grad = np.atleast_1d(np.asarray(grad_z_v, dtype=float))
        _check_samples(self.grid, grad[None, :], np.array([float(weight)]))
        self._z.append(z.copy())
        self._grads.append(grad.copy())
        self._weights.append(float(weight))
        return self

    def force_estimate(self) -> GridFunction:
        if not self._weights:
            raise ValueError("no samples")
        z = np.stack(self._z)
        grads = np.stack(self._grads)
        log_w = np.log(np.asarray(self._weights))
        log_terms = log_kernel_to_nodes(self.kernel, self.grid, z) + log_w.reshape((-1,) + (1,) * self.grid.dims)
        weights = softmax(log_terms, axis=0)
        return GridFunction(self.grid, np.einsum("n...,nk->k...", weights, grads))
