"""
Trigonometric test potentials and quadrature oracles for the free energy.

All quadratures are periodic trapezoid rules, which are spectrally accurate
for the smooth periodic integrands produced by the builtin potentials. Every
formula here is a ratio of integrals, so the normalization of e^{-V} never
has to be fixed.
"""
import logging
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Union

import numpy as np
from scipy.special import logsumexp, softmax

from ..exceptions import NumericalError
from ..models import PotentialSpec
from .grid import TWO_PI, GridFunction, PeriodicGrid, TorusPoint

logger = logging.getLogger(__name__)

Points = Union[TorusPoint, np.ndarray]


def _as_coords(spec: PotentialSpec, x: Points) -> np.ndarray:
    if isinstance(x, TorusPoint):
        if x.m != spec.m:
            raise ValueError(f"Point has m={x.m}, potential expects m={spec.m}")
        coords = x.coords
    else:
        coords = np.asarray(x, dtype=float)
    if coords.shape[-1] != spec.d:
        raise ValueError(f"Point has dimension {coords.shape[-1]}, potential expects d={spec.d}")
    return coords


def potential_values(spec: PotentialSpec, x: Points) -> np.ndarray:
    """V at an array of points (..., d)."""
    coords = _as_coords(spec, x)
    amps, freqs = spec.cosine_terms()
    return np.cos(coords @ freqs.T) @ amps


def potential_gradient(spec: PotentialSpec, x: Points) -> np.ndarray:
    """Analytic grad V at an array of points, shape (..., d)."""
    coords = _as_coords(spec, x)
    amps, freqs = spec.cosine_terms()
    return -(np.sin(coords @ freqs.T) * amps) @ freqs


def eval_potential(spec: PotentialSpec, x: Points) -> float:
    """V at a single point."""
    value = potential_values(spec, x)
    if np.ndim(value) != 0:
        raise ValueError("eval_potential() expects a single point; use potential_values() for arrays")
    return float(value)


def _product_points(y_nodes: int, y_dims: int) -> np.ndarray:
    axis = np.arange(y_nodes) * (TWO_PI / y_nodes)
    if y_dims == 0:
        return np.zeros((1, 0))
    mesh = np.meshgrid(*([axis] * y_dims), indexing="ij")
    return np.stack([component.reshape(-1) for component in mesh], axis=-1)


@dataclass(frozen=True)
class FreeEnergyOracle:
    """Free energy A_star and mean force on the reaction-coordinate grid."""

    spec: PotentialSpec
    grid: PeriodicGrid
    y_nodes: int
    a_star: GridFunction
    grad_a_star: GridFunction

    @property
    def mean_a_star(self) -> float:
        return float(np.mean(self.a_star.values))

    @cached_property
    def a_star_bar(self) -> GridFunction:
        return GridFunction(self.grid, self.a_star.values - self.mean_a_star)

    @cached_property
    def z_marginal(self) -> GridFunction:
        """Density of z under mu_star w.r.t. the normalized measure."""
        log_q = -self.a_star.values
        q = np.exp(log_q - np.max(log_q))
        return GridFunction(self.grid, q / np.mean(q))


def free_energy_reference(spec: PotentialSpec, grid: PeriodicGrid, y_nodes: int = 256) -> FreeEnergyOracle:
    """
    A_star(z) = -log( mean_y e^{-V(y,z)} ) and grad A_star(z) = E[grad_z V | z]
    at every grid node, by trapezoid quadrature with ``y_nodes`` per y-axis.
    """
    if y_nodes < 32:
        raise ValueError(f"y_nodes must be >= 32, got {y_nodes}")
    if grid.dims != spec.m:
        raise ValueError(f"Grid has {grid.dims} dims but the potential has m={spec.m}")

    y_dims = spec.d - spec.m
    y_points = _product_points(y_nodes, y_dims)
    z_points = grid.points()
    n_y = y_points.shape[0]

    a_star = np.empty(z_points.shape[0])
    mean_force = np.empty((z_points.shape[0], spec.m))
    # Chunk over z so the (n_y, chunk, d) coordinate block stays small
    chunk = max(1, (1 << 21) // max(n_y, 1))
    for start in range(0, z_points.shape[0], chunk):
        zs = z_points[start:start + chunk]
        coords = np.concatenate(
            [
                np.broadcast_to(y_points[:, None, :], (n_y, zs.shape[0], y_dims)),
                np.broadcast_to(zs[None, :, :], (n_y, zs.shape[0], spec.m)),
            ],
            axis=-1,
        )
        minus_v = -potential_values(spec, coords)
        a_star[start:start + chunk] = -(logsumexp(minus_v, axis=0) - math.log(n_y))
        weights = softmax(minus_v, axis=0)
        grad_z = potential_gradient(spec, coords)[..., y_dims:]
        mean_force[start:start + chunk] = np.einsum("yz,yzk->zk", weights, grad_z)

    if not (np.all(np.isfinite(a_star)) and np.all(np.isfinite(mean_force))):
        raise NumericalError(f"Free-energy quadrature overflowed for {spec!r}")

    logger.debug("Free-energy oracle built for %s on G=%d, G_y=%d", spec.family.value, grid.nodes_per_dim, y_nodes)
    return FreeEnergyOracle(
        spec=spec,
        grid=grid,
        y_nodes=y_nodes,
        a_star=GridFunction(grid, a_star.reshape(grid.shape)),
        grad_a_star=GridFunction(grid, mean_force.T.reshape((grid.dims,) + grid.shape)),
    )


def mu_star_observable(
    spec: PotentialSpec,
    phi: Callable[[np.ndarray], np.ndarray],
    full_nodes: int = 128,
) -> float:
    """Integral of phi against mu_star by full-dimensional trapezoid quadrature."""
    if full_nodes < 32:
        logger.warning("mu_star_observable() with %d nodes per axis may be under-resolved", full_nodes)
    points = _product_points(full_nodes, spec.d)
    weights = softmax(-potential_values(spec, points))
    values = np.asarray(phi(points), dtype=float)
    return float(np.dot(weights, values))
