"""
Von Mises product kernel on T^m.

    k_eps(u) = Z_eps^{-1} exp(-sin^2(u/2) / (eps^2/2)),   K_eps(z', z) = prod_j k_eps(z_j - z'_j)

normalized w.r.t. dz/(2pi). Log-domain evaluation is the primary entry point:
for small eps the far tail of k_eps underflows double precision.
"""
import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Dict

import numpy as np
from scipy.special import i0e, i1e, logsumexp

from ..exceptions import KernelResolutionError, NumericalError
from .grid import TWO_PI, PeriodicGrid

logger = logging.getLogger(__name__)

NORMALIZER_TOLERANCE = 1e-10


def _log_profile(epsilon: float, delta: np.ndarray) -> np.ndarray:
    return -np.sin(0.5 * delta) ** 2 / (0.5 * epsilon * epsilon)


def _log_normalizer(epsilon: float, nodes: int) -> float:
    u = np.arange(nodes) * (TWO_PI / nodes)
    return float(logsumexp(_log_profile(epsilon, u)) - math.log(nodes))


@dataclass(frozen=True)
class KernelParams:
    """Bandwidth, dimension and the cached per-dimension normalizer Z_eps."""

    epsilon: float
    dims: int = 1
    quadrature_nodes: int = field(init=False)
    log_normalizer: float = field(init=False)

    def __post_init__(self):
        if not (math.isfinite(self.epsilon) and 0.0 < self.epsilon <= 1.0):
            raise ValueError(f"Kernel bandwidth must lie in (0, 1], got {self.epsilon}")
        if self.dims < 1:
            raise ValueError(f"Kernel dimension must be >= 1, got {self.dims}")

        nodes = max(1024, math.ceil(32.0 / self.epsilon))
        log_z = _log_normalizer(self.epsilon, nodes)
        log_z_fine = _log_normalizer(self.epsilon, 2 * nodes)
        if abs(math.expm1(log_z - log_z_fine)) > NORMALIZER_TOLERANCE:
            raise NumericalError(
                f"Kernel normalizer did not converge at {nodes} nodes for epsilon={self.epsilon}"
            )
        object.__setattr__(self, "quadrature_nodes", nodes)
        object.__setattr__(self, "log_normalizer", log_z)

    @property
    def normalizer(self) -> float:
        return math.exp(self.log_normalizer)

    @property
    def peak(self) -> float:
        """Kernel maximum Z_eps^{-m}, attained at coincident arguments."""
        return math.exp(-self.dims * self.log_normalizer)


def _check_points(params: KernelParams, z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if z.ndim == 0 or z.shape[-1] != params.dims:
        raise ValueError(f"Kernel arguments must be {params.dims}-dimensional, got shape {z.shape}")
    return z


def kernel_log_eval(params: KernelParams, z_sample, z_target) -> np.ndarray:
    """log K_eps(z_sample, z_target); arguments broadcast on their leading axes."""
    a = _check_points(params, z_sample)
    b = _check_points(params, z_target)
    per_dim = _log_profile(params.epsilon, b - a) - params.log_normalizer
    out = np.sum(per_dim, axis=-1)
    return float(out) if out.ndim == 0 else out


def kernel_eval(params: KernelParams, z_sample, z_target) -> np.ndarray:
    return np.exp(kernel_log_eval(params, z_sample, z_target))


def log_kernel_to_nodes(params: KernelParams, grid: PeriodicGrid, z) -> np.ndarray:
    """
    log K_eps(z, node) for every grid node, for a batch of points z (..., m).

    Returns shape ``z.shape[:-1] + grid.shape``. The product structure keeps
    the cost at m*G profile evaluations per point.
    """
    if grid.dims != params.dims:
        raise ValueError(f"Grid has {grid.dims} dims, kernel has {params.dims}")
    z = _check_points(params, z)
    lead = z.shape[:-1]
    total = np.zeros(lead + grid.shape)
    for j in range(grid.dims):
        profile = _log_profile(params.epsilon, grid.axis - z[..., j, None]) - params.log_normalizer
        view = lead + tuple(grid.nodes_per_dim if axis == j else 1 for axis in range(grid.dims))
        total = total + profile.reshape(view)
    return total


@lru_cache(maxsize=32)
def kernel_matrix_1d(params: KernelParams, nodes: int) -> np.ndarray:
    """Symmetric circulant matrix k_eps(z_i - z_j) over the nodes of one axis."""
    axis = np.arange(nodes) * (TWO_PI / nodes)
    matrix = np.exp(_log_profile(params.epsilon, axis[:, None] - axis[None, :]) - params.log_normalizer)
    matrix.setflags(write=False)
    return matrix


def kernel_smooth(params: KernelParams, grid: PeriodicGrid, values: np.ndarray) -> np.ndarray:
    """
    Quadrature of z -> integral of K_eps(z', z) f(z') dz'/(2pi)^m at every node.

    ``values`` has trailing shape ``grid.shape``; leading axes (vector
    components) are carried through.
    """
    if grid.dims != params.dims:
        raise ValueError(f"Grid has {grid.dims} dims, kernel has {params.dims}")
    values = np.asarray(values, dtype=float)
    lead = values.ndim - grid.dims
    if lead < 0 or values.shape[lead:] != grid.shape:
        raise ValueError(f"Values of shape {values.shape} do not live on a grid of shape {grid.shape}")
    matrix = kernel_matrix_1d(params, grid.nodes_per_dim) / grid.nodes_per_dim
    out = values
    for j in range(grid.dims):
        axis = lead + j
        out = np.moveaxis(np.tensordot(matrix, out, axes=([1], [axis])), 0, axis)
    return out


def resolved_grid_nodes(epsilon: float, base_nodes: int) -> int:
    """max(base_nodes, smallest power of two >= 8/epsilon)."""
    needed = 1 << max(0, math.ceil(math.log2(8.0 / epsilon)))
    return max(int(base_nodes), needed)


def first_harmonic_attenuation(params: KernelParams) -> float:
    """rho(eps) = integral of cos(u) k_eps(u) du/(2pi) = I1(1/eps^2) / I0(1/eps^2)."""
    kappa = 1.0 / (params.epsilon * params.epsilon)
    return float(i1e(kappa) / i0e(kappa))


@dataclass(frozen=True)
class KernelReport:
    epsilon: float
    grid_nodes: int
    mass_error: float
    second_moment_sup: float
    second_moment_inf: float
    c_K_estimate: float
    moment_over_eps_squared: float

    def as_dict(self) -> Dict[str, float]:
        return {
            "epsilon": self.epsilon,
            "grid_nodes": float(self.grid_nodes),
            "mass_error": self.mass_error,
            "second_moment_sup": self.second_moment_sup,
            "second_moment_inf": self.second_moment_inf,
            "c_K_estimate": self.c_K_estimate,
            "moment_over_eps_squared": self.moment_over_eps_squared,
        }


def check_kernel_assumptions(params: KernelParams, grid: PeriodicGrid) -> KernelReport:
    """
    Measure the normalization and second-moment bounds on ``grid``.

    The kernel is a product, so per-target mass and two-sided second moment
    follow from one-dimensional sums along each axis.
    """
    if grid.dims != params.dims:
        raise ValueError(f"Grid has {grid.dims} dims, kernel has {params.dims}")
    required = 8.0 / params.epsilon
    if grid.nodes_per_dim < required:
        raise KernelResolutionError(
            f"Grid with G={grid.nodes_per_dim} cannot resolve epsilon={params.epsilon}; need G >= {math.ceil(required)}"
        )
    if grid.nodes_per_dim < 64:
        logger.warning("Kernel check on a coarse grid (G=%d); results may be noisy", grid.nodes_per_dim)

    G = grid.nodes_per_dim
    matrix = kernel_matrix_1d(params, G)
    delta = np.abs(grid.axis[:, None] - grid.axis[None, :])
    geodesic_sq = np.minimum(delta, TWO_PI - delta) ** 2
    # Row i: target node i, column j: sample node j
    mass_1d = matrix.sum(axis=1) / G
    moment_1d = (matrix * geodesic_sq).sum(axis=1) / G

    def along(axis: int, vec: np.ndarray) -> np.ndarray:
        return vec.reshape(tuple(G if a == axis else 1 for a in range(grid.dims)))

    mass = np.ones(grid.shape)
    for j in range(grid.dims):
        mass = mass * along(j, mass_1d)
    moment = np.zeros(grid.shape)
    for j in range(grid.dims):
        term = along(j, moment_1d)
        for other in range(grid.dims):
            if other != j:
                term = term * along(other, mass_1d)
        moment = moment + term
    # K is symmetric, so both orderings contribute the same amount
    moment = 2.0 * moment

    eps = params.epsilon
    sup = float(np.max(moment))
    report = KernelReport(
        epsilon=eps,
        grid_nodes=G,
        mass_error=float(np.max(np.abs(mass - 1.0))),
        second_moment_sup=sup,
        second_moment_inf=float(np.min(moment)),
        c_K_estimate=sup / eps,
        moment_over_eps_squared=sup / (eps * eps),
    )
    logger.debug("Kernel check: %s", report)
    return report


def smoothing_error(
    params: KernelParams,
    psi: Callable[[np.ndarray], np.ndarray],
    grid: PeriodicGrid,
    y_nodes: int = 64,
    y_dims: int = 1,
) -> float:
    """
    Max over z-nodes of | double integral of psi(y,z') K_eps(z',z) - integral of psi(y,z) dy |.

    ``psi`` maps (N, y_dims + m) points to (N,) values; y-integrals use a
    trapezoid rule with ``y_nodes`` per axis.
    """
    y_axis = np.arange(y_nodes) * (TWO_PI / y_nodes)
    y_points = np.stack(
        [c.reshape(-1) for c in np.meshgrid(*([y_axis] * y_dims), indexing="ij")], axis=-1
    ) if y_dims else np.zeros((1, 0))
    z_points = grid.points()
    n_y, n_z = y_points.shape[0], z_points.shape[0]
    coords = np.concatenate(
        [np.repeat(y_points, n_z, axis=0), np.tile(z_points, (n_y, 1))], axis=-1
    )
    values = np.asarray(psi(coords), dtype=float).reshape(n_y, n_z)
    marginal = values.mean(axis=0).reshape(grid.shape)
    smoothed = kernel_smooth(params, grid, marginal)
    return float(np.max(np.abs(smoothed - marginal)))
