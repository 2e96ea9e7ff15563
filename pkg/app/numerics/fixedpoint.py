"""
Deterministic side of the adaptive scheme, restricted to the attracting set

    mu_B(y, z) proportional to e^{-V(y,z) + B(z)}.

On this set the mean-force estimate only involves the z-marginal,

    F^eps[mu_B](z) = int grad A_star(z') K(z', z) e^{B - A_star}(z') dz'
                     / int K(z', z) e^{B - A_star}(z') dz',

so every map below works on m-dimensional grids. The d-dimensional
definition is kept as F_direct_quadrature for cross-checking.
"""
import logging
import math
from dataclasses import dataclass
from functools import cached_property
from itertools import product
from typing import Optional

import numpy as np
from scipy.special import softmax
from scipy.stats import linregress

from ..exceptions import FlowStabilityError, NonContractionError, NumericalError
from ..models import PotentialSpec
from .grid import TWO_PI, GridFunction, PeriodicGrid, lp_norm
from .kernel import KernelParams, kernel_log_eval, kernel_smooth
from .potential import FreeEnergyOracle, potential_gradient, potential_values
from .projection import BiasFunction, eval_bias, project_gradient, sobolev_norm

logger = logging.getLogger(__name__)

MAX_FLOW_STEP = 0.1
NON_CONTRACTION_STREAK = 3


def _check_compatible(B: BiasFunction, oracle: FreeEnergyOracle, kernel: KernelParams) -> None:
    if B.grid != oracle.grid:
        raise ValueError("Bias and oracle must share a grid")
    if kernel.dims != oracle.grid.dims:
        raise ValueError(f"Kernel has {kernel.dims} dims, grid has {oracle.grid.dims}")


def _half_space_modes(dims: int, degree: int):
    """Integer wavevectors with max-norm <= degree, one of each +-k pair, k != 0."""
    for k in product(range(-degree, degree + 1), repeat=dims):
        nonzero = [c for c in k if c != 0]
        if nonzero and nonzero[0] > 0:
            yield np.asarray(k, dtype=float)


def random_bias(grid: PeriodicGrid, radius: float, rng: np.random.Generator, degree: int = 8) -> BiasFunction:
    """Zero-mean random trigonometric polynomial scaled to max-norm ``radius`` on the grid."""
    if degree < 1 or 2 * degree >= grid.nodes_per_dim:
        raise ValueError(f"degree must lie in [1, G/2), got {degree} for G={grid.nodes_per_dim}")
    if radius <= 0:
        raise ValueError(f"radius must be positive, got {radius}")
    points = grid.points()
    values = np.zeros(points.shape[0])
    for k in _half_space_modes(grid.dims, degree):
        phase = points @ k
        scale = 1.0 / (1.0 + float(k @ k))
        values += scale * (rng.standard_normal() * np.cos(phase) + rng.standard_normal() * np.sin(phase))
    values -= values.mean()
    values *= radius / np.max(np.abs(values))
    return BiasFunction.from_values(grid, values.reshape(grid.shape))


def _normalized_weights(log_weights: np.ndarray) -> np.ndarray:
    return np.exp(log_weights - np.max(log_weights))


def density_of_bias(B: BiasFunction, oracle: FreeEnergyOracle) -> GridFunction:
    """z-marginal density of mu_B w.r.t. the normalized measure (grid mean 1)."""
    if B.grid != oracle.grid:
        raise ValueError("Bias and oracle must share a grid")
    q = _normalized_weights(B.values - oracle.a_star.values)
    return GridFunction(oracle.grid, q / np.mean(q))


def F_of_density(q: GridFunction, oracle: FreeEnergyOracle, kernel: KernelParams) -> GridFunction:
    """Kernel-weighted average of grad A_star against the z-density q."""
    if q.grid != oracle.grid or q.is_vector:
        raise ValueError("Density must be a scalar function on the oracle grid")
    weights = q.values / np.max(q.values)
    numerator = kernel_smooth(kernel, oracle.grid, oracle.grad_a_star.values * weights)
    denominator = kernel_smooth(kernel, oracle.grid, weights)
    return GridFunction(oracle.grid, numerator / denominator)


def F_of_bias(B: BiasFunction, oracle: FreeEnergyOracle, kernel: KernelParams) -> GridFunction:
    """F^eps[mu_B] on the grid."""
    _check_compatible(B, oracle, kernel)
    weights = _normalized_weights(B.values - oracle.a_star.values)
    return F_of_density(GridFunction(oracle.grid, weights), oracle, kernel)


def pi_map(B: BiasFunction, oracle: FreeEnergyOracle, kernel: KernelParams) -> BiasFunction:
    """B -> A^eps[mu_B]."""
    return project_gradient(F_of_bias(B, oracle, kernel))


def F_direct_quadrature(
    B: BiasFunction,
    spec: PotentialSpec,
    kernel: KernelParams,
    y_nodes: int = 512,
    z_nodes: int = 512,
) -> GridFunction:
    """
    F^eps[mu_B] at the nodes of ``B.grid`` straight from its d-dimensional
    definition: dense trapezoid sums over (y, z') of grad_z V K e^{-V+B}.
    """
    grid = B.grid
    if grid.dims != spec.m or kernel.dims != spec.m:
        raise ValueError("Bias grid, kernel and potential must agree on m")
    y_dims = spec.d - spec.m
    if y_nodes ** y_dims * z_nodes ** spec.m > 4_000_000:
        logger.warning("Dense quadrature with %d x %d nodes per axis is large", y_nodes, z_nodes)

    dense_y = np.arange(y_nodes) * (TWO_PI / y_nodes)
    dense_z = np.arange(z_nodes) * (TWO_PI / z_nodes)
    axes = [dense_y] * y_dims + [dense_z] * spec.m
    mesh = np.meshgrid(*axes, indexing="ij")
    coords = np.stack([c.reshape(-1) for c in mesh], axis=-1)
    z_coords = coords[:, y_dims:]

    log_density = -potential_values(spec, coords) + eval_bias(B, z_coords)
    grad_z = potential_gradient(spec, coords)[:, y_dims:]

    # log K depends on z' only; evaluate it per z-block and repeat over y
    z_block = PeriodicGrid(spec.m, z_nodes).points()
    n_y = coords.shape[0] // z_block.shape[0]

    out = np.empty((grid.size, spec.m))
    for index, target in enumerate(grid.points()):
        log_k = kernel_log_eval(kernel, z_block, target)
        log_terms = log_density + np.tile(log_k, n_y)
        weights = softmax(log_terms)
        out[index] = weights @ grad_z
    return GridFunction(grid, out.T.reshape((grid.dims,) + grid.shape))


@dataclass(frozen=True, eq=False)
class FixedPointResult:
    a_inf: BiasFunction
    iterations: int
    update_l2: float
    update_c0: float
    error_w12: float
    error_w14: float
    error_c0: float


def centered_free_energy(oracle: FreeEnergyOracle) -> BiasFunction:
    return BiasFunction.from_values(oracle.grid, oracle.a_star.values)


def picard_iterate(
    B0: BiasFunction,
    oracle: FreeEnergyOracle,
    kernel: KernelParams,
    tol: float = 1e-12,
    max_iter: int = 500,
) -> FixedPointResult:
    """
    Iterate B <- pi_map(B) until the L^2 update drops below ``tol``.

    Raises NonContractionError when the update grows on three consecutive
    iterations and NumericalError when ``max_iter`` is exhausted.
    """
    if tol <= 0:
        raise ValueError(f"tol must be positive, got {tol}")
    _check_compatible(B0, oracle, kernel)

    B = B0
    previous = math.inf
    streak = 0
    for iteration in range(1, max_iter + 1):
        image = pi_map(B, oracle, kernel)
        step = (image - B).as_grid_function()
        update_l2 = lp_norm(step, 2.0)
        update_c0 = lp_norm(step, math.inf)
        B = image
        logger.debug("Picard %d (eps=%g): update %.3e", iteration, kernel.epsilon, update_l2)

        if update_l2 < tol:
            error = B - centered_free_energy(oracle)
            return FixedPointResult(
                a_inf=B,
                iterations=iteration,
                update_l2=update_l2,
                update_c0=update_c0,
                error_w12=sobolev_norm(error, 2.0),
                error_w14=sobolev_norm(error, 4.0),
                error_c0=lp_norm(error.as_grid_function(), math.inf),
            )

        streak = streak + 1 if update_l2 > previous else 0
        if streak >= NON_CONTRACTION_STREAK:
            raise NonContractionError(
                f"Picard updates grew {streak} times in a row at epsilon={kernel.epsilon} "
                f"(last update {update_l2:.3e}); epsilon is above the contraction threshold"
            )
        previous = update_l2

    raise NumericalError(f"Picard iteration did not reach tol={tol:g} within {max_iter} iterations")


def contraction_estimate(
    oracle: FreeEnergyOracle,
    kernel: KernelParams,
    radius: float,
    trials: int,
    seed: int = 0,
    degree: int = 8,
) -> float:
    """Largest observed ratio ||h_{pi(B1)} - h_{pi(B2)}||_2 / ||h_{B1} - h_{B2}||_2 over random pairs."""
    if radius <= 0:
        raise ValueError(f"radius must be positive, got {radius}")
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    degree = min(degree, oracle.grid.nodes_per_dim // 2 - 1)
    worst = 0.0
    for _ in range(trials):
        b1 = random_bias(oracle.grid, radius, rng, degree)
        b2 = random_bias(oracle.grid, radius, rng, degree)
        gap = lp_norm(
            GridFunction(oracle.grid, density_of_bias(b1, oracle).values - density_of_bias(b2, oracle).values), 2.0
        )
        if gap < 1e-14:
            continue
        image_gap = lp_norm(
            GridFunction(
                oracle.grid,
                density_of_bias(pi_map(b1, oracle, kernel), oracle).values
                - density_of_bias(pi_map(b2, oracle, kernel), oracle).values,
            ),
            2.0,
        )
        worst = max(worst, image_gap / gap)
    return worst


@dataclass(frozen=True)
class BiasErrorEnvelope:
    error: float
    envelope: float

    @property
    def ratio(self) -> float:
        return self.error / self.envelope


def bias_error_envelope(
    B: BiasFunction, oracle: FreeEnergyOracle, kernel: KernelParams, p: float = 2.0
) -> BiasErrorEnvelope:
    """||A^eps[mu_B] - A_star_bar||_{W^{1,p}} next to sqrt(eps) e^{2(||B||_C0 + ||A_star||_C0)}."""
    error = sobolev_norm(pi_map(B, oracle, kernel) - centered_free_energy(oracle), p)
    exponent = 2.0 * (float(np.max(np.abs(B.values))) + float(np.max(np.abs(oracle.a_star_bar.values))))
    return BiasErrorEnvelope(error=error, envelope=math.sqrt(kernel.epsilon) * math.exp(exponent))


@dataclass(frozen=True, eq=False)
class AttractorState:
    """A positive z-density with grid mean 1, paired with the oracle it lives on."""

    q: GridFunction
    oracle: FreeEnergyOracle

    def __post_init__(self):
        if self.q.grid != self.oracle.grid or self.q.is_vector:
            raise ValueError("Attractor density must be a scalar function on the oracle grid")
        if not np.all(self.q.values > 0):
            raise ValueError("Attractor density must be strictly positive")
        mass = float(np.mean(self.q.values))
        if abs(mass - 1.0) > 1e-10:
            raise ValueError(f"Attractor density must have unit mass, got {mass!r}")

    @classmethod
    def uniform(cls, oracle: FreeEnergyOracle) -> "AttractorState":
        return cls(GridFunction(oracle.grid, np.ones(oracle.grid.shape)), oracle)

    @classmethod
    def from_bias(cls, B: BiasFunction, oracle: FreeEnergyOracle) -> "AttractorState":
        return cls(density_of_bias(B, oracle), oracle)

    @cached_property
    def bias(self) -> BiasFunction:
        """B_q = log q + A_star, recentred to zero mean."""
        return BiasFunction.from_values(self.oracle.grid, np.log(self.q.values) + self.oracle.a_star.values)


def _flow_rhs(q: np.ndarray, oracle: FreeEnergyOracle, kernel: KernelParams) -> np.ndarray:
    if not np.all(q > 0):
        raise FlowStabilityError("Flow state lost positivity; reduce dt")
    B = BiasFunction.from_values(oracle.grid, np.log(q) + oracle.a_star.values)
    return density_of_bias(pi_map(B, oracle, kernel), oracle).values - q


@dataclass(frozen=True, eq=False)
class FlowTrajectory:
    times: np.ndarray
    distances: np.ndarray
    masses: np.ndarray
    final: AttractorState


def flow_integrate(
    q0: AttractorState,
    kernel: KernelParams,
    horizon: float,
    dt: float = 0.01,
    fixed_point: Optional[GridFunction] = None,
    record_stride: int = 1,
) -> FlowTrajectory:
    """
    RK4 integration of q' = r[q] - q on the attracting set, recording the L^2
    distance to the fixed-point density every ``record_stride`` steps.
    """
    if dt > MAX_FLOW_STEP:
        raise FlowStabilityError(f"dt={dt} exceeds the stable limit {MAX_FLOW_STEP}; use a smaller dt")
    if dt <= 0 or horizon <= 0:
        raise ValueError("dt and horizon must be positive")
    if record_stride < 1:
        raise ValueError(f"record_stride must be >= 1, got {record_stride}")
    oracle = q0.oracle
    if fixed_point is None:
        result = picard_iterate(BiasFunction.zero(oracle.grid), oracle, kernel)
        fixed_point = density_of_bias(result.a_inf, oracle)
    target = fixed_point.values

    steps = int(round(horizon / dt))
    q = q0.q.values.copy()
    times, distances, masses = [], [], []

    def observe(t: float):
        times.append(t)
        distances.append(float(np.sqrt(np.mean((q - target) ** 2))))
        masses.append(float(np.mean(q)))

    observe(0.0)
    for n in range(1, steps + 1):
        k1 = _flow_rhs(q, oracle, kernel)
        k2 = _flow_rhs(q + 0.5 * dt * k1, oracle, kernel)
        k3 = _flow_rhs(q + 0.5 * dt * k2, oracle, kernel)
        k4 = _flow_rhs(q + dt * k3, oracle, kernel)
        q = q + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(q)) or not np.all(q > 0):
            raise FlowStabilityError(f"Flow lost positivity at t={n * dt:.4g}; reduce dt")
        if n % record_stride == 0 or n == steps:
            observe(n * dt)

    logger.info("Flow integrated to t=%.4g, final L2 distance %.3e", steps * dt, distances[-1])
    final = AttractorState(GridFunction(oracle.grid, q / np.mean(q)), oracle)
    return FlowTrajectory(np.asarray(times), np.asarray(distances), np.asarray(masses), final)


@dataclass(frozen=True)
class ExponentialFit:
    rate: float
    r_squared: float
    intercept: float


def fit_exponential_rate(times, distances, t_min: float, t_max: float) -> ExponentialFit:
    """Least-squares fit of log(distance) = intercept - rate * t over [t_min, t_max]."""
    times = np.asarray(times, dtype=float)
    distances = np.asarray(distances, dtype=float)
    window = (times >= t_min) & (times <= t_max) & (distances > 0)
    if np.count_nonzero(window) < 3:
        raise ValueError(f"Need at least 3 positive distances in [{t_min}, {t_max}] to fit a rate")
    fit = linregress(times[window], np.log(distances[window]))
    return ExponentialFit(rate=float(-fit.slope), r_squared=float(fit.rvalue ** 2), intercept=float(fit.intercept))
