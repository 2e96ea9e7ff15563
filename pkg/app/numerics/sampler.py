"""
Self-interacting ABF diffusion on T^d, integrated with Euler-Maruyama.

    dY = -grad_y V dt + sqrt(2) dW
    dZ = -grad_z V dt + grad A_t(Z) dt + sqrt(2) dW,     A_t = A^eps[mu_t]

mu_t is the time-weighted occupation measure, held only through a
BiasAccumulator. Each replica has its own accumulator and its own Philox
stream spawned from the config seed.
"""
import functools
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from ..exceptions import NumericalError
from ..models import PotentialSpec, SimConfig
from .estimator import BiasAccumulator, merge
from .grid import PeriodicGrid, TorusPoint, lp_norm, total_variation_to_uniform, wrap
from .kernel import KernelParams
from .observables import get_observable
from .potential import potential_gradient
from .projection import (
    BiasFunction,
    EvaluationMode,
    eval_bias_and_gradient,
    eval_bias_gradient,
    gradient_of,
    project_gradient,
    sobolev_norm,
)

logger = logging.getLogger(__name__)


def _step_from(states: np.ndarray, grad_v: np.ndarray, bias_grad: np.ndarray, h: float, noise: np.ndarray) -> np.ndarray:
    """Euler-Maruyama update from precomputed grad V and grad A at ``states``."""
    drift = -grad_v
    drift[..., grad_v.shape[-1] - bias_grad.shape[-1]:] += bias_grad
    if not np.all(np.isfinite(drift)):
        raise NumericalError("Non-finite drift in the Euler-Maruyama step")
    return np.asarray(wrap(states + h * drift + math.sqrt(2.0 * h) * noise))


def _advance(states, spec, A, h, noise, mode):
    bias_grad = eval_bias_gradient(A, states[..., spec.d - spec.m:], mode)
    return _step_from(states, potential_gradient(spec, states), bias_grad, h, noise)


def em_step(
    x: TorusPoint,
    spec: PotentialSpec,
    A: BiasFunction,
    h: float,
    noise,
    mode: EvaluationMode = "spectral",
) -> TorusPoint:
    """One Euler-Maruyama step from x with externally supplied standard normals."""
    noise = np.asarray(noise, dtype=float)
    if noise.shape != (spec.d,):
        raise ValueError(f"Noise must have shape ({spec.d},), got {noise.shape}")
    if x.d != spec.d or x.m != spec.m:
        raise ValueError(f"Point has (d, m) = ({x.d}, {x.m}), potential expects ({spec.d}, {spec.m})")
    if A.grid.dims != spec.m:
        raise ValueError(f"Bias lives on {A.grid.dims} dims, potential has m={spec.m}")
    if not h > 0:
        raise ValueError(f"Step must be positive, got {h}")
    return TorusPoint(_advance(x.coords, spec, A, h, noise, mode), spec.m)


@dataclass(frozen=True, eq=False)
class BiasSnapshot:
    time: float
    bias: BiasFunction


@dataclass(frozen=True)
class DiagnosticRow:
    time: float
    flat_distance: float
    max_bias_gradient: float
    error_c0: Optional[float] = None
    error_w12: Optional[float] = None


@dataclass(frozen=True)
class ObservableEstimate:
    value: float
    stderr: Optional[float] = None


@dataclass(eq=False)
class RunRecord:
    config: SimConfig
    grid: PeriodicGrid
    snapshots: List[BiasSnapshot]
    diagnostics: List[DiagnosticRow]
    occupation: np.ndarray
    accumulator: BiasAccumulator
    final_states: np.ndarray
    final_time: float
    reweight_numerators: Dict[str, float]
    reweight_denominator: float
    batch_numerators: Dict[str, np.ndarray] = field(default_factory=dict)
    batch_denominators: Optional[np.ndarray] = None

    @property
    def histogram(self) -> np.ndarray:
        """Cell masses of the time-weighted z-occupation, shape grid.shape."""
        return self.occupation / np.sum(self.occupation)

    @property
    def final_bias(self) -> BiasFunction:
        return self.snapshots[-1].bias

    @property
    def max_bias_gradient(self) -> float:
        return max(row.max_bias_gradient for row in self.diagnostics)


def _max_gradient(A: BiasFunction) -> float:
    return float(np.max(gradient_of(A).magnitude()))


class _Reweighter:
    """Running sums of phi(X_s) e^{-A_s(Z_s)} h, split into time batches for batch means."""

    def __init__(self, names, batch_count: int, total_atoms: int):
        self.names = list(names)
        self.batch_count = batch_count
        self.total_atoms = total_atoms
        self.numerators = {name: 0.0 for name in self.names}
        self.denominator = 0.0
        self.batch_numerators = {name: np.zeros(batch_count) for name in self.names}
        self.batch_denominators = np.zeros(batch_count)

    def add(self, atom_index: int, states: np.ndarray, bias_values: np.ndarray, h: float, m: int):
        weights = np.exp(-bias_values) * h
        batch = min(atom_index * self.batch_count // self.total_atoms, self.batch_count - 1)
        den = float(np.sum(weights))
        self.denominator += den
        self.batch_denominators[batch] += den
        for name in self.names:
            num = float(np.sum(get_observable(name)(states, m) * weights))
            self.numerators[name] += num
            self.batch_numerators[name][batch] += num


def run(
    config: SimConfig,
    reference: Optional[BiasFunction] = None,
    initial_bias: Optional[BiasFunction] = None,
) -> RunRecord:
    """
    Integrate the adaptive dynamics for ``config.n_steps`` steps.

    ``reference`` enables the error columns of the diagnostics. With
    ``bias_mode="frozen"`` the bias stays at ``initial_bias`` (zero when
    omitted); ``freeze_after`` stops refreshes once that time is passed.
    """
    spec = config.potential
    d, m = spec.d, spec.m
    h = config.step
    R = config.replica_count
    grid = PeriodicGrid(m, config.grid_nodes)
    kernel = KernelParams(config.epsilon, m)
    if grid.nodes_per_dim < 8.0 / config.epsilon:
        logger.warning("G=%d under-resolves epsilon=%g; bias will be noisy", grid.nodes_per_dim, config.epsilon)
    if reference is not None and reference.grid != grid:
        raise ValueError("Reference bias must live on the simulation grid")
    if initial_bias is not None and initial_bias.grid != grid:
        raise ValueError("Initial bias must live on the simulation grid")

    generators = [np.random.Generator(np.random.Philox(s)) for s in np.random.SeedSequence(config.seed).spawn(R)]
    states = np.tile(np.asarray(wrap(np.asarray(config.start, dtype=float)), dtype=float), (R, 1))
    z_start = d - m

    accumulators = [BiasAccumulator(grid, kernel) for _ in range(R)]
    for r, acc in enumerate(accumulators):
        acc.accumulate(states[r, z_start:], potential_gradient(spec, states[r])[z_start:], h)

    def shared_accumulator() -> BiasAccumulator:
        return accumulators[0] if R == 1 else functools.reduce(merge, accumulators)

    adaptive = config.bias_mode == "adaptive"
    if initial_bias is not None:
        bias = initial_bias
    elif adaptive:
        bias = project_gradient(shared_accumulator().force_estimate())
    else:
        bias = BiasFunction.zero(grid)

    occupation = np.zeros(grid.size)
    np.add.at(occupation, grid.cell_index(states[:, z_start:]), h)
    reweighter = _Reweighter(config.observables, config.batch_count, config.n_steps + 1)
    grad_v = potential_gradient(spec, states)
    bias_values, bias_grad = eval_bias_and_gradient(bias, states[:, z_start:], config.evaluation)
    reweighter.add(0, states, bias_values, h, m)

    snapshots: List[BiasSnapshot] = []
    diagnostics: List[DiagnosticRow] = []

    def record(time: float):
        snapshots.append(BiasSnapshot(time, bias))
        errors = {}
        if reference is not None:
            diff = bias - reference
            errors = {
                "error_c0": lp_norm(diff.as_grid_function(), math.inf),
                "error_w12": sobolev_norm(diff, 2.0),
            }
        row = DiagnosticRow(
            time=time,
            flat_distance=total_variation_to_uniform(occupation / occupation.sum()),
            max_bias_gradient=_max_gradient(bias),
            **errors,
        )
        diagnostics.append(row)
        logger.debug("t=%.4g flat=%.4g max|grad A|=%.4g", time, row.flat_distance, row.max_bias_gradient)

    record(0.0)
    for step in range(1, config.n_steps + 1):
        noise = np.stack([gen.standard_normal(d) for gen in generators])
        states = _step_from(states, grad_v, bias_grad, h, noise)
        time = step * h

        # grad V at the new states serves both the accumulator and the next drift
        grad_v = potential_gradient(spec, states)
        for r, acc in enumerate(accumulators):
            acc.accumulate(states[r, z_start:], grad_v[r, z_start:], h)

        refreshing = adaptive and (config.freeze_after is None or time <= config.freeze_after)
        if refreshing and step % config.bias_refresh_stride == 0:
            bias = project_gradient(shared_accumulator().force_estimate())

        np.add.at(occupation, grid.cell_index(states[:, z_start:]), h)
        bias_values, bias_grad = eval_bias_and_gradient(bias, states[:, z_start:], config.evaluation)
        reweighter.add(step, states, bias_values, h, m)

        if step % config.snapshot_stride == 0 or step == config.n_steps:
            record(time)

    final_time = config.n_steps * h
    logger.info(
        "Run finished: t=%.4g, replicas=%d, flat-histogram distance %.4g",
        final_time,
        R,
        diagnostics[-1].flat_distance,
    )
    return RunRecord(
        config=config,
        grid=grid,
        snapshots=snapshots,
        diagnostics=diagnostics,
        occupation=occupation.reshape(grid.shape),
        accumulator=shared_accumulator(),
        final_states=states,
        final_time=final_time,
        reweight_numerators=dict(reweighter.numerators),
        reweight_denominator=reweighter.denominator,
        batch_numerators=reweighter.batch_numerators,
        batch_denominators=reweighter.batch_denominators,
    )


def reweighted_estimate(record: RunRecord, name: str) -> ObservableEstimate:
    """Ratio estimate of the mu_star average of an observable, with a batch-means standard error."""
    if name not in record.reweight_numerators:
        raise ValueError(
            f"Observable '{name}' was not recorded; run had {', '.join(sorted(record.reweight_numerators))}"
        )
    value = record.reweight_numerators[name] / record.reweight_denominator

    stderr = None
    if record.batch_denominators is not None:
        filled = record.batch_denominators > 0
        if np.count_nonzero(filled) >= 2:
            batch_values = record.batch_numerators[name][filled] / record.batch_denominators[filled]
            stderr = float(np.std(batch_values, ddof=1) / math.sqrt(batch_values.size))
    return ObservableEstimate(value=float(value), stderr=stderr)


def flat_histogram_distance(record: RunRecord) -> float:
    """Total-variation distance of the z-occupation histogram to the uniform one."""
    return total_variation_to_uniform(record.histogram)
