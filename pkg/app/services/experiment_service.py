"""
Experiment orchestration shared by the CLI and the HTTP routes
"""
import logging
import math
import threading
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from functools import partial
from typing import List, Optional, Tuple

import numpy as np
from scipy.stats import linregress

from ..exceptions import FlowStabilityError, NumericalError
from ..models import (
    ExperimentConfig,
    FixedPointRow,
    FixedPointSweepResult,
    FlowResult,
    ObservableEstimateModel,
    OracleResult,
    PotentialSpec,
    SimulationSummary,
)
from ..numerics.fixedpoint import (
    MAX_FLOW_STEP,
    AttractorState,
    FixedPointResult,
    FlowTrajectory,
    centered_free_energy,
    contraction_estimate,
    density_of_bias,
    fit_exponential_rate,
    flow_integrate,
    picard_iterate,
)
from ..numerics.grid import PeriodicGrid, lp_norm
from ..numerics.kernel import KernelParams, resolved_grid_nodes
from ..numerics.potential import FreeEnergyOracle, free_energy_reference
from ..numerics.projection import BiasFunction
from ..numerics.sampler import RunRecord, flat_histogram_distance, reweighted_estimate, run

logger = logging.getLogger(__name__)

ORACLE_CACHE_SIZE = 16


def log_log_slope(epsilons: List[float], errors: List[float]) -> Optional[float]:
    """Least-squares slope of log(error) against log(epsilon); None with fewer than two usable points."""
    pairs = [(e, err) for e, err in zip(epsilons, errors) if err is not None and err > 0]
    if len(pairs) < 2:
        return None
    x = np.log([p[0] for p in pairs])
    y = np.log([p[1] for p in pairs])
    return float(linregress(x, y).slope)


class ExperimentService:
    """Builds oracles once per (potential, grid) and runs the experiment families on them"""

    def __init__(self, cache_size: int = ORACLE_CACHE_SIZE):
        if cache_size < 1:
            raise ValueError(f"Oracle cache needs room for at least one entry, got {cache_size}")
        self.cache_size = cache_size
        self._oracles: "OrderedDict[Tuple[PotentialSpec, int, int], FreeEnergyOracle]" = OrderedDict()
        self._lock = threading.Lock()

    def oracle(self, spec: PotentialSpec, nodes: int, y_nodes: int) -> FreeEnergyOracle:
        """Least-recently-used cache of oracles keyed by (potential, nodes, y_nodes)."""
        key = (spec, nodes, y_nodes)
        with self._lock:
            cached = self._oracles.get(key)
            if cached is not None:
                self._oracles.move_to_end(key)
                return cached
        built = free_energy_reference(spec, PeriodicGrid(spec.m, nodes), y_nodes)
        with self._lock:
            oracle = self._oracles.setdefault(key, built)
            self._oracles.move_to_end(key)
            while len(self._oracles) > self.cache_size:
                evicted, _ = self._oracles.popitem(last=False)
                logger.debug("Evicted oracle for %s", evicted)
            return oracle

    def compute_oracle(self, spec: PotentialSpec, nodes: int = 64, y_nodes: int = 256) -> OracleResult:
        oracle = self.oracle(spec, nodes, y_nodes)
        grid = oracle.grid
        return OracleResult(
            potential=spec,
            nodes=nodes,
            y_nodes=y_nodes,
            z=grid.points().tolist(),
            a_star=oracle.a_star.values.reshape(-1).tolist(),
            a_star_bar=oracle.a_star_bar.values.reshape(-1).tolist(),
            grad_a_star=oracle.grad_a_star.values.reshape(grid.dims, -1).T.tolist(),
            z_marginal=oracle.z_marginal.values.reshape(-1).tolist(),
            mean_a_star=oracle.mean_a_star,
        )

    def fixed_point(self, config: ExperimentConfig, epsilon: float) -> Tuple[FreeEnergyOracle, KernelParams, FixedPointResult]:
        """Picard fixed point from B0 = 0 on the epsilon-resolved grid."""
        nodes = resolved_grid_nodes(epsilon, config.grid.nodes)
        oracle = self.oracle(config.potential, nodes, config.grid.y_nodes)
        kernel = KernelParams(epsilon, config.potential.m)
        result = picard_iterate(
            BiasFunction.zero(oracle.grid),
            oracle,
            kernel,
            tol=config.fixed_point.tol,
            max_iter=config.fixed_point.max_iter,
        )
        return oracle, kernel, result

    def fixed_point_row(self, config: ExperimentConfig, epsilon: float) -> FixedPointRow:
        nodes = resolved_grid_nodes(epsilon, config.grid.nodes)
        try:
            oracle, kernel, result = self.fixed_point(config, epsilon)
        except NumericalError as e:
            logger.warning("Fixed point failed at epsilon=%g: %s", epsilon, e)
            return FixedPointRow(epsilon=epsilon, grid_nodes=nodes, converged=False, message=str(e))

        fp = config.fixed_point
        ratio = contraction_estimate(oracle, kernel, fp.contraction_radius, fp.contraction_trials, seed=config.seed)
        logger.info(
            "epsilon=%g: %d iterations, W12 error %.3e, contraction %.3e",
            epsilon,
            result.iterations,
            result.error_w12,
            ratio,
        )
        return FixedPointRow(
            epsilon=epsilon,
            grid_nodes=nodes,
            converged=True,
            iterations=result.iterations,
            update_l2=result.update_l2,
            update_c0=result.update_c0,
            error_w12=result.error_w12,
            error_w14=result.error_w14,
            error_c0=result.error_c0,
            contraction_estimate=ratio,
        )

    def run_fixed_point_sweep(self, config: ExperimentConfig, threads: Optional[int] = None) -> FixedPointSweepResult:
        workers = threads or config.threads
        epsilons = list(config.fixed_point.epsilons)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(partial(self.fixed_point_row, config), epsilons))

        converged = [r for r in rows if r.converged]
        slope = log_log_slope([r.epsilon for r in converged], [r.error_w12 for r in converged])
        return FixedPointSweepResult(
            potential=config.potential,
            rows=rows,
            slope_w12=slope,
            all_failed=not converged,
        )

    def run_flow(self, config: ExperimentConfig) -> Tuple[FlowResult, FlowTrajectory]:
        flow = config.flow
        if flow.dt > MAX_FLOW_STEP:
            raise FlowStabilityError(f"dt={flow.dt} exceeds the stable limit {MAX_FLOW_STEP}; use a smaller dt")
        epsilon = config.kernel.epsilon
        oracle, kernel, fixed = self.fixed_point(config, epsilon)
        target = density_of_bias(fixed.a_inf, oracle)
        if flow.start == "fixed_point":
            q0 = AttractorState(target, oracle)
        else:
            q0 = AttractorState.uniform(oracle)

        trajectory = flow_integrate(
            q0, kernel, flow.horizon, flow.dt, fixed_point=target, record_stride=flow.record_stride
        )

        rate = r_squared = None
        if flow.start == "uniform":
            try:
                fit = fit_exponential_rate(trajectory.times, trajectory.distances, flow.fit_start, flow.fit_end)
                rate, r_squared = fit.rate, fit.r_squared
            except ValueError as e:
                logger.warning("Could not fit a flow rate: %s", e)

        fp = config.fixed_point
        ratio = contraction_estimate(oracle, kernel, fp.contraction_radius, fp.contraction_trials, seed=config.seed)
        result = FlowResult(
            epsilon=epsilon,
            grid_nodes=oracle.grid.nodes_per_dim,
            dt=flow.dt,
            horizon=flow.horizon,
            times=trajectory.times.tolist(),
            distances=trajectory.distances.tolist(),
            masses=trajectory.masses.tolist(),
            rate=rate,
            r_squared=r_squared,
            final_distance=float(trajectory.distances[-1]),
            contraction_estimate=ratio,
            rate_lower_bound=1.0 - ratio,
        )
        return result, trajectory

    def run_simulation(self, config: ExperimentConfig, with_reference: bool = True) -> Tuple[SimulationSummary, RunRecord]:
        sim = config.sim_config()
        reference = None
        reference_norm = None
        if with_reference:
            oracle = self.oracle(config.potential, config.grid.nodes, config.grid.y_nodes)
            reference_norm = lp_norm(centered_free_energy(oracle).as_grid_function(), math.inf)
            try:
                reference = picard_iterate(
                    BiasFunction.zero(oracle.grid),
                    oracle,
                    KernelParams(sim.epsilon, config.potential.m),
                    tol=config.fixed_point.tol,
                    max_iter=config.fixed_point.max_iter,
                ).a_inf
            except NumericalError as e:
                logger.warning("No fixed-point reference for the run diagnostics: %s", e)

        record = run(sim, reference=reference)
        final = record.diagnostics[-1]
        estimates = {}
        for name in sim.observables:
            estimate = reweighted_estimate(record, name)
            estimates[name] = ObservableEstimateModel(value=estimate.value, stderr=estimate.stderr)

        summary = SimulationSummary(
            epsilon=sim.epsilon,
            n_steps=sim.n_steps,
            step=sim.step,
            replica_count=sim.replica_count,
            final_time=record.final_time,
            estimates=estimates,
            flat_histogram_distance=flat_histogram_distance(record),
            final_error_c0=final.error_c0,
            final_error_w12=final.error_w12,
            reference_c0_norm=reference_norm,
            max_bias_gradient=record.max_bias_gradient,
        )
        return summary, record


experiment_service = ExperimentService()
