"""
Property suite behind the `verify` subcommand
"""
import logging
import math
from typing import Callable, Dict, List

import numpy as np

from ..exceptions import ConfigError, NumericalError
from ..models import CheckResult, ExperimentConfig, VerifyReport
from ..numerics.estimator import BiasAccumulator
from ..numerics.fixedpoint import (
    AttractorState,
    F_direct_quadrature,
    F_of_bias,
    bias_error_envelope,
    contraction_estimate,
    density_of_bias,
    fit_exponential_rate,
    flow_integrate,
    picard_iterate,
    pi_map,
    random_bias,
)
from ..numerics.grid import GridFunction, PeriodicGrid, lp_norm
from ..numerics.kernel import KernelParams, check_kernel_assumptions, resolved_grid_nodes, smoothing_error
from ..numerics.potential import potential_gradient
from ..numerics.projection import BiasFunction, gradient_of, project_gradient, sobolev_norm
from .experiment_service import ExperimentService, experiment_service, log_log_slope

logger = logging.getLogger(__name__)

# Fixed-point uniqueness and flow checks run where the contraction regime is known to hold
REFERENCE_EPSILON = 0.1
PROJECTION_TOLERANCE = 1e-10
UNIQUENESS_TOLERANCE = 1e-8


def _max_abs(values: np.ndarray) -> float:
    return float(np.max(np.abs(values)))


class VerificationService:
    def __init__(self, experiments: ExperimentService = experiment_service):
        self.experiments = experiments

    def run_all(self, config: ExperimentConfig) -> VerifyReport:
        checks: List[CheckResult] = []
        suite: Dict[str, Callable[[ExperimentConfig], CheckResult]] = {
            "kernel_resolution": self.check_kernel_resolution,
            "kernel_second_moment": self.check_kernel_second_moment,
            "kernel_delta_approximation": self.check_kernel_delta_approximation,
            "projection_exactness": self.check_projection_exactness,
            "projection_idempotence": self.check_projection_idempotence,
            "projection_stability": self.check_projection_stability,
            "oracle_equivalence": self.check_oracle_equivalence,
            "force_bound": self.check_force_bound,
            "contraction_regime": self.check_contraction_regime,
            "fixed_point_uniqueness": self.check_fixed_point_uniqueness,
            "sqrt_epsilon_envelope": self.check_sqrt_epsilon_envelope,
            "flow_convergence": self.check_flow_convergence,
        }
        for name, check in suite.items():
            try:
                result = check(config)
            except (ConfigError, NumericalError, ValueError) as e:
                result = CheckResult(name=name, passed=False, detail=f"{type(e).__name__}: {e}")
            logger.info("%s %s %s", "PASS" if result.passed else "FAIL", name, result.detail)
            checks.append(result)
        return VerifyReport(passed=all(c.passed for c in checks), checks=checks)

    def check_kernel_resolution(self, config: ExperimentConfig) -> CheckResult:
        params = KernelParams(config.kernel.epsilon, config.potential.m)
        grid = PeriodicGrid(config.potential.m, config.grid.nodes)
        report = check_kernel_assumptions(params, grid)
        passed = report.mass_error < 1e-8
        return CheckResult(
            name="kernel_resolution",
            passed=passed,
            detail=f"mass error {report.mass_error:.2e} at G={grid.nodes_per_dim}",
            values=report.as_dict(),
        )

    def check_kernel_second_moment(self, config: ExperimentConfig) -> CheckResult:
        m = config.potential.m
        ratios, values = [], {}
        worst_mass = 0.0
        worst_spread = 0.0
        for eps in config.verify.epsilons:
            grid = PeriodicGrid(m, resolved_grid_nodes(eps, config.grid.nodes))
            report = check_kernel_assumptions(KernelParams(eps, m), grid)
            ratios.append(report.moment_over_eps_squared)
            worst_mass = max(worst_mass, report.mass_error)
            worst_spread = max(worst_spread, report.second_moment_sup / report.second_moment_inf - 1.0)
            values[f"c_K_estimate@{eps:g}"] = report.c_K_estimate
            values[f"moment_over_eps_squared@{eps:g}"] = report.moment_over_eps_squared
        stability = max(ratios) / min(ratios)
        values.update({"mass_error": worst_mass, "ratio_spread": stability, "translation_spread": worst_spread})
        passed = worst_mass < 1e-8 and stability <= 2.0 and worst_spread <= 1e-10
        return CheckResult(
            name="kernel_second_moment",
            passed=passed,
            detail=f"moment/eps^2 varies by a factor {stability:.3f}",
            values=values,
        )

    def check_kernel_delta_approximation(self, config: ExperimentConfig) -> CheckResult:
        epsilons = sorted(config.verify.epsilons, reverse=True)
        grid = PeriodicGrid(1, resolved_grid_nodes(min(epsilons), config.grid.nodes))

        def psi(x: np.ndarray) -> np.ndarray:
            return np.exp(np.cos(x[:, 0] - x[:, 1])) * np.cos(x[:, 1]) + np.sin(2.0 * x[:, 1])

        errors = [smoothing_error(KernelParams(eps, 1), psi, grid, y_nodes=64) for eps in epsilons]
        passed = all(b < a for a, b in zip(errors, errors[1:]))
        return CheckResult(
            name="kernel_delta_approximation",
            passed=passed,
            detail="smoothing error decreases with epsilon" if passed else "smoothing error is not monotone",
            values={f"error@{eps:g}": err for eps, err in zip(epsilons, errors)},
        )

    def check_projection_exactness(self, config: ExperimentConfig) -> CheckResult:
        grid = PeriodicGrid(1, config.grid.nodes)
        z = grid.points()[:, 0]
        cases = {
            "cos": (np.cos(z), np.sin(z)),
            "constant": (np.full_like(z, 3.5), np.zeros_like(z)),
            "cos_plus_constant": (np.cos(z) + 7.0, np.sin(z)),
        }
        values = {}
        for label, (field, expected) in cases.items():
            A = project_gradient(GridFunction(grid, field))
            values[label] = _max_abs(A.values - expected)

        grid2 = PeriodicGrid(2, min(config.grid.nodes, 64))
        pts = grid2.points()
        curl_field = np.stack([-np.sin(pts[:, 1]), np.sin(pts[:, 0])]).reshape((2,) + grid2.shape)
        values["divergence_free_2d"] = _max_abs(project_gradient(GridFunction(grid2, curl_field)).values)

        passed = all(v <= PROJECTION_TOLERANCE for v in values.values())
        return CheckResult(name="projection_exactness", passed=passed, detail="trigonometric cases", values=values)

    def check_projection_idempotence(self, config: ExperimentConfig) -> CheckResult:
        grid = PeriodicGrid(config.potential.m, config.grid.nodes)
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(config.seed)))
        degree = min(8, grid.nodes_per_dim // 2 - 1)
        worst = 0.0
        for _ in range(config.verify.random_trials):
            A = random_bias(grid, 1.0, rng, degree)
            worst = max(worst, _max_abs(project_gradient(gradient_of(A)).values - A.values))
        return CheckResult(
            name="projection_idempotence",
            passed=worst <= PROJECTION_TOLERANCE,
            detail=f"max deviation {worst:.2e} over {config.verify.random_trials} trials",
            values={"max_deviation": worst},
        )

    def check_projection_stability(self, config: ExperimentConfig) -> CheckResult:
        m = config.potential.m
        grid = PeriodicGrid(m, config.grid.nodes)
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(config.seed + 1)))
        degree = min(8, grid.nodes_per_dim // 2 - 1)
        constant = 0.0
        for _ in range(config.verify.random_trials):
            components = np.stack([random_bias(grid, 1.0, rng, degree).values + rng.normal() for _ in range(m)])
            F = GridFunction(grid, components)
            constant = max(constant, sobolev_norm(project_gradient(F), 2.0) / float(np.max(F.magnitude())))
        # ||A||_2 <= ||grad A||_2 <= ||F||_2 <= max|F| on the torus
        bound = math.sqrt(2.0)
        return CheckResult(
            name="projection_stability",
            passed=constant <= bound + 1e-12,
            detail=f"W12(A)/max|F| <= {constant:.4f}",
            values={"stability_constant": constant},
        )

    def check_oracle_equivalence(self, config: ExperimentConfig) -> CheckResult:
        spec = config.potential
        eps = config.kernel.epsilon
        if spec.m == 1:
            nodes = resolved_grid_nodes(eps, max(config.grid.nodes, 128))
            dense = config.grid.dense_nodes if spec.d == 2 else min(config.grid.dense_nodes, 96)
            samples = config.verify.oracle_samples
        else:
            # Two reaction coordinates: the dense z-quadrature reuses the bias grid nodes
            nodes = resolved_grid_nodes(eps, 64)
            dense = nodes
            samples = min(config.verify.oracle_samples, 2)
        oracle = self.experiments.oracle(spec, nodes, config.grid.y_nodes)
        kernel = KernelParams(eps, spec.m)
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(config.seed + 2)))
        worst = 0.0
        for _ in range(samples):
            B = random_bias(oracle.grid, 1.0, rng, degree=4)
            reduced = F_of_bias(B, oracle, kernel).values
            direct = F_direct_quadrature(B, spec, kernel, y_nodes=dense, z_nodes=dense).values
            worst = max(worst, _max_abs(reduced - direct))
        return CheckResult(
            name="oracle_equivalence",
            passed=worst <= 1e-8,
            detail=f"max deviation {worst:.2e} on a {dense}-node dense grid",
            values={"max_deviation": worst},
        )

    def check_force_bound(self, config: ExperimentConfig) -> CheckResult:
        spec = config.potential
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(config.seed + 3)))
        epsilons = list(config.verify.epsilons) if spec.m == 1 else [config.kernel.epsilon]
        grids = {eps: PeriodicGrid(spec.m, resolved_grid_nodes(eps, config.grid.nodes)) for eps in epsilons}
        kernels = {eps: KernelParams(eps, spec.m) for eps in epsilons}
        violations = 0
        worst_ratio = 0.0
        for _ in range(config.verify.force_bound_states):
            eps = epsilons[rng.integers(len(epsilons))]
            n = int(rng.integers(1, 41))
            x = rng.uniform(0.0, 2.0 * math.pi, size=(n, spec.d))
            grads = potential_gradient(spec, x)[:, spec.d - spec.m:]
            weights = rng.exponential(size=n)
            acc = BiasAccumulator(grids[eps], kernels[eps]).accumulate_many(x[:, spec.d - spec.m:], grads, weights)
            bound = float(np.max(np.linalg.norm(grads, axis=1)))
            top = float(np.max(acc.force_estimate().magnitude()))
            if top > bound * (1.0 + 1e-12) + 1e-14:
                violations += 1
            if bound > 0:
                worst_ratio = max(worst_ratio, top / bound)
        return CheckResult(
            name="force_bound",
            passed=violations == 0,
            detail=f"{violations} violations in {config.verify.force_bound_states} states",
            values={"violations": float(violations), "max_ratio": worst_ratio},
        )

    def check_contraction_regime(self, config: ExperimentConfig) -> CheckResult:
        spec = config.potential
        fp = config.fixed_point
        epsilons = sorted(config.verify.epsilons, reverse=True)
        values = {}
        scaled = []
        passed = True
        for eps in epsilons:
            oracle = self.experiments.oracle(spec, resolved_grid_nodes(eps, config.grid.nodes), config.grid.y_nodes)
            ratio = contraction_estimate(oracle, KernelParams(eps, spec.m), fp.contraction_radius, fp.contraction_trials, config.seed)
            values[f"ratio@{eps:g}"] = ratio
            scaled.append(ratio / math.sqrt(eps))
            if eps <= 0.1 and ratio >= 1.0:
                passed = False
        # Upper envelope reading of the sqrt(eps) law: ratio/sqrt(eps) must not grow as eps shrinks
        if any(s > 2.0 * scaled[0] for s in scaled[1:]):
            passed = False
        return CheckResult(
            name="contraction_regime",
            passed=passed,
            detail=", ".join(f"{k}={v:.3e}" for k, v in values.items()),
            values=values,
        )

    def check_fixed_point_uniqueness(self, config: ExperimentConfig) -> CheckResult:
        spec = config.potential
        fp = config.fixed_point
        eps = REFERENCE_EPSILON
        oracle = self.experiments.oracle(spec, resolved_grid_nodes(eps, config.grid.nodes), config.grid.y_nodes)
        kernel = KernelParams(eps, spec.m)
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(config.seed + 4)))

        results = [picard_iterate(BiasFunction.zero(oracle.grid), oracle, kernel, fp.tol, fp.max_iter)]
        for _ in range(fp.starts):
            start = random_bias(oracle.grid, fp.start_radius, rng)
            results.append(picard_iterate(start, oracle, kernel, fp.tol, fp.max_iter))

        anchor = results[0].a_inf
        spread = max(_max_abs(r.a_inf.values - anchor.values) for r in results)
        residual = lp_norm((pi_map(anchor, oracle, kernel) - anchor).as_grid_function(), 2.0)
        iterations = [r.iterations for r in results]
        passed = spread <= UNIQUENESS_TOLERANCE and residual <= 10.0 * fp.tol
        return CheckResult(
            name="fixed_point_uniqueness",
            passed=passed,
            detail=f"{len(results)} starts agree to {spread:.2e}; iterations {min(iterations)}-{max(iterations)}",
            values={
                "spread_c0": spread,
                "fixed_point_residual": residual,
                "iteration_spread": float(max(iterations) - min(iterations)),
            },
        )

    def check_sqrt_epsilon_envelope(self, config: ExperimentConfig) -> CheckResult:
        spec = config.potential
        epsilons = sorted(config.verify.epsilons, reverse=True)
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(config.seed + 5)))
        values: Dict[str, float] = {}
        used, errors = [], []
        for eps in epsilons:
            try:
                oracle, kernel, result = self.experiments.fixed_point(config, eps)
            except NumericalError as e:
                logger.warning("Skipping epsilon=%g in the envelope check: %s", eps, e)
                continue
            used.append(eps)
            errors.append(result.error_w12)
            values[f"error_w12@{eps:g}"] = result.error_w12
            error = result.a_inf - BiasFunction.from_values(oracle.grid, oracle.a_star.values)
            for p in config.verify.sobolev_p:
                values[f"error_w1{p:g}@{eps:g}"] = sobolev_norm(error, p)
            envelope = bias_error_envelope(random_bias(oracle.grid, 1.0, rng, degree=4), oracle, kernel)
            values[f"envelope_ratio@{eps:g}"] = envelope.ratio

        if len(used) < 2:
            return CheckResult(name="sqrt_epsilon_envelope", passed=False, detail="fewer than two converged epsilons", values=values)
        slope = log_log_slope(used, errors)
        scaled = [err / math.sqrt(eps) for eps, err in zip(used, errors)]
        values["slope_w12"] = slope
        passed = slope is not None and slope >= 0.4 and all(s <= 2.0 * scaled[0] for s in scaled)
        return CheckResult(
            name="sqrt_epsilon_envelope",
            passed=passed,
            detail=f"log-log slope {slope:.3f}",
            values=values,
        )

    def check_flow_convergence(self, config: ExperimentConfig) -> CheckResult:
        flow = config.flow
        eps = REFERENCE_EPSILON
        oracle, kernel, fixed = self.experiments.fixed_point(config, eps)
        target = density_of_bias(fixed.a_inf, oracle)
        trajectory = flow_integrate(
            AttractorState.uniform(oracle), kernel, flow.horizon, flow.dt, fixed_point=target, record_stride=flow.record_stride
        )
        fit = fit_exponential_rate(trajectory.times, trajectory.distances, flow.fit_start, flow.fit_end)
        mass_drift = _max_abs(trajectory.masses - 1.0)
        final = float(trajectory.distances[-1])
        passed = fit.rate > 0 and fit.r_squared > 0.99 and mass_drift <= 1e-9 and (flow.horizon < 20 or final < 1e-6)
        return CheckResult(
            name="flow_convergence",
            passed=passed,
            detail=f"rate {fit.rate:.4f} (R^2 {fit.r_squared:.5f}), final distance {final:.2e}",
            values={"rate": fit.rate, "r_squared": fit.r_squared, "mass_drift": mass_drift, "final_distance": final},
        )


verification_service = VerificationService()
