import math

import numpy as np
import pytest

from app.exceptions import FlowStabilityError, NumericalError
from app.models import PotentialSpec
from app.numerics.fixedpoint import (
    AttractorState,
    F_direct_quadrature,
    F_of_bias,
    bias_error_envelope,
    centered_free_energy,
    contraction_estimate,
    density_of_bias,
    fit_exponential_rate,
    flow_integrate,
    picard_iterate,
    pi_map,
    random_bias,
)
from app.numerics.grid import GridFunction, PeriodicGrid, lp_norm
from app.numerics.kernel import KernelParams, kernel_smooth, resolved_grid_nodes
from app.numerics.potential import free_energy_reference
from app.numerics.projection import BiasFunction, project_gradient


@pytest.fixture(scope="module")
def oracle64():
    return free_energy_reference(PotentialSpec(), PeriodicGrid(1, 64), y_nodes=256)


@pytest.fixture(scope="module")
def oracle128():
    return free_energy_reference(PotentialSpec(), PeriodicGrid(1, 128), y_nodes=256)


def test_random_bias_is_zero_mean_with_requested_radius(rng):
    B = random_bias(PeriodicGrid(1, 64), 2.5, rng)
    assert abs(np.mean(B.values)) < 1e-12
    assert np.max(np.abs(B.values)) == pytest.approx(2.5, rel=1e-12)
    with pytest.raises(ValueError):
        random_bias(PeriodicGrid(1, 16), 1.0, rng, degree=8)
    with pytest.raises(ValueError):
        random_bias(PeriodicGrid(1, 16), 0.0, rng, degree=2)


def test_density_of_bias_is_normalized(oracle64, rng):
    q = density_of_bias(random_bias(oracle64.grid, 3.0, rng), oracle64)
    assert np.mean(q.values) == pytest.approx(1.0, abs=1e-14)
    assert np.all(q.values > 0)
    flat = density_of_bias(centered_free_energy(oracle64), oracle64)
    assert np.allclose(flat.values, 1.0, atol=1e-12)


def test_ideal_bias_maps_to_smoothed_free_energy(oracle64):
    kernel = KernelParams(0.2)
    image = pi_map(centered_free_energy(oracle64), oracle64, kernel)
    smoothed = kernel_smooth(kernel, oracle64.grid, oracle64.grad_a_star.values)
    expected = project_gradient(GridFunction(oracle64.grid, smoothed))
    assert np.allclose(image.values, expected.values, atol=1e-12)


def test_reduced_force_matches_direct_quadrature(rng):
    spec = PotentialSpec()
    kernel = KernelParams(0.4)
    oracle = free_energy_reference(spec, PeriodicGrid(1, resolved_grid_nodes(0.4, 64)), y_nodes=256)
    for _ in range(2):
        B = random_bias(oracle.grid, 1.0, rng, degree=4)
        reduced = F_of_bias(B, oracle, kernel).values
        direct = F_direct_quadrature(B, spec, kernel, y_nodes=256, z_nodes=256).values
        assert np.max(np.abs(reduced - direct)) < 1e-8


def test_direct_quadrature_checks_dimensions():
    B = BiasFunction.zero(PeriodicGrid(2, 8))
    with pytest.raises(ValueError):
        F_direct_quadrature(B, PotentialSpec(), KernelParams(0.4), y_nodes=32, z_nodes=32)


def test_zero_potential_has_zero_fixed_point():
    spec = PotentialSpec(family="separable", a=0.0, b=0.0)
    oracle = free_energy_reference(spec, PeriodicGrid(1, 128), y_nodes=32)
    result = picard_iterate(BiasFunction.zero(oracle.grid), oracle, KernelParams(0.1))
    assert result.iterations == 1
    assert result.error_w12 == 0.0 and result.error_c0 == 0.0


def test_picard_converges_to_a_fixed_point(oracle64):
    kernel = KernelParams(0.2)
    result = picard_iterate(BiasFunction.zero(oracle64.grid), oracle64, kernel, tol=1e-12)
    assert result.update_l2 < 1e-12
    residual = pi_map(result.a_inf, oracle64, kernel) - result.a_inf
    assert lp_norm(residual.as_grid_function(), 2.0) < 1e-11
    assert 0.0 < result.error_w12 < 1.0
    assert result.error_w14 > 0.0


def test_fixed_point_is_independent_of_the_start(oracle128, rng):
    kernel = KernelParams(0.1)
    anchor = picard_iterate(BiasFunction.zero(oracle128.grid), oracle128, kernel).a_inf
    for _ in range(3):
        start = random_bias(oracle128.grid, 3.0, rng)
        other = picard_iterate(start, oracle128, kernel).a_inf
        assert np.max(np.abs(other.values - anchor.values)) < 1e-8


def test_error_shrinks_with_bandwidth():
    errors = []
    for eps, nodes in [(0.4, 64), (0.2, 64), (0.1, 128)]:
        oracle = free_energy_reference(PotentialSpec(), PeriodicGrid(1, nodes), y_nodes=256)
        errors.append(picard_iterate(BiasFunction.zero(oracle.grid), oracle, KernelParams(eps)).error_w12)
    assert errors[0] > errors[1] > errors[2]
    # upper envelope: error / sqrt(eps) does not grow as eps shrinks
    scaled = [e / math.sqrt(eps) for e, eps in zip(errors, [0.4, 0.2, 0.1])]
    assert max(scaled) <= 2.0 * scaled[0]


def test_picard_argument_checks(oracle64):
    zero = BiasFunction.zero(oracle64.grid)
    with pytest.raises(ValueError):
        picard_iterate(zero, oracle64, KernelParams(0.2), tol=0.0)
    with pytest.raises(ValueError):
        picard_iterate(BiasFunction.zero(PeriodicGrid(1, 32)), oracle64, KernelParams(0.2))
    with pytest.raises(NumericalError, match="did not reach"):
        picard_iterate(zero, oracle64, KernelParams(0.2), tol=1e-300, max_iter=2)


def test_contraction_ratio_below_one(oracle128):
    ratio = contraction_estimate(oracle128, KernelParams(0.1), radius=1.0, trials=5, seed=3)
    assert 0.0 < ratio < 1.0
    assert ratio == contraction_estimate(oracle128, KernelParams(0.1), radius=1.0, trials=5, seed=3)
    with pytest.raises(ValueError):
        contraction_estimate(oracle128, KernelParams(0.1), radius=1.0, trials=0)


def test_bias_error_envelope(oracle64, rng):
    B = random_bias(oracle64.grid, 1.0, rng, degree=4)
    report = bias_error_envelope(B, oracle64, KernelParams(0.2), p=4.0)
    assert report.error > 0.0
    assert report.envelope > math.sqrt(0.2)
    assert report.ratio == pytest.approx(report.error / report.envelope)


def test_attractor_state_validation(oracle64):
    with pytest.raises(ValueError, match="positive"):
        AttractorState(GridFunction(oracle64.grid, np.zeros(64)), oracle64)
    with pytest.raises(ValueError, match="unit mass"):
        AttractorState(GridFunction(oracle64.grid, np.full(64, 2.0)), oracle64)
    state = AttractorState.from_bias(centered_free_energy(oracle64), oracle64)
    assert np.allclose(state.q.values, 1.0)
    assert np.allclose(state.bias.values, oracle64.a_star_bar.values, atol=1e-12)


def test_flow_rejects_large_steps(oracle64):
    with pytest.raises(FlowStabilityError, match="smaller dt"):
        flow_integrate(AttractorState.uniform(oracle64), KernelParams(0.2), horizon=1.0, dt=1.0)


def test_flow_started_at_the_fixed_point_stays_there(oracle64):
    kernel = KernelParams(0.2)
    fixed = density_of_bias(picard_iterate(BiasFunction.zero(oracle64.grid), oracle64, kernel).a_inf, oracle64)
    trajectory = flow_integrate(AttractorState(fixed, oracle64), kernel, horizon=2.0, dt=0.05, fixed_point=fixed)
    assert np.max(trajectory.distances) < 1e-10


def test_flow_converges_exponentially(oracle128):
    kernel = KernelParams(0.1)
    fixed = density_of_bias(picard_iterate(BiasFunction.zero(oracle128.grid), oracle128, kernel).a_inf, oracle128)
    trajectory = flow_integrate(
        AttractorState.uniform(oracle128), kernel, horizon=10.0, dt=0.02, fixed_point=fixed, record_stride=5
    )
    assert np.max(np.abs(trajectory.masses - 1.0)) < 1e-9
    assert trajectory.times[-1] == pytest.approx(10.0)
    fit = fit_exponential_rate(trajectory.times, trajectory.distances, 1.0, 10.0)
    assert fit.rate > 0.0
    assert fit.r_squared > 0.99
    assert trajectory.distances[-1] < trajectory.distances[0]


def test_fit_exponential_rate_on_exact_data():
    t = np.linspace(0, 5, 51)
    fit = fit_exponential_rate(t, 3.0 * np.exp(-0.7 * t), 1.0, 4.0)
    assert fit.rate == pytest.approx(0.7)
    assert fit.r_squared == pytest.approx(1.0)
    assert fit.intercept == pytest.approx(math.log(3.0))
    with pytest.raises(ValueError):
        fit_exponential_rate(t, np.exp(-t), 4.95, 5.0)
