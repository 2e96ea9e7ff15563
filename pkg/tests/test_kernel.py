import math

import numpy as np
import pytest
from hypothesis import given
import hypothesis.strategies as st
from scipy.special import i0e

from app.exceptions import ConfigError, KernelResolutionError
from app.numerics.grid import TWO_PI, PeriodicGrid
from app.numerics.kernel import (
    KernelParams,
    check_kernel_assumptions,
    first_harmonic_attenuation,
    kernel_eval,
    kernel_log_eval,
    kernel_smooth,
    log_kernel_to_nodes,
    resolved_grid_nodes,
    smoothing_error,
)


@pytest.mark.parametrize("eps", [1.0, 0.4, 0.2, 0.05, 0.01])
def test_normalizer_matches_bessel_closed_form(eps):
    params = KernelParams(eps)
    assert params.normalizer == pytest.approx(i0e(1.0 / eps ** 2), rel=1e-12)
    assert params.quadrature_nodes >= 1024


@pytest.mark.parametrize("eps", [0.0, -0.1, 1.5, float("nan")])
def test_bandwidth_out_of_range(eps):
    with pytest.raises(ValueError):
        KernelParams(eps)


def test_peak_is_value_at_coincident_points():
    params = KernelParams(0.3, dims=2)
    assert kernel_eval(params, [1.0, 2.0], [1.0, 2.0]) == pytest.approx(params.peak)


@given(
    st.lists(st.floats(0, TWO_PI), min_size=2, max_size=2),
    st.lists(st.floats(0, TWO_PI), min_size=2, max_size=2),
    st.floats(-10, 10),
)
def test_symmetric_and_translation_invariant(a, b, shift):
    params = KernelParams(0.3, dims=2)
    a, b = np.array(a), np.array(b)
    value = kernel_log_eval(params, a, b)
    assert value == pytest.approx(kernel_log_eval(params, b, a), abs=1e-9)
    assert value == pytest.approx(kernel_log_eval(params, a + shift, b + shift), abs=1e-8)
    assert value == pytest.approx(kernel_log_eval(params, a + TWO_PI, b), abs=1e-8)


def test_argument_dimension_is_checked():
    with pytest.raises(ValueError):
        kernel_log_eval(KernelParams(0.2, dims=2), [0.0], [0.0, 1.0])


def test_log_kernel_to_nodes_matches_pointwise_evaluation():
    params = KernelParams(0.25, dims=2)
    grid = PeriodicGrid(2, 16)
    z = np.array([[0.3, 5.9], [2.0, 1.0]])
    table = log_kernel_to_nodes(params, grid, z)
    assert table.shape == (2, 16, 16)
    pts = grid.points()
    for i in range(2):
        direct = kernel_log_eval(params, z[i][None, :], pts)
        assert np.allclose(table[i].reshape(-1), direct, atol=1e-12)


def test_unit_mass_on_resolved_grid():
    params = KernelParams(0.2)
    grid = PeriodicGrid(1, 64)
    masses = np.exp(log_kernel_to_nodes(params, grid, np.array([[0.123], [4.0]]))).mean(axis=-1)
    assert np.allclose(masses, 1.0, atol=1e-10)


def test_smoothing_attenuates_first_harmonic():
    params = KernelParams(0.2)
    grid = PeriodicGrid(1, 64)
    z = grid.axis
    assert np.allclose(kernel_smooth(params, grid, np.full(64, 3.0)), 3.0, atol=1e-10)
    rho = first_harmonic_attenuation(params)
    assert np.allclose(kernel_smooth(params, grid, np.cos(z)), rho * np.cos(z), atol=1e-10)
    assert 0.0 < rho < 1.0


def test_first_harmonic_attenuation_by_quadrature():
    params = KernelParams(0.5)
    u = np.arange(4096) * TWO_PI / 4096
    numeric = np.mean(np.cos(u) * kernel_eval(params, u[:, None], np.zeros((1, 1))))
    assert first_harmonic_attenuation(params) == pytest.approx(numeric, rel=1e-12)


def test_smooth_carries_vector_components():
    params = KernelParams(0.3, dims=2)
    grid = PeriodicGrid(2, 32)
    values = np.ones((2,) + grid.shape)
    values[1] *= 2.0
    out = kernel_smooth(params, grid, values)
    assert out.shape == values.shape
    assert np.allclose(out[0], 1.0, atol=1e-10) and np.allclose(out[1], 2.0, atol=1e-10)


@pytest.mark.parametrize(
    "eps, base, expected", [(0.2, 64, 64), (0.1, 64, 128), (0.025, 64, 512), (0.4, 16, 32), (1.0, 4, 8)]
)
def test_resolved_grid_nodes(eps, base, expected):
    assert resolved_grid_nodes(eps, base) == expected


def test_under_resolved_grid_is_rejected():
    with pytest.raises(KernelResolutionError, match="need G >="):
        check_kernel_assumptions(KernelParams(0.025), PeriodicGrid(1, 16))
    assert issubclass(KernelResolutionError, ConfigError)


def test_kernel_report_on_resolved_grids():
    ratios = []
    for eps in [0.4, 0.2, 0.1, 0.05]:
        report = check_kernel_assumptions(KernelParams(eps), PeriodicGrid(1, resolved_grid_nodes(eps, 64)))
        assert report.mass_error < 1e-8
        assert report.second_moment_sup == pytest.approx(report.second_moment_inf, rel=1e-10)
        assert report.c_K_estimate == pytest.approx(report.second_moment_sup / eps)
        ratios.append(report.moment_over_eps_squared)
    assert max(ratios) / min(ratios) <= 2.0
    assert ratios[-1] == pytest.approx(2.0, rel=0.05)


def test_two_dimensional_moment_adds_over_axes():
    one = check_kernel_assumptions(KernelParams(0.2), PeriodicGrid(1, 64))
    two = check_kernel_assumptions(KernelParams(0.2, dims=2), PeriodicGrid(2, 64))
    assert two.second_moment_sup == pytest.approx(2.0 * one.second_moment_sup, rel=1e-10)


def test_smoothing_error_shrinks_with_bandwidth():
    grid = PeriodicGrid(1, 128)

    def psi(x):
        return np.exp(np.cos(x[:, 0] - x[:, 1])) * np.cos(x[:, 1])

    errors = [smoothing_error(KernelParams(eps), psi, grid) for eps in [0.4, 0.2, 0.1]]
    assert errors[0] > errors[1] > errors[2] > 0.0
