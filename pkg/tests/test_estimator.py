import numpy as np
import pytest
from hypothesis import given, settings
import hypothesis.strategies as st

from app.models import PotentialSpec
from app.numerics.estimator import BiasAccumulator, SampleListEstimator, merge
from app.numerics.fixedpoint import F_of_bias, random_bias
from app.numerics.grid import TWO_PI, PeriodicGrid, TorusPoint
from app.numerics.kernel import KernelParams, kernel_eval
from app.numerics.potential import free_energy_reference, potential_gradient, potential_values

GRID = PeriodicGrid(1, 64)
KERNEL = KernelParams(0.2)


def _random_samples(rng, n, m=1):
    z = rng.uniform(0, TWO_PI, size=(n, m))
    grads = rng.normal(size=(n, m))
    weights = rng.exponential(size=n)
    return z, grads, weights


def test_empty_accumulator_has_no_estimate():
    acc = BiasAccumulator(GRID, KERNEL)
    assert acc.is_empty
    with pytest.raises(ValueError, match="no samples"):
        acc.force_estimate()


def test_single_sample_sets_force_everywhere_even_when_kernel_underflows():
    grid = PeriodicGrid(1, 512)
    kernel = KernelParams(0.02)
    acc = BiasAccumulator(grid, kernel).accumulate(np.array([1.0]), [-0.7], 1e-3)
    force = acc.force_estimate().values
    assert np.all(np.isfinite(force))
    assert np.allclose(force, -0.7, rtol=0, atol=1e-15)
    assert np.min(acc.denominator) == 0.0
    assert np.all(np.isfinite(acc.log_denominator))


def test_accepts_torus_points():
    acc = BiasAccumulator(GRID, KERNEL)
    acc.accumulate(TorusPoint.from_yz(0.5, 2.0), [1.5], 1.0)
    assert acc.sample_count == 1
    assert acc.force_estimate().values == pytest.approx(np.full((1,) + GRID.shape, 1.5))


def test_matches_direct_sums(rng):
    z, grads, weights = _random_samples(rng, 30)
    acc = BiasAccumulator(GRID, KERNEL).accumulate_many(z, grads, weights)
    k = kernel_eval(KERNEL, z[:, None, :], GRID.points()[None, :, :])
    denominator = weights @ k
    numerator = (weights * grads[:, 0]) @ k
    assert np.allclose(acc.denominator, denominator, rtol=1e-12)
    assert np.allclose(acc.numerator[0], numerator, rtol=1e-10, atol=1e-14)
    assert acc.total_weight == pytest.approx(weights.sum())


def test_incremental_and_batched_agree_with_sample_list(rng):
    grid = PeriodicGrid(2, 16)
    kernel = KernelParams(0.5, dims=2)
    z, grads, weights = _random_samples(rng, 25, m=2)
    one_by_one = BiasAccumulator(grid, kernel)
    reference = SampleListEstimator(grid, kernel)
    for zi, gi, wi in zip(z, grads, weights):
        one_by_one.accumulate(zi, gi, wi)
        reference.accumulate(zi, gi, wi)
    batched = BiasAccumulator(grid, kernel).accumulate_many(z, grads, weights)
    expected = reference.force_estimate().values
    assert np.allclose(one_by_one.force_estimate().values, expected, atol=1e-12)
    assert np.allclose(batched.force_estimate().values, expected, atol=1e-12)
    assert reference.total_weight == pytest.approx(batched.total_weight)


def test_estimate_invariant_under_weight_scaling(rng):
    z, grads, weights = _random_samples(rng, 10)
    a = BiasAccumulator(GRID, KERNEL).accumulate_many(z, grads, weights)
    b = BiasAccumulator(GRID, KERNEL).accumulate_many(z, grads, 1e-9 * weights)
    assert np.allclose(a.force_estimate().values, b.force_estimate().values, atol=1e-12)


def test_merge_is_union_of_samples(rng):
    z, grads, weights = _random_samples(rng, 20)
    a = BiasAccumulator(GRID, KERNEL).accumulate_many(z[:7], grads[:7], weights[:7])
    b = BiasAccumulator(GRID, KERNEL).accumulate_many(z[7:], grads[7:], weights[7:])
    whole = BiasAccumulator(GRID, KERNEL).accumulate_many(z, grads, weights)
    merged = merge(a, b)
    assert merged.sample_count == 20
    assert np.allclose(merged.force_estimate().values, whole.force_estimate().values, atol=1e-12)
    assert a.sample_count == 7


def test_merge_with_empty_and_mismatched():
    acc = BiasAccumulator(GRID, KERNEL).accumulate([0.3], [1.0], 1.0)
    empty = BiasAccumulator(GRID, KERNEL)
    merged = merge(empty, acc)
    assert merged is not acc
    assert np.array_equal(merged.force_estimate().values, acc.force_estimate().values)
    with pytest.raises(ValueError):
        merge(acc, BiasAccumulator(GRID, KernelParams(0.3)))
    with pytest.raises(ValueError):
        merge(acc, BiasAccumulator(PeriodicGrid(1, 32), KERNEL))


@pytest.mark.parametrize(
    "grad, weight", [([float("nan")], 1.0), ([float("inf")], 1.0), ([1.0], 0.0), ([1.0], -2.0), ([1.0], float("nan"))]
)
def test_rejects_bad_samples(grad, weight):
    acc = BiasAccumulator(GRID, KERNEL)
    with pytest.raises(ValueError):
        acc.accumulate([1.0], grad, weight)
    assert acc.is_empty


def test_rejects_wrong_dimensions():
    with pytest.raises(ValueError):
        BiasAccumulator(PeriodicGrid(2, 8), KERNEL)
    with pytest.raises(ValueError):
        BiasAccumulator(GRID, KERNEL).accumulate([1.0, 2.0], [1.0], 1.0)


@settings(max_examples=25)
@given(st.integers(min_value=0, max_value=2 ** 32 - 1), st.integers(min_value=1, max_value=30))
def test_force_bounded_by_largest_sample(seed, n):
    rng = np.random.default_rng(seed)
    z, grads, weights = _random_samples(rng, n)
    acc = BiasAccumulator(GRID, KERNEL).accumulate_many(z, grads, weights)
    assert np.max(acc.force_estimate().magnitude()) <= np.max(np.abs(grads)) * (1 + 1e-12)


def test_snapshot_rows_layout(rng):
    grid = PeriodicGrid(2, 8)
    z, grads, weights = _random_samples(rng, 5, m=2)
    acc = BiasAccumulator(grid, KernelParams(0.8, dims=2)).accumulate_many(z, grads, weights)
    rows = acc.snapshot_rows()
    assert len(rows) == 64
    assert set(rows[0]) == {"node", "z_1", "z_2", "denominator", "log_denominator", "numerator_1", "numerator_2"}
    assert rows[9]["z_1"] == pytest.approx(grid.spacing) and rows[9]["z_2"] == pytest.approx(grid.spacing)


def test_copy_is_independent():
    acc = BiasAccumulator(GRID, KERNEL).accumulate([0.3], [1.0], 1.0)
    clone = acc.copy()
    clone.accumulate([3.0], [-1.0], 1.0)
    assert acc.sample_count == 1 and clone.sample_count == 2


def test_gibbs_grid_atoms_reproduce_reduced_force(rng):
    spec = PotentialSpec()
    y_nodes = 64
    oracle = free_energy_reference(spec, GRID, y_nodes=y_nodes)
    B = random_bias(GRID, 1.0, rng, degree=4)

    y_axis = np.arange(y_nodes) * (TWO_PI / y_nodes)
    coords = np.stack(np.meshgrid(y_axis, GRID.axis, indexing="ij"), axis=-1).reshape(-1, 2)
    log_weights = -potential_values(spec, coords) + np.tile(B.values, y_nodes)
    weights = np.exp(log_weights - np.max(log_weights))
    grads = potential_gradient(spec, coords)[:, 1:]

    acc = BiasAccumulator(GRID, KERNEL).accumulate_many(coords[:, 1:], grads, weights)
    expected = F_of_bias(B, oracle, KERNEL).values
    assert np.max(np.abs(acc.force_estimate().values - expected)) < 1e-8


def test_one_sample_moves_the_estimate_by_order_h_over_t(rng):
    spec = PotentialSpec()
    h = 1e-3
    x_new = np.array([0.7, 2.1])
    g_new = potential_gradient(spec, x_new)[1:]
    constants = []
    for t in (1.0, 10.0, 50.0):
        n = int(round(t / h))
        x = rng.uniform(0.0, TWO_PI, size=(n, 2))
        acc = BiasAccumulator(GRID, KERNEL).accumulate_many(x[:, 1:], potential_gradient(spec, x)[:, 1:], np.full(n, h))
        before = acc.force_estimate().values
        after = acc.copy().accumulate(x_new[1:], g_new, h).force_estimate().values
        change = float(np.max(np.abs(after - before)))
        constants.append(change * (t + h) / h)
    assert all(np.isfinite(c) and c > 0 for c in constants)
    assert max(constants) <= 3.0 * min(constants)
