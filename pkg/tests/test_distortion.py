import math

import numpy as np
import pytest

from numerics.distortion import (
    DistortionFn,
    achieved_distortion,
    assemble_kernel,
    check_distribution,
    log_partition,
    objective_f,
    raw_rate_of,
    rate_in_bits,
    rate_of,
)
from numerics.errors import EvaluationError, ValidationError
from numerics.grids import build_grid_fixed
from numerics.sources import Quadrature, build_quadrature, SourceSpec
from services.oracles import naive_distortion, naive_log_partition, naive_objective, naive_rate, random_instance
from tests.conftest import make_instance


def _single_point_quad(x):
    return Quadrature(nodes=np.array([float(x)]), weights=np.ones(1), rule="midpoint", raw_mass=1.0)


def test_kernel_at_zero_beta_is_exactly_zero(uniform_quad, squared):
    kernel = assemble_kernel(uniform_quad, build_grid_fixed(8.0, 20), squared, 0.0)
    assert np.all(kernel.log_entries == 0.0)


def test_kernel_entry_squared_error():
    grid = build_grid_fixed(1.0, 1)
    grid = grid.__class__(nodes=np.array([2.0]), step=grid.step, edges=grid.edges, mode=grid.mode, halfwidth=grid.halfwidth)
    kernel = assemble_kernel(_single_point_quad(0.0), grid, DistortionFn.squared_error(), 0.5)
    assert kernel.log_entries[0, 0] == -2.0
    assert kernel.rho_entries[0, 0] == 4.0


def test_kernel_shape_for_uniform_experiment(uniform_quad, squared):
    kernel = assemble_kernel(uniform_quad, build_grid_fixed(8.0, 160), squared, 0.1)
    assert kernel.log_entries.shape == (300, 160)
    assert np.all(kernel.log_entries <= 0)


def test_with_beta_reuses_rho(uniform_quad, squared):
    kernel = assemble_kernel(uniform_quad, build_grid_fixed(8.0, 20), squared, 0.1)
    other = kernel.with_beta(0.3)
    assert other.rho_entries is kernel.rho_entries
    np.testing.assert_array_equal(other.log_entries, -0.3 * kernel.rho_entries)


def test_custom_distortion_negative_value_names_index(uniform_quad):
    dist = DistortionFn.custom(lambda x, y: x - y)
    with pytest.raises(EvaluationError) as info:
        assemble_kernel(uniform_quad, build_grid_fixed(8.0, 4), dist, 1.0)
    assert info.value.index is not None


def test_custom_scalar_distortion_falls_back_to_loop():
    dist = DistortionFn.custom(lambda x, y: abs(float(x) - float(y)))
    values = dist.matrix(np.array([0.0, 1.0]), np.array([0.5]))
    np.testing.assert_allclose(values, [[0.5], [0.5]])


def test_negative_beta_rejected(uniform_quad, squared):
    with pytest.raises(ValidationError):
        assemble_kernel(uniform_quad, build_grid_fixed(8.0, 4), squared, -0.1)


def test_log_partition_zero_beta_and_single_node():
    kernel, quad = make_instance([[1.0, 2.0], [3.0, 4.0]], beta=0.0)
    assert log_partition(kernel, np.array([0.4, 0.6])).tolist() == [0.0, 0.0]
    kernel, quad = make_instance([[1.5], [2.5]], beta=0.7)
    np.testing.assert_allclose(log_partition(kernel, np.array([1.0])), [-0.7 * 1.5, -0.7 * 2.5], rtol=1e-15)


def test_log_partition_matches_extended_precision(rng):
    kernel, quad = random_instance(rng, 3, 2, 1.3)
    r = np.array([0.3, 0.7])
    np.testing.assert_allclose(log_partition(kernel, r), naive_log_partition(kernel, r), rtol=0, atol=1e-14)


def test_log_partition_survives_large_beta():
    kernel, quad = make_instance([[1000.0, 1001.0]], beta=10.0)
    value = log_partition(kernel, np.array([0.5, 0.5]))[0]
    assert value == pytest.approx(-10000.0 + math.log(0.5 * (1 + math.exp(-10.0))), rel=1e-15)


def test_objective_reductions():
    kernel, quad = make_instance([[1.0, 2.0]], beta=0.0)
    assert objective_f(kernel, quad, np.array([0.5, 0.5])) == 0.0
    kernel, quad = make_instance([[2.5]], beta=0.4)
    assert objective_f(kernel, quad, np.array([1.0])) == pytest.approx(0.4 * 2.5)


def test_objective_and_distortion_match_naive_sums(rng):
    kernel, quad = random_instance(rng, 3, 2, 0.9)
    r = np.array([0.35, 0.65])
    assert objective_f(kernel, quad, r) == pytest.approx(naive_objective(kernel, quad, r), abs=1e-13)
    assert achieved_distortion(kernel, quad, r) == pytest.approx(naive_distortion(kernel, quad, r), abs=1e-13)


def test_distortion_reductions():
    kernel, quad = make_instance([[2.5]], beta=3.0)
    assert achieved_distortion(kernel, quad, np.array([1.0])) == pytest.approx(2.5)
    rho = np.array([[1.0, 3.0], [2.0, 6.0]])
    kernel, quad = make_instance(rho, weights=[0.25, 0.75], beta=0.0)
    assert achieved_distortion(kernel, quad, np.array([0.5, 0.5])) == pytest.approx(0.25 * 2.0 + 0.75 * 4.0)


def test_rate_zero_cases():
    kernel, quad = make_instance([[1.0, 2.0]], beta=0.0)
    assert rate_of(kernel, quad, np.array([0.5, 0.5])) == 0.0
    kernel, quad = make_instance([[0.0, 1.0]], beta=1.0)
    r = np.array([0.5, 0.5])
    assert rate_of(kernel, quad, r) == pytest.approx(max(0.0, raw_rate_of(kernel, quad, r)))


def test_rate_in_bits():
    assert rate_in_bits(math.log(2.0)) == pytest.approx(1.0)


@pytest.mark.parametrize(
    "r",
    [np.array([0.5, 0.6]), np.array([-0.1, 1.1]), np.array([1.0]), np.array([np.nan, 1.0])],
)
def test_check_distribution_rejects(r):
    with pytest.raises(ValidationError):
        check_distribution(r, 2)


def test_uniform_source_kernel_rows_are_finite(squared):
    quad = build_quadrature(SourceSpec.uniform(-8, 8), 300)
    kernel = assemble_kernel(quad, build_grid_fixed(8.0, 160), squared, 0.2)
    assert np.all(np.isfinite(log_partition(kernel, np.full(160, 1 / 160))))


def test_log_partition_nonincreasing_in_beta(rng):
    kernel, quad = random_instance(rng, 4, 3, 0.5)
    r = rng.dirichlet(np.ones(3))
    r = r / r.sum()
    values = [log_partition(kernel.with_beta(beta), r) for beta in (0.5, 1.0, 2.0)]
    assert np.all(values[1] <= values[0])
    assert np.all(values[2] <= values[1])


def test_achieved_distortion_nonincreasing_in_beta(uniform_quad, squared):
    kernel = assemble_kernel(uniform_quad, build_grid_fixed(8.0, 20), squared, 0.0)
    r = np.full(20, 1 / 20)
    values = [achieved_distortion(kernel.with_beta(beta), uniform_quad, r) for beta in (0.0, 0.1, 0.2, 1.0)]
    assert all(b <= a + 1e-12 for a, b in zip(values, values[1:]))
    assert values[-1] < values[0]


@pytest.mark.parametrize("seed", range(10))
def test_sums_match_naive_on_random_instances(seed):
    rng = np.random.default_rng(seed)
    m, n = (int(v) for v in rng.integers(1, 6, size=2))
    beta = float(rng.uniform(0.1, 3.0))
    kernel, quad = random_instance(rng, m, n, beta)
    r = rng.dirichlet(np.ones(n))
    r = r / r.sum()

    f = naive_objective(kernel, quad, r)
    assert objective_f(kernel, quad, r) == pytest.approx(f, rel=1e-12, abs=1e-15)
    assert achieved_distortion(kernel, quad, r) == pytest.approx(naive_distortion(kernel, quad, r), rel=1e-12)
    assert raw_rate_of(kernel, quad, r) == pytest.approx(naive_rate(kernel, quad, r), abs=1e-12 * max(1.0, f))
