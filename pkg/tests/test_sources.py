import math

import numpy as np
import pytest
from mpmath import mp

from numerics.errors import UnsupportedDimensionError, ValidationError
from numerics.sources import SourceSpec, build_quadrature, density


def test_uniform_midpoint_nodes_and_weights(uniform_source):
    quad = build_quadrature(uniform_source, 300, "midpoint")
    assert quad.m == 300
    assert np.all((quad.nodes > -8) & (quad.nodes < 8))
    np.testing.assert_allclose(np.diff(quad.nodes), 16 / 300, rtol=1e-12)
    np.testing.assert_allclose(quad.weights, 1 / 300, rtol=1e-12)
    assert math.fsum(quad.weights) == pytest.approx(1.0, abs=1e-15)


def test_point_mass_quadrature():
    quad = build_quadrature(SourceSpec.tabulated([0.0], [1.0]), 1)
    assert quad.nodes.tolist() == [0.0]
    assert quad.weights.tolist() == [1.0]


def test_gaussian_gauss_legendre_raw_mass_matches_erf():
    quad = build_quadrature(SourceSpec.gaussian(0.0, 1.0, 8.0), 1000, "gauss_legendre_composite")
    assert quad.m == 1000
    with mp.workdps(30):
        expected = float(mp.erf(8 / mp.sqrt(2)))
    assert abs(quad.raw_mass - expected) <= 1e-12


@pytest.mark.parametrize("m", [1, 7, 12, 300, 1001])
def test_gauss_legendre_node_count_is_exact(m):
    quad = build_quadrature(SourceSpec.uniform(-1.0, 1.0), m, "gauss_legendre_composite")
    assert quad.m == m
    assert np.all(np.diff(quad.nodes) > 0)


def test_trapezoid_weights_halved_at_ends():
    quad = build_quadrature(SourceSpec.uniform(0.0, 1.0), 5, "trapezoid")
    np.testing.assert_allclose(quad.weights, [0.125, 0.25, 0.25, 0.25, 0.125])


def test_quadrature_is_deterministic_and_read_only(uniform_source):
    a = build_quadrature(uniform_source, 50)
    b = build_quadrature(uniform_source, 50)
    assert np.array_equal(a.weights, b.weights)
    with pytest.raises(ValueError):
        a.weights[0] = 1.0


def test_density_values():
    assert density(SourceSpec.uniform(-8, 8), 0.0) == pytest.approx(1 / 16)
    assert density(SourceSpec.uniform(-8, 8), 9.0) == 0.0
    with mp.workdps(30):
        expected = float(1 / mp.sqrt(2 * mp.pi) / mp.erf(8 / mp.sqrt(2)))
    assert density(SourceSpec.gaussian(0, 1, 8), 0.0) == pytest.approx(expected, rel=1e-14)


def test_tabulated_density_is_normalized():
    source = SourceSpec.tabulated([0.0, 1.0, 2.0], [0.0, 2.0, 0.0])
    assert density(source, 1.0) == pytest.approx(1.0)
    assert density(source, 0.5) == pytest.approx(0.5)
    assert source.variance() == pytest.approx(1 / 6)


def test_support_and_variance():
    assert SourceSpec.uniform(-8, 8).support() == (-8.0, 8.0)
    assert SourceSpec.uniform(-8, 8).variance() == pytest.approx(256 / 12)
    assert SourceSpec.gaussian(1.0, 2.0).support() == (-15.0, 17.0)


@pytest.mark.parametrize(
    "build",
    [
        lambda: SourceSpec.uniform(1.0, 1.0),
        lambda: SourceSpec.gaussian(0.0, 0.0),
        lambda: SourceSpec.gaussian(0.0, 1.0, -1.0),
        lambda: SourceSpec.tabulated([0.0, 1.0], [1.0, -1.0]),
        lambda: SourceSpec.tabulated([1.0, 0.0], [1.0, 1.0]),
        lambda: SourceSpec.tabulated([0.0, 1.0], [0.0, 0.0]),
    ],
)
def test_invalid_sources_rejected(build):
    with pytest.raises(ValidationError):
        build()


def test_higher_dimensions_unsupported():
    with pytest.raises(UnsupportedDimensionError):
        SourceSpec(kind="uniform", lo=0.0, hi=1.0, dimension=2)


@pytest.mark.parametrize("m, rule", [(0, "midpoint"), (10, "simpson")])
def test_invalid_quadrature_rejected(uniform_source, m, rule):
    with pytest.raises(ValidationError):
        build_quadrature(uniform_source, m, rule)


def test_uniform_midpoint_second_moment(uniform_source):
    quad = build_quadrature(uniform_source, 300, "midpoint")
    assert math.fsum(quad.weights * quad.nodes ** 2) == pytest.approx(64.0 / 3.0, abs=1e-3)


@pytest.mark.parametrize(
    "source, rule",
    [
        (SourceSpec.gaussian(0.0, 1.0), "gauss_legendre_composite"),
        (SourceSpec.gaussian(0.0, 1.0), "trapezoid"),
        (SourceSpec.uniform(-8.0, 8.0), "trapezoid"),
    ],
)
def test_weights_sum_to_one(source, rule):
    quad = build_quadrature(source, 1000, rule)
    assert quad.m == 1000
    assert abs(math.fsum(quad.weights) - 1.0) <= 1e-15
