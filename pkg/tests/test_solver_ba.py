import numpy as np
import pytest

from numerics.distortion import assemble_kernel, objective_f
from numerics.errors import ValidationError
from numerics.grids import build_grid_fixed
from services.oracles import naive_ba_step, random_instance
from solvers.ba import (
    BAConfig,
    LogDomainSweep,
    OperationCounter,
    ScaledSweep,
    ba_solve,
    ba_step,
    kkt_residual,
    make_sweep,
    solve_fixed_beta,
)
from tests.conftest import make_instance


def test_step_at_zero_beta_is_identity():
    kernel, quad = make_instance([[1.0, 4.0, 9.0], [2.0, 0.5, 1.0]], beta=0.0)
    r = np.array([0.2, 0.3, 0.5])
    assert np.array_equal(ba_step(kernel, quad, r), r)


def test_single_row_bayes_update():
    kernel, quad = make_instance([[0.0, 1.0]], beta=1.0)
    r_next = ba_step(kernel, quad, np.array([0.5, 0.5]))
    expected = np.array([1.0, np.exp(-1.0)]) / (1.0 + np.exp(-1.0))
    np.testing.assert_allclose(r_next, expected, rtol=1e-15)
    assert r_next[0] == pytest.approx(0.7311, abs=1e-4)


def test_step_matches_extended_precision(rng):
    kernel, quad = random_instance(rng, 3, 3, 1.7)
    r = rng.dirichlet(np.ones(3))
    r = r / r.sum()
    np.testing.assert_allclose(ba_step(kernel, quad, r), naive_ba_step(kernel, quad, r), rtol=0, atol=1e-12)


def test_step_rejects_invalid_distribution():
    kernel, quad = make_instance([[0.0, 1.0]], beta=1.0)
    with pytest.raises(ValidationError):
        ba_step(kernel, quad, np.array([0.5, 0.6]))


def test_zero_beta_solve():
    rho = np.array([[1.0, 3.0], [2.0, 6.0]])
    kernel, quad = make_instance(rho, weights=[0.5, 0.5], beta=0.0)
    sol = ba_solve(kernel, quad, BAConfig(beta=0.0))
    assert sol.converged
    assert sol.iterations == 1
    assert sol.objective_f == 0.0
    assert sol.rate == 0.0
    assert sol.distortion == pytest.approx(0.5 * 2.0 + 0.5 * 4.0)


def test_symmetric_degenerate_instance():
    kernel, quad = make_instance([[1.0, 1.0]], beta=1.0)
    sol = ba_solve(kernel, quad, BAConfig(beta=1.0))
    assert sol.converged
    assert sol.objective_f == pytest.approx(1.0)


def test_single_source_point_has_zero_rate():
    kernel, quad = make_instance([[0.0, 1.0]], beta=1.0)
    sol = ba_solve(kernel, quad, BAConfig(beta=1.0))
    assert sol.converged
    assert sol.rate <= 1e-9
    assert sol.r[0] > 0.999


def test_objective_history_descends(uniform_quad, squared):
    sol = solve_fixed_beta(uniform_quad, build_grid_fixed(8.0, 40), squared, BAConfig(beta=0.1))
    assert sol.converged
    assert sol.kkt_residual <= 1e-6
    history = np.asarray(sol.history)
    assert np.all(np.diff(history) <= 1e-12)
    assert sol.nodes is not None and sol.nodes.size == 40


def test_kkt_residual_flags_perturbed_optimum(uniform_quad, squared):
    grid = build_grid_fixed(8.0, 40)
    sol = solve_fixed_beta(uniform_quad, grid, squared, BAConfig(beta=0.2))
    kernel = assemble_kernel(uniform_quad, grid, squared, 0.2)
    assert kkt_residual(kernel, uniform_quad, sol.r) <= 1e-6
    worst = int(np.argmin(sol.r))
    perturbed = 0.9 * sol.r
    perturbed[worst] += 0.1
    perturbed /= perturbed.sum()
    assert kkt_residual(kernel, uniform_quad, perturbed) > 1e-3
    assert objective_f(kernel, uniform_quad, perturbed) > sol.objective_f


def test_kkt_residual_zero_beta():
    kernel, quad = make_instance([[1.0, 2.0], [0.0, 5.0]], beta=0.0)
    assert kkt_residual(kernel, quad, np.array([0.5, 0.5])) == 0.0


def test_iteration_cap_reports_unconverged(uniform_quad, squared):
    sol = solve_fixed_beta(uniform_quad, build_grid_fixed(8.0, 40), squared, BAConfig(beta=0.1, max_iterations=3))
    assert not sol.converged
    assert sol.status == "max_iterations"
    assert sol.iterations == 3


def test_kernel_beta_must_match_config():
    kernel, quad = make_instance([[0.0, 1.0]], beta=1.0)
    with pytest.raises(ValidationError):
        ba_solve(kernel, quad, BAConfig(beta=2.0))


def test_custom_initialization():
    kernel, quad = make_instance([[0.0, 1.0], [1.0, 0.0]], beta=2.0)
    sol = ba_solve(kernel, quad, BAConfig(beta=2.0, initialization=np.array([0.9, 0.1])))
    assert sol.converged
    np.testing.assert_allclose(sol.r, [0.5, 0.5], atol=1e-4)


@pytest.mark.parametrize("config", [dict(beta=-1.0), dict(beta=1.0, max_iterations=0), dict(beta=1.0, kkt_tolerance=0.0)])
def test_invalid_config(config):
    with pytest.raises(ValidationError):
        BAConfig(**config)


def test_step_cost_is_linear_in_n(uniform_quad, squared):
    work = []
    for n in (2000, 4000):
        kernel = assemble_kernel(uniform_quad, build_grid_fixed(8.0, n), squared, 0.1)
        counter = OperationCounter()
        ba_step(kernel, uniform_quad, np.full(n, 1.0 / n), counter)
        work.append(counter.multiply_adds)
    assert 1.8 <= work[1] / work[0] <= 2.2


@pytest.mark.parametrize("beta", [0.2, 0.5, 1.0])
def test_converged_solution_accounting(uniform_quad, squared, beta):
    sol = solve_fixed_beta(uniform_quad, build_grid_fixed(8.0, 20), squared, BAConfig(beta=beta))
    assert sol.converged
    assert sol.raw_rate >= -1e-9
    assert sol.objective_f >= sol.rate >= 0.0
    assert sol.objective_f == pytest.approx(sol.rate + beta * sol.distortion, abs=1e-9)


def test_accounting_on_random_instances(rng):
    for beta in (0.3, 1.0, 3.0):
        for _ in range(3):
            kernel, quad = random_instance(rng, int(rng.integers(1, 4)), 2, beta)
            sol = ba_solve(kernel, quad, BAConfig(beta=beta, max_iterations=5000))
            assert sol.raw_rate >= -1e-9
            assert sol.objective_f >= sol.rate >= 0.0
            assert sol.objective_f == pytest.approx(sol.rate + beta * sol.distortion, abs=1e-9)


def test_scaled_and_log_domain_sweeps_agree(uniform_quad, squared, rng):
    kernel = assemble_kernel(uniform_quad, build_grid_fixed(8.0, 30), squared, 0.2)
    r = rng.dirichlet(np.ones(30))
    r[::4] = 0.0
    r = r / r.sum()
    scaled = ScaledSweep(kernel, uniform_quad)
    log_domain = LogDomainSweep(kernel.rho_entries, uniform_quad, 0.2)
    assert scaled.evaluate(r) == pytest.approx(log_domain.evaluate(r), rel=1e-13)
    np.testing.assert_array_equal(scaled.support, np.flatnonzero(r > 0))
    np.testing.assert_allclose(scaled.log_partition, log_domain.log_partition, rtol=0, atol=1e-12)
    np.testing.assert_allclose(scaled.log_column_sums(), log_domain.log_column_sums(), rtol=0, atol=1e-12)
    np.testing.assert_allclose(
        scaled.log_column_sums(full=True), log_domain.log_column_sums(full=True), rtol=0, atol=1e-12
    )


def test_sweep_choice_follows_row_spread():
    kernel, quad = make_instance([[0.0, 10.0]], beta=1.0)
    assert isinstance(make_sweep(kernel, quad), ScaledSweep)
    kernel, quad = make_instance([[0.0, 1000.0]], beta=1.0)
    assert type(make_sweep(kernel, quad)) is LogDomainSweep


def test_wide_kernel_solve_in_log_domain():
    kernel, quad = make_instance([[0.0, 1000.0], [1000.0, 0.0]], beta=1.0)
    sol = ba_solve(kernel, quad, BAConfig(beta=1.0))
    assert sol.converged
    np.testing.assert_allclose(sol.r, [0.5, 0.5], rtol=1e-12)
    assert sol.objective_f == pytest.approx(np.log(2.0), rel=1e-12)


def test_solve_work_is_counted_per_step(uniform_quad, squared):
    kernel = assemble_kernel(uniform_quad, build_grid_fixed(8.0, 20), squared, 0.5)
    counter = OperationCounter()
    sol = ba_solve(kernel, uniform_quad, BAConfig(beta=0.5), counter=counter)
    assert counter.steps == sol.iterations
    # every step sweeps at most the full kernel twice
    assert 0 < counter.multiply_adds <= (2 * sol.iterations + 3) * kernel.m * kernel.n
