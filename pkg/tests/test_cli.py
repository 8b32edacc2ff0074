import argparse

import numpy as np
import pandas as pd
import pytest

from cli.handlers.converge import converge_handler
from cli.handlers.curve import curve_handler
from cli.handlers.oracle_check import oracle_check_handler
from cli.handlers.solve import solve_handler
from cli.main import build_parser, main
from config.run_config import load_run_config
from numerics.distortion import assemble_kernel, objective_f
from services.oracle_suite import check_g_derivative
from services.utils import read_manifest, read_solution_csv
from solvers.cba import GPrime, eval_G_prime

UNIFORM = """\
source.kind: uniform
source.lo: -8.0
source.hi: 8.0
grid.M: 8.0
grid.n: {n}
quadrature.m: 60
{solver}
"""


def write_config(tmp_path, solver="solver.ba.beta: 0.1", n=20, name="run.yaml"):
    path = tmp_path / name
    path.write_text(UNIFORM.format(n=n, solver=solver), encoding="utf-8")
    return path


def namespace(config, out, **extra):
    fields = dict(config=str(config), out=str(out), workers=None, n_list=None, ref_n=None, d_list=None, beta_list=None)
    fields.update(extra)
    return argparse.Namespace(**fields)


async def test_solve_writes_solution_and_manifest(tmp_path):
    config_path = write_config(tmp_path)
    assert await solve_handler(namespace(config_path, tmp_path / "out")) == 0

    frame = read_solution_csv(tmp_path / "out" / "solution.csv")
    assert list(frame.columns) == ["j", "y", "r"]
    assert len(frame) == 20
    assert frame["r"].sum() == pytest.approx(1.0)

    manifest = read_manifest(tmp_path / "out" / "solution.manifest.jsonl")
    assert manifest["converged"] is True
    assert manifest["config"]["solver"]["ba"]["beta"] == 0.1
    assert list(manifest) == sorted(manifest)

    # Re-evaluating the written solution reproduces the recorded objective
    config = load_run_config(config_path)
    source = config.source_spec()
    kernel = assemble_kernel(config.quadrature_for(source), config.grid_for(source), config.distortion_fn(), 0.1)
    f = objective_f(kernel, config.quadrature_for(source), frame["r"].to_numpy())
    assert abs(f - manifest["f"]) <= 1e-9


async def test_solve_zero_beta_keeps_uniform_start(tmp_path):
    config_path = write_config(tmp_path, solver="solver.ba.beta: 0.0")
    assert await solve_handler(namespace(config_path, tmp_path)) == 0
    frame = read_solution_csv(tmp_path / "solution.csv")
    np.testing.assert_array_equal(frame["r"].to_numpy(), np.full(20, 1 / 20))
    assert read_manifest(tmp_path / "solution.manifest.jsonl")["R"] == 0.0


async def test_solve_constrained_hits_target(tmp_path):
    config_path = write_config(tmp_path, solver="solver.cba.D: 3.0", n=40)
    assert await solve_handler(namespace(config_path, tmp_path)) == 0
    assert abs(read_manifest(tmp_path / "solution.manifest.jsonl")["D"] - 3.0) <= 1e-6


async def test_solve_unconverged_exits_3(tmp_path):
    config_path = write_config(tmp_path, solver="solver.ba.beta: 0.1\ntolerances.max_iterations: 2")
    assert await solve_handler(namespace(config_path, tmp_path)) == 3


async def test_converge_single_row(tmp_path):
    config_path = write_config(tmp_path)
    assert await converge_handler(namespace(config_path, tmp_path, n_list="20", ref_n=80)) == 0
    text = (tmp_path / "ladder.csv").read_text(encoding="utf-8").splitlines()
    assert text[0] == "n,h,value,error_vs_ref,ratio,fitted_order"
    assert len(text) == 2
    assert text[1].endswith(",,")


async def test_converge_ladder(tmp_path):
    config_path = write_config(tmp_path)
    assert await converge_handler(namespace(config_path, tmp_path, n_list="10,20", ref_n=80, workers=2)) == 0
    frame = pd.read_csv(tmp_path / "ladder.csv")
    assert frame["n"].tolist() == [10, 20]
    assert frame["fitted_order"].nunique() == 1
    assert read_manifest(tmp_path / "ladder.manifest.jsonl")["reference_n"] == 80


async def test_curve_rows_sorted_by_D(tmp_path):
    config_path = write_config(tmp_path, solver="solver.cba.D: 4.0")
    assert await curve_handler(namespace(config_path, tmp_path, d_list="4,3")) == 0
    frame = pd.read_csv(tmp_path / "curve.csv")
    assert list(frame.columns) == ["D", "R_nats", "beta", "converged", "iterations"]
    assert frame["D"].tolist() == [3.0, 4.0]
    assert frame["R_nats"].iloc[0] > frame["R_nats"].iloc[1]


async def test_curve_matches_solve(tmp_path):
    config_path = write_config(tmp_path, solver="solver.cba.D: 4.0")
    await curve_handler(namespace(config_path, tmp_path, d_list="4"))
    await solve_handler(namespace(config_path, tmp_path))
    rate = pd.read_csv(tmp_path / "curve.csv", float_precision="round_trip")["R_nats"].iloc[0]
    assert rate == read_manifest(tmp_path / "solution.manifest.jsonl")["R"]


def test_main_maps_config_errors_to_exit_2(tmp_path):
    config_path = tmp_path / "bad.yaml"
    config_path.write_text("source.kind: uniform\ngrid.n: 0\n", encoding="utf-8")
    assert main(["solve", "--config", str(config_path), "--out", str(tmp_path)]) == 2


def test_main_curve_needs_one_list(tmp_path):
    config_path = write_config(tmp_path)
    assert main(["curve", "--config", str(config_path), "--out", str(tmp_path)]) == 2


def test_main_bad_reference_exits_2(tmp_path):
    config_path = write_config(tmp_path)
    assert main(["converge", "--config", str(config_path), "--out", str(tmp_path), "--n-list", "20", "--ref-n", "40"]) == 2


def test_main_study_failure_exits_3(tmp_path):
    config_path = write_config(tmp_path, solver="solver.ba.beta: 0.1\ntolerances.max_iterations: 2")
    assert main(["converge", "--config", str(config_path), "--out", str(tmp_path), "--n-list", "20", "--ref-n", "80"]) == 3


def test_parser_requires_command():
    with pytest.raises(SystemExit):
        build_parser().parse_args([])


def flipped_g_prime(quad, rho_entries, r, beta):
    g = eval_G_prime(quad, rho_entries, r, beta)
    return GPrime(-g.value, g.degenerate)


def test_sign_flip_fails_derivative_check():
    check = check_g_derivative(np.random.default_rng(7), flipped_g_prime)
    assert not check.passed
    assert check_g_derivative(np.random.default_rng(7)).passed


@pytest.mark.slow
async def test_oracle_check_passes(capsys):
    assert await oracle_check_handler(argparse.Namespace()) == 0
    assert "FAIL" not in capsys.readouterr().out


@pytest.mark.slow
async def test_oracle_check_negative_control():
    assert await oracle_check_handler(argparse.Namespace(), flipped_g_prime) == 1
