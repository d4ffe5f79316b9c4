import json

import pytest
from click.testing import CliRunner

from dipolerg.cli import main, EXIT_CONFIG, EXIT_FIRST_STEP, EXIT_VALIDATION


@pytest.fixture()
def runner():
    return CliRunner()


def test_config_dump_roundtrips(runner, tmp_path):
    out = runner.invoke(main, ["config-dump"])
    assert out.exit_code == 0
    cfg = tmp_path / "run.cfg"
    cfg.write_text(out.output)
    again = runner.invoke(main, ["config-dump", "--config", str(cfg)])
    assert again.exit_code == 0
    assert again.output == out.output


def test_config_dump_set_override(runner):
    out = runner.invoke(main, ["config-dump", "--set", "lam0=0.03"])
    assert out.exit_code == 0
    assert "lam0 = 0.03" in out.output


def test_bad_config_exit_code(runner):
    out = runner.invoke(main, ["config-dump", "--set", "rho=0.9"])
    assert out.exit_code == EXIT_CONFIG
    out = runner.invoke(main, ["first-step", "--set", "no_such_key=1"])
    assert out.exit_code == EXIT_CONFIG
    out = runner.invoke(main, ["first-step", "--set", "oops"])
    assert out.exit_code == EXIT_CONFIG


def test_first_step_json_and_determinism(runner):
    args = ["first-step", "--set", "lam0=0.02", "--set", "j_max=5",
            "--set", "j_max_pair=4"]
    a = runner.invoke(main, args)
    b = runner.invoke(main, args)
    assert a.exit_code == 0
    assert a.output == b.output
    payload = json.loads(a.output)
    assert payload["band_symbol_origin"][0] < 0.0
    assert "ledger" in payload
    assert [0, 0] in payload["kernel_indices"]


def test_first_step_window_exit(runner):
    out = runner.invoke(main, ["first-step", "--z", "5.0"])
    assert out.exit_code == EXIT_FIRST_STEP


def test_oracle_command(runner):
    out = runner.invoke(main, ["oracle", "--set", "lam0=0.02",
                               "--set", "j_max=5"])
    assert out.exit_code == 0
    payload = json.loads(out.output)
    assert payload["energy"] < 0.0
    assert payload["pt2"] < 0.0


def test_dispersion_pt2_csv(runner, tmp_path):
    dest = tmp_path / "sweep.csv"
    out = runner.invoke(main, ["dispersion", "--method", "pt2",
                               "--set", "lam0=0.02", "--set", "j_max=5",
                               "--set", "p_sweep_points=5",
                               "--output", str(dest)])
    assert out.exit_code == 0
    lines = dest.read_text().strip().splitlines()
    assert lines[0] == "p,energy,method"
    assert len(lines) == 6


def test_dispersion_rejects_even_sweep(runner):
    out = runner.invoke(main, ["dispersion", "--method", "pt2",
                               "--set", "p_sweep_points=4"])
    assert out.exit_code == EXIT_CONFIG


def test_validate_pass_and_fail(runner):
    args = ["validate", "--set", "lam0=0.02", "--set", "j_max=5",
            "--set", "j_max_pair=4", "--set", "n_z_samples=5"]
    out = runner.invoke(main, args)
    assert out.exit_code == 0
    payload = json.loads(out.output)
    assert payload["pass"] is True
    out = runner.invoke(main, args + ["--rel-tol", "1e-12", "--abs-tol", "1e-15"])
    assert out.exit_code == EXIT_VALIDATION


def test_wick_check_command(runner):
    out = runner.invoke(main, ["wick-check"])
    assert out.exit_code == 0
    payload = json.loads(out.output)
    assert payload["pass"] is True
    assert payload["defect"] < 1e-11


def test_lambda_critical_command(runner):
    out = runner.invoke(main, ["lambda-critical", "--set", "j_max=5",
                               "--set", "j_max_pair=4"])
    assert out.exit_code == 0
    lam = json.loads(out.output)["lambda_critical"]
    assert 0.02 < lam < 0.08
