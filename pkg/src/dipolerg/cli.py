"""Command-line interface.

Plain key=value configuration files, deterministic output, and exit codes
that scripts can branch on: 0 success, 1 configuration error, 2 first
decimation failure, 3 flow failure, 4 validation failure.
"""

from __future__ import annotations

import json
import sys

import click
import numpy as np

from .model import (ModelParams, ConfigError, parse_config_text, config_defaults,
                    config_dump_text, params_from_config)
from .kernels import polydisc_measure, sequence_to_json
from .firststep import (initial_kernels, FirstStepError, lambda_critical_estimate,
                        PolydiscTargets)
from .rgflow import run_flow, FlowError, extract_alpha_beta
from . import oracle as oracle_mod

EXIT_CONFIG = 1
EXIT_FIRST_STEP = 2
EXIT_FLOW = 3
EXIT_VALIDATION = 4


def _load_config(config_path, sets):
    cfg = config_defaults()
    if config_path:
        with open(config_path, "r", encoding="utf-8") as fh:
            cfg = parse_config_text(fh.read())
    for item in sets:
        if "=" not in item:
            raise ConfigError(f"--set needs key=value, got {item!r}")
        text = "\n".join(f"{k} = {v}" for k, v in cfg.items()) + f"\n{item}\n"
        cfg = parse_config_text(text)
    return cfg


def _params(config_path, sets) -> tuple[ModelParams, dict]:
    cfg = _load_config(config_path, sets)
    return params_from_config(cfg), cfg


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


common_options = [
    click.option("--config", "config_path", type=click.Path(exists=True),
                 default=None, help="key=value configuration file"),
    click.option("--set", "sets", multiple=True, metavar="KEY=VALUE",
                 help="override one configuration key"),
]


def with_common(f):
    for opt in reversed(common_options):
        f = opt(f)
    return f


@click.group()
def main():
    """Dispersion of a field-coupled dipole by spectral renormalization."""


@main.command("config-dump")
@with_common
def config_dump(config_path, sets):
    """Print the effective configuration with documentation."""
    try:
        cfg = _load_config(config_path, sets)
        params_from_config(cfg)
    except ConfigError as exc:
        _fail(EXIT_CONFIG, str(exc))
    click.echo(config_dump_text(cfg), nl=False)


@main.command("first-step")
@with_common
@click.option("--z", "z_value", type=float, default=0.0,
              help="rescaled spectral parameter")
@click.option("--dump-kernels", is_flag=True, help="emit the full kernel arrays")
def first_step(config_path, sets, z_value, dump_kernels):
    """Run the first decimation and report its summary."""
    try:
        params, _ = _params(config_path, sets)
    except ConfigError as exc:
        _fail(EXIT_CONFIG, str(exc))
    try:
        seq = initial_kernels(params, z_value)
    except (FirstStepError, ConfigError) as exc:
        _fail(EXIT_FIRST_STEP, str(exc))
    led = polydisc_measure(seq)
    payload = {
        "z": z_value,
        "kernel_indices": [list(mn) for mn in seq.indices()],
        "band_symbol_origin": [seq.w00_origin().real, seq.w00_origin().imag],
        "series_ratio": seq.meta["series_ratio"],
        "ledger": led.as_dict(),
    }
    if dump_kernels:
        payload["kernels"] = json.loads(sequence_to_json(seq))
    click.echo(json.dumps(payload, sort_keys=True, indent=2))


@main.command("flow")
@with_common
def flow_cmd(config_path, sets):
    """Run the full flow at the configured momentum; print the energy."""
    try:
        params, cfg = _params(config_path, sets)
    except ConfigError as exc:
        _fail(EXIT_CONFIG, str(exc))
    try:
        res = run_flow(params, n_max=cfg["n_flow_max"],
                       tol_factor=cfg["tol_factor"])
    except FlowError as exc:
        code = EXIT_FIRST_STEP if "first decimation" in str(exc) else EXIT_FLOW
        _fail(code, str(exc))
    alpha, beta = extract_alpha_beta(res.final_seqs[len(res.z_nodes) // 2])
    payload = {
        "energy": res.energy,
        "stages": res.stages,
        "energy_chain": [complex(e).real for e in res.e_chain],
        "series_ratios": res.series_ratios,
        "eps_ledger": [l.eps for l in res.ledgers],
        "delta_ledger": [l.delta for l in res.ledgers],
        "gamma_ledger": [l.gamma for l in res.ledgers],
        "alpha": alpha,
        "beta": list(beta),
    }
    click.echo(json.dumps(payload, sort_keys=True, indent=2))


@main.command("oracle")
@with_common
def oracle_cmd(config_path, sets):
    """Ground energy by direct diagonalization, with the perturbative value."""
    try:
        params, cfg = _params(config_path, sets)
    except ConfigError as exc:
        _fail(EXIT_CONFIG, str(exc))
    e = oracle_mod.ground_energy(params, seed=cfg["seed"])
    payload = {"energy": e, "pt2": oracle_mod.pt2_energy(params)}
    click.echo(json.dumps(payload, sort_keys=True, indent=2))


@main.command("dispersion")
@with_common
@click.option("--method", type=click.Choice(["flow", "oracle", "pt2"]),
              default="flow")
@click.option("--output", type=click.Path(), default=None,
              help="write CSV here instead of stdout")
def dispersion(config_path, sets, method, output):
    """Sweep the conserved momentum and print a CSV dispersion table."""
    try:
        params, cfg = _params(config_path, sets)
    except ConfigError as exc:
        _fail(EXIT_CONFIG, str(exc))
    npts = cfg["p_sweep_points"]
    if npts < 3 or npts % 2 == 0:
        _fail(EXIT_CONFIG, "p_sweep_points must be odd and >= 3")
    pmax = cfg["p_sweep_max"] * params.m
    p_values = np.linspace(-pmax, pmax, npts)
    try:
        records = oracle_mod.dispersion_sweep(
            params, p_values, method=method,
            flow_fn=lambda pp: run_flow(pp, n_max=cfg["n_flow_max"],
                                        tol_factor=cfg["tol_factor"]).energy)
    except FlowError as exc:
        _fail(EXIT_FLOW, str(exc))
    text = oracle_mod.sweep_to_csv(records)
    if output:
        with open(output, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        click.echo(text, nl=False)


@main.command("validate")
@with_common
@click.option("--rel-tol", type=float, default=1e-3)
@click.option("--abs-tol", type=float, default=1e-8)
def validate(config_path, sets, rel_tol, abs_tol):
    """Compare the flow against direct diagonalization at one momentum."""
    try:
        params, cfg = _params(config_path, sets)
    except ConfigError as exc:
        _fail(EXIT_CONFIG, str(exc))
    try:
        e_flow = run_flow(params, n_max=cfg["n_flow_max"],
                          tol_factor=cfg["tol_factor"]).energy
    except FlowError as exc:
        code = EXIT_FIRST_STEP if "first decimation" in str(exc) else EXIT_FLOW
        _fail(code, str(exc))
    e_oracle = oracle_mod.ground_energy(params, seed=cfg["seed"])
    diff = abs(e_flow - e_oracle)
    tol = max(rel_tol * abs(e_oracle), abs_tol * params.m)
    payload = {"energy_flow": e_flow, "energy_oracle": e_oracle,
               "difference": diff, "tolerance": tol, "pass": bool(diff <= tol)}
    click.echo(json.dumps(payload, sort_keys=True, indent=2))
    if diff > tol:
        sys.exit(EXIT_VALIDATION)


@main.command("wick-check")
@with_common
@click.option("--tol", type=float, default=1e-11)
def wick_check(config_path, sets, tol):
    """Operator-identity self-test of the contraction machinery."""
    try:
        params, _ = _params(config_path, sets)
    except ConfigError as exc:
        _fail(EXIT_CONFIG, str(exc))
    from .selfcheck import wick_reassembly_defect
    defect = wick_reassembly_defect(params)
    payload = {"defect": defect, "tolerance": tol, "pass": bool(defect <= tol)}
    click.echo(json.dumps(payload, sort_keys=True, indent=2))
    if defect > tol:
        sys.exit(EXIT_VALIDATION)


@main.command("lambda-critical")
@with_common
def lambda_critical(config_path, sets):
    """Estimate the largest admissible coupling for the configured model."""
    try:
        params, _ = _params(config_path, sets)
    except ConfigError as exc:
        _fail(EXIT_CONFIG, str(exc))
    try:
        lam = lambda_critical_estimate(params, PolydiscTargets())
    except FirstStepError as exc:
        _fail(EXIT_FIRST_STEP, str(exc))
    click.echo(json.dumps({"lambda_critical": lam}, sort_keys=True, indent=2))


if __name__ == "__main__":
    main()
