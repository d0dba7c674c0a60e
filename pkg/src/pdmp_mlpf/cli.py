"""Command line interface.

Subcommands: ``simulate`` generates synthetic observation data, ``pf`` and
``mlpf`` run the filter sweeps against a data file, ``rates`` fits the
cost-vs-MSE regression from emitted results and renders the report figure,
``emit-config-template`` writes a model parameter file with the table
defaults. Exit codes: 0 success, 2 configuration error, 3 numeric failure,
4 budget error.
"""

from __future__ import annotations

import json
import sys

import click

from . import bench, neuro, report
from .errors import (BudgetError, ConfigError, ContractViolationError,
                     FilterCollapseError, InsufficientDataError,
                     MeasureSingularityError, NumericFailureError, PdmpError,
                     RateBoundViolationError)

_NUMERIC_ERRORS = (NumericFailureError, RateBoundViolationError,
                   MeasureSingularityError, FilterCollapseError)
_CONFIG_ERRORS = (ConfigError, ContractViolationError, InsufficientDataError)


def _parse_levels(text: str) -> tuple:
    text = text.strip()
    try:
        if ".." in text:
            lo, hi = text.split("..")
            levels = tuple(range(int(lo), int(hi) + 1))
        else:
            levels = tuple(int(part) for part in text.split(","))
    except ValueError:
        raise ConfigError(f"cannot parse level list {text!r}; "
                          "use forms like 3..7 or 3,4,5")
    if not levels:
        raise ConfigError("empty level list")
    return levels


def _parse_eps(text: str) -> tuple:
    try:
        return tuple(float(part) for part in text.split(","))
    except ValueError:
        raise ConfigError(f"cannot parse accuracy list {text!r}")


def _load_params(model_id: str, params_path: str | None):
    if params_path is None:
        return None
    return neuro.load_params(params_path, model_id)


def _config(model, params, levels, eps, replicates, seed, resampling, horizon,
            const, pf_const, phi, truth_level, truth_replicates, workers):
    return bench.ExperimentConfig(
        model=model,
        params=_load_params(model, params),
        levels=_parse_levels(levels),
        replicates=replicates,
        eps=_parse_eps(eps) if eps else None,
        alloc_constant=const,
        pf_constant=pf_const,
        horizon=horizon,
        base_seed=seed,
        resampling=resampling,
        phi=phi,
        truth_level=truth_level,
        truth_replicates=truth_replicates,
        workers=workers,
    )


_shared = [
    click.option("--model", type=click.Choice(["ml", "ikil"]), default="ml",
                 show_default=True, help="neuron model"),
    click.option("--params", type=click.Path(exists=True, dir_okay=False),
                 default=None, help="flat name = value parameter file"),
    click.option("--seed", type=int, default=0, show_default=True,
                 help="base seed for every derived stream"),
]


def _add_options(options):
    def wrap(fn):
        for opt in reversed(options):
            fn = opt(fn)
        return fn
    return wrap


@click.group()
def cli():
    """Multilevel particle filtering benchmarks for PDMP neuron models."""


@cli.command()
@_add_options(_shared)
@click.option("--horizon", type=int, default=10, show_default=True,
              help="number of unit epochs")
@click.option("--truth-level", type=int, default=9, show_default=True,
              help="discretization level of the latent reference path")
@click.option("--out", type=click.Path(writable=True), required=True)
@click.option("--format", "fmt", type=click.Choice(["csv", "json"]),
              default="json", show_default=True)
def simulate(model, params, seed, horizon, truth_level, out, fmt):
    """Generate a synthetic observation sequence and latent reference path."""
    p = _load_params(model, params) or neuro.params_for(model)
    pdmp_model = neuro.build_model(model, p)
    obs_model = neuro.gaussian_obs(p.delta, p.tau2)
    data = bench.generate_data(pdmp_model, obs_model, neuro.initial_state(p),
                               truth_level, horizon, seed, model_id=model)
    if fmt == "json":
        bench.save_data(data, out)
    else:
        lines = ["t,y"] + [f"{repr(t)},{repr(y)}" for t, y in data.observations]
        bench._atomic_write(out, "\n".join(lines) + "\n")
        base = out.rsplit(".", 1)[0]
        latent_lines = ["t,u,v0"] + [f"{repr(t)},{u},{repr(v)}"
                                     for t, u, v in data.latent]
        bench._atomic_write(f"{base}.latent.csv", "\n".join(latent_lines) + "\n")
    click.echo(f"wrote {len(data.observations)} observations to {out}")


def _sweep_options(fn):
    fn = click.option("--data", "data_path", required=True,
                      type=click.Path(exists=True, dir_okay=False),
                      help="data file from the simulate subcommand")(fn)
    fn = click.option("--levels", default="3..7", show_default=True,
                      help="level grid, e.g. 3..7 or 3,4,5")(fn)
    fn = click.option("--eps", default=None,
                      help="accuracy grid (comma separated); default 2^-l")(fn)
    fn = click.option("--replicates", type=int, default=100, show_default=True)(fn)
    fn = click.option("--resampling", type=click.Choice(["adaptive", "always"]),
                      default="adaptive", show_default=True)(fn)
    fn = click.option("--const", type=float, default=1.0, show_default=True,
                      help="allocation constant multiplying every S_l")(fn)
    fn = click.option("--pf-const", type=float, default=None,
                      help="particle count constant for the single-level "
                           "filter (default: --const)")(fn)
    fn = click.option("--phi", type=click.Choice(sorted(bench.PHI_FUNCTIONS)),
                      default="v0", show_default=True)(fn)
    fn = click.option("--truth-level", type=int, default=None,
                      help="ground-truth filter level (default max level + 2)")(fn)
    fn = click.option("--truth-replicates", type=int, default=10,
                      show_default=True)(fn)
    fn = click.option("--workers", type=int, default=None,
                      help="worker processes (PDMP_MLPF_WORKERS overrides)")(fn)
    fn = click.option("--out", type=click.Path(writable=True), required=True)(fn)
    fn = click.option("--format", "fmt", type=click.Choice(["csv", "json"]),
                      default="csv", show_default=True)(fn)
    return fn


def _run_sweep(methods, model, params, seed, data_path, levels, eps, replicates,
               resampling, const, pf_const, phi, truth_level, truth_replicates,
               workers, out, fmt):
    data = bench.load_data(data_path)
    config = _config(model, params, levels, eps, replicates, seed, resampling,
                     data.horizon, const, pf_const, phi, truth_level,
                     truth_replicates, workers)
    result = bench.run_study(config, data, methods=methods)
    agg_path = bench.emit(result.rows, fmt, out)
    click.echo(f"{len(result.rows)} rows -> {out} (aggregates {agg_path}); "
               f"wall {result.wall_seconds:.1f}s", err=True)
    click.echo(out)


@cli.command()
@_add_options(_shared)
@_sweep_options
def pf(**kwargs):
    """Particle-filter sweep over the accuracy grid."""
    _run_sweep(("pf",), **kwargs)


@cli.command()
@_add_options(_shared)
@_sweep_options
def mlpf(**kwargs):
    """Multilevel particle-filter sweep over the accuracy grid."""
    _run_sweep(("mlpf",), **kwargs)


@cli.command()
@click.option("--results", "result_paths", multiple=True, required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="result files from pf/mlpf (repeatable)")
@click.option("--cost-basis", type=click.Choice(list(bench.COST_BASES)),
              default="euler", show_default=True)
@click.option("--out", type=click.Path(writable=True), required=True,
              help="rate table destination (figure lands alongside)")
@click.option("--format", "fmt", type=click.Choice(["csv", "json"]),
              default="csv", show_default=True)
@click.option("--figure/--no-figure", default=True, show_default=True)
def rates(result_paths, cost_basis, out, fmt, figure):
    """Fit cost-vs-MSE rates from emitted results and render the report."""
    rows = []
    for path in result_paths:
        rows.extend(bench.parse_rows(path))
    aggregates = bench.aggregate_rows(rows)
    fits = bench.rates_from_aggregates(aggregates, cost_basis=cost_basis)
    if fmt == "csv":
        bench._atomic_write(out, bench._rows_to_csv(fits, bench.RATE_COLUMNS))
    else:
        bench._atomic_write(out, json.dumps(
            {"schema": "pdmp-mlpf/rates-v1", "cost_basis": cost_basis,
             "rates": fits}, indent=1, sort_keys=True) + "\n")
    if figure:
        fig_path = out.rsplit(".", 1)[0] + ".png"
        report.render_rate_figure(aggregates, fits, fig_path,
                                  cost_basis=cost_basis)
        click.echo(f"figure -> {fig_path}", err=True)
    for fit in fits:
        click.echo(f"{fit['model']}/{fit['method']}: "
                   f"cost-vs-MSE rate {fit['rate_cost_vs_mse']:.3f}")


@cli.command("emit-config-template")
@click.option("--model", type=click.Choice(["ml", "ikil"]), default="ml",
              show_default=True)
@click.option("--out", type=click.Path(writable=True), required=True)
def emit_config_template(model, out):
    """Write a parameter file template with the model's table defaults."""
    neuro.save_params_template(out, model)
    click.echo(f"wrote template for {model} to {out}")


def main(argv=None):
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.exceptions.Abort:
        return 130
    except click.exceptions.ClickException as exc:
        exc.show()
        return 2
    except _CONFIG_ERRORS as exc:
        click.echo(f"configuration error: {exc}", err=True)
        return 2
    except BudgetError as exc:
        click.echo(f"budget error: {exc}", err=True)
        return 4
    except _NUMERIC_ERRORS as exc:
        click.echo(f"numeric failure: {exc}", err=True)
        return 3
    except PdmpError as exc:
        click.echo(f"error: {exc}", err=True)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
