import logging
import sys
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import click
from pydantic import ValidationError

from substlab_config import settings

from . import __version__
from .errors import ModelError, from_validation_error
from .orchestrator import Orchestrator
from .schema.report_models import RunManifest, RunParameters


def configure_logging(level: str) -> None:
    logging.basicConfig(
        stream=sys.stderr,
        level=getattr(logging, level.upper(), logging.INFO),
        format="%(asctime)s [%(levelname)s] %(message)s",
    )


def _run(command: str, model: Optional[Path], out: Path, inline: Optional[Dict[str, Any]] = None, **params) -> None:
    try:
        parameters = RunParameters(**{k: v for k, v in params.items() if v is not None})
        manifest = RunManifest(
            command=command,
            model_path=model,
            inline_model=inline,
            out_dir=out,
            parameters=parameters,
        )
    except ValidationError as exc:
        err = from_validation_error(exc)
        click.echo(f"error: {err}", err=True)
        sys.exit(err.exit_code)

    result = Orchestrator().run(manifest)
    if result.status == "success":
        for issue in result.issues:
            click.echo(f"warning: {issue.field}: {issue.message}", err=True)
        for path in result.artifacts:
            click.echo(path)
    else:
        click.echo(f"error: {result.error}", err=True)
    sys.exit(result.exit_code)


def model_options(f):
    f = click.option("--out", "out", type=click.Path(file_okay=False, path_type=Path), default=Path("out"), show_default=True, help="Output directory.")(f)
    f = click.option("--model", "model", type=click.Path(dir_okay=False, path_type=Path), default=None, help="Model JSON file.")(f)
    return f


def budget_options(f):
    f = click.option("--budget", type=int, default=None, help=f"Matrix budget (default {settings.MATRIX_BUDGET}).")(f)
    f = click.option("--state-budget", "state_budget", type=int, default=None, help=f"State budget (default {settings.STATE_BUDGET}).")(f)
    f = click.option("--tol", type=float, default=None, help="Power-iteration tolerance.")(f)
    return f


def _require_model(model: Optional[Path]) -> None:
    if model is None:
        click.echo("error: model: --model is required", err=True)
        sys.exit(ModelError.exit_code)


@click.group()
@click.version_option(__version__, prog_name="substlab")
@click.option("--log-level", default=None, help="Logging level (default from SUBSTLAB_LOG_LEVEL).")
def main(log_level: Optional[str]) -> None:
    """Random substitution systems: invariant states, Gibbs potentials, correlations, primitivity."""
    configure_logging(log_level or settings.LOG_LEVEL)


@main.command()
@model_options
def validate(model, out):
    """Parse and check a model; echo the parsed system."""
    _require_model(model)
    _run("validate", model, out)


@main.command(name="primitivity")
@model_options
@click.option("--nmax", type=int, default=None, help="Depth of the sufficient-condition index formula.")
@budget_options
def primitivity_cmd(model, out, nmax, tol, state_budget, budget):
    """Sufficient primitivity check and brute-force support powers."""
    _require_model(model)
    _run("primitivity", model, out, nmax=nmax, tol=tol, state_budget=state_budget, budget=budget)


@main.command()
@model_options
@click.option("--nmax", type=int, default=None, help="Deepest marginal level.")
@budget_options
def invariant(model, out, nmax, tol, state_budget, budget):
    """Invariant marginal family v_1..v_nmax."""
    _require_model(model)
    _run("invariant", model, out, nmax=nmax, tol=tol, state_budget=state_budget, budget=budget)


@main.command()
@model_options
@click.option("--nmax", type=int, default=None, help="Depth of the compared families.")
@click.option("--ellmax", type=int, default=None, help="Number of operator steps.")
@budget_options
def approx(model, out, nmax, ellmax, tol, state_budget, budget):
    """Approximation scheme from the uniform product measure."""
    _require_model(model)
    _run("approx", model, out, nmax=nmax, ellmax=ellmax, tol=tol, state_budget=state_budget, budget=budget)


@main.command(name="correlations")
@model_options
@click.option("--n", "n_list", type=int, multiple=True, help="Site n of the pair (x_1, x_n); repeatable.")
@budget_options
def correlations_cmd(model, out, n_list, tol, state_budget, budget):
    """Exact pair correlations and the decay exponent."""
    _require_model(model)
    _run("correlations", model, out, n_list=n_list or None, tol=tol, state_budget=state_budget, budget=budget)


@main.command(name="gibbs")
@model_options
@click.option("--ellmax", type=int, default=None, help="Deepest block generation.")
@budget_options
def gibbs_cmd(model, out, ellmax, tol, state_budget, budget):
    """Hierarchical potential, telescoping and conditional checks."""
    _require_model(model)
    _run("gibbs", model, out, ellmax=ellmax, tol=tol, state_budget=state_budget, budget=budget)


def _parse_inline(perm: Tuple[str, ...], weights: Optional[str]) -> Optional[Dict[str, Any]]:
    """--perm 0:01 --perm 1:10 --weights 0.75,0.25 into a twobody model dict."""
    if not perm and weights is None:
        return None
    if not perm or weights is None:
        raise click.UsageError("--perm and --weights go together")
    permutations = {}
    for item in perm:
        symbol, sep, image = item.partition(":")
        if not sep:
            raise click.UsageError(f"--perm expects SYMBOL:IMAGES, got {item!r}")
        permutations[symbol] = image
    try:
        values = [float(w) for w in weights.split(",")]
    except ValueError:
        raise click.UsageError(f"--weights expects comma-separated numbers, got {weights!r}") from None
    return {"twobody": {"alphabet": list(permutations), "permutations": permutations, "weights": values}}


@main.command(name="twobody")
@model_options
@click.option("--perm", multiple=True, help="Inline permutation SYMBOL:IMAGES, one per symbol.")
@click.option("--weights", default=None, help="Inline weights, comma separated.")
@click.option("--n", "n_list", type=int, multiple=True, help="Sites of the pair ratio table; repeatable.")
@click.option("--ellmax", type=int, default=None, help="Deepest closed-form level checked.")
@budget_options
def twobody_cmd(model, out, perm, weights, n_list, ellmax, tol, state_budget, budget):
    """Closed-form invariant state and exact pair ratios of a permutation model."""
    inline = _parse_inline(perm, weights)
    if inline is None:
        _require_model(model)
    _run(
        "twobody", model, out, inline,
        n_list=n_list or None, ellmax=ellmax, tol=tol, state_budget=state_budget, budget=budget,
    )


@main.command(name="simulate")
@model_options
@click.option("--seed", type=int, default=None, help="Base seed.")
@click.option("--samples", type=int, default=None, help="Independent samples.")
@click.option("--window", type=int, default=None, help="Output prefix length.")
@click.option("--nmax", type=int, default=None, help="Deepest compared marginal.")
@click.option("--n", "n_list", type=int, multiple=True, help="Pair sites; repeatable.")
@click.option("--write-samples", is_flag=True, default=False, help="Also write every sample to CSV.")
@budget_options
def simulate_cmd(model, out, seed, samples, window, nmax, n_list, write_samples, tol, state_budget, budget):
    """Monte Carlo forward dynamics against exact statistics."""
    _require_model(model)
    _run(
        "simulate", model, out,
        seed=seed, samples=samples, window=window, nmax=nmax, n_list=n_list or None,
        write_samples=write_samples, tol=tol, state_budget=state_budget, budget=budget,
    )


if __name__ == "__main__":
    main()
