import logging
import sys
from functools import wraps
from typing import Callable

import click
from pydantic import ValidationError
from rich.logging import RichHandler

from services.attention_diagnose import hess_flow
from services.attention_diagnose.commons import constants as C
from services.attention_diagnose.commons.errors import (
    DimensionGuardError, DivergenceError, InvalidConfigError, MissingArtifactError, NonFiniteError,
    OverlappingSelectionError, UnknownGroupError
)
from services.attention_diagnose.diagnosis.curvature import render_curvature_table

logger = logging.getLogger("hessflow")

_CONFIG_ERRORS = (ValidationError, InvalidConfigError, UnknownGroupError, OverlappingSelectionError,
                  DimensionGuardError)
_DIVERGENCE_ERRORS = (DivergenceError, NonFiniteError)


def exit_code_for(error: Exception) -> int:
    """Map an exception to the exit-code contract of the command line."""
    if isinstance(error, _CONFIG_ERRORS):
        return C.EXIT_CONFIG
    if isinstance(error, _DIVERGENCE_ERRORS):
        return C.EXIT_DIVERGENCE
    if isinstance(error, (MissingArtifactError, FileNotFoundError)):
        return C.EXIT_MISSING
    return C.EXIT_FAILURE


def guarded(command: Callable) -> Callable:
    @wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except Exception as e:
            code = exit_code_for(e)
            if code == C.EXIT_FAILURE:
                logger.exception("unexpected failure")
            click.echo(f"error: {e}", err=True)
            sys.exit(code)
    return wrapper


config_argument = click.argument("config", type=click.Path(exists=True, dir_okay=False))
checkpoint_option = click.option("--checkpoint", type=click.Path(dir_okay=False), default=None,
                                 help="Checkpoint file; defaults to the one in the output directory.")
progress_option = click.option("--progress/--no-progress", default=False, help="Show progress bars.")


@click.group()
@click.option("--log-level", default="WARNING", show_default=True,
              type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False))
def cli(log_level: str) -> None:
    """HessFlow: Hessian-based fault diagnosis for small attention models."""
    logging.basicConfig(level=log_level.upper(), format="%(message)s", datefmt="[%X]",
                        handlers=[RichHandler(show_path=False)], force=True)


@cli.command()
@config_argument
@progress_option
@guarded
def train(config: str, progress: bool) -> None:
    """Train the configured model and write its checkpoint and training trace."""
    trace = hess_flow.train(hess_flow.load_config(config), progress)
    if trace.epochs:
        last = trace.epochs[-1]
        click.echo(f"epoch {last.epoch}: loss {last.loss:.6f}, accuracy {last.accuracy}")


@cli.command()
@config_argument
@checkpoint_option
@progress_option
@guarded
def curvature(config: str, checkpoint: str, progress: bool) -> None:
    """Classify the curvature of every attention group."""
    table = hess_flow.curvature(hess_flow.load_config(config), checkpoint, progress)
    click.echo(render_curvature_table(table.verdicts), nl=False)


@cli.command()
@config_argument
@checkpoint_option
@click.option("--workers", default=1, show_default=True, type=click.IntRange(min=1))
@progress_option
@guarded
def perturb(config: str, checkpoint: str, workers: int, progress: bool) -> None:
    """Run the perturbation sweeps and write one CSV row per trial."""
    trials = hess_flow.perturb(hess_flow.load_config(config), checkpoint, workers, progress)
    click.echo(f"{len(trials)} trials, {sum(t.diverged for t in trials)} diverged")


@cli.command()
@config_argument
@checkpoint_option
@guarded
def interact(config: str, checkpoint: str) -> None:
    """Measure off-diagonal Hessian couplings between the selected parameters."""
    report = hess_flow.interact(hess_flow.load_config(config), checkpoint)
    if report.top is not None:
        click.echo(f"top coupling ({report.top.a}, {report.top.b}): {report.top.normalized:.4f}")


@cli.command()
@config_argument
@checkpoint_option
@progress_option
@guarded
def intervene(config: str, checkpoint: str, progress: bool) -> None:
    """Retrain with a reduced learning rate on one group and compare couplings."""
    report = hess_flow.intervene(hess_flow.load_config(config), checkpoint, progress)
    click.echo(f"coupling {report.coupling_before:.4f} -> {report.coupling_after}")
    if report.incomplete:
        click.echo(f"error: intervention incomplete: {report.detail}", err=True)
        sys.exit(C.EXIT_DIVERGENCE)


@cli.command()
@click.argument("output_dir", type=click.Path(file_okay=False))
@guarded
def report(output_dir: str) -> None:
    """Assemble the report files of a run into one summary."""
    hess_flow.report(output_dir)
    click.echo(f"summary written to {output_dir}/{C.SUMMARY_FILE}")


@cli.command()
def defaults() -> None:
    """Print the complete default configuration."""
    click.echo(hess_flow.defaults())


@cli.command()
@guarded
def selftest() -> None:
    """Check gradients and Hessian-vector products against finite differences."""
    results = hess_flow.selftest()
    for name, ok in results.items():
        click.echo(f"{'ok  ' if ok else 'FAIL'} {name}")
    if not all(results.values()):
        sys.exit(C.EXIT_FAILURE)


if __name__ == "__main__":
    cli()
