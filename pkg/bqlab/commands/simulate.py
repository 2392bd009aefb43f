import typer
from datetime import timedelta
from pathlib import Path
from typing import Optional

from humanize import precisedelta

from bqlab.cli import cli
from bqlab.config import RunConfig, load_config
from bqlab.constants import EXIT_OK
from bqlab.experiment import RunOutcome, run
from bqlab.render import (
    build_result_panel,
    build_tree,
    format_number,
    render,
    track_progress,
)
from bqlab.utils import exit_with_code


def _summary(outcome: RunOutcome) -> dict:
    summary: dict = {
        "Directory": str(outcome.directory),
        "Reached": f"t={format_number(outcome.t)} in {outcome.steps} steps",
        "Elapsed": precisedelta(timedelta(seconds=outcome.elapsed), minimum_unit="milliseconds"),
        "Records": len(outcome.records),
    }
    if outcome.growth is not None:
        summary["Growth"] = {
            "Curvature": f"{format_number(outcome.growth.kappa_factor, 4)}x",
            "Extent": f"{format_number(outcome.growth.extent_factor, 4)}x",
        }
    if (bound := outcome.dissipation_bound) is not None:
        summary["Dissipation bound"] = {
            "Plateau": f"{format_number(bound.plateau_dissipation)} (H^1 {format_number(bound.plateau_hdot1)})",
            "Constant": f"{format_number(bound.constant_dissipation)} (H^1 {format_number(bound.constant_hdot1)})",
            "Monotone": bound.monotone_dissipation and bound.monotone_hdot1,
        }
    if outcome.low_dissipation:
        summary["Low dissipation times"] = [
            f"t={format_number(entry.t, 4)}" for entry in outcome.low_dissipation
        ]
    if outcome.violations:
        summary["Tolerance violations"] = outcome.violations
    if outcome.failures:
        summary["Invariant failures"] = outcome.failures
    if outcome.message and outcome.exit_code != EXIT_OK:
        summary["Message"] = outcome.message
    return summary


@cli.command("simulate")
async def simulate(
    config_file: Path = typer.Argument(
        ...,
        help="The run configuration file.",
    ),
    output: Optional[Path] = typer.Option(
        None,
        "--output",
        "-o",
        help="The run directory. Defaults to `output.directory` from the config.",
    ),
    show_progress: bool = typer.Option(
        True,
        "--show-progress/--disable-progress",
        help="Show the progress bar while simulating.",
    ),
):
    """
    Simulate a density patch from t=0 to experiment.t_end and write the run directory.
    """
    config = load_config(config_file, RunConfig)
    directory = output or config.output.directory
    t_end = config.experiment.t_end

    if show_progress:
        with track_progress() as progress:
            task_id = progress.add_task(
                f"Simulating [bold]{directory}[/]...", total=t_end or 1.0
            )
            outcome = await run(
                config,
                directory,
                on_progress=lambda t, _: progress.update(task_id, completed=t),
            )
    else:
        outcome = await run(config, directory)

    color = "green" if outcome.exit_code == EXIT_OK else "red"
    render(
        build_result_panel(
            build_tree(_summary(outcome), label=f"[{color}]{outcome.status.upper()}"),
            subtitle=f"exit {outcome.exit_code}",
        )
    )
    exit_with_code(outcome.exit_code)
