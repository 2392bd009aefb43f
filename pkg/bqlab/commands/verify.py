import typer
from pathlib import Path
from typing import Optional

from bqlab.cli import cli
from bqlab.config import LemmaSweepConfig, load_config
from bqlab.errors import InvariantFailure
from bqlab.experiment import pestov_ionin_path, verify_lemmas
from bqlab.render import (
    format_flag,
    format_number,
    render,
    render_table,
)


@cli.command("verify-lemmas")
async def verify(
    config_file: Path = typer.Argument(
        ...,
        help="The lemma sweep configuration file.",
    ),
    output: Optional[Path] = typer.Option(
        None,
        "--output",
        "-o",
        help="The report CSV. Defaults to `lemmas.output` from the config.",
    ),
):
    """
    Check the curvature and perimeter lemmas and the Pestov-Ionin bound on a sweep of shapes.
    """
    config = load_config(config_file, LemmaSweepConfig)
    outcome = await verify_lemmas(config, output)

    render_table(
        columns=["Shape", "Lemma", "Omega", "Scale", "lhs", "Bound", "rhs", "Ratio", ""],
        rows=[
            [
                report.shape,
                report.lemma,
                report.omega_choice,
                format_number(report.scale, 4),
                format_number(report.lhs),
                format_number(report.predicted_lower_bound),
                format_number(report.rhs_h1 + report.rhs_l2),
                format_number(report.ratio, 4),
                format_flag(report.passed),
            ]
            for report in outcome.reports
        ],
        align="right",
        title="Lemma reports",
    )
    render_table(
        columns=["Shape", "r", "max |k|", "r * max |k|", ""],
        rows=[
            [
                report.shape,
                format_number(report.inscribed_radius, 4),
                format_number(report.max_curvature, 4),
                format_number(report.product, 4),
                format_flag(report.passed),
            ]
            for report in outcome.pestov_ionin
        ],
        align="right",
        title="Pestov-Ionin",
    )

    assert outcome.output is not None
    render(
        f"Wrote [bold]{outcome.output}[/] and [bold]{pestov_ionin_path(outcome.output)}[/]"
    )

    if outcome.failed:
        raise InvariantFailure(f"{len(outcome.failed)} checks failed", outcome.failed)
