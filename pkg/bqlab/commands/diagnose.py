import typer
from pathlib import Path

import numpy as np

from bqlab.cli import cli
from bqlab.constants import DIAGNOSE_CSV, DIAGNOSE_LEMMAS_CSV
from bqlab.diagnostics import DiagnosticsRecord
from bqlab.errors import InvariantFailure
from bqlab.experiment import diagnose as diagnose_run
from bqlab.render import (
    build_line_plot,
    format_flag,
    format_number,
    render,
    render_table,
)

RESIDUALS = ("residual_energy", "residual_lemma31", "residual_epp")


def _plots(records: list[DiagnosticsRecord]) -> list[str]:
    t = [r.t for r in records]
    plots = [
        build_line_plot(
            np.maximum.accumulate([r.max_curvature for r in records]),
            t,
            x_label="t",
            title="running max |curvature|",
        )
    ]
    for name in RESIDUALS:
        points = [(r.t, getattr(r, name)) for r in records if getattr(r, name) > 0]
        if points:
            x, y = zip(*points)
            plots.append(build_line_plot(y, x, x_label="t", title=name, log_y=True))
    return plots


@cli.command("diagnose")
async def diagnose(
    run_dir: Path = typer.Argument(
        ...,
        help="The run directory written by `simulate` with snapshots enabled.",
    ),
    plot: bool = typer.Option(
        True,
        "--plot/--no-plot",
        help="Plot the running curvature maximum and the identity residuals.",
    ),
):
    """
    Recompute diagnostics and residuals from the snapshots of a run directory.
    """
    outcome = await diagnose_run(run_dir)
    records = outcome.records

    def worst(name: str) -> str:
        values = [getattr(r, name) for r in records if np.isfinite(getattr(r, name))]
        return format_number(max(values)) if values else format_number(float("nan"))

    render_table(
        columns=["Snapshots", "t", "max |curvature|", *RESIDUALS],
        rows=[[
            str(len(records)),
            f"{format_number(records[0].t, 4)} .. {format_number(records[-1].t, 4)}",
            format_number(max(r.max_curvature for r in records)),
            *(worst(name) for name in RESIDUALS),
        ]],
        align="right",
        title="Diagnostics",
    )

    bound = outcome.dissipation_bound
    render_table(
        columns=["Integral", "Final", "Plateau", "Constant", ""],
        rows=[
            [
                "dissipation",
                format_number(bound.final_dissipation),
                format_number(bound.plateau_dissipation),
                format_number(bound.constant_dissipation),
                format_flag(bound.monotone_dissipation and bound.finite),
            ],
            [
                "H^1",
                format_number(bound.final_hdot1),
                format_number(bound.plateau_hdot1),
                format_number(bound.constant_hdot1),
                format_flag(bound.monotone_hdot1 and bound.finite),
            ],
        ],
        align="right",
        title="Dissipation bound",
    )

    if outcome.low_dissipation:
        render_table(
            columns=["n", "t_n", "Value", "Mean", "Bound", "max |curvature|", "Extent", ""],
            rows=[
                [
                    str(entry.index),
                    format_number(entry.t, 4),
                    format_number(entry.value),
                    format_number(entry.window_mean),
                    format_number(entry.chebyshev_bound),
                    format_number(entry.max_curvature),
                    format_number(entry.horizontal_extent),
                    format_flag(entry.within_bound),
                ]
                for entry in outcome.low_dissipation
            ],
            align="right",
            title="Low dissipation times",
        )

    if outcome.reports:
        render_table(
            columns=["At", "Lemma", "lhs", "Bound", "rhs", ""],
            rows=[
                [
                    report.shape,
                    report.lemma,
                    format_number(report.lhs),
                    format_number(report.predicted_lower_bound),
                    format_number(report.rhs_h1 + report.rhs_l2),
                    format_flag(report.passed),
                ]
                for report in outcome.reports
            ],
            align="right",
            title="Lemmas",
        )

    for message in outcome.skipped:
        render(f"[yellow]Skipped:[/yellow] {message}")
    for message in outcome.violations:
        render(f"[yellow]Tolerance:[/yellow] {message}")

    if plot and len(records) > 1:
        for figure in _plots(records):
            print(figure)

    render(
        f"Wrote [bold]{run_dir / DIAGNOSE_CSV}[/] and [bold]{run_dir / DIAGNOSE_LEMMAS_CSV}[/]"
    )

    if outcome.failures:
        raise InvariantFailure("diagnosis found invariant failures", outcome.failures)
