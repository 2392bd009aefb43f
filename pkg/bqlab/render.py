import plotext as plt
from typing import Any, Literal, Sequence
from rich import print as pprint, box
from rich.console import Console, RenderableType
from rich.panel import Panel
from rich.syntax import Syntax
from rich.align import Align
from rich.progress import (
    Progress,
    SpinnerColumn,
    TextColumn,
    BarColumn,
    TimeElapsedColumn,
)
from rich.table import Table
from rich.tree import Tree

from bqlab.constants import HIGHLIGHT

Alignment = Literal["left", "center", "right"]


def format_number(value: float, digits: int = 6) -> str:
    """
    Format a float for tables: general format, `nan` dimmed.
    """
    if value != value:
        return "[dim]nan"
    return f"{value:.{digits}g}"


def format_flag(passed: bool) -> str:
    return "[green]pass" if passed else "[red]fail"


def render(renderable, *args, highlight: bool = False, **kwargs):
    console = Console()
    console.print(renderable, *args, highlight=highlight, **kwargs)


def render_table(columns: list[str], rows: list[list[str]], align: Alignment = "center", **kwargs):
    render(build_table(columns=columns, rows=rows, align=align, **kwargs))


def render_syntax(text: str, language: str = "ini", theme: str = "dracula"):
    render(
        Syntax(
            text,
            language,
            line_numbers=True,
            background_color="default",
            theme=theme
        )
    )


def build_result_panel(content: RenderableType, subtitle: str = "") -> Panel:
    return Panel(
        Align(content, align="left"),
        title=f"[{HIGHLIGHT}]Result",
        subtitle=f"[#222222]{subtitle}" if subtitle else "",
        box=box.ROUNDED,
        padding=(1, 2),
    )


def build_table(
    columns: Sequence[str],
    rows: Sequence[Sequence[str]],
    align: Alignment = "left",
    title: str | None = None,
) -> Table:
    table = Table(title=title, header_style="bold", box=box.SIMPLE_HEAD)
    for column in columns:
        table.add_column(column, justify=align)
    for row in rows:
        table.add_row(*row)
    return table


def build_tree(data: dict | list, label: str | None = None) -> Tree:
    """
    Nested summary tree: dict keys become bold branches, lists are counted.
    """
    def add(tree: Tree, data: Any):
        if isinstance(data, dict):
            for key, value in data.items():
                if isinstance(value, dict):
                    add(tree.add(f"[bold]{key}"), value)
                elif isinstance(value, list):
                    add(tree.add(f"[bold]{key}[/] [dim]({len(value)} items)"), value)
                else:
                    tree.add(f"[bold]{key}[/]: {value}")
        elif isinstance(data, list):
            for item in data:
                add(tree, item)
        else:
            tree.add(str(data))

    tree = Tree(f"[bold]{label}") if label else Tree("", hide_root=False)
    add(tree, data)
    return tree


def track_progress(transient: bool = True) -> Progress:
    """
    Spinner, description, a bar over simulated time and wall-clock elapsed.
    """
    return Progress(
        SpinnerColumn(),
        TextColumn("[progress.description]{task.description}"),
        BarColumn(),
        TextColumn("t={task.completed:.4g}/{task.total:.4g}"),
        TimeElapsedColumn(),
        transient=transient,
        expand=True
    )


def build_line_plot(
    y: Sequence[float],
    x: Sequence[float],
    x_label: str = "",
    title: str = "",
    log_y: bool = False,
) -> str:
    plt.clear_figure()
    plt.title(title)
    plt.xlabel(x_label)
    plt.canvas_color("default")
    plt.axes_color("default")
    plt.ticks_color("default")
    if log_y:
        plt.yscale("log")
    plt.plot(list(x), list(y))
    return plt.build()


__all__ = (
    "pprint",
    "render",
    "render_table",
    "render_syntax",
    "format_number",
    "format_flag",
    "build_result_panel",
    "build_table",
    "build_tree",
    "build_line_plot",
    "track_progress",
)
