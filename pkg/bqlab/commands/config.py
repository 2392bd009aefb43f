"""
Commands for inspecting run and lemma sweep configurations.
"""
import typer
from pathlib import Path

import orjson

from bqlab.base import AsyncTyper
from bqlab.cli import cli
from bqlab.config import LemmaSweepConfig, format_config, load_config
from bqlab.render import render, render_syntax


config_cli = AsyncTyper(
    name="config",
    short_help="Commands for inspecting configuration files.",
    help=__doc__
)
cli.add_typer(config_cli)


@config_cli.command()
async def show(
    config_file: Path = typer.Argument(
        ...,
        help="The configuration file to show."
    ),
    format: str = typer.Option(
        "keyvalue",
        "--format",
        "-f",
        help="The format to render the configuration as, `keyvalue` or `json`."
    ),
    raw: bool = typer.Option(
        False,
        "--raw",
        help="Print the configuration without syntax highlighting."
    )
):
    """
    Show the fully validated configuration with every default filled in.

    Specify the format with the `--format` option. Defaults to `keyvalue`, the
    form written to `config.echo`. Renders the configuration as a syntax
    highlighted string if `--raw` is not specified.
    """
    config = load_config(config_file)

    match format:
        case "keyvalue":
            output, language = format_config(config), "ini"
        case "json":
            output = orjson.dumps(
                config.model_dump(mode="json"), option=orjson.OPT_INDENT_2
            ).decode()
            language = "json"
        case _:
            raise ValueError(f"Unsupported format `{format}`, use `keyvalue` or `json`.")

    if raw:
        print(output, end="")
    else:
        render_syntax(output, language)


@config_cli.command()
async def check(
    config_file: Path = typer.Argument(
        ...,
        help="The configuration file to validate."
    ),
):
    """
    Validate a configuration file. Exits 1 naming the key and line of the first problem.
    """
    config = load_config(config_file)
    kind = "lemma sweep" if isinstance(config, LemmaSweepConfig) else "run"
    render(f"[green]OK[/green]: [bold]{config_file}[/] is a valid {kind} configuration")
