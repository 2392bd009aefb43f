import click
import typer

from bqlab import __version__
from bqlab.base import AsyncTyper
from bqlab.constants import ENV_PREFIX, EXIT_USAGE
from bqlab.render import pprint
from bqlab.utils import (
    exit_with_code,
    set_dev_mode,
    set_workers,
    setup_logging,
)

cli = AsyncTyper(name="bqlab")


def _show_version(show: bool):
    if show:
        pprint("bqlab version:", __version__)
        exit_with_code(0)


@cli.callback()
async def entrypoint(
    version: bool = typer.Option(
        False,
        "--version",
        "-v",
        help="Show the bqlab version and exit.",
        callback=_show_version,
        is_eager=True,
    ),
    dev_mode: bool = typer.Option(
        False,
        "--dev",
        help="Run bqlab in development mode, errors propagate with tracebacks.",
        envvar=f"{ENV_PREFIX}__DEV_MODE",
    ),
    workers: int = typer.Option(
        1,
        "--workers",
        "-w",
        envvar=f"{ENV_PREFIX}__WORKERS",
        help="FFT worker threads and the width of diagnostic and lemma fan-outs. "
             "Use -1 for every core.",
    ),
    log_level: str = typer.Option(
        "WARNING",
        "--log-level",
        envvar=f"{ENV_PREFIX}__LOG_LEVEL",
        help="The log level of the bqlab logger.",
    ),
):
    """
    A numerical laboratory for the 2D Boussinesq equations with a
    mirror-symmetric density patch.
    """
    set_dev_mode(dev_mode)
    set_workers(workers)
    setup_logging(log_level)


def main():
    """
    Console script entrypoint. Click reports usage errors with status 2,
    which bqlab reserves for numerical aborts, so they are remapped to 1.
    """
    try:
        code = cli(standalone_mode=False)
    except click.exceptions.ClickException as e:
        e.show()
        raise SystemExit(EXIT_USAGE)
    except click.exceptions.Abort:
        raise SystemExit(EXIT_USAGE)

    raise SystemExit(code or 0)
