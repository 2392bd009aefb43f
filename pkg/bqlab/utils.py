import asyncio
import logging
import os
import typer
from functools import partial, wraps
from inspect import iscoroutinefunction
from pathlib import Path
from typing import (
    Any,
    Callable,
    Coroutine,
    Iterable,
    ParamSpec,
    Type,
    TypeVar,
    cast,
)
from rich.logging import RichHandler

from bqlab.render import render
from bqlab.constants import DEV_MODE, WORKERS

T = TypeVar("T")
P = ParamSpec("P")
R = TypeVar("R")


def is_dev_mode() -> bool:
    return DEV_MODE


def set_dev_mode(dev_mode: bool = False):
    """
    Set the development mode. In development mode errors propagate with
    their traceback instead of being rendered.

    :param dev_mode: Whether or not to run in development mode
    :type dev_mode: bool
    """
    global DEV_MODE
    DEV_MODE = dev_mode


def get_workers() -> int:
    """
    Worker threads for the FFT backend and the width of thread fan-outs.

    :returns: The configured worker count, -1 meaning every core
    :rtype: int
    """
    return WORKERS


def set_workers(workers: int = 1):
    """
    :param workers: Positive worker count, or -1 for every available core
    :type workers: int
    :raises ValueError: On zero or any other negative count
    """
    if workers == 0 or workers < -1:
        raise ValueError(f"workers must be positive or -1, got {workers}")

    global WORKERS
    WORKERS = workers


def setup_logging(level: str = "WARNING"):
    """
    Route the `bqlab` logger through rich, detached from the root logger.

    :param level: The log level name
    :type level: str
    """
    logger = logging.getLogger("bqlab")
    logger.handlers.clear()
    logger.addHandler(
        RichHandler(
            show_path=is_dev_mode(),
            rich_tracebacks=is_dev_mode(),
            markup=False,
        )
    )
    logger.setLevel(level.upper())
    logger.propagate = False


async def run_in_thread(fn: Callable[..., T], *args, **kwargs) -> T:
    """
    Run a blocking callable in the default thread pool.
    """
    return await asyncio.get_running_loop().run_in_executor(
        None, partial(fn, *args, **kwargs)
    )


async def gather_limited(
    limit: int,
    callables: Iterable[tuple[Callable[..., T], tuple]],
) -> list[T]:
    """
    Run blocking callables in threads with at most `limit` in flight.

    :param limit: Maximum number of concurrent calls, -1 for one per core
    :type limit: int
    :param callables: Pairs of (callable, args)
    :returns: The results in submission order
    """
    semaphore = asyncio.Semaphore(limit if limit > 0 else (os.cpu_count() or 1))

    async def _run(fn: Callable[..., T], args: tuple) -> T:
        async with semaphore:
            return await run_in_thread(fn, *args)

    return await asyncio.gather(*(_run(fn, args) for fn, args in callables))


def to_sync(func: Callable[P, Coroutine[Any, Any, R]] | Callable[P, R]) -> Callable[P, R]:
    """
    Wrap a coroutine function so it runs to completion in a fresh event loop.
    Plain functions are returned unchanged.

    :param func: The function to convert
    :return: A sync function
    """
    if not iscoroutinefunction(getattr(func, "__wrapped__", func)):
        return cast(Callable[P, R], func)

    @wraps(func)
    def wrapper(*args: P.args, **kwargs: P.kwargs) -> R:
        return asyncio.run(func(*args, **kwargs))  # type: ignore[arg-type]
    return wrapper


def exit_with_code(code: int):
    """
    :param code: The process exit code
    :type code: int
    :raises typer.Exit: Always
    """
    raise typer.Exit(code=code)


def catch_exceptions(
    exceptions: tuple[Type[BaseException], ...] | Type[BaseException] = Exception,
):
    """
    Decorator turning an escaping exception into a rendered error and the
    exit status the exception carries. `typer.Exit` passes through.

    :param exceptions: The exceptions to catch
    :type exceptions: tuple
    """
    def decorator(func):
        @wraps(func)
        def wrapper(*args, **kwargs):
            try:
                return func(*args, **kwargs)
            except typer.Exit:
                raise
            except exceptions as e:
                handle_error(e)
        return wrapper
    return decorator


def handle_error(e: BaseException):
    if is_dev_mode():
        raise e

    exit_with_error(str(e), code=getattr(e, "status", None) or 1)


def exit_with_error(message: str, code: int = 1):
    """
    Render an error message and exit.

    :param message: The error message to display
    :type message: str
    :param code: The exit code to use
    :type code: int
    """
    render(f"[red]Error:[/red] {message}", highlight=False)
    exit_with_code(code)


def resolve_path(file_path: Path, search_dirs: list[Path] = []) -> Path:
    """
    Absolute path to an existing file, trying `search_dirs` before the
    working directory for relative paths.

    :param file_path: The path to resolve
    :type file_path: Path
    :param search_dirs: Directories to search
    :type search_dirs: list[Path]
    :returns: The absolute path to the file
    :rtype: Path
    :raises FileNotFoundError: If the file exists in none of the places
    """
    if file_path.is_absolute() and file_path.exists():
        return file_path

    for directory in search_dirs:
        if (candidate := directory / file_path).exists():
            return candidate.resolve()

    if (resolved := file_path.resolve()).exists():
        return resolved

    raise FileNotFoundError(f"`{file_path}` does not exist.")


def set_nested_value(d: dict, keys: list[str], value: Any):
    """
    Set `value` in a nested dict following `keys`, creating
    intermediate dicts as needed.
    """
    for key in keys[:-1]:
        d = d.setdefault(key, {})
    d[keys[-1]] = value


def flatten_dict(data: dict, prefix: str = "") -> dict[str, Any]:
    """
    Flatten a nested dict into dotted keys, the inverse of `set_nested_value`.
    """
    flat: dict[str, Any] = {}

    for key, value in data.items():
        dotted = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(flatten_dict(value, prefix=f"{dotted}."))
        else:
            flat[dotted] = value

    return flat
