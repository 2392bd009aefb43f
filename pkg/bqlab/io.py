"""
On-disk formats: contour snapshots, BQP1 field snapshots, CSV tables and the
run status file, plus the single async writer that owns a run directory.
"""
import csv
import io
import logging
from pathlib import Path
from typing import Any, Iterable, Sequence

import aiofiles
import numpy as np
import orjson

from bqlab.constants import (
    CONFIG_ECHO,
    DIAGNOSTICS_CSV,
    SNAPSHOT_DIR,
    SNAPSHOT_HEADER_BYTES,
    SNAPSHOT_MAGIC,
    STATUS_FILE,
)
from bqlab.contour import Contour
from bqlab.errors import FormatError
from bqlab.spectral import Grid, RealField

logger = logging.getLogger(__name__)

FIELD_DTYPE = np.dtype("<f8")
EXTENT_TOLERANCE = 1e-9


# Contours

def format_contour(contour: Contour, t: float) -> str:
    lines = [f"t={t!r}"]
    lines.extend(f"{float(x1)!r},{float(x2)!r}" for x1, x2 in contour.markers)
    return "\n".join(lines) + "\n"


def parse_points(text: str, path: Path | str | None = None) -> tuple[float | None, np.ndarray]:
    """
    Parse an ``x1,x2`` point list with an optional leading ``t=<value>`` line.

    :raises FormatError: Naming the offending line
    """
    t: float | None = None
    points: list[tuple[float, float]] = []

    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("t="):
            if points or t is not None:
                raise FormatError("the t= header must come first", path, number)
            try:
                t = float(line[2:])
            except ValueError:
                raise FormatError(f"invalid time `{line[2:]}`", path, number)
            continue

        parts = line.split(",")
        if len(parts) != 2:
            raise FormatError(f"expected `x1,x2`, got `{line}`", path, number)
        try:
            x1, x2 = float(parts[0]), float(parts[1])
        except ValueError:
            raise FormatError(f"invalid coordinates `{line}`", path, number)
        if not (np.isfinite(x1) and np.isfinite(x2)):
            raise FormatError("coordinates must be finite", path, number)
        points.append((x1, x2))

    if len(points) < 3:
        raise FormatError(f"expected at least 3 points, got {len(points)}", path)

    return t, np.array(points, dtype=float)


def parse_contour(text: str, path: Path | str | None = None) -> tuple[float | None, Contour]:
    t, points = parse_points(text, path)
    try:
        return t, Contour.from_points(points)
    except ValueError as e:
        raise FormatError(str(e), path)


def read_contour(path: Path) -> tuple[float | None, Contour]:
    return parse_contour(_read_text(path), path)


def read_points(path: Path) -> np.ndarray:
    return parse_points(_read_text(path), path)[1]


def write_contour(path: Path, contour: Contour, t: float):
    path.write_text(format_contour(contour, t), encoding="utf-8")


def _read_text(path: Path) -> str:
    try:
        return path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as e:
        raise FormatError(f"cannot read file: {e}", path)


# Fields

def encode_field(field: RealField, t: float) -> bytes:
    """
    64-byte ASCII header ``BQP1 nx ny Lx Ly t`` padded with spaces and ending
    in a newline, then nx*ny little-endian float64 values in (x1, x2) order.
    Extents carry 10 significant digits, the time is exact.
    """
    grid = field.grid
    header = f"{SNAPSHOT_MAGIC} {grid.nx} {grid.ny} {grid.lx:.10g} {grid.ly:.10g} {t!r}"
    if len(header) >= SNAPSHOT_HEADER_BYTES:
        raise FormatError(f"snapshot header does not fit in {SNAPSHOT_HEADER_BYTES} bytes: {header}")

    padded = header.ljust(SNAPSHOT_HEADER_BYTES - 1) + "\n"
    return padded.encode("ascii") + field.values.astype(FIELD_DTYPE).tobytes(order="C")


def decode_field(
    data: bytes,
    grid: Grid | None = None,
    path: Path | str | None = None,
) -> tuple[float, RealField]:
    """
    Decode a BQP1 snapshot.

    :param data: Raw file contents
    :param grid: When given, the header must describe this grid and the field is placed on it
    :param path: Used in error messages
    :raises FormatError: On a bad magic, header, size or grid mismatch
    """
    if len(data) < SNAPSHOT_HEADER_BYTES:
        raise FormatError("file is shorter than the snapshot header", path)

    try:
        header = data[:SNAPSHOT_HEADER_BYTES].decode("ascii").split()
    except UnicodeDecodeError:
        raise FormatError("snapshot header is not ASCII", path)

    if not header or header[0] != SNAPSHOT_MAGIC:
        raise FormatError(f"bad magic, expected {SNAPSHOT_MAGIC}", path)
    if len(header) != 6:
        raise FormatError("snapshot header needs `BQP1 nx ny Lx Ly t`", path)

    try:
        nx, ny = int(header[1]), int(header[2])
        lx, ly, t = float(header[3]), float(header[4]), float(header[5])
    except ValueError:
        raise FormatError("malformed snapshot header", path)

    expected = SNAPSHOT_HEADER_BYTES + nx * ny * FIELD_DTYPE.itemsize
    if len(data) != expected:
        raise FormatError(f"expected {expected} bytes for a {nx}x{ny} field, got {len(data)}", path)

    if grid is None:
        try:
            grid = Grid(nx=nx, ny=ny, lx=lx, ly=ly)
        except ValueError as e:
            raise FormatError(str(e), path)
    elif (
        (nx, ny) != (grid.nx, grid.ny)
        or not np.isclose(lx, grid.lx, rtol=EXTENT_TOLERANCE, atol=0)
        or not np.isclose(ly, grid.ly, rtol=EXTENT_TOLERANCE, atol=0)
    ):
        raise FormatError(
            f"snapshot is {nx}x{ny} on [{lx:g}, {ly:g}], "
            f"expected {grid.nx}x{grid.ny} on [{grid.lx:g}, {grid.ly:g}]",
            path,
        )

    values = np.frombuffer(data, dtype=FIELD_DTYPE, offset=SNAPSHOT_HEADER_BYTES)
    try:
        return t, RealField(grid, values.reshape(nx, ny).astype(float))
    except ValueError as e:
        raise FormatError(str(e), path)


def read_field(path: Path, grid: Grid | None = None) -> tuple[float, RealField]:
    try:
        data = path.read_bytes()
    except OSError as e:
        raise FormatError(f"cannot read file: {e}", path)
    return decode_field(data, grid, path)


def write_field(path: Path, field: RealField, t: float):
    path.write_bytes(encode_field(field, t))


# Tables

def format_cell(value: Any) -> str:
    match value:
        case bool() | np.bool_():
            return "true" if value else "false"
        case int() | np.integer():
            return str(int(value))
        case float() | np.floating():
            return repr(float(value))
        case _:
            return str(value)


def format_rows(rows: Iterable[Sequence[Any]], columns: Sequence[str] | None = None) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    if columns is not None:
        writer.writerow(columns)
    writer.writerows([format_cell(v) for v in row] for row in rows)
    return buffer.getvalue()


def read_table(path: Path) -> list[dict[str, str]]:
    try:
        with path.open(newline="", encoding="utf-8") as f:
            return list(csv.DictReader(f))
    except OSError as e:
        raise FormatError(f"cannot read file: {e}", path)


def read_status(path: Path) -> dict[str, Any]:
    try:
        return orjson.loads(path.read_bytes())
    except OSError as e:
        raise FormatError(f"cannot read file: {e}", path)
    except orjson.JSONDecodeError as e:
        raise FormatError(f"invalid status file: {e}", path)


def encode_status(status: dict[str, Any]) -> bytes:
    return orjson.dumps(
        status,
        option=orjson.OPT_INDENT_2 | orjson.OPT_SORT_KEYS | orjson.OPT_SERIALIZE_NUMPY,
    )


def snapshot_paths(directory: Path, index: int) -> tuple[Path, Path, Path]:
    """Contour, rho and omega snapshot paths for output `index`."""
    base = directory / SNAPSHOT_DIR
    return (
        base / f"contour_{index:06d}.txt",
        base / f"rho_{index:06d}.bqp",
        base / f"omega_{index:06d}.bqp",
    )


class RunWriter:
    """
    The only writer of a run directory. Diagnostics rows are appended and
    flushed as they complete so an aborted run leaves a valid, truncated CSV.
    """
    def __init__(self, directory: Path):
        self.directory = directory
        self._diagnostics = None

    async def __aenter__(self) -> "RunWriter":
        return self

    async def __aexit__(self, *exc_info):
        await self.close()

    async def start(self, config_echo: str, columns: Sequence[str]):
        (self.directory / SNAPSHOT_DIR).mkdir(parents=True, exist_ok=True)
        await self.write_text(CONFIG_ECHO, config_echo)

        self._diagnostics = await aiofiles.open(
            self.directory / DIAGNOSTICS_CSV, "w", encoding="utf-8", newline=""
        )
        await self._diagnostics.write(format_rows([], columns))
        await self._diagnostics.flush()

    async def append_rows(self, rows: Iterable[Sequence[Any]]):
        if self._diagnostics is None:
            raise RuntimeError("writer has not been started")
        text = format_rows(rows)
        if text:
            await self._diagnostics.write(text)
            await self._diagnostics.flush()

    async def write_text(self, name: str, text: str):
        async with aiofiles.open(self.directory / name, "w", encoding="utf-8", newline="") as f:
            await f.write(text)

    async def write_table(self, name: str, columns: Sequence[str], rows: Iterable[Sequence[Any]]):
        await self.write_text(name, format_rows(rows, columns))

    async def write_snapshot(self, index: int, t: float, contour: Contour, rho: RealField, omega: RealField):
        contour_path, rho_path, omega_path = snapshot_paths(self.directory, index)

        async with aiofiles.open(contour_path, "w", encoding="utf-8") as f:
            await f.write(format_contour(contour, t))
        for path, field in ((rho_path, rho), (omega_path, omega)):
            async with aiofiles.open(path, "wb") as f:
                await f.write(encode_field(field, t))

        logger.debug("wrote snapshot %d at t=%.6g", index, t)

    async def write_status(self, status: dict[str, Any]):
        async with aiofiles.open(self.directory / STATUS_FILE, "wb") as f:
            await f.write(encode_status(status))

    async def close(self):
        if self._diagnostics is not None:
            await self._diagnostics.close()
            self._diagnostics = None
