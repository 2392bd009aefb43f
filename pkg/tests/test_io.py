import numpy as np
import pytest

from bqlab.constants import CONFIG_ECHO, DIAGNOSTICS_CSV, SNAPSHOT_HEADER_BYTES, STATUS_FILE
from bqlab.contour import ellipse
from bqlab.errors import FormatError
from bqlab.io import (
    RunWriter,
    decode_field,
    encode_field,
    encode_status,
    format_contour,
    format_rows,
    parse_contour,
    parse_points,
    read_contour,
    read_field,
    read_status,
    read_table,
    snapshot_paths,
    write_contour,
    write_field,
)
from bqlab.spectral import Grid, RealField


class TestContourFiles:
    def test_contour_text_is_exact(self):
        contour = ellipse(1.2, 0.7, (4.0, 1.5), 64)
        t, parsed = parse_contour(format_contour(contour, 0.125))
        assert t == 0.125
        assert np.array_equal(parsed.markers, contour.markers)

    def test_contour_file_round_trip(self, tmp_path):
        contour = ellipse(1.0, 1.0, (4.0, 2.0), 128)
        write_contour(tmp_path / "shape.txt", contour, 2.5)
        t, loaded = read_contour(tmp_path / "shape.txt")
        assert t == 2.5
        assert np.array_equal(loaded.markers, contour.markers)

    def test_time_header_is_optional(self):
        t, points = parse_points("0,1\n1,1\n\n# a comment\n1,2\n")
        assert t is None
        assert points.shape == (3, 2)

    def test_time_header_must_come_first(self):
        with pytest.raises(FormatError, match=":2: the t= header must come first"):
            parse_points("0,1\nt=0.5\n1,1\n1,2\n")

    def test_bad_coordinates_name_the_line(self):
        with pytest.raises(FormatError, match="shape.txt:3: invalid coordinates") as info:
            parse_points("0,1\n1,1\n1,x\n", "shape.txt")
        assert info.value.line == 3

    def test_wrong_arity(self):
        with pytest.raises(FormatError, match="expected `x1,x2`"):
            parse_points("0,1,2\n1,1\n1,2\n")

    def test_needs_three_points(self):
        with pytest.raises(FormatError, match="at least 3 points"):
            parse_points("0,1\n1,1\n")

    def test_missing_file(self, tmp_path):
        with pytest.raises(FormatError, match="cannot read file"):
            read_contour(tmp_path / "missing.txt")


class TestFieldSnapshots:
    def test_header_layout(self):
        grid = Grid(nx=8, ny=16, lx=2 * np.pi, ly=4.0)
        data = encode_field(grid.zeros(), 0.5)

        header = data[:SNAPSHOT_HEADER_BYTES].decode("ascii")
        assert header.startswith("BQP1 8 16 6.283185307 4 0.5")
        assert header.endswith("\n")
        assert len(data) == SNAPSHOT_HEADER_BYTES + 8 * 16 * 8

    def test_values_survive_exactly(self, tmp_path, rng):
        grid = Grid(nx=8, ny=16, lx=2 * np.pi, ly=4.0)
        field = RealField(grid, rng.normal(size=grid.shape))
        path = tmp_path / "omega.bqp"
        write_field(path, field, 1.0 / 3)

        t, loaded = read_field(path, grid)
        assert t == 1.0 / 3
        assert loaded.grid is grid
        assert np.array_equal(loaded.values, field.values)

    def test_grid_from_header(self):
        grid = Grid(nx=8, ny=8, lx=1.0, ly=2.0)
        _, loaded = decode_field(encode_field(grid.zeros(), 0.0))
        assert (loaded.grid.nx, loaded.grid.ny, loaded.grid.lx, loaded.grid.ly) == (8, 8, 1.0, 2.0)

    def test_bad_magic(self):
        data = bytearray(encode_field(Grid(nx=8, ny=8, lx=1.0, ly=1.0).zeros(), 0.0))
        data[:4] = b"XXXX"
        with pytest.raises(FormatError, match="bad magic"):
            decode_field(bytes(data))

    def test_truncated(self):
        data = encode_field(Grid(nx=8, ny=8, lx=1.0, ly=1.0).zeros(), 0.0)
        with pytest.raises(FormatError, match="expected 576 bytes"):
            decode_field(data[:-8])

    def test_grid_mismatch(self):
        data = encode_field(Grid(nx=8, ny=8, lx=1.0, ly=1.0).zeros(), 0.0)
        with pytest.raises(FormatError, match="expected 16x8"):
            decode_field(data, Grid(nx=16, ny=8, lx=1.0, ly=1.0))
        with pytest.raises(FormatError, match="snapshot is 8x8"):
            decode_field(data, Grid(nx=8, ny=8, lx=2.0, ly=1.0))


class TestTables:
    def test_cells(self):
        text = format_rows([[1, 0.1, True, np.float64(2.5), "x"]], ["a", "b", "c", "d", "e"])
        assert text == "a,b,c,d,e\n1,0.1,true,2.5,x\n"

    def test_read_back(self, tmp_path):
        path = tmp_path / "table.csv"
        path.write_text(format_rows([[0.0, 1e-300], [1.5, float("nan")]], ["t", "value"]))
        rows = read_table(path)
        assert [row["t"] for row in rows] == ["0.0", "1.5"]
        assert float(rows[0]["value"]) == 1e-300
        assert np.isnan(float(rows[1]["value"]))

    def test_status(self, tmp_path):
        path = tmp_path / STATUS_FILE
        path.write_bytes(encode_status({"status": "completed", "t": np.float64(0.5), "violations": []}))
        assert read_status(path) == {"status": "completed", "t": 0.5, "violations": []}

    def test_invalid_status(self, tmp_path):
        path = tmp_path / STATUS_FILE
        path.write_text("{not json")
        with pytest.raises(FormatError, match="invalid status file"):
            read_status(path)


class TestRunWriter:
    @pytest.mark.asyncio
    async def test_writes_run_directory(self, tmp_path):
        grid = Grid(nx=8, ny=8, lx=4.0, ly=4.0)
        contour = ellipse(0.5, 0.4, (2.0, 1.0), 64)

        async with RunWriter(tmp_path) as writer:
            await writer.start("grid.nx=8\n", ["t", "value"])
            await writer.append_rows([[0.0, 1.0], [0.1, 2.0]])
            await writer.append_rows([])
            await writer.write_snapshot(3, 0.1, contour, grid.zeros(), grid.zeros())
            await writer.write_status({"status": "completed"})

        assert (tmp_path / CONFIG_ECHO).read_text() == "grid.nx=8\n"
        assert (tmp_path / DIAGNOSTICS_CSV).read_text() == "t,value\n0.0,1.0\n0.1,2.0\n"
        assert read_status(tmp_path / STATUS_FILE) == {"status": "completed"}

        contour_path, rho_path, omega_path = snapshot_paths(tmp_path, 3)
        assert contour_path.name == "contour_000003.txt"
        t, loaded = read_contour(contour_path)
        assert t == 0.1
        assert np.array_equal(loaded.markers, contour.markers)
        assert read_field(rho_path, grid)[0] == 0.1
        assert omega_path.exists()

    @pytest.mark.asyncio
    async def test_rows_need_start(self, tmp_path):
        async with RunWriter(tmp_path) as writer:
            with pytest.raises(RuntimeError, match="not been started"):
                await writer.append_rows([[1.0]])
