import orjson
import pytest
from typer.testing import CliRunner

from bqlab.cli import cli
from bqlab.constants import STATUS_FILE
from bqlab.io import read_status

CONFIG = """\
grid.nx=64
grid.ny=64
grid.lx=8.0
grid.ly=8.0
solver.nu=0.5
experiment.t_end=0.0
output.directory={directory}
"""


@pytest.fixture
def runner() -> CliRunner:
    return CliRunner()


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(CONFIG.format(directory=tmp_path / "run"))
    return path


class TestEntrypoint:
    def test_version(self, runner):
        result = runner.invoke(cli, ["--version"])
        assert result.exit_code == 0
        assert "bqlab version:" in result.stdout

    def test_help_lists_commands(self, runner):
        result = runner.invoke(cli, ["--help"])
        assert result.exit_code == 0
        for command in ("simulate", "verify-lemmas", "diagnose", "config"):
            assert command in result.stdout

    def test_workers_from_environment(self, runner, config_file):
        result = runner.invoke(
            cli, ["config", "check", str(config_file)], env={"BQLAB__WORKERS": "0"}
        )
        assert result.exit_code == 1
        assert "workers must be positive or -1, got 0" in result.stdout


class TestConfigCommands:
    def test_check_valid(self, runner, config_file):
        result = runner.invoke(cli, ["config", "check", str(config_file)])
        assert result.exit_code == 0
        assert "OK" in result.stdout

    def test_check_invalid(self, runner, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("grid.nx=64\nsolver.viscosity=1\n")

        result = runner.invoke(cli, ["config", "check", str(path)])
        assert result.exit_code == 1
        assert "Error:" in result.stdout
        assert "solver.viscosity" in result.stdout

    def test_show_json(self, runner, config_file):
        result = runner.invoke(cli, ["config", "show", str(config_file), "-f", "json", "--raw"])
        assert result.exit_code == 0

        shown = orjson.loads(result.stdout)
        assert shown["grid"] == {"nx": 64, "ny": 64, "lx": 8.0, "ly": 8.0}
        assert shown["solver"]["cfl"] == 0.5

    def test_show_keyvalue(self, runner, config_file):
        result = runner.invoke(cli, ["config", "show", str(config_file), "--raw"])
        assert result.exit_code == 0
        assert "experiment.t_end=0.0\n" in result.stdout

    def test_show_unknown_format(self, runner, config_file):
        result = runner.invoke(cli, ["config", "show", str(config_file), "-f", "yaml"])
        assert result.exit_code == 1


class TestSimulate:
    def test_zero_length_run(self, runner, config_file, tmp_path):
        result = runner.invoke(cli, ["simulate", str(config_file), "--disable-progress"])

        assert result.exit_code == 0, result.stdout
        assert "COMPLETED" in result.stdout
        assert read_status(tmp_path / "run" / STATUS_FILE)["status"] == "completed"

    def test_geometry_invalid_exits_2(self, runner, config_file, tmp_path):
        with config_file.open("a") as f:
            f.write("patch.height=0.6\n")
        output = tmp_path / "elsewhere"

        result = runner.invoke(
            cli, ["simulate", str(config_file), "--disable-progress", "-o", str(output)]
        )

        assert result.exit_code == 2
        assert "GEOMETRY_INVALID" in result.stdout
        assert read_status(output / STATUS_FILE)["exit_code"] == 2

    def test_missing_config(self, runner, tmp_path):
        result = runner.invoke(cli, ["simulate", str(tmp_path / "missing.cfg")])
        assert result.exit_code == 1
