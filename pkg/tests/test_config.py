from pathlib import Path

import pytest

from bqlab.config import (
    LemmaSweepConfig,
    RunConfig,
    format_config,
    load_config,
    parse_config,
)
from bqlab.errors import ConfigError

MINIMAL = """\
grid.nx=64
grid.ny=64
grid.lx=8.0
grid.ly=8.0
solver.nu=0.1
experiment.t_end=1.0
"""


class TestParse:
    def test_minimal_config_fills_defaults(self):
        config = parse_config(MINIMAL)

        assert isinstance(config, RunConfig)
        assert config.grid.nx == 64
        assert config.solver.nu == 0.1
        assert config.solver.cfl == 0.5
        assert config.solver.epsilon is None
        assert config.patch.family == "ellipse"
        assert config.patch.markers == 256
        assert config.output.directory == Path("runs/default")
        assert config.tolerances.energy == 1e-4
        assert config.experiment.strict is False

    def test_comments_and_blank_lines(self):
        text = "# a run\n\n" + MINIMAL.replace("solver.nu=0.1", "solver.nu=0.1  # viscosity")
        assert parse_config(text).solver.nu == 0.1

    def test_builds_grid_and_settings(self):
        config = parse_config(MINIMAL + "solver.dealias=false\n")
        grid = config.grid.build()
        settings = config.solver.settings()
        assert (grid.nx, grid.ny, grid.lx, grid.ly) == (64, 64, 8.0, 8.0)
        assert settings.nu == 0.1
        assert settings.dealias is False

    def test_velocity_recipe_defaults_to_patch_center(self):
        config = parse_config(MINIMAL + "velocity.kind=mode\nvelocity.amplitude=0.5\nvelocity.center_x2=2.0\n")
        recipe = config.velocity.recipe((4.0, 1.5))
        assert recipe.kind == "mode"
        assert recipe.center == (4.0, 2.0)


class TestErrors:
    def test_malformed_line(self):
        with pytest.raises(ConfigError, match="line 3: expected `key=value`") as info:
            parse_config("grid.nx=64\ngrid.ny=64\nthis line is wrong\n")
        assert info.value.line == 3

    def test_duplicate_key(self):
        with pytest.raises(ConfigError, match="duplicate key, first set on line 5") as info:
            parse_config(MINIMAL + "solver.nu=0.2\n")
        assert info.value.key == "solver.nu"
        assert info.value.line == 7

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="unknown key") as info:
            parse_config(MINIMAL + "solver.viscosity=0.1\n")
        assert info.value.key == "solver.viscosity"
        assert info.value.line == 7

    def test_unknown_section(self):
        with pytest.raises(ConfigError, match="unknown key") as info:
            parse_config(MINIMAL + "mesh.nx=4\n")
        assert info.value.key == "mesh"
        assert info.value.line == 7

    def test_constraint_violation(self):
        with pytest.raises(ConfigError, match="greater than 0") as info:
            parse_config(MINIMAL.replace("solver.nu=0.1", "solver.nu=0"))
        assert info.value.key == "solver.nu"
        assert info.value.line == 5

    def test_type_mismatch(self):
        with pytest.raises(ConfigError, match="grid.nx") as info:
            parse_config(MINIMAL.replace("grid.nx=64", "grid.nx=many"))
        assert info.value.line == 1

    def test_grid_must_be_power_of_two(self):
        with pytest.raises(ConfigError, match="power of two"):
            parse_config(MINIMAL.replace("grid.ny=64", "grid.ny=48"))

    def test_missing_keys_listed_together(self):
        with pytest.raises(ConfigError, match="missing required keys: grid.ly, solver, experiment"):
            parse_config("grid.nx=64\ngrid.ny=64\ngrid.lx=8\n")

    def test_section_conflict(self):
        with pytest.raises(ConfigError, match="conflicts with a section"):
            parse_config("grid.nx=64\ngrid=1\n")

    def test_polygon_family_needs_file(self):
        with pytest.raises(ConfigError, match="patch.file is required"):
            parse_config(MINIMAL + "patch.family=polygon-file\n")

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="does not exist"):
            parse_config(MINIMAL + "velocity.kind=file\nvelocity.file=nowhere.bqp\n", base_dir=tmp_path)


class TestFiles:
    def test_relative_paths_resolve_against_config(self, tmp_path):
        (tmp_path / "shape.txt").write_text("0,1\n1,1\n1,2\n0,2\n")
        path = tmp_path / "run.cfg"
        path.write_text(MINIMAL + "patch.family=polygon-file\npatch.file=shape.txt\n")

        config = load_config(path)
        assert config.patch.file == (tmp_path / "shape.txt").resolve()

    def test_lemma_config_is_detected(self, tmp_path):
        path = tmp_path / "sweep.cfg"
        path.write_text("lemmas.source=ellipse\nlemmas.aspects=1, 2.5\nlemmas.omega=zero,mu\n")

        config = load_config(path)
        assert isinstance(config, LemmaSweepConfig)
        assert config.lemmas.aspects == [1.0, 2.5]
        assert config.lemmas.omega == ["zero", "mu"]
        assert config.lemmas.files == []

    def test_lemma_aspects_at_least_one(self):
        with pytest.raises(ConfigError, match="ratios >= 1"):
            parse_config("lemmas.source=ellipse\nlemmas.aspects=0.5\n", LemmaSweepConfig)

    def test_unreadable_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            load_config(tmp_path / "missing.cfg")


class TestFormat:
    def test_echo_parses_back_to_the_same_config(self):
        config = parse_config(MINIMAL + "solver.epsilon=0.3\nexperiment.strict=true\n")
        echo = format_config(config)

        assert "solver.epsilon=0.3\n" in echo
        assert "patch.file=\n" in echo
        assert "experiment.strict=true\n" in echo
        assert parse_config(echo).model_dump() == config.model_dump()

    def test_lemma_echo(self):
        config = parse_config("lemmas.source=random\nlemmas.count=3\n", LemmaSweepConfig)
        echo = format_config(config)
        assert "lemmas.aspects=1.0,2.0,4.0,8.0\n" in echo
        assert parse_config(echo, LemmaSweepConfig).model_dump() == config.model_dump()
