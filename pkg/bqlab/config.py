"""
Run and lemma-sweep configuration.

Configs are plain ``section.key=value`` files. `parse_config` nests the dotted
keys and validates them against the pydantic models below, translating
validation failures into line-numbered `ConfigError`s.
"""
import re
from pathlib import Path
from typing import Any, Literal, TypeVar

from manifest import Manifest
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    ValidationError,
    ValidationInfo,
    field_validator,
    model_validator,
)

from bqlab.errors import ConfigError
from bqlab.solver import SolverSettings, VelocityRecipe
from bqlab.spectral import Grid
from bqlab.utils import flatten_dict, resolve_path, set_nested_value

INLINE_COMMENT = re.compile(r"\s#")


def _resolve_file(value: Path | None, info: ValidationInfo) -> Path | None:
    if value is None:
        return None
    base_dir = (info.context or {}).get("base_dir")
    try:
        return resolve_path(Path(value), [base_dir] if base_dir else [])
    except FileNotFoundError:
        raise ValueError(f"file `{value}` does not exist")


def _split_list(value: Any) -> Any:
    if value is None:
        return []
    if isinstance(value, str):
        return [item.strip() for item in value.split(",") if item.strip()]
    return value


class Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class GridSection(Section):
    nx: int
    ny: int
    lx: float = Field(gt=0)
    ly: float = Field(gt=0)

    @field_validator("nx", "ny")
    @classmethod
    def validate_power_of_two(cls, value: int) -> int:
        if value < 8 or value & (value - 1):
            raise ValueError("must be a power of two >= 8")
        return value

    def build(self) -> Grid:
        return Grid(nx=self.nx, ny=self.ny, lx=self.lx, ly=self.ly)


class SolverSection(Section):
    nu: float = Field(gt=0)
    cfl: float = Field(0.5, gt=0, le=1)
    dt_max: float = Field(0.01, gt=0)
    dealias: bool = True
    enforce_symmetry: bool = True
    epsilon: float | None = Field(None, gt=0)

    def settings(self) -> SolverSettings:
        return SolverSettings(**self.model_dump())


class PatchSection(Section):
    family: Literal["ellipse", "stadium", "polygon-file"] = "ellipse"
    a: float = Field(1.2, gt=0)
    c: float = Field(1.0, gt=0)
    height: float = Field(1.5, gt=0)
    center_x1: float | None = None
    file: Path | None = None
    markers: int = Field(256, ge=64)
    spacing_factor: float = Field(2.0, gt=0)
    max_markers: int = Field(16384, ge=64)

    @field_validator("file")
    @classmethod
    def resolve_file(cls, value: Path | None, info: ValidationInfo) -> Path | None:
        return _resolve_file(value, info)

    @model_validator(mode="after")
    def validate_family(self) -> "PatchSection":
        if self.family == "polygon-file" and self.file is None:
            raise ValueError("patch.file is required for the polygon-file family")
        if self.max_markers < self.markers:
            raise ValueError("patch.max_markers must be at least patch.markers")
        return self


class VelocitySection(Section):
    kind: Literal["zero", "mode", "file"] = "zero"
    amplitude: float = 0.0
    mode: int = Field(1, ge=0)
    radius: float = Field(1.0, gt=0)
    center_x1: float | None = None
    center_x2: float | None = None
    file: Path | None = None

    @field_validator("file")
    @classmethod
    def resolve_file(cls, value: Path | None, info: ValidationInfo) -> Path | None:
        return _resolve_file(value, info)

    @model_validator(mode="after")
    def validate_kind(self) -> "VelocitySection":
        if self.kind == "file" and self.file is None:
            raise ValueError("velocity.file is required for the file kind")
        return self

    def recipe(self, default_center: tuple[float, float]) -> VelocityRecipe:
        return VelocityRecipe(
            kind=self.kind,
            amplitude=self.amplitude,
            mode=self.mode,
            radius=self.radius,
            center=(
                default_center[0] if self.center_x1 is None else self.center_x1,
                default_center[1] if self.center_x2 is None else self.center_x2,
            ),
            file=self.file,
        )


class OutputSection(Section):
    directory: Path = Path("runs/default")
    cadence: float = Field(0.1, gt=0)
    snapshots: bool = False
    snapshot_every: int = Field(10, ge=1)


class ExperimentSection(Section):
    t_end: float = Field(ge=0)
    schedule_base: float = Field(0.5, gt=0)
    schedule_count: int = Field(8, ge=1)
    strict: bool = False


class ToleranceSection(Section):
    energy: float = Field(1e-4, gt=0)
    lemma31: float = Field(1e-4, gt=0)
    epp: float = Field(1e-3, gt=0)
    b_forms: float = Field(1e-8, gt=0)
    parity: float = Field(1e-10, gt=0)
    area: float = Field(1e-4, gt=0)
    rho_l2: float = Field(5e-3, gt=0)


class RunConfig(Manifest):
    model_config = ConfigDict(extra="forbid")

    grid: GridSection
    solver: SolverSection
    patch: PatchSection = Field(default_factory=PatchSection)
    velocity: VelocitySection = Field(default_factory=VelocitySection)
    output: OutputSection = Field(default_factory=OutputSection)
    experiment: ExperimentSection
    tolerances: ToleranceSection = Field(default_factory=ToleranceSection)


class LemmaSection(Section):
    source: Literal["ellipse", "random", "files"]
    aspects: list[float] = Field(default_factory=lambda: [1.0, 2.0, 4.0, 8.0])
    count: int = Field(20, ge=1)
    seed: int = 0
    files: list[Path] = Field(default_factory=list)
    height: float = Field(1.0, gt=0)
    markers: int = Field(256, ge=64)
    cells_per_radius: int = Field(16, ge=8)
    max_cells: int = Field(2048, ge=8)
    omega: list[Literal["zero", "mu"]] = Field(default_factory=lambda: ["mu"])
    perturbation: float = Field(0.15, ge=0, lt=0.5)
    output: Path = Path("lemma_reports.csv")

    @field_validator("aspects", "files", "omega", mode="before")
    @classmethod
    def split_lists(cls, value: Any) -> Any:
        return _split_list(value)

    @field_validator("aspects")
    @classmethod
    def validate_aspects(cls, value: list[float]) -> list[float]:
        if not value or any(aspect < 1 for aspect in value):
            raise ValueError("aspects must be a non-empty list of ratios >= 1")
        return value

    @field_validator("files")
    @classmethod
    def resolve_files(cls, value: list[Path], info: ValidationInfo) -> list[Path]:
        return [_resolve_file(path, info) for path in value]

    @field_validator("max_cells")
    @classmethod
    def validate_max_cells(cls, value: int) -> int:
        if value & (value - 1):
            raise ValueError("must be a power of two")
        return value

    @model_validator(mode="after")
    def validate_source(self) -> "LemmaSection":
        if self.source == "files" and not self.files:
            raise ValueError("lemmas.files is required for the files source")
        if not self.omega:
            raise ValueError("lemmas.omega needs at least one choice")
        return self


class LemmaSweepConfig(Manifest):
    model_config = ConfigDict(extra="forbid")

    lemmas: LemmaSection


ConfigT = TypeVar("ConfigT", RunConfig, LemmaSweepConfig)


def _strip_comment(line: str) -> str:
    if line.lstrip().startswith("#"):
        return ""
    return INLINE_COMMENT.split(line, maxsplit=1)[0]


def _dotted(loc: tuple) -> str:
    return ".".join(str(part) for part in loc if not isinstance(part, int))


def _line_of(key: str, lines: dict[str, int]) -> int | None:
    if key in lines:
        return lines[key]
    return next((n for k, n in lines.items() if k.startswith(key + ".")), None)


def _translate(error: ValidationError, lines: dict[str, int]) -> ConfigError:
    """
    Turn a pydantic validation error into the most useful single ConfigError:
    unknown keys first, then bad values, then every missing key at once.
    """
    unknown, invalid, missing = [], [], []
    for item in error.errors():
        key = _dotted(item["loc"])
        match item["type"]:
            case "extra_forbidden":
                unknown.append(key)
            case "missing":
                missing.append(key)
            case _:
                invalid.append((key, item["msg"]))

    if unknown:
        key = unknown[0]
        return ConfigError("unknown key", key=key, line=_line_of(key, lines))
    if invalid:
        key, message = invalid[0]
        return ConfigError(message, key=key or None, line=_line_of(key, lines) if key else None)
    return ConfigError("missing required keys: " + ", ".join(missing))


def parse_config(
    text: str,
    model: type[ConfigT] = RunConfig,  # type: ignore[assignment]
    base_dir: Path | None = None,
) -> ConfigT:
    """
    Parse and validate a ``key=value`` config.

    :param text: Config file contents
    :param model: RunConfig or LemmaSweepConfig
    :param base_dir: Directory relative file paths resolve against
    :raises ConfigError: Naming the key and line of the first problem
    """
    data: dict[str, Any] = {}
    lines: dict[str, int] = {}

    for number, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("expected `key=value`", line=number)

        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError("empty key", line=number)
        if key in lines:
            raise ConfigError(
                f"duplicate key, first set on line {lines[key]}", key=key, line=number
            )

        if any(other.startswith(key + ".") for other in lines):
            raise ConfigError("key conflicts with a section of the same name", key=key, line=number)

        lines[key] = number
        try:
            set_nested_value(data, key.split("."), value if value else None)
        except (AttributeError, TypeError):
            raise ConfigError("key conflicts with a section of the same name", key=key, line=number)

    try:
        return model.model_validate(data, context={"base_dir": base_dir})
    except ValidationError as e:
        raise _translate(e, lines) from None


def load_config(path: Path, model: type[ConfigT] | None = None) -> RunConfig | LemmaSweepConfig:
    """
    Read and validate a config file. Without an explicit `model` the presence
    of ``lemmas.`` keys selects LemmaSweepConfig.
    """
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as e:
        raise ConfigError(f"cannot read `{path}`: {e}")

    if model is None:
        keys = (_strip_comment(line).split("=", 1)[0].strip() for line in text.splitlines())
        model = LemmaSweepConfig if any(k.startswith("lemmas.") for k in keys) else RunConfig

    return parse_config(text, model, base_dir=path.parent.resolve())


def _format_value(value: Any) -> str:
    match value:
        case None:
            return ""
        case bool():
            return "true" if value else "false"
        case float():
            return repr(value)
        case list() | tuple():
            return ",".join(_format_value(item) for item in value)
        case _:
            return str(value)


def format_config(config: RunConfig | LemmaSweepConfig) -> str:
    """
    Canonical flattened form with every key, defaults included. Parsing the
    output yields an equal config.
    """
    flat = flatten_dict(config.model_dump())
    return "\n".join(f"{key}={_format_value(value)}" for key, value in flat.items()) + "\n"
