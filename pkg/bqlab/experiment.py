"""
Experiment drivers: the simulation run, the lemma sweep and the offline
diagnosis of a run directory.
"""
import asyncio
import logging
import time
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np
import shapely

from bqlab import contour as shapes
from bqlab.config import LemmaSection, LemmaSweepConfig, PatchSection, RunConfig, format_config, load_config
from bqlab.constants import (
    CONFIG_ECHO,
    DIAGNOSE_CSV,
    DIAGNOSE_LEMMAS_CSV,
    EXIT_INVARIANT,
    EXIT_NUMERICAL,
    EXIT_OK,
    EXIT_USAGE,
    GROWTH_CSV,
    LOW_DISSIPATION_CSV,
    SNAPSHOT_DIR,
)
from bqlab.contour import Contour, needs_redistribution, redistribute
from bqlab.diagnostics import (
    DiagnosticsAccumulator,
    DiagnosticsRecord,
    GrowthRow,
    GrowthSummary,
    Lemma31BoundReport,
    LowDissipationTime,
    accumulate,
    covered_schedule,
    extract_low_dissipation_times,
    growth_rows,
    growth_summary,
    hard_invariant_failures,
    lemma31_bound_check,
    sample_record,
    tolerance_violations,
)
from bqlab.errors import (
    FormatError,
    GeometryError,
    InvariantFailure,
    NumericalAbort,
)
from bqlab.io import RunWriter, format_rows, read_contour, read_field, read_points, snapshot_paths
from bqlab.lemmas import (
    LemmaReport,
    OmegaChoice,
    PestovIoninReport,
    check_lemma41,
    check_lemma42,
    curvature_lemma_params,
    patch_density,
    perimeter_lemma_params,
    pestov_ionin_check,
    pestov_ionin_report,
)
from bqlab.solver import State, cfl_dt, resolve_epsilon, seed_state, step_with_stages
from bqlab.spectral import Grid
from bqlab.tracker import GuardBand, StageSampler, advect_contour
from bqlab.utils import gather_limited, get_workers, run_in_thread

logger = logging.getLogger(__name__)

ProgressCallback = Callable[[float, float], None]


# Patches

def build_patch(section: PatchSection, grid: Grid) -> Contour:
    """
    Unit-area patch of the configured family with its centroid at
    (center_x1, height), center_x1 defaulting to the middle of the box.
    """
    n = section.markers
    match section.family:
        case "ellipse":
            patch = shapes.ellipse(section.a, section.c, (0.0, 0.0), n)
        case "stadium":
            patch = shapes.stadium(section.a, section.c, (0.0, 0.0), n)
        case "polygon-file":
            assert section.file is not None
            polygon = shapely.Polygon(read_points(section.file))
            if not polygon.is_valid:
                raise FormatError("polygon is not simple", section.file)
            patch = shapes.from_polygon(polygon, n)

    center = (grid.lx / 2 if section.center_x1 is None else section.center_x1, section.height)
    return shapes.normalize(patch, 1.0, center)


def sweep_shapes(section: LemmaSection) -> list[tuple[str, Contour]]:
    """
    Named unit-area shapes for a lemma sweep, centroids at (0, height).
    """
    center = (0.0, section.height)
    n = section.markers

    match section.source:
        case "ellipse":
            raw = [
                (f"ellipse-{aspect:g}", shapes.ellipse(np.sqrt(aspect / np.pi), np.sqrt(1 / (np.pi * aspect)), center, n))
                for aspect in section.aspects
            ]
        case "random":
            rng = np.random.default_rng(section.seed)
            raw = [
                (f"star-{i:03d}", shapes.random_star(rng, n, section.perturbation))
                for i in range(section.count)
            ]
        case "files":
            raw = [
                (path.stem, shapes.from_polygon(shapely.Polygon(read_points(path)), n))
                for path in section.files
            ]

    return [(name, shapes.normalize(patch, 1.0, center)) for name, patch in raw]


# Simulation

@dataclass
class RunOutcome:
    status: str
    exit_code: int
    directory: Path
    t: float = 0.0
    steps: int = 0
    message: str = ""
    elapsed: float = 0.0
    records: list[DiagnosticsRecord] = field(default_factory=list)
    low_dissipation: list[LowDissipationTime] = field(default_factory=list)
    growth: GrowthSummary | None = None
    dissipation_bound: Lemma31BoundReport | None = None
    violations: list[str] = field(default_factory=list)
    failures: list[str] = field(default_factory=list)

    def as_status(self) -> dict:
        return {
            "status": self.status,
            "exit_code": self.exit_code,
            "t": self.t,
            "steps": self.steps,
            "message": self.message,
            "elapsed_seconds": self.elapsed,
            "records": len(self.records),
            "curvature_growth": self.growth.kappa_factor if self.growth else None,
            "extent_growth": self.growth.extent_factor if self.growth else None,
            "dissipation_bound": self.dissipation_bound.as_dict() if self.dissipation_bound else None,
            "violations": self.violations,
            "failures": self.failures,
        }


def output_times(cadence: float, t_end: float) -> list[float]:
    """k * cadence up to t_end, with t_end itself always last."""
    count = int(np.floor(t_end / cadence * (1 + 1e-12)))
    times = [k * cadence for k in range(count + 1)]
    if t_end - times[-1] > 1e-9 * cadence:
        times.append(t_end)
    else:
        times[-1] = t_end
    return times


class _RecordPipeline:
    """
    Diagnostics are sampled in worker threads and drained strictly in
    submission order, so the accumulated integrals never depend on scheduling.
    """
    def __init__(self, nu: float, writer: RunWriter):
        self.accumulator = DiagnosticsAccumulator(nu)
        self.writer = writer
        self.nu = nu
        self.pending: deque[asyncio.Future] = deque()
        self.records: list[DiagnosticsRecord] = []

    def submit(self, state: State, contour: Contour, epsilon: float):
        self.pending.append(asyncio.ensure_future(
            run_in_thread(sample_record, state, self.nu, contour, epsilon)
        ))

    async def drain(self, wait: bool = False):
        while self.pending and (wait or self.pending[0].done()):
            sample = await self.pending.popleft()
            await self._write(self.accumulator.push(sample))

    async def finish(self, emit_last: bool = True):
        await self.drain(wait=True)
        if emit_last:
            await self.release()

    async def release(self):
        """Write the record held back for its E_P'' residual."""
        held = self.accumulator.finish()
        if held and (not self.records or held[-1].t > self.records[-1].t):
            await self._write(held)

    async def cancel(self):
        for future in self.pending:
            future.cancel()
        await asyncio.gather(*self.pending, return_exceptions=True)
        self.pending.clear()

    async def _write(self, records: list[DiagnosticsRecord]):
        if records:
            self.records.extend(records)
            await self.writer.append_rows(r.as_row() for r in records)


async def run(
    config: RunConfig,
    directory: Path | None = None,
    on_progress: ProgressCallback | None = None,
) -> RunOutcome:
    """
    Simulate from t = 0 to experiment.t_end, writing diagnostics at every
    output time and the run summary files at the end.

    Errors during the run do not propagate: they end the run with a status
    and exit code, leaving a valid truncated CSV behind.

    :param config: Validated run configuration
    :param directory: Run directory, defaults to output.directory
    :param on_progress: Called with (t, t_end) after every step
    """
    directory = directory or config.output.directory
    grid = config.grid.build()
    settings = config.solver.settings()
    nu = settings.nu
    epsilon = resolve_epsilon(settings, grid)
    t_end = config.experiment.t_end
    started = time.perf_counter()

    outcome = RunOutcome(status="completed", exit_code=EXIT_OK, directory=directory)

    async with RunWriter(directory) as writer:
        try:
            await writer.start(format_config(config), DiagnosticsRecord.columns())
        except OSError as e:
            outcome.status, outcome.exit_code, outcome.message = "io_error", EXIT_USAGE, str(e)
            return outcome

        pipeline = _RecordPipeline(nu, writer)
        try:
            patch = build_patch(config.patch, grid)
            state = seed_state(patch, 0.0, config.velocity.recipe(patch.centroid), grid, settings)
            contour = patch
            guard = GuardBand(grid, 2 * epsilon)
            max_spacing = config.patch.spacing_factor * min(grid.hx, grid.hy)

            logger.info("run started: %s, t_end=%g, epsilon=%.4g", directory, t_end, epsilon)

            for index, target in enumerate(output_times(config.output.cadence, t_end)):
                while state.t < target - 1e-12 * max(1.0, target):
                    dt = min(cfl_dt(state, settings), target - state.t)
                    state, stages = step_with_stages(state, dt, settings)
                    contour = advect_contour(contour, StageSampler(grid, stages), dt, guard)
                    if needs_redistribution(contour, max_spacing, config.patch.max_markers):
                        contour = redistribute(contour, max_spacing, config.patch.max_markers)
                    outcome.steps += 1
                    outcome.t = state.t
                    if on_progress is not None:
                        on_progress(state.t, t_end)
                    await pipeline.drain()

                pipeline.submit(state, contour, epsilon)
                if index == 0 or (config.output.snapshots and index % config.output.snapshot_every == 0):
                    await writer.write_snapshot(index, state.t, contour, state.rho, state.omega)

            # a zero-length run has no time series, only the initial snapshot
            await pipeline.finish(emit_last=t_end > 0)

        except GeometryError as e:
            outcome.status, outcome.exit_code, outcome.message = "geometry_invalid", EXIT_NUMERICAL, str(e)
        except NumericalAbort as e:
            outcome.status, outcome.exit_code, outcome.message = "numerical_abort", EXIT_NUMERICAL, str(e)
        except OSError as e:
            outcome.status, outcome.exit_code, outcome.message = "io_error", EXIT_USAGE, str(e)

        if outcome.status != "completed":
            logger.error("run stopped at t=%.6g: %s", outcome.t, outcome.message)
            await pipeline.cancel()
            await pipeline.release()

        outcome.records = pipeline.records
        outcome.elapsed = time.perf_counter() - started

        try:
            await _write_summaries(config, writer, outcome)
        except OSError as e:
            outcome.status, outcome.exit_code, outcome.message = "io_error", EXIT_USAGE, str(e)
            return outcome

    return outcome


async def _write_summaries(config: RunConfig, writer: RunWriter, outcome: RunOutcome):
    records = outcome.records
    tolerances = config.tolerances

    if records:
        schedule = covered_schedule(
            records, config.experiment.schedule_base, config.experiment.schedule_count
        )
        outcome.low_dissipation = extract_low_dissipation_times(records, schedule)
        outcome.growth = growth_summary(records)
        outcome.dissipation_bound = lemma31_bound_check(records, config.solver.nu)

    await writer.write_table(LOW_DISSIPATION_CSV, LowDissipationTime.columns(), (r.as_row() for r in outcome.low_dissipation))
    await writer.write_table(GROWTH_CSV, GrowthRow.columns(), (r.as_row() for r in growth_rows(records)))

    if outcome.status == "completed":
        outcome.failures = hard_invariant_failures(records, tolerances)
        outcome.violations = tolerance_violations(records, tolerances)
        if outcome.dissipation_bound is not None:
            outcome.violations.extend(outcome.dissipation_bound.problems())

        if outcome.failures:
            outcome.status, outcome.exit_code = "invariant_failure", EXIT_INVARIANT
            outcome.message = "; ".join(outcome.failures)
        elif outcome.violations and config.experiment.strict:
            outcome.status, outcome.exit_code = "invariant_failure", EXIT_INVARIANT
            outcome.message = "; ".join(outcome.violations)
        for violation in outcome.violations:
            logger.warning("tolerance exceeded: %s", violation)

    await writer.write_status(outcome.as_status())


# Lemma sweep

@dataclass
class LemmaSweepOutcome:
    reports: list[LemmaReport]
    pestov_ionin: list[PestovIoninReport]
    output: Path | None = None

    @property
    def failed(self) -> list[str]:
        failed = [
            f"{r.shape}/{r.lemma}/{r.omega_choice}: {'; '.join(r.failures)}"
            for r in self.reports if not r.passed
        ]
        failed.extend(
            f"{r.shape}/pestov-ionin: product {r.product:.6g}"
            for r in self.pestov_ionin if not r.passed
        )
        return failed

    @property
    def exit_code(self) -> int:
        return EXIT_INVARIANT if self.failed else EXIT_OK


def failed_report(lemma: str, shape: str, omega_choice: str, message: str) -> LemmaReport:
    nan = float("nan")
    return LemmaReport(
        lemma=lemma, shape=shape, omega_choice=omega_choice, scale=nan, n_star=0,
        lhs=nan, lhs_grid=nan, mirror_defect=nan, norm_h1=nan, norm_l2=nan,
        grad_f_l2=nan, lap_f_l2=nan, predicted_lower_bound=nan, stated_lower_bound=nan,
        failures=(message,),
    )


def evaluate_shape(
    name: str,
    contour: Contour,
    section: LemmaSection,
) -> tuple[list[LemmaReport], PestovIoninReport]:
    """
    Both lemma checks for every configured Omega choice, plus the
    Pestov-Ionin product. A lemma that cannot be evaluated yields a failed row.
    """
    reports: list[LemmaReport] = []
    checks = (
        ("curvature", curvature_lemma_params, check_lemma41),
        ("perimeter", perimeter_lemma_params, check_lemma42),
    )

    for lemma, make_params, check in checks:
        try:
            params, placed = make_params(
                contour, section.omega[0], section.cells_per_radius, section.max_cells
            )
            mu = patch_density(placed, params.grid)
            for choice in section.omega:
                reports.append(check(placed, replace(params, omega_choice=choice), name, mu))
        except (GeometryError, InvariantFailure, NumericalAbort) as e:
            logger.error("%s check on %s failed: %s", lemma, name, e)
            reports.extend(failed_report(lemma, name, choice, str(e)) for choice in section.omega)

    pestov = pestov_ionin_report(contour, name)
    try:
        pestov_ionin_check(contour, pestov)
    except InvariantFailure as e:
        logger.error("pestov-ionin check on %s failed: %s", name, e)

    return reports, pestov


def pestov_ionin_path(output: Path) -> Path:
    return output.with_name(f"{output.stem}_pestov_ionin{output.suffix or '.csv'}")


async def verify_lemmas(config: LemmaSweepConfig, output: Path | None = None) -> LemmaSweepOutcome:
    """
    Run the lemma checks over the configured shapes, fanned out over the
    worker threads, and write the report tables.

    :raises FormatError: If a shape file cannot be read
    """
    section = config.lemmas
    output = output or section.output
    named = sweep_shapes(section)
    logger.info("verifying lemmas on %d shapes with %d workers", len(named), get_workers())

    results = await gather_limited(
        get_workers(),
        [(evaluate_shape, (name, contour, section)) for name, contour in named],
    )
    outcome = LemmaSweepOutcome(
        reports=[report for reports, _ in results for report in reports],
        pestov_ionin=[pi for _, pi in results],
        output=output,
    )

    output.parent.mkdir(parents=True, exist_ok=True)
    output.write_text(format_rows((r.as_row() for r in outcome.reports), LemmaReport.columns()))
    pestov_ionin_path(output).write_text(
        format_rows((r.as_row() for r in outcome.pestov_ionin), PestovIoninReport.columns())
    )
    return outcome


# Offline diagnosis

@dataclass
class DiagnoseOutcome:
    records: list[DiagnosticsRecord]
    low_dissipation: list[LowDissipationTime]
    reports: list[LemmaReport]
    skipped: list[str]
    failures: list[str]
    violations: list[str]
    dissipation_bound: Lemma31BoundReport

    @property
    def exit_code(self) -> int:
        return EXIT_INVARIANT if self.failures else EXIT_OK


def _snapshot_indices(directory: Path) -> list[int]:
    return sorted(
        int(path.stem.split("_")[1])
        for path in (directory / SNAPSHOT_DIR).glob("contour_*.txt")
    )


def _load_snapshot(directory: Path, index: int, grid: Grid) -> tuple[State, Contour]:
    contour_path, rho_path, omega_path = snapshot_paths(directory, index)
    t, contour = read_contour(contour_path)
    t_rho, rho = read_field(rho_path, grid)
    _, omega = read_field(omega_path, grid)
    return State(rho, omega, t_rho if t is None else t), contour


def _lemmas_at(
    state: State,
    contour: Contour,
    nu: float,
    label: str,
) -> tuple[list[LemmaReport], list[str]]:
    """
    Both lemma checks on the simulation grid with Omega = nu * omega(t).
    Evaluations the grid cannot support are skipped.
    """
    reports, skipped = [], []
    omega = nu * state.omega
    checks = (
        ("curvature", curvature_lemma_params, check_lemma41),
        ("perimeter", perimeter_lemma_params, check_lemma42),
    )
    for lemma, make_params, check in checks:
        choice: OmegaChoice = "snapshot"
        try:
            params, _ = make_params(contour, choice, grid=state.grid)
            reports.append(check(contour, params, label, state.rho, omega))
        except (GeometryError, InvariantFailure, NumericalAbort) as e:
            skipped.append(f"{lemma} at {label}: {e}")
            logger.warning("skipped %s lemma evaluation at %s: %s", lemma, label, e)
    return reports, skipped


async def diagnose(run_dir: Path) -> DiagnoseOutcome:
    """
    Rebuild diagnostics from the snapshots of a run directory, integrate the
    cumulative quantities over snapshot times, and evaluate both lemmas at
    the low-dissipation times that have snapshots.

    :raises FormatError: If the directory lacks a config echo or snapshots
    """
    config = load_config(run_dir / CONFIG_ECHO, RunConfig)
    assert isinstance(config, RunConfig)
    grid = config.grid.build()
    nu = config.solver.nu
    epsilon = resolve_epsilon(config.solver.settings(), grid)

    indices = _snapshot_indices(run_dir)
    if not indices:
        raise FormatError("no snapshots to diagnose", run_dir / SNAPSHOT_DIR)

    loaded = [_load_snapshot(run_dir, index, grid) for index in indices]
    samples = await gather_limited(
        get_workers(),
        [(sample_record, (state, nu, contour, epsilon)) for state, contour in loaded],
    )
    records = accumulate(samples, nu)

    schedule = covered_schedule(records, config.experiment.schedule_base, config.experiment.schedule_count)
    low = extract_low_dissipation_times(records, schedule)

    by_time = {state.t: (state, contour) for state, contour in loaded}
    reports: list[LemmaReport] = []
    skipped: list[str] = []
    for entry in low:
        state, contour = by_time[entry.t]
        found, missed = await run_in_thread(_lemmas_at, state, contour, nu, f"t={entry.t:.6g}")
        reports.extend(found)
        skipped.extend(missed)

    (run_dir / DIAGNOSE_CSV).write_text(
        format_rows((r.as_row() for r in records), DiagnosticsRecord.columns())
    )
    (run_dir / DIAGNOSE_LEMMAS_CSV).write_text(
        format_rows((r.as_row() for r in reports), LemmaReport.columns())
    )

    bound = lemma31_bound_check(records, nu)
    violations = tolerance_violations(records, config.tolerances) + bound.problems()

    failures = hard_invariant_failures(records, config.tolerances)
    failures.extend(f"{r.lemma} at {r.shape}: {'; '.join(r.failures)}" for r in reports if not r.passed)
    return DiagnoseOutcome(
        records=records,
        low_dissipation=low,
        reports=reports,
        skipped=skipped,
        failures=failures,
        violations=violations,
        dissipation_bound=bound,
    )

