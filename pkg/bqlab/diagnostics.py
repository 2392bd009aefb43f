"""
Per-output diagnostics, cumulative integrals and identity residuals.

A record is sampled from a state (and optionally the tracked contour), then an
accumulator threads records through time to fill the integrals and residuals
that need neighbours.
"""
import logging
import warnings
from dataclasses import asdict, dataclass, fields, replace
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np
from scipy.optimize import OptimizeWarning, curve_fit

from bqlab.contour import Contour, measure
from bqlab.solver import State, parity_defect
from bqlab.spectral import (
    RealField,
    biot_savart,
    hs_norm,
    inner,
    inverse_laplacian,
    laplacian,
    partial_x,
    partial_y,
)

if TYPE_CHECKING:
    from bqlab.config import ToleranceSection

logger = logging.getLogger(__name__)

UNIFORM_SPACING_TOLERANCE = 1e-9


@dataclass(frozen=True)
class DiagnosticsRecord:
    t: float
    potential_energy: float
    kinetic_energy: float
    ep_prime: float
    enstrophy: float
    grad_u_sq: float
    a_term: float
    b_term: float
    b_term_alt: float
    grad_term: float
    hdot1_sq: float
    h_neg2: float
    torus_chain_bound: float
    rho_l2: float
    rho_max: float
    rho_min: float
    omega_mean: float
    parity_defect: float
    field_area: float
    epsilon: float = float("nan")
    contour_area: float = float("nan")
    contour_perimeter: float = float("nan")
    max_curvature: float = float("nan")
    horizontal_extent: float = float("nan")
    inscribed_radius: float = float("nan")
    centroid_height: float = float("nan")
    ep_contour: float = float("nan")
    n_markers: int = 0
    cum_dissipation: float = 0.0
    cum_hdot1: float = 0.0
    cum_a: float = 0.0
    residual_energy: float = float("nan")
    residual_lemma31: float = float("nan")
    residual_epp: float = float("nan")

    @property
    def total_energy(self) -> float:
        return self.potential_energy + self.kinetic_energy

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def as_row(self) -> list[float | int]:
        return [getattr(self, name) for name in self.columns()]


def energies(state: State, u: tuple[RealField, RealField]) -> tuple[float, float, float]:
    """
    Potential energy, kinetic energy and the potential energy rate.

    :returns: (E_P, E_K, E_P') with E_P = int rho x2, E_K = 1/2 int |u|^2, E_P' = int rho u2
    """
    _, x2 = state.grid.mesh
    u1, u2 = u
    potential = float(np.sum(state.rho.values * x2) * state.grid.cell_area)
    kinetic = 0.5 * (inner(u1, u1) + inner(u2, u2))
    return potential, kinetic, inner(state.rho, u2)


def velocity_gradient_quadratic(u: tuple[RealField, RealField]) -> RealField:
    """
    sum_{i,j} d_i u_j d_j u_i.
    """
    u1, u2 = u
    d1u1 = partial_x(u1).values
    d1u2 = partial_x(u2).values
    d2u1 = partial_y(u1).values
    d2u2 = partial_y(u2).values
    return RealField(u1.grid, d1u1 ** 2 + 2 * d1u2 * d2u1 + d2u2 ** 2)


def AB_terms(state: State, u: tuple[RealField, RealField], nu: float) -> tuple[float, float, float]:
    """
    The nonlinear and viscous contributions to the second derivative of E_P.

    :returns: (A, B, B_alt) where A = -int Delta^{-1} d2 rho * sum d_i u_j d_j u_i,
        B = nu int rho Delta u2 and B_alt = -nu int d1 rho * omega, which agree
    """
    stream = inverse_laplacian(partial_y(state.rho))
    a_term = -inner(stream, velocity_gradient_quadratic(u))
    b_term = nu * inner(state.rho, laplacian(u[1]))
    b_term_alt = -nu * inner(partial_x(state.rho), state.omega)
    return a_term, b_term, b_term_alt


def sample_record(
    state: State,
    nu: float,
    contour: Contour | None = None,
    epsilon: float = float("nan"),
) -> DiagnosticsRecord:
    """
    Compute every instantaneous diagnostic at the state's time.

    :param state: Current state
    :param nu: Viscosity
    :param contour: Tracked patch boundary, geometry columns stay NaN without it
    :param epsilon: Interface width, recorded for reference
    """
    u = biot_savart(state.omega)
    potential, kinetic, ep_prime = energies(state, u)
    a_term, b_term, b_term_alt = AB_terms(state, u, nu)

    d1_potential = partial_x(inverse_laplacian(state.rho))
    enstrophy = inner(state.omega, state.omega)
    hdot1_sq = hs_norm(d1_potential - nu * state.omega, 1) ** 2
    grad_u_sq = sum(
        inner(d, d)
        for component in u
        for d in (partial_x(component), partial_y(component))
    )

    geometry = {}
    if contour is not None:
        shape = measure(contour)
        geometry = dict(
            contour_area=shape.area,
            contour_perimeter=shape.perimeter,
            max_curvature=shape.max_abs_curvature,
            horizontal_extent=shape.horizontal_extent,
            inscribed_radius=shape.inscribed_radius,
            centroid_height=shape.centroid_height,
            ep_contour=2 * shape.area * shape.centroid_height,
            n_markers=contour.n_markers,
        )

    return DiagnosticsRecord(
        t=state.t,
        potential_energy=potential,
        kinetic_energy=kinetic,
        ep_prime=ep_prime,
        enstrophy=enstrophy,
        grad_u_sq=grad_u_sq,
        a_term=a_term,
        b_term=b_term,
        b_term_alt=b_term_alt,
        grad_term=hs_norm(d1_potential, 1) ** 2,
        hdot1_sq=hdot1_sq,
        h_neg2=hs_norm(partial_x(state.rho), -2) ** 2,
        torus_chain_bound=2 * (nu ** 2 * enstrophy + hdot1_sq / state.grid.k_min ** 2),
        rho_l2=float(np.sqrt(inner(state.rho, state.rho))),
        rho_max=float(state.rho.values.max()),
        rho_min=float(state.rho.values.min()),
        omega_mean=float(state.omega.values.mean()),
        parity_defect=max(parity_defect(state.rho, "odd"), parity_defect(state.omega, "odd")),
        field_area=float(state.rho.values[:, state.grid.ny // 2 + 1:].sum() * state.grid.cell_area),
        epsilon=epsilon,
        **geometry,
    )


def _uniform(t0: float, t1: float, t2: float) -> bool:
    spacing = max(abs(t1 - t0), abs(t2 - t1))
    return abs((t1 - t0) - (t2 - t1)) <= UNIFORM_SPACING_TOLERANCE * max(spacing, 1.0)


def epp_identity_residual(records: Sequence[DiagnosticsRecord]) -> float:
    """
    Relative mismatch between a centered second difference of E_P and A + B - |grad d1 Delta^{-1} rho|^2,
    evaluated at the middle of the last three records. NaN when the spacing is not uniform.
    """
    if len(records) < 3:
        raise ValueError("the E_P'' residual needs three consecutive records")

    before, mid, after = records[-3:]
    if not _uniform(before.t, mid.t, after.t):
        return float("nan")

    dt = mid.t - before.t
    second = (after.potential_energy - 2 * mid.potential_energy + before.potential_energy) / dt ** 2
    predicted = mid.a_term + mid.b_term - mid.grad_term
    numerator = abs(second - predicted)
    if numerator == 0:
        return 0.0
    return numerator / (abs(mid.a_term) + abs(mid.b_term) + mid.grad_term)


def lemma31_identity_residual(records: Sequence[DiagnosticsRecord], nu: float) -> float:
    """
    Relative mismatch of the integrated E_P' identity between the first and
    last record, which must carry their cumulative integrals.
    """
    first, last = records[0], records[-1]
    lhs = last.ep_prime + nu / 2 * last.enstrophy + last.cum_hdot1
    rhs = first.ep_prime + nu / 2 * first.enstrophy + last.cum_a
    return abs(lhs - rhs) / max(1.0, abs(rhs))


class DiagnosticsAccumulator:
    """
    Threads records through time: trapezoid integrals of |grad u|^2,
    |d1 Delta^{-1} rho - nu omega|_{H^1}^2 and A, then the energy and integrated
    identity residuals. The E_P'' residual of a record needs its successor, so
    records come out one push late.
    """
    def __init__(self, nu: float):
        self.nu = nu
        self.records: list[DiagnosticsRecord] = []

    @property
    def initial(self) -> DiagnosticsRecord | None:
        return self.records[0] if self.records else None

    def push(self, sample: DiagnosticsRecord) -> list[DiagnosticsRecord]:
        """
        Add the next sample and return the records that are now complete.
        """
        if self.records:
            previous = self.records[-1]
            if sample.t <= previous.t:
                raise ValueError(f"records must advance in time ({sample.t} after {previous.t})")
            dt = sample.t - previous.t
            sample = replace(
                sample,
                cum_dissipation=previous.cum_dissipation + dt / 2 * (previous.grad_u_sq + sample.grad_u_sq),
                cum_hdot1=previous.cum_hdot1 + dt / 2 * (previous.hdot1_sq + sample.hdot1_sq),
                cum_a=previous.cum_a + dt / 2 * (previous.a_term + sample.a_term),
            )

        initial = self.initial or sample
        reference = initial.total_energy if initial.total_energy != 0 else 1.0
        sample = replace(
            sample,
            residual_energy=abs(
                sample.total_energy + self.nu * sample.cum_dissipation - initial.total_energy
            ) / abs(reference),
            residual_lemma31=lemma31_identity_residual([initial, sample], self.nu),
        )
        self.records.append(sample)

        if len(self.records) < 2:
            return []
        if len(self.records) >= 3:
            self.records[-2] = replace(
                self.records[-2], residual_epp=epp_identity_residual(self.records)
            )
        return [self.records[-2]]

    def finish(self) -> list[DiagnosticsRecord]:
        """
        Release the last record, whose E_P'' residual stays NaN.
        """
        return self.records[-1:] if self.records else []


def accumulate(samples: Iterable[DiagnosticsRecord], nu: float) -> list[DiagnosticsRecord]:
    accumulator = DiagnosticsAccumulator(nu)
    completed = []
    for sample in samples:
        completed.extend(accumulator.push(sample))
    completed.extend(accumulator.finish())
    return completed


def geometric_schedule(base: float, count: int, t_end: float) -> list[float]:
    """
    T_n = base * 2^n for n < count, keeping windows [T_n, 2 T_n] that end by t_end.
    """
    if not base > 0:
        raise ValueError(f"schedule base must be positive, got {base}")
    return [
        base * 2 ** n
        for n in range(count)
        if 2 * base * 2 ** n <= t_end * (1 + 1e-12)
    ]


@dataclass(frozen=True)
class LowDissipationTime:
    index: int
    window_start: float
    t: float
    value: float
    window_mean: float
    chebyshev_bound: float
    max_curvature: float
    horizontal_extent: float

    @property
    def within_bound(self) -> bool:
        return self.value <= self.chebyshev_bound * (1 + 1e-12)

    @property
    def scaled(self) -> float:
        """(n * t_n)^{1/6} with n counted from 1."""
        return ((self.index + 1) * self.t) ** (1 / 6)

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls)] + ["within_bound", "scaled"]

    def as_row(self) -> list[float | int | bool]:
        return [getattr(self, name) for name in self.columns()]


def _dissipation_value(record: DiagnosticsRecord) -> float:
    return float(np.sqrt(record.enstrophy) + np.sqrt(record.hdot1_sq))


def extract_low_dissipation_times(
    records: Sequence[DiagnosticsRecord],
    schedule: Sequence[float],
) -> list[LowDissipationTime]:
    """
    For each T_n pick the record in [T_n, 2 T_n] minimizing |omega|_2 + |d1 Delta^{-1} rho - nu omega|_{H^1}.
    Ties go to the earliest record.

    :raises ValueError: When a window is not covered by the records
    """
    times = np.array([r.t for r in records])
    values = np.array([_dissipation_value(r) for r in records])
    squares = np.array([r.enstrophy + r.hdot1_sq for r in records])
    results = []

    for n, start in enumerate(schedule):
        end = 2 * start
        tol = 1e-9 * max(1.0, end)
        if len(times) == 0 or times[0] > start + tol or times[-1] < end - tol:
            raise ValueError(f"records do not cover the window [{start:g}, {end:g}]")

        window = np.flatnonzero((times >= start - tol) & (times <= end + tol))
        best = window[np.argmin(values[window])]
        record = records[best]
        results.append(LowDissipationTime(
            index=n,
            window_start=start,
            t=record.t,
            value=float(values[best]),
            window_mean=float(values[window].mean()),
            chebyshev_bound=float(np.sqrt(2 * squares[window].mean())),
            max_curvature=record.max_curvature,
            horizontal_extent=record.horizontal_extent,
        ))

    return results


def covered_schedule(records: Sequence[DiagnosticsRecord], base: float, count: int) -> list[float]:
    """Schedule entries whose whole window the records span."""
    if not records:
        return []
    return [
        start for start in geometric_schedule(base, count, records[-1].t)
        if records[0].t <= start * (1 + 1e-9)
    ]


@dataclass(frozen=True)
class GrowthSummary:
    kappa_initial: float
    kappa_final: float
    extent_initial: float
    extent_final: float

    @property
    def kappa_factor(self) -> float:
        return self.kappa_final / self.kappa_initial

    @property
    def extent_factor(self) -> float:
        return self.extent_final / self.extent_initial


def growth_summary(records: Sequence[DiagnosticsRecord]) -> GrowthSummary:
    tracked = [r for r in records if r.n_markers > 0]
    if not tracked:
        raise ValueError("no contour geometry in the records")
    return GrowthSummary(
        kappa_initial=tracked[0].max_curvature,
        kappa_final=tracked[-1].max_curvature,
        extent_initial=tracked[0].horizontal_extent,
        extent_final=tracked[-1].horizontal_extent,
    )


@dataclass(frozen=True)
class GrowthRow:
    t: float
    max_curvature: float
    running_max_curvature: float
    horizontal_extent: float
    running_max_extent: float
    curvature_scaled: float
    extent_scaled: float

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def as_row(self) -> list[float]:
        return [getattr(self, name) for name in self.columns()]


def growth_rows(records: Sequence[DiagnosticsRecord]) -> list[GrowthRow]:
    """
    Running maxima of max|kappa| and L_t, and the same divided by t^{1/6}
    (NaN at t = 0).
    """
    tracked = [r for r in records if r.n_markers > 0]
    rows = []
    kappa, extent = -np.inf, -np.inf

    for record in tracked:
        kappa = max(kappa, record.max_curvature)
        extent = max(extent, record.horizontal_extent)
        scale = record.t ** (1 / 6) if record.t > 0 else float("nan")
        rows.append(GrowthRow(
            t=record.t,
            max_curvature=record.max_curvature,
            running_max_curvature=kappa,
            horizontal_extent=record.horizontal_extent,
            running_max_extent=extent,
            curvature_scaled=kappa / scale,
            extent_scaled=extent / scale,
        ))

    return rows


@dataclass(frozen=True)
class Lemma31BoundReport:
    monotone_hdot1: bool
    monotone_dissipation: bool
    final_hdot1: float
    final_dissipation: float
    plateau_hdot1: float
    plateau_dissipation: float
    constant_hdot1: float
    constant_dissipation: float
    finite: bool

    def as_dict(self) -> dict:
        return asdict(self)

    def problems(self) -> list[str]:
        """
        Reasons the cumulative integrals cannot support a bound, empty when sound.
        """
        problems = []
        if not self.finite:
            problems.append("cumulative integrals are not finite")
        if not self.monotone_hdot1:
            problems.append("cumulative H^1 integral is not nondecreasing")
        if not self.monotone_dissipation:
            problems.append("cumulative dissipation is not nondecreasing")
        return problems


def _plateau(t: np.ndarray, y: np.ndarray) -> float:
    """
    Fit y ~ C - a exp(-t / tau) on the second half of the series and return C,
    falling back to the last value when the fit does not converge.
    """
    final = float(y[-1])
    tail = slice(len(t) // 2, None)
    tt, yy = t[tail], y[tail]
    if len(tt) < 4 or np.ptp(yy) == 0:
        return final

    def model(x, c, a, tau):
        return c - a * np.exp(-(x - tt[0]) / tau)

    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", OptimizeWarning)
            (c, _, tau), _ = curve_fit(
                model, tt, yy,
                p0=(final, final - yy[0], max(np.ptp(tt) / 3, 1e-12)),
                maxfev=5000,
            )
    except (RuntimeError, ValueError, OptimizeWarning):
        return final

    if not np.isfinite(c) or tau <= 0:
        return final
    return max(float(c), final)


def lemma31_bound_check(records: Sequence[DiagnosticsRecord], nu: float) -> Lemma31BoundReport:
    """
    Check the cumulative integrals are finite and nondecreasing, estimate their
    limits and the implied constants C / (1 + 1/nu).
    """
    t = np.array([r.t for r in records])
    hdot1 = np.array([r.cum_hdot1 for r in records])
    dissipation = np.array([r.cum_dissipation for r in records])

    def monotone(y: np.ndarray) -> bool:
        return bool(np.all(np.diff(y) >= -1e-12 * max(1.0, np.abs(y).max())))

    plateau_hdot1 = _plateau(t, hdot1)
    plateau_dissipation = _plateau(t, dissipation)
    return Lemma31BoundReport(
        monotone_hdot1=monotone(hdot1),
        monotone_dissipation=monotone(dissipation),
        final_hdot1=float(hdot1[-1]),
        final_dissipation=float(dissipation[-1]),
        plateau_hdot1=plateau_hdot1,
        plateau_dissipation=plateau_dissipation,
        constant_hdot1=plateau_hdot1 / (1 + 1 / nu),
        constant_dissipation=plateau_dissipation / (1 + 1 / nu),
        finite=bool(np.isfinite(hdot1).all() and np.isfinite(dissipation).all()),
    )


def hard_invariant_failures(
    records: Sequence[DiagnosticsRecord],
    tolerances: "ToleranceSection",
) -> list[str]:
    """
    Violations of the invariants a correct run satisfies regardless of
    resolution. An empty list means the run is sound.
    """
    failures: list[str] = []

    for previous, record in zip([None, *records], records):
        when = f"t={record.t:.6g}"
        if record.potential_energy < -1e-8:
            failures.append(f"negative potential energy {record.potential_energy:.3e} at {when}")
        if record.kinetic_energy < 0:
            failures.append(f"negative kinetic energy at {when}")
        if record.parity_defect > tolerances.parity * max(1.0, record.rho_max):
            failures.append(f"parity defect {record.parity_defect:.3e} at {when}")

        scale = max(abs(record.b_term), abs(record.b_term_alt), 1.0)
        if abs(record.b_term - record.b_term_alt) > tolerances.b_forms * scale:
            failures.append(f"B forms disagree by {abs(record.b_term - record.b_term_alt):.3e} at {when}")

        # |int rho u2| <= |rho|_2 |u2|_2 <= |rho|_2 sqrt(2 E_K)
        bound = record.rho_l2 * np.sqrt(2 * max(record.kinetic_energy, 0.0))
        if abs(record.ep_prime) > bound * (1 + 1e-9) + 1e-12:
            failures.append(f"E_P' exceeds its Cauchy-Schwarz bound at {when}")

        if not -1e-12 <= record.h_neg2 <= record.torus_chain_bound * (1 + 1e-9) + 1e-12:
            failures.append(f"H^-2 chain bound violated at {when}")

        if previous is not None:
            if record.cum_dissipation < previous.cum_dissipation or record.cum_hdot1 < previous.cum_hdot1:
                failures.append(f"cumulative integrals decreased at {when}")

    return failures


def tolerance_violations(
    records: Sequence[DiagnosticsRecord],
    tolerances: "ToleranceSection",
) -> list[str]:
    """
    Residuals and drifts above their configured tolerances. These flag
    accuracy rather than correctness.
    """
    if not records:
        return []

    initial = records[0]

    def worst(values: Iterable[float]) -> float:
        finite = [v for v in values if np.isfinite(v)]
        return max(finite, default=0.0)

    checks = {
        "energy residual": (worst(r.residual_energy for r in records), tolerances.energy),
        "integrated dissipation identity residual": (worst(r.residual_lemma31 for r in records), tolerances.lemma31),
        "E_P'' identity residual": (worst(r.residual_epp for r in records), tolerances.epp),
    }
    if initial.n_markers:
        checks["contour area drift"] = (
            worst(abs(r.contour_area - initial.contour_area) / initial.contour_area for r in records),
            tolerances.area,
        )
    if initial.rho_l2 > 0:
        checks["rho L2 drift"] = (
            worst(abs(r.rho_l2 - initial.rho_l2) / initial.rho_l2 for r in records),
            tolerances.rho_l2,
        )

    return [
        f"{name} {value:.3e} exceeds {tolerance:.1e}"
        for name, (value, tolerance) in checks.items()
        if value > tolerance
    ]
