import numpy as np
import pytest

from bqlab.config import ToleranceSection
from bqlab.contour import circle
from bqlab.diagnostics import (
    DiagnosticsAccumulator,
    DiagnosticsRecord,
    accumulate,
    covered_schedule,
    epp_identity_residual,
    extract_low_dissipation_times,
    geometric_schedule,
    growth_rows,
    growth_summary,
    hard_invariant_failures,
    lemma31_bound_check,
    sample_record,
    tolerance_violations,
)
from bqlab.solver import State


def record(t: float, **values) -> DiagnosticsRecord:
    base = dict(
        t=t, potential_energy=1.0, kinetic_energy=0.0, ep_prime=0.0, enstrophy=0.0,
        grad_u_sq=0.0, a_term=0.0, b_term=0.0, b_term_alt=0.0, grad_term=0.0,
        hdot1_sq=0.0, h_neg2=0.0, torus_chain_bound=0.0, rho_l2=1.0, rho_max=1.0,
        rho_min=-1.0, omega_mean=0.0, parity_defect=0.0, field_area=1.0,
    )
    base.update(values)
    return DiagnosticsRecord(**base)


class TestSampleRecord:
    def test_vortex_array_energies(self, square_grid):
        """omega = 2 sin x1 sin x2 has E_K = pi^2 and enstrophy 4 pi^2."""
        omega = square_grid.from_function(lambda x1, x2: 2 * np.sin(x1) * np.sin(x2))
        sample = sample_record(State(square_grid.zeros(), omega), nu=0.1)

        assert sample.kinetic_energy == pytest.approx(np.pi ** 2, rel=1e-10)
        assert sample.enstrophy == pytest.approx(4 * np.pi ** 2, rel=1e-10)
        assert sample.grad_u_sq == pytest.approx(sample.enstrophy, rel=1e-10)
        assert sample.potential_energy == 0.0
        assert sample.n_markers == 0
        assert np.isnan(sample.contour_area)

    def test_density_at_rest(self, square_grid):
        rho = square_grid.from_function(lambda x1, x2: np.sin(x2) + 0 * x1)
        sample = sample_record(State(rho, square_grid.zeros()), nu=0.5)

        assert sample.potential_energy == pytest.approx(4 * np.pi ** 2, rel=1e-2)
        assert sample.kinetic_energy == 0.0
        assert sample.ep_prime == 0.0
        assert sample.a_term == 0.0
        assert sample.hdot1_sq == pytest.approx(sample.grad_term)
        assert sample.parity_defect < 1e-12

    def test_b_forms_agree(self, square_grid):
        rho = square_grid.from_function(lambda x1, x2: np.cos(x1) * np.sin(x2) + 0.2 * np.sin(2 * x1) * np.sin(x2))
        omega = square_grid.from_function(lambda x1, x2: np.sin(x1) * np.sin(2 * x2))
        sample = sample_record(State(rho, omega), nu=0.3)

        assert sample.b_term == pytest.approx(sample.b_term_alt, rel=1e-10, abs=1e-14)
        assert hard_invariant_failures([sample], ToleranceSection()) == []

    def test_contour_geometry_columns(self, patch_grid):
        contour = circle(0.5, (4.0, 2.0), 256)
        state = State(patch_grid.zeros(), patch_grid.zeros())
        sample = sample_record(state, nu=1.0, contour=contour, epsilon=0.1)

        assert sample.contour_area == pytest.approx(np.pi * 0.25, rel=1e-6)
        assert sample.max_curvature == pytest.approx(2.0, rel=1e-3)
        assert sample.centroid_height == pytest.approx(2.0, rel=1e-6)
        assert sample.ep_contour == pytest.approx(2 * sample.contour_area * 2.0, rel=1e-6)
        assert sample.n_markers == 256
        assert sample.epsilon == 0.1


class TestAccumulator:
    def test_records_come_out_one_push_late(self):
        accumulator = DiagnosticsAccumulator(nu=1.0)
        assert accumulator.push(record(0.0)) == []
        first = accumulator.push(record(1.0))
        assert [r.t for r in first] == [0.0]
        second = accumulator.push(record(2.0))
        assert [r.t for r in second] == [1.0]
        assert [r.t for r in accumulator.finish()] == [2.0]

    def test_trapezoid_integrals(self):
        records = accumulate(
            [record(t, grad_u_sq=2.0, hdot1_sq=t, a_term=1.0) for t in (0.0, 1.0, 2.0)],
            nu=1.0,
        )
        assert [r.cum_dissipation for r in records] == [0.0, 2.0, 4.0]
        assert [r.cum_hdot1 for r in records] == [0.0, 0.5, 2.0]
        assert [r.cum_a for r in records] == [0.0, 1.0, 2.0]

    def test_rejects_time_going_backwards(self):
        accumulator = DiagnosticsAccumulator(nu=1.0)
        accumulator.push(record(1.0))
        with pytest.raises(ValueError, match="advance in time"):
            accumulator.push(record(1.0))

    def test_energy_residual_vanishes_for_balanced_decay(self):
        """E(t) = 1 - nu * g * t is exactly the trapezoid balance."""
        nu, g = 0.5, 0.8
        samples = [
            record(t, potential_energy=1.0 - nu * g * t, grad_u_sq=g)
            for t in np.linspace(0.0, 1.0, 6)
        ]
        records = accumulate(samples, nu)
        assert max(r.residual_energy for r in records) < 1e-14

    def test_epp_residual_on_quadratic_energy(self):
        """E_P = t^2 has E_P'' = 2, matched by A = 2."""
        samples = [record(t, potential_energy=t ** 2, a_term=2.0) for t in (0.0, 0.1, 0.2, 0.3)]
        records = accumulate(samples, nu=1.0)
        assert np.isnan(records[0].residual_epp)
        assert records[1].residual_epp == pytest.approx(0.0, abs=1e-10)
        assert records[2].residual_epp == pytest.approx(0.0, abs=1e-10)
        assert np.isnan(records[-1].residual_epp)

    def test_epp_residual_needs_uniform_spacing(self):
        records = [record(0.0), record(0.1), record(0.3)]
        assert np.isnan(epp_identity_residual(records))

    def test_epp_residual_needs_three_records(self):
        with pytest.raises(ValueError, match="three consecutive"):
            epp_identity_residual([record(0.0), record(0.1)])


class TestSchedule:
    def test_geometric_schedule(self):
        assert geometric_schedule(0.5, 8, 4.0) == [0.5, 1.0, 2.0]
        assert geometric_schedule(0.5, 2, 100.0) == [0.5, 1.0]
        assert geometric_schedule(0.5, 8, 0.9) == []

    def test_rejects_non_positive_base(self):
        with pytest.raises(ValueError, match="positive"):
            geometric_schedule(0.0, 3, 1.0)

    def test_covered_schedule_respects_record_span(self):
        records = [record(t) for t in np.linspace(0.0, 2.0, 21)]
        assert covered_schedule(records, 0.5, 8) == [0.5, 1.0]
        assert covered_schedule([], 0.5, 8) == []


class TestLowDissipationTimes:
    def test_picks_window_minimum(self):
        times = np.linspace(0.0, 2.0, 21)
        records = [record(t, enstrophy=(t - 0.7) ** 2 + 1.0) for t in times]
        (entry,) = extract_low_dissipation_times(records, [0.5])

        assert entry.t == pytest.approx(0.7)
        assert entry.value == pytest.approx(1.0)
        assert entry.value <= entry.window_mean
        assert entry.within_bound
        assert entry.scaled == pytest.approx(0.7 ** (1 / 6))

    def test_ties_go_to_earliest(self):
        records = [record(t, enstrophy=1.0) for t in np.linspace(0.0, 2.0, 21)]
        (entry,) = extract_low_dissipation_times(records, [1.0])
        assert entry.t == pytest.approx(1.0)

    def test_uncovered_window(self):
        records = [record(t) for t in np.linspace(0.0, 1.0, 11)]
        with pytest.raises(ValueError, match="do not cover"):
            extract_low_dissipation_times(records, [1.0])


class TestGrowth:
    def test_running_maxima(self):
        records = [
            record(t, max_curvature=k, horizontal_extent=e, n_markers=64)
            for t, k, e in ((0.0, 2.0, 1.0), (1.0, 3.0, 1.5), (2.0, 2.5, 1.2))
        ]
        rows = growth_rows(records)

        assert [r.running_max_curvature for r in rows] == [2.0, 3.0, 3.0]
        assert [r.running_max_extent for r in rows] == [1.0, 1.5, 1.5]
        assert np.isnan(rows[0].curvature_scaled)
        assert rows[2].curvature_scaled == pytest.approx(3.0 / 2 ** (1 / 6))

        summary = growth_summary(records)
        assert summary.kappa_factor == pytest.approx(1.25)
        assert summary.extent_factor == pytest.approx(1.2)

    def test_summary_needs_geometry(self):
        with pytest.raises(ValueError, match="no contour geometry"):
            growth_summary([record(0.0)])


class TestChecks:
    def test_sound_records_pass(self):
        records = accumulate([record(t) for t in (0.0, 0.1, 0.2)], nu=1.0)
        assert hard_invariant_failures(records, ToleranceSection()) == []
        assert tolerance_violations(records, ToleranceSection()) == []

    def test_negative_potential_energy(self):
        failures = hard_invariant_failures([record(0.0, potential_energy=-1.0)], ToleranceSection())
        assert any("negative potential energy" in f for f in failures)

    def test_b_forms_disagree(self):
        failures = hard_invariant_failures([record(0.0, b_term=1.0, b_term_alt=1.1)], ToleranceSection())
        assert any("B forms" in f for f in failures)

    def test_cauchy_schwarz_bound(self):
        failures = hard_invariant_failures(
            [record(0.0, ep_prime=2.0, kinetic_energy=0.5, rho_l2=1.0)], ToleranceSection()
        )
        assert any("Cauchy-Schwarz" in f for f in failures)

    def test_tolerance_violations_name_the_residual(self):
        records = [record(0.0, residual_energy=0.0), record(0.1, residual_energy=1e-3)]
        violations = tolerance_violations(records, ToleranceSection())
        assert len(violations) == 1
        assert violations[0].startswith("energy residual")

    def test_rho_drift(self):
        records = [record(0.0, rho_l2=1.0), record(0.1, rho_l2=1.1)]
        assert any("rho L2 drift" in v for v in tolerance_violations(records, ToleranceSection()))


class TestLemma31Bound:
    def test_monotone_plateau(self):
        t = np.linspace(0.0, 5.0, 51)
        records = [
            record(ti, cum_hdot1=1 - np.exp(-ti), cum_dissipation=2 * (1 - np.exp(-ti)))
            for ti in t
        ]
        report = lemma31_bound_check(records, nu=1.0)

        assert report.monotone_hdot1 and report.monotone_dissipation
        assert report.finite
        assert report.plateau_hdot1 == pytest.approx(1.0, rel=1e-3)
        assert report.constant_hdot1 == pytest.approx(report.plateau_hdot1 / 2)

    def test_short_series_falls_back_to_final_value(self):
        records = [record(t, cum_hdot1=t) for t in (0.0, 0.1, 0.2)]
        report = lemma31_bound_check(records, nu=0.5)
        assert report.plateau_hdot1 == pytest.approx(0.2)
        assert report.constant_hdot1 == pytest.approx(0.2 / 3)

    def test_sound_series_has_no_problems(self):
        records = [record(t, cum_hdot1=t, cum_dissipation=2 * t) for t in (0.0, 0.1, 0.2)]
        assert lemma31_bound_check(records, nu=1.0).problems() == []

    def test_decreasing_series_is_reported(self):
        records = [record(t, cum_dissipation=c) for t, c in ((0.0, 0.0), (0.1, 0.3), (0.2, 0.1))]
        report = lemma31_bound_check(records, nu=1.0)
        assert not report.monotone_dissipation
        assert report.problems() == ["cumulative dissipation is not nondecreasing"]

    def test_non_finite_series_is_reported(self):
        records = [record(t, cum_hdot1=h) for t, h in ((0.0, 0.0), (0.1, float("inf")))]
        report = lemma31_bound_check(records, nu=1.0)
        assert "cumulative integrals are not finite" in report.problems()
