from dataclasses import replace

import numpy as np
import pytest

from bqlab.contour import InscribedDisk, circle, ellipse, normalize
from bqlab.errors import GeometryError, InvariantFailure, LemmaPreconditionError
from bqlab.lemmas import (
    CURVATURE_LHS_CONSTANT,
    CURVATURE_LHS_STATED,
    CurvatureLemmaParams,
    LemmaReport,
    PerimeterLemmaParams,
    PestovIoninReport,
    TestFunction,
    build_f_curvature,
    check_lemma41,
    check_lemma42,
    confinement_failures,
    curvature_g,
    curvature_h,
    curvature_lemma_params,
    duality_norms,
    find_nstar,
    lemma_grid,
    patch_density,
    perimeter_g,
    perimeter_h,
    perimeter_lemma_params,
    pestov_ionin_check,
    pestov_ionin_report,
)
from bqlab.spectral import inner, inverse_laplacian, partial_x


@pytest.fixture(scope="module")
def unit_disk():
    return circle(1 / np.sqrt(np.pi), (0.0, 1.0), 256)


@pytest.fixture(scope="module")
def curvature_setup(unit_disk):
    return curvature_lemma_params(unit_disk, "mu", cells_per_radius=16)


@pytest.fixture(scope="module")
def perimeter_setup(unit_disk):
    return perimeter_lemma_params(unit_disk, "mu", cells_per_radius=16)


def finite_difference(profile, x, nu, h=1e-6):
    return (profile(x + h, nu) - profile(x - h, nu)) / (2 * h)


class TestConstants:
    def test_curvature_constants(self):
        assert CURVATURE_LHS_CONSTANT == pytest.approx(0.73906, abs=1e-5)
        assert CURVATURE_LHS_STATED == pytest.approx(2.74232, abs=1e-5)


class TestProfiles:
    def test_curvature_g_shape(self):
        r, n_star = 0.5, 2
        g = curvature_g(r, n_star)
        x = np.array([-0.1, 0.0, r, 1.0, 2 * r * n_star, 2 * r * n_star + r, 3.0])
        np.testing.assert_allclose(g(x), [0, 0, 1, 1, 1, 0, 0], atol=1e-14)
        assert g.sup(1) == pytest.approx(np.pi / (2 * r), rel=1e-6)
        assert g.integrate(lambda s: g(s, 1)) == pytest.approx(0.0, abs=1e-12)

    def test_curvature_g_derivatives(self):
        g = curvature_g(0.5, 2)
        x = np.array([0.13, 0.31, 0.8, 2.2, 2.41])
        np.testing.assert_allclose(g(x, 1), finite_difference(g, x, 0), atol=1e-6)
        np.testing.assert_allclose(g(x, 2), finite_difference(g, x, 1), atol=1e-5)

    def test_curvature_h_bump(self):
        r, b = 0.4, 1.0
        h = curvature_h(r, b)
        np.testing.assert_allclose(h(np.array([b - r, b, b + r])), [0, 1, 0], atol=1e-14)
        assert h.integrate(h) == pytest.approx(r, rel=1e-12)

    def test_perimeter_g(self):
        L, A = 2.0, 1.0
        w = 1 / (32 * A)
        g = perimeter_g(L, A)
        np.testing.assert_allclose(g(np.array([0.0, w, L, 2 * L])), [0, w / 2, L - w, 0], atol=1e-12)
        assert g.sup(0) <= L
        assert g.sup(1) == pytest.approx(1.0, rel=1e-9)
        assert g.sup(2) <= 16 * np.pi * A * (1 + 1e-9)

        x = np.array([0.01, 0.5, 1.99, 2.01, 3.5])
        np.testing.assert_allclose(g(x, 1), finite_difference(g, x, 0), atol=1e-6)

    def test_perimeter_h(self):
        L, A = 2.0, 1.0
        v = 1 / (4 * L)
        h = perimeter_h(L, A)
        np.testing.assert_allclose(h(np.array([0.0, v, 2.0, 4 * A, 4 * A + v])), [0, 1, 1, 1, 0], atol=1e-12)
        assert h.sup(1) == pytest.approx(2 * np.pi * L, rel=1e-4)
        assert h.sup(2) == pytest.approx(8 * np.pi ** 2 * L ** 2, rel=1e-4)


class TestLemmaGrid:
    def test_power_of_two_cells(self, unit_disk):
        grid, placed, shift = lemma_grid(unit_disk, (0.0, 2.0, 1.6), (0.05, 0.05))
        for n in (grid.nx, grid.ny):
            assert n >= 8 and n & (n - 1) == 0
        assert grid.hx <= 0.05 and grid.hy <= 0.05
        min_x, _, max_x, _ = placed.bounds
        assert 0 < min_x and max_x < grid.lx
        assert placed.centroid[0] == pytest.approx(unit_disk.centroid[0] + shift)

    def test_too_coarse(self, unit_disk):
        with pytest.raises(GeometryError, match="grid too coarse"):
            lemma_grid(unit_disk, (0.0, 2.0, 1.6), (1e-3, 1e-3), max_cells=64)


class TestNStar:
    def test_disk_translate_clears_itself(self, unit_disk):
        disk = InscribedDisk(center=(0.0, 1.0), radius=0.99 / np.sqrt(np.pi), lattice_radius=0.5, lattice_spacing=0.01)
        n_star, overlaps = find_nstar(unit_disk, disk)
        assert n_star == 1
        assert overlaps[0] <= disk.radius ** 2 / 16

    def test_elongated_patch_needs_more_translates(self):
        patch = normalize(ellipse(4.0, 0.5, (0.0, 0.0), 512), 1.0, (0.0, 1.0))
        disk = InscribedDisk(center=patch.centroid, radius=0.95 * 1 / np.sqrt(8 * np.pi), lattice_radius=0.0, lattice_spacing=0.0)
        n_star, overlaps = find_nstar(patch, disk)
        assert n_star > 1
        assert len(overlaps) == n_star
        assert all(o > disk.radius ** 2 / 16 for o in overlaps[:-1])

    def test_disk_outside_contour(self, unit_disk):
        disk = InscribedDisk(center=(3.0, 1.0), radius=0.2, lattice_radius=0.0, lattice_spacing=0.0)
        with pytest.raises(LemmaPreconditionError, match="not inside"):
            find_nstar(unit_disk, disk)


class TestParams:
    def test_radius_must_be_below_one(self, patch_grid):
        with pytest.raises(LemmaPreconditionError):
            CurvatureLemmaParams(r=1.2, b=2.0, center_x1=4.0, n_star=1, grid=patch_grid, omega_choice="mu")

    def test_n_star_bound(self, patch_grid):
        with pytest.raises(InvariantFailure, match="exceeds"):
            CurvatureLemmaParams(r=0.5, b=2.0, center_x1=4.0, n_star=200, grid=patch_grid, omega_choice="mu")

    def test_perimeter_product(self, patch_grid):
        with pytest.raises(LemmaPreconditionError, match="16 A L"):
            PerimeterLemmaParams(extent=0.1, moment=0.5, left=1.0, grid=patch_grid, omega_choice="mu")

    def test_curvature_params_place_patch(self, curvature_setup, unit_disk):
        params, placed = curvature_setup
        assert params.r == pytest.approx(1 / np.sqrt(np.pi), rel=1e-3)
        assert params.n_star == 1
        assert params.r / params.grid.hx >= 16 * (1 - 1e-9)
        assert placed.area == pytest.approx(unit_disk.area)
        assert params.center_x1 == pytest.approx(placed.centroid[0], abs=1e-3)


class TestTestFunction:
    def test_norms_match_grid_sums(self, curvature_setup):
        params, _ = curvature_setup
        test = build_f_curvature(params)
        grid_grad = np.sqrt(inner(test.d1f, test.d1f) + inner(test.d2f, test.d2f))
        grid_lap = np.sqrt(inner(test.laplacian, test.laplacian))
        assert test.grad_l2 == pytest.approx(grid_grad, rel=1e-2)
        assert test.laplacian_l2 == pytest.approx(grid_lap, rel=0.1)

    def test_odd_in_x2(self, curvature_setup):
        params, _ = curvature_setup
        test = build_f_curvature(params)
        np.testing.assert_allclose(
            test.f.values, -params.grid.reflect(test.f.values), atol=1e-14
        )

    def test_support_outside_box(self, curvature_setup):
        params, _ = curvature_setup
        test = TestFunction(
            g=curvature_g(params.r, params.n_star),
            h=curvature_h(params.r, params.b),
            anchor=params.grid.lx - params.r,
            grid=params.grid,
        )
        with pytest.raises(GeometryError, match="support"):
            test.check_support()

    def test_coarse_grid_rejected(self, patch_grid):
        params = CurvatureLemmaParams(r=0.5, b=2.0, center_x1=4.0, n_star=1, grid=patch_grid, omega_choice="mu")
        with pytest.raises(GeometryError, match="grid too coarse"):
            build_f_curvature(params)


class TestDualityNorms:
    def test_choices(self, curvature_setup):
        params, placed = curvature_setup
        mu = patch_density(placed, params.grid)
        potential = partial_x(inverse_laplacian(mu))

        h1, l2 = duality_norms(mu, "zero")
        assert h1 > 0 and l2 == 0.0

        h1, l2 = duality_norms(mu, "mu")
        assert h1 == 0.0 and l2 > 0

        h1, l2 = duality_norms(mu, "snapshot", potential)
        assert h1 == pytest.approx(0.0, abs=1e-12)
        assert l2 == pytest.approx(duality_norms(mu, "mu")[1])

    def test_snapshot_needs_field(self, curvature_setup):
        params, placed = curvature_setup
        with pytest.raises(ValueError, match="needs the omega field"):
            duality_norms(patch_density(placed, params.grid), "snapshot")


class TestCurvatureCheck:
    @pytest.mark.parametrize("choice", ["zero", "mu"])
    def test_unit_disk_passes(self, curvature_setup, choice):
        params, placed = curvature_setup
        report = check_lemma41(placed, replace(params, omega_choice=choice), "disk")

        assert report.passed, report.failures
        assert report.lhs >= CURVATURE_LHS_CONSTANT * params.r * 0.98
        # g' >= 0 on the first ramp bounds lhs by 2 r, below the displayed constant
        assert report.lhs <= 2 * params.r
        assert report.lhs < report.stated_lower_bound
        assert report.ratio <= 1 + 1e-3
        assert report.lhs_grid == pytest.approx(report.lhs, rel=2e-2)
        assert report.mirror_defect < 1e-10

    def test_report_row(self, curvature_setup):
        params, placed = curvature_setup
        report = check_lemma41(placed, params, "disk")
        row = report.as_row()
        assert len(row) == len(LemmaReport.columns())
        assert row[LemmaReport.columns().index("passed")] is True
        assert report.lemma_constant == pytest.approx(
            params.r ** 3 / (report.norm_h1 + report.norm_l2)
        )


class TestPerimeterCheck:
    def test_unit_disk_passes(self, perimeter_setup):
        params, placed = perimeter_setup
        assert params.extent == pytest.approx(2 / np.sqrt(np.pi), rel=1e-4)
        assert params.moment == pytest.approx(1.0, rel=1e-6)
        assert confinement_failures(placed, params) == []

        report = check_lemma42(placed, params, "disk")
        assert report.passed, report.failures
        assert report.lhs >= 0.5
        assert report.moment == pytest.approx(1.0, rel=1e-6)

    def test_confinement_failure(self, unit_disk, patch_grid):
        params = PerimeterLemmaParams(extent=0.1, moment=1.0, left=-0.6, grid=patch_grid, omega_choice="mu")
        with pytest.raises(LemmaPreconditionError, match="confinement"):
            check_lemma42(unit_disk, params)


class TestPestovIonin:
    def test_circle_is_extremal(self, unit_disk):
        assert pestov_ionin_check(unit_disk) == pytest.approx(1.0, rel=1e-2)

    def test_ellipse_product(self):
        report = pestov_ionin_report(ellipse(2.0, 1.0, (0.0, 2.0), 512), "ellipse")
        assert report.inscribed_radius == pytest.approx(1.0, rel=1e-3)
        assert report.max_curvature == pytest.approx(2.0, rel=1e-2)
        assert report.product == pytest.approx(2.0, rel=1e-2)
        assert report.passed

    def test_measured_report_is_checked(self, unit_disk):
        report = PestovIoninReport(shape="dent", inscribed_radius=0.5, max_curvature=1.5, lattice_radius=0.5)
        with pytest.raises(InvariantFailure, match="0.75 < 1"):
            pestov_ionin_check(unit_disk, report)
