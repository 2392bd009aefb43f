"""
Constructive checks of the curvature and perimeter lower bounds.

Each check builds an explicit separable test function ``f = g(x1) h(x2)``,
extended oddly across the symmetry axis, and compares the two sides of the
duality estimate

    int mu d1 f <= |d1 Delta^{-1} mu - Omega|_{H^1} |grad f|_2 + |Omega|_2 |Delta f|_2

for the odd patch density mu and a comparison field Omega.
"""
import logging
from dataclasses import dataclass, field, fields
from functools import cached_property
from typing import Callable, Literal, Sequence

import numpy as np
import shapely

from bqlab.constants import (
    CURVATURE_LEMMA_TOLERANCE,
    DUALITY_TOLERANCE,
    PERIMETER_LEMMA_TOLERANCE,
    PESTOV_IONIN_TOLERANCE,
    TINY,
)
from bqlab.contour import (
    Contour,
    InscribedDisk,
    curvature_profile,
    horizontal_extent,
    inscribed_disk,
    overlap_area,
    region_area,
)
from bqlab.errors import GeometryError, InvariantFailure, LemmaPreconditionError
from bqlab.spectral import (
    Grid,
    RealField,
    hs_norm,
    inner,
    inverse_laplacian,
    l2_norm,
    partial_x,
)
from bqlab.tracker import rasterize

logger = logging.getLogger(__name__)

OmegaChoice = Literal["zero", "mu", "snapshot"]
Function1D = Callable[[np.ndarray], np.ndarray]

# Lower bound of int mu d1 f per unit inscribed radius, and the published
# value, which no domain can reach since lhs is at most 2 r.
CURVATURE_LHS_CONSTANT = 2 * (np.sqrt(14) / 8 - np.pi / 32)
CURVATURE_LHS_STATED = 2 * (np.pi * np.sqrt(14) / 8 - np.pi / 32)
PERIMETER_LHS_BOUND = 0.5
MIN_CELLS_PER_RADIUS = 8
MIN_CELLS_PER_RAMP = 4
QUADRATURE_NODES, QUADRATURE_WEIGHTS = np.polynomial.legendre.leggauss(16)
QUADRATURE_PIECES = 16
CONTOUR_REFINE = 16


# 1-D profiles

@dataclass(frozen=True)
class Profile:
    """
    Piecewise smooth function of one variable with its first two
    derivatives. `breakpoints` lists every point where a derivative may jump;
    the function vanishes outside [breakpoints[0], breakpoints[-1]].
    """
    value: Function1D
    first: Function1D
    second: Function1D
    breakpoints: tuple[float, ...]

    def __call__(self, x: np.ndarray, nu: int = 0) -> np.ndarray:
        return (self.value, self.first, self.second)[nu](np.asarray(x, dtype=float))

    def integrate(self, integrand: Function1D) -> float:
        """Gauss-Legendre quadrature of `integrand` piece by piece."""
        edges = np.unique(np.asarray(self.breakpoints, dtype=float))
        total = 0.0
        for a, b in zip(edges[:-1], edges[1:]):
            sub = np.linspace(a, b, QUADRATURE_PIECES + 1)
            lo, hi = sub[:-1, None], sub[1:, None]
            half = (hi - lo) / 2
            nodes = (lo + hi) / 2 + half * QUADRATURE_NODES
            total += float(np.sum(half * QUADRATURE_WEIGHTS * integrand(nodes)))
        return total

    def sup(self, nu: int = 0, samples: int = 20001) -> float:
        x = np.linspace(self.breakpoints[0], self.breakpoints[-1], samples)
        return float(np.abs(self(x, nu)).max())


def _ramp(s: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(1 - cos(pi s)) / 2 and its derivatives, for s in [0, 1]."""
    return (
        (1 - np.cos(np.pi * s)) / 2,
        np.pi / 2 * np.sin(np.pi * s),
        np.pi ** 2 / 2 * np.cos(np.pi * s),
    )


def curvature_g(r: float, n_star: int) -> Profile:
    """
    0 up to 0, cosine rise over (0, r], 1 up to 2 r N*, cosine fall over
    (2 r N*, 2 r N* + r], then 0.
    """
    top = 2 * r * n_star
    end = top + r

    def pieces(x: np.ndarray, nu: int) -> np.ndarray:
        rise = _ramp(np.clip(x / r, 0, 1))[nu]
        fall = _ramp(np.clip((x - top) / r, 0, 1))
        # descending ramp is 1 - rise: value flips, derivatives change sign
        descend = 1 - fall[0] if nu == 0 else -fall[nu]
        scale = r ** -nu
        out = np.zeros_like(x)
        out = np.where((x > 0) & (x <= r), rise * scale, out)
        out = np.where((x > r) & (x <= top), 1.0 if nu == 0 else 0.0, out)
        out = np.where((x > top) & (x <= end), descend * scale, out)
        return out

    return Profile(
        value=lambda x: pieces(x, 0),
        first=lambda x: pieces(x, 1),
        second=lambda x: pieces(x, 2),
        breakpoints=(0.0, r, top, end),
    )


def curvature_h(r: float, b: float) -> Profile:
    """Cosine bump of half-width r centred at b, peak value 1."""
    def pieces(x: np.ndarray, nu: int) -> np.ndarray:
        s = (x - (b - r)) / (2 * r)
        inside = (s > 0) & (s < 1)
        # (1 + cos(pi (x - b) / r)) / 2 is the rise over (b - r, b) and the fall after b
        phase = np.pi * (x - b) / r
        values = (
            (1 + np.cos(phase)) / 2,
            -np.pi / (2 * r) * np.sin(phase),
            -np.pi ** 2 / (2 * r ** 2) * np.cos(phase),
        )[nu]
        return np.where(inside, values, 0.0)

    return Profile(
        value=lambda x: pieces(x, 0),
        first=lambda x: pieces(x, 1),
        second=lambda x: pieces(x, 2),
        breakpoints=(b - r, b + r),
    )


def perimeter_g(extent: float, moment: float) -> Profile:
    """
    g with g(0) = 0, g' rising to 1 over (0, w), g' = 1 on (w, L - w),
    g' falling to 0 over (L - w, L), and g(x) = g(2L - x) beyond L, where
    w = 1 / (32 A).
    """
    L, w = extent, 1 / (32 * moment)

    def slope(x: np.ndarray, nu: int) -> np.ndarray:
        """g' (nu = 0) or g'' (nu = 1) on [0, L]."""
        rise = _ramp(np.clip(x / w, 0, 1))
        fall = _ramp(np.clip((x - (L - w)) / w, 0, 1))
        out = np.where(x <= w, rise[nu] / w ** nu, 1.0 if nu == 0 else 0.0)
        descend = 1 - fall[0] if nu == 0 else -fall[1] / w
        return np.where(x >= L - w, descend, out)

    def primitive(x: np.ndarray) -> np.ndarray:
        """g on [0, L]."""
        up = x / 2 - w / (2 * np.pi) * np.sin(np.pi * x / w)
        t = x - (L - w)
        down = L - 1.5 * w + t / 2 + w / (2 * np.pi) * np.sin(np.pi * t / w)
        return np.where(x <= w, up, np.where(x >= L - w, down, x - w / 2))

    def pieces(x: np.ndarray, nu: int) -> np.ndarray:
        folded = np.where(x > L, 2 * L - x, x)
        inside = (x > 0) & (x < 2 * L)
        folded = np.clip(folded, 0, L)
        match nu:
            case 0:
                values = primitive(folded)
            case 1:
                values = np.where(x > L, -1.0, 1.0) * slope(folded, 0)
            case _:
                values = slope(folded, 1)
        return np.where(inside, values, 0.0)

    return Profile(
        value=lambda x: pieces(x, 0),
        first=lambda x: pieces(x, 1),
        second=lambda x: pieces(x, 2),
        breakpoints=(0.0, w, L - w, L, L + w, 2 * L - w, 2 * L),
    )


def perimeter_h(extent: float, moment: float) -> Profile:
    """
    h = 0 for x2 <= 0, cosine rise over (0, v), 1 on (v, 4A), cosine fall
    over (4A, 4A + v), where v = 1 / (4L).
    """
    v, top = 1 / (4 * extent), 4 * moment

    def pieces(x: np.ndarray, nu: int) -> np.ndarray:
        rise = _ramp(np.clip(x / v, 0, 1))[nu]
        fall = _ramp(np.clip((x - top) / v, 0, 1))
        descend = 1 - fall[0] if nu == 0 else -fall[nu]
        scale = v ** -nu
        out = np.zeros_like(x)
        out = np.where((x > 0) & (x <= v), rise * scale, out)
        out = np.where((x > v) & (x <= top), 1.0 if nu == 0 else 0.0, out)
        out = np.where((x > top) & (x < top + v), descend * scale, out)
        return out

    return Profile(
        value=lambda x: pieces(x, 0),
        first=lambda x: pieces(x, 1),
        second=lambda x: pieces(x, 2),
        breakpoints=(0.0, v, top, top + v),
    )


# Test functions

@dataclass(frozen=True, eq=False)
class TestFunction:
    """
    ``f(x1, x2) = g(x1 - anchor) h(|x2|) sign(x2)``, sampled on `grid`.
    """
    __test__ = False

    g: Profile
    h: Profile
    anchor: float
    grid: Grid

    def _odd_h(self, x2: np.ndarray, nu: int) -> np.ndarray:
        sign = np.where(x2 < 0, -1.0, 1.0)
        # d/dx2 of sign(x2) h(|x2|) is h'(|x2|), so odd orders keep no sign
        return (sign if nu % 2 == 0 else 1.0) * self.h(np.abs(x2), nu)

    def _sample(self, g_order: int, h_order: int) -> RealField:
        x1, x2 = self.grid.x1, self.grid.x2
        values = np.outer(self.g(x1 - self.anchor, g_order), self._odd_h(x2, h_order))
        return RealField(self.grid, values)

    @cached_property
    def f(self) -> RealField:
        return self._sample(0, 0)

    @cached_property
    def d1f(self) -> RealField:
        return self._sample(1, 0)

    @cached_property
    def d2f(self) -> RealField:
        return self._sample(0, 1)

    @cached_property
    def laplacian(self) -> RealField:
        return self._sample(2, 0) + self._sample(0, 2)

    @cached_property
    def grad_l2(self) -> float:
        """|grad f|_{L^2} over the plane, from the separable factors."""
        g, h = self.g, self.h
        value = 2 * (
            g.integrate(lambda x: g(x, 1) ** 2) * h.integrate(lambda x: h(x) ** 2)
            + g.integrate(lambda x: g(x) ** 2) * h.integrate(lambda x: h(x, 1) ** 2)
        )
        return float(np.sqrt(value))

    @cached_property
    def laplacian_l2(self) -> float:
        """|Delta f|_{L^2} over the plane, from the separable factors."""
        g, h = self.g, self.h
        value = 2 * (
            g.integrate(lambda x: g(x, 2) ** 2) * h.integrate(lambda x: h(x) ** 2)
            + 2 * g.integrate(lambda x: g(x) * g(x, 2)) * h.integrate(lambda x: h(x) * h(x, 2))
            + g.integrate(lambda x: g(x) ** 2) * h.integrate(lambda x: h(x, 2) ** 2)
        )
        return float(np.sqrt(max(value, 0.0)))

    def lhs(self, contour: Contour) -> float:
        """
        ``int mu d1 f = 2 int_D d1 f``, taken by Green's theorem as
        ``2 * contour integral of g h dx2`` on the spline.
        """
        return 2 * contour.spline.line_integral(
            lambda x1, x2, dx1, dx2: self.g(x1 - self.anchor) * self.h(x2) * dx2,
            refine=CONTOUR_REFINE,
        )

    def check_support(self):
        lo = self.anchor + self.g.breakpoints[0]
        hi = self.anchor + self.g.breakpoints[-1]
        top = self.h.breakpoints[-1]
        if lo < 0 or hi > self.grid.lx or top > self.grid.ly / 2:
            raise GeometryError("test function support does not fit inside the box")


# Evaluation grids

def _cells(length: float, spacing: float, max_cells: int) -> int:
    n = max(8, 1 << int(np.ceil(np.log2(length / spacing))))
    if n > max_cells:
        raise GeometryError(
            f"grid too coarse: resolving spacing {spacing:.3g} over {length:.3g} "
            f"needs {n} cells, above the limit of {max_cells}"
        )
    return n


def lemma_grid(
    contour: Contour,
    support: tuple[float, float, float],
    spacing: tuple[float, float],
    max_cells: int = 2048,
) -> tuple[Grid, Contour, float]:
    """
    Periodic evaluation box around a patch and a test-function support.

    The content (patch plus support ``(x1_lo, x1_hi, x2_top)``) is padded by
    half its width on each side and by half its height above, cells are
    powers of two no coarser than `spacing`.

    :returns: (grid, contour shifted into the box, the x1 shift applied)
    :raises GeometryError: When more than `max_cells` cells per axis are needed
    """
    min_x, _, max_x, max_y = contour.bounds
    lo, hi = min(min_x, support[0]), max(max_x, support[1])
    top = max(max_y, support[2])
    width = hi - lo

    nx = _cells(2 * width, spacing[0], max_cells)
    ny = _cells(3 * top, spacing[1], max_cells)
    grid = Grid(nx=nx, ny=ny, lx=nx * spacing[0], ly=ny * spacing[1])

    shift = (grid.lx - width) / 2 - lo
    return grid, contour.translated(shift, 0.0), shift


def patch_density(contour: Contour, grid: Grid) -> RealField:
    """Odd density of the patch, mollified over one cell."""
    return rasterize(contour, grid, max(grid.hx, grid.hy))


# Parameters

@dataclass(frozen=True)
class CurvatureLemmaParams:
    r: float
    b: float
    center_x1: float
    n_star: int
    grid: Grid
    omega_choice: OmegaChoice
    overlaps: tuple[float, ...] = ()

    def __post_init__(self):
        if not 0 < self.r < 1:
            raise LemmaPreconditionError("inscribed radius must lie in (0, 1) for a unit-area patch")
        if not 1 <= self.n_star <= 32 / self.r ** 2:
            raise InvariantFailure(f"N* = {self.n_star} exceeds 32 / r^2 = {32 / self.r ** 2:.4g}")


@dataclass(frozen=True)
class PerimeterLemmaParams:
    extent: float
    moment: float
    left: float
    grid: Grid
    omega_choice: OmegaChoice

    def __post_init__(self):
        if self.extent <= 0 or self.moment <= 0:
            raise LemmaPreconditionError("extent L and moment A must be positive")
        if 16 * self.moment * self.extent <= 1:
            raise LemmaPreconditionError(f"16 A L = {16 * self.moment * self.extent:.4g} must exceed 1")

    @property
    def ramp_x1(self) -> float:
        return 1 / (32 * self.moment)

    @property
    def ramp_x2(self) -> float:
        return 1 / (4 * self.extent)


def find_nstar(
    contour: Contour,
    disk: InscribedDisk,
    method: Literal["raster", "clip"] = "raster",
) -> tuple[int, list[float]]:
    """
    First n >= 1 with ``|D cap B_n| <= r^2 / 16``, where B_n is the inscribed
    disk translated by 2 r n along x1.

    :returns: (N*, overlaps for n = 1..N*)
    :raises LemmaPreconditionError: If the disk is not inside the contour
    :raises InvariantFailure: If N* would exceed 32 / r^2
    """
    (c1, c2), r = disk.center, disk.radius
    inside = shapely.contains_xy(contour.refined_polygon, c1, c2)
    clearance = shapely.distance(contour.refined_ring, shapely.Point(c1, c2))
    if r <= 0 or not inside or clearance < r * (1 - 1e-6):
        raise LemmaPreconditionError("disk is not inside the contour")

    threshold = r ** 2 / 16
    limit = int(np.floor(32 / r ** 2))
    overlaps = []
    for n in range(1, limit + 1):
        overlap = overlap_area(contour, (c1 + 2 * r * n, c2), r, method=method)
        overlaps.append(overlap)
        if overlap <= threshold:
            return n, overlaps

    raise InvariantFailure(f"no translate up to n = {limit} has overlap below r^2/16")


def curvature_lemma_params(
    contour: Contour,
    omega_choice: OmegaChoice = "mu",
    cells_per_radius: int = 16,
    max_cells: int = 2048,
    grid: Grid | None = None,
) -> tuple[CurvatureLemmaParams, Contour]:
    """
    Inscribed disk, N* and an evaluation grid for the curvature check. Without
    a `grid` one is built around the patch; with one, the patch stays put.

    :returns: (params, contour placed on the grid)
    """
    disk = inscribed_disk(contour)
    n_star, overlaps = find_nstar(contour, disk)
    r = disk.radius
    support = (disk.center[0], disk.center[0] + 2 * r * n_star + r, disk.center[1] + r)

    if grid is None:
        spacing = r / max(cells_per_radius, MIN_CELLS_PER_RADIUS)
        grid, contour, shift = lemma_grid(contour, support, (spacing, spacing), max_cells)
    else:
        shift = 0.0

    params = CurvatureLemmaParams(
        r=r,
        b=disk.center[1],
        center_x1=disk.center[0] + shift,
        n_star=n_star,
        grid=grid,
        omega_choice=omega_choice,
        overlaps=tuple(overlaps),
    )
    return params, contour


def perimeter_lemma_params(
    contour: Contour,
    omega_choice: OmegaChoice = "mu",
    cells_per_radius: int = 16,
    max_cells: int = 2048,
    grid: Grid | None = None,
) -> tuple[PerimeterLemmaParams, Contour]:
    extent = horizontal_extent(contour)
    moment = contour.moment_x2
    left = float(contour.spline.samples(8)[:, 0].min())

    if grid is None:
        scale = np.sqrt(contour.area) / max(cells_per_radius, MIN_CELLS_PER_RADIUS)
        spacing = (
            min(1 / (32 * moment) / MIN_CELLS_PER_RAMP, scale),
            min(1 / (4 * extent) / MIN_CELLS_PER_RAMP, scale),
        )
        support = (left, left + 2 * extent, 4 * moment + 1 / (4 * extent))
        grid, contour, shift = lemma_grid(contour, support, spacing, max_cells)
        left += shift

    params = PerimeterLemmaParams(
        extent=extent, moment=moment, left=left, grid=grid, omega_choice=omega_choice
    )
    return params, contour


# Builders

def build_f_curvature(params: CurvatureLemmaParams) -> TestFunction:
    """
    :raises GeometryError: If the grid puts fewer than 8 cells across r
    :raises InvariantFailure: If sup |d1 f| exceeds pi / (2 r)
    """
    grid = params.grid
    if params.r / max(grid.hx, grid.hy) < MIN_CELLS_PER_RADIUS:
        raise GeometryError(
            f"grid too coarse: r = {params.r:.3g} spans fewer than {MIN_CELLS_PER_RADIUS} cells"
        )

    test = TestFunction(
        g=curvature_g(params.r, params.n_star),
        h=curvature_h(params.r, params.b),
        anchor=params.center_x1,
        grid=grid,
    )
    test.check_support()

    bound = np.pi / (2 * params.r)
    if test.d1f.max_abs > bound * (1 + 1e-9):
        raise InvariantFailure(f"sup |d1 f| = {test.d1f.max_abs:.6g} exceeds pi/(2r) = {bound:.6g}")
    return test


def build_f_perimeter(params: PerimeterLemmaParams) -> TestFunction:
    """
    :raises GeometryError: If either ramp spans fewer than 4 cells
    :raises InvariantFailure: If a profile breaks one of its derivative bounds
    """
    grid = params.grid
    if params.ramp_x1 / grid.hx < MIN_CELLS_PER_RAMP or params.ramp_x2 / grid.hy < MIN_CELLS_PER_RAMP:
        raise GeometryError("grid too coarse for the perimeter test function ramps")

    L, A = params.extent, params.moment
    g, h = perimeter_g(L, A), perimeter_h(L, A)
    slack = 1 + 1e-9
    checks = {
        "g <= L": (g.sup(0), L),
        "|g'| <= 1": (g.sup(1), 1.0),
        "|g''| <= 16 pi A": (g.sup(2), 16 * np.pi * A),
        "h <= 1": (h.sup(0), 1.0),
        "|h'| <= 2 pi L": (h.sup(1), 2 * np.pi * L),
        "|h''| <= 8 pi^2 L^2": (h.sup(2), 8 * np.pi ** 2 * L ** 2),
    }
    broken = [name for name, (value, bound) in checks.items() if value > bound * slack]
    if broken:
        raise InvariantFailure("perimeter test function out of bounds", broken)

    logger.debug(
        "perimeter ramps: |g''|/(32A)=%.3f |h'|/(4L)=%.3f |h''|/(32L^2)=%.3f",
        g.sup(2) / (32 * A), h.sup(1) / (4 * L), h.sup(2) / (32 * L ** 2),
    )

    test = TestFunction(g=g, h=h, anchor=params.left, grid=grid)
    test.check_support()
    return test


# Reports

@dataclass(frozen=True)
class LemmaReport:
    lemma: str
    shape: str
    omega_choice: str
    scale: float
    n_star: int
    lhs: float
    lhs_grid: float
    mirror_defect: float
    norm_h1: float
    norm_l2: float
    grad_f_l2: float
    lap_f_l2: float
    predicted_lower_bound: float
    stated_lower_bound: float
    moment: float = float("nan")
    failures: tuple[str, ...] = field(default=())

    @property
    def rhs_h1(self) -> float:
        return self.norm_h1 * self.grad_f_l2

    @property
    def rhs_l2(self) -> float:
        return self.norm_l2 * self.lap_f_l2

    @property
    def ratio(self) -> float:
        rhs = self.rhs_h1 + self.rhs_l2
        return self.lhs / rhs if rhs > 0 else float("inf")

    @property
    def lemma_constant(self) -> float:
        """Smallest constant the tested inequality admits for this shape."""
        norms = self.norm_h1 + self.norm_l2
        if norms <= 0:
            return float("inf")
        if self.lemma == "curvature":
            return self.scale ** 3 / norms
        return 1 / ((self.moment + 1) * (1 + self.scale ** 3) * norms)

    @property
    def passed(self) -> bool:
        return not self.failures

    @classmethod
    def columns(cls) -> list[str]:
        base = [f.name for f in fields(cls) if f.name != "failures"]
        return base + ["rhs_h1", "rhs_l2", "ratio", "lemma_constant", "passed", "failures"]

    def as_row(self) -> list:
        return [
            "; ".join(self.failures) if name == "failures" else getattr(self, name)
            for name in self.columns()
        ]


@dataclass(frozen=True)
class PestovIoninReport:
    shape: str
    inscribed_radius: float
    max_curvature: float
    lattice_radius: float

    @property
    def product(self) -> float:
        return self.inscribed_radius * self.max_curvature

    @property
    def passed(self) -> bool:
        return self.product >= 1 - PESTOV_IONIN_TOLERANCE

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls)] + ["product", "passed"]

    def as_row(self) -> list:
        return [getattr(self, name) for name in self.columns()]


def duality_norms(
    mu: RealField,
    omega_choice: OmegaChoice,
    omega: RealField | None = None,
) -> tuple[float, float]:
    """
    ``(|d1 Delta^{-1} mu - Omega|_{H^1}, |Omega|_{L^2})`` for the chosen Omega.
    """
    potential = partial_x(inverse_laplacian(mu))
    match omega_choice:
        case "zero":
            return hs_norm(potential, 1), 0.0
        case "mu":
            return 0.0, l2_norm(potential)
        case "snapshot":
            if omega is None:
                raise ValueError("a snapshot Omega needs the omega field")
            return hs_norm(potential - omega, 1), l2_norm(omega)
        case _:
            raise ValueError(f"unknown Omega choice `{omega_choice}`")


def _grid_terms(mu: RealField, test: TestFunction) -> tuple[float, float]:
    """Grid value of int mu d1 f and the mirror defect |full - 2 upper| / |full|."""
    full = inner(mu, test.d1f)
    upper_rows = test.grid.x2 > 0
    product = mu.values * test.d1f.values
    upper = float(product[:, upper_rows].sum() * test.grid.cell_area)
    return full, abs(full - 2 * upper) / max(abs(full), TINY)


def _report(
    lemma: str,
    shape: str,
    contour: Contour,
    test: TestFunction,
    mu: RealField,
    omega_choice: OmegaChoice,
    omega: RealField | None,
    scale: float,
    n_star: int,
    predicted: float,
    stated: float,
    tolerance: float,
    moment: float = float("nan"),
    extra_failures: Sequence[str] = (),
) -> LemmaReport:
    norm_h1, norm_l2 = duality_norms(mu, omega_choice, omega)
    lhs = test.lhs(contour)
    lhs_grid, mirror_defect = _grid_terms(mu, test)

    failures = list(extra_failures)
    if lhs < predicted * (1 - tolerance):
        failures.append(f"lhs {lhs:.6g} below the lower bound {predicted:.6g}")
    rhs = norm_h1 * test.grad_l2 + norm_l2 * test.laplacian_l2
    if lhs > rhs * (1 + DUALITY_TOLERANCE) + TINY:
        failures.append(f"duality estimate fails: lhs {lhs:.6g} > rhs {rhs:.6g}")

    return LemmaReport(
        lemma=lemma,
        shape=shape,
        omega_choice=omega_choice,
        scale=scale,
        n_star=n_star,
        lhs=lhs,
        lhs_grid=lhs_grid,
        mirror_defect=mirror_defect,
        norm_h1=norm_h1,
        norm_l2=norm_l2,
        grad_f_l2=test.grad_l2,
        lap_f_l2=test.laplacian_l2,
        predicted_lower_bound=predicted,
        stated_lower_bound=stated,
        failures=tuple(failures),
        moment=moment,
    )


def check_lemma41(
    contour: Contour,
    params: CurvatureLemmaParams,
    shape: str = "patch",
    mu: RealField | None = None,
    omega: RealField | None = None,
) -> LemmaReport:
    """
    Curvature check: ``int mu d1 f >= 2 (sqrt(14)/8 - pi/32) r`` within 2%,
    and the duality estimate.

    :param contour: Patch boundary on `params.grid`
    :param params: Output of :func:`curvature_lemma_params`
    :param shape: Label carried into the report
    :param mu: Density on the grid, rasterized from `contour` when omitted
    :param omega: Omega field for the ``snapshot`` choice
    """
    test = build_f_curvature(params)
    mu = patch_density(contour, params.grid) if mu is None else mu
    return _report(
        "curvature", shape, contour, test, mu, params.omega_choice, omega,
        scale=params.r,
        n_star=params.n_star,
        predicted=CURVATURE_LHS_CONSTANT * params.r,
        stated=CURVATURE_LHS_STATED * params.r,
        tolerance=CURVATURE_LEMMA_TOLERANCE,
    )


def confinement_failures(contour: Contour, params: PerimeterLemmaParams) -> list[str]:
    """
    The mass bounds behind the perimeter check: at most a quarter of the
    patch above 4A, at most a quarter below 1/(4L), and at least a quarter in
    the confinement box.
    """
    L, A = params.extent, params.moment
    min_x, min_y, max_x, max_y = contour.bounds
    far = max(max_x - min_x, max_y) + 1.0
    above = region_area(contour, (min_x - 1, 4 * A, max_x + 1, max_y + far))
    below = region_area(contour, (min_x - 1, min(min_y, 0.0) - 1, max_x + 1, params.ramp_x2))
    box = region_area(
        contour,
        (params.left + params.ramp_x1, params.ramp_x2, params.left + L - params.ramp_x1, 4 * A),
    )

    failures = []
    if above > 0.25 * (1 + 1e-6):
        failures.append(f"mass above x2 = 4A is {above:.4g} > 1/4")
    if below > 0.25 * (1 + 1e-6):
        failures.append(f"mass below x2 = 1/(4L) is {below:.4g} > 1/4")
    if box < 0.25 * (1 - 1e-6):
        failures.append(f"confined mass is {box:.4g} < 1/4")
    return failures


def check_lemma42(
    contour: Contour,
    params: PerimeterLemmaParams,
    shape: str = "patch",
    mu: RealField | None = None,
    omega: RealField | None = None,
) -> LemmaReport:
    """
    Perimeter check: ``int mu d1 f >= 1/2`` within 5%, and the duality
    estimate.

    :raises LemmaPreconditionError: If the confinement mass bounds fail
    """
    failures = confinement_failures(contour, params)
    if failures:
        raise LemmaPreconditionError("strip confinement fails", failures)

    test = build_f_perimeter(params)
    mu = patch_density(contour, params.grid) if mu is None else mu
    return _report(
        "perimeter", shape, contour, test, mu, params.omega_choice, omega,
        scale=params.extent,
        n_star=0,
        predicted=PERIMETER_LHS_BOUND,
        stated=PERIMETER_LHS_BOUND,
        tolerance=PERIMETER_LEMMA_TOLERANCE,
        moment=params.moment,
    )


def pestov_ionin_report(contour: Contour, shape: str = "patch") -> PestovIoninReport:
    disk = inscribed_disk(contour)
    return PestovIoninReport(
        shape=shape,
        inscribed_radius=disk.radius,
        max_curvature=float(np.abs(curvature_profile(contour)).max()),
        lattice_radius=disk.lattice_radius,
    )


def pestov_ionin_check(contour: Contour, report: PestovIoninReport | None = None) -> float:
    """
    ``inscribed_radius * max |kappa|``, at least 1 for any simple closed curve.

    :param contour: Simple closed curve
    :param report: Measurements of `contour` already taken, measured here when omitted
    :raises InvariantFailure: If the product falls below 1 - 1e-2
    """
    report = report or pestov_ionin_report(contour)
    if not report.passed:
        raise InvariantFailure(f"inscribed radius times max curvature is {report.product:.6g} < 1")
    return report.product
