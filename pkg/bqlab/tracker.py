"""
Marker transport and the contour-to-field coupling.

Markers move with the same four stage velocities the field integrator used,
sampled by periodic cubic interpolation. Rasterization turns a contour back
into the mollified odd density the solver evolves.
"""
from typing import Callable, Protocol, Sequence

import numpy as np
import shapely
from scipy import ndimage
from scipy.optimize import brentq

from bqlab.contour import Contour
from bqlab.errors import GeometryError, NumericalAbort
from bqlab.spectral import Grid, RealField

# tanh(12) = 1 - 7.6e-11, beyond this band the mollified indicator is 0 or 1
MOLLIFIER_BAND = 12.0


class VelocitySampler(Protocol):
    def __call__(self, points: np.ndarray, stage: int) -> np.ndarray:
        """
        Velocity at `points` (m, 2) for RK4 stage 0..3, returned as (m, 2).
        """
        ...


class AnalyticSampler:
    """
    Steady velocity given in closed form, ``fn(points) -> (m, 2)``.
    """
    def __init__(self, fn: Callable[[np.ndarray], np.ndarray]):
        self.fn = fn

    def __call__(self, points: np.ndarray, stage: int) -> np.ndarray:
        return np.asarray(self.fn(points), dtype=float)


class StageSampler:
    """
    Cubic-spline interpolation of gridded stage velocities on the periodic box.

    :param grid: Grid the velocities live on
    :param stages: One (u1, u2) pair per RK4 stage, or a single pair for a steady field
    """
    def __init__(self, grid: Grid, stages: Sequence[tuple[RealField, RealField]]):
        if len(stages) not in (1, 4):
            raise ValueError(f"expected 1 or 4 stage velocities, got {len(stages)}")
        self.grid = grid
        self.stages = stages
        self._coefficients: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def _spline_coefficients(self, stage: int) -> tuple[np.ndarray, np.ndarray]:
        index = stage if len(self.stages) == 4 else 0
        if index not in self._coefficients:
            u1, u2 = self.stages[index]
            self._coefficients[index] = (
                ndimage.spline_filter(u1.values, order=3, mode="grid-wrap"),
                ndimage.spline_filter(u2.values, order=3, mode="grid-wrap"),
            )
        return self._coefficients[index]

    def __call__(self, points: np.ndarray, stage: int) -> np.ndarray:
        c1, c2 = self._spline_coefficients(stage)
        coordinates = np.vstack([
            points[:, 0] / self.grid.hx,
            (points[:, 1] + self.grid.ly / 2) / self.grid.hy,
        ])
        return np.column_stack([
            ndimage.map_coordinates(c1, coordinates, order=3, mode="grid-wrap", prefilter=False),
            ndimage.map_coordinates(c2, coordinates, order=3, mode="grid-wrap", prefilter=False),
        ])


class GuardBand:
    """
    Markers must stay at least `width` away from the symmetry axis and the
    periodic seams of the box.
    """
    def __init__(self, grid: Grid, width: float):
        self.grid = grid
        self.width = width

    def escaped(self, points: np.ndarray) -> np.ndarray:
        x1, x2 = points[:, 0], points[:, 1]
        return (
            (x2 < self.width)
            | (x2 > self.grid.ly / 2 - self.width)
            | (x1 < self.width)
            | (x1 > self.grid.lx - self.width)
        )

    def check(self, points: np.ndarray):
        escaped = self.escaped(points)
        if escaped.any():
            worst = points[escaped][0]
            raise GeometryError(
                f"{int(escaped.sum())} markers left the admissible region "
                f"(first at x=({worst[0]:.4g}, {worst[1]:.4g})); enlarge the box or raise the patch"
            )


def advect_contour(
    contour: Contour,
    sampler: VelocitySampler,
    dt: float,
    guard: GuardBand | None = None,
) -> Contour:
    """
    Move every marker by one RK4 step through the sampled velocity.

    :param contour: Contour at time t
    :param sampler: Stage velocity sampler
    :param dt: Step size
    :param guard: Optional admissible-region check on the result
    :raises GeometryError: If a marker leaves the guard band
    """
    x = np.asarray(contour.markers)
    k1 = sampler(x, 0)
    k2 = sampler(x + dt / 2 * k1, 1)
    k3 = sampler(x + dt / 2 * k2, 2)
    k4 = sampler(x + dt * k3, 3)
    moved = x + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)

    if not np.isfinite(moved).all():
        raise GeometryError("marker positions became non-finite")
    if guard is not None:
        guard.check(moved)

    try:
        return Contour(moved)
    except ValueError as e:
        raise GeometryError(f"advected contour is invalid: {e}") from e


def mollified_indicator(
    contour: Contour,
    grid: Grid,
    epsilon: float,
    conserve_mass: bool = True,
) -> RealField:
    """
    Smoothed indicator of the region enclosed by `contour`,
    ``(1 + tanh((d - delta) / epsilon)) / 2`` with d the signed distance
    (positive inside). With `conserve_mass` the shift delta is chosen so the
    grid mass equals the enclosed area.

    :raises NumericalAbort: If no shift within 3 epsilon reaches the enclosed area
    """
    polygon = contour.refined_polygon
    ring = contour.refined_ring
    x1, x2 = grid.mesh
    min_x, min_y, max_x, max_y = polygon.bounds
    band = MOLLIFIER_BAND * epsilon

    near = (
        (x1 >= min_x - band) & (x1 <= max_x + band)
        & (x2 >= min_y - band) & (x2 <= max_y + band)
    )
    px, py = x1[near], x2[near]
    inside = shapely.contains_xy(polygon, px, py)
    signed = shapely.distance(ring, shapely.points(np.column_stack([px, py])))
    signed = np.where(inside, signed, -signed)

    def indicator(shift: float) -> np.ndarray:
        return 0.5 * (1 + np.tanh((signed - shift) / epsilon))

    shift = 0.0
    if conserve_mass:
        target = contour.area / grid.cell_area

        def excess(s: float) -> float:
            return float(indicator(s).sum()) - target

        try:
            shift = brentq(excess, -3 * epsilon, 3 * epsilon, xtol=1e-14 * epsilon)
        except ValueError:
            raise NumericalAbort(
                f"mass correction failed to bracket the patch area, grid too coarse for epsilon={epsilon:.3g}"
            ) from None

    values = np.zeros(grid.shape)
    values[near] = indicator(shift)
    return RealField(grid, values)


def rasterize(
    contour: Contour,
    grid: Grid,
    epsilon: float,
    conserve_mass: bool = True,
) -> RealField:
    """
    Odd density ``H_D - H_D o reflect`` for the patch bounded by `contour`.

    :param contour: Upper-half-plane patch boundary
    :param grid: Target grid
    :param epsilon: Interface width
    :param conserve_mass: Shift the level set so the upper mass matches the area
    :raises GeometryError: If the patch is too close to the axis or the box edges
    :raises NumericalAbort: If the mass correction fails
    """
    min_x, min_y, max_x, max_y = contour.bounds
    if min_y < epsilon:
        raise GeometryError(f"patch is within {epsilon:.3g} of the symmetry axis")
    if min_x < epsilon or max_x > grid.lx - epsilon or max_y > grid.ly / 2 - epsilon:
        raise GeometryError("patch does not fit inside the box with an epsilon margin")

    upper = mollified_indicator(contour, grid, epsilon, conserve_mass).values
    return RealField(grid, upper - grid.reflect(upper))
