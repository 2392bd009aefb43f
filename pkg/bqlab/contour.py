"""
Closed marker contours and their geometry.

A contour is an ordered counter-clockwise ring of markers interpolated by a
periodic cubic spline in chord-length parameter. Integrals along the curve
(area, moments, perimeter, arclength) are taken on the spline with Gauss-Legendre
quadrature, so polynomial integrands are exact up to round-off.
"""
import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Literal

import numpy as np
import shapely
from scipy.interpolate import CubicSpline
from scipy.optimize import minimize

from bqlab.errors import GeometryError

logger = logging.getLogger(__name__)

MIN_MARKERS = 64
GAUSS_NODES, GAUSS_WEIGHTS = np.polynomial.legendre.leggauss(8)
NEWTON_ITERATIONS = 8
INSCRIBED_LATTICE_POINTS = 4000
REFINED_VERTICES = 4096


class ClosedSpline:
    """
    Periodic cubic spline through a closed ring of markers.

    :param markers: (n, 2) array, first marker not repeated
    """
    def __init__(self, markers: np.ndarray):
        closed = np.vstack([markers, markers[:1]])
        chords = np.linalg.norm(np.diff(closed, axis=0), axis=1)
        if (chords <= 0).any():
            raise GeometryError("contour has repeated consecutive markers")

        self.knots = np.concatenate([[0.0], np.cumsum(chords)])
        self.period = float(self.knots[-1])
        self.curve = CubicSpline(self.knots, closed, bc_type="periodic", axis=0)

    def __call__(self, t: np.ndarray, nu: int = 0) -> np.ndarray:
        return self.curve(t, nu)

    def subdivide(self, refine: int) -> np.ndarray:
        """
        Parameter values splitting every knot interval into `refine` equal
        pieces, without the closing knot.
        """
        lo = self.knots[:-1, None]
        width = np.diff(self.knots)[:, None]
        return (lo + width * np.arange(refine)[None, :] / refine).ravel()

    def samples(self, refine: int = 1) -> np.ndarray:
        return self.curve(self.subdivide(refine))

    def quadrature(self, refine: int = 1) -> tuple[np.ndarray, np.ndarray]:
        """
        Gauss-Legendre nodes and weights over every (sub)segment.

        :returns: (tau, w), both shaped (segments, nodes)
        """
        edges = np.append(self.subdivide(refine), self.period)
        a, b = edges[:-1, None], edges[1:, None]
        half = (b - a) / 2
        return (a + b) / 2 + half * GAUSS_NODES[None, :], half * GAUSS_WEIGHTS[None, :]

    def line_integral(
        self,
        integrand: Callable[[np.ndarray, np.ndarray, np.ndarray, np.ndarray], np.ndarray],
        refine: int = 1,
    ) -> float:
        """
        Integrate ``integrand(x1, x2, dx1/dt, dx2/dt)`` over one period.
        """
        tau, w = self.quadrature(refine)
        p = self.curve(tau)
        d = self.curve(tau, 1)
        return float(np.sum(w * integrand(p[..., 0], p[..., 1], d[..., 0], d[..., 1])))

    def speed(self, t: np.ndarray) -> np.ndarray:
        return np.linalg.norm(self.curve(t, 1), axis=-1)

    def arclength_between(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """
        Vectorized arclength from parameter `a` to parameter `b`.
        """
        half = (b - a) / 2
        tau = (a + b)[..., None] / 2 + half[..., None] * GAUSS_NODES
        return np.sum(GAUSS_WEIGHTS * self.speed(tau), axis=-1) * half

    @cached_property
    def knot_arclength(self) -> np.ndarray:
        """Cumulative arclength at each knot, starting from 0."""
        segments = self.arclength_between(self.knots[:-1], self.knots[1:])
        return np.concatenate([[0.0], np.cumsum(segments)])

    def curvature(self, t: np.ndarray) -> np.ndarray:
        d1 = self.curve(t, 1)
        d2 = self.curve(t, 2)
        cross = d1[..., 0] * d2[..., 1] - d1[..., 1] * d2[..., 0]
        return cross / np.linalg.norm(d1, axis=-1) ** 3


def _shoelace(points: np.ndarray) -> float:
    x, y = points[:, 0], points[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


@dataclass(frozen=True, eq=False)
class Contour:
    """
    Counter-clockwise ring of at least 64 markers. The ring is assumed
    closed: the last marker connects back to the first.
    """
    markers: np.ndarray

    def __post_init__(self):
        points = np.array(self.markers, dtype=float)
        if points.ndim != 2 or points.shape[1] != 2:
            raise ValueError(f"markers must be an (n, 2) array, got shape {points.shape}")
        if len(points) < MIN_MARKERS:
            raise ValueError(f"a contour needs at least {MIN_MARKERS} markers, got {len(points)}")
        if not np.isfinite(points).all():
            raise ValueError("markers contain non-finite coordinates")
        if _shoelace(points) <= 0:
            raise ValueError("markers must be ordered counter-clockwise")

        points.setflags(write=False)
        object.__setattr__(self, "markers", points)

    @classmethod
    def from_points(cls, points: np.ndarray) -> "Contour":
        """
        Build a contour from a ring in either orientation, keeping the first point first.
        """
        points = np.asarray(points, dtype=float)
        if len(points) > 1 and np.array_equal(points[0], points[-1]):
            points = points[:-1]
        if _shoelace(points) < 0:
            points = np.roll(points[::-1], 1, axis=0)
        return cls(points)

    @property
    def n_markers(self) -> int:
        return len(self.markers)

    @property
    def spacing(self) -> np.ndarray:
        """Chord length from each marker to the next."""
        return np.linalg.norm(np.roll(self.markers, -1, axis=0) - self.markers, axis=1)

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        lo = self.markers.min(axis=0)
        hi = self.markers.max(axis=0)
        return float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1])

    @cached_property
    def spline(self) -> ClosedSpline:
        return ClosedSpline(self.markers)

    @cached_property
    def area(self) -> float:
        return self.spline.line_integral(lambda x, y, dx, dy: 0.5 * (x * dy - y * dx))

    @cached_property
    def shoelace_area(self) -> float:
        return _shoelace(self.markers)

    @cached_property
    def perimeter(self) -> float:
        return self.spline.line_integral(lambda x, y, dx, dy: np.hypot(dx, dy))

    @cached_property
    def moment_x2(self) -> float:
        """First moment of the enclosed region, the integral of x2 over D."""
        return self.spline.line_integral(lambda x, y, dx, dy: -0.5 * y ** 2 * dx)

    @cached_property
    def moment_x1(self) -> float:
        return self.spline.line_integral(lambda x, y, dx, dy: 0.5 * x ** 2 * dy)

    @property
    def centroid(self) -> tuple[float, float]:
        return self.moment_x1 / self.area, self.moment_x2 / self.area

    @cached_property
    def polygon(self) -> shapely.Polygon:
        polygon = shapely.Polygon(self.markers)
        shapely.prepare(polygon)
        return polygon

    @cached_property
    def refined_polygon(self) -> shapely.Polygon:
        """Polygon through spline samples, about 4096 vertices or more."""
        refine = max(1, int(np.ceil(REFINED_VERTICES / self.n_markers)))
        polygon = shapely.Polygon(self.spline.samples(refine))
        shapely.prepare(polygon)
        return polygon

    @cached_property
    def refined_ring(self) -> shapely.LinearRing:
        ring = self.refined_polygon.exterior
        shapely.prepare(ring)
        return ring

    @property
    def is_simple(self) -> bool:
        return bool(shapely.LinearRing(self.markers).is_simple)

    def translated(self, dx1: float, dx2: float) -> "Contour":
        return Contour(self.markers + np.array([dx1, dx2]))

    def scaled(self, factor: float, about: tuple[float, float]) -> "Contour":
        origin = np.asarray(about, dtype=float)
        return Contour(origin + factor * (self.markers - origin))

    def rotated(self, angle: float, about: tuple[float, float]) -> "Contour":
        c, s = np.cos(angle), np.sin(angle)
        origin = np.asarray(about, dtype=float)
        rotation = np.array([[c, -s], [s, c]])
        return Contour(origin + (self.markers - origin) @ rotation.T)

    def mirrored(self) -> "Contour":
        """Reflection across x2 = 0, reoriented counter-clockwise."""
        return Contour.from_points(self.markers * np.array([1.0, -1.0]))


@dataclass(frozen=True)
class InscribedDisk:
    center: tuple[float, float]
    radius: float
    lattice_radius: float
    lattice_spacing: float


@dataclass(frozen=True)
class PatchGeometry:
    area: float
    perimeter: float
    max_abs_curvature: float
    horizontal_extent: float
    inscribed_radius: float
    centroid_height: float
    centroid_x1: float
    shoelace_area: float


def resample(contour: Contour, n: int) -> Contour:
    """
    Place `n` markers at equal arclength along the spline, starting at marker 0.

    :param contour: Source contour
    :param n: Number of markers in the result
    :returns: The resampled contour
    """
    spline = contour.spline
    s_knots = spline.knot_arclength
    total = s_knots[-1]
    targets = np.arange(n) * total / n

    segment = np.clip(np.searchsorted(s_knots, targets, side="right") - 1, 0, contour.n_markers - 1)
    lo = spline.knots[segment]
    hi = spline.knots[segment + 1]
    start = s_knots[segment]
    fraction = (targets - start) / (s_knots[segment + 1] - start)
    tau = lo + fraction * (hi - lo)

    for _ in range(NEWTON_ITERATIONS):
        residual = start + spline.arclength_between(lo, tau) - targets
        tau = np.clip(tau - residual / spline.speed(tau), lo, hi)

    return Contour(spline(tau))


def redistribute(
    contour: Contour,
    max_spacing: float | None = None,
    max_markers: int = 16384,
) -> Contour:
    """
    Equalize marker spacing, doubling the marker count while the mean spacing
    exceeds `max_spacing`.

    :param contour: Contour to redistribute
    :param max_spacing: Upper bound on the mean spacing, None keeps the count
    :param max_markers: Hard cap on the marker count
    :raises GeometryError: If the ring self-intersects
    """
    if not contour.is_simple:
        raise GeometryError("contour self-intersects; marker tracking cannot continue")

    n = contour.n_markers
    if max_spacing is not None:
        length = contour.perimeter
        while length / n > max_spacing and 2 * n <= max_markers:
            n *= 2
        if length / n > max_spacing:
            logger.warning(
                "marker cap %d reached, mean spacing %.3g exceeds %.3g",
                max_markers, length / n, max_spacing,
            )

    return resample(contour, n)


def needs_redistribution(
    contour: Contour,
    max_spacing: float | None = None,
    max_markers: int = 16384,
) -> bool:
    """
    Whether spacing drifted outside [mean/2, 2 mean] or the contour has
    stretched past `max_spacing` while markers can still be added.
    """
    spacing = contour.spacing
    mean_spacing = spacing.mean()
    if spacing.max() > 2 * mean_spacing or spacing.min() < 0.5 * mean_spacing:
        return True
    return (
        max_spacing is not None
        and mean_spacing > max_spacing
        and 2 * contour.n_markers <= max_markers
    )


def curvature_profile(contour: Contour) -> np.ndarray:
    """
    Signed curvature at every marker, positive where the boundary turns
    counter-clockwise.

    :raises GeometryError: When marker spacing is degenerate
    """
    spacing = contour.spacing
    mean_spacing = spacing.mean()
    if spacing.min() < 0.25 * mean_spacing or spacing.max() > 4 * mean_spacing:
        raise GeometryError(
            f"degenerate marker spacing (min {spacing.min():.3g}, max {spacing.max():.3g}, "
            f"mean {mean_spacing:.3g}); redistribute first"
        )
    return contour.spline.curvature(contour.spline.knots[:-1])


def _signed_distance(contour: Contour, x: float, y: float) -> float:
    distance = shapely.distance(contour.refined_ring, shapely.Point(x, y))
    return distance if shapely.contains_xy(contour.refined_polygon, x, y) else -distance


def inscribed_disk(contour: Contour, candidates: int = 3) -> InscribedDisk:
    """
    Largest disk inside the contour: a lattice search over interior points,
    refined by Nelder-Mead from the best few lattice candidates.

    :param contour: The contour
    :param candidates: Number of lattice maxima to refine
    """
    polygon = contour.refined_polygon
    min_x, min_y, max_x, max_y = polygon.bounds
    spacing = max(
        contour.perimeter / contour.n_markers,
        np.sqrt((max_x - min_x) * (max_y - min_y) / INSCRIBED_LATTICE_POINTS),
    )

    xs = np.arange(min_x + spacing / 2, max_x, spacing)
    ys = np.arange(min_y + spacing / 2, max_y, spacing)
    lx, ly = np.meshgrid(xs, ys, indexing="ij")
    lx, ly = lx.ravel(), ly.ravel()
    inside = shapely.contains_xy(polygon, lx, ly)

    if inside.any():
        points = np.column_stack([lx[inside], ly[inside]])
        distances = shapely.distance(contour.refined_ring, shapely.points(points))
        order = np.argsort(distances)[::-1][:candidates]
        starts = points[order]
        lattice_radius = float(distances[order[0]])
    else:
        surface = polygon.point_on_surface()
        starts = np.array([[surface.x, surface.y]])
        lattice_radius = _signed_distance(contour, surface.x, surface.y)

    best_center, best_radius = starts[0], lattice_radius
    for start in starts:
        simplex = np.array([start, start + [spacing / 2, 0.0], start + [0.0, spacing / 2]])
        result = minimize(
            lambda p: -_signed_distance(contour, p[0], p[1]),
            start,
            method="Nelder-Mead",
            options={
                "initial_simplex": simplex,
                "xatol": 1e-10,
                "fatol": 1e-12,
                "maxiter": 2000,
            },
        )
        if -result.fun > best_radius:
            best_center, best_radius = result.x, float(-result.fun)

    return InscribedDisk(
        center=(float(best_center[0]), float(best_center[1])),
        radius=best_radius,
        lattice_radius=lattice_radius,
        lattice_spacing=float(spacing),
    )


def inscribed_radius(contour: Contour) -> float:
    return inscribed_disk(contour).radius


def horizontal_extent(contour: Contour, refine: int = 8) -> float:
    x1 = contour.spline.samples(refine)[:, 0]
    return float(x1.max() - x1.min())


def measure(contour: Contour) -> PatchGeometry:
    """
    Compute the geometric summary of a contour.
    """
    curvature = curvature_profile(contour)
    centroid_x1, centroid_height = contour.centroid
    return PatchGeometry(
        area=contour.area,
        perimeter=contour.perimeter,
        max_abs_curvature=float(np.abs(curvature).max()),
        horizontal_extent=horizontal_extent(contour),
        inscribed_radius=inscribed_radius(contour),
        centroid_height=centroid_height,
        centroid_x1=centroid_x1,
        shoelace_area=contour.shoelace_area,
    )


def overlap_area(
    contour: Contour,
    center: tuple[float, float],
    radius: float,
    method: Literal["raster", "clip"] = "raster",
    cells_per_radius: int = 64,
) -> float:
    """
    Area of the region enclosed by `contour` inside the disk B(center, radius).

    ``raster`` counts lattice cells of size radius / cells_per_radius whose
    centers lie in both sets; ``clip`` intersects the polygons exactly.
    """
    polygon = contour.refined_polygon
    if method == "clip":
        disk = shapely.Point(center).buffer(radius, quad_segs=256)
        return float(polygon.intersection(disk).area)

    h = radius / cells_per_radius
    offsets = -radius + h * (0.5 + np.arange(2 * cells_per_radius))
    ox, oy = np.meshgrid(offsets, offsets, indexing="ij")
    in_disk = ox ** 2 + oy ** 2 <= radius ** 2
    px = center[0] + ox[in_disk]
    py = center[1] + oy[in_disk]
    return float(np.count_nonzero(shapely.contains_xy(polygon, px, py)) * h * h)


def region_area(contour: Contour, box: tuple[float, float, float, float]) -> float:
    """
    Area of the enclosed region inside an axis-aligned box (minx, miny, maxx, maxy).
    """
    return float(contour.refined_polygon.intersection(shapely.box(*box)).area)


def circle(radius: float, center: tuple[float, float], n: int = 256) -> Contour:
    theta = 2 * np.pi * np.arange(n) / n
    return Contour(np.column_stack([
        center[0] + radius * np.cos(theta),
        center[1] + radius * np.sin(theta),
    ]))


def ellipse(a: float, b: float, center: tuple[float, float], n: int = 256) -> Contour:
    """
    Ellipse with semi-axes `a` (along x1) and `b`, markers at equal arclength.
    """
    theta = 2 * np.pi * np.arange(8 * n) / (8 * n)
    dense = Contour(np.column_stack([
        center[0] + a * np.cos(theta),
        center[1] + b * np.sin(theta),
    ]))
    return resample(dense, n)


def from_polygon(polygon: shapely.Polygon, n: int = 256) -> Contour:
    """
    Contour with `n` equal-arclength markers tracing a polygon's exterior.
    """
    dense = shapely.segmentize(polygon, polygon.exterior.length / (8 * n))
    return resample(Contour.from_points(np.asarray(dense.exterior.coords)), n)


def rectangle(width: float, height: float, center: tuple[float, float], n: int = 256) -> Contour:
    """
    Axis-aligned rectangle with markers walked at equal spacing along the
    straight sides, starting at the lower-left corner.
    """
    x0, y0 = center[0] - width / 2, center[1] - height / 2
    s = np.arange(n) * 2 * (width + height) / n
    corners = np.cumsum([0.0, width, height, width])
    x = np.select(
        [s < corners[1], s < corners[2], s < corners[3]],
        [x0 + s, x0 + width, x0 + width - (s - corners[2])],
        x0,
    )
    y = np.select(
        [s < corners[1], s < corners[2], s < corners[3]],
        [y0 + 0 * s, y0 + (s - corners[1]), y0 + height],
        y0 + height - (s - corners[3]),
    )
    return Contour(np.column_stack([x, y]))


def stadium(half_length: float, radius: float, center: tuple[float, float], n: int = 256) -> Contour:
    """
    Segment of length 2 * half_length along x1, thickened by `radius`.
    """
    segment = shapely.LineString([
        (center[0] - half_length, center[1]),
        (center[0] + half_length, center[1]),
    ])
    return from_polygon(segment.buffer(radius, quad_segs=128), n)


def random_star(
    rng: np.random.Generator,
    n: int = 256,
    perturbation: float = 0.15,
    modes: int = 6,
    center: tuple[float, float] = (0.0, 0.0),
) -> Contour:
    """
    Smooth star-shaped curve r(theta) = 1 + sum_m (p / m) a_m cos(m theta + phi_m),
    with a_m uniform on [-1, 1] and m from 2 to `modes`.
    """
    theta = 2 * np.pi * np.arange(8 * n) / (8 * n)
    radius = np.ones_like(theta)
    for m in range(2, modes + 1):
        amplitude = perturbation / m * rng.uniform(-1.0, 1.0)
        radius += amplitude * np.cos(m * theta + rng.uniform(0.0, 2 * np.pi))

    dense = Contour(np.column_stack([
        center[0] + radius * np.cos(theta),
        center[1] + radius * np.sin(theta),
    ]))
    return resample(dense, n)


def normalize(
    contour: Contour,
    area: float = 1.0,
    centroid: tuple[float, float] | None = None,
) -> Contour:
    """
    Rescale about the centroid to the requested area, then optionally move
    the centroid.
    """
    c1, c2 = contour.centroid
    result = contour.scaled(np.sqrt(area / contour.area), (c1, c2))
    if centroid is not None:
        result = result.translated(centroid[0] - c1, centroid[1] - c2)
    return result
