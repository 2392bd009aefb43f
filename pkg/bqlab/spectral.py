"""
Periodic-grid field arithmetic on the torus [0, Lx) x [-Ly/2, Ly/2).

Fields live on an ``ij``-indexed node lattice: axis 0 is x1, axis 1 is x2, node
``(i, j)`` sits at ``(i * hx, -Ly/2 + j * hy)``. Transforms are real-to-complex
along x2 and normalized so coefficients are the continuum Fourier coefficients,
``f(x) = sum_k c_k exp(i k.x)``.
"""
import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.fft as sfft

from bqlab.constants import MEAN_TOLERANCE
from bqlab.utils import get_workers

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Grid:
    """
    Uniform node lattice on the periodic box.

    :param nx: Nodes along x1, a power of two >= 8
    :param ny: Nodes along x2, a power of two >= 8
    :param lx: Period along x1
    :param ly: Period along x2
    """
    nx: int
    ny: int
    lx: float
    ly: float

    def __post_init__(self):
        for name in ("nx", "ny"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
                raise ValueError(f"{name} must be an integer, got {value!r}")
            if value < 8 or value & (value - 1):
                raise ValueError(f"{name} must be a power of two >= 8, got {value}")
        for name in ("lx", "ly"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                raise ValueError(f"{name} must be positive and finite, got {value!r}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    @property
    def spectral_shape(self) -> tuple[int, int]:
        return (self.nx, self.ny // 2 + 1)

    @property
    def hx(self) -> float:
        return self.lx / self.nx

    @property
    def hy(self) -> float:
        return self.ly / self.ny

    @property
    def cell_area(self) -> float:
        return self.hx * self.hy

    @property
    def k_min(self) -> float:
        """Smallest nonzero wavenumber magnitude on the box."""
        return 2 * np.pi / max(self.lx, self.ly)

    @cached_property
    def x1(self) -> np.ndarray:
        return np.arange(self.nx) * self.hx

    @cached_property
    def x2(self) -> np.ndarray:
        return -0.5 * self.ly + np.arange(self.ny) * self.hy

    @cached_property
    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.x1, self.x2, indexing="ij")

    @cached_property
    def kx(self) -> np.ndarray:
        return (2 * np.pi / self.lx * sfft.fftfreq(self.nx, 1.0 / self.nx))[:, None]

    @cached_property
    def ky(self) -> np.ndarray:
        return (2 * np.pi / self.ly * sfft.rfftfreq(self.ny, 1.0 / self.ny))[None, :]

    @cached_property
    def k_squared(self) -> np.ndarray:
        return self.kx ** 2 + self.ky ** 2

    @cached_property
    def inverse_k_squared(self) -> np.ndarray:
        k2 = self.k_squared.copy()
        k2[0, 0] = 1.0
        inverse = 1.0 / k2
        inverse[0, 0] = 0.0
        return inverse

    @cached_property
    def dx(self) -> np.ndarray:
        """Multiplier for d/dx1; the Nyquist row is zeroed so odd derivatives stay real."""
        kx = self.kx.copy()
        kx[self.nx // 2, 0] = 0.0
        return 1j * kx

    @cached_property
    def dy(self) -> np.ndarray:
        ky = self.ky.copy()
        ky[0, -1] = 0.0
        return 1j * ky

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        i = np.abs(sfft.fftfreq(self.nx, 1.0 / self.nx))[:, None]
        j = sfft.rfftfreq(self.ny, 1.0 / self.ny)[None, :]
        return (i <= self.nx / 3) & (j <= self.ny / 3)

    @cached_property
    def mode_weights(self) -> np.ndarray:
        """
        Multiplicity of each stored rfft column in a full-spectrum sum: the
        ky = 0 and Nyquist columns appear once, every other column twice.
        """
        weights = np.full((1, self.ny // 2 + 1), 2.0)
        weights[0, 0] = 1.0
        weights[0, -1] = 1.0
        return weights

    def fft(self, values: np.ndarray) -> np.ndarray:
        return sfft.rfft2(values, norm="forward", workers=get_workers())

    def ifft(self, coefficients: np.ndarray) -> np.ndarray:
        return sfft.irfft2(coefficients, s=self.shape, norm="forward", workers=get_workers())

    def reflect(self, values: np.ndarray) -> np.ndarray:
        """
        Mirror node values across x2 = 0: column j maps to column (ny - j) mod ny.
        """
        return np.roll(values[:, ::-1], 1, axis=1)

    def zeros(self) -> "RealField":
        return RealField(self, np.zeros(self.shape))

    def from_function(self, fn) -> "RealField":
        """
        Sample ``fn(x1, x2)`` at every node.
        """
        x1, x2 = self.mesh
        return RealField(self, np.asarray(fn(x1, x2), dtype=float))


@dataclass(frozen=True, eq=False)
class RealField:
    """
    Real node values on a grid.
    """
    grid: Grid
    values: np.ndarray

    # numpy scalars defer to the reflected operators below
    __array_ufunc__ = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != self.grid.shape:
            raise ValueError(
                f"field shape {values.shape} does not match grid {self.grid.shape}"
            )
        if not np.isfinite(values).all():
            raise ValueError("field contains non-finite values")
        object.__setattr__(self, "values", values)

    def _other(self, other) -> np.ndarray | float:
        if isinstance(other, RealField):
            if other.grid != self.grid:
                raise ValueError("fields live on different grids")
            return other.values
        return other

    def __add__(self, other) -> "RealField":
        return RealField(self.grid, self.values + self._other(other))

    def __sub__(self, other) -> "RealField":
        return RealField(self.grid, self.values - self._other(other))

    def __mul__(self, other) -> "RealField":
        return RealField(self.grid, self.values * self._other(other))

    __rmul__ = __mul__

    def __neg__(self) -> "RealField":
        return RealField(self.grid, -self.values)

    @property
    def max_abs(self) -> float:
        return float(np.abs(self.values).max())


@dataclass(frozen=True, eq=False)
class SpectralField:
    """
    Fourier coefficients of a real field in rfft layout.
    """
    grid: Grid
    coefficients: np.ndarray

    def __post_init__(self):
        if self.coefficients.shape != self.grid.spectral_shape:
            raise ValueError(
                f"coefficient shape {self.coefficients.shape} does not match "
                f"{self.grid.spectral_shape}"
            )


def forward(f: RealField) -> SpectralField:
    return SpectralField(f.grid, f.grid.fft(f.values))


def inverse(f: SpectralField) -> RealField:
    return RealField(f.grid, f.grid.ifft(f.coefficients))


def _apply(f: RealField, multiplier: np.ndarray) -> RealField:
    grid = f.grid
    return RealField(grid, grid.ifft(grid.fft(f.values) * multiplier))


def partial_x(f: RealField) -> RealField:
    """d/dx1, spectrally exact for resolved modes."""
    return _apply(f, f.grid.dx)


def partial_y(f: RealField) -> RealField:
    """d/dx2, spectrally exact for resolved modes."""
    return _apply(f, f.grid.dy)


def laplacian(f: RealField) -> RealField:
    return _apply(f, -f.grid.k_squared)


def inverse_laplacian(f: RealField) -> RealField:
    """
    Mean-free solution of Delta g = f. A nonzero mean in `f` is projected out
    with a warning.

    :param f: Source field
    :returns: g with zero mean
    """
    _warn_nonzero_mean(f, "inverse_laplacian")
    return _apply(f, -f.grid.inverse_k_squared)


def biot_savart(omega: RealField) -> tuple[RealField, RealField]:
    """
    Recover the divergence-free velocity from vorticity:
    psi = Delta^{-1} omega, u1 = -d2 psi, u2 = d1 psi.

    :param omega: Vorticity field
    :returns: (u1, u2)
    """
    _warn_nonzero_mean(omega, "biot_savart")
    grid = omega.grid
    psi = -grid.fft(omega.values) * grid.inverse_k_squared
    return (
        RealField(grid, grid.ifft(-grid.dy * psi)),
        RealField(grid, grid.ifft(grid.dx * psi)),
    )


def dealias(f: SpectralField) -> SpectralField:
    """
    Zero every mode outside the 2/3 box.
    """
    return SpectralField(f.grid, f.coefficients * f.grid.dealias_mask)


def hs_norm(f: RealField, s: float) -> float:
    """
    Homogeneous Sobolev norm, ``||f||^2 = |box| * sum_{k != 0} |k|^{2s} |c_k|^2``.
    The zero mode is excluded for every `s`.

    :param f: Field to measure
    :param s: Regularity index in [-2, 2]
    :returns: The norm
    """
    if not -2 <= s <= 2:
        raise ValueError(f"Sobolev index must lie in [-2, 2], got {s}")

    grid = f.grid
    coefficients = grid.fft(f.values)
    k2 = grid.k_squared.copy()
    k2[0, 0] = 1.0
    weights = grid.mode_weights * k2 ** s
    weights[0, 0] = 0.0

    total = grid.lx * grid.ly * np.sum(weights * np.abs(coefficients) ** 2)
    return float(np.sqrt(total))


def integrate(f: RealField) -> float:
    return float(f.values.sum() * f.grid.cell_area)


def inner(f: RealField, g: RealField) -> float:
    if f.grid != g.grid:
        raise ValueError("fields live on different grids")
    return float(np.sum(f.values * g.values) * f.grid.cell_area)


def l2_norm(f: RealField) -> float:
    return float(np.sqrt(inner(f, f)))


def mean(f: RealField) -> float:
    return float(f.values.mean())


def _warn_nonzero_mean(f: RealField, where: str):
    m = mean(f)
    if abs(m) > MEAN_TOLERANCE * max(1.0, f.max_abs):
        logger.warning("%s: projecting out nonzero mean %.3e", where, m)
