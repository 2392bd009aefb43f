"""
Pseudo-spectral integrator for the 2D Boussinesq system

    rho_t + u . grad rho = 0
    omega_t + u . grad omega = nu Delta omega - d1 rho
    u = grad_perp Delta^{-1} omega

Viscosity is integrated exactly with an integrating factor and the nonlinear
terms with classical RK4. Each step also returns the four stage velocities so
marker transport can reuse them.
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np

from bqlab.constants import EPSILON_FACTOR, MEAN_TOLERANCE, TINY
from bqlab.errors import ConfigError, FormatError, GeometryError, NumericalAbort
from bqlab.contour import Contour
from bqlab.spectral import Grid, RealField, biot_savart, laplacian
from bqlab.tracker import rasterize

logger = logging.getLogger(__name__)

Regularity = Literal["smooth-compact", "grid-sampled"]
StageVelocities = tuple[tuple[RealField, RealField], ...]


@dataclass(frozen=True)
class SolverSettings:
    """
    Numerical parameters of the integrator.

    :param nu: Kinematic viscosity, > 0
    :param cfl: Courant number in (0, 1]
    :param dt_max: Upper bound on the step
    :param dealias: Apply the 2/3 rule to the nonlinear products
    :param enforce_symmetry: Project rho and omega onto odd-in-x2 after every step
    :param epsilon: Interface width; None resolves to 3 grid cells
    """
    nu: float
    cfl: float = 0.5
    dt_max: float = 1e-2
    dealias: bool = True
    enforce_symmetry: bool = True
    epsilon: float | None = None

    def __post_init__(self):
        if not self.nu > 0:
            raise ValueError(f"nu must be positive, got {self.nu}")
        if not 0 < self.cfl <= 1:
            raise ValueError(f"cfl must lie in (0, 1], got {self.cfl}")
        if not self.dt_max > 0:
            raise ValueError(f"dt_max must be positive, got {self.dt_max}")
        if self.epsilon is not None and not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")


@dataclass(frozen=True, eq=False)
class State:
    """
    Density and vorticity at time `t`, both mean-free on the same grid.
    """
    rho: RealField
    omega: RealField
    t: float = 0.0
    regularity: Regularity = "smooth-compact"

    def __post_init__(self):
        if self.rho.grid != self.omega.grid:
            raise ValueError("rho and omega live on different grids")
        if not np.isfinite(self.t):
            raise ValueError(f"time must be finite, got {self.t}")
        for name, field in (("rho", self.rho), ("omega", self.omega)):
            m = float(field.values.mean())
            if abs(m) > MEAN_TOLERANCE * max(1.0, field.max_abs):
                raise ValueError(f"{name} must be mean-free, mean is {m:.3e}")

    @property
    def grid(self) -> Grid:
        return self.rho.grid


def resolve_epsilon(settings: SolverSettings, grid: Grid) -> float:
    """
    The configured interface width, or three cells of the coarser direction.
    """
    if settings.epsilon is not None:
        return settings.epsilon
    return EPSILON_FACTOR * max(grid.hx, grid.hy)


def enforce_odd_symmetry(f: RealField) -> RealField:
    """
    Orthogonal projection onto fields odd in x2. Idempotent in floating point.
    """
    return RealField(f.grid, 0.5 * (f.values - f.grid.reflect(f.values)))


def parity_defect(f: RealField, parity: Literal["odd", "even"]) -> float:
    """
    Largest violation of the requested mirror parity.
    """
    mirrored = f.grid.reflect(f.values)
    if parity == "odd":
        return float(np.abs(f.values + mirrored).max())
    return float(np.abs(f.values - mirrored).max())


def _velocity_coefficients(grid: Grid, omega_hat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    psi_hat = -omega_hat * grid.inverse_k_squared
    return -grid.dy * psi_hat, grid.dx * psi_hat


def _tendencies(
    grid: Grid,
    rho_hat: np.ndarray,
    omega_hat: np.ndarray,
    dealias: bool,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """
    Nonlinear tendencies (omega, rho) in spectral space together with the
    advecting velocity on the grid.
    """
    mask = grid.dealias_mask if dealias else 1.0
    u1_hat, u2_hat = _velocity_coefficients(grid, omega_hat)

    u1 = grid.ifft(u1_hat * mask)
    u2 = grid.ifft(u2_hat * mask)
    rho_x = grid.ifft(grid.dx * rho_hat * mask)
    rho_y = grid.ifft(grid.dy * rho_hat * mask)
    omega_x = grid.ifft(grid.dx * omega_hat * mask)
    omega_y = grid.ifft(grid.dy * omega_hat * mask)

    omega_tendency = -grid.fft(u1 * omega_x + u2 * omega_y) * mask - grid.dx * rho_hat
    rho_tendency = -grid.fft(u1 * rho_x + u2 * rho_y) * mask

    # Advection of a mean-free field by a divergence-free velocity is mean-free.
    omega_tendency[0, 0] = 0.0
    rho_tendency[0, 0] = 0.0

    if not (np.isfinite(omega_tendency).all() and np.isfinite(rho_tendency).all()):
        raise NumericalAbort("non-finite values in the nonlinear tendencies")

    return omega_tendency, rho_tendency, u1, u2


def rhs(state: State, settings: SolverSettings) -> tuple[RealField, RealField, tuple[RealField, RealField]]:
    """
    Evaluate the right-hand side of the evolution equations.
    Viscous diffusion is excluded, the integrating factor applies it exactly.

    :param state: Current state
    :param settings: Solver settings
    :returns: (d omega / dt, d rho / dt, u) where u comes from Biot-Savart
    """
    grid = state.grid
    omega_hat = grid.fft(state.omega.values)
    omega_tendency, rho_tendency, _, _ = _tendencies(
        grid, grid.fft(state.rho.values), omega_hat, settings.dealias
    )

    return (
        RealField(grid, grid.ifft(omega_tendency)),
        RealField(grid, grid.ifft(rho_tendency)),
        biot_savart(state.omega),
    )


def max_speed(state: State) -> float:
    u1, u2 = biot_savart(state.omega)
    return float(np.sqrt(u1.values ** 2 + u2.values ** 2).max())


def _cfl_limit(speed: float, grid: Grid, settings: SolverSettings) -> float:
    return min(settings.dt_max, settings.cfl * min(grid.hx, grid.hy) / max(speed, TINY))


def cfl_dt(state: State, settings: SolverSettings) -> float:
    """
    Largest admissible step, ``min(dt_max, cfl * min(hx, hy) / max|u|)``.
    """
    return _cfl_limit(max_speed(state), state.grid, settings)


def step_with_stages(
    state: State,
    dt: float,
    settings: SolverSettings,
) -> tuple[State, StageVelocities]:
    """
    Advance by one integrating-factor RK4 step.

    :param state: State at time t
    :param dt: Step size, 0 < dt <= cfl_dt(state)
    :param settings: Solver settings
    :returns: The state at t + dt and the advecting velocity at each of the four stages
    :raises NumericalAbort: On a CFL violation or non-finite values
    """
    grid = state.grid
    if not dt > 0:
        raise NumericalAbort(f"step size must be positive, got {dt}")

    limit = cfl_dt(state, settings)
    if dt > limit * (1 + 1e-12):
        raise NumericalAbort(f"CFL violation: dt={dt:.6g} exceeds the admissible {limit:.6g}")

    decay = -settings.nu * grid.k_squared
    half = np.exp(decay * dt / 2)
    full = half * half

    omega0 = grid.fft(state.omega.values)
    rho0 = grid.fft(state.rho.values)

    w1, r1, *u_a = _tendencies(grid, rho0, omega0, settings.dealias)
    w2, r2, *u_b = _tendencies(
        grid,
        rho0 + dt / 2 * r1,
        half * (omega0 + dt / 2 * w1),
        settings.dealias,
    )
    w3, r3, *u_c = _tendencies(
        grid,
        rho0 + dt / 2 * r2,
        half * omega0 + dt / 2 * w2,
        settings.dealias,
    )
    w4, r4, *u_d = _tendencies(
        grid,
        rho0 + dt * r3,
        full * omega0 + dt * half * w3,
        settings.dealias,
    )

    omega1 = full * omega0 + dt / 6 * (full * w1 + 2 * half * (w2 + w3) + w4)
    rho1 = rho0 + dt / 6 * (r1 + 2 * r2 + 2 * r3 + r4)

    omega_values = grid.ifft(omega1)
    rho_values = grid.ifft(rho1)
    if not (np.isfinite(omega_values).all() and np.isfinite(rho_values).all()):
        raise NumericalAbort(f"non-finite state after step at t={state.t + dt:.6g}")

    rho = RealField(grid, rho_values)
    omega = RealField(grid, omega_values)
    if settings.enforce_symmetry:
        rho = enforce_odd_symmetry(rho)
        omega = enforce_odd_symmetry(omega)

    stages = tuple(
        (RealField(grid, u1), RealField(grid, u2))
        for u1, u2 in (u_a, u_b, u_c, u_d)
    )
    return State(rho, omega, state.t + dt, state.regularity), stages


def step(state: State, dt: float, settings: SolverSettings) -> State:
    """
    Advance by one step, discarding the stage velocities.
    """
    return step_with_stages(state, dt, settings)[0]


def bump(s: np.ndarray) -> np.ndarray:
    """
    Smooth compactly supported bump, equal to 1 at s = 0 and vanishing for |s| >= 1.
    """
    inside = np.abs(s) < 1
    safe = np.where(inside, 1 - s ** 2, 1.0)
    return np.where(inside, np.exp(1 - 1 / safe), 0.0)


def mode_stream_function(
    grid: Grid,
    amplitude: float,
    mode: int,
    radius: float,
    center: tuple[float, float],
) -> RealField:
    """
    Odd-in-x2 stream function built from a smooth bump carrying `mode`
    oscillations along x1, mirrored across the axis with opposite sign.
    """
    c1, c2 = center
    if c1 - radius <= 0 or c1 + radius >= grid.lx:
        raise ConfigError("bump support crosses the periodic seam in x1", key="velocity.center_x1")
    if c2 - radius <= 0 or c2 + radius >= grid.ly / 2:
        raise ConfigError(
            "bump support must lie strictly inside the upper half of the box",
            key="velocity.center_x2",
        )

    def upper(x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
        s = np.hypot(x1 - c1, x2 - c2) / radius
        return amplitude * bump(s) * np.cos(mode * np.pi * (x1 - c1) / radius)

    x1, x2 = grid.mesh
    return RealField(grid, upper(x1, x2) - upper(x1, -x2))


def check_velocity_parity(omega: RealField, tolerance: float = 1e-8):
    """
    Verify u1 is even and u2 odd in x2 for the velocity of `omega`.

    :raises ConfigError: When the initial velocity breaks the mirror contract
    """
    u1, u2 = biot_savart(omega)
    scale = max(1.0, u1.max_abs, u2.max_abs)
    defect = max(parity_defect(u1, "even"), parity_defect(u2, "odd"))
    if defect > tolerance * scale:
        raise ConfigError(
            f"initial velocity violates the mirror parity (u1 even, u2 odd), defect {defect:.3e}",
            key="velocity.kind",
        )


@dataclass(frozen=True)
class VelocityRecipe:
    """
    How to build the initial vorticity.

    ``zero`` starts from rest, ``mode`` uses :func:`mode_stream_function`,
    ``file`` loads an omega snapshot in the BQP1 format.
    """
    kind: Literal["zero", "mode", "file"] = "zero"
    amplitude: float = 0.0
    mode: int = 1
    radius: float = 1.0
    center: tuple[float, float] = (0.0, 0.0)
    file: Path | None = None


def initial_vorticity(recipe: VelocityRecipe, grid: Grid) -> tuple[RealField, Regularity]:
    """
    Build the initial vorticity and report its provenance.

    :raises ConfigError: On a parity violation or a snapshot on the wrong grid
    """
    match recipe.kind:
        case "zero":
            return grid.zeros(), "smooth-compact"
        case "mode":
            psi = mode_stream_function(
                grid, recipe.amplitude, recipe.mode, recipe.radius, recipe.center
            )
            omega = enforce_odd_symmetry(laplacian(psi))
            regularity: Regularity = "smooth-compact"
        case "file":
            from bqlab.io import read_field

            if recipe.file is None:
                raise ConfigError("a snapshot path is required", key="velocity.file")
            try:
                _, omega = read_field(recipe.file, grid)
            except FormatError as e:
                raise ConfigError(str(e), key="velocity.file") from e
            omega = RealField(grid, omega.values - omega.values.mean())
            regularity = "grid-sampled"
        case _:
            raise ConfigError(f"unknown velocity kind `{recipe.kind}`", key="velocity.kind")

    check_velocity_parity(omega)
    return omega, regularity


def seed_state(
    patch: Contour,
    height_offset: float,
    velocity: VelocityRecipe,
    grid: Grid,
    settings: SolverSettings,
) -> State:
    """
    Build the initial state: the patch lifted by `height_offset`, rasterized
    into an odd density, and the requested initial vorticity.

    :param patch: Unit-area patch boundary
    :param height_offset: Vertical translation applied to the patch
    :param velocity: Initial velocity recipe
    :param grid: Simulation grid
    :param settings: Solver settings, used for the interface width
    :raises GeometryError: If the patch is not unit area or touches the axis band
    """
    contour = patch.translated(0.0, height_offset) if height_offset else patch
    epsilon = resolve_epsilon(settings, grid)

    if abs(contour.area - 1.0) > 1e-3:
        raise GeometryError(f"patch area must be 1, got {contour.area:.6g}")
    if contour.markers[:, 1].min() <= epsilon:
        raise GeometryError(
            f"patch comes within {epsilon:.3g} of the symmetry axis; raise patch.height"
        )

    rho = rasterize(contour, grid, epsilon)
    omega, regularity = initial_vorticity(velocity, grid)

    logger.info(
        "seeded %dx%d state: epsilon=%.4g, velocity=%s (%s)",
        grid.nx, grid.ny, epsilon, velocity.kind, regularity,
    )
    return State(rho, omega, 0.0, regularity)
