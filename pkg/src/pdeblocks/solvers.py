"""Explicit finite-difference solvers for five periodic 1D equations.

These produce the ground-truth trajectories the neural operators train
against. Linear equations also get exact spectral oracles for validation.
Schemes: 1st-order upwind for linear convection, forward-Euler + central
differences for diffusion, conservative 1st-order upwind flux (f = u^2/2)
for nonlinear convection, and 2nd-order upwind advection + central
diffusion for Burgers and convection-diffusion. Stability is handled by
integer substepping of the 0.01 output stride under a CFL safety factor.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import DivergenceError, StabilityError
from .grid import Field1D, Grid1D, ParamVector, Trajectory
from .validation import check_non_negative

# Hard stability limits of the explicit schemes; the safety factor in
# SolverConfig keeps production runs well inside them.
_ADVECTIVE_LIMIT = 1.0
_DIFFUSIVE_LIMIT = 0.5
_CFL_TOL = 1e-12


class EquationKind(enum.IntEnum):
    """The five supported equations; values are the on-disk wire tags."""

    CONVECTION = 0
    DIFFUSION = 1
    NONLINEAR_CONVECTION = 2
    BURGERS = 3
    CONVECTION_DIFFUSION = 4

    @classmethod
    def from_name(cls, name: str) -> "EquationKind":
        try:
            return cls[name.strip().upper()]
        except KeyError:
            options = ", ".join(k.name.lower() for k in cls)
            raise ValueError(f"unknown equation {name!r}; expected one of {options}") from None

    @classmethod
    def from_tag(cls, tag: int) -> "EquationKind":
        try:
            return cls(tag)
        except ValueError:
            raise ValueError(f"unknown equation tag {tag}") from None

    @property
    def required_params(self) -> tuple[str, ...]:
        return _REQUIRED_PARAMS[self]

    @property
    def is_nonlinear(self) -> bool:
        return self in (EquationKind.NONLINEAR_CONVECTION, EquationKind.BURGERS)


_REQUIRED_PARAMS = {
    EquationKind.CONVECTION: ("beta",),
    EquationKind.DIFFUSION: ("nu",),
    EquationKind.NONLINEAR_CONVECTION: (),
    EquationKind.BURGERS: ("nu",),
    EquationKind.CONVECTION_DIFFUSION: ("beta", "nu"),
}


def require_params(kind: EquationKind, params: ParamVector) -> None:
    missing = [n for n in kind.required_params if getattr(params, n) is None]
    if missing:
        raise ValueError(f"{kind.name.lower()} requires parameters {missing}")


def effective_diffusivity(kind: EquationKind, nu: float | None) -> float:
    """Diffusion coefficient actually applied: nu/pi for Burgers, nu otherwise."""
    if kind is EquationKind.BURGERS:
        return float(nu) / math.pi
    if kind in (EquationKind.DIFFUSION, EquationKind.CONVECTION_DIFFUSION):
        return float(nu)
    return 0.0


@dataclass(frozen=True)
class SolverConfig:
    """Output stride, CFL safety factor, and horizon for a solve."""

    sample_dt: float = 0.01
    cfl_safety: float = 0.4
    n_steps: int = 10
    max_substeps: int = 10_000_000

    def __post_init__(self) -> None:
        if not (np.isfinite(self.sample_dt) and self.sample_dt > 0.0):
            raise ValueError(f"sample_dt must be positive, got {self.sample_dt}")
        if not (0.0 < self.cfl_safety < 1.0):
            raise ValueError(f"cfl_safety must lie in (0, 1), got {self.cfl_safety}")
        if self.n_steps < 0:
            raise ValueError(f"n_steps must be >= 0, got {self.n_steps}")


def substep_count(
    kind: EquationKind,
    params: ParamVector,
    grid: Grid1D,
    u_max: float,
    cfl_safety: float,
    sample_dt: float = 0.01,
    max_substeps: int = 10_000_000,
) -> int:
    """Smallest substep count m so dt_int = sample_dt/m meets both CFL limits.

    Advective: |c| * dt_int / dx <= cfl_safety with c = beta (linear) or u_max
    (nonlinear). Diffusive: nu_eff * dt_int / dx^2 <= cfl_safety / 2.
    """
    require_params(kind, params)
    check_non_negative(u_max, "u_max")
    dx = grid.dx
    if kind in (EquationKind.CONVECTION, EquationKind.CONVECTION_DIFFUSION):
        speed = abs(params.get("beta"))
    elif kind.is_nonlinear:
        speed = float(u_max)
    else:
        speed = 0.0
    nu_eff = effective_diffusivity(kind, params.nu) if "nu" in kind.required_params else 0.0

    m = 1
    if speed > 0.0:
        m = max(m, math.ceil(speed * sample_dt / (cfl_safety * dx)))
    if nu_eff > 0.0:
        m = max(m, math.ceil(2.0 * nu_eff * sample_dt / (cfl_safety * dx * dx)))
    if m > max_substeps:
        raise StabilityError(
            f"stable integration of {kind.name.lower()} needs {m} substeps per "
            f"output step, above the cap of {max_substeps}"
        )
    return m


# -- array kernels (periodic via np.roll); dt here is the internal substep --

def _convection_upwind1(u: np.ndarray, beta: float, dt: float, dx: float) -> np.ndarray:
    c = beta * dt / dx
    if beta >= 0.0:
        return u - c * (u - np.roll(u, 1))
    return u - c * (np.roll(u, -1) - u)


def _laplacian(u: np.ndarray) -> np.ndarray:
    return np.roll(u, -1) - 2.0 * u + np.roll(u, 1)


def _diffusion_central(u: np.ndarray, nu_eff: float, dt: float, dx: float) -> np.ndarray:
    return u + (nu_eff * dt / (dx * dx)) * _laplacian(u)


def _nonlinear_convection(u: np.ndarray, dt: float, dx: float) -> np.ndarray:
    # Conservative form with flux f = u^2/2, upwinded by the sign of the
    # interface velocity; preserves the grid mean exactly.
    flux = 0.5 * u * u
    u_interface = 0.5 * (u + np.roll(u, -1))
    flux_half = np.where(u_interface >= 0.0, flux, np.roll(flux, -1))
    return u - (dt / dx) * (flux_half - np.roll(flux_half, 1))


def _upwind2_dudx(u: np.ndarray, dx: float, upstream_sign) -> np.ndarray:
    # Three-point biased stencils, selected per node by the advection sign.
    fwd = (3.0 * u - 4.0 * np.roll(u, 1) + np.roll(u, 2)) / (2.0 * dx)
    bwd = (-3.0 * u + 4.0 * np.roll(u, -1) - np.roll(u, -2)) / (2.0 * dx)
    return np.where(upstream_sign >= 0.0, fwd, bwd)


def _advect_diffuse(u: np.ndarray, velocity, nu_eff: float, dt: float, dx: float) -> np.ndarray:
    # Shared Burgers / convection-diffusion update. With velocity == 0 the
    # result is bit-identical to _diffusion_central; with nu_eff == 0 the
    # diffusive term contributes exactly zero.
    dudx = _upwind2_dudx(u, dx, velocity)
    return u - dt * velocity * dudx + (nu_eff * dt / (dx * dx)) * _laplacian(u)


def _burgers(u: np.ndarray, nu: float, dt: float, dx: float) -> np.ndarray:
    return _advect_diffuse(u, u, nu / math.pi, dt, dx)


def _convection_diffusion(u: np.ndarray, beta: float, nu: float, dt: float, dx: float) -> np.ndarray:
    return _advect_diffuse(u, beta, nu, dt, dx)


def _require_cfl(number: float, limit: float, label: str) -> None:
    if number > limit + _CFL_TOL:
        raise StabilityError(
            f"{label} number {number:.6g} exceeds the stability limit {limit}; "
            f"reduce dt_int via substepping"
        )


# -- public single-step operations on fields --

def step_convection_upwind1(u: Field1D, beta: float, dt_int: float) -> Field1D:
    _require_cfl(abs(beta) * dt_int / u.grid.dx, _ADVECTIVE_LIMIT, "advective CFL")
    return Field1D(u.grid, _convection_upwind1(u.values, beta, dt_int, u.grid.dx))


def step_diffusion_central(u: Field1D, nu_eff: float, dt_int: float) -> Field1D:
    check_non_negative(nu_eff, "nu_eff")
    _require_cfl(nu_eff * dt_int / u.grid.dx**2, _DIFFUSIVE_LIMIT, "diffusive stability")
    return Field1D(u.grid, _diffusion_central(u.values, nu_eff, dt_int, u.grid.dx))


def step_nonlinear_convection(u: Field1D, dt_int: float) -> Field1D:
    u_max = float(np.max(np.abs(u.values)))
    _require_cfl(u_max * dt_int / u.grid.dx, _ADVECTIVE_LIMIT, "advective CFL")
    return Field1D(u.grid, _nonlinear_convection(u.values, dt_int, u.grid.dx))


def step_burgers(u: Field1D, nu: float, dt_int: float) -> Field1D:
    u_max = float(np.max(np.abs(u.values)))
    _require_cfl(u_max * dt_int / u.grid.dx, _ADVECTIVE_LIMIT, "advective CFL")
    _require_cfl((nu / math.pi) * dt_int / u.grid.dx**2, _DIFFUSIVE_LIMIT, "diffusive stability")
    return Field1D(u.grid, _burgers(u.values, nu, dt_int, u.grid.dx))


def step_convection_diffusion(u: Field1D, beta: float, nu: float, dt_int: float) -> Field1D:
    _require_cfl(abs(beta) * dt_int / u.grid.dx, _ADVECTIVE_LIMIT, "advective CFL")
    _require_cfl(nu * dt_int / u.grid.dx**2, _DIFFUSIVE_LIMIT, "diffusive stability")
    return Field1D(u.grid, _convection_diffusion(u.values, beta, nu, dt_int, u.grid.dx))


def solve_trajectory(
    kind: EquationKind,
    u0: Field1D,
    params: ParamVector,
    config: SolverConfig,
) -> Trajectory:
    """Advance u0 for n_steps output strides, substepping for stability.

    For nonlinear equations the substep count is re-derived each output step
    from the current max |u|.
    """
    require_params(kind, params)
    grid = u0.grid
    dx = grid.dx

    if kind is EquationKind.CONVECTION:
        beta = params.get("beta")
        kernel = lambda v, dt: _convection_upwind1(v, beta, dt, dx)  # noqa: E731
    elif kind is EquationKind.DIFFUSION:
        nu = params.get("nu")
        kernel = lambda v, dt: _diffusion_central(v, nu, dt, dx)  # noqa: E731
    elif kind is EquationKind.NONLINEAR_CONVECTION:
        kernel = lambda v, dt: _nonlinear_convection(v, dt, dx)  # noqa: E731
    elif kind is EquationKind.BURGERS:
        nu = params.get("nu")
        kernel = lambda v, dt: _burgers(v, nu, dt, dx)  # noqa: E731
    else:
        beta = params.get("beta")
        nu = params.get("nu")
        kernel = lambda v, dt: _convection_diffusion(v, beta, nu, dt, dx)  # noqa: E731

    out = np.empty((config.n_steps + 1, grid.nx), dtype=np.float64)
    out[0] = u0.values
    state = u0.values.copy()
    substeps = None
    for k in range(config.n_steps):
        if substeps is None or kind.is_nonlinear:
            u_max = float(np.max(np.abs(state)))
            substeps = substep_count(
                kind, params, grid, u_max, config.cfl_safety,
                config.sample_dt, config.max_substeps,
            )
        dt_int = config.sample_dt / substeps
        for _ in range(substeps):
            state = kernel(state, dt_int)
        if not np.all(np.isfinite(state)):
            raise DivergenceError(
                f"{kind.name.lower()} solve produced non-finite values at "
                f"output step {k + 1} of {config.n_steps}"
            )
        out[k + 1] = state
    return Trajectory(grid=grid, dt=config.sample_dt, params=params, values=out)


# -- exact spectral oracles for the linear equations --

def _apply_mode_factor(u0: Field1D, factor: np.ndarray) -> Field1D:
    spectrum = np.fft.rfft(u0.values)
    return Field1D(u0.grid, np.fft.irfft(spectrum * factor, n=u0.grid.nx))


def _angular_wavenumbers(grid: Grid1D) -> np.ndarray:
    return 2.0 * np.pi * np.arange(grid.nx // 2 + 1) / grid.length


def exact_convection(u0: Field1D, beta: float, t: float) -> Field1D:
    """Periodic translation: mode k gains phase exp(-i 2pi k beta t / L)."""
    k = _angular_wavenumbers(u0.grid)
    return _apply_mode_factor(u0, np.exp(-1j * k * beta * t))


def exact_diffusion(u0: Field1D, nu_eff: float, t: float) -> Field1D:
    """Heat kernel: mode k decays by exp(-nu_eff (2pi k / L)^2 t)."""
    k = _angular_wavenumbers(u0.grid)
    return _apply_mode_factor(u0, np.exp(-nu_eff * k * k * t))


def exact_convection_diffusion(u0: Field1D, beta: float, nu: float, t: float) -> Field1D:
    """Per-mode translation and decay combined."""
    k = _angular_wavenumbers(u0.grid)
    return _apply_mode_factor(u0, np.exp(-1j * k * beta * t - nu * k * k * t))
