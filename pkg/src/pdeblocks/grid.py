"""Uniform periodic 1D grids and the field/trajectory containers built on them.

Everything here is immutable after construction and safe to share across
threads; arithmetic returns new objects.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _freeze(values, shape_name: str) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{shape_name} must contain only finite values")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Grid1D:
    """Uniform periodic grid on [0, L) with node j at x_j = j*dx, dx = L/nx."""

    nx: int
    length: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "nx", int(self.nx))
        object.__setattr__(self, "length", float(self.length))
        if self.nx < 8 or self.nx % 2 != 0:
            raise ValueError(f"nx must be an even integer >= 8, got {self.nx}")
        if not (np.isfinite(self.length) and self.length > 0.0):
            raise ValueError(f"length must be positive and finite, got {self.length}")

    @property
    def dx(self) -> float:
        return self.length / self.nx

    @property
    def x(self) -> np.ndarray:
        return np.arange(self.nx) * self.dx


def make_grid(nx: int, length: float = 1.0) -> Grid1D:
    """Build a periodic grid with ``nx`` even nodes spanning ``[0, length)``."""
    return Grid1D(nx=nx, length=length)


@dataclass(frozen=True)
class ParamVector:
    """Equation parameters; a field is present (not None) only when used."""

    beta: float | None = None
    nu: float | None = None

    def __post_init__(self) -> None:
        if self.beta is not None:
            beta = float(self.beta)
            if not np.isfinite(beta):
                raise ValueError(f"beta must be finite, got {beta}")
            object.__setattr__(self, "beta", beta)
        if self.nu is not None:
            nu = float(self.nu)
            if not (np.isfinite(nu) and nu > 0.0):
                raise ValueError(f"nu must be finite and strictly positive, got {nu}")
            object.__setattr__(self, "nu", nu)

    @property
    def p(self) -> int:
        """Number of present parameters."""
        return (self.beta is not None) + (self.nu is not None)

    def names(self) -> tuple[str, ...]:
        """Present parameter names in canonical (beta, nu) order."""
        out = []
        if self.beta is not None:
            out.append("beta")
        if self.nu is not None:
            out.append("nu")
        return tuple(out)

    def values(self) -> np.ndarray:
        """Present parameter values in canonical order."""
        return np.array([getattr(self, n) for n in self.names()], dtype=np.float64)

    def get(self, name: str) -> float:
        value = getattr(self, name)
        if value is None:
            raise KeyError(f"parameter {name!r} is not present")
        return value


@dataclass(frozen=True, eq=False)
class Field1D:
    """A real scalar function sampled on a Grid1D; values are read-only."""

    grid: Grid1D
    values: np.ndarray

    def __post_init__(self) -> None:
        arr = _freeze(self.values, "field values")
        if arr.shape != (self.grid.nx,):
            raise ValueError(
                f"field values must have shape ({self.grid.nx},), got {arr.shape}"
            )
        object.__setattr__(self, "values", arr)

    def _check_same_grid(self, other: "Field1D") -> None:
        if self.grid != other.grid:
            raise ValueError("fields live on different grids")

    def __add__(self, other: "Field1D") -> "Field1D":
        self._check_same_grid(other)
        return Field1D(self.grid, self.values + other.values)

    def __sub__(self, other: "Field1D") -> "Field1D":
        self._check_same_grid(other)
        return Field1D(self.grid, self.values - other.values)

    def __mul__(self, scalar: float) -> "Field1D":
        return Field1D(self.grid, self.values * float(scalar))

    __rmul__ = __mul__


def boundary_pair(field: Field1D) -> tuple[float, float]:
    """Values at the boundary nodes: (u[0], u[nx-1])."""
    return float(field.values[0]), float(field.values[-1])


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Snapshots u(t_k), k = 0..n_steps, at fixed stride dt on one grid."""

    grid: Grid1D
    dt: float
    params: ParamVector
    values: np.ndarray  # shape [n_steps + 1, nx]

    def __post_init__(self) -> None:
        object.__setattr__(self, "dt", float(self.dt))
        if not (np.isfinite(self.dt) and self.dt > 0.0):
            raise ValueError(f"dt must be positive and finite, got {self.dt}")
        arr = _freeze(self.values, "trajectory values")
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] != self.grid.nx:
            raise ValueError(
                f"trajectory values must have shape [n_steps+1, {self.grid.nx}], "
                f"got {arr.shape}"
            )
        object.__setattr__(self, "values", arr)

    @property
    def n_steps(self) -> int:
        return self.values.shape[0] - 1

    def snapshot(self, k: int) -> Field1D:
        return Field1D(self.grid, self.values[k])

    @property
    def snapshots(self) -> list[Field1D]:
        return [self.snapshot(k) for k in range(self.values.shape[0])]


@dataclass(frozen=True, eq=False)
class BoundaryValues:
    """Prescribed Dirichlet values per time index at the two boundary nodes."""

    left: np.ndarray
    right: np.ndarray

    def __post_init__(self) -> None:
        left = _freeze(np.atleast_1d(self.left), "left boundary values")
        right = _freeze(np.atleast_1d(self.right), "right boundary values")
        if left.ndim != 1 or right.ndim != 1 or left.shape != right.shape:
            raise ValueError(
                f"left/right boundary series must be 1D with equal length, "
                f"got {left.shape} and {right.shape}"
            )
        object.__setattr__(self, "left", left)
        object.__setattr__(self, "right", right)

    def __len__(self) -> int:
        return self.left.shape[0]

    def at(self, k: int) -> tuple[float, float]:
        return float(self.left[k]), float(self.right[k])

    @classmethod
    def from_trajectory(cls, traj: Trajectory) -> "BoundaryValues":
        """Extract the boundary node series of a trajectory."""
        return cls(left=traj.values[:, 0], right=traj.values[:, -1])
