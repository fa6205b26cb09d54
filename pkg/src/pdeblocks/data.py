"""Initial-condition sampling, dataset generation, persistence, and splits.

Datasets are bundles of solver trajectories over a fixed parameter grid,
stored in a little-endian binary format (magic ``CNO1DSET``) with a CRC32
trailer so round trips are bit-exact and corruption is detected.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import binio
from .errors import DataFormatError
from .grid import Field1D, Grid1D, ParamVector, Trajectory
from .solvers import EquationKind, SolverConfig, require_params, solve_trajectory
from .validation import check_count, check_fraction

DATASET_MAGIC = b"CNO1DSET"
DATASET_VERSION = 1


@dataclass(frozen=True)
class ICSpec:
    """Superposition of n_waves random sinusoids with integer wavenumbers."""

    n_waves: int = 2
    n_max: int = 8
    amp_range: tuple[float, float] = (0.0, 1.0)
    phase_range: tuple[float, float] = (0.0, 2.0 * math.pi)
    seed: int = 0

    def __post_init__(self) -> None:
        check_count(self.n_waves, "n_waves", minimum=1)
        check_count(self.n_max, "n_max", minimum=1)
        for name in ("amp_range", "phase_range"):
            lo, hi = getattr(self, name)
            if not (np.isfinite(lo) and np.isfinite(hi) and lo <= hi):
                raise ValueError(f"{name} must be an ordered finite pair, got ({lo}, {hi})")


def sample_ic(spec: ICSpec, grid: Grid1D, rng: np.random.Generator) -> Field1D:
    """Draw u0(x) = sum_i A_i sin(2 pi n_i x / L + phi_i).

    Draw order is fixed (wavenumbers, then amplitudes, then phases) so a
    given generator state always yields the same field.
    """
    n = rng.integers(1, spec.n_max + 1, size=spec.n_waves)
    amps = rng.uniform(spec.amp_range[0], spec.amp_range[1], size=spec.n_waves)
    phases = rng.uniform(spec.phase_range[0], spec.phase_range[1], size=spec.n_waves)
    x = grid.x
    values = np.zeros(grid.nx, dtype=np.float64)
    for n_i, a_i, phi_i in zip(n, amps, phases):
        values += a_i * np.sin(2.0 * np.pi * n_i * x / grid.length + phi_i)
    return Field1D(grid, values)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Trajectories of one equation sharing grid, stride, and horizon."""

    kind: EquationKind
    grid: Grid1D
    dt: float
    trajectories: tuple[Trajectory, ...]
    split_ratio: float = 0.8

    def __post_init__(self) -> None:
        object.__setattr__(self, "trajectories", tuple(self.trajectories))
        object.__setattr__(self, "dt", float(self.dt))
        check_fraction(self.split_ratio, "split_ratio")
        required = self.kind.required_params
        horizon = None
        for i, traj in enumerate(self.trajectories):
            if traj.grid != self.grid:
                raise ValueError(f"trajectory {i} has grid {traj.grid}, expected {self.grid}")
            if traj.dt != self.dt:
                raise ValueError(f"trajectory {i} has dt {traj.dt}, expected {self.dt}")
            if horizon is None:
                horizon = traj.n_steps
            elif traj.n_steps != horizon:
                raise ValueError(
                    f"trajectory {i} has {traj.n_steps} steps, expected {horizon}"
                )
            if traj.params.names() != required:
                raise ValueError(
                    f"trajectory {i} carries parameters {traj.params.names()}, "
                    f"but {self.kind.name.lower()} requires exactly {required}"
                )

    @property
    def n_trajectories(self) -> int:
        return len(self.trajectories)

    @property
    def n_steps(self) -> int:
        if not self.trajectories:
            return 0
        return self.trajectories[0].n_steps

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        if (self.kind, self.grid, self.dt, self.n_trajectories) != (
            other.kind, other.grid, other.dt, other.n_trajectories,
        ):
            return False
        return all(
            a.params == b.params and np.array_equal(a.values, b.values)
            for a, b in zip(self.trajectories, other.trajectories)
        )


def generate_dataset(
    kind: EquationKind,
    param_grid: list[ParamVector],
    n_per_param: int,
    grid: Grid1D,
    n_steps: int,
    spec: ICSpec,
    sample_dt: float = 0.01,
    cfl_safety: float = 0.4,
) -> Dataset:
    """Solve n_per_param fresh-IC trajectories for every parameter point.

    Trajectory j (in param-major order) uses the RNG seed spec.seed + j, so
    regeneration is deterministic and samples are independent.
    """
    if not param_grid:
        raise ValueError("param_grid must be non-empty")
    for params in param_grid:
        require_params(kind, params)
    check_count(n_per_param, "n_per_param", minimum=0)
    config = SolverConfig(sample_dt=sample_dt, cfl_safety=cfl_safety, n_steps=n_steps)

    trajectories = []
    index = 0
    for params in param_grid:
        for _ in range(n_per_param):
            rng = np.random.default_rng(spec.seed + index)
            u0 = sample_ic(spec, grid, rng)
            try:
                trajectories.append(solve_trajectory(kind, u0, params, config))
            except Exception as exc:
                raise type(exc)(f"sample {index} (params {params}): {exc}") from exc
            index += 1
    return Dataset(kind=kind, grid=grid, dt=sample_dt, trajectories=tuple(trajectories))


def save_dataset(ds: Dataset, path) -> None:
    """Write the CNO1DSET binary format; bit-exact under load_dataset."""
    writer = binio.ByteWriter()
    writer.u32(DATASET_VERSION)
    writer.u8(int(ds.kind))
    writer.u32(ds.grid.nx)
    writer.f64(ds.grid.length)
    writer.f64(ds.dt)
    writer.u32(ds.n_steps)
    writer.u32(ds.n_trajectories)
    required = ds.kind.required_params
    writer.u8(len(required))
    for traj in ds.trajectories:
        for name in required:
            writer.f64(traj.params.get(name))
        writer.f64_values(traj.values)
    binio.write_framed(path, DATASET_MAGIC, writer.payload())


def load_dataset(path) -> Dataset:
    payload, stored_crc = binio.read_framed(path, DATASET_MAGIC)
    reader = binio.ByteReader(payload)
    version = reader.u32()
    if version != DATASET_VERSION:
        raise DataFormatError(
            f"{path}: unsupported dataset version {version}, expected {DATASET_VERSION}"
        )
    kind = EquationKind.from_tag(reader.u8())
    nx = reader.u32()
    length = reader.f64()
    dt = reader.f64()
    n_steps = reader.u32()
    n_traj = reader.u32()
    n_params = reader.u8()
    required = kind.required_params
    if n_params != len(required):
        raise DataFormatError(
            f"{path}: {kind.name.lower()} dataset declares {n_params} parameters, "
            f"expected {len(required)}"
        )
    grid = Grid1D(nx=nx, length=length)
    trajectories = []
    for _ in range(n_traj):
        values = {name: reader.f64() for name in required}
        params = ParamVector(**values)
        field_values = reader.f64_values((n_steps + 1) * nx).reshape(n_steps + 1, nx)
        trajectories.append(Trajectory(grid=grid, dt=dt, params=params, values=field_values))
    if not reader.done():
        raise DataFormatError(f"{path}: unexpected trailing bytes after payload")
    binio.verify_crc(payload, stored_crc, path)
    return Dataset(kind=kind, grid=grid, dt=dt, trajectories=tuple(trajectories))


def split(ds: Dataset, ratio: float, seed: int) -> tuple[Dataset, Dataset]:
    """Disjoint shuffled partition, stratified per distinct parameter point.

    Every parameter group with at least two trajectories contributes to both
    sides when 0 < ratio < 1.
    """
    check_fraction(ratio, "ratio")
    groups: dict[ParamVector, list[int]] = {}
    for i, traj in enumerate(ds.trajectories):
        groups.setdefault(traj.params, []).append(i)

    rng = np.random.default_rng(seed)
    train_idx: list[int] = []
    test_idx: list[int] = []
    for params in groups:
        indices = groups[params]
        order = rng.permutation(len(indices))
        if ratio == 1.0:
            n_train = len(indices)
        elif ratio == 0.0:
            n_train = 0
        else:
            n_train = int(round(ratio * len(indices)))
            if len(indices) >= 2:
                n_train = min(max(n_train, 1), len(indices) - 1)
        for pos, j in enumerate(order):
            (train_idx if pos < n_train else test_idx).append(indices[j])

    train_idx.sort()
    test_idx.sort()
    pick = lambda idx: tuple(ds.trajectories[i] for i in idx)  # noqa: E731
    train = Dataset(ds.kind, ds.grid, ds.dt, pick(train_idx), ds.split_ratio)
    test = Dataset(ds.kind, ds.grid, ds.dt, pick(test_idx), ds.split_ratio)
    return train, test
