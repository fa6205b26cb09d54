"""Trajectory metrics, dimensionless numbers, resolution resampling,
Pe/Re sweep campaigns, and temporal-extrapolation evaluation.

Per-step norms are un-normalized sums over nodes inside each ratio (node
count cancels); the relative L2 uses a 1e-8 stabilizer in the denominator.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .data import ICSpec, sample_ic
from .errors import ConfigError
from .grid import Field1D, Grid1D, ParamVector, Trajectory
from .solvers import EquationKind, SolverConfig, solve_trajectory
from .validation import check_choice, check_count, check_positive

REL_L2_EPS = 1e-8
DEFAULT_BUCKET_EDGES = (0.5, 2.0, 10.0, 50.0, 100.0, 200.0)


@dataclass(frozen=True)
class MetricReport:
    """Aggregate and per-time-step errors of a predicted trajectory."""

    mse: float
    mae: float
    rel_l2: float
    boundary_mae: float
    interior_mae: float
    per_step_mse: np.ndarray
    per_step_mae: np.ndarray
    per_step_rel_l2: np.ndarray


def _check_comparable(pred: Trajectory, truth: Trajectory) -> None:
    if pred.grid != truth.grid:
        raise ValueError("prediction and truth live on different grids")
    if pred.values.shape != truth.values.shape:
        raise ValueError(
            f"prediction has {pred.values.shape[0]} snapshots, "
            f"truth has {truth.values.shape[0]}"
        )


def _per_step_rel_l2(pred_values: np.ndarray, truth_values: np.ndarray) -> np.ndarray:
    diff_norm = np.linalg.norm(pred_values - truth_values, axis=1)
    truth_norm = np.linalg.norm(truth_values, axis=1)
    return diff_norm / (truth_norm + REL_L2_EPS)


def evaluate_trajectories(pred: Trajectory, truth: Trajectory) -> MetricReport:
    """All metrics over every time index (t = 0 included)."""
    _check_comparable(pred, truth)
    diff = pred.values - truth.values
    abs_diff = np.abs(diff)
    return MetricReport(
        mse=float(np.mean(diff * diff)),
        mae=float(np.mean(abs_diff)),
        rel_l2=float(np.mean(_per_step_rel_l2(pred.values, truth.values))),
        boundary_mae=float(np.mean(abs_diff[:, [0, -1]])),
        interior_mae=float(np.mean(abs_diff[:, 1:-1])),
        per_step_mse=np.mean(diff * diff, axis=1),
        per_step_mae=np.mean(abs_diff, axis=1),
        per_step_rel_l2=_per_step_rel_l2(pred.values, truth.values),
    )


def rel_l2(pred: Trajectory, truth: Trajectory) -> float:
    """Mean over time of per-step relative L2 errors."""
    _check_comparable(pred, truth)
    return float(np.mean(_per_step_rel_l2(pred.values, truth.values)))


def boundary_mae(pred: Trajectory, truth: Trajectory) -> float:
    """MAE restricted to the two boundary nodes, over all time indices."""
    _check_comparable(pred, truth)
    return float(np.mean(np.abs(pred.values[:, [0, -1]] - truth.values[:, [0, -1]])))


def peclet(beta: float, nu: float, length: float = 1.0) -> float:
    """Pe = beta * L / nu."""
    check_positive(nu, "nu")
    return beta * length / nu


def reynolds(u: Field1D, nu_eff: float, length: float = 1.0) -> float:
    """Re = |mean(u)| * L / nu_eff, with the diffusivity actually applied."""
    check_positive(nu_eff, "nu_eff")
    return abs(float(np.mean(u.values))) * length / nu_eff


def spectral_resample(u: Field1D, nx_new: int) -> Field1D:
    """Band-limited resampling by spectrum zero-padding or truncation.

    Exact for fields band-limited below the coarser Nyquist; an up-then-down
    round trip by the same factor is the identity.
    """
    nx = u.grid.nx
    new_grid = Grid1D(nx_new, u.grid.length)
    if nx_new == nx:
        return Field1D(new_grid, u.values)
    spectrum = np.fft.rfft(u.values)
    scale = nx_new / nx
    if nx_new > nx:
        out = np.zeros(nx_new // 2 + 1, dtype=np.complex128)
        out[: nx // 2 + 1] = spectrum * scale
        # The source Nyquist bin becomes an interior +-k pair; split it.
        out[nx // 2] *= 0.5
    else:
        out = spectrum[: nx_new // 2 + 1] * scale
        # The new Nyquist bin absorbs its dropped conjugate partner.
        out[-1] = 2.0 * scale * spectrum[nx_new // 2].real
    return Field1D(new_grid, np.fft.irfft(out, n=nx_new))


@dataclass(frozen=True)
class SweepSpec:
    """A Pe- or Re-bucketed error campaign over a parameter grid."""

    axis: str  # "peclet" or "reynolds"
    param_grid: tuple[ParamVector, ...]
    bucket_edges: tuple[float, ...] = DEFAULT_BUCKET_EDGES
    n_ics: int = 5
    ic: ICSpec = field(default_factory=ICSpec)
    seed: int = 0

    def __post_init__(self) -> None:
        check_choice(self.axis, {"peclet", "reynolds"}, "axis")
        check_count(self.n_ics, "n_ics", minimum=1)
        if not self.param_grid:
            raise ValueError("param_grid must be non-empty")
        edges = tuple(float(e) for e in self.bucket_edges)
        if len(edges) < 2 or any(b <= a for a, b in zip(edges, edges[1:])):
            raise ValueError(f"bucket_edges must strictly increase, got {edges}")
        object.__setattr__(self, "bucket_edges", edges)
        object.__setattr__(self, "param_grid", tuple(self.param_grid))


@dataclass(frozen=True)
class SweepRow:
    """One bucket: value is the bucket's upper edge."""

    axis: str
    value: float
    rel_l2_mean: float
    rel_l2_std: float
    n_samples: int


def _bucket_index(value: float, edges: tuple[float, ...]) -> int:
    if not (edges[0] <= value <= edges[-1]):
        raise ConfigError(
            f"axis value {value:.6g} falls outside the bucket edges "
            f"[{edges[0]:.6g}, {edges[-1]:.6g}]"
        )
    if value == edges[-1]:
        return len(edges) - 2
    return int(np.searchsorted(edges, value, side="right")) - 1


def run_sweep(
    predictor,
    spec: SweepSpec,
    kind: EquationKind,
    grid: Grid1D,
    solver: SolverConfig | None = None,
) -> list[SweepRow]:
    """Bucketed rel-L2 of ``predictor`` against fresh solver truth.

    predictor(u0, params, n_steps) must return a Trajectory. Sample j of
    parameter point i draws its IC with seed spec.seed + i*n_ics + j.
    Buckets are [e_k, e_{k+1}) with the last right-inclusive; empty buckets
    are kept as NaN rows with a warning.
    """
    solver = solver or SolverConfig()
    from .solvers import effective_diffusivity  # local to avoid polluting module API

    per_bucket: list[list[float]] = [[] for _ in range(len(spec.bucket_edges) - 1)]
    index = 0
    for params in spec.param_grid:
        for _ in range(spec.n_ics):
            rng = np.random.default_rng(spec.seed + index)
            index += 1
            u0 = sample_ic(spec.ic, grid, rng)
            if spec.axis == "peclet":
                value = peclet(params.get("beta"), params.get("nu"), grid.length)
            else:
                value = reynolds(
                    u0, effective_diffusivity(kind, params.get("nu")), grid.length
                )
            bucket = _bucket_index(value, spec.bucket_edges)
            truth = solve_trajectory(kind, u0, params, solver)
            pred = predictor(u0, params, solver.n_steps)
            per_bucket[bucket].append(rel_l2(pred, truth))

    rows = []
    for k, errs in enumerate(per_bucket):
        upper = spec.bucket_edges[k + 1]
        if errs:
            rows.append(SweepRow(
                axis=spec.axis, value=upper,
                rel_l2_mean=float(np.mean(errs)), rel_l2_std=float(np.std(errs)),
                n_samples=len(errs),
            ))
        else:
            warnings.warn(
                f"sweep bucket ({spec.bucket_edges[k]:.6g}, {upper:.6g}] "
                f"collected no samples",
                RuntimeWarning,
                stacklevel=2,
            )
            rows.append(SweepRow(spec.axis, upper, float("nan"), float("nan"), 0))
    return rows


def format_g17(value: float) -> str:
    """17-significant-digit decimal rendering (round-trips float64)."""
    return format(float(value), ".17g")


def sweep_csv(rows: list[SweepRow]) -> str:
    lines = ["axis,value,rel_l2_mean,rel_l2_std,n_samples"]
    for row in rows:
        lines.append(
            f"{row.axis},{format_g17(row.value)},{format_g17(row.rel_l2_mean)},"
            f"{format_g17(row.rel_l2_std)},{row.n_samples}"
        )
    return "\n".join(lines) + "\n"


def write_sweep_csv(rows: list[SweepRow], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(sweep_csv(rows))


@dataclass(frozen=True)
class ExtrapolationReport:
    """Per-step errors split at the training horizon (t = 0 excluded)."""

    train_horizon: int
    extra_steps: int
    per_step_rel_l2: np.ndarray
    per_step_mse: np.ndarray
    per_step_mae: np.ndarray
    in_horizon_rel_l2: float
    beyond_horizon_rel_l2: float


def extrapolation_eval(
    predictor,
    u0: Field1D,
    gamma: ParamVector,
    train_horizon: int,
    extra_steps: int,
    kind: EquationKind,
    solver: SolverConfig | None = None,
) -> ExtrapolationReport:
    """Roll out beyond the training horizon and compare against a fresh solve."""
    check_count(train_horizon, "train_horizon", minimum=1)
    check_count(extra_steps, "extra_steps", minimum=0)
    total = train_horizon + extra_steps
    base = solver or SolverConfig()
    config = SolverConfig(
        sample_dt=base.sample_dt, cfl_safety=base.cfl_safety,
        n_steps=total, max_substeps=base.max_substeps,
    )
    truth = solve_trajectory(kind, u0, gamma, config)
    pred = predictor(u0, gamma, total)
    _check_comparable(pred, truth)
    diff = pred.values[1:] - truth.values[1:]
    rel = _per_step_rel_l2(pred.values[1:], truth.values[1:])
    beyond = float(np.mean(rel[train_horizon:])) if extra_steps > 0 else float("nan")
    return ExtrapolationReport(
        train_horizon=train_horizon,
        extra_steps=extra_steps,
        per_step_rel_l2=rel,
        per_step_mse=np.mean(diff * diff, axis=1),
        per_step_mae=np.mean(np.abs(diff), axis=1),
        in_horizon_rel_l2=float(np.mean(rel[:train_horizon])),
        beyond_horizon_rel_l2=beyond,
    )
