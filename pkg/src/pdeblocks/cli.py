"""Command-line entry point: generate | pretrain | assemble | evaluate | sweep.

Only the standard library is imported at module scope so that the
CNO_THREADS environment variable can cap BLAS thread pools before numpy
is first loaded. Heavy imports happen inside the command handlers.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

from .errors import (
    EXIT_CONFIG,
    EXIT_DATA,
    EXIT_FAILURE,
    EXIT_OK,
    ConfigError,
    PdeBlocksError,
    ThresholdError,
)

_THREAD_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
    "VECLIB_MAXIMUM_THREADS",
)


def _configure_threads() -> None:
    """Honor CNO_THREADS; must run before numpy is imported anywhere."""
    import os

    raw = os.environ.get("CNO_THREADS")
    if raw is None or raw == "":
        return
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"CNO_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"CNO_THREADS must be a positive integer, got {raw!r}")
    for var in _THREAD_VARS:
        os.environ[var] = str(n)


def build_parser() -> argparse.ArgumentParser:
    from . import __version__

    parser = argparse.ArgumentParser(
        prog="pdeblocks",
        description="Compositional neural-operator toolkit for 1D parametric PDEs.",
    )
    parser.add_argument("--version", action="version", version=f"pdeblocks {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    descriptions = {
        "generate": "solve a dataset of reference trajectories and store it",
        "pretrain": "train one elementary block on its dataset",
        "assemble": "compose pretrained blocks and fine-tune the aggregator",
        "evaluate": "score a stored solver against fresh reference solutions",
        "sweep": "bucket relative errors along a Peclet or Reynolds axis",
    }
    for name, help_text in descriptions.items():
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", default=None, help="flat key = value config file")
        cmd.add_argument("--profile", choices=("paper", "desk"), default="paper",
                         help="built-in default set (default: paper)")
        cmd.add_argument("--seed", type=int, default=None, help="master RNG seed")
        cmd.add_argument("--bc", action="store_true",
                         help="enforce Dirichlet boundary values during rollouts")
        cmd.add_argument("--out", default=None, help="output directory (default: runs)")
    return parser


def _resolve_config(args: argparse.Namespace):
    from .config import load_config

    overrides: dict = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out"] = args.out
    if args.bc:
        overrides["bc"] = True
    return load_config(args.config, profile=args.profile, overrides=overrides)


def _jsonable(value):
    if isinstance(value, tuple):
        return [_jsonable(v) for v in value]
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def _write_manifest(cfg, out_dir: Path, command: str) -> Path:
    from . import __version__

    payload = {
        "command": command,
        "version": f"pdeblocks-{__version__}",
        "profile": cfg.profile,
        "seed": cfg["seed"],
        "config": {k: _jsonable(v) for k, v in sorted(cfg.values.items())},
    }
    path = out_dir / f"{command}_manifest.json"
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _write_loss_csv(history, path: Path) -> None:
    from .metrics import format_g17

    lines = ["epoch,train_loss,test_loss"]
    for epoch, (train, test) in enumerate(zip(history.train, history.test)):
        lines.append(f"{epoch},{format_g17(train)},{format_g17(test)}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _dataset_path(cfg, out_dir: Path) -> Path:
    if cfg["data.path"]:
        return Path(cfg["data.path"])
    return out_dir / f"{cfg['equation']}.dset"


def _assembly_path(cfg, out_dir: Path) -> Path:
    if cfg["assembly.path"]:
        return Path(cfg["assembly.path"])
    return out_dir / f"{cfg['equation']}.assembly"


def _library(cfg, out_dir: Path):
    from .blocks import BlockLibrary

    return BlockLibrary(cfg["library"] or out_dir / "library")


def _check_threshold(label: str, value: float, threshold: float) -> None:
    if math.isfinite(threshold) and not value <= threshold:
        raise ThresholdError(
            f"final {label} {value:.6g} exceeds the configured threshold {threshold:.6g}"
        )


def cmd_generate(cfg, out_dir: Path) -> int:
    import dataclasses

    from .data import generate_dataset, save_dataset

    kind = cfg.equation()
    ds = generate_dataset(
        kind,
        list(cfg.param_grid(kind)),
        cfg["data.n_per_param"],
        cfg.grid(),
        cfg["solver.n_steps"],
        cfg.ic_spec(),
        sample_dt=cfg["solver.sample_dt"],
        cfl_safety=cfg["solver.cfl_safety"],
    )
    if cfg["data.split_ratio"] != ds.split_ratio:
        ds = dataclasses.replace(ds, split_ratio=cfg["data.split_ratio"])
    path = _dataset_path(cfg, out_dir)
    save_dataset(ds, path)
    _write_manifest(cfg, out_dir, "generate")
    print(f"wrote {ds.n_trajectories} {kind.name.lower()} trajectories to {path}")
    return EXIT_OK


def cmd_pretrain(cfg, out_dir: Path) -> int:
    from .blocks import TrainMeta, pretrain_block
    from .data import load_dataset

    kind = cfg.equation()
    ds = load_dataset(_dataset_path(cfg, out_dir))
    if ds.kind is not kind:
        raise ConfigError(
            f"dataset solves {ds.kind.name.lower()} but the config asks for "
            f"{kind.name.lower()}"
        )
    model, history = pretrain_block(ds, cfg.model_config(kind), cfg.train_config())
    final_train = history.train[-1] if history.train else math.nan
    final_test = history.test[-1] if history.test else math.nan
    name = cfg["block.name"] or kind.name.lower()
    library = _library(cfg, out_dir)
    meta = TrainMeta(epochs=len(history), final_train_loss=final_train,
                     final_test_loss=final_test, seed=cfg["seed"])
    path = library.save(name, model, meta, overwrite=True)
    _write_loss_csv(history, out_dir / f"pretrain_{name}_loss.csv")
    _write_manifest(cfg, out_dir, "pretrain")
    print(f"saved block {name!r} to {path} "
          f"(train mse {final_train:.6g}, test mse {final_test:.6g})")
    _check_threshold("test mse", final_test, cfg["train.threshold"])
    return EXIT_OK


_DEFAULT_BLOCKS = {
    "convection_diffusion": ("convection", "diffusion"),
    "burgers": ("nonlinear_convection", "diffusion"),
}


def cmd_assemble(cfg, out_dir: Path) -> int:
    from .assembly import finetune_aggregator, make_assembly, save_assembly
    from .data import load_dataset
    from .solvers import EquationKind

    target = cfg.equation()
    if target not in (EquationKind.CONVECTION_DIFFUSION, EquationKind.BURGERS):
        raise ConfigError(
            f"assemble targets convection_diffusion or burgers, got {target.name.lower()}"
        )
    library = _library(cfg, out_dir)
    names = cfg["assemble.blocks"] or _DEFAULT_BLOCKS[target.name.lower()]
    blocks = [(name, library.load(name)) for name in names]
    agg = cfg["assemble.aggregator"]
    if agg not in ("auto", "linear", "mlp"):
        raise ConfigError(f"assemble.aggregator must be auto, linear, or mlp, got {agg!r}")
    model = make_assembly(target, blocks, agg_kind=None if agg == "auto" else agg,
                          seed=cfg["seed"])
    ds = load_dataset(_dataset_path(cfg, out_dir))
    model, history = finetune_aggregator(model, ds, cfg.finetune_config())
    final_train = history.train[-1] if history.train else math.nan
    final_test = history.test[-1] if history.test else math.nan
    path = _assembly_path(cfg, out_dir)
    save_assembly(model, path, library)
    _write_loss_csv(history, out_dir / "assemble_loss.csv")
    _write_manifest(cfg, out_dir, "assemble")
    print(f"saved {target.name.lower()} assembly ({model.agg_kind} aggregator) to {path} "
          f"(train mae {final_train:.6g}, test mae {final_test:.6g})")
    _check_threshold("test mae", final_test, cfg["assemble.threshold"])
    return EXIT_OK


def _load_predictor(cfg, out_dir: Path, kind):
    """A (u0, params, n_steps, bc) -> Trajectory closure over the stored model."""
    from .solvers import EquationKind

    sample_dt = cfg["solver.sample_dt"]
    if kind in (EquationKind.CONVECTION_DIFFUSION, EquationKind.BURGERS):
        from .assembly import load_assembly, rollout_assembly

        model = load_assembly(_assembly_path(cfg, out_dir), _library(cfg, out_dir))

        def predict(u0, params, n_steps, bc=None):
            return rollout_assembly(model, u0, params, n_steps, bc=bc, dt=sample_dt)

        return predict

    from .bc import wrap_with_bc
    from .blocks import pfno_forward, rollout
    from .grid import Trajectory

    import numpy as np

    name = cfg["block.name"] or kind.name.lower()
    model = _library(cfg, out_dir).load(name, expect_kind=kind)
    probe_cache: dict = {}

    def predict(u0, params, n_steps, bc=None):
        if bc is None:
            return rollout(model, u0, params, n_steps, dt=sample_dt)
        kernel = lambda f: pfno_forward(model, f, params)  # noqa: E731
        step = wrap_with_bc(kernel, u0.grid, bc, cache=probe_cache,
                            cache_key=tuple(params.values()))
        out = np.empty((n_steps + 1, u0.grid.nx), dtype=np.float64)
        out[0] = u0.values
        state = u0
        for k in range(n_steps):
            state = step(state, k + 1)
            out[k + 1] = state.values
        return Trajectory(grid=u0.grid, dt=sample_dt, params=params, values=out)

    return predict


def cmd_evaluate(cfg, out_dir: Path) -> int:
    import numpy as np

    from .data import sample_ic
    from .grid import BoundaryValues
    from .metrics import evaluate_trajectories, format_g17
    from .solvers import SolverConfig, solve_trajectory

    kind = cfg.equation()
    grid = cfg.grid()
    n_steps = cfg["solver.n_steps"] + cfg["eval.extra_steps"]
    solver = SolverConfig(sample_dt=cfg["solver.sample_dt"],
                          cfl_safety=cfg["solver.cfl_safety"], n_steps=n_steps)
    predict = _load_predictor(cfg, out_dir, kind)
    ic_spec = cfg.ic_spec()
    use_bc = cfg["bc"]

    reports = []
    index = 0
    for params in cfg.param_grid(kind):
        for _ in range(cfg["eval.n_ics"]):
            # Offset keeps evaluation ICs disjoint from generation seeds.
            rng = np.random.default_rng(cfg["seed"] + 500_000 + index)
            index += 1
            u0 = sample_ic(ic_spec, grid, rng)
            truth = solve_trajectory(kind, u0, params, solver)
            bc = BoundaryValues.from_trajectory(truth) if use_bc else None
            pred = predict(u0, params, n_steps, bc=bc)
            reports.append(evaluate_trajectories(pred, truth))

    scalars = {
        name: float(np.mean([getattr(r, name) for r in reports]))
        for name in ("mse", "mae", "rel_l2", "boundary_mae", "interior_mae")
    }
    lines = ["metric,value"]
    lines += [f"{name},{format_g17(value)}" for name, value in scalars.items()]
    with open(out_dir / "metrics.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")

    per_mse = np.mean([r.per_step_mse for r in reports], axis=0)
    per_mae = np.mean([r.per_step_mae for r in reports], axis=0)
    per_rel = np.mean([r.per_step_rel_l2 for r in reports], axis=0)
    lines = ["step,mse,mae,rel_l2"]
    for step in range(n_steps + 1):
        lines.append(f"{step},{format_g17(per_mse[step])},"
                     f"{format_g17(per_mae[step])},{format_g17(per_rel[step])}")
    with open(out_dir / "per_step.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")

    _write_manifest(cfg, out_dir, "evaluate")
    print(f"evaluated {len(reports)} rollouts of {kind.name.lower()}"
          + (" with boundary enforcement" if use_bc else ""))
    for name, value in scalars.items():
        print(f"  {name}: {value:.6g}")
    return EXIT_OK


def cmd_sweep(cfg, out_dir: Path) -> int:
    from .metrics import SweepSpec, run_sweep, write_sweep_csv
    from .solvers import SolverConfig

    if cfg["bc"]:
        raise ConfigError("sweep does not support --bc")
    kind = cfg.equation()
    grid = cfg.grid()
    solver = SolverConfig(sample_dt=cfg["solver.sample_dt"],
                          cfl_safety=cfg["solver.cfl_safety"],
                          n_steps=cfg["solver.n_steps"])
    predict = _load_predictor(cfg, out_dir, kind)
    spec = SweepSpec(
        axis=cfg["sweep.axis"],
        param_grid=cfg.param_grid(kind),
        bucket_edges=cfg["sweep.bucket_edges"],
        n_ics=cfg["sweep.n_ics"],
        ic=cfg.ic_spec(),
        seed=cfg["seed"],
    )
    rows = run_sweep(lambda u0, p, n: predict(u0, p, n), spec, kind, grid, solver)
    path = out_dir / "sweep.csv"
    write_sweep_csv(rows, path)
    _write_manifest(cfg, out_dir, "sweep")
    print(f"wrote {len(rows)} {spec.axis} buckets to {path}")
    for row in rows:
        print(f"  {spec.axis} <= {row.value:g}: rel_l2 {row.rel_l2_mean:.6g} "
              f"+/- {row.rel_l2_std:.6g} (n={row.n_samples})")
    return EXIT_OK


_COMMANDS = {
    "generate": cmd_generate,
    "pretrain": cmd_pretrain,
    "assemble": cmd_assemble,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
}


def main(argv=None) -> int:
    try:
        _configure_threads()
        args = build_parser().parse_args(argv)
        cfg = _resolve_config(args)
        out_dir = Path(cfg["out"])
        out_dir.mkdir(parents=True, exist_ok=True)
        return _COMMANDS[args.command](cfg, out_dir)
    except PdeBlocksError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ValueError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
