"""Compositional neural-operator toolkit for 1D parametric PDEs.

Elementary parametric FNO blocks are pretrained on convection, diffusion,
and nonlinear convection, then composed through a small trainable
aggregator into solvers for convection-diffusion and Burgers dynamics,
with optional exact Dirichlet boundary enforcement.

Submodules are imported lazily so that the CLI can pin BLAS thread pools
before numpy loads.
"""

from __future__ import annotations

import importlib

__version__ = "0.1.0"

# public name -> defining submodule
_EXPORTS = {
    # errors
    "PdeBlocksError": "errors",
    "ConfigError": "errors",
    "DataFormatError": "errors",
    "StabilityError": "errors",
    "DivergenceError": "errors",
    "ThresholdError": "errors",
    "DegenerateKernelError": "errors",
    # grid primitives
    "Grid1D": "grid",
    "make_grid": "grid",
    "ParamVector": "grid",
    "Field1D": "grid",
    "Trajectory": "grid",
    "BoundaryValues": "grid",
    "boundary_pair": "grid",
    # solvers
    "EquationKind": "solvers",
    "SolverConfig": "solvers",
    "substep_count": "solvers",
    "effective_diffusivity": "solvers",
    "step_convection_upwind1": "solvers",
    "step_diffusion_central": "solvers",
    "step_nonlinear_convection": "solvers",
    "step_burgers": "solvers",
    "step_convection_diffusion": "solvers",
    "solve_trajectory": "solvers",
    "exact_convection": "solvers",
    "exact_diffusion": "solvers",
    "exact_convection_diffusion": "solvers",
    # data
    "ICSpec": "data",
    "sample_ic": "data",
    "Dataset": "data",
    "generate_dataset": "data",
    "save_dataset": "data",
    "load_dataset": "data",
    "split": "data",
    # blocks
    "PFNOConfig": "blocks",
    "TrainConfig": "blocks",
    "TrainMeta": "blocks",
    "LossHistory": "blocks",
    "PFNOModel": "blocks",
    "pfno_forward": "blocks",
    "pfno_embed": "blocks",
    "rollout": "blocks",
    "one_step_pairs": "blocks",
    "pretrain_block": "blocks",
    "BlockLibrary": "blocks",
    "save_block": "blocks",
    "load_block": "blocks",
    "ParametricFNO": "blocks",
    # boundary enforcement
    "KernelProbe": "bc",
    "probe_kernel": "bc",
    "apply_dirichlet_correction": "bc",
    "wrap_with_bc": "bc",
    # assembly
    "AssemblyModel": "assembly",
    "make_assembly": "assembly",
    "assembly_forward": "assembly",
    "rollout_assembly": "assembly",
    "finetune_aggregator": "assembly",
    "residual_linear": "assembly",
    "residual_nonlinear": "assembly",
    "save_assembly": "assembly",
    "load_assembly": "assembly",
    "OperatorAssembly": "assembly",
    # metrics
    "MetricReport": "metrics",
    "evaluate_trajectories": "metrics",
    "rel_l2": "metrics",
    "boundary_mae": "metrics",
    "peclet": "metrics",
    "reynolds": "metrics",
    "spectral_resample": "metrics",
    "SweepSpec": "metrics",
    "SweepRow": "metrics",
    "run_sweep": "metrics",
    "format_g17": "metrics",
    "sweep_csv": "metrics",
    "write_sweep_csv": "metrics",
    "ExtrapolationReport": "metrics",
    "extrapolation_eval": "metrics",
    # config
    "RunConfig": "config",
    "parse_config_text": "config",
    "build_config": "config",
    "load_config": "config",
}

_SUBMODULES = {
    "errors", "grid", "validation", "binio", "solvers", "data", "nn",
    "blocks", "bc", "assembly", "metrics", "config", "cli",
}

__all__ = ["__version__", *sorted(_EXPORTS)]


def __getattr__(name: str):
    if name in _EXPORTS:
        module = importlib.import_module(f".{_EXPORTS[name]}", __name__)
        value = getattr(module, name)
        globals()[name] = value
        return value
    if name in _SUBMODULES:
        return importlib.import_module(f".{name}", __name__)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__() -> list[str]:
    return sorted(set(globals()) | set(__all__) | _SUBMODULES)
