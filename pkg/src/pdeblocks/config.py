"""Run configuration: flat ``key = value`` files, typed keys, and the two
built-in profiles ("paper" full-protocol defaults, "desk" laptop-scale).

Files use one assignment per line, ``#`` comments, and dotted key names.
Unknown keys and untypable values raise ConfigError (exit code 2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any

from .blocks import PFNOConfig, TrainConfig
from .data import ICSpec
from .errors import ConfigError
from .grid import Grid1D, ParamVector
from .solvers import EquationKind, SolverConfig


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in {"true", "yes", "on", "1"}:
        return True
    if lowered in {"false", "no", "off", "0"}:
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_floats(text: str) -> tuple[float, ...]:
    parts = [p.strip() for p in text.split(",") if p.strip()]
    if not parts:
        raise ValueError("empty list")
    return tuple(float(p) for p in parts)


def _parse_strs(text: str) -> tuple[str, ...]:
    parts = [p.strip() for p in text.split(",") if p.strip()]
    if not parts:
        raise ValueError("empty list")
    return tuple(parts)


_PARSERS = {
    "str": lambda s: s.strip(),
    "int": lambda s: int(s.strip(), 0),
    "float": lambda s: float(s.strip()),
    "bool": _parse_bool,
    "floats": _parse_floats,
    "strs": _parse_strs,
}

# key -> (type name, default). The "paper" profile is exactly this table.
_SCHEMA: dict[str, tuple[str, Any]] = {
    "equation": ("str", "convection"),
    "seed": ("int", 0),
    "out": ("str", "runs"),
    "bc": ("bool", False),
    "grid.nx": ("int", 1024),
    "grid.length": ("float", 1.0),
    "solver.sample_dt": ("float", 0.01),
    "solver.cfl_safety": ("float", 0.4),
    "solver.n_steps": ("int", 10),
    "ic.n_waves": ("int", 2),
    "ic.n_max": ("int", 8),
    "ic.amp_low": ("float", 0.0),
    "ic.amp_high": ("float", 1.0),
    "data.beta_values": ("floats", (0.1, 0.4, 0.7, 1.0, 2.0)),
    "data.nu_values": ("floats", (0.01, 0.1, 0.2, 0.5, 1.0, 2.0)),
    "data.n_per_param": ("int", 2000),
    "data.split_ratio": ("float", 0.8),
    "data.path": ("str", ""),
    "model.d_h": ("int", 128),
    "model.n_layers": ("int", 4),
    "model.k_max_modes": ("int", 16),
    "train.epochs": ("int", 1000),
    "train.batch_size": ("int", 50),
    "train.lr": ("float", 1e-3),
    "train.lr_step": ("int", 100),
    "train.lr_gamma": ("float", 0.5),
    "train.weight_decay": ("float", 1e-4),
    "train.threshold": ("float", math.nan),
    "library": ("str", ""),
    "block.name": ("str", ""),
    "assemble.blocks": ("strs", ()),
    "assemble.aggregator": ("str", "auto"),
    "assemble.epochs": ("int", 100),
    "assemble.batch_size": ("int", 4),
    "assemble.lr": ("float", 1e-4),
    "assemble.threshold": ("float", math.nan),
    "assembly.path": ("str", ""),
    "eval.n_ics": ("int", 3),
    "eval.extra_steps": ("int", 0),
    "sweep.axis": ("str", "peclet"),
    "sweep.bucket_edges": ("floats", (0.5, 2.0, 10.0, 50.0, 100.0, 200.0)),
    "sweep.n_ics": ("int", 5),
}

# Laptop-scale overrides; everything else inherits the "paper" profile.
_DESK_OVERRIDES: dict[str, Any] = {
    "grid.nx": 128,
    "data.n_per_param": 40,
    "model.d_h": 16,
    "train.epochs": 300,
    "train.batch_size": 100,
    "assemble.epochs": 100,
}

PROFILES = ("paper", "desk")


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    """Raw key -> value strings; later assignments win."""
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, _, value = stripped.partition("=")
        key = key.strip()
        if not key:
            raise ConfigError(f"{source}:{lineno}: missing key before '='")
        raw[key] = value.strip()
    return raw


@dataclass(frozen=True)
class RunConfig:
    """Resolved, typed configuration for one CLI run."""

    profile: str
    values: dict[str, Any]

    def __getitem__(self, key: str) -> Any:
        try:
            return self.values[key]
        except KeyError:
            raise ConfigError(f"unknown config key {key!r}") from None

    # Typed object builders used by the CLI commands.

    def equation(self) -> EquationKind:
        return EquationKind.from_name(self["equation"])

    def grid(self) -> Grid1D:
        return Grid1D(self["grid.nx"], self["grid.length"])

    def solver(self, n_steps: int | None = None) -> SolverConfig:
        return SolverConfig(
            sample_dt=self["solver.sample_dt"],
            cfl_safety=self["solver.cfl_safety"],
            n_steps=self["solver.n_steps"] if n_steps is None else n_steps,
        )

    def ic_spec(self, seed: int | None = None) -> ICSpec:
        return ICSpec(
            n_waves=self["ic.n_waves"],
            n_max=self["ic.n_max"],
            amp_range=(self["ic.amp_low"], self["ic.amp_high"]),
            seed=self["seed"] if seed is None else seed,
        )

    def param_grid(self, kind: EquationKind | None = None) -> tuple[ParamVector, ...]:
        kind = kind or self.equation()
        betas = self["data.beta_values"]
        nus = self["data.nu_values"]
        if kind is EquationKind.CONVECTION:
            return tuple(ParamVector(beta=b) for b in betas)
        if kind in (EquationKind.DIFFUSION, EquationKind.BURGERS):
            return tuple(ParamVector(nu=v) for v in nus)
        if kind is EquationKind.NONLINEAR_CONVECTION:
            return (ParamVector(),)
        return tuple(ParamVector(beta=b, nu=v) for b in betas for v in nus)

    def model_config(self, kind: EquationKind | None = None) -> PFNOConfig:
        kind = kind or self.equation()
        return PFNOConfig(
            d_h=self["model.d_h"],
            n_layers=self["model.n_layers"],
            k_max_modes=self["model.k_max_modes"],
            n_params=len(kind.required_params),
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self["train.epochs"],
            batch_size=self["train.batch_size"],
            lr=self["train.lr"],
            lr_step=self["train.lr_step"],
            lr_gamma=self["train.lr_gamma"],
            weight_decay=self["train.weight_decay"],
            seed=self["seed"],
        )

    def finetune_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self["assemble.epochs"],
            batch_size=self["assemble.batch_size"],
            lr=self["assemble.lr"],
            lr_step=self["train.lr_step"],
            lr_gamma=self["train.lr_gamma"],
            weight_decay=self["train.weight_decay"],
            seed=self["seed"],
        )


def build_config(
    profile: str = "paper",
    file_values: dict[str, str] | None = None,
    overrides: dict[str, Any] | None = None,
) -> RunConfig:
    """Layer defaults <- profile <- config file <- explicit overrides."""
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}; expected one of {PROFILES}")
    values = {key: default for key, (_, default) in _SCHEMA.items()}
    if profile == "desk":
        values.update(_DESK_OVERRIDES)
    for key, text in (file_values or {}).items():
        if key not in _SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        type_name = _SCHEMA[key][0]
        try:
            values[key] = _PARSERS[type_name](text)
        except ValueError as exc:
            raise ConfigError(f"config key {key!r}: {exc}") from exc
    for key, value in (overrides or {}).items():
        if key not in _SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = value
    return RunConfig(profile=profile, values=values)


def load_config(
    path: str | None,
    profile: str = "paper",
    overrides: dict[str, Any] | None = None,
) -> RunConfig:
    file_values = None
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path!r}: {exc}") from exc
        file_values = parse_config_text(text, source=str(path))
    return build_config(profile=profile, file_values=file_values, overrides=overrides)
