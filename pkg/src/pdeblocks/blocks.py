"""Parametric FNO blocks: model assembly, autoregressive pretraining on
one-step pairs, rollout, and checkpoint persistence in a block library.

A block maps (u(t), gamma) -> u(t + dt) through a lifting affine map, four
Fourier layers, and a projection. PDE parameters enter as constant input
channels broadcast over the grid; there is no positional channel (the FFT
supplies positional structure).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import binio
from .data import Dataset, split
from .errors import DataFormatError, DivergenceError
from .grid import Field1D, ParamVector, Trajectory
from .nn import (
    ChannelField,
    StepSchedule,
    _gelu_tanh,
    adam_step,
    affine_backward,
    affine_forward,
    gelu_grad,
    init_adam,
    init_affine,
    init_spectral,
    lr_at,
    mse_loss,
    spectral_conv_backward,
    spectral_conv_forward,
)
from .solvers import EquationKind
from .validation import check_count, check_finite_array

BLOCK_MAGIC = b"CNOBLOCK"
BLOCK_VERSION = 1
DEFAULT_DT = 0.01

_PARAM_CODES = {"beta": 0, "nu": 1}
_PARAM_NAMES = {code: name for name, code in _PARAM_CODES.items()}


@dataclass(frozen=True)
class PFNOConfig:
    """Architecture of one block."""

    d_h: int = 128
    n_layers: int = 4
    k_max_modes: int = 16
    n_params: int = 0
    activation: str = "gelu"

    def __post_init__(self) -> None:
        check_count(self.d_h, "d_h", minimum=1)
        check_count(self.n_layers, "n_layers", minimum=1)
        check_count(self.k_max_modes, "k_max_modes", minimum=1)
        check_count(self.n_params, "n_params", minimum=0)
        if self.activation != "gelu":
            raise ValueError(f"unsupported activation {self.activation!r}")


@dataclass(frozen=True)
class TrainConfig:
    """Optimization hyperparameters for pretraining and fine-tuning."""

    epochs: int = 1000
    batch_size: int = 50
    lr: float = 1e-3
    lr_step: int = 100
    lr_gamma: float = 0.5
    weight_decay: float = 1e-4
    seed: int = 0

    def __post_init__(self) -> None:
        check_count(self.epochs, "epochs", minimum=0)
        check_count(self.batch_size, "batch_size", minimum=1)


@dataclass
class TrainMeta:
    """Training provenance stored alongside checkpoint weights."""

    epochs: int = 0
    final_train_loss: float = math.nan
    final_test_loss: float = math.nan
    seed: int = 0


@dataclass(frozen=True)
class LossHistory:
    """Per-epoch train/test losses."""

    train: tuple[float, ...]
    test: tuple[float, ...]

    def __len__(self) -> int:
        return len(self.train)


def _expected_param_names(config: PFNOConfig) -> list[str]:
    names = ["lift.w", "lift.b"]
    for i in range(config.n_layers):
        names += [f"layer{i}.rr", f"layer{i}.ri", f"layer{i}.w", f"layer{i}.b"]
    return names + ["project.w", "project.b"]


class PFNOModel:
    """Lift -> n Fourier layers -> project, with parameters as a flat dict."""

    def __init__(self, config: PFNOConfig, kind: EquationKind, params: dict[str, np.ndarray]):
        if config.n_params != len(kind.required_params):
            raise ValueError(
                f"config.n_params={config.n_params} but {kind.name.lower()} "
                f"has {len(kind.required_params)} parameters"
            )
        self.config = config
        self.kind = kind
        self.params = params
        self._validate_shapes()

    def _validate_shapes(self) -> None:
        cfg = self.config
        expected: dict[str, tuple[int, ...]] = {
            "lift.w": (cfg.d_h, 1 + cfg.n_params), "lift.b": (cfg.d_h,),
            "project.w": (1, cfg.d_h), "project.b": (1,),
        }
        for i in range(cfg.n_layers):
            expected[f"layer{i}.rr"] = (cfg.k_max_modes, cfg.d_h, cfg.d_h)
            expected[f"layer{i}.ri"] = (cfg.k_max_modes, cfg.d_h, cfg.d_h)
            expected[f"layer{i}.w"] = (cfg.d_h, cfg.d_h)
            expected[f"layer{i}.b"] = (cfg.d_h,)
        if set(self.params) != set(expected):
            raise ValueError("parameter names do not match the architecture")
        for name, shape in expected.items():
            if self.params[name].shape != shape:
                raise ValueError(
                    f"parameter {name} has shape {self.params[name].shape}, expected {shape}"
                )

    @classmethod
    def init(cls, config: PFNOConfig, kind: EquationKind, seed) -> "PFNOModel":
        rng = np.random.default_rng(seed)
        d_h, k = config.d_h, config.k_max_modes
        params: dict[str, np.ndarray] = {}
        params["lift.w"], params["lift.b"] = init_affine(rng, d_h, 1 + config.n_params)
        for i in range(config.n_layers):
            rr, ri = init_spectral(rng, k, d_h, d_h)
            params[f"layer{i}.rr"], params[f"layer{i}.ri"] = rr, ri
            params[f"layer{i}.w"], params[f"layer{i}.b"] = init_affine(rng, d_h, d_h)
        params["project.w"], params["project.b"] = init_affine(rng, 1, d_h)
        return cls(config, kind, params)

    def param_names(self) -> list[str]:
        return list(self.params)

    def checksum(self) -> int:
        """CRC32 over all parameter bytes in declaration order."""
        import zlib

        crc = 0
        for name in self.params:
            crc = zlib.crc32(np.ascontiguousarray(self.params[name]).tobytes(), crc)
        return crc & 0xFFFFFFFF

    # -- batched numeric core (arrays in, arrays out) --

    def _stack_inputs(self, u: np.ndarray, gamma: np.ndarray) -> np.ndarray:
        b, n = u.shape
        p = self.config.n_params
        if gamma.shape != (b, p):
            raise ValueError(f"gamma must have shape ({b}, {p}), got {gamma.shape}")
        if p == 0:
            return u[:, None, :].copy()
        x = np.empty((b, 1 + p, n), dtype=np.float64)
        x[:, 0, :] = u
        x[:, 1:, :] = gamma[:, :, None]
        return x

    def embed_batch(self, u: np.ndarray, gamma: np.ndarray, cache: dict | None = None) -> np.ndarray:
        """Pipeline without the projection; u [B, N], gamma [B, p] -> [B, d_h, N]."""
        pr = self.params
        x = self._stack_inputs(u, gamma)
        h = affine_forward(x, pr["lift.w"], pr["lift.b"])
        if cache is not None:
            cache["x"] = x
            cache["layers"] = []
        for i in range(self.config.n_layers):
            conv_cache: dict | None = {} if cache is not None else None
            conv = spectral_conv_forward(h, pr[f"layer{i}.rr"], pr[f"layer{i}.ri"], conv_cache)
            z = conv + affine_forward(h, pr[f"layer{i}.w"], pr[f"layer{i}.b"])
            t = _gelu_tanh(z)
            if cache is not None:
                cache["layers"].append((h, z, t, conv_cache["spec"]))
            h = 0.5 * z * (1.0 + t)
        if cache is not None:
            cache["embedding"] = h
        return h

    def forward_batch(self, u: np.ndarray, gamma: np.ndarray, cache: dict | None = None) -> np.ndarray:
        """Full pipeline; returns predicted next state [B, N]."""
        h = self.embed_batch(u, gamma, cache)
        y = affine_forward(h, self.params["project.w"], self.params["project.b"])
        return y[:, 0, :]

    def backward_batch(self, cache: dict, grad_y: np.ndarray) -> dict[str, np.ndarray]:
        """Parameter gradients for a forward_batch recorded in ``cache``."""
        pr = self.params
        grads: dict[str, np.ndarray] = {}
        grad_h, grads["project.w"], grads["project.b"] = affine_backward(
            cache["embedding"], pr["project.w"], grad_y[:, None, :]
        )
        for i in reversed(range(self.config.n_layers)):
            h_in, z, t, spec = cache["layers"][i]
            grad_z = grad_h * gelu_grad(z, t)
            grad_conv_in, grads[f"layer{i}.rr"], grads[f"layer{i}.ri"] = spectral_conv_backward(
                h_in, pr[f"layer{i}.rr"], pr[f"layer{i}.ri"], grad_z, x_spec=spec
            )
            grad_aff_in, grads[f"layer{i}.w"], grads[f"layer{i}.b"] = affine_backward(
                h_in, pr[f"layer{i}.w"], grad_z
            )
            grad_h = grad_conv_in + grad_aff_in
        _, grads["lift.w"], grads["lift.b"] = affine_backward(cache["x"], pr["lift.w"], grad_h)
        return grads


def _routed_gamma(model: PFNOModel, gamma: ParamVector) -> np.ndarray:
    expected = model.kind.required_params
    if gamma.names() != expected:
        raise ValueError(
            f"{model.kind.name.lower()} block expects parameters {expected}, "
            f"got {gamma.names()}"
        )
    return gamma.values()[None, :]


def pfno_forward(model: PFNOModel, u: Field1D, gamma: ParamVector) -> Field1D:
    """One predicted time step for a single field."""
    out = model.forward_batch(u.values[None, :], _routed_gamma(model, gamma))
    return Field1D(u.grid, out[0])


def pfno_embed(model: PFNOModel, u: Field1D, gamma: ParamVector) -> ChannelField:
    """The d_h-channel embedding (pipeline without the projection)."""
    emb = model.embed_batch(u.values[None, :], _routed_gamma(model, gamma))
    return ChannelField(u.grid, emb[0])


def rollout(
    model: PFNOModel,
    u0: Field1D,
    gamma: ParamVector,
    n_steps: int,
    dt: float = DEFAULT_DT,
) -> Trajectory:
    """Autoregressive chaining of the one-step operator."""
    check_count(n_steps, "n_steps", minimum=0)
    gamma_arr = _routed_gamma(model, gamma)
    out = np.empty((n_steps + 1, u0.grid.nx), dtype=np.float64)
    out[0] = u0.values
    state = u0.values[None, :]
    for k in range(n_steps):
        state = model.forward_batch(state, gamma_arr)
        if not np.all(np.isfinite(state)):
            raise DivergenceError(f"rollout produced non-finite values at step {k + 1}")
        out[k + 1] = state[0]
    return Trajectory(grid=u0.grid, dt=dt, params=gamma, values=out)


def one_step_pairs(ds: Dataset) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Teacher-forcing pairs (u_t, gamma, u_{t+1}) from every trajectory step."""
    n_pairs = sum(t.n_steps for t in ds.trajectories)
    if n_pairs == 0:
        raise ValueError("dataset holds no one-step pairs")
    nx = ds.grid.nx
    p = len(ds.kind.required_params)
    u_in = np.empty((n_pairs, nx), dtype=np.float64)
    u_out = np.empty((n_pairs, nx), dtype=np.float64)
    gamma = np.empty((n_pairs, p), dtype=np.float64)
    row = 0
    for traj in ds.trajectories:
        steps = traj.n_steps
        u_in[row:row + steps] = traj.values[:-1]
        u_out[row:row + steps] = traj.values[1:]
        gamma[row:row + steps] = traj.params.values()
        row += steps
    return u_in, gamma, u_out


def _batched_mse(model: PFNOModel, u: np.ndarray, gamma: np.ndarray, target: np.ndarray,
                 chunk: int = 512) -> float:
    total = 0.0
    for start in range(0, u.shape[0], chunk):
        sl = slice(start, start + chunk)
        pred = model.forward_batch(u[sl], gamma[sl])
        total += float(np.sum((pred - target[sl]) ** 2))
    return total / target.size


def pretrain_block(
    ds: Dataset,
    config: PFNOConfig,
    hyper: TrainConfig,
) -> tuple[PFNOModel, LossHistory]:
    """Train one block on its elementary dataset with MSE + Adam + StepLR.

    The dataset is split train/test at ds.split_ratio. Deterministic given
    hyper.seed: the split, the weight init, and the batch shuffles all derive
    from it via independent seed-sequence children.
    """
    if ds.n_trajectories == 0:
        raise ValueError("cannot pretrain on an empty dataset")
    if config.n_params != len(ds.kind.required_params):
        raise ValueError(
            f"config.n_params={config.n_params} does not match the "
            f"{len(ds.kind.required_params)} parameters of {ds.kind.name.lower()}"
        )
    seed_split, seed_init, seed_shuffle = np.random.SeedSequence(hyper.seed).spawn(3)
    train_ds, test_ds = split(ds, ds.split_ratio, seed_split)
    model = PFNOModel.init(config, ds.kind, seed_init)
    shuffle_rng = np.random.default_rng(seed_shuffle)

    u_in, gamma, u_out = one_step_pairs(train_ds)
    have_test = test_ds.n_trajectories > 0
    if have_test:
        tu_in, tgamma, tu_out = one_step_pairs(test_ds)

    adam = init_adam(model.params, lr0=hyper.lr, weight_decay=hyper.weight_decay)
    schedule = StepSchedule(lr0=hyper.lr, step_size=hyper.lr_step, gamma=hyper.lr_gamma)
    n = u_in.shape[0]
    train_hist: list[float] = []
    test_hist: list[float] = []
    for epoch in range(hyper.epochs):
        lr = lr_at(schedule, epoch)
        order = shuffle_rng.permutation(n)
        epoch_sq_sum = 0.0
        for start in range(0, n, hyper.batch_size):
            idx = order[start:start + hyper.batch_size]
            cache: dict = {}
            pred = model.forward_batch(u_in[idx], gamma[idx], cache)
            loss, grad = mse_loss(pred, u_out[idx])
            epoch_sq_sum += loss * pred.size
            grads = model.backward_batch(cache, grad)
            adam_step(model.params, grads, adam, lr)
        train_loss = epoch_sq_sum / (n * ds.grid.nx)
        test_loss = _batched_mse(model, tu_in, tgamma, tu_out) if have_test else math.nan
        if not np.isfinite(train_loss):
            raise DivergenceError(f"training loss diverged at epoch {epoch}")
        train_hist.append(train_loss)
        test_hist.append(test_loss)
    return model, LossHistory(train=tuple(train_hist), test=tuple(test_hist))


# -- persistence --

_NAME_RE = re.compile(r"^[A-Za-z0-9][A-Za-z0-9_.-]*$")


def _encode_block(model: PFNOModel, meta: TrainMeta) -> bytes:
    writer = binio.ByteWriter()
    writer.u32(BLOCK_VERSION)
    writer.u8(int(model.kind))
    cfg = model.config
    writer.u32(cfg.d_h)
    writer.u32(cfg.n_layers)
    writer.u32(cfg.k_max_modes)
    writer.u8(cfg.n_params)
    routing = model.kind.required_params
    writer.u8(len(routing))
    for name in routing:
        writer.u8(_PARAM_CODES[name])
    writer.u32(meta.epochs)
    writer.f64(meta.final_train_loss)
    writer.f64(meta.final_test_loss)
    writer.u64(meta.seed & 0xFFFFFFFFFFFFFFFF)
    writer.u32(len(model.params))
    for name, tensor in model.params.items():
        writer.string(name)
        writer.f64_array(tensor)
    return writer.payload()


def _decode_block(payload: bytes, path) -> tuple[PFNOModel, TrainMeta]:
    reader = binio.ByteReader(payload)
    version = reader.u32()
    if version != BLOCK_VERSION:
        raise DataFormatError(
            f"{path}: unsupported block version {version}, expected {BLOCK_VERSION}"
        )
    kind = EquationKind.from_tag(reader.u8())
    config = PFNOConfig(
        d_h=reader.u32(), n_layers=reader.u32(), k_max_modes=reader.u32(),
        n_params=reader.u8(),
    )
    n_route = reader.u8()
    routing = tuple(_PARAM_NAMES[reader.u8()] for _ in range(n_route))
    if routing != kind.required_params:
        raise DataFormatError(
            f"{path}: stored routing {routing} does not match "
            f"{kind.name.lower()}'s parameters {kind.required_params}"
        )
    meta = TrainMeta(
        epochs=reader.u32(), final_train_loss=reader.f64(),
        final_test_loss=reader.f64(), seed=reader.u64(),
    )
    n_tensors = reader.u32()
    params = {}
    for _ in range(n_tensors):
        name = reader.string()
        params[name] = reader.f64_array()
    if not reader.done():
        raise DataFormatError(f"{path}: unexpected trailing bytes after payload")
    model = PFNOModel(config, kind, params)
    if model.param_names() != _expected_param_names(config):
        raise DataFormatError(f"{path}: tensor names do not match the architecture")
    for name in params:
        check_finite_array(params[name], f"{path}:{name}")
    return model, meta


class BlockLibrary:
    """Directory of named block checkpoints (one ``<name>.block`` file each)."""

    def __init__(self, root) -> None:
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        if not _NAME_RE.match(name):
            raise ValueError(f"invalid block name {name!r}")
        return self.root / f"{name}.block"

    def names(self) -> list[str]:
        return sorted(p.stem for p in self.root.glob("*.block"))

    def save(self, name: str, model: PFNOModel, meta: TrainMeta | None = None,
             overwrite: bool = False) -> Path:
        path = self.path(name)
        if path.exists() and not overwrite:
            raise FileExistsError(f"block {name!r} already exists at {path}")
        binio.write_framed(path, BLOCK_MAGIC, _encode_block(model, meta or TrainMeta()))
        return path

    def load(self, name: str, expect_kind: EquationKind | None = None) -> PFNOModel:
        model, _ = self.load_with_meta(name, expect_kind)
        return model

    def load_with_meta(
        self, name: str, expect_kind: EquationKind | None = None
    ) -> tuple[PFNOModel, TrainMeta]:
        path = self.path(name)
        if not path.exists():
            raise FileNotFoundError(f"no block named {name!r} in {self.root}")
        payload, stored_crc = binio.read_framed(path, BLOCK_MAGIC)
        model, meta = _decode_block(payload, path)
        binio.verify_crc(payload, stored_crc, path)
        if expect_kind is not None and model.kind is not expect_kind:
            raise DataFormatError(
                f"{path}: stores a {model.kind.name.lower()} block, "
                f"expected {expect_kind.name.lower()}"
            )
        return model, meta

    def crc(self, name: str) -> int:
        return binio.file_crc(self.path(name), BLOCK_MAGIC)


def save_block(library: BlockLibrary, name: str, model: PFNOModel,
               meta: TrainMeta | None = None, overwrite: bool = False) -> Path:
    return library.save(name, model, meta, overwrite)


def load_block(library: BlockLibrary, name: str,
               expect_kind: EquationKind | None = None) -> PFNOModel:
    return library.load(name, expect_kind)


class ParametricFNO(BaseEstimator):
    """sklearn-style estimator wrapping block pretraining.

    fit() expects a Dataset; the equation (and hence the parameter channel
    count) is inferred from it. predict() rolls the trained operator out from
    an initial field.
    """

    def __init__(self, d_h=128, n_layers=4, k_max_modes=16, epochs=1000,
                 batch_size=50, lr=1e-3, lr_step=100, lr_gamma=0.5,
                 weight_decay=1e-4, seed=0):
        self.d_h = d_h
        self.n_layers = n_layers
        self.k_max_modes = k_max_modes
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.lr_step = lr_step
        self.lr_gamma = lr_gamma
        self.weight_decay = weight_decay
        self.seed = seed

    def fit(self, dataset: Dataset, y=None) -> "ParametricFNO":
        if not isinstance(dataset, Dataset):
            raise TypeError("ParametricFNO.fit expects a Dataset")
        config = PFNOConfig(
            d_h=self.d_h, n_layers=self.n_layers, k_max_modes=self.k_max_modes,
            n_params=len(dataset.kind.required_params),
        )
        hyper = TrainConfig(
            epochs=self.epochs, batch_size=self.batch_size, lr=self.lr,
            lr_step=self.lr_step, lr_gamma=self.lr_gamma,
            weight_decay=self.weight_decay, seed=self.seed,
        )
        self.model_, self.history_ = pretrain_block(dataset, config, hyper)
        self.equation_ = dataset.kind
        return self

    def predict(self, u0: Field1D, params: ParamVector | None = None,
                n_steps: int = 1) -> Trajectory:
        check_is_fitted(self, "model_")
        return rollout(self.model_, u0, params or ParamVector(), n_steps)

    def embed(self, u0: Field1D, params: ParamVector | None = None) -> ChannelField:
        check_is_fitted(self, "model_")
        return pfno_embed(self.model_, u0, params or ParamVector())
