"""Composed solvers: frozen PFNO blocks feeding a trainable aggregator.

The aggregator is a pointwise map over concatenated block embeddings
(linear for convection-diffusion, a one-hidden-layer MLP with GELU for
Burgers). Fine-tuning touches aggregator weights only; block weights are
checksummed before and after to prove they stayed frozen. Also houses the
spectral residual diagnostics for linear and nonlinear aggregation.
"""

from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import binio
from .bc import KernelProbe, apply_dirichlet_correction, probe_kernel, wrap_with_bc
from .blocks import (
    BlockLibrary,
    LossHistory,
    PFNOModel,
    TrainConfig,
    one_step_pairs,
)
from .data import Dataset, split
from .errors import DataFormatError, DegenerateKernelError, DivergenceError, PdeBlocksError
from .grid import BoundaryValues, Field1D, ParamVector, Trajectory
from .nn import (
    StepSchedule,
    _gelu_tanh,
    adam_step,
    affine_backward,
    affine_forward,
    gelu_grad,
    init_adam,
    init_affine,
    lr_at,
    mae_loss,
)
from .solvers import EquationKind
from .validation import check_choice, check_count

ASSEMBLY_MAGIC = b"CNOASSMB"
ASSEMBLY_VERSION = 1
DEFAULT_DT = 0.01

_AGG_CODES = {"linear": 0, "mlp": 1}
_AGG_NAMES = {code: name for name, code in _AGG_CODES.items()}
_FIELD_CODES = {"beta": 0, "nu": 1}
_FIELD_NAMES = {code: name for name, code in _FIELD_CODES.items()}

# Routing rules: per block, ordered (target field, scale) pairs matching the
# block's own parameter slots.
RouteRule = tuple[tuple[str, float], ...]


class AssemblyModel:
    """Frozen blocks + trainable pointwise aggregator for one target equation."""

    def __init__(
        self,
        target: EquationKind,
        blocks: tuple[tuple[str, PFNOModel], ...],
        routing: tuple[RouteRule, ...],
        agg_kind: str,
        agg_params: dict[str, np.ndarray],
    ):
        check_choice(agg_kind, set(_AGG_CODES), "agg_kind")
        if len(blocks) < 1:
            raise ValueError("an assembly needs at least one block")
        if len(routing) != len(blocks):
            raise ValueError("one routing rule per block is required")
        d_h = blocks[0][1].config.d_h
        covered: set[str] = set()
        for (name, block), rule in zip(blocks, routing):
            if block.config.d_h != d_h:
                raise ValueError(f"block {name!r} has d_h={block.config.d_h}, expected {d_h}")
            expected = block.kind.required_params
            if len(rule) != len(expected):
                raise ValueError(
                    f"routing for block {name!r} has {len(rule)} entries, "
                    f"but the block takes {len(expected)} parameters"
                )
            for field_name, _ in rule:
                if field_name not in target.required_params:
                    raise ValueError(
                        f"routing for block {name!r} references {field_name!r}, "
                        f"absent from {target.name.lower()}"
                    )
                covered.add(field_name)
        missing = set(target.required_params) - covered
        if missing:
            raise ValueError(f"routing covers no block with target fields {sorted(missing)}")
        self.target = target
        self.blocks = tuple(blocks)
        self.routing = tuple(tuple(rule) for rule in routing)
        self.agg_kind = agg_kind
        self.agg_params = agg_params
        self.d_h = d_h
        self._validate_agg_shapes()
        self._probe_cache: dict = {}

    @property
    def in_width(self) -> int:
        return len(self.blocks) * self.d_h

    def _validate_agg_shapes(self) -> None:
        w = self.in_width
        if self.agg_kind == "linear":
            expected = {"agg0.w": (1, w), "agg0.b": (1,)}
        else:
            hidden = 2 * w
            expected = {
                "agg0.w": (hidden, w), "agg0.b": (hidden,),
                "agg1.w": (1, hidden), "agg1.b": (1,),
            }
        if set(self.agg_params) != set(expected):
            raise ValueError("aggregator parameter names do not match its architecture")
        for name, shape in expected.items():
            if self.agg_params[name].shape != shape:
                raise ValueError(
                    f"aggregator parameter {name} has shape "
                    f"{self.agg_params[name].shape}, expected {shape}"
                )

    # -- parameter routing --

    def routed_arrays(self, gamma: np.ndarray) -> list[np.ndarray]:
        """Split a target parameter batch [B, p] into per-block inputs."""
        cols = {name: i for i, name in enumerate(self.target.required_params)}
        out = []
        for rule in self.routing:
            if rule:
                out.append(np.stack(
                    [gamma[:, cols[f]] * s for f, s in rule], axis=1))
            else:
                out.append(np.empty((gamma.shape[0], 0), dtype=np.float64))
        return out

    def gamma_array(self, gamma: ParamVector) -> np.ndarray:
        if gamma.names() != self.target.required_params:
            raise ValueError(
                f"{self.target.name.lower()} assembly expects parameters "
                f"{self.target.required_params}, got {gamma.names()}"
            )
        return gamma.values()[None, :]

    # -- numeric core --

    def embed_concat(self, u: np.ndarray, gamma: np.ndarray) -> np.ndarray:
        """Concatenated frozen-block embeddings [B, n_blocks * d_h, N]."""
        routed = self.routed_arrays(gamma)
        return np.concatenate(
            [block.embed_batch(u, g) for (_, block), g in zip(self.blocks, routed)],
            axis=1,
        )

    def agg_forward(self, emb: np.ndarray, cache: dict | None = None) -> np.ndarray:
        """Pointwise aggregation [B, in_width, N] -> [B, N]."""
        pr = self.agg_params
        if self.agg_kind == "linear":
            y = affine_forward(emb, pr["agg0.w"], pr["agg0.b"])
            if cache is not None:
                cache["emb"] = emb
        else:
            z = affine_forward(emb, pr["agg0.w"], pr["agg0.b"])
            t = _gelu_tanh(z)
            h = 0.5 * z * (1.0 + t)
            y = affine_forward(h, pr["agg1.w"], pr["agg1.b"])
            if cache is not None:
                cache.update(emb=emb, z=z, t=t, h=h)
        return y[:, 0, :]

    def agg_backward(self, cache: dict, grad_y: np.ndarray) -> dict[str, np.ndarray]:
        pr = self.agg_params
        grads: dict[str, np.ndarray] = {}
        g = grad_y[:, None, :]
        if self.agg_kind == "linear":
            _, grads["agg0.w"], grads["agg0.b"] = affine_backward(cache["emb"], pr["agg0.w"], g)
        else:
            grad_h, grads["agg1.w"], grads["agg1.b"] = affine_backward(cache["h"], pr["agg1.w"], g)
            grad_z = grad_h * gelu_grad(cache["z"], cache["t"])
            _, grads["agg0.w"], grads["agg0.b"] = affine_backward(cache["emb"], pr["agg0.w"], grad_z)
        return grads

    def forward_batch(self, u: np.ndarray, gamma: np.ndarray) -> np.ndarray:
        return self.agg_forward(self.embed_concat(u, gamma))

    def kernel_for(self, gamma: ParamVector):
        """The composed forward map at fixed parameters, as Field1D -> Field1D."""
        gamma_arr = self.gamma_array(gamma)

        def kernel(u: Field1D) -> Field1D:
            return Field1D(u.grid, self.forward_batch(u.values[None, :], gamma_arr)[0])

        return kernel

    def probe_for(self, gamma: ParamVector, grid, floor: float = 1e-8) -> KernelProbe | None:
        """Cached impulse probe per (grid, parameter) pair; None if degenerate."""
        key = (grid.nx, grid.length, tuple(gamma.values()))
        if key not in self._probe_cache:
            try:
                self._probe_cache[key] = probe_kernel(self.kernel_for(gamma), grid, floor)
            except DegenerateKernelError:
                import warnings

                warnings.warn(
                    "degenerate kernel probe; boundary correction will skip the "
                    "interior pre-adjustment",
                    RuntimeWarning,
                    stacklevel=2,
                )
                self._probe_cache[key] = None
        return self._probe_cache[key]


def assembly_forward(
    model: AssemblyModel,
    u: Field1D,
    gamma: ParamVector,
    bc: tuple[float, float] | None = None,
) -> Field1D:
    """One composed step; with bc=(left, right) the output boundary values
    are corrected to equal them exactly."""
    kernel = model.kernel_for(gamma)
    if bc is None:
        return kernel(u)
    probe = model.probe_for(gamma, u.grid)
    return apply_dirichlet_correction(kernel, u, bc[0], bc[1], probe)


def rollout_assembly(
    model: AssemblyModel,
    u0: Field1D,
    gamma: ParamVector,
    n_steps: int,
    bc: BoundaryValues | None = None,
    dt: float = DEFAULT_DT,
) -> Trajectory:
    """Autoregressive rollout; with bc, every step is boundary-corrected.

    bc must provide values for time indices 0..n_steps; the value at index
    k+1 is enforced on the output of step k.
    """
    check_count(n_steps, "n_steps", minimum=0)
    if bc is not None and len(bc) < n_steps + 1:
        raise ValueError(f"bc provides {len(bc)} time indices, need {n_steps + 1}")
    kernel = model.kernel_for(gamma)
    if bc is not None:
        step = wrap_with_bc(
            kernel, u0.grid, bc,
            cache=model._probe_cache, cache_key=tuple(gamma.values()),
        )
    out = np.empty((n_steps + 1, u0.grid.nx), dtype=np.float64)
    out[0] = u0.values
    state = u0
    for k in range(n_steps):
        state = step(state, k + 1) if bc is not None else kernel(state)
        if not np.all(np.isfinite(state.values)):
            raise DivergenceError(f"assembly rollout diverged at step {k + 1}")
        out[k + 1] = state.values
    return Trajectory(grid=u0.grid, dt=dt, params=gamma, values=out)


def make_assembly(
    target: EquationKind,
    blocks: list[tuple[str, PFNOModel]],
    agg_kind: str | None = None,
    seed: int = 0,
) -> AssemblyModel:
    """Standard two-block composition for convection-diffusion or Burgers.

    Routing follows the target equation: the advective block receives beta
    (nothing for the nonlinear block), the diffusion block receives nu,
    scaled by 1/pi for Burgers to match its effective coefficient.
    """
    if target is EquationKind.CONVECTION_DIFFUSION:
        wanted = {EquationKind.CONVECTION: None, EquationKind.DIFFUSION: None}
        default_agg = "linear"
    elif target is EquationKind.BURGERS:
        wanted = {EquationKind.NONLINEAR_CONVECTION: None, EquationKind.DIFFUSION: None}
        default_agg = "mlp"
    else:
        raise ValueError(
            f"assemblies target convection_diffusion or burgers, got {target.name.lower()}"
        )
    for name, block in blocks:
        if block.kind not in wanted:
            raise ValueError(
                f"block {name!r} solves {block.kind.name.lower()}, which "
                f"{target.name.lower()} does not use"
            )
        if wanted[block.kind] is not None:
            raise ValueError(f"duplicate {block.kind.name.lower()} block")
        wanted[block.kind] = (name, block)
    missing = [k.name.lower() for k, v in wanted.items() if v is None]
    if missing:
        raise ValueError(f"missing blocks for {missing}")

    if target is EquationKind.CONVECTION_DIFFUSION:
        ordered = (wanted[EquationKind.CONVECTION], wanted[EquationKind.DIFFUSION])
        routing: tuple[RouteRule, ...] = ((("beta", 1.0),), (("nu", 1.0),))
    else:
        ordered = (wanted[EquationKind.NONLINEAR_CONVECTION], wanted[EquationKind.DIFFUSION])
        routing = ((), (("nu", 1.0 / math.pi),))

    agg_kind = agg_kind or default_agg
    d_h = ordered[0][1].config.d_h
    in_width = len(ordered) * d_h
    rng = np.random.default_rng(seed)
    agg_params: dict[str, np.ndarray] = {}
    if agg_kind == "linear":
        agg_params["agg0.w"], agg_params["agg0.b"] = init_affine(rng, 1, in_width)
    else:
        hidden = 2 * in_width
        agg_params["agg0.w"], agg_params["agg0.b"] = init_affine(rng, hidden, in_width)
        agg_params["agg1.w"], agg_params["agg1.b"] = init_affine(rng, 1, hidden)
    return AssemblyModel(target, tuple(ordered), routing, agg_kind, agg_params)


def _batched_mae(model: AssemblyModel, emb_source, target: np.ndarray, chunk: int = 256) -> float:
    total = 0.0
    for start in range(0, target.shape[0], chunk):
        sl = slice(start, start + chunk)
        pred = model.agg_forward(emb_source(sl))
        total += float(np.sum(np.abs(pred - target[sl])))
    return total / target.size


def finetune_aggregator(
    model: AssemblyModel,
    ds: Dataset,
    hyper: TrainConfig,
    max_cache_bytes: int = 2 << 30,
) -> tuple[AssemblyModel, LossHistory]:
    """Train the aggregator with MAE; block weights are provably untouched.

    Because blocks are frozen and the aggregator is the final stage, block
    embeddings are precomputed once (or recomputed per batch when they would
    exceed max_cache_bytes) and no gradient flows through the blocks.
    """
    if ds.kind is not model.target:
        raise ValueError(
            f"dataset solves {ds.kind.name.lower()}, assembly targets "
            f"{model.target.name.lower()}"
        )
    if ds.n_trajectories == 0:
        raise ValueError("cannot fine-tune on an empty dataset")
    before = [block.checksum() for _, block in model.blocks]

    seed_split, seed_shuffle = np.random.SeedSequence(hyper.seed).spawn(2)
    train_ds, test_ds = split(ds, ds.split_ratio, seed_split)
    shuffle_rng = np.random.default_rng(seed_shuffle)

    u_in, gamma, u_out = one_step_pairs(train_ds)
    have_test = test_ds.n_trajectories > 0
    if have_test:
        tu_in, tgamma, tu_out = one_step_pairs(test_ds)

    train_hist: list[float] = []
    test_hist: list[float] = []
    if hyper.epochs > 0:
        nbytes = u_in.shape[0] * model.in_width * ds.grid.nx * 8
        if nbytes <= max_cache_bytes:
            emb_cache = _precompute_embeddings(model, u_in, gamma)
            emb_at = lambda idx: emb_cache[idx]  # noqa: E731
        else:
            emb_at = lambda idx: model.embed_concat(u_in[idx], gamma[idx])  # noqa: E731
        if have_test:
            tbytes = tu_in.shape[0] * model.in_width * ds.grid.nx * 8
            if tbytes <= max_cache_bytes:
                test_cache = _precompute_embeddings(model, tu_in, tgamma)
                test_at = lambda sl: test_cache[sl]  # noqa: E731
            else:
                test_at = lambda sl: model.embed_concat(tu_in[sl], tgamma[sl])  # noqa: E731

        adam = init_adam(model.agg_params, lr0=hyper.lr, weight_decay=hyper.weight_decay)
        schedule = StepSchedule(lr0=hyper.lr, step_size=hyper.lr_step, gamma=hyper.lr_gamma)
        n = u_in.shape[0]
        for epoch in range(hyper.epochs):
            lr = lr_at(schedule, epoch)
            order = shuffle_rng.permutation(n)
            abs_sum = 0.0
            for start in range(0, n, hyper.batch_size):
                idx = order[start:start + hyper.batch_size]
                cache: dict = {}
                pred = model.agg_forward(emb_at(idx), cache)
                loss, grad = mae_loss(pred, u_out[idx])
                abs_sum += loss * pred.size
                grads = model.agg_backward(cache, grad)
                adam_step(model.agg_params, grads, adam, lr)
            train_loss = abs_sum / (n * ds.grid.nx)
            test_loss = _batched_mae(model, test_at, tu_out) if have_test else math.nan
            if not np.isfinite(train_loss):
                raise DivergenceError(f"fine-tuning loss diverged at epoch {epoch}")
            train_hist.append(train_loss)
            test_hist.append(test_loss)

    after = [block.checksum() for _, block in model.blocks]
    if before != after:
        raise PdeBlocksError(
            "frozen block weights changed during fine-tuning (freeze violation)"
        )
    return model, LossHistory(train=tuple(train_hist), test=tuple(test_hist))


def _precompute_embeddings(model: AssemblyModel, u: np.ndarray, gamma: np.ndarray,
                           chunk: int = 256) -> np.ndarray:
    out = np.empty((u.shape[0], model.in_width, u.shape[1]), dtype=np.float64)
    for start in range(0, u.shape[0], chunk):
        sl = slice(start, start + chunk)
        out[sl] = model.embed_concat(u[sl], gamma[sl])
    return out


# -- residual diagnostics (spectral differentiation on the periodic grid) --

def _spectral_derivatives(field: Field1D, order: int) -> np.ndarray:
    k = 2.0 * np.pi * np.arange(field.grid.nx // 2 + 1) / field.grid.length
    factor = (1j * k) ** order
    return np.fft.irfft(factor * np.fft.rfft(field.values), n=field.grid.nx)


def residual_linear(
    u: Field1D, v: Field1D, a1: float, a2: float, beta: float, nu: float
) -> Field1D:
    """Linear-aggregation residual a2 * beta * v_xx - a1 * nu * u_x."""
    if u.grid != v.grid:
        raise ValueError("u and v must share a grid")
    lap_v = _spectral_derivatives(v, 2)
    du = _spectral_derivatives(u, 1)
    return Field1D(u.grid, a2 * beta * lap_v - a1 * nu * du)


def residual_nonlinear(
    u: Field1D, v: Field1D, a1: float, a2: float, nu: float
) -> Field1D:
    """Nonlinear-aggregation residual with quadratic cross terms:
    a1^2 u u_x + a2^2 v v_x + a1 a2 (v u_x + u v_x) - a1 nu u_xx."""
    if u.grid != v.grid:
        raise ValueError("u and v must share a grid")
    du = _spectral_derivatives(u, 1)
    dv = _spectral_derivatives(v, 1)
    lap_u = _spectral_derivatives(u, 2)
    values = (
        a1 * a1 * u.values * du
        + a2 * a2 * v.values * dv
        + a1 * a2 * (v.values * du + u.values * dv)
        - a1 * nu * lap_u
    )
    return Field1D(u.grid, values)


# -- persistence --

def save_assembly(model: AssemblyModel, path, library: BlockLibrary) -> None:
    """Write the CNOASSMB format; block references carry the library file
    CRCs so a changed block invalidates the assembly on load."""
    writer = binio.ByteWriter()
    writer.u32(ASSEMBLY_VERSION)
    writer.u8(int(model.target))
    writer.u8(_AGG_CODES[model.agg_kind])
    writer.u32(model.d_h)
    writer.u32(len(model.blocks))
    for (name, block), rule in zip(model.blocks, model.routing):
        writer.string(name)
        writer.u32(library.crc(name))
        writer.u8(int(block.kind))
        writer.u8(len(rule))
        for field_name, scale in rule:
            writer.u8(_FIELD_CODES[field_name])
            writer.f64(scale)
    writer.u32(len(model.agg_params))
    for name, tensor in model.agg_params.items():
        writer.string(name)
        writer.f64_array(tensor)
    binio.write_framed(path, ASSEMBLY_MAGIC, writer.payload())


def load_assembly(path, library: BlockLibrary) -> AssemblyModel:
    payload, stored_crc = binio.read_framed(path, ASSEMBLY_MAGIC)
    reader = binio.ByteReader(payload)
    version = reader.u32()
    if version != ASSEMBLY_VERSION:
        raise DataFormatError(
            f"{path}: unsupported assembly version {version}, expected {ASSEMBLY_VERSION}"
        )
    target = EquationKind.from_tag(reader.u8())
    agg_kind = _AGG_NAMES.get(reader.u8())
    if agg_kind is None:
        raise DataFormatError(f"{path}: unknown aggregator kind")
    d_h = reader.u32()
    n_blocks = reader.u32()
    blocks = []
    routing = []
    for _ in range(n_blocks):
        name = reader.string()
        expected_crc = reader.u32()
        kind = EquationKind.from_tag(reader.u8())
        n_rule = reader.u8()
        rule = tuple(
            (_FIELD_NAMES[reader.u8()], reader.f64()) for _ in range(n_rule)
        )
        actual_crc = library.crc(name)
        if actual_crc != expected_crc:
            raise DataFormatError(
                f"{path}: block {name!r} has checksum {actual_crc:#010x}, but the "
                f"assembly was saved against {expected_crc:#010x}; re-assemble"
            )
        block = library.load(name, expect_kind=kind)
        if block.config.d_h != d_h:
            raise DataFormatError(f"{path}: block {name!r} width disagrees with assembly")
        blocks.append((name, block))
        routing.append(rule)
    n_tensors = reader.u32()
    agg_params = {}
    for _ in range(n_tensors):
        name = reader.string()
        agg_params[name] = reader.f64_array()
    if not reader.done():
        raise DataFormatError(f"{path}: unexpected trailing bytes after payload")
    binio.verify_crc(payload, stored_crc, path)
    return AssemblyModel(target, tuple(blocks), tuple(routing), agg_kind, agg_params)


class OperatorAssembly(BaseEstimator):
    """sklearn-style estimator: fit() fine-tunes the aggregator on a Dataset,
    predict() rolls out with optional exact Dirichlet enforcement."""

    def __init__(self, blocks=None, aggregator="auto", epochs=100, batch_size=4,
                 lr=1e-4, lr_step=100, lr_gamma=0.5, weight_decay=1e-4, seed=0,
                 max_cache_bytes=2 << 30):
        self.blocks = blocks
        self.aggregator = aggregator
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.lr_step = lr_step
        self.lr_gamma = lr_gamma
        self.weight_decay = weight_decay
        self.seed = seed
        self.max_cache_bytes = max_cache_bytes

    def fit(self, dataset: Dataset, y=None) -> "OperatorAssembly":
        if not isinstance(dataset, Dataset):
            raise TypeError("OperatorAssembly.fit expects a Dataset")
        if not self.blocks:
            raise ValueError("OperatorAssembly needs a list of (name, PFNOModel) blocks")
        agg_kind = None if self.aggregator == "auto" else self.aggregator
        assembly = make_assembly(dataset.kind, list(self.blocks), agg_kind, seed=self.seed)
        hyper = TrainConfig(
            epochs=self.epochs, batch_size=self.batch_size, lr=self.lr,
            lr_step=self.lr_step, lr_gamma=self.lr_gamma,
            weight_decay=self.weight_decay, seed=self.seed,
        )
        self.assembly_, self.history_ = finetune_aggregator(
            assembly, dataset, hyper, max_cache_bytes=self.max_cache_bytes
        )
        self.equation_ = dataset.kind
        return self

    def predict(self, u0: Field1D, params: ParamVector, n_steps: int = 1,
                bc: BoundaryValues | None = None) -> Trajectory:
        check_is_fitted(self, "assembly_")
        return rollout_assembly(self.assembly_, u0, params, n_steps, bc=bc)
