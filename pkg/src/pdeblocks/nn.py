"""Differentiable numerical kernel: FFT, spectral convolution, affine maps,
GELU, losses, Adam, and the step learning-rate schedule.

There is no computation-graph autodiff here. Every forward operation has a
hand-derived backward companion, and each backward is pinned to central
finite differences by the test suite.

Tensor conventions: batched fields are float64 arrays of shape [B, C, N]
(batch, channels, nodes); spectra are complex128 of shape [B, C, N//2 + 1]
under numpy's unnormalized rfft / normalized irfft convention. Gradients
with respect to complex quantities use the pairing g = dL/dRe + i dL/dIm.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .grid import Grid1D

_GELU_S = math.sqrt(2.0 / math.pi)
_GELU_C = 0.044715


@dataclass(frozen=True, eq=False)
class ChannelField:
    """A multi-channel function on a grid; values have shape [channels, nx]."""

    grid: Grid1D
    values: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != self.grid.nx or arr.shape[0] < 1:
            raise ValueError(
                f"channel values must have shape [channels >= 1, {self.grid.nx}], "
                f"got {arr.shape}"
            )
        if not np.all(np.isfinite(arr)):
            raise ValueError("channel values must be finite")
        object.__setattr__(self, "values", arr)


def rfft(x: np.ndarray) -> np.ndarray:
    """Real-to-complex transform over the last axis (unnormalized)."""
    return np.fft.rfft(x, axis=-1)


def irfft(spectrum: np.ndarray, n: int) -> np.ndarray:
    """Inverse of rfft (normalized by 1/n), back to n real nodes."""
    return np.fft.irfft(spectrum, n=n, axis=-1)


def _check_modes(k_max: int, n: int) -> None:
    if k_max > n // 2 + 1:
        raise ValueError(f"k_max={k_max} exceeds the {n // 2 + 1} modes of an nx={n} grid")


def spectral_conv_forward(
    x: np.ndarray, rr: np.ndarray, ri: np.ndarray, cache: dict | None = None
) -> np.ndarray:
    """Per-mode linear map: Y_k = R_k X_k for k < k_max, higher modes zeroed.

    x: [B, d_in, N]; rr/ri: real and imaginary parts of R, [k_max, d_out, d_in].
    With a cache dict the kept input spectrum is stored under "spec" for
    reuse by the backward pass.
    """
    k_max, d_out, _ = rr.shape
    n = x.shape[-1]
    _check_modes(k_max, n)
    weights = rr + 1j * ri
    spectrum = rfft(x)[..., :k_max].transpose(2, 1, 0)   # [K, d_in, B]
    if cache is not None:
        cache["spec"] = spectrum
    mixed = weights @ spectrum                           # [K, d_out, B]
    full = np.zeros((x.shape[0], d_out, n // 2 + 1), dtype=np.complex128)
    full[..., :k_max] = mixed.transpose(2, 1, 0)
    return irfft(full, n)


def spectral_conv_backward(
    x: np.ndarray,
    rr: np.ndarray,
    ri: np.ndarray,
    grad_y: np.ndarray,
    x_spec: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of spectral_conv_forward: returns (grad_x, grad_rr, grad_ri).

    Derivation: the adjoint of the normalized irfft scales retained bins by
    2/N (1/N at DC and Nyquist, where rfft of a real upstream gradient is
    exactly real); the per-mode product backpropagates with conjugated
    weights/inputs; the adjoint of the unnormalized rfft is N * irfft with
    interior bins halved. x_spec, when given, must be the [K, d_in, B]
    spectrum cached by the forward pass.
    """
    k_max, d_out, d_in = rr.shape
    n = x.shape[-1]
    nyquist_kept = (k_max - 1) == n // 2

    grad_spec = rfft(grad_y)[..., :k_max].transpose(2, 1, 0)   # [K, d_out, B]
    w = np.full((k_max, 1, 1), 2.0 / n)
    w[0] = 1.0 / n
    if nyquist_kept:
        w[-1] = 1.0 / n
    grad_mixed = grad_spec * w

    if x_spec is None:
        x_spec = rfft(x)[..., :k_max].transpose(2, 1, 0)       # [K, d_in, B]
    grad_weights = grad_mixed @ np.conj(x_spec.transpose(0, 2, 1))   # [K, d_out, d_in]

    weights = rr + 1j * ri
    grad_x_spec = np.conj(weights.transpose(0, 2, 1)) @ grad_mixed   # [K, d_in, B]
    v = np.full((k_max, 1, 1), 0.5)
    v[0] = 1.0
    if nyquist_kept:
        v[-1] = 1.0
    full = np.zeros((x.shape[0], d_in, n // 2 + 1), dtype=np.complex128)
    full[..., :k_max] = (grad_x_spec * v).transpose(2, 1, 0)
    grad_x = n * irfft(full, n)
    return grad_x, grad_weights.real.copy(), grad_weights.imag.copy()


def affine_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pointwise channel map y[., o, n] = sum_c w[o, c] x[., c, n] + b[o]."""
    return np.matmul(w, x) + b[:, None]


def affine_backward(
    x: np.ndarray, w: np.ndarray, grad_y: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of affine_forward: returns (grad_x, grad_w, grad_b)."""
    grad_x = np.matmul(w.T, grad_y)
    grad_w = np.matmul(grad_y, x.transpose(0, 2, 1)).sum(axis=0)
    grad_b = grad_y.sum(axis=(0, 2))
    return grad_x, grad_w, grad_b


def _gelu_tanh(x: np.ndarray) -> np.ndarray:
    # x*x*x instead of x**3: numpy's pow path is ~50x slower than multiplies.
    return np.tanh(_GELU_S * (x + _GELU_C * (x * x * x)))


def gelu(x: np.ndarray) -> np.ndarray:
    """tanh-approximate GELU: 0.5 x (1 + tanh(s (x + c x^3)))."""
    return 0.5 * x * (1.0 + _gelu_tanh(x))


def gelu_grad(x: np.ndarray, t: np.ndarray | None = None) -> np.ndarray:
    """Exact derivative of the tanh-approximate GELU.

    t, when given, must be the tanh term already computed for this x (the
    forward pass caches it); it is recomputed otherwise.
    """
    x = np.asarray(x, dtype=np.float64)
    scalar = x.ndim == 0
    if scalar:
        x = x.reshape(1)
        t = None if t is None else np.asarray(t, dtype=np.float64).reshape(1)
    x2 = x * x
    if t is None:
        t = np.tanh(_GELU_S * (x + _GELU_C * (x2 * x)))
    # In-place chain: 0.5 (1+t) + 0.5 s x (1 - t^2)(1 + 3c x^2)
    np.multiply(x2, 3.0 * _GELU_C, out=x2)
    x2 += 1.0
    sech2 = np.multiply(t, t)
    np.subtract(1.0, sech2, out=sech2)
    sech2 *= x2
    sech2 *= x
    sech2 *= 0.5 * _GELU_S
    out = 0.5 * (1.0 + t)
    out += sech2
    return out[0] if scalar else out


def mse_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error over every element; returns (loss, grad wrt pred)."""
    diff = pred - target
    loss = float(np.mean(diff * diff))
    return loss, (2.0 / diff.size) * diff


def mae_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean absolute error; the subgradient at exact zeros is 0."""
    diff = pred - target
    loss = float(np.mean(np.abs(diff)))
    return loss, np.sign(diff) / diff.size


@dataclass
class AdamState:
    """Adam moment buffers and hyperparameters (coupled weight decay)."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0
    lr0: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4


def init_adam(
    params: dict[str, np.ndarray],
    lr0: float = 1e-3,
    weight_decay: float = 1e-4,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> AdamState:
    return AdamState(
        m={k: np.zeros_like(p) for k, p in params.items()},
        v={k: np.zeros_like(p) for k, p in params.items()},
        t=0, lr0=lr0, beta1=beta1, beta2=beta2, eps=eps, weight_decay=weight_decay,
    )


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
) -> None:
    """One bias-corrected Adam update, in place, in fixed key order."""
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for name in params:
        grad = grads[name]
        if state.weight_decay != 0.0:
            grad = grad + state.weight_decay * params[name]
        state.m[name] = state.beta1 * state.m[name] + (1.0 - state.beta1) * grad
        state.v[name] = state.beta2 * state.v[name] + (1.0 - state.beta2) * grad * grad
        m_hat = state.m[name] / bc1
        v_hat = state.v[name] / bc2
        params[name] -= lr * m_hat / (np.sqrt(v_hat) + state.eps)


@dataclass(frozen=True)
class StepSchedule:
    """Learning rate lr0 * gamma^floor(epoch / step_size)."""

    lr0: float
    step_size: int = 100
    gamma: float = 0.5

    def __post_init__(self) -> None:
        if not (0.0 < self.gamma <= 1.0):
            raise ValueError(f"gamma must lie in (0, 1], got {self.gamma}")
        if self.step_size < 1:
            raise ValueError(f"step_size must be >= 1, got {self.step_size}")


def lr_at(schedule: StepSchedule, epoch: int) -> float:
    return schedule.lr0 * schedule.gamma ** (epoch // schedule.step_size)


def init_affine(rng: np.random.Generator, d_out: int, d_in: int) -> tuple[np.ndarray, np.ndarray]:
    """Uniform +-1/sqrt(d_in) for both weight and bias."""
    bound = 1.0 / math.sqrt(d_in)
    w = rng.uniform(-bound, bound, size=(d_out, d_in))
    b = rng.uniform(-bound, bound, size=(d_out,))
    return w, b


def init_spectral(
    rng: np.random.Generator, k_max: int, d_out: int, d_in: int
) -> tuple[np.ndarray, np.ndarray]:
    """Real/imaginary parts uniform in [0, 1/(d_in d_out))."""
    scale = 1.0 / (d_in * d_out)
    rr = scale * rng.random(size=(k_max, d_out, d_in))
    ri = scale * rng.random(size=(k_max, d_out, d_in))
    return rr, ri
