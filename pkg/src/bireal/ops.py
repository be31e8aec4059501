"""Forward/backward graph operations for the training engine.

Convolutions on the training path run in the real domain (binary values are
+/-1 floats) so the graph stays differentiable; the bit-packed kernels in
``tensors`` are used on the inference/export path only. im2col + matmul keeps
the heavy lifting inside BLAS; accumulation per output entry is sequential,
so results are deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .errors import DimensionError, SingularityError
from .surrogates import SurrogateKind, sign, surrogate_derivative, surrogate_primitive
from .tensors import _conv_out_dims


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    n, c = xp.shape[:2]
    cols = np.empty((n, c, kh * kw, ho * wo), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            patch = xp[:, :, i : i + (ho - 1) * stride + 1 : stride,
                       j : j + (wo - 1) * stride + 1 : stride]
            cols[:, :, i * kw + j, :] = patch.reshape(n, c, ho * wo)
    return cols.reshape(n, c * kh * kw, ho * wo)


def conv2d(x: Tensor, w: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation, NCHW x OIHW -> NCHW, zero padding."""
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise DimensionError("conv2d expects NCHW input and OIHW weight")
    n, c, h, wd = x.shape
    o, ci, kh, kw = w.shape
    if ci != c:
        raise DimensionError(f"channel mismatch: input {c}, weight {ci}")
    ho, wo = _conv_out_dims(h, wd, kh, kw, stride, pad)
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    cols = _im2col(xp, kh, kw, stride, ho, wo)
    w2 = w.data.reshape(o, c * kh * kw)
    out_data = np.matmul(w2, cols).reshape(n, o, ho, wo)

    def grad_fn(g):
        gy = g.reshape(n, o, ho * wo)
        if w.requires_grad:
            w.accumulate(np.matmul(gy, cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape))
        if x.requires_grad:
            dcols = np.matmul(w2.T, gy).reshape(n, c, kh * kw, ho * wo)
            dxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i : i + (ho - 1) * stride + 1 : stride,
                        j : j + (wo - 1) * stride + 1 : stride] += (
                        dcols[:, :, i * kw + j, :].reshape(n, c, ho, wo))
            x.accumulate(dxp[:, :, pad : pad + h, pad : pad + wd] if pad else dxp)

    return Tensor(out_data, parents=(x, w), grad_fn=grad_fn)


@dataclass
class BatchNormState:
    """Per-channel affine + running statistics for one normalization layer."""

    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5

    @classmethod
    def create(cls, channels: int, dtype=np.float32, momentum: float = 0.1,
               eps: float = 1e-5) -> "BatchNormState":
        return cls(
            gamma=Tensor(np.ones(channels, dtype=dtype), requires_grad=True),
            beta=Tensor(np.zeros(channels, dtype=dtype), requires_grad=True),
            running_mean=np.zeros(channels, dtype=dtype),
            running_var=np.ones(channels, dtype=dtype),
            momentum=momentum,
            eps=eps,
        )


def batchnorm(x: Tensor, state: BatchNormState, training: bool,
              update_running: bool = True) -> Tensor:
    """Channel normalization over (N, H, W); batch stats in training mode,
    running stats in inference mode. Variance is the biased (1/m) estimate."""
    if x.data.ndim != 4:
        raise DimensionError("batchnorm expects NCHW input")
    if x.shape[1] != state.gamma.shape[0]:
        raise DimensionError(
            f"channel mismatch: input {x.shape[1]}, state {state.gamma.shape[0]}")
    axes = (0, 2, 3)
    gamma, beta = state.gamma, state.beta
    if training:
        if x.shape[0] < 2:
            raise DimensionError("training-mode batchnorm requires batch size >= 2")
        mu = x.data.mean(axis=axes)
        var = ((x.data - mu[None, :, None, None]) ** 2).mean(axis=axes)
        if state.eps == 0.0 and np.any(var == 0.0):
            raise SingularityError("zero variance with eps=0")
        if update_running:
            mom = state.momentum
            state.running_mean = ((1.0 - mom) * state.running_mean + mom * mu).astype(
                state.running_mean.dtype)
            state.running_var = ((1.0 - mom) * state.running_var + mom * var).astype(
                state.running_var.dtype)
    else:
        mu = state.running_mean.astype(x.dtype)
        var = state.running_var.astype(x.dtype)
        if state.eps == 0.0 and np.any(var == 0.0):
            raise SingularityError("zero variance with eps=0")
    invstd = 1.0 / np.sqrt(var + state.eps)
    xhat = (x.data - mu[None, :, None, None]) * invstd[None, :, None, None]
    out_data = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]

    def grad_fn(g):
        if gamma.requires_grad:
            gamma.accumulate((g * xhat).sum(axis=axes))
        if beta.requires_grad:
            beta.accumulate(g.sum(axis=axes))
        if x.requires_grad:
            scale = (gamma.data * invstd)[None, :, None, None]
            if training:
                g_mean = g.mean(axis=axes)[None, :, None, None]
                gx_mean = (g * xhat).mean(axis=axes)[None, :, None, None]
                x.accumulate(scale * (g - g_mean - xhat * gx_mean))
            else:
                x.accumulate(scale * g)

    return Tensor(out_data, parents=(x, gamma, beta), grad_fn=grad_fn)


def sign_activation(x: Tensor, kind: SurrogateKind) -> Tensor:
    """Forward is exactly sign (sign(0) = +1); backward uses the surrogate."""
    a_r = x.data
    out_data = sign(a_r)

    def grad_fn(g):
        if x.requires_grad:
            x.accumulate(g * surrogate_derivative(a_r, kind).astype(g.dtype))

    return Tensor(out_data, parents=(x,), grad_fn=grad_fn)


def smooth_surrogate(x: Tensor, kind: SurrogateKind) -> Tensor:
    """The surrogate F used as an actual activation (for gradient checks)."""
    a_r = x.data
    out_data = surrogate_primitive(a_r, kind).astype(a_r.dtype)

    def grad_fn(g):
        if x.requires_grad:
            x.accumulate(g * surrogate_derivative(a_r, kind).astype(g.dtype))

    return Tensor(out_data, parents=(x,), grad_fn=grad_fn)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def grad_fn(g):
        if x.requires_grad:
            x.accumulate(g * mask)

    return Tensor(np.where(mask, x.data, 0.0).astype(x.dtype), parents=(x,), grad_fn=grad_fn)


def clip_activation(x: Tensor) -> Tensor:
    """clip(-1, x, 1); derivative 1 on |x| < 1, else 0."""
    mask = np.abs(x.data) < 1.0

    def grad_fn(g):
        if x.requires_grad:
            x.accumulate(g * mask)

    return Tensor(np.clip(x.data, -1.0, 1.0), parents=(x,), grad_fn=grad_fn)


def leaky_clip(x: Tensor, slope: float = 0.1) -> Tensor:
    """x on [-1, 1]; slope * (|x| - 1) + 1 continued outside, signed."""
    a = x.data
    outside = np.abs(a) > 1.0
    out_data = np.where(outside, sign(a) * (1.0 + slope * (np.abs(a) - 1.0)), a)

    def grad_fn(g):
        if x.requires_grad:
            x.accumulate(g * np.where(outside, slope, 1.0).astype(g.dtype))

    return Tensor(out_data.astype(a.dtype), parents=(x,), grad_fn=grad_fn)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"add shape mismatch: {a.shape} vs {b.shape}")

    def grad_fn(g):
        if a.requires_grad:
            a.accumulate(g)
        if b.requires_grad:
            b.accumulate(g)

    return Tensor(a.data + b.data, parents=(a, b), grad_fn=grad_fn)


def avg_pool2d(x: Tensor, k: int = 2, stride: int | None = None, pad: int = 0) -> Tensor:
    """Average pooling with zero padding; the divisor is always k*k."""
    stride = k if stride is None else stride
    n, c, h, w = x.shape
    ho, wo = _conv_out_dims(h, w, k, k, stride, pad)
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    acc = np.zeros((n, c, ho, wo), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            acc += xp[:, :, i : i + (ho - 1) * stride + 1 : stride,
                      j : j + (wo - 1) * stride + 1 : stride]
    out_data = acc / (k * k)

    def grad_fn(g):
        if not x.requires_grad:
            return
        gp = np.zeros_like(xp)
        gk = g / (k * k)
        for i in range(k):
            for j in range(k):
                gp[:, :, i : i + (ho - 1) * stride + 1 : stride,
                   j : j + (wo - 1) * stride + 1 : stride] += gk
        x.accumulate(gp[:, :, pad : pad + h, pad : pad + w] if pad else gp)

    return Tensor(out_data, parents=(x,), grad_fn=grad_fn)


def global_avg_pool(x: Tensor) -> Tensor:
    n, c, h, w = x.shape
    out_data = x.data.mean(axis=(2, 3))

    def grad_fn(g):
        if x.requires_grad:
            x.accumulate(np.broadcast_to(g[:, :, None, None] / (h * w), x.shape).astype(x.dtype))

    return Tensor(out_data, parents=(x,), grad_fn=grad_fn)


def fully_connected(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """(N, C) @ (C, K) + (K,)"""
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[0]:
        raise DimensionError(f"fully_connected shapes: {x.shape} @ {w.shape}")
    out_data = x.data @ w.data + b.data

    def grad_fn(g):
        if x.requires_grad:
            x.accumulate(g @ w.data.T)
        if w.requires_grad:
            w.accumulate(x.data.T @ g)
        if b.requires_grad:
            b.accumulate(g.sum(axis=0))

    return Tensor(out_data, parents=(x, w, b), grad_fn=grad_fn)


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> tuple[Tensor, np.ndarray]:
    """Mean cross-entropy over the batch. Returns (loss, softmax probs)."""
    if logits.data.ndim != 2 or len(labels) != logits.shape[0]:
        raise DimensionError("softmax_cross_entropy expects (N, K) logits and N labels")
    z = logits.data
    zmax = z.max(axis=1, keepdims=True)
    ez = np.exp(z - zmax)
    probs = ez / ez.sum(axis=1, keepdims=True)
    n = z.shape[0]
    logp = (z - zmax) - np.log(ez.sum(axis=1, keepdims=True))
    loss_val = -logp[np.arange(n), labels].mean()

    def grad_fn(g):
        if logits.requires_grad:
            d = probs.copy()
            d[np.arange(n), labels] -= 1.0
            logits.accumulate((g * d / n).astype(z.dtype))

    loss = Tensor(np.asarray(loss_val, dtype=z.dtype), parents=(logits,), grad_fn=grad_fn)
    return loss, probs



def weighted_sum(x: Tensor, weights: np.ndarray) -> Tensor:
    """Scalar projection sum(x * weights); a fixed linear loss for analyses."""
    if x.shape != weights.shape:
        raise DimensionError("weighted_sum shape mismatch")
    out_data = np.asarray((x.data * weights).sum(), dtype=x.dtype)

    def grad_fn(g):
        if x.requires_grad:
            x.accumulate((g * weights).astype(x.dtype))

    return Tensor(out_data, parents=(x,), grad_fn=grad_fn)
