"""Weight binarization: latent real weights, magnitude-aware training
binarization, clipped-STE updates, and scale absorption into BatchNorm for
pure-sign inference export.

During training a binarized conv layer computes with W_b = s * sign(W_r),
where s is the per-output-filter mean absolute value of the latent weight
W_r. The per-filter L1 norm of W_b then matches W_r, which keeps gradient
magnitudes on the same scale as for the latent weights (see
``lemma1_check``). At export time the scale moves into the BatchNorm
statistics and the deployed weights are pure +/-1 bits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .errors import DegenerateFilterError, DimensionError
from .ops import BatchNormState, batchnorm, conv2d, weighted_sum
from .surrogates import SurrogateKind, sign, surrogate_derivative, surrogate_primitive
from .tensors import BitTensor, binary_conv2d, sign_pack

SCALE_KINDS = ("mean_abs", "l1_sum")


def filter_scales(w_r: np.ndarray, scale_kind: str = "mean_abs") -> np.ndarray:
    """Per-output-filter scale: mean (default) or sum of |W_r| over the filter."""
    if scale_kind not in SCALE_KINDS:
        raise ValueError(f"unknown scale kind: {scale_kind!r}")
    flat = np.abs(w_r.reshape(w_r.shape[0], -1))
    s = flat.mean(axis=1) if scale_kind == "mean_abs" else flat.sum(axis=1)
    if np.any(s == 0.0):
        raise DegenerateFilterError("all-zero weight filter has no binarization scale")
    return s


def magnitude_aware_binarize(
    w_r: np.ndarray, scale_kind: str = "mean_abs"
) -> tuple[np.ndarray, np.ndarray]:
    """W_b = s * sign(W_r) per output filter; ||W_b||_1 == ||W_r||_1 per filter
    (for the mean_abs scale). Returns (W_b, s)."""
    s = filter_scales(w_r, scale_kind)
    bcast = s.reshape((-1,) + (1,) * (w_r.ndim - 1))
    return (bcast * sign(w_r)).astype(w_r.dtype), s


def weight_backward(
    upstream: np.ndarray,
    w_r: np.ndarray,
    scale_kind: str = "mean_abs",
    grad_through_scale: bool = True,
    point_value=None,
    point_derivative=None,
) -> np.ndarray:
    """Gradient through W_b = s(W_r) * S(W_r).

    Production uses S = sign with the clipped-STE derivative 1_{|w|<1}; tests
    may pass a smooth (S, S') pair to compare against finite differences.
    With grad_through_scale=False the update degenerates to the plain clipped
    STE (upstream gated by the indicator, no scale terms).
    """
    if upstream.shape != w_r.shape:
        raise DimensionError("weight_backward shape mismatch")
    gate = (np.abs(w_r) < 1.0).astype(w_r.dtype)
    if not grad_through_scale:
        return upstream * gate
    s = filter_scales(w_r, scale_kind)
    n = w_r[0].size
    s_b = s.reshape((-1,) + (1,) * (w_r.ndim - 1))
    s_vals = sign(w_r) if point_value is None else point_value(w_r)
    d_vals = gate if point_derivative is None else point_derivative(w_r)
    per_filter = (upstream * s_vals).reshape(w_r.shape[0], -1).sum(axis=1)
    scale_grad = per_filter.reshape(s_b.shape)
    if scale_kind == "mean_abs":
        scale_grad = scale_grad / n
    return (upstream * s_b * d_vals + sign(w_r) * scale_grad).astype(w_r.dtype)


def binarize_weight(
    w: Tensor,
    mode: str,
    scale_kind: str = "mean_abs",
    grad_through_scale: bool = True,
    smooth_kind: SurrogateKind | None = None,
) -> Tensor:
    """Graph op mapping a latent weight Tensor to its training-time binary form.

    mode: "plain" (sign forward, clipped-STE backward) or "magnitude_aware"
    (scaled sign forward, product-rule backward). With smooth_kind set, sign
    is replaced by the surrogate F so the op is differentiable end to end
    (gradient checks only).
    """
    w_r = w.data
    if smooth_kind is not None:
        point_value = lambda a: surrogate_primitive(a, smooth_kind).astype(a.dtype)
        point_derivative = lambda a: surrogate_derivative(a, smooth_kind).astype(a.dtype)
    else:
        point_value = None
        point_derivative = None

    if mode == "plain":
        out_data = point_value(w_r) if point_value else sign(w_r)

        def grad_fn(g):
            if w.requires_grad:
                d = point_derivative(w_r) if point_derivative else (np.abs(w_r) < 1.0)
                w.accumulate(g * d)

    elif mode == "magnitude_aware":
        s = filter_scales(w_r, scale_kind)
        s_b = s.reshape((-1,) + (1,) * (w_r.ndim - 1))
        out_data = (s_b * (point_value(w_r) if point_value else sign(w_r))).astype(w_r.dtype)

        def grad_fn(g):
            if w.requires_grad:
                w.accumulate(weight_backward(
                    g, w_r, scale_kind, grad_through_scale,
                    point_value, point_derivative))

    else:
        raise ValueError(f"unknown weight mode: {mode!r}")

    return Tensor(out_data, parents=(w,), grad_fn=grad_fn)


def sgd_update(
    w: np.ndarray,
    grad: np.ndarray,
    lr: float,
    momentum: float = 0.0,
    buf: np.ndarray | None = None,
    weight_decay: float = 0.0,
) -> np.ndarray:
    """In-place SGD with momentum: v <- m*v + (g + wd*w); w <- w - lr*v.
    Returns the updated momentum buffer."""
    if lr < 0:
        raise ValueError("lr must be non-negative")
    g = grad if weight_decay == 0.0 else grad + weight_decay * w
    if buf is None:
        buf = np.zeros_like(w)
    buf *= momentum
    buf += g
    w -= lr * buf
    return buf


@dataclass
class LatentWeight:
    """Latent real weight of one binarized layer plus its freeze flag."""

    w_r: np.ndarray
    frozen: bool = False

    def scales(self, scale_kind: str = "mean_abs") -> np.ndarray:
        return filter_scales(self.w_r, scale_kind)


@dataclass
class ExportedLayer:
    """Pure-sign conv weights with the training scale folded into BatchNorm."""

    packed: BitTensor
    mu_folded: np.ndarray
    var_folded: np.ndarray
    gamma: np.ndarray
    beta: np.ndarray
    eps: float
    stride: int = 1
    pad: int = 0


def absorb_scale_into_bn(
    w_r: np.ndarray,
    bn: BatchNormState,
    scale_kind: str = "mean_abs",
    stride: int = 1,
    pad: int = 0,
) -> ExportedLayer:
    """Fold the per-filter scale s into the BatchNorm statistics:
    mu' = mu / s, sigma' = sigma / s; weights become sign bits."""
    s = filter_scales(w_r, scale_kind)
    return ExportedLayer(
        packed=sign_pack(w_r),
        mu_folded=(bn.running_mean / s).astype(np.float64),
        var_folded=(bn.running_var / (s * s)).astype(np.float64),
        gamma=bn.gamma.data.astype(np.float64),
        beta=bn.beta.data.astype(np.float64),
        eps=bn.eps,
        stride=stride,
        pad=pad,
    )


def folded_bn_apply(y: np.ndarray, layer: ExportedLayer) -> np.ndarray:
    inv = 1.0 / np.sqrt(layer.var_folded + layer.eps)
    return (layer.gamma * (y.transpose(0, 2, 3, 1) - layer.mu_folded) * inv
            + layer.beta).transpose(0, 3, 1, 2)


def exported_layer_forward(layer: ExportedLayer, x: np.ndarray) -> np.ndarray:
    """sign-pack the input, run the bit kernel, apply the folded statistics."""
    y = binary_conv2d(sign_pack(x), layer.packed, layer.stride, layer.pad)
    return folded_bn_apply(y.astype(np.float64), layer)


def lemma1_check(alpha: float, seed: int = 0) -> tuple[float, float]:
    """Scale all conv weights by alpha inside a conv -> BatchNorm fragment
    (gamma=1, beta=0): the normalized output is unchanged and the weight
    gradient scales by 1/alpha. Returns (forward_delta, gradient_ratio)."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    rng = np.random.Generator(np.random.PCG64(seed))
    x_data = rng.normal(size=(8, 4, 6, 6)).astype(np.float64)
    w_data = rng.normal(size=(5, 4, 3, 3)).astype(np.float64)
    g_proj = rng.normal(size=(8, 5, 6, 6)).astype(np.float64)

    def run(scale):
        w = Tensor(w_data * scale, requires_grad=True)
        bn = BatchNormState.create(5, dtype=np.float64, eps=0.0)
        z = batchnorm(conv2d(Tensor(x_data), w, stride=1, pad=1), bn, training=True,
                      update_running=False)
        loss = weighted_sum(z, g_proj)
        loss.backward()
        return z.data, w.grad

    z1, g1 = run(1.0)
    z2, g2 = run(alpha)
    forward_delta = float(np.max(np.abs(z2 - z1)))
    gradient_ratio = float(np.abs(g2).sum() / np.abs(g1).sum())
    return forward_delta, gradient_ratio
