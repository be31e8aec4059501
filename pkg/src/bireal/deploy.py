"""Exported-model construction and packed inference.

The exported network stores sign bits for every binarized conv plus folded
BatchNorm statistics (scale absorbed), and raw float weights for the
real-valued stem, downsample and head layers. Inference runs the bit-packed
XNOR-popcount kernels end to end; it is an independent path from the
training graph and must agree with it to float tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .binarize import ExportedLayer, absorb_scale_into_bn, folded_bn_apply
from .checkpoint import (bits_from_section, load_export, pack_bits_section,
                         save_export, spec_digest)
from .errors import SpecError
from .network import Network, NetworkSpec, walk_network
from .tensors import binary_conv2d, real_conv2d, sign_pack


@dataclass
class RealLayer:
    w: np.ndarray
    gamma: np.ndarray
    beta: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    eps: float
    stride: int
    pad: int


@dataclass
class ExportedModel:
    spec: NetworkSpec
    bit_layers: dict[str, ExportedLayer]
    real_layers: dict[str, RealLayer]
    fc_w: np.ndarray
    fc_b: np.ndarray


def export_model(net: Network, scale_kind: str = "mean_abs") -> ExportedModel:
    bit_layers: dict[str, ExportedLayer] = {}
    real_layers: dict[str, RealLayer] = {}
    for row in net.conv_rows:
        bn = net.bns[row.name]
        w = net.params[f"{row.name}.w"].data.astype(np.float64)
        if row.binarizable:
            layer = absorb_scale_into_bn(w, bn, scale_kind, row.stride, row.pad)
            bit_layers[row.name] = layer
        else:
            real_layers[row.name] = RealLayer(
                w, bn.gamma.data.astype(np.float64), bn.beta.data.astype(np.float64),
                bn.running_mean.astype(np.float64), bn.running_var.astype(np.float64),
                bn.eps, row.stride, row.pad)
    return ExportedModel(net.spec, bit_layers, real_layers,
                         net.params["head.fc.w"].data.astype(np.float64),
                         net.params["head.fc.b"].data.astype(np.float64))


def _bn_apply(y, layer: RealLayer):
    inv = 1.0 / np.sqrt(layer.var + layer.eps)
    return (layer.gamma * (y.transpose(0, 2, 3, 1) - layer.mean) * inv
            + layer.beta).transpose(0, 3, 1, 2)


def _avgpool2x2(x):
    n, c, h, w = x.shape
    return x.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))


def _avgpool(x, k, stride, pad):
    if (k, stride, pad) == (2, 2, 0):
        return _avgpool2x2(x)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    n, c, h, w = xp.shape
    ho = (h - k) // stride + 1
    wo = (w - k) // stride + 1
    acc = np.zeros((n, c, ho, wo), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            acc += xp[:, :, i:i + (ho - 1) * stride + 1:stride,
                      j:j + (wo - 1) * stride + 1:stride]
    return acc / (k * k)


def forward_exported(model: ExportedModel, x: np.ndarray) -> np.ndarray:
    """Normalized images -> logits, running binarized convs on packed bits."""
    spec = model.spec
    x = np.ascontiguousarray(x, dtype=np.float64)

    def bit_unit(name, t):
        layer = model.bit_layers[name]
        y = binary_conv2d(sign_pack(t), layer.packed, layer.stride, layer.pad)
        return folded_bn_apply(y.astype(np.float64), layer)

    stem = model.real_layers["stem.conv"]
    t = _bn_apply(real_conv2d(x, stem.w, stem.stride, stem.pad), stem)
    if spec.stem.pool:
        t = _avgpool(t, *spec.stem.pool)

    for i, b in enumerate(spec.blocks):
        pre = f"block{i}"

        def shortcut(src):
            if not b.needs_downsample:
                return src
            s = _avgpool2x2(src) if b.stride != 1 else src
            ds = model.real_layers[f"{pre}.ds.conv"]
            return _bn_apply(real_conv2d(s, ds.w, 1, 0), ds)

        if b.kind == "bireal_shallow":
            t = bit_unit(f"{pre}.conv", t) + shortcut(t)
        elif b.kind == "plain":
            t = bit_unit(f"{pre}.conv", t)
        elif b.kind == "resnet_2layer":
            z = bit_unit(f"{pre}.conv2", bit_unit(f"{pre}.conv1", t))
            t = z + shortcut(t)
        elif b.kind == "bireal_bottleneck":
            u = bit_unit(f"{pre}.reduce", t)
            y3 = bit_unit(f"{pre}.conv3", u)
            inner = u if b.stride == 1 else _avgpool2x2(u)
            v = y3 + inner
            t = bit_unit(f"{pre}.expand", v) + shortcut(t)
        else:
            raise SpecError(f"unknown block kind {b.kind!r}")

    pooled = t.mean(axis=(2, 3))
    return pooled @ model.fc_w + model.fc_b


def save_exported(path: str, model: ExportedModel, spec_text: str) -> None:
    arrays: dict[str, np.ndarray] = {}
    for name, layer in model.bit_layers.items():
        arrays[f"bits.{name}"] = pack_bits_section(layer.packed)
        arrays[f"bitshape.{name}"] = np.asarray(layer.packed.shape, dtype=np.int64)
        arrays[f"fold.{name}.mu"] = layer.mu_folded
        arrays[f"fold.{name}.var"] = layer.var_folded
        arrays[f"fold.{name}.gamma"] = layer.gamma
        arrays[f"fold.{name}.beta"] = layer.beta
        arrays[f"fold.{name}.meta"] = np.asarray(
            [layer.eps, layer.stride, layer.pad], dtype=np.float64)
    for name, layer in model.real_layers.items():
        arrays[f"w.{name}"] = layer.w
        arrays[f"real.{name}.gamma"] = layer.gamma
        arrays[f"real.{name}.beta"] = layer.beta
        arrays[f"real.{name}.mean"] = layer.mean
        arrays[f"real.{name}.var"] = layer.var
        arrays[f"real.{name}.meta"] = np.asarray(
            [layer.eps, layer.stride, layer.pad], dtype=np.float64)
    arrays["w.head.fc"] = model.fc_w
    arrays["b.head.fc"] = model.fc_b
    save_export(path, spec_digest(model.spec), spec_text, arrays)


def load_exported(path: str, expected_digest: bytes | None = None) -> ExportedModel:
    from .config import parse  # local import: config depends on network

    digest, spec_text, arrays = load_export(path, expected_digest)
    spec = parse(spec_text).network.to_spec()
    if spec_digest(spec) != digest:
        raise SpecError("embedded spec text disagrees with the stored digest")
    rows, _, _ = walk_network(spec)
    bit_layers: dict[str, ExportedLayer] = {}
    real_layers: dict[str, RealLayer] = {}
    for row in rows:
        name = row.name
        if f"bits.{name}" in arrays:
            shape = tuple(int(v) for v in arrays[f"bitshape.{name}"])
            eps, stride, pad = arrays[f"fold.{name}.meta"]
            bit_layers[name] = ExportedLayer(
                packed=bits_from_section(shape, arrays[f"bits.{name}"]),
                mu_folded=arrays[f"fold.{name}.mu"],
                var_folded=arrays[f"fold.{name}.var"],
                gamma=arrays[f"fold.{name}.gamma"],
                beta=arrays[f"fold.{name}.beta"],
                eps=float(eps), stride=int(stride), pad=int(pad))
        else:
            eps, stride, pad = arrays[f"real.{name}.meta"]
            real_layers[name] = RealLayer(
                arrays[f"w.{name}"], arrays[f"real.{name}.gamma"],
                arrays[f"real.{name}.beta"], arrays[f"real.{name}.mean"],
                arrays[f"real.{name}.var"], float(eps), int(stride), int(pad))
    return ExportedModel(spec, bit_layers, real_layers,
                         arrays["w.head.fc"], arrays["b.head.fc"])
