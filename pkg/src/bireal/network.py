"""Declarative network specs and the executable training-graph network.

Every block kind is a wiring of the same elemental unit
(activation -> conv -> BatchNorm):

* ``bireal_shallow``: a shortcut bypasses every single unit.
* ``resnet_2layer``: a shortcut bypasses a pair of units (ReLU-only
  pre-activation ordering).
* ``plain``: units chained with no shortcuts.
* ``bireal_bottleneck``: 1x1 reduce / 3x3 / 1x1 expand units with the
  block-level shortcut plus an added inner shortcut summing the 3x3 unit's
  real input with its BatchNorm output.

Shortcut paths that change resolution or width use a real-valued
2x2 average pool followed by a 1x1 conv (plus BatchNorm); stem, head and
downsample layers are never binarized.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .binarize import binarize_weight
from .errors import SpecError
from .ops import (BatchNormState, add, avg_pool2d, batchnorm, clip_activation,
                  conv2d, fully_connected, global_avg_pool, leaky_clip, relu,
                  sign_activation, smooth_surrogate, softmax_cross_entropy)
from .surrogates import SurrogateKind, sign

BLOCK_KINDS = ("bireal_shallow", "bireal_bottleneck", "resnet_2layer", "plain")
ACT_KINDS = ("sign", "relu", "clip", "leaky_clip", "smooth")


@dataclass(frozen=True)
class BlockSpec:
    kind: str
    in_channels: int
    out_channels: int
    stride: int = 1
    mid_channels: int | None = None

    @property
    def needs_downsample(self) -> bool:
        return self.stride != 1 or self.in_channels != self.out_channels


@dataclass(frozen=True)
class StemSpec:
    in_channels: int
    out_channels: int
    kernel: int = 3
    stride: int = 1
    pool: tuple[int, int, int] | None = None  # kernel, stride, pad

    @property
    def pad(self) -> int:
        return self.kernel // 2


@dataclass(frozen=True)
class NetworkSpec:
    name: str
    input_shape: tuple[int, int, int]  # C, H, W
    num_classes: int
    stem: StemSpec
    blocks: tuple[BlockSpec, ...]
    surrogate: SurrogateKind = SurrogateKind.APPROX_SIGN2
    weight_mode: str = "magnitude_aware"

    def validate(self) -> None:
        if self.stem.in_channels != self.input_shape[0]:
            raise SpecError("stem input channels disagree with input shape")
        prev = self.stem.out_channels
        for i, b in enumerate(self.blocks):
            if b.kind not in BLOCK_KINDS:
                raise SpecError(f"unknown block kind {b.kind!r}")
            if b.in_channels != prev:
                raise SpecError(
                    f"block {i}: in_channels {b.in_channels} != upstream {prev}")
            if b.kind == "bireal_bottleneck" and not b.mid_channels:
                raise SpecError(f"block {i}: bottleneck needs mid_channels")
            prev = b.out_channels


@dataclass(frozen=True)
class ConvShape:
    """One conv layer with resolved spatial dims; shared by the executable
    network, the exporter and the cost accounting."""

    name: str
    role: str  # stem | block | downsample
    sub: str
    cin: int
    cout: int
    kernel: int
    stride: int
    pad: int
    hout: int
    wout: int
    binarizable: bool


def _conv_hw(h, w, k, stride, pad):
    return (h + 2 * pad - k) // stride + 1, (w + 2 * pad - k) // stride + 1


def walk_network(spec: NetworkSpec):
    """Resolve every layer's shape. Returns (conv rows, fc shape, adds) where
    adds is [(name, entries)] for the element-wise shortcut additions."""
    spec.validate()
    rows: list[ConvShape] = []
    adds: list[tuple[str, int]] = []
    _, h, w = spec.input_shape
    st = spec.stem
    h, w = _conv_hw(h, w, st.kernel, st.stride, st.pad)
    rows.append(ConvShape("stem.conv", "stem", "stem", st.in_channels,
                          st.out_channels, st.kernel, st.stride, st.pad, h, w, False))
    if st.pool:
        pk, ps, pp = st.pool
        h, w = _conv_hw(h, w, pk, ps, pp)

    for i, b in enumerate(spec.blocks):
        pre = f"block{i}"
        if b.kind in ("bireal_shallow", "plain"):
            ho, wo = _conv_hw(h, w, 3, b.stride, 1)
            rows.append(ConvShape(f"{pre}.conv", "block", "conv", b.in_channels,
                                  b.out_channels, 3, b.stride, 1, ho, wo, True))
        elif b.kind == "resnet_2layer":
            ho, wo = _conv_hw(h, w, 3, b.stride, 1)
            rows.append(ConvShape(f"{pre}.conv1", "block", "conv1", b.in_channels,
                                  b.out_channels, 3, b.stride, 1, ho, wo, True))
            rows.append(ConvShape(f"{pre}.conv2", "block", "conv2", b.out_channels,
                                  b.out_channels, 3, 1, 1, ho, wo, True))
        elif b.kind == "bireal_bottleneck":
            mid = b.mid_channels
            rows.append(ConvShape(f"{pre}.reduce", "block", "reduce", b.in_channels,
                                  mid, 1, 1, 0, h, w, True))
            ho, wo = _conv_hw(h, w, 3, b.stride, 1)
            rows.append(ConvShape(f"{pre}.conv3", "block", "conv3", mid, mid,
                                  3, b.stride, 1, ho, wo, True))
            adds.append((f"{pre}.inner_add", mid * ho * wo))
            rows.append(ConvShape(f"{pre}.expand", "block", "expand", mid,
                                  b.out_channels, 1, 1, 0, ho, wo, True))
        else:
            raise SpecError(f"unknown block kind {b.kind!r}")

        if b.kind != "plain":
            adds.append((f"{pre}.add", b.out_channels * ho * wo))
        if b.needs_downsample:
            dh, dw = (h, w) if b.stride == 1 else (h // 2, w // 2)
            if (dh, dw) != (ho, wo):
                raise SpecError(
                    f"block {i}: shortcut pool output {dh}x{dw} does not match "
                    f"main path {ho}x{wo}")
            rows.append(ConvShape(f"{pre}.ds.conv", "downsample", "ds",
                                  b.in_channels, b.out_channels, 1, 1, 0,
                                  dh, dw, False))
        h, w = ho, wo
    fc_shape = (spec.blocks[-1].out_channels, spec.num_classes)
    return rows, fc_shape, adds


def count_conv_weight_params(spec: NetworkSpec,
                             include_shortcut_projections: bool = False) -> int:
    """Main-path conv weight count (the matched-plan comparison metric)."""
    rows, _, _ = walk_network(spec)
    total = 0
    for r in rows:
        if r.role == "downsample" and not include_shortcut_projections:
            continue
        total += r.cout * r.cin * r.kernel * r.kernel
    return total


@dataclass
class Network:
    """Executable network: parameter Tensors plus per-layer BatchNorm state."""

    spec: NetworkSpec
    params: dict[str, Tensor]
    bns: dict[str, BatchNormState]
    conv_rows: list[ConvShape]
    frozen: bool = False
    dtype: type = np.float32

    def binarizable_layers(self) -> list[ConvShape]:
        return [r for r in self.conv_rows if r.binarizable]

    def mask_layers(self, selector: str) -> set[str]:
        """Layer names whose weights are binary under a phase mask selector."""
        if selector == "none":
            return set()
        if selector == "all":
            return {r.name for r in self.binarizable_layers()}
        if selector == "1x1_only":
            return {r.name for r in self.binarizable_layers() if r.kernel == 1}
        raise SpecError(f"unknown binarization mask selector {selector!r}")

    def freeze_signs(self) -> None:
        """Replace every binarizable latent weight by its sign (+/-1)."""
        for r in self.binarizable_layers():
            p = self.params[f"{r.name}.w"]
            p.data = sign(p.data)
        self.frozen = True

    def forward(self, x: np.ndarray, act: str = "sign",
                surrogate: SurrogateKind | None = None,
                binary_weights: set[str] | frozenset[str] = frozenset(),
                weight_mode: str | None = None,
                scale_kind: str = "mean_abs",
                grad_through_scale: bool = True,
                smooth_weights: bool = False,
                training: bool = False,
                update_running: bool | None = None) -> Tensor:
        if act not in ACT_KINDS:
            raise SpecError(f"unknown activation kind {act!r}")
        surrogate = surrogate or self.spec.surrogate
        weight_mode = weight_mode or self.spec.weight_mode
        update_running = training if update_running is None else update_running
        smooth_kind = surrogate if smooth_weights else None

        def act_fn(t):
            if act == "sign":
                return sign_activation(t, surrogate)
            if act == "relu":
                return relu(t)
            if act == "clip":
                return clip_activation(t)
            if act == "leaky_clip":
                return leaky_clip(t, 0.1)
            return smooth_surrogate(t, surrogate)

        def weight_for(name):
            w = self.params[f"{name}.w"]
            if name in binary_weights:
                return binarize_weight(w, weight_mode, scale_kind,
                                       grad_through_scale, smooth_kind)
            return w

        def bn_of(name, t):
            return batchnorm(t, self.bns[name], training, update_running)

        def unit(t, row: ConvShape):
            a = act_fn(t)
            y = conv2d(a, weight_for(row.name), row.stride, row.pad)
            return bn_of(row.name, y)

        rows = {r.name: r for r in self.conv_rows}
        t = Tensor(np.ascontiguousarray(x, dtype=self.dtype))
        st = self.spec.stem
        t = conv2d(t, self.params["stem.conv.w"], st.stride, st.pad)
        t = bn_of("stem.conv", t)
        if st.pool:
            t = avg_pool2d(t, st.pool[0], st.pool[1], st.pool[2])

        for i, b in enumerate(self.spec.blocks):
            pre = f"block{i}"

            def shortcut(src):
                if not b.needs_downsample:
                    return src
                s = avg_pool2d(src, 2, 2) if b.stride != 1 else src
                s = conv2d(s, self.params[f"{pre}.ds.conv.w"], 1, 0)
                return bn_of(f"{pre}.ds.conv", s)

            if b.kind == "bireal_shallow":
                t = add(unit(t, rows[f"{pre}.conv"]), shortcut(t))
            elif b.kind == "plain":
                t = unit(t, rows[f"{pre}.conv"])
            elif b.kind == "resnet_2layer":
                z = unit(unit(t, rows[f"{pre}.conv1"]), rows[f"{pre}.conv2"])
                t = add(z, shortcut(t))
            else:  # bireal_bottleneck
                u = unit(t, rows[f"{pre}.reduce"])
                y3 = unit(u, rows[f"{pre}.conv3"])
                inner = u if b.stride == 1 else avg_pool2d(u, 2, 2)
                v = add(y3, inner)
                w_out = unit(v, rows[f"{pre}.expand"])
                t = add(w_out, shortcut(t))

        pooled = global_avg_pool(t)
        return fully_connected(pooled, self.params["head.fc.w"], self.params["head.fc.b"])

    def loss_and_probs(self, x, labels, **fw):
        logits = self.forward(x, **fw)
        loss, probs = softmax_cross_entropy(logits, np.asarray(labels))
        return loss, probs, logits


def build_network(spec: NetworkSpec, seed: int = 0, dtype=np.float32) -> Network:
    """Materialize parameters for a spec. He-normal conv init, zero-bias FC."""
    rows, fc_shape, _ = walk_network(spec)
    ss = np.random.SeedSequence(seed)
    params: dict[str, Tensor] = {}
    bns: dict[str, BatchNormState] = {}
    children = ss.spawn(len(rows) + 1)
    for row, child in zip(rows, children):
        rng = np.random.Generator(np.random.PCG64(child))
        fan_in = row.cin * row.kernel * row.kernel
        w = rng.normal(0.0, np.sqrt(2.0 / fan_in),
                       size=(row.cout, row.cin, row.kernel, row.kernel))
        params[f"{row.name}.w"] = Tensor(w.astype(dtype), requires_grad=True)
        bn = BatchNormState.create(row.cout, dtype=dtype)
        bns[row.name] = bn
        params[f"{row.name}.bn.gamma"] = bn.gamma
        params[f"{row.name}.bn.beta"] = bn.beta
    rng = np.random.Generator(np.random.PCG64(children[-1]))
    cin, classes = fc_shape
    params["head.fc.w"] = Tensor(
        rng.normal(0.0, np.sqrt(2.0 / cin), size=(cin, classes)).astype(dtype),
        requires_grad=True)
    params["head.fc.b"] = Tensor(np.zeros(classes, dtype=dtype), requires_grad=True)
    return Network(spec=spec, params=params, bns=bns, conv_rows=rows, dtype=dtype)


def _shallow_like(name, kind, input_shape, classes, stem_out, plan,
                  stem_kernel=3, stem_stride=1, stem_pool=None,
                  surrogate=SurrogateKind.APPROX_SIGN2):
    blocks = []
    prev = stem_out
    for cout, stride in plan:
        blocks.append(BlockSpec(kind, prev, cout, stride))
        prev = cout
    return NetworkSpec(name, input_shape, classes,
                       StemSpec(input_shape[0], stem_out, stem_kernel, stem_stride,
                                stem_pool),
                       tuple(blocks), surrogate=surrogate)


def _pairs_to_res2(plan):
    """Collapse a per-conv plan into per-block (2 convs) plan; the first conv
    of each pair carries the stride/width change."""
    if len(plan) % 2:
        raise SpecError("resnet_2layer plan needs an even conv count")
    out = []
    for i in range(0, len(plan), 2):
        (c1, s1), (c2, s2) = plan[i], plan[i + 1]
        if c1 != c2 or s2 != 1:
            raise SpecError("pair plan must be (width, s), (width, 1)")
        out.append((c1, s1))
    return out


def _bottleneck(name, input_shape, classes, stem_out, stages, stem_kernel=3,
                stem_stride=1, stem_pool=None):
    blocks = []
    prev = stem_out
    for mid, cout, n_blocks, stride in stages:
        for j in range(n_blocks):
            blocks.append(BlockSpec("bireal_bottleneck", prev, cout,
                                    stride if j == 0 else 1, mid))
            prev = cout
    return NetworkSpec(name, input_shape, classes,
                       StemSpec(input_shape[0], stem_out, stem_kernel, stem_stride,
                                stem_pool), tuple(blocks))


_DESK_PLAN = [(16, 1), (16, 1), (16, 1), (16, 1),
              (32, 2), (32, 1),
              (64, 2), (64, 1), (64, 1), (64, 1)]
_DESK_PLAN_NARROW = [(8, 1), (8, 1), (8, 1), (8, 1),
                     (16, 2), (16, 1),
                     (32, 2), (32, 1), (32, 1), (32, 1)]
_IMAGENET18_PLAN = ([(64, 1)] * 4 + [(128, 2)] + [(128, 1)] * 3
                    + [(256, 2)] + [(256, 1)] * 3 + [(512, 2)] + [(512, 1)] * 3)
_IMAGENET34_PLAN = ([(64, 1)] * 6 + [(128, 2)] + [(128, 1)] * 7
                    + [(256, 2)] + [(256, 1)] * 11 + [(512, 2)] + [(512, 1)] * 5)


def _registry():
    mnist = (1, 28, 28)
    cifar = (3, 32, 32)
    imagenet = (3, 224, 224)
    specs = [
        _shallow_like("bireal10_mnist", "bireal_shallow", mnist, 10, 16, _DESK_PLAN),
        _shallow_like("resnet10_mnist", "resnet_2layer", mnist, 10, 16,
                      _pairs_to_res2(_DESK_PLAN)),
        _shallow_like("plain10_mnist", "plain", mnist, 10, 16, _DESK_PLAN),
        _shallow_like("bireal10_mnist_narrow", "bireal_shallow", mnist, 10, 8,
                      _DESK_PLAN_NARROW),
        _shallow_like("resnet10_mnist_narrow", "resnet_2layer", mnist, 10, 8,
                      _pairs_to_res2(_DESK_PLAN_NARROW)),
        _shallow_like("plain10_mnist_narrow", "plain", mnist, 10, 8,
                      _DESK_PLAN_NARROW),
        _shallow_like("bireal10_cifar", "bireal_shallow", cifar, 10, 16, _DESK_PLAN),
        _bottleneck("bottleneck6_mnist", mnist, 10, 16,
                    [(8, 32, 2, 1), (16, 64, 2, 2), (32, 128, 2, 2)]),
        _shallow_like("bireal18_imagenet", "bireal_shallow", imagenet, 1000, 64,
                      _IMAGENET18_PLAN, stem_kernel=7, stem_stride=2,
                      stem_pool=(3, 2, 1)),
        _shallow_like("bireal34_imagenet", "bireal_shallow", imagenet, 1000, 64,
                      _IMAGENET34_PLAN, stem_kernel=7, stem_stride=2,
                      stem_pool=(3, 2, 1)),
        _shallow_like("resnet18_imagenet", "resnet_2layer", imagenet, 1000, 64,
                      _pairs_to_res2(_IMAGENET18_PLAN), stem_kernel=7, stem_stride=2,
                      stem_pool=(3, 2, 1)),
        _bottleneck("bireal50_imagenet", imagenet, 1000, 64,
                    [(64, 256, 3, 1), (128, 512, 4, 2),
                     (256, 1024, 6, 2), (512, 2048, 3, 2)],
                    stem_kernel=7, stem_stride=2, stem_pool=(3, 2, 1)),
    ]
    return {s.name: s for s in specs}


SPEC_REGISTRY = _registry()


def get_spec(name: str) -> NetworkSpec:
    try:
        return SPEC_REGISTRY[name]
    except KeyError:
        raise SpecError(f"unknown network spec {name!r}; known: "
                        f"{', '.join(sorted(SPEC_REGISTRY))}") from None
