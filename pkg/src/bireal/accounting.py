"""Static cost analysis of a network spec: memory bits, bit-operations,
and savings versus the full-precision counterpart.

Conventions (constants below, adjustable):

* memory: 1 bit per binarized conv weight, 32 bits per real parameter.
  Real parameters are the stem/downsample/head weights plus BatchNorm
  gamma, beta and the stored running mean/var (4 per channel).
* compute: one real multiply counts as 64 bit-operations, one binary
  multiply-accumulate counts as 1. Element-wise shortcut additions are
  counted as real ops; BatchNorm and pooling arithmetic is excluded.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .network import NetworkSpec, walk_network

BITS_PER_REAL_PARAM = 32
BITS_PER_REAL_OP = 64
BN_PARAMS_PER_CHANNEL = 4  # gamma, beta, running mean, running var


@dataclass(frozen=True)
class LayerCost:
    name: str
    kind: str  # conv | bn | fc | add
    binary: bool
    params: int
    memory_bits: int
    macs: int
    bops: int


@dataclass
class CostReport:
    spec_name: str
    rows: list[LayerCost] = field(default_factory=list)
    rows_full: list[LayerCost] = field(default_factory=list)

    @property
    def memory_bits(self) -> int:
        return sum(r.memory_bits for r in self.rows)

    @property
    def memory_bits_full(self) -> int:
        return sum(r.memory_bits for r in self.rows_full)

    @property
    def bops(self) -> int:
        return sum(r.bops for r in self.rows)

    @property
    def bops_full(self) -> int:
        return sum(r.bops for r in self.rows_full)

    @property
    def memory_saving_ratio(self) -> float:
        return self.memory_bits_full / self.memory_bits

    @property
    def speedup_ratio(self) -> float:
        return self.bops_full / self.bops

    @property
    def flops_equivalent(self) -> float:
        """BOPs expressed in real-op equivalents."""
        return self.bops / BITS_PER_REAL_OP

    def to_text(self) -> str:
        lines = [f"cost report: {self.spec_name}",
                 f"{'layer':<22}{'kind':<6}{'bin':<5}{'params':>12}{'Mbit':>10}"
                 f"{'MACs':>14}{'BOPs':>16}"]
        for r in self.rows:
            lines.append(f"{r.name:<22}{r.kind:<6}{str(r.binary):<5}"
                         f"{r.params:>12}{r.memory_bits / 1e6:>10.3f}"
                         f"{r.macs:>14}{r.bops:>16}")
        lines.append(
            f"total: memory {self.memory_bits / 1e6:.1f} Mbit "
            f"(full-precision {self.memory_bits_full / 1e6:.1f} Mbit, "
            f"saving {self.memory_saving_ratio:.2f}x)")
        lines.append(
            f"total: BOPs {self.bops:.3e} "
            f"(full-precision {self.bops_full:.3e}, "
            f"speedup {self.speedup_ratio:.2f}x)")
        return "\n".join(lines)

    def to_jsonl(self) -> str:
        out = [json.dumps({"layer": r.name, "kind": r.kind, "binary": r.binary,
                           "params": r.params, "memory_bits": r.memory_bits,
                           "macs": r.macs, "bops": r.bops}, sort_keys=True)
               for r in self.rows]
        out.append(json.dumps({
            "layer": "__total__", "memory_bits": self.memory_bits,
            "memory_bits_full": self.memory_bits_full,
            "memory_saving_ratio": self.memory_saving_ratio,
            "bops": self.bops, "bops_full": self.bops_full,
            "speedup_ratio": self.speedup_ratio}, sort_keys=True))
        return "\n".join(out)


def _layer_rows(spec: NetworkSpec, binarized: bool) -> list[LayerCost]:
    conv_rows, fc_shape, adds = walk_network(spec)
    rows: list[LayerCost] = []
    for r in conv_rows:
        params = r.cout * r.cin * r.kernel * r.kernel
        macs = params * r.hout * r.wout
        is_bin = binarized and r.binarizable
        rows.append(LayerCost(
            r.name, "conv", is_bin, params,
            params * (1 if is_bin else BITS_PER_REAL_PARAM),
            macs, macs * (1 if is_bin else BITS_PER_REAL_OP)))
        bn_params = BN_PARAMS_PER_CHANNEL * r.cout
        rows.append(LayerCost(f"{r.name}.bn", "bn", False, bn_params,
                              bn_params * BITS_PER_REAL_PARAM, 0, 0))
    cin, classes = fc_shape
    fc_params = cin * classes + classes
    fc_macs = cin * classes
    rows.append(LayerCost("head.fc", "fc", False, fc_params,
                          fc_params * BITS_PER_REAL_PARAM, fc_macs,
                          fc_macs * BITS_PER_REAL_OP))
    for name, entries in adds:
        rows.append(LayerCost(name, "add", False, 0, 0, entries,
                              entries * BITS_PER_REAL_OP))
    return rows


def cost_report(spec: NetworkSpec) -> CostReport:
    """Costs of the binarized network and its full-precision counterpart."""
    return CostReport(spec_name=spec.name,
                      rows=_layer_rows(spec, binarized=True),
                      rows_full=_layer_rows(spec, binarized=False))


def count_memory(spec: NetworkSpec) -> int:
    return cost_report(spec).memory_bits


def count_bops(spec: NetworkSpec) -> tuple[int, float]:
    rep = cost_report(spec)
    return rep.bops, rep.speedup_ratio
