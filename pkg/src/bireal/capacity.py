"""Representational-capability accounting for binary networks.

A binary entry takes 2 values. A binary conv output entry with n = kh*kw*c
inputs takes the n+1 values {-n, -n+2, ..., n}. BatchNorm is a one-to-one
map per value (count unchanged); a sign resets any count to 2; adding two
independent wires multiplies their per-entry counts. Per-map totals are
per-entry-count ** entry-count, so counts are kept in factored form plus
log2 rather than as raw integers.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import log2

SIGN_COUNT = 2


@dataclass(frozen=True)
class CapacityCount:
    """Per-entry value count as a product of factors, e.g. 289^2 * 577."""

    factors: tuple[tuple[int, int], ...]  # (base, exponent), base-sorted

    @classmethod
    def of(cls, base: int) -> "CapacityCount":
        if base < 1:
            raise ValueError("capacity counts are >= 1")
        return cls(((base, 1),))

    def __mul__(self, other: "CapacityCount") -> "CapacityCount":
        merged: dict[int, int] = {}
        for base, exp in self.factors + other.factors:
            merged[base] = merged.get(base, 0) + exp
        return CapacityCount(tuple(sorted(merged.items())))

    @property
    def value(self) -> int:
        out = 1
        for base, exp in self.factors:
            out *= base**exp
        return out

    @property
    def log2(self) -> float:
        return sum(exp * log2(base) for base, exp in self.factors)

    def map_log2(self, entries: int) -> float:
        """log2 of the whole-map count: per-entry count ** entries."""
        return entries * self.log2

    def __repr__(self) -> str:
        terms = " * ".join(
            f"{b}" if e == 1 else f"{b}^{e}" for b, e in self.factors)
        return terms or "1"


def capacity_per_entry(kernel_h: int, kernel_w: int, in_channels: int) -> CapacityCount:
    """Distinct values of one binary-conv output entry: n+1 for n = kh*kw*c."""
    if kernel_h < 1 or kernel_w < 1 or in_channels < 1:
        raise ValueError("kernel dims and channels must be positive")
    return CapacityCount.of(kernel_h * kernel_w * in_channels + 1)


def capacity_sign() -> CapacityCount:
    return CapacityCount.of(SIGN_COUNT)


def capacity_add(a: CapacityCount, b: CapacityCount) -> CapacityCount:
    """Shortcut addition: per-entry counts multiply."""
    return a * b


def capacity_block(block, upstream: CapacityCount) -> CapacityCount:
    """Per-entry count of a block's output given the count on its input wire.

    The sign at the head of every conv unit resets the main path to 2, so a
    fresh conv output contributes kh*kw*c+1 values; shortcut additions then
    multiply in the carried count. Plain blocks have no shortcut and emit
    the bare conv count.
    """
    kind = block.kind
    if kind == "plain":
        return capacity_per_entry(3, 3, block.in_channels)
    if kind == "bireal_shallow":
        return capacity_add(capacity_per_entry(3, 3, block.in_channels), upstream)
    if kind == "resnet_2layer":
        return capacity_add(capacity_per_entry(3, 3, block.out_channels), upstream)
    if kind == "bireal_bottleneck":
        return capacity_add(capacity_per_entry(1, 1, block.mid_channels), upstream)
    raise ValueError(f"unknown block kind: {kind!r}")


def shallow_chain_counts(in_channels: int, depth: int) -> list[CapacityCount]:
    """Per-entry counts after each shortcut addition in a chain of shallow
    blocks at constant width: [c, c^2, c^3, ...] for c = 9*channels + 1."""
    conv = capacity_per_entry(3, 3, in_channels)
    counts, acc = [], None
    for _ in range(depth):
        acc = conv if acc is None else capacity_add(conv, acc)
        counts.append(acc)
    return counts


def bottleneck_left_path_counts(in_channels: int, mid_channels: int,
                                depth: int) -> list[CapacityCount]:
    """Counts on the block-level shortcut wire across consecutive bottleneck
    blocks; each block multiplies in its 1x1 expand contribution."""
    expand = capacity_per_entry(1, 1, mid_channels)
    counts, acc = [], None
    for _ in range(depth):
        acc = expand if acc is None else capacity_add(expand, acc)
        counts.append(acc)
    return counts


def bottleneck_inner_path_counts(in_channels: int, mid_channels: int,
                                 steps: int) -> list[CapacityCount]:
    """Counts accumulated along the added inner-shortcut chain through the
    depth: the reduce output joins first, then each 3x3 output and the next
    block's reduce output alternate, so the factors run
    reduce, 3x3, reduce, 3x3, ... (e.g. 257, 257*577, 257*577*257)."""
    reduce_c = capacity_per_entry(1, 1, in_channels)
    conv3 = capacity_per_entry(3, 3, mid_channels)
    acc = reduce_c
    counts = [acc]
    for step in range(1, steps):
        acc = capacity_add(acc, conv3 if step % 2 == 1 else reduce_c)
        counts.append(acc)
    return counts
