"""Dense real tensors, bit-packed binary tensors, and exact binary convolution.

Value types:

* ``RealTensor``: a plain ``numpy.ndarray`` of floats. Feature maps are NCHW,
  conv kernels are OIHW. float64 in oracle paths, float32 in training paths.
* ``BitTensor``: sign-packed binary tensor. Bit 1 encodes +1, bit 0 encodes -1.
  Bits are packed in row-major (C-order) element order, little-endian within
  each 64-bit word; slack bits past the last element are zero (canonical form),
  so word-level equality is logical equality.
* ``IntTensor``: a ``numpy.ndarray`` of int32, the accumulator output of
  binary convolution. Every entry v satisfies |v| <= n and v == n (mod 2)
  where n is the number of valid products feeding that entry.

The binary kernels are bit-exact with float convolution on +/-1 data: a +/-1
dot product of length n equals ``2*popcount(XNOR(a, w)) - n``, computed here
as ``n - 2*popcount(XOR(a, w))`` so zero slack bits need no masking.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import prod

import numpy as np

from .errors import DimensionError

WORD_BITS = 64

RealTensor = np.ndarray
IntTensor = np.ndarray


@dataclass(frozen=True, eq=False)
class BitTensor:
    shape: tuple[int, ...]
    words: np.ndarray  # flat uint64, canonical zero slack

    @property
    def size(self) -> int:
        return prod(self.shape)

    def __eq__(self, other) -> bool:
        if not isinstance(other, BitTensor):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.words, other.words)

    def __repr__(self) -> str:
        return f"BitTensor(shape={self.shape}, words={len(self.words)})"


def _pack_flat_bits(flags: np.ndarray) -> np.ndarray:
    """Pack a flat boolean array into canonical little-endian uint64 words."""
    n = flags.size
    n_words = -(-n // WORD_BITS) if n else 0
    packed = np.packbits(flags.astype(np.uint8), bitorder="little")
    buf = np.zeros(n_words * 8, dtype=np.uint8)
    buf[: packed.size] = packed
    return buf.view("<u8").astype(np.uint64, copy=False)


def _unpack_flat_bits(words: np.ndarray, n: int) -> np.ndarray:
    if n == 0:
        return np.zeros(0, dtype=bool)
    as_bytes = words.astype("<u8", copy=False).view(np.uint8)
    return np.unpackbits(as_bytes, count=n, bitorder="little").astype(bool)


def sign_pack(x: RealTensor) -> BitTensor:
    """Binarize a real tensor: bit i is 1 iff x[i] >= 0 (sign(0) = +1)."""
    x = np.asarray(x)
    if not np.all(np.isfinite(x)):
        raise ValueError("sign_pack requires finite input")
    return BitTensor(tuple(x.shape), _pack_flat_bits((x >= 0).reshape(-1)))


def unpack(b: BitTensor, dtype=np.float64) -> RealTensor:
    """Expand a BitTensor to a +/-1.0 real tensor of the same shape."""
    bits = _unpack_flat_bits(b.words, b.size)
    return np.where(bits, 1.0, -1.0).astype(dtype).reshape(b.shape)


def is_canonical(b: BitTensor) -> bool:
    """True if word count and zero slack bits match the canonical form."""
    n = b.size
    if len(b.words) != (-(-n // WORD_BITS) if n else 0):
        return False
    if n % WORD_BITS and len(b.words):
        slack_mask = np.uint64(~np.uint64(0)) << np.uint64(n % WORD_BITS)
        return bool((b.words[-1] & slack_mask) == 0)
    return True


def xnor_popcount_dot(a: BitTensor, w: BitTensor) -> int:
    """Exact +/-1 dot product of two 1-D BitTensors via XNOR + popcount."""
    if len(a.shape) != 1 or len(w.shape) != 1:
        raise DimensionError("xnor_popcount_dot expects 1-D operands")
    if a.shape != w.shape:
        raise DimensionError(f"length mismatch: {a.shape} vs {w.shape}")
    n = a.size
    diff = int(np.bitwise_count(a.words ^ w.words).sum())
    return n - 2 * diff  # == 2*popcount(XNOR) - n over the n valid bits


@lru_cache(maxsize=256)
def valid_count_table(
    h: int, w: int, kh: int, kw: int, stride: int, pad: int
) -> np.ndarray:
    """Number of in-bounds kernel taps per output position (no channel factor)."""
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    rows = np.zeros(ho, dtype=np.int64)
    for oh in range(ho):
        top = oh * stride - pad
        rows[oh] = max(0, min(h, top + kh) - max(0, top))
    cols = np.zeros(wo, dtype=np.int64)
    for ow in range(wo):
        left = ow * stride - pad
        cols[ow] = max(0, min(w, left + kw) - max(0, left))
    table = rows[:, None] * cols[None, :]
    table.setflags(write=False)
    return table


def _conv_out_dims(h, w, kh, kw, stride, pad):
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    if ho <= 0 or wo <= 0:
        raise DimensionError(f"non-positive conv output dims ({ho}x{wo})")
    return ho, wo


def _pack_channel_last(bits_nchw: np.ndarray) -> np.ndarray:
    """(N,C,H,W) bools -> (N,H,W,words) uint64, channels packed per pixel."""
    n, c, h, w = bits_nchw.shape
    n_words = -(-c // WORD_BITS)
    rows = bits_nchw.transpose(0, 2, 3, 1).reshape(-1, c)
    packed = np.packbits(rows.astype(np.uint8), axis=1, bitorder="little")
    buf = np.zeros((rows.shape[0], n_words * 8), dtype=np.uint8)
    buf[:, : packed.shape[1]] = packed
    return buf.view("<u8").astype(np.uint64, copy=False).reshape(n, h, w, n_words)


def binary_conv2d(
    inp: BitTensor, weight: BitTensor, stride: int = 1, pad: int = 0
) -> IntTensor:
    """Exact binary cross-correlation: NCHW input, OIHW kernel, IntTensor out.

    Out-of-bounds taps contribute 0, matching zero-padded float convolution
    on +/-1 data exactly.
    """
    if len(inp.shape) != 4 or len(weight.shape) != 4:
        raise DimensionError("binary_conv2d expects NCHW input and OIHW weight")
    n, c, h, w = inp.shape
    o, ci, kh, kw = weight.shape
    if ci != c:
        raise DimensionError(f"channel mismatch: input {c}, weight {ci}")
    ho, wo = _conv_out_dims(h, w, kh, kw, stride, pad)

    x_words = _pack_channel_last(_unpack_flat_bits(inp.words, inp.size).reshape(inp.shape))
    w_flat = _unpack_flat_bits(weight.words, weight.size).reshape(weight.shape)
    w_words = _pack_channel_last(w_flat)  # OIHW with O as batch -> (O,KH,KW,words)

    acc = np.zeros((n, ho, wo, o), dtype=np.int32)
    for tkh in range(kh):
        oh_lo = max(0, -(-(pad - tkh) // stride))
        oh_hi = (h - 1 + pad - tkh) // stride
        oh_hi = min(ho - 1, oh_hi)
        if oh_hi < oh_lo:
            continue
        for tkw in range(kw):
            ow_lo = max(0, -(-(pad - tkw) // stride))
            ow_hi = min(wo - 1, (w - 1 + pad - tkw) // stride)
            if ow_hi < ow_lo:
                continue
            ih0 = oh_lo * stride + tkh - pad
            iw0 = ow_lo * stride + tkw - pad
            xs = x_words[
                :,
                ih0 : ih0 + (oh_hi - oh_lo) * stride + 1 : stride,
                iw0 : iw0 + (ow_hi - ow_lo) * stride + 1 : stride,
                :,
            ]
            diff = np.bitwise_count(xs[:, :, :, None, :] ^ w_words[None, None, None, :, tkh, tkw, :])
            diff = diff.sum(axis=-1, dtype=np.int32)
            acc[:, oh_lo : oh_hi + 1, ow_lo : ow_hi + 1, :] += c - 2 * diff
    return acc.transpose(0, 3, 1, 2)


def real_conv2d(
    inp: RealTensor, weight: RealTensor, stride: int = 1, pad: int = 0
) -> RealTensor:
    """Reference cross-correlation with zero padding.

    Accumulation order is fixed (row-major over kernel taps) so results are
    reproducible bit-for-bit; used as the oracle for the binary kernels and
    for real-valued stem/head layers in exported models.
    """
    inp = np.asarray(inp)
    weight = np.asarray(weight)
    if inp.ndim != 4 or weight.ndim != 4:
        raise DimensionError("real_conv2d expects NCHW input and OIHW weight")
    n, c, h, w = inp.shape
    o, ci, kh, kw = weight.shape
    if ci != c:
        raise DimensionError(f"channel mismatch: input {c}, weight {ci}")
    ho, wo = _conv_out_dims(h, w, kh, kw, stride, pad)
    xp = np.pad(inp, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else inp
    out = np.zeros((n, o, ho, wo), dtype=np.result_type(inp, weight))
    for tkh in range(kh):
        for tkw in range(kw):
            xs = xp[:, :, tkh : tkh + (ho - 1) * stride + 1 : stride,
                    tkw : tkw + (wo - 1) * stride + 1 : stride]
            out += np.einsum("nchw,oc->nohw", xs, weight[:, :, tkh, tkw])
    return out
