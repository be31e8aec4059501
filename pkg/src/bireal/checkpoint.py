"""Binary file formats.

Checkpoint ("BRNC"): magic, u16 version, 32-byte network-spec digest, phase
flags, epoch/step counters, PCG64 generator state, then named little-endian
array sections (latent weights as float64, BatchNorm statistics, optimizer
buffers), and a trailing CRC32 of everything before it. Loading validates
magic, version, CRC and (when given) the spec digest.

Exported model ("BRNX"): same framing; sections carry per-layer packed sign
words plus folded BatchNorm statistics for binarized convs, raw weights for
the real-valued stem/head/downsample layers, and the canonical network spec
text so inference is self-contained.
"""

from __future__ import annotations

import hashlib
import json
import struct
import zlib
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import ChecksumError, SpecError
from .network import NetworkSpec
from .tensors import BitTensor, WORD_BITS

MAGIC_CKPT = b"BRNC"
MAGIC_EXPORT = b"BRNX"
FORMAT_VERSION = 1

_DTYPES = {1: "<f8", 2: "<f4", 3: "<i8", 4: "<u8", 5: "u1"}
_DTYPE_CODES = {v: k for k, v in _DTYPES.items()}


def spec_digest(spec: NetworkSpec) -> bytes:
    """sha256 over the canonical JSON encoding of the network spec."""
    payload = asdict(spec)
    payload["surrogate"] = spec.surrogate.value
    return hashlib.sha256(
        json.dumps(payload, sort_keys=True).encode()).digest()


def content_digest(data: bytes) -> str:
    """Git-style content digest: sha256 over a 'blob <len>\\0' header + bytes."""
    h = hashlib.sha256()
    h.update(b"blob %d\0" % len(data))
    h.update(data)
    return h.hexdigest()


@dataclass
class Checkpoint:
    digest: bytes
    phase_index: int
    frozen: bool
    epoch: int
    step: int
    rng_state: dict
    arrays: dict[str, np.ndarray] = field(default_factory=dict)


def _pack_rng(state: dict) -> bytes:
    inner = state["state"]
    return (inner["state"].to_bytes(16, "little")
            + inner["inc"].to_bytes(16, "little")
            + struct.pack("<II", state.get("has_uint32", 0),
                          state.get("uinteger", 0)))


def _unpack_rng(raw: bytes) -> dict:
    return {
        "bit_generator": "PCG64",
        "state": {"state": int.from_bytes(raw[:16], "little"),
                  "inc": int.from_bytes(raw[16:32], "little")},
        "has_uint32": struct.unpack("<I", raw[32:36])[0],
        "uinteger": struct.unpack("<I", raw[36:40])[0],
    }


def _write_sections(parts: list[bytes], arrays: dict[str, np.ndarray]) -> None:
    parts.append(struct.pack("<I", len(arrays)))
    for name in sorted(arrays):
        arr = arrays[name]
        code = _DTYPE_CODES[_canon_dtype(arr)]
        payload = np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()
        name_b = name.encode()
        parts.append(struct.pack("<H", len(name_b)))
        parts.append(name_b)
        parts.append(struct.pack("<BB", code, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(payload)


def _canon_dtype(arr: np.ndarray) -> str:
    kind = arr.dtype.kind
    if kind == "f":
        return "<f8"
    if kind == "i":
        return "<i8"
    if kind == "u":
        return "u1" if arr.dtype.itemsize == 1 else "<u8"
    raise ValueError(f"unsupported array dtype {arr.dtype}")


def _read_sections(buf: memoryview, off: int) -> tuple[dict[str, np.ndarray], int]:
    (count,) = struct.unpack_from("<I", buf, off)
    off += 4
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", buf, off)
        off += 2
        name = bytes(buf[off:off + nlen]).decode()
        off += nlen
        code, ndim = struct.unpack_from("<BB", buf, off)
        off += 2
        shape = struct.unpack_from(f"<{ndim}I", buf, off)
        off += 4 * ndim
        dtype = np.dtype(_DTYPES[code])
        n_items = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        nbytes = n_items * dtype.itemsize
        arrays[name] = np.frombuffer(buf[off:off + nbytes], dtype=dtype).reshape(shape).copy()
        off += nbytes
    return arrays, off


def _frame(magic: bytes, header: bytes, arrays: dict[str, np.ndarray]) -> bytes:
    parts = [magic, struct.pack("<H", FORMAT_VERSION), header]
    _write_sections(parts, arrays)
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def _deframe(raw: bytes, magic: bytes) -> tuple[memoryview, int]:
    if len(raw) < 10 or raw[:4] != magic:
        raise ChecksumError(f"bad magic; expected {magic.decode()} file")
    (crc,) = struct.unpack_from("<I", raw, len(raw) - 4)
    if zlib.crc32(raw[:-4]) != crc:
        raise ChecksumError("CRC32 mismatch: file corrupted")
    (version,) = struct.unpack_from("<H", raw, 4)
    if version != FORMAT_VERSION:
        raise ChecksumError(f"unsupported format version {version}")
    return memoryview(raw)[:-4], 6


def save_checkpoint(path: str, ckpt: Checkpoint) -> None:
    header = (ckpt.digest
              + struct.pack("<HBB", ckpt.phase_index, int(ckpt.frozen), 0)
              + struct.pack("<IQ", ckpt.epoch, ckpt.step)
              + _pack_rng(ckpt.rng_state))
    with open(path, "wb") as fh:
        fh.write(_frame(MAGIC_CKPT, header, ckpt.arrays))


def load_checkpoint(path: str, expected_digest: bytes | None = None) -> Checkpoint:
    with open(path, "rb") as fh:
        raw = fh.read()
    buf, off = _deframe(raw, MAGIC_CKPT)
    digest = bytes(buf[off:off + 32])
    off += 32
    phase_index, frozen, _ = struct.unpack_from("<HBB", buf, off)
    off += 4
    epoch, step = struct.unpack_from("<IQ", buf, off)
    off += 12
    rng_state = _unpack_rng(bytes(buf[off:off + 40]))
    off += 40
    arrays, _ = _read_sections(buf, off)
    if expected_digest is not None and digest != expected_digest:
        raise SpecError("checkpoint was written for a different network spec")
    return Checkpoint(digest, phase_index, bool(frozen), epoch, step,
                      rng_state, arrays)


def save_export(path: str, digest: bytes, spec_text: str,
                arrays: dict[str, np.ndarray]) -> None:
    header = digest
    payload = dict(arrays)
    payload["spec_text"] = np.frombuffer(spec_text.encode(), dtype=np.uint8).copy()
    with open(path, "wb") as fh:
        fh.write(_frame(MAGIC_EXPORT, header, payload))


def load_export(path: str, expected_digest: bytes | None = None):
    with open(path, "rb") as fh:
        raw = fh.read()
    buf, off = _deframe(raw, MAGIC_EXPORT)
    digest = bytes(buf[off:off + 32])
    off += 32
    arrays, _ = _read_sections(buf, off)
    if expected_digest is not None and digest != expected_digest:
        raise SpecError("exported model was written for a different network spec")
    spec_text = arrays.pop("spec_text").tobytes().decode()
    return digest, spec_text, arrays


def pack_bits_section(bits: BitTensor) -> np.ndarray:
    """BitTensor words as a flat <u8 array; shape travels in the section dims."""
    return bits.words.astype("<u8", copy=False)


def bits_from_section(shape: tuple[int, ...], words: np.ndarray) -> BitTensor:
    n = int(np.prod(shape)) if shape else 0
    expect = -(-n // WORD_BITS) if n else 0
    if words.size != expect:
        raise ChecksumError("packed section length disagrees with its shape")
    return BitTensor(tuple(shape), words.astype(np.uint64, copy=False))
