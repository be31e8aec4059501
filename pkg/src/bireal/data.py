"""Dataset ingestion: MNIST IDX and CIFAR-10 binary formats, train-split
normalization, and deterministic shuffled batching with optional
crop/flip augmentation."""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import DataError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}
CIFAR_TRAIN = [f"data_batch_{i}.bin" for i in range(1, 6)]
CIFAR_TEST = "test_batch.bin"
CIFAR_RECORD = 3073  # 1 label byte + 3*32*32 pixels


def read_idx_images(path: str) -> np.ndarray:
    """Big-endian IDX ubyte image file -> uint8 (N, H, W)."""
    try:
        with open(path, "rb") as fh:
            head = fh.read(16)
            if len(head) < 16:
                raise DataError(f"{path}: truncated IDX image header")
            magic, n, h, w = struct.unpack(">IIII", head)
            if magic != IDX_IMAGES_MAGIC:
                raise DataError(
                    f"{path}: bad IDX image magic 0x{magic:08x}, "
                    f"expected 0x{IDX_IMAGES_MAGIC:08x}")
            data = np.frombuffer(fh.read(), dtype=np.uint8)
    except FileNotFoundError:
        raise DataError(
            f"missing dataset file {path} (expected IDX ubyte images)") from None
    if data.size != n * h * w:
        raise DataError(f"{path}: expected {n * h * w} pixels, found {data.size}")
    return data.reshape(n, h, w)


def read_idx_labels(path: str) -> np.ndarray:
    try:
        with open(path, "rb") as fh:
            head = fh.read(8)
            if len(head) < 8:
                raise DataError(f"{path}: truncated IDX label header")
            magic, n = struct.unpack(">II", head)
            if magic != IDX_LABELS_MAGIC:
                raise DataError(
                    f"{path}: bad IDX label magic 0x{magic:08x}, "
                    f"expected 0x{IDX_LABELS_MAGIC:08x}")
            data = np.frombuffer(fh.read(), dtype=np.uint8)
    except FileNotFoundError:
        raise DataError(
            f"missing dataset file {path} (expected IDX ubyte labels)") from None
    if data.size != n:
        raise DataError(f"{path}: expected {n} labels, found {data.size}")
    return data


def write_idx_images(path: str, images: np.ndarray) -> None:
    images = np.ascontiguousarray(images, dtype=np.uint8)
    n, h, w = images.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, h, w))
        fh.write(images.tobytes())


def write_idx_labels(path: str, labels: np.ndarray) -> None:
    labels = np.ascontiguousarray(labels, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, labels.size))
        fh.write(labels.tobytes())


def read_cifar10_batch(path: str) -> tuple[np.ndarray, np.ndarray]:
    """3073-byte records -> (uint8 (N,3,32,32), uint8 labels)."""
    try:
        raw = np.fromfile(path, dtype=np.uint8)
    except FileNotFoundError:
        raise DataError(
            f"missing dataset file {path} (expected CIFAR-10 binary batch)") from None
    if raw.size == 0 or raw.size % CIFAR_RECORD:
        raise DataError(f"{path}: size {raw.size} not a multiple of {CIFAR_RECORD}")
    rec = raw.reshape(-1, CIFAR_RECORD)
    labels = rec[:, 0].copy()
    if labels.max(initial=0) > 9:
        raise DataError(f"{path}: label out of range 0..9")
    images = rec[:, 1:].reshape(-1, 3, 32, 32).copy()
    return images, labels


def write_cifar10_batch(path: str, images: np.ndarray, labels: np.ndarray) -> None:
    images = np.ascontiguousarray(images, dtype=np.uint8).reshape(len(labels), -1)
    rec = np.concatenate([np.asarray(labels, dtype=np.uint8)[:, None], images], axis=1)
    rec.tofile(path)


@dataclass
class Dataset:
    train_x: np.ndarray  # float32 normalized, NCHW
    train_y: np.ndarray  # int64
    test_x: np.ndarray
    test_y: np.ndarray
    mean: np.ndarray  # per channel, raw-pixel units
    std: np.ndarray

    @property
    def num_classes(self) -> int:
        return int(self.train_y.max()) + 1


def _normalize(train_u8, test_u8, data_dir):
    train = train_u8.astype(np.float32) / 255.0
    test = test_u8.astype(np.float32) / 255.0
    mean = train.mean(axis=(0, 2, 3))
    std = np.maximum(train.std(axis=(0, 2, 3)), 1e-6)
    norm_path = os.path.join(data_dir, "normalization.json")
    payload = {"mean": [float(v) for v in mean], "std": [float(v) for v in std]}
    if os.path.exists(norm_path):
        with open(norm_path) as fh:
            stored = json.load(fh)
        if not np.allclose(stored["mean"], payload["mean"], atol=1e-6) or \
           not np.allclose(stored["std"], payload["std"], atol=1e-6):
            raise DataError(f"{norm_path} disagrees with the training split stats")
    else:
        try:
            with open(norm_path, "w") as fh:
                json.dump(payload, fh)
        except OSError:
            pass  # read-only data dir; stats are recomputed deterministically
    train = (train - mean[None, :, None, None]) / std[None, :, None, None]
    test = (test - mean[None, :, None, None]) / std[None, :, None, None]
    return train, test, mean, std


def load_dataset(data_dir: str, fmt: str = "mnist_idx",
                 train_limit: int = 0, test_limit: int = 0) -> Dataset:
    """Load, validate and normalize a dataset directory.

    Limits take the first n records in stored order (deterministic)."""
    if fmt == "mnist_idx":
        tx = read_idx_images(os.path.join(data_dir, MNIST_FILES["train_images"]))
        ty = read_idx_labels(os.path.join(data_dir, MNIST_FILES["train_labels"]))
        ex = read_idx_images(os.path.join(data_dir, MNIST_FILES["test_images"]))
        ey = read_idx_labels(os.path.join(data_dir, MNIST_FILES["test_labels"]))
        if len(tx) != len(ty) or len(ex) != len(ey):
            raise DataError("image/label counts disagree")
        tx = tx[:, None, :, :]
        ex = ex[:, None, :, :]
    elif fmt == "cifar10_bin":
        parts = [read_cifar10_batch(os.path.join(data_dir, f)) for f in CIFAR_TRAIN]
        tx = np.concatenate([p[0] for p in parts])
        ty = np.concatenate([p[1] for p in parts])
        ex, ey = read_cifar10_batch(os.path.join(data_dir, CIFAR_TEST))
    else:
        raise DataError(f"unknown dataset format {fmt!r}")
    if train_limit:
        tx, ty = tx[:train_limit], ty[:train_limit]
    if test_limit:
        ex, ey = ex[:test_limit], ey[:test_limit]
    train, test, mean, std = _normalize(tx, ex, data_dir)
    return Dataset(train, ty.astype(np.int64), test, ey.astype(np.int64), mean, std)


def augment_batch(xb: np.ndarray, rng: np.random.Generator, mode: str,
                  crop_pad: int = 2) -> np.ndarray:
    """Random pad-and-crop shifts and/or horizontal flips, per sample."""
    if mode == "none":
        return xb
    n, _, h, w = xb.shape
    out = xb
    if mode in ("crop", "crop_flip"):
        p = crop_pad
        padded = np.pad(out, ((0, 0), (0, 0), (p, p), (p, p)))
        ys = rng.integers(0, 2 * p + 1, size=n)
        xs = rng.integers(0, 2 * p + 1, size=n)
        out = np.stack([padded[i, :, ys[i]:ys[i] + h, xs[i]:xs[i] + w]
                        for i in range(n)])
    if mode == "crop_flip":
        flips = rng.integers(0, 2, size=n).astype(bool)
        out = out.copy()
        out[flips] = out[flips, :, :, ::-1]
    return out


def batches(x: np.ndarray, y: np.ndarray, batch_size: int,
            rng: np.random.Generator | None = None, augment: str = "none",
            crop_pad: int = 2, drop_last: bool = True):
    """Shuffled minibatches; iteration order is a pure function of rng state."""
    n = len(x)
    order = rng.permutation(n) if rng is not None else np.arange(n)
    end = n - (n % batch_size) if drop_last else n
    for lo in range(0, end, batch_size):
        idx = order[lo:lo + batch_size]
        xb = x[idx]
        if augment != "none" and rng is not None:
            xb = augment_batch(xb, rng, augment, crop_pad)
        yield np.ascontiguousarray(xb), y[idx]
