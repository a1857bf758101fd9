"""Dataset ingestion and synthesis: IDX parsing, unit-interval scaling,
deterministic subsetting/batching, and Gaussian-blob generation for fast
tests.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    pass


@dataclass
class Dataset:
    images: np.ndarray   # (N, D) or (N, C, H, W), values in [0, 1]
    labels: np.ndarray   # (N,) integer class indices
    name: str = "dataset"
    normalization: str = "unit_interval"

    def __post_init__(self):
        if self.images.shape[0] != self.labels.shape[0]:
            raise ValueError("label count does not match image count")

    def __len__(self) -> int:
        return self.images.shape[0]

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1 if len(self) else 0


def _read_exact(fh, count: int, what: str) -> bytes:
    data = fh.read(count)
    if len(data) != count:
        raise IdxFormatError(f"truncated payload while reading {what}")
    return data


def load_idx(images_path: str, labels_path: str, name: str = "idx") -> Dataset:
    """Parse big-endian IDX image/label files; pixels scaled by 1/255."""
    with open(images_path, "rb") as fh:
        magic, n, rows, cols = struct.unpack(">IIII", _read_exact(fh, 16, "image header"))
        if magic != IMAGES_MAGIC:
            raise IdxFormatError(f"bad magic in image file: 0x{magic:08x}, want 0x{IMAGES_MAGIC:08x}")
        raw = _read_exact(fh, n * rows * cols, "image payload")
        images = np.frombuffer(raw, dtype=np.uint8).reshape(n, 1, rows, cols)
    with open(labels_path, "rb") as fh:
        magic, n_labels = struct.unpack(">II", _read_exact(fh, 8, "label header"))
        if magic != LABELS_MAGIC:
            raise IdxFormatError(f"bad magic in label file: 0x{magic:08x}, want 0x{LABELS_MAGIC:08x}")
        labels = np.frombuffer(_read_exact(fh, n_labels, "label payload"), dtype=np.uint8)
    if n != n_labels:
        raise IdxFormatError(f"count mismatch: {n} images but {n_labels} labels")
    return Dataset(images.astype(np.float64) / 255.0, labels.astype(np.int64), name=name)


def save_idx(ds: Dataset, images_path: str, labels_path: str) -> None:
    """Write the dataset back out as IDX; pixels quantized to 1/255 steps."""
    images = ds.images
    if images.ndim == 2:
        side = int(np.sqrt(images.shape[1]))
        images = images.reshape(len(ds), 1, side, side)
    n, _, rows, cols = images.shape
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IMAGES_MAGIC, n, rows, cols))
        fh.write(np.round(images * 255.0).astype(np.uint8).tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", LABELS_MAGIC, n))
        fh.write(ds.labels.astype(np.uint8).tobytes())


def synth_blobs(
    classes: int,
    per_class: int,
    dim: int,
    spread: float = 0.05,
    seed: int = 0,
    image_shape: tuple[int, int, int] | None = None,
) -> Dataset:
    """Gaussian clusters clipped to [0, 1]; bit-identical under a fixed seed."""
    if classes < 2:
        raise ValueError("need at least two classes")
    rng = np.random.default_rng(seed)
    centers = rng.uniform(0.2, 0.8, size=(classes, dim))
    images = np.empty((classes * per_class, dim))
    labels = np.empty(classes * per_class, dtype=np.int64)
    for c in range(classes):
        block = slice(c * per_class, (c + 1) * per_class)
        images[block] = centers[c] + spread * rng.standard_normal((per_class, dim))
        labels[block] = c
    images = np.clip(images, 0.0, 1.0)
    if image_shape is not None:
        images = images.reshape((classes * per_class,) + tuple(image_shape))
    return Dataset(images, labels, name="blobs")


def subset_and_batch(ds: Dataset, n: int, batch_size: int, seed: int = 0):
    """Yield (images, labels) over a shuffled n-subset; last partial batch kept."""
    if n > len(ds):
        raise ValueError(f"requested subset of {n} from dataset of {len(ds)}")
    order = np.random.default_rng(seed).permutation(len(ds))[:n]
    for lo in range(0, n, batch_size):
        idx = order[lo : lo + batch_size]
        yield ds.images[idx], ds.labels[idx]


def take_subset(ds: Dataset, n: int, seed: int = 0) -> Dataset:
    """Deterministic shuffled subset as a new dataset."""
    if n > len(ds):
        raise ValueError(f"requested subset of {n} from dataset of {len(ds)}")
    order = np.random.default_rng(seed).permutation(len(ds))[:n]
    return Dataset(ds.images[order], ds.labels[order], name=ds.name, normalization=ds.normalization)
