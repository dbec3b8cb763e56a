"""Datasets: seeded Gaussian blobs, MNIST-style IDX files, equal partitions."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConsistencyError, FormatError, ValidationError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
BLOB_SPREAD = 0.15


@dataclass(frozen=True)
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray
    class_count: int

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if features.ndim != 2:
            raise ValidationError(f"features must be 2-D, got shape {features.shape}")
        if features.shape[0] != labels.shape[0]:
            raise ValidationError(f"{features.shape[0]} feature rows but {labels.shape[0]} labels")
        if labels.size and (labels.min() < 0 or labels.max() >= self.class_count):
            raise ValidationError(f"labels must lie in [0, {self.class_count})")
        features.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, indices) -> "LabeledDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(self.features[idx], self.labels[idx], self.class_count)


def generate_synthetic(class_count: int, dim: int, per_class: int, seed: int,
                       spread: float = BLOB_SPREAD) -> LabeledDataset:
    """Isotropic Gaussian blob per class around a random center in [0,1]^dim,
    clipped to the unit cube. Samples are grouped by class."""
    for name, value in (("class_count", class_count), ("dim", dim), ("per_class", per_class)):
        if int(value) < 1:
            raise ValidationError(f"{name} must be positive, got {value}")
    rng = np.random.default_rng(seed)
    centers = rng.uniform(0.0, 1.0, size=(class_count, dim))
    noise = rng.normal(0.0, spread, size=(class_count, per_class, dim))
    features = np.clip(centers[:, None, :] + noise, 0.0, 1.0).reshape(-1, dim)
    labels = np.repeat(np.arange(class_count), per_class)
    return LabeledDataset(features, labels, class_count)


def train_test_split(dataset: LabeledDataset, test_fraction: float,
                     seed: int) -> tuple[LabeledDataset, LabeledDataset]:
    if not 0.0 < test_fraction < 1.0:
        raise ValidationError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    perm = np.random.default_rng(seed).permutation(len(dataset))
    n_test = max(1, int(round(test_fraction * len(dataset))))
    return dataset.subset(np.sort(perm[n_test:])), dataset.subset(np.sort(perm[:n_test]))


def _read_idx(path, expected_magic: int) -> tuple[tuple[int, ...], bytes]:
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise FormatError(f"{path}: file too short for an IDX header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise FormatError(f"{path}: bad IDX magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header_len = 4 + 4 * ndim
    if len(raw) < header_len:
        raise FormatError(f"{path}: truncated IDX header")
    dims = struct.unpack(f">{ndim}I", raw[4:header_len])
    payload = raw[header_len:]
    expected = int(np.prod(dims, dtype=np.int64))
    if len(payload) != expected:
        raise FormatError(f"{path}: expected {expected} data bytes, found {len(payload)}")
    return dims, payload


def load_idx(images_path, labels_path, class_count: int | None = None) -> LabeledDataset:
    """Load an unsigned-byte IDX image/label pair; pixels are scaled to [0, 1]."""
    img_dims, img_bytes = _read_idx(images_path, IDX_IMAGES_MAGIC)
    lbl_dims, lbl_bytes = _read_idx(labels_path, IDX_LABELS_MAGIC)
    if img_dims[0] != lbl_dims[0]:
        raise ConsistencyError(
            f"image file holds {img_dims[0]} items but label file holds {lbl_dims[0]}"
        )
    n = img_dims[0]
    width = int(np.prod(img_dims[1:], dtype=np.int64))
    features = np.frombuffer(img_bytes, dtype=np.uint8).reshape(n, width) / 255.0
    labels = np.frombuffer(lbl_bytes, dtype=np.uint8).astype(np.int64)
    if class_count is None:
        class_count = int(labels.max()) + 1 if n else 1
    return LabeledDataset(features, labels, class_count)


def save_idx(dataset: LabeledDataset, images_path, labels_path,
             image_shape: tuple[int, ...] | None = None) -> None:
    """Write ``dataset`` as IDX. Features are quantized to bytes (x * 255)."""
    n = len(dataset)
    if image_shape is None:
        side = int(round(dataset.dim ** 0.5))
        image_shape = (side, side) if side * side == dataset.dim else (1, dataset.dim)
    if len(image_shape) != 2 or image_shape[0] * image_shape[1] != dataset.dim:
        raise ValidationError(f"image_shape {image_shape} does not hold {dataset.dim} features")
    pixels = np.rint(dataset.features * 255.0)
    if pixels.min(initial=0) < 0 or pixels.max(initial=0) > 255:
        raise ValidationError("features must lie in [0, 1] to be stored as IDX bytes")
    if dataset.class_count > 256:
        raise ValidationError("IDX labels are single bytes")
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, *image_shape))
        fh.write(pixels.astype(np.uint8).tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, n))
        fh.write(dataset.labels.astype(np.uint8).tobytes())


def partition_equal(dataset_or_size, ed_count: int, seed: int) -> list[np.ndarray]:
    """Seeded shuffle, then deal indices round-robin to ``ed_count`` shards."""
    if ed_count < 1:
        raise ValidationError(f"ed_count must be >= 1, got {ed_count}")
    n = dataset_or_size if isinstance(dataset_or_size, int) else len(dataset_or_size)
    perm = np.random.default_rng(seed).permutation(n)
    return [perm[i::ed_count] for i in range(ed_count)]
