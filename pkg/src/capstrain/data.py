"""Dataset ingestion: big-endian IDX container parsing, pixel
normalization, deterministic shuffled batch streams and stratified
subsampling.

Shuffling uses the counter-based Philox generator keyed on (seed, epoch),
so every epoch's permutation is a pure function of those two integers and
identical across platforms.  Nothing here downloads data; files are read
from a user-supplied directory (see ``load_split``).  A deterministic
synthetic ten-class dataset is provided so the full training pipeline can
be exercised offline.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "IdxFormatError",
    "DatasetSplit",
    "parse_idx",
    "serialize_idx",
    "load_split",
    "normalize",
    "shuffled_batches",
    "ordered_batches",
    "subset",
    "synthetic_split",
    "SPLIT_FILES",
]

IMAGE_MAGIC = 0x00000803  # unsigned bytes, 3 dimensions
LABEL_MAGIC = 0x00000801  # unsigned bytes, 1 dimension

SPLIT_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


class IdxFormatError(ValueError):
    """Malformed IDX byte stream."""


@dataclass
class DatasetSplit:
    """Images and labels of one dataset split, kept as raw bytes."""

    images: np.ndarray  # uint8 [N, side, side]
    labels: np.ndarray  # uint8 [N]
    name: str

    def __post_init__(self):
        if self.images.ndim != 3:
            raise ValueError(f"images must be [N, H, W], got {self.images.shape}")
        if self.labels.shape != (self.images.shape[0],):
            raise ValueError("labels length must match image count")
        if self.labels.size and int(self.labels.max()) > 9:
            raise ValueError("labels must lie in [0, 10)")

    def __len__(self):
        return self.images.shape[0]


def parse_idx(blob: bytes) -> np.ndarray:
    """Decode an IDX byte stream into a uint8 array.

    Accepts the two magics used by the image/label files: 0x00000803
    (3-D images) and 0x00000801 (1-D labels).  Extents are 32-bit
    big-endian; the payload length must match their product exactly.
    """
    if len(blob) < 4:
        raise IdxFormatError("stream shorter than the 4-byte magic")
    magic = struct.unpack(">I", blob[:4])[0]
    if magic == IMAGE_MAGIC:
        ndim = 3
    elif magic == LABEL_MAGIC:
        ndim = 1
    else:
        raise IdxFormatError(f"unsupported magic 0x{magic:08x}")
    header_len = 4 + 4 * ndim
    if len(blob) < header_len:
        raise IdxFormatError("truncated extent header")
    extents = struct.unpack(f">{ndim}I", blob[4:header_len])
    count = 1
    for e in extents:
        count *= e
        if count > 2**40:
            raise IdxFormatError(f"extents {extents} overflow any plausible payload")
    payload = blob[header_len:]
    if len(payload) < count:
        raise IdxFormatError(f"truncated payload: need {count} bytes, have {len(payload)}")
    if len(payload) > count:
        raise IdxFormatError(f"trailing bytes: payload {len(payload)} exceeds extents product {count}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(extents).copy()


def serialize_idx(array) -> bytes:
    """Inverse of :func:`parse_idx` for 1-D and 3-D uint8 arrays."""
    arr = np.ascontiguousarray(array, dtype=np.uint8)
    if arr.ndim == 3:
        magic = IMAGE_MAGIC
    elif arr.ndim == 1:
        magic = LABEL_MAGIC
    else:
        raise IdxFormatError(f"only 1-D and 3-D arrays serialize, got ndim={arr.ndim}")
    header = struct.pack(">I", magic) + struct.pack(f">{arr.ndim}I", *arr.shape)
    return header + arr.tobytes()


def load_split(data_dir, dataset: str = "mnist", split: str = "train") -> DatasetSplit:
    """Read one split from the four standard uncompressed IDX files.

    Files are looked up in ``data_dir/dataset/`` when that directory
    exists, else directly in ``data_dir``.
    """
    if split not in SPLIT_FILES:
        raise ValueError(f"split must be 'train' or 'test', got {split!r}")
    base = Path(data_dir)
    if (base / dataset).is_dir():
        base = base / dataset
    image_file, label_file = SPLIT_FILES[split]
    for name in (image_file, label_file):
        if not (base / name).is_file():
            raise FileNotFoundError(f"missing dataset file {base / name}")
    images = parse_idx((base / image_file).read_bytes())
    labels = parse_idx((base / label_file).read_bytes())
    if labels.ndim != 1 or images.ndim != 3:
        raise IdxFormatError("image/label files swapped or malformed")
    return DatasetSplit(images=images, labels=labels, name=f"{dataset}-{split}")


def normalize(images, dtype=np.float64) -> np.ndarray:
    """Map byte pixels into [0, 1] by dividing by 255. No centering."""
    arr = images.images if isinstance(images, DatasetSplit) else images
    return np.asarray(arr, dtype=dtype) / dtype(255.0)


def _philox(seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=[np.uint64(seed), np.uint64(stream)]))


def epoch_permutation(n: int, seed: int, epoch: int) -> np.ndarray:
    """The training order for one epoch; a pure function of (seed, epoch)."""
    return _philox(seed, epoch).permutation(n)


def shuffled_batches(split: DatasetSplit, batch_size: int, seed: int, epoch: int, dtype=np.float64):
    """Yield (images [B,1,side,side] in [0,1], labels [B]) for one epoch.

    Every sample appears exactly once; the final batch may be smaller.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = epoch_permutation(len(split), seed, epoch)
    yield from _emit(split, order, batch_size, dtype)


def ordered_batches(split: DatasetSplit, batch_size: int, dtype=np.float64):
    """Batches in stored order; evaluation streams never shuffle."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    yield from _emit(split, np.arange(len(split)), batch_size, dtype)


def _emit(split, order, batch_size, dtype):
    side = split.images.shape[1]
    for start in range(0, len(order), batch_size):
        idx = order[start : start + batch_size]
        images = normalize(split.images[idx], dtype=dtype).reshape(len(idx), 1, side, side)
        yield images, split.labels[idx]


def subset(split: DatasetSplit, n: int, seed: int) -> DatasetSplit:
    """Class-stratified deterministic sample of ``n`` items.

    Quotas start at floor(n / 10) per class (the first n mod 10 classes get
    one extra); classes short on samples are capped and the deficit is
    redistributed round-robin, so n = len(split) returns every item.
    """
    if n > len(split):
        raise ValueError(f"requested {n} items from a split of {len(split)}")
    if n < 0:
        raise ValueError("n must be non-negative")
    counts = np.bincount(split.labels, minlength=10)
    quotas = np.full(10, n // 10, dtype=np.int64)
    quotas[: n % 10] += 1
    quotas = np.minimum(quotas, counts)
    # hand the shortfall to classes that still have unused samples
    deficit = n - int(quotas.sum())
    while deficit > 0:
        spare = np.flatnonzero(quotas < counts)
        for cls in spare:
            if deficit == 0:
                break
            quotas[cls] += 1
            deficit -= 1

    rng = _philox(seed, 2**32 + n)
    chosen = []
    for cls in range(10):
        pool = np.flatnonzero(split.labels == cls)
        if quotas[cls]:
            chosen.append(rng.choice(pool, size=int(quotas[cls]), replace=False))
    idx = np.sort(np.concatenate(chosen)) if chosen else np.empty(0, dtype=np.int64)
    return DatasetSplit(images=split.images[idx], labels=split.labels[idx], name=split.name)


def synthetic_split(n: int, seed: int, side: int = 28, name: str = "synthetic") -> DatasetSplit:
    """Deterministic ten-class image set for offline pipeline tests.

    Each class is an oriented Gaussian bar (orientation k * 18 degrees)
    with jittered center, amplitude and thickness, plus pixel noise.  Easy
    enough to learn quickly, structured enough that accuracy reflects real
    end-to-end behavior.
    """
    rng = _philox(seed, 2**33)
    labels = (np.arange(n) % 10).astype(np.uint8)
    rng.shuffle(labels)
    yy, xx = np.mgrid[0:side, 0:side].astype(np.float64)
    cx = (side - 1) / 2 + rng.uniform(-3, 3, size=n)
    cy = (side - 1) / 2 + rng.uniform(-3, 3, size=n)
    amp = rng.uniform(0.7, 1.0, size=n)
    length = rng.uniform(6.0, 8.0, size=n)
    width = rng.uniform(1.2, 2.0, size=n)
    theta = labels * (np.pi / 10.0)
    images = np.empty((n, side, side), dtype=np.uint8)
    for i in range(n):
        dx = xx - cx[i]
        dy = yy - cy[i]
        u = dx * np.cos(theta[i]) + dy * np.sin(theta[i])
        w = -dx * np.sin(theta[i]) + dy * np.cos(theta[i])
        bar = amp[i] * np.exp(-(u**2) / (2 * length[i] ** 2) - (w**2) / (2 * width[i] ** 2))
        noisy = np.clip(bar + rng.normal(0.0, 0.03, size=bar.shape), 0.0, 1.0)
        images[i] = np.round(noisy * 255).astype(np.uint8)
    return DatasetSplit(images=images, labels=labels, name=name)
