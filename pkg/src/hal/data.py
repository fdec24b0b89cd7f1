"""Dataset loading (MNIST IDX, CIFAR-10 binary, raw tensor files), augmentation
and batching."""
import gzip
import json
import os
import struct
from dataclasses import dataclass, replace
from typing import NamedTuple, Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .checkpoint import load_tensors, save_tensors
from .errors import DataError, FormatError
from .superclass import NUM_CLASSES, onehot_batch

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_RECORD = 1 + 3 * 32 * 32


@dataclass
class LabeledDataset:
    images: np.ndarray            # [n, c, h, w] float32 in [0, 1]
    labels: np.ndarray            # [n] int64
    split: str = "train"
    superclasses: Optional[np.ndarray] = None
    channel_stats: Optional[tuple] = None   # (mean[c], std[c]) from the training split

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4:
            raise DataError(f"images must be [n,c,h,w], got {self.images.shape}")
        if self.images.shape[0] != self.labels.shape[0]:
            raise DataError(f"{self.images.shape[0]} images but {self.labels.shape[0]} labels")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= NUM_CLASSES):
            raise DataError(f"labels must lie in [0, {NUM_CLASSES})")
        if self.superclasses is not None and len(self.superclasses) != len(self.labels):
            raise DataError("superclass count differs from label count")

    def __len__(self):
        return self.labels.shape[0]

    @property
    def num_channels(self):
        return self.images.shape[1]

    def with_scheme(self, scheme):
        sc = None if scheme is None else scheme.assign_many(self.labels)
        return replace(self, superclasses=sc)

    def with_stats(self, stats):
        return replace(self, channel_stats=stats)

    def take(self, index):
        index = np.asarray(index)
        sc = None if self.superclasses is None else self.superclasses[index]
        return replace(self, images=self.images[index], labels=self.labels[index], superclasses=sc)

    def subset_per_class(self, k):
        """The first ``k`` samples of every class, in file order."""
        keep = []
        for c in range(NUM_CLASSES):
            idx = np.flatnonzero(self.labels == c)
            if len(idx) < k:
                raise DataError(f"class {c} has only {len(idx)} samples, {k} requested")
            keep.append(idx[:k])
        return self.take(np.sort(np.concatenate(keep)))


# -- file formats -----------------------------------------------------------------

def _read_bytes(path):
    opener = gzip.open if str(path).endswith(".gz") else open
    try:
        with opener(path, "rb") as fh:
            return fh.read()
    except (OSError, EOFError) as exc:
        raise FormatError(f"{path}: {exc}") from exc


def _write_bytes(path, blob):
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "wb") as fh:
        fh.write(blob)


def read_idx(path, magic):
    blob = _read_bytes(path)
    if len(blob) < 8:
        raise FormatError(f"{path}: too short for an IDX header")
    (found,) = struct.unpack(">I", blob[:4])
    if found != magic:
        raise FormatError(f"{path}: magic {found:#010x}, expected {magic:#010x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(blob) < header:
        raise FormatError(f"{path}: truncated header")
    dims = struct.unpack(f">{ndim}I", blob[4:header])
    expected = header + int(np.prod(dims, dtype=np.int64))
    if len(blob) != expected:
        raise FormatError(f"{path}: {len(blob)} bytes, header implies {expected}")
    return np.frombuffer(blob, dtype=np.uint8, offset=header).reshape(dims)


def write_idx(path, array):
    array = np.asarray(array, dtype=np.uint8)
    magic = 0x00000800 | array.ndim
    header = struct.pack(">I", magic) + struct.pack(f">{array.ndim}I", *array.shape)
    _write_bytes(path, header + array.tobytes())


def load_mnist(images_path, labels_path, split="train"):
    pixels = read_idx(images_path, IDX_IMAGES_MAGIC)
    labels = read_idx(labels_path, IDX_LABELS_MAGIC)
    if pixels.shape[0] != labels.shape[0]:
        raise FormatError(f"{pixels.shape[0]} images vs {labels.shape[0]} labels")
    if labels.size and labels.max() >= NUM_CLASSES:
        raise FormatError(f"{labels_path}: label {labels.max()} out of range")
    images = (pixels.astype(np.float32) / 255.0)[:, None, :, :]
    return LabeledDataset(images=images, labels=labels.astype(np.int64), split=split)


def load_cifar10(batch_paths, split="train"):
    if isinstance(batch_paths, (str, os.PathLike)):
        batch_paths = [batch_paths]
    chunks = []
    for path in batch_paths:
        blob = _read_bytes(path)
        if len(blob) == 0 or len(blob) % CIFAR_RECORD:
            raise FormatError(f"{path}: length {len(blob)} is not a multiple of {CIFAR_RECORD}")
        chunks.append(np.frombuffer(blob, dtype=np.uint8).reshape(-1, CIFAR_RECORD))
    if not chunks:
        raise FormatError("no CIFAR-10 batch files given")
    records = np.concatenate(chunks)
    labels = records[:, 0].astype(np.int64)
    if labels.max() >= NUM_CLASSES:
        raise FormatError(f"CIFAR-10 label {labels.max()} out of range")
    images = records[:, 1:].reshape(-1, 3, 32, 32).astype(np.float32) / 255.0
    return LabeledDataset(images=images, labels=labels, split=split)


def write_cifar10(path, pixels, labels):
    """Write uint8 ``pixels`` [n,3,32,32] and labels as one binary batch file."""
    pixels = np.asarray(pixels, dtype=np.uint8).reshape(-1, 3 * 32 * 32)
    labels = np.asarray(labels, dtype=np.uint8).reshape(-1, 1)
    _write_bytes(path, np.concatenate([labels, pixels], axis=1).tobytes())


def load_raw(path, split="train"):
    """Dataset from a tensor file holding ``images`` [n,c,h,w] and ``labels`` [n]."""
    tensors = load_tensors(path)
    for key in ("images", "labels"):
        if key not in tensors:
            raise FormatError(f"{path}: missing tensor {key!r}")
    labels = tensors["labels"]
    if np.any(labels != np.round(labels)):
        raise FormatError(f"{path}: non-integer labels")
    return LabeledDataset(images=tensors["images"], labels=labels.astype(np.int64), split=split)


def save_raw(path, dataset):
    save_tensors(path, {"images": dataset.images, "labels": dataset.labels.astype(np.float32)})


# -- normalization and augmentation -------------------------------------------------

def compute_channel_stats(dataset):
    if dataset.split != "train":
        raise DataError("normalization statistics come from the training split only")
    x = dataset.images
    mean = x.mean(axis=(0, 2, 3), dtype=np.float64)
    std = x.std(axis=(0, 2, 3), dtype=np.float64)
    return mean, np.where(std > 0, std, 1.0)


def save_stats_json(path, stats):
    mean, std = stats
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"mean": [float(v) for v in mean], "std": [float(v) for v in std]}, fh, indent=2)
        fh.write("\n")


def load_stats_json(path):
    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    return np.asarray(obj["mean"]), np.asarray(obj["std"])


@dataclass(frozen=True)
class AugmentPolicy:
    pad: int = 4
    random_crop: bool = True
    horizontal_flip: bool = True
    normalize: bool = True

    @classmethod
    def test(cls, normalize=True):
        return cls(pad=0, random_crop=False, horizontal_flip=False, normalize=normalize)

    def check_split(self, split):
        if split != "train" and (self.random_crop or self.horizontal_flip):
            raise DataError("only normalization may be applied outside the training split")


def normalize(batch, stats):
    mean, std = stats
    shape = (1, -1, 1, 1)
    out = (batch - np.asarray(mean).reshape(shape)) / np.asarray(std).reshape(shape)
    return out.astype(np.float32)


def augment(batch, policy, rng, stats=None, offsets=None, flips=None):
    """Random pad-and-crop, horizontal flip, then per-channel normalization.

    ``offsets`` ([b, 2] crop corners in the padded frame) and ``flips`` ([b]
    bools) override the random draws when given.
    """
    b, c, h, w = batch.shape
    out = batch
    if policy.random_crop and policy.pad > 0:
        p = policy.pad
        if offsets is None:
            offsets = rng.integers(0, 2 * p + 1, (b, 2))
        offsets = np.asarray(offsets)
        padded = np.pad(batch, ((0, 0), (0, 0), (p, p), (p, p)))
        windows = sliding_window_view(padded, (h, w), axis=(2, 3))
        out = windows[np.arange(b), :, offsets[:, 0], offsets[:, 1]]
    if policy.horizontal_flip:
        if flips is None:
            flips = rng.bernoulli(0.5, b)
        flips = np.asarray(flips, dtype=bool)
        out = np.where(flips[:, None, None, None], out[..., ::-1], out)
    if policy.normalize:
        if stats is None:
            raise DataError("normalization requested without channel statistics")
        return normalize(out, stats)
    return np.ascontiguousarray(out, dtype=np.float32)


# -- batching ----------------------------------------------------------------------

class Batch(NamedTuple):
    images: np.ndarray
    onehot: Optional[np.ndarray]
    labels: np.ndarray
    index: np.ndarray


def batches(dataset, batch_size, shuffle=False, rng=None, num_superclasses=None):
    """Yield every sample exactly once; the final batch may be short."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    n = len(dataset)
    order = rng.permutation(n) if shuffle else np.arange(n)
    for start in range(0, n, batch_size):
        idx = order[start: start + batch_size]
        oh = None
        if dataset.superclasses is not None and num_superclasses:
            oh = onehot_batch(dataset.superclasses[idx], num_superclasses)
        yield Batch(dataset.images[idx], oh, dataset.labels[idx], idx)
