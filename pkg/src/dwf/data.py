"""Dataset ingestion: IDX image/label files (MNIST family) and synthetic problems.

IDX files are big-endian: a 4-byte magic (0x00000803 for rank-3 ubyte images,
0x00000801 for rank-1 ubyte labels), one 4-byte length per dimension, then
the payload. Gzip-compressed files are detected by their magic bytes and
decompressed transparently.
"""

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray  # samples x features, float64
    labels: np.ndarray  # int64 classes or float64 regression targets
    split: str = ""

    def __post_init__(self):
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise DataError(
                f"{self.inputs.shape[0]} inputs vs {self.labels.shape[0]} labels"
            )

    def __len__(self):
        return self.inputs.shape[0]

    def subset(self, idx, split=None):
        return Dataset(self.inputs[idx], self.labels[idx], split or self.split)


def _read_bytes(path):
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _parse_idx(raw, expect_magic, path):
    if len(raw) < 4:
        raise DataError(f"{path}: too short for an IDX header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expect_magic:
        raise DataError(f"{path}: magic 0x{magic:08x}, expected 0x{expect_magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise DataError(f"{path}: truncated dimension header")
    dims = struct.unpack(">" + "I" * ndim, raw[4:header])
    count = int(np.prod(dims))
    if len(raw) - header != count:
        raise DataError(
            f"{path}: payload {len(raw) - header} bytes, header promises {count}"
        )
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)


def load_idx(images_path, labels_path, split=""):
    """Parse an images/labels IDX pair into a Dataset with pixels in [0, 1]."""
    images = _parse_idx(_read_bytes(images_path), IMAGES_MAGIC, images_path)
    labels = _parse_idx(_read_bytes(labels_path), LABELS_MAGIC, labels_path)
    if images.shape[0] != labels.shape[0]:
        raise DataError(
            f"{images.shape[0]} images vs {labels.shape[0]} labels"
        )
    flat = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return Dataset(flat, labels.astype(np.int64), split)


def write_idx_images(path, images):
    """Inverse of the images parser, for fixtures. Expects uint8 (n, rows, cols)."""
    images = np.ascontiguousarray(images, dtype=np.uint8)
    if images.ndim != 3:
        raise DataError(f"images must be rank 3, got {images.ndim}")
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", IMAGES_MAGIC, *images.shape))
        fh.write(images.tobytes())


def write_idx_labels(path, labels):
    labels = np.ascontiguousarray(labels, dtype=np.uint8)
    if labels.ndim != 1:
        raise DataError(f"labels must be rank 1, got {labels.ndim}")
    with open(path, "wb") as fh:
        fh.write(struct.pack(">II", LABELS_MAGIC, labels.shape[0]))
        fh.write(labels.tobytes())


def _resolve(data_dir, name):
    base = Path(data_dir)
    for candidate in (base / name, base / (name + ".gz")):
        if candidate.exists():
            return candidate
    raise DataError(f"{name}[.gz] not found under {data_dir}")


def load_mnist(data_dir, split="train"):
    if split not in MNIST_FILES:
        raise ConfigError(f"split must be one of {sorted(MNIST_FILES)}, got {split!r}")
    images, labels = MNIST_FILES[split]
    return load_idx(_resolve(data_dir, images), _resolve(data_dir, labels), split)


def synth_sparse_regression(n, p, k_nonzero, noise_sigma, rng):
    """Random design X with a k-sparse ground truth; returns (Dataset, w*).

    Nonzero coefficients have magnitude in [0.5, 1.5] with random signs so
    the support is well separated from zero.
    """
    if k_nonzero > p:
        raise ConfigError(f"k_nonzero {k_nonzero} exceeds p {p}")
    X = rng.standard_normal((int(n), int(p)))
    w = np.zeros(p)
    if k_nonzero:
        support = rng.choice(p, size=int(k_nonzero), replace=False)
        w[support] = rng.uniform(0.5, 1.5, int(k_nonzero)) * rng.rademacher(int(k_nonzero))
    y = X @ w + noise_sigma * rng.standard_normal(int(n))
    return Dataset(X, y, "synth"), w


def split_train_val(ds, val_fraction, rng):
    """Deterministic split: the last ceil(n * val_fraction) of a seeded permutation."""
    if not 0 <= val_fraction < 1:
        raise ConfigError(f"val_fraction must be in [0, 1), got {val_fraction}")
    n = len(ds)
    n_val = int(round(n * val_fraction))
    perm = rng.permutation(n)
    train = ds.subset(np.sort(perm[: n - n_val]), "train")
    val = ds.subset(np.sort(perm[n - n_val :]), "val")
    return train, val


def batch_indices(n, batch_size, rng):
    """One epoch of shuffled index batches; the last batch may be short."""
    if batch_size > n:
        raise ConfigError(f"batch_size {batch_size} exceeds {n} samples")
    if batch_size < 1:
        raise ConfigError("batch_size must be >= 1")
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def split_and_batch(ds, val_fraction, batch_size, shuffle_rng):
    """Split off a validation set and get a per-epoch batch iterator factory.

    The factory reshuffles from shuffle_rng on every call, so consecutive
    epochs see different orders while the whole pipeline stays seeded.
    """
    train, val = split_train_val(ds, val_fraction, shuffle_rng.child("split"))
    stream = shuffle_rng.child("batches")
    if batch_size > len(train):
        raise ConfigError(f"batch_size {batch_size} exceeds {len(train)} training samples")

    def epoch_batches():
        return batch_indices(len(train), batch_size, stream)

    return train, val, epoch_batches
