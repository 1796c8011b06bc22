"""Datasets: IDX (MNIST) parsing, synthetic blobs and random-label corruption."""

import gzip
import os
import struct
from dataclasses import dataclass, field, replace

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


class IdxFormatError(ValueError):
    pass


class IdxLengthError(IdxFormatError):
    pass


class IdxConsistencyError(IdxFormatError):
    pass


@dataclass(frozen=True)
class Corruption:
    ratio: float
    seed: int


@dataclass(frozen=True)
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    corruption: Corruption = None
    # labels before corruption, kept so the corrupted fraction can be audited
    clean_labels: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if len(self.features) != len(self.labels):
            raise ValueError(f"{len(self.features)} feature rows but {len(self.labels)} labels")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError(f"labels outside [0, {self.num_classes})")

    def __len__(self):
        return len(self.labels)

    def __getitem__(self, idx):
        """Row subset; keeps each feature paired with its label."""
        idx = np.arange(len(self))[idx]
        return replace(
            self,
            features=self.features[idx],
            labels=self.labels[idx],
            clean_labels=None if self.clean_labels is None else self.clean_labels[idx],
        )

    def batches(self, batch_size, order=None):
        order = np.arange(len(self)) if order is None else order
        for start in range(0, len(order), batch_size):
            idx = order[start : start + batch_size]
            yield self.features[idx], self.labels[idx]


def _read(stream):
    data = stream.read() if hasattr(stream, "read") else bytes(stream)
    if data[:2] == b"\x1f\x8b":
        data = gzip.decompress(data)
    return data


def _header(data, expected_magic, ndims, what):
    if len(data) < 4:
        raise IdxLengthError(f"{what} stream shorter than its magic number")
    (magic,) = struct.unpack(">I", data[:4])
    if magic != expected_magic:
        raise IdxFormatError(f"{what} magic is 0x{magic:08X}, expected 0x{expected_magic:08X}")
    end = 4 + 4 * ndims
    if len(data) < end:
        raise IdxLengthError(f"{what} header truncated")
    dims = struct.unpack(f">{ndims}I", data[4:end])
    size = int(np.prod(dims))
    if len(data) - end < size:
        raise IdxLengthError(f"{what} payload has {len(data) - end} bytes, header promises {size}")
    return dims, np.frombuffer(data, dtype=np.uint8, count=size, offset=end).reshape(dims)


def parse_idx(image_bytes, label_bytes, num_classes=None) -> LabeledDataset:
    """Parse an IDX image stream and label stream (bytes or file objects).

    Gzip-compressed streams are decompressed transparently. Pixels are scaled
    to [0, 1]; ``num_classes`` defaults to ``max(label) + 1``.
    """
    _, images = _header(_read(image_bytes), IDX_IMAGES_MAGIC, 3, "image")
    _, labels = _header(_read(label_bytes), IDX_LABELS_MAGIC, 1, "label")
    if len(images) != len(labels):
        raise IdxConsistencyError(f"{len(images)} images but {len(labels)} labels")
    labels = labels.astype(np.int64)
    k = num_classes if num_classes is not None else (int(labels.max()) + 1 if len(labels) else 0)
    return LabeledDataset(images.astype(np.float64) / 255.0, labels, k)


def write_idx(features, labels):
    """Serialize uint8-valued images ``(N, rows, cols)`` and labels to IDX bytes."""
    images = np.asarray(features, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    img = struct.pack(">4I", IDX_IMAGES_MAGIC, *images.shape) + images.tobytes()
    lab = struct.pack(">2I", IDX_LABELS_MAGIC, len(labels)) + labels.tobytes()
    return img, lab


def resolve_data_dir(path=None):
    path = path or os.environ.get("SHARPNORM_DATA")
    if not path:
        raise FileNotFoundError("no data directory given and SHARPNORM_DATA is unset")
    return path


def _open_first(directory, stem):
    for name in (stem, stem + ".gz"):
        candidate = os.path.join(directory, name)
        if os.path.exists(candidate):
            with open(candidate, "rb") as f:
                return f.read()
    raise FileNotFoundError(f"{stem}[.gz] not found in {directory}")


def load_mnist(directory=None, split="train") -> LabeledDataset:
    directory = resolve_data_dir(directory)
    images, labels = MNIST_FILES[split]
    return parse_idx(_open_first(directory, images), _open_first(directory, labels), num_classes=10)


def subset(ds: LabeledDataset, size, seed) -> LabeledDataset:
    """First ``size`` samples after a seeded shuffle."""
    order = np.random.default_rng(seed).permutation(len(ds))
    return ds[np.sort(order[:size])]


def synth_blobs(num_classes, per_class, dim, spread, seed) -> LabeledDataset:
    """Gaussian clusters around seeded unit-scale centers."""
    if num_classes < 2 or per_class < 1 or dim < 1:
        raise ValueError("need num_classes >= 2, per_class >= 1 and dim >= 1")
    if spread < 0:
        raise ValueError("spread must be non-negative")
    rng = np.random.default_rng(seed)
    centers = rng.standard_normal((num_classes, dim))
    labels = np.repeat(np.arange(num_classes), per_class)
    features = centers[labels] + spread * rng.standard_normal((len(labels), dim))
    return LabeledDataset(features, labels, num_classes)


def corrupt_labels(ds: LabeledDataset, ratio, seed) -> LabeledDataset:
    """Resample round(ratio * N) labels, chosen without replacement, uniformly over all classes."""
    if not 0.0 <= ratio <= 1.0:
        raise ValueError(f"corruption ratio {ratio} outside [0, 1]")
    n = len(ds)
    rng = np.random.default_rng(seed)
    count = int(np.floor(ratio * n + 0.5))
    chosen = rng.choice(n, size=count, replace=False)
    labels = ds.labels.copy()
    labels[chosen] = rng.integers(0, ds.num_classes, size=count)
    clean = ds.labels if ds.clean_labels is None else ds.clean_labels
    return replace(ds, labels=labels, corruption=Corruption(float(ratio), int(seed)), clean_labels=clean)


def digits_dataset():
    """scikit-learn's bundled 8x8 digits, scaled to [0, 1]; an offline MNIST stand-in."""
    from sklearn.datasets import load_digits

    bunch = load_digits()
    return LabeledDataset(bunch.images / 16.0, bunch.target.astype(np.int64), 10)
