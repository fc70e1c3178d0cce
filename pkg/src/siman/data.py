"""Datasets: CIFAR-10 binary batches, synthetic Gaussian blobs, augmentation, CSV."""
from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import BadLabel, BadMagnitude, DatasetEmpty, InvalidArgs

CIFAR_RECORD = 3073
CIFAR_SHAPE = (3, 32, 32)
CIFAR_CLASSES = 10
CIFAR_TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
CIFAR_TEST_FILES = ("test_batch.bin",)
# widely used per-channel statistics of the CIFAR-10 training set
CIFAR_MEAN = np.array([0.4914, 0.4822, 0.4465])
CIFAR_STD = np.array([0.2470, 0.2435, 0.2616])

AUGMENT_PAD = 4


class Sample(NamedTuple):
    label: int
    pixels: np.ndarray


@dataclass
class Dataset:
    """Images (or vectors) with integer labels, kept as two aligned arrays."""

    images: np.ndarray
    labels: np.ndarray
    classes: int
    kind: str = "synth"

    def __len__(self):
        return int(self.labels.shape[0])

    def __getitem__(self, i) -> Sample:
        return Sample(int(self.labels[i]), self.images[i])

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.images[idx], self.labels[idx], self.classes, self.kind)

    @property
    def is_image(self) -> bool:
        return self.images.shape[1:] == CIFAR_SHAPE


def _cifar_files(path, split: str) -> list[Path]:
    p = Path(path)
    if p.is_dir():
        names = CIFAR_TRAIN_FILES if split == "train" else CIFAR_TEST_FILES
        for sub in (p, p / "cifar-10-batches-bin"):
            found = [sub / n for n in names if (sub / n).exists()]
            if found:
                return found
        raise FileNotFoundError(f"no CIFAR-10 {split} batches under {p}")
    return [p]


def read_cifar10_file(path) -> Dataset:
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size == 0 or raw.size % CIFAR_RECORD:
        raise BadMagnitude(f"{path}: {raw.size} bytes is not a multiple of {CIFAR_RECORD}")
    rec = raw.reshape(-1, CIFAR_RECORD)
    labels = rec[:, 0].astype(np.int64)
    if labels.max() >= CIFAR_CLASSES:
        raise BadLabel(f"{path}: label {int(labels.max())} out of range")
    images = rec[:, 1:].reshape((-1,) + CIFAR_SHAPE).astype(np.float64) / 255.0
    return Dataset(images, labels, CIFAR_CLASSES, "cifar10")


def load_cifar10(path, split: str = "train") -> Dataset:
    """Load CIFAR-10 binary batches from a file or a directory.

    A directory resolves to ``data_batch_{1..5}.bin`` (train) or
    ``test_batch.bin`` (test).  Pixels are scaled to [0, 1]; per-channel
    normalization is left to :func:`normalize_cifar`.
    """
    parts = [read_cifar10_file(f) for f in _cifar_files(path, split)]
    return Dataset(np.concatenate([d.images for d in parts]),
                   np.concatenate([d.labels for d in parts]), CIFAR_CLASSES, "cifar10")


def normalize_cifar(images: np.ndarray) -> np.ndarray:
    return (images - CIFAR_MEAN[:, None, None]) / CIFAR_STD[:, None, None]


def synth_blobs(classes: int, dim: int, per_class: int, separation: float, seed: int,
                shape: Sequence[int] | None = None) -> Dataset:
    """Isotropic unit-variance Gaussian blobs whose centers sit pairwise
    ``separation`` apart.

    Centers are ``separation / sqrt(2)`` times orthonormal vectors drawn from
    the seed.  ``shape`` optionally reshapes each sample, e.g. (3, 8, 8) for
    a convolutional model.  Samples come out grouped by class.
    """
    if classes < 2 or not separation > 0 or dim < classes or per_class < 0:
        raise InvalidArgs(
            f"need classes >= 2, dim >= classes, separation > 0 (got {classes}, {dim}, {separation})")
    if shape is not None and int(np.prod(shape)) != dim:
        raise InvalidArgs(f"shape {tuple(shape)} does not hold {dim} values")
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.normal(size=(dim, classes)))
    centers = q.T * (separation / np.sqrt(2.0))
    labels = np.repeat(np.arange(classes), per_class)
    x = centers[labels] + rng.normal(size=(labels.size, dim))
    if shape is not None:
        x = x.reshape((labels.size,) + tuple(shape))
    return Dataset(x, labels.astype(np.int64), classes, "synth")


def split(ds: Dataset, n_test: int, seed: int) -> tuple[Dataset, Dataset]:
    """Seeded shuffle, then the first ``len - n_test`` samples train."""
    if not 0 <= n_test <= len(ds):
        raise InvalidArgs(f"cannot hold out {n_test} of {len(ds)} samples")
    perm = np.random.default_rng(seed).permutation(len(ds))
    cut = len(ds) - n_test
    return ds.subset(perm[:cut]), ds.subset(perm[cut:])


def take_per_class(ds: Dataset, n: int, seed: int) -> Dataset:
    """Class-balanced subset of ``n`` samples (``n // classes`` each)."""
    rng = np.random.default_rng(seed)
    k = n // ds.classes
    idx = np.concatenate([rng.permutation(np.flatnonzero(ds.labels == c))[:k]
                          for c in range(ds.classes)])
    return ds.subset(np.sort(idx))


def crop_flip(image: np.ndarray, dy: int, dx: int, flip: bool, pad: int = AUGMENT_PAD) -> np.ndarray:
    """Zero-pad by ``pad``, crop back to the original size at (dy, dx), then
    optionally mirror horizontally.  (pad, pad) without flip is the identity."""
    c, h, w = image.shape
    padded = np.pad(image, ((0, 0), (pad, pad), (pad, pad)))
    out = padded[:, dy:dy + h, dx:dx + w]
    return out[:, :, ::-1].copy() if flip else out.copy()


def augment(sample: Sample, rng: np.random.Generator) -> Sample:
    """Random crop from the 4-padded image and a coin-flip mirror.

    Non-image samples pass through unchanged (and draw nothing).
    """
    px = sample.pixels
    if px.shape != CIFAR_SHAPE:
        return sample
    dy, dx = rng.integers(0, 2 * AUGMENT_PAD + 1, size=2)
    flip = bool(rng.random() < 0.5)
    return Sample(sample.label, crop_flip(px, int(dy), int(dx), flip))


def augment_batch(images: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Vectorized :func:`augment` over a (N, 3, 32, 32) batch."""
    n, c, h, w = images.shape
    p = AUGMENT_PAD
    offs = rng.integers(0, 2 * p + 1, size=(n, 2))
    flips = rng.random(n) < 0.5
    padded = np.pad(images, ((0, 0), (0, 0), (p, p), (p, p)))
    rows = offs[:, 0, None] + np.arange(h)[None, :]
    cols = offs[:, 1, None] + np.arange(w)[None, :]
    cols = np.where(flips[:, None], cols[:, ::-1], cols)
    return padded[np.arange(n)[:, None, None, None], np.arange(c)[None, :, None, None],
                  rows[:, None, :, None], cols[:, None, None, :]]


def batches(n: int, batch_size: int, rng: np.random.Generator) -> Iterable[np.ndarray]:
    if n == 0:
        raise DatasetEmpty("no samples to iterate")
    perm = rng.permutation(n)
    for s in range(0, n, batch_size):
        yield perm[s:s + batch_size]


def format_value(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    """UTF-8 CSV with a header row and ``\\n`` line endings."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([format_value(v) for v in row])


def csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([format_value(v) for v in row])
    return buf.getvalue()


def ensure_parent(path) -> None:
    parent = os.path.dirname(os.fspath(path))
    if parent:
        os.makedirs(parent, exist_ok=True)
