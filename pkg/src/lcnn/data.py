"""Datasets: a synthetic texture generator and the raw on-disk sample format.

Raw format, one file per sample: 4 header bytes [channels, height, width,
reserved=0] (u8 each) followed by channels*height*width 8-bit pixels in
channel-major, row-major order.  Labels live in ``labels.txt`` next to the
samples: one ``<sample id> <class id>`` pair per line, sample id = file stem.
Pixels are normalized to [0, 1] on load.
"""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .errors import DataError


@dataclass
class Dataset:
    images: np.ndarray  # (N, c, h, w) float32 in [0, 1]
    labels: np.ndarray  # (N,) int64

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1 if self.labels.size else 0

    def __len__(self) -> int:
        return self.images.shape[0]


def _smooth_pattern(rng: np.random.Generator, c: int, h: int, w: int, waves: int = 4) -> np.ndarray:
    """A random low-frequency texture per channel, normalized to [0.15, 0.85]."""
    yy, xx = np.mgrid[0:h, 0:w] / max(h, w)
    img = np.zeros((c, h, w))
    for ch in range(c):
        for _ in range(waves):
            fy, fx = rng.uniform(-3, 3, size=2)
            phase = rng.uniform(0, 2 * np.pi)
            amp = rng.uniform(0.5, 1.0)
            img[ch] += amp * np.cos(2 * np.pi * (fx * xx + fy * yy) + phase)
        lo, hi = img[ch].min(), img[ch].max()
        img[ch] = (img[ch] - lo) / (hi - lo + 1e-9)
    return 0.15 + 0.7 * img


def class_patterns(num_classes: int, shape: tuple[int, int, int], seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    c, h, w = shape
    return np.stack([_smooth_pattern(rng, c, h, w) for _ in range(num_classes)])


def synthetic_samples(patterns: np.ndarray, labels: np.ndarray,
                      rng: np.random.Generator, noise: float) -> np.ndarray:
    """Noisy 8-bit renderings of class patterns (one per label)."""
    c, h, w = patterns.shape[1:]
    out = np.empty((labels.size, c, h, w), dtype=np.uint8)
    for i, cls in enumerate(labels):
        img = patterns[cls] + rng.normal(0.0, noise, size=(c, h, w))
        out[i] = np.clip(img * 255.0, 0, 255).round().astype(np.uint8)
    return out


def synthetic_splits(num_classes: int, train_per_class: int, test_per_class: int,
                     shape: tuple[int, int, int] = (3, 32, 32), seed: int = 0,
                     noise: float = 0.1) -> tuple[Dataset, Dataset]:
    """Deterministic train/test splits over per-class textures."""
    patterns = class_patterns(num_classes, shape, seed)
    rng = np.random.default_rng(seed + 1)
    tr_labels = np.repeat(np.arange(num_classes), train_per_class)
    te_labels = np.repeat(np.arange(num_classes), test_per_class)
    tr = synthetic_samples(patterns, tr_labels, rng, noise)
    te = synthetic_samples(patterns, te_labels, rng, noise)
    train = Dataset(tr.astype(np.float32) / 255.0, tr_labels.astype(np.int64))
    test = Dataset(te.astype(np.float32) / 255.0, te_labels.astype(np.int64))
    return train, test


# -- raw on-disk format --------------------------------------------------------


def write_raw_dataset(directory: str, images_u8: np.ndarray, labels: np.ndarray) -> None:
    os.makedirs(directory, exist_ok=True)
    n, c, h, w = images_u8.shape
    if max(c, h, w) > 255:
        raise DataError("raw format stores dims as single bytes (max 255)")
    lines = []
    for i in range(n):
        sid = f"sample_{i:06d}"
        header = bytes([c, h, w, 0])
        with open(os.path.join(directory, sid + ".bin"), "wb") as fh:
            fh.write(header)
            fh.write(images_u8[i].tobytes())
        lines.append(f"{sid} {int(labels[i])}")
    with open(os.path.join(directory, "labels.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_raw_dataset(directory: str) -> Dataset:
    index = os.path.join(directory, "labels.txt")
    if not os.path.isfile(index):
        raise DataError(f"no labels.txt in {directory}")
    entries = []
    with open(index) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise DataError(f"{index}:{lineno}: expected '<sample id> <class id>'")
            entries.append((parts[0], int(parts[1])))
    if not entries:
        raise DataError(f"{index} lists no samples")
    images = []
    labels = []
    dims = None
    for sid, cls in entries:
        path = os.path.join(directory, sid + ".bin")
        try:
            raw = open(path, "rb").read()
        except OSError as exc:
            raise DataError(f"cannot read sample {sid}: {exc}") from exc
        if len(raw) < 4:
            raise DataError(f"sample {sid}: truncated header")
        c, h, w, reserved = raw[0], raw[1], raw[2], raw[3]
        if reserved != 0:
            raise DataError(f"sample {sid}: bad reserved header byte {reserved}")
        if dims is None:
            dims = (c, h, w)
        elif dims != (c, h, w):
            raise DataError(f"sample {sid}: dims {(c, h, w)} differ from {dims}")
        body = np.frombuffer(raw, dtype=np.uint8, offset=4)
        if body.size != c * h * w:
            raise DataError(f"sample {sid}: expected {c * h * w} pixels, got {body.size}")
        images.append(body.reshape(c, h, w))
        labels.append(cls)
    labels = np.asarray(labels, dtype=np.int64)
    classes = np.unique(labels)
    if classes.min() != 0 or not np.array_equal(classes, np.arange(classes.size)):
        raise DataError(f"class ids must be dense in [0, num_classes), got {classes.tolist()}")
    images = np.stack(images).astype(np.float32) / 255.0
    return Dataset(images, labels)


# -- episodes -------------------------------------------------------------------


def make_episode(dataset: Dataset, shots_per_class: int, query_per_class: int,
                 seed: int):
    """Sample a support/query split with exactly shots_per_class per class."""
    from .transfer import FewShotEpisode

    rng = np.random.default_rng(seed)
    num_classes = dataset.num_classes
    sup_idx, qry_idx = [], []
    for cls in range(num_classes):
        pool = np.flatnonzero(dataset.labels == cls)
        need = shots_per_class + query_per_class
        if pool.size < need:
            raise DataError(f"class {cls} has {pool.size} samples, needs {need}")
        pick = rng.choice(pool, size=need, replace=False)
        sup_idx.extend(pick[:shots_per_class])
        qry_idx.extend(pick[shots_per_class:])
    sup_idx = np.asarray(sup_idx)
    qry_idx = np.asarray(qry_idx)
    return FewShotEpisode(
        novel_class_count=num_classes,
        shots_per_class=shots_per_class,
        support_x=dataset.images[sup_idx],
        support_y=dataset.labels[sup_idx],
        query_x=dataset.images[qry_idx],
        query_y=dataset.labels[qry_idx],
        resample_seed=seed,
    )
