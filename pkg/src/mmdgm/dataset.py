"""Labelled image data: IDX files, a synthetic toy set, batching and masks."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .mathcore import RngStream

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


class DataFormatError(ValueError):
    pass


class DataConsistencyError(ValueError):
    pass


@dataclass(frozen=True)
class LabeledDataset:
    images: np.ndarray  # (N, D), values in [0, 1]
    labels: np.ndarray  # (N,), int64 in [0, M)
    n_classes: int
    side: int | None = None

    def __post_init__(self):
        images = np.ascontiguousarray(self.images, dtype=np.float64)
        labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if images.ndim != 2 or labels.ndim != 1 or images.shape[0] != labels.shape[0]:
            raise DataConsistencyError(f"images {images.shape} and labels {labels.shape} disagree")
        if images.shape[0] < 1:
            raise DataConsistencyError("dataset is empty")
        if images.min() < 0.0 or images.max() > 1.0:
            raise DataConsistencyError("pixel values must lie in [0, 1]")
        if labels.min() < 0 or labels.max() >= self.n_classes:
            raise DataConsistencyError(f"labels must lie in [0, {self.n_classes})")
        images.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "labels", labels)

    @property
    def n(self):
        return self.images.shape[0]

    @property
    def dim(self):
        return self.images.shape[1]

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return LabeledDataset(self.images[idx], self.labels[idx], self.n_classes, self.side)


@dataclass(frozen=True)
class MaskedImage:
    pixels: np.ndarray
    missing: np.ndarray  # bool, True = unknown


@dataclass(frozen=True)
class MiniBatch:
    indices: np.ndarray
    images: np.ndarray
    labels: np.ndarray


# ---------------------------------------------------------------- IDX files

def _read_exact(fh, n, path):
    buf = fh.read(n)
    if len(buf) != n:
        raise OSError(f"{path}: truncated file (wanted {n} bytes, got {len(buf)})")
    return buf


def read_idx_images(path):
    path = Path(path)
    with open(path, "rb") as fh:
        magic, count, rows, cols = struct.unpack(">IIII", _read_exact(fh, 16, path))
        if magic != IMAGE_MAGIC:
            raise DataFormatError(f"{path}: bad image magic 0x{magic:08x}, expected 0x{IMAGE_MAGIC:08x}")
        raw = _read_exact(fh, count * rows * cols, path)
    return np.frombuffer(raw, dtype=np.uint8).reshape(count, rows, cols)


def read_idx_labels(path):
    path = Path(path)
    with open(path, "rb") as fh:
        magic, count = struct.unpack(">II", _read_exact(fh, 8, path))
        if magic != LABEL_MAGIC:
            raise DataFormatError(f"{path}: bad label magic 0x{magic:08x}, expected 0x{LABEL_MAGIC:08x}")
        raw = _read_exact(fh, count, path)
    return np.frombuffer(raw, dtype=np.uint8)


def load_idx(image_path, label_path, n_classes=None):
    raw = read_idx_images(image_path)
    labels = read_idx_labels(label_path).astype(np.int64)
    if raw.shape[0] != labels.shape[0]:
        raise DataConsistencyError(
            f"{image_path} holds {raw.shape[0]} images but {label_path} holds {labels.shape[0]} labels"
        )
    if raw.shape[1] != raw.shape[2]:
        side = None
    else:
        side = raw.shape[1]
    if n_classes is None:
        n_classes = int(labels.max()) + 1 if labels.size else 1
    images = raw.reshape(raw.shape[0], -1).astype(np.float64) / 255.0
    return LabeledDataset(images, labels, n_classes, side)


def to_bytes(images):
    """Quantise [0, 1] pixels back to unsigned bytes."""
    return np.rint(np.clip(np.asarray(images), 0.0, 1.0) * 255.0).astype(np.uint8)


def write_idx_images(path, images, rows, cols):
    data = to_bytes(images).reshape(-1, rows * cols)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", IMAGE_MAGIC, data.shape[0], rows, cols))
        fh.write(data.tobytes())


def write_idx_labels(path, labels):
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() > 255):
        raise DataFormatError("IDX labels must fit in an unsigned byte")
    with open(path, "wb") as fh:
        fh.write(struct.pack(">II", LABEL_MAGIC, labels.shape[0]))
        fh.write(labels.astype(np.uint8).tobytes())


def save_idx(dataset, image_path, label_path):
    side = dataset.side or int(round(np.sqrt(dataset.dim)))
    if side * side != dataset.dim:
        raise DataFormatError(f"cannot write {dataset.dim}-pixel images as a square IDX file")
    write_idx_images(image_path, dataset.images, side, side)
    write_idx_labels(label_path, dataset.labels)


# ---------------------------------------------------------------- toy data

# seven-segment encodings: top, top-right, bottom-right, bottom, bottom-left, top-left, middle
_SEGMENTS = {
    0: "abcdef", 1: "bc", 2: "abged", 3: "abgcd", 4: "fgbc",
    5: "afgcd", 6: "afgedc", 7: "abc", 8: "abcdefg", 9: "abcdfg",
}


def toy_templates(n_classes, side):
    """Class templates (n_classes, side*side): seven-segment digits 0..M-1."""
    if side < 8:
        raise ValueError("toy images need side >= 8")
    if not 1 <= n_classes <= 10:
        raise ValueError("toy data supports 1..10 classes")
    th = max(1, int(round(side / 8)))
    margin = max(1, side // 7)
    top, bottom = margin, side - 1 - margin
    width = max(th + 2, int(round(0.6 * side)))
    left = (side - width) // 2
    right = left + width - 1
    mid = (top + bottom) // 2
    out = np.zeros((n_classes, side, side))
    for c in range(n_classes):
        img = out[c]
        for seg in _SEGMENTS[c]:
            if seg == "a":
                img[top:top + th, left:right + 1] = 1.0
            elif seg == "d":
                img[bottom - th + 1:bottom + 1, left:right + 1] = 1.0
            elif seg == "g":
                img[mid - th // 2:mid - th // 2 + th, left:right + 1] = 1.0
            elif seg == "f":
                img[top:mid + 1, left:left + th] = 1.0
            elif seg == "e":
                img[mid:bottom + 1, left:left + th] = 1.0
            elif seg == "b":
                img[top:mid + 1, right - th + 1:right + 1] = 1.0
            elif seg == "c":
                img[mid:bottom + 1, right - th + 1:right + 1] = 1.0
    return out.reshape(n_classes, side * side)


def _shift(img, dr, dc):
    out = np.zeros_like(img)
    s = img.shape[0]
    r_src = slice(max(0, -dr), s - max(0, dr))
    r_dst = slice(max(0, dr), s - max(0, -dr))
    c_src = slice(max(0, -dc), s - max(0, dc))
    c_dst = slice(max(0, dc), s - max(0, -dc))
    out[r_dst, c_dst] = img[r_src, c_src]
    return out


def synth_toy(rng: RngStream, n_per_class, n_classes, side, noise=0.05, shift=1):
    """Noisy seven-segment digits.

    Each image is its class template translated by up to ``shift`` pixels in
    each direction, after which every pixel is independently replaced by a
    uniform draw with probability ``noise``. Rows are class-interleaved.
    """
    templates = toy_templates(n_classes, side).reshape(n_classes, side, side)
    n = n_per_class * n_classes
    labels = np.tile(np.arange(n_classes), n_per_class)
    offsets = rng.child(0).integers(2 * shift + 1, (n, 2)) - shift if shift > 0 else np.zeros((n, 2), np.int64)
    replace = rng.child(1).uniform((n, side * side)) < noise
    fill = rng.child(2).uniform((n, side * side))
    images = np.empty((n, side * side))
    for i in range(n):
        images[i] = _shift(templates[labels[i]], int(offsets[i, 0]), int(offsets[i, 1])).ravel()
    images = np.where(replace, fill, images)
    return LabeledDataset(images, labels, n_classes, side)


def nearest_template_predict(images, templates, side=None, shift=0):
    """Label of the closest template (squared distance), optionally minimised
    over every translation of up to ``shift`` pixels."""
    templates = np.asarray(templates, dtype=np.float64)
    if shift > 0:
        sq = templates.reshape(len(templates), side, side)
        variants = [
            np.stack([_shift(t, dr, dc).ravel() for t in sq])
            for dr in range(-shift, shift + 1)
            for dc in range(-shift, shift + 1)
        ]
    else:
        variants = [templates]
    best = None
    for v in variants:
        d2 = (
            np.sum(images ** 2, axis=1)[:, None]
            - 2.0 * images @ v.T
            + np.sum(v ** 2, axis=1)[None, :]
        )
        best = d2 if best is None else np.minimum(best, d2)
    return np.argmin(best, axis=1)


# ---------------------------------------------------------------- preprocessing

def binarize(dataset, rng: RngStream, mode="stochastic"):
    if mode == "none":
        return dataset
    if mode == "stochastic":
        u = rng.uniform(dataset.images.shape)
        images = (u < dataset.images).astype(np.float64)
    elif mode == "threshold":
        images = (dataset.images >= 0.5).astype(np.float64)
    else:
        raise ValueError(f"unknown binarize mode {mode!r}")
    return LabeledDataset(images, dataset.labels, dataset.n_classes, dataset.side)


def minibatch_iter(dataset, m, rng: RngStream, epoch_index):
    if not 1 <= m <= dataset.n:
        raise ValueError(f"batch size {m} outside [1, {dataset.n}]")
    perm = rng.child(epoch_index).permutation(dataset.n)
    for start in range(0, dataset.n, m):
        idx = perm[start:start + m]
        yield MiniBatch(idx, dataset.images[idx], dataset.labels[idx])


def make_mask(kind, side, rng: RngStream | None = None, p=None, h=None, w=None):
    """Missing-value mask over a ``side x side`` image (flattened, True = missing)."""
    if kind == "rand_drop":
        if p is None or not 0.0 <= p <= 1.0:
            raise ValueError("rand_drop needs a probability p in [0, 1]")
        if p == 0.0:
            return np.zeros(side * side, dtype=bool)
        if p == 1.0:
            return np.ones(side * side, dtype=bool)
        if rng is None:
            raise ValueError("rand_drop needs an rng")
        return rng.uniform(side * side) < p
    if kind == "rect":
        if h is None or w is None or h < 0 or w < 0:
            raise ValueError("rect needs non-negative h and w")
        if h > side or w > side:
            raise ValueError(f"rect {h}x{w} does not fit a {side}x{side} image")
        mask = np.zeros((side, side), dtype=bool)
        r0 = (side - h) // 2
        c0 = (side - w) // 2
        mask[r0:r0 + h, c0:c0 + w] = True
        return mask.ravel()
    raise ValueError(f"unknown mask kind {kind!r}")


def parse_mask_spec(text):
    """``rand_drop:0.6`` or ``rect:12x12`` -> keyword arguments for :func:`make_mask`."""
    kind, _, arg = text.partition(":")
    kind = kind.strip()
    if kind == "rand_drop":
        return {"kind": kind, "p": float(arg)}
    if kind == "rect":
        h, _, w = arg.lower().partition("x")
        return {"kind": kind, "h": int(h), "w": int(w or h)}
    raise ValueError(f"bad mask spec {text!r}")
