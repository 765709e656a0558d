"""Datasets (IDX files and synthetic stand-ins), resampling and metrics.

Images are float64 arrays shaped (N, H, W, C) with values in [0, 1].
Labels are either class indices (N,) or masks shaped like the images.
"""

import gzip
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .errors import DatasetError

IDX_UBYTE_1D = 0x00000801
IDX_UBYTE_3D = 0x00000803
IDX_UBYTE_4D = 0x00000804

SYNTH_KINDS = ("two_class_digits_8x8", "shifted_blobs", "mask_shapes")


@dataclass
class Dataset:
    images: np.ndarray
    labels: np.ndarray = None
    name: str = "dataset"

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        if self.images.ndim == 3:
            self.images = self.images[..., None]
        if self.images.ndim != 4:
            raise DatasetError(f"images must be (N, H, W, C), got {self.images.shape}")
        if not np.all(np.isfinite(self.images)):
            raise DatasetError(f"{self.name}: NaN/Inf pixels")
        if self.labels is not None:
            self.labels = np.asarray(self.labels)
            if len(self.labels) != len(self.images):
                raise DatasetError(f"{self.name}: {len(self.labels)} labels for {len(self.images)} images")

    def __len__(self):
        return len(self.images)

    @property
    def shape(self):
        return self.images.shape[1:]

    @property
    def is_mask_task(self):
        return self.labels is not None and self.labels.ndim > 1

    @property
    def n_classes(self):
        return int(self.labels.max()) + 1 if self.labels is not None and not self.is_mask_task else 0

    def subset(self, idx, name=None):
        idx = np.asarray(idx)
        labels = None if self.labels is None else self.labels[idx]
        return Dataset(self.images[idx], labels, name or self.name)

    def split(self, test_fraction, seed):
        """Shuffled (train, test) partition."""
        perm = np.random.default_rng(seed).permutation(len(self))
        n_test = int(round(test_fraction * len(self)))
        return self.subset(perm[n_test:], self.name + "/train"), self.subset(perm[:n_test], self.name + "/test")


# ------------------------------------------------------------------ IDX


def _open(path):
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"no such file: {path}")
    data = path.read_bytes()
    return gzip.decompress(data) if path.suffix == ".gz" else data


def _parse_idx(buf, path):
    if len(buf) < 4:
        raise DatasetError(f"{path}: truncated header")
    (magic,) = struct.unpack(">I", buf[:4])
    if magic not in (IDX_UBYTE_1D, IDX_UBYTE_3D, IDX_UBYTE_4D):
        raise DatasetError(f"{path}: bad IDX magic 0x{magic:08x}")
    ndim = magic & 0xFF
    if len(buf) < 4 + 4 * ndim:
        raise DatasetError(f"{path}: truncated header")
    dims = struct.unpack(f">{ndim}I", buf[4:4 + 4 * ndim])
    count = int(np.prod(dims))
    body = buf[4 + 4 * ndim:]
    if len(body) != count:
        raise DatasetError(f"{path}: expected {count} data bytes, found {len(body)}")
    return np.frombuffer(body, dtype=np.uint8).reshape(dims)


def load_idx(images_path, labels_path=None, name=None):
    """Read an IDX image file (and optional label file) into a :class:`Dataset`."""
    imgs = _parse_idx(_open(images_path), images_path)
    if imgs.ndim == 1:
        raise DatasetError(f"{images_path}: label file given as images")
    images = imgs.astype(np.float64) / 255.0
    labels = None
    if labels_path is not None:
        raw = _parse_idx(_open(labels_path), labels_path)
        if raw.shape[0] != images.shape[0]:
            raise DatasetError(f"count mismatch: {images.shape[0]} images vs {raw.shape[0]} labels")
        labels = raw.astype(np.int64) if raw.ndim == 1 else raw.astype(np.float64)[..., None] / 255.0
    return Dataset(images, labels, name or Path(images_path).stem)


def _idx_bytes(arr, magic):
    return struct.pack(">I", magic) + struct.pack(f">{arr.ndim}I", *arr.shape) + arr.astype(np.uint8).tobytes()


def write_idx(dataset, images_path, labels_path=None):
    imgs = np.round(dataset.images * 255.0).astype(np.uint8)
    if imgs.shape[-1] == 1:
        imgs, magic = imgs[..., 0], IDX_UBYTE_3D
    else:
        magic = IDX_UBYTE_4D
    Path(images_path).write_bytes(_idx_bytes(imgs, magic))
    if labels_path is not None and dataset.labels is not None:
        if dataset.is_mask_task:
            lab = np.round(dataset.labels[..., 0] * 255.0)
            Path(labels_path).write_bytes(_idx_bytes(lab, IDX_UBYTE_3D))
        else:
            Path(labels_path).write_bytes(_idx_bytes(dataset.labels, IDX_UBYTE_1D))


# ------------------------------------------------------------------ synthetic

_GLYPH_ZERO = np.array([
    [0, 0, 0, 0, 0, 0, 0, 0],
    [0, 0, 1, 1, 1, 1, 0, 0],
    [0, 1, 1, 0, 0, 1, 1, 0],
    [0, 1, 0, 0, 0, 0, 1, 0],
    [0, 1, 0, 0, 0, 0, 1, 0],
    [0, 1, 1, 0, 0, 1, 1, 0],
    [0, 0, 1, 1, 1, 1, 0, 0],
    [0, 0, 0, 0, 0, 0, 0, 0],
], dtype=np.float64)

_GLYPH_ONE = np.array([
    [0, 0, 0, 0, 0, 0, 0, 0],
    [0, 0, 0, 1, 1, 0, 0, 0],
    [0, 0, 1, 1, 1, 0, 0, 0],
    [0, 0, 0, 1, 1, 0, 0, 0],
    [0, 0, 0, 1, 1, 0, 0, 0],
    [0, 0, 0, 1, 1, 0, 0, 0],
    [0, 0, 1, 1, 1, 1, 0, 0],
    [0, 0, 0, 0, 0, 0, 0, 0],
], dtype=np.float64)


def _shift(img, dy, dx):
    out = np.zeros_like(img)
    h, w = img.shape
    ys, yd = (slice(0, h - dy), slice(dy, h)) if dy >= 0 else (slice(-dy, h), slice(0, h + dy))
    xs, xd = (slice(0, w - dx), slice(dx, w)) if dx >= 0 else (slice(-dx, w), slice(0, w + dx))
    out[yd, xd] = img[ys, xs]
    return out


def _digits(n, rng):
    labels = rng.integers(0, 2, size=n)
    images = np.empty((n, 8, 8, 1))
    for i, lab in enumerate(labels):
        glyph = _GLYPH_ONE if lab else _GLYPH_ZERO
        g = _shift(glyph, int(rng.integers(-1, 2)), int(rng.integers(-1, 2))) * rng.uniform(0.7, 1.0)
        images[i, :, :, 0] = np.clip(g + rng.normal(0.0, 0.1, size=(8, 8)), 0.0, 1.0)
    return images, labels


BLOB_OFFSET = 0.5 * np.linspace(0.0, 1.0, 8)[None, :].repeat(8, axis=0)[..., None]


def _blobs(n, rng, shifted):
    labels = rng.integers(0, 2, size=n)
    yy, xx = np.mgrid[0:8, 0:8]
    images = np.empty((n, 8, 8, 1))
    for i, lab in enumerate(labels):
        cy = rng.uniform(2.0, 5.0)
        cx = (5.0 if lab else 2.0) + rng.uniform(-0.7, 0.7)
        amp = rng.uniform(0.35, 0.5)
        blob = amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / 2.0)
        images[i, :, :, 0] = np.clip(blob + rng.normal(0.0, 0.03, size=(8, 8)), 0.0, 0.5)
    if shifted:
        images = images + BLOB_OFFSET
    return images, labels


def _masks(n, rng):
    images = np.empty((n, 8, 8, 1))
    masks = np.zeros((n, 8, 8, 1))
    for i in range(n):
        h, w = rng.integers(2, 6, size=2)
        y0, x0 = rng.integers(0, 9 - h), rng.integers(0, 9 - w)
        masks[i, y0:y0 + h, x0:x0 + w, 0] = 1.0
        img = 0.2 + 0.6 * masks[i, :, :, 0] + rng.normal(0.0, 0.05, size=(8, 8))
        images[i, :, :, 0] = np.clip(img, 0.0, 1.0)
    return images, masks


def synth_dataset(kind, n, seed, shifted=False):
    """Deterministic desk-scale datasets.

    ``two_class_digits_8x8``
        noisy, jittered "0"/"1" glyphs.
    ``shifted_blobs``
        left/right Gaussian blobs in [0, 0.5]; ``shifted=True`` adds the fixed
        horizontal ramp :data:`BLOB_OFFSET` (observed domain).
    ``mask_shapes``
        bright rectangles on a dim background; labels are the rectangle masks.
    """
    if n < 1:
        raise DatasetError("n must be >= 1")
    rng = np.random.default_rng(seed)
    if kind == "two_class_digits_8x8":
        images, labels = _digits(n, rng)
    elif kind == "shifted_blobs":
        images, labels = _blobs(n, rng, shifted)
    elif kind == "mask_shapes":
        images, labels = _masks(n, rng)
    else:
        raise DatasetError(f"unknown synthetic kind {kind!r}; choose from {SYNTH_KINDS}")
    name = kind + ("_shifted" if shifted else "")
    return Dataset(images, labels, name)


# ------------------------------------------------------------------ resampling


def resample_image(img, target_h, target_w):
    """Bilinear (align-corners) resize of an (H, W, C) or (H, W) image."""
    if target_h < 1 or target_w < 1:
        raise ValueError("target size must be positive")
    img = np.asarray(img, dtype=np.float64)
    squeeze = img.ndim == 2
    if squeeze:
        img = img[..., None]
    if img.shape[:2] == (target_h, target_w):
        out = img.copy()
    else:
        out = np.clip(kernels.bilinear(img, target_h, target_w), 0.0, 1.0)
    return out[..., 0] if squeeze else out


def match_images(images, shape):
    """Resample a (N, H, W, C) stack to ``shape`` = (H', W', C'), fixing channels."""
    th, tw, tc = shape
    images = np.asarray(images, dtype=np.float64)
    c = images.shape[-1]
    if c != tc:
        if tc == 1:
            images = images.mean(axis=-1, keepdims=True)
        elif c == 1:
            images = np.repeat(images, tc, axis=-1)
        else:
            raise DatasetError(f"cannot map {c} channels onto {tc}")
    if images.shape[1:3] == (th, tw):
        return images.copy()
    return np.stack([resample_image(im, th, tw) for im in images])


# ------------------------------------------------------------------ metrics


def psnr(a, b, max_val=1.0):
    """PSNR in dB; identical inputs give ``math.inf``."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(max_val**2 / mse)


def accuracy(preds, labels):
    preds, labels = np.asarray(preds).reshape(-1), np.asarray(labels).reshape(-1)
    if preds.shape != labels.shape:
        raise ValueError("preds and labels differ in length")
    if preds.size == 0:
        return 0.0
    return float(np.mean(preds == labels))


def iou(mask_a, mask_b):
    """Intersection over union after thresholding at 0.5. Two empty masks give 1.0."""
    a = np.asarray(mask_a) > 0.5
    b = np.asarray(mask_b) > 0.5
    if a.shape != b.shape:
        raise ValueError("mask shapes differ")
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union
