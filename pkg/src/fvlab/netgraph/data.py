"""Datasets: a procedural shape/texture generator and IDX ingestion."""
from __future__ import annotations

import gzip
from dataclasses import dataclass
from pathlib import Path

import numpy as np

CLASS_NAMES = (
    "hstripes", "vstripes", "diag", "antidiag", "disk",
    "ring", "checker", "square", "cross", "dots",
)


@dataclass
class Dataset:
    images: np.ndarray  # (N, C, H, W) in [0, 1]
    labels: np.ndarray  # (N,) int64
    split: str = "train"
    classes: int = 10

    def __post_init__(self):
        self.images = np.ascontiguousarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4 or len(self.images) != len(self.labels):
            raise ValueError("images must be (N,C,H,W) with one label per image")
        if self.images.size and (self.images.min() < 0 or self.images.max() > 1):
            raise ValueError("pixel values must lie in [0, 1]")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.classes):
            raise ValueError("labels must lie in [0, classes)")

    def __len__(self):
        return len(self.labels)

    def subset(self, idx, split=None) -> "Dataset":
        return Dataset(self.images[idx], self.labels[idx], split or self.split, self.classes)

    def save(self, path):
        np.savez_compressed(path, images=self.images, labels=self.labels,
                            split=np.array(self.split), classes=np.array(self.classes))

    @classmethod
    def load(cls, path) -> "Dataset":
        with np.load(path) as z:
            return cls(z["images"], z["labels"], str(z["split"]), int(z["classes"]))


def _soft(d, sharp=3.0):
    """Anti-aliased indicator of d > 0 (d in pixels)."""
    return 0.5 * (1.0 + np.tanh(sharp * d))


def _mask(cls, rng, h, w):
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    cy = h / 2 + rng.uniform(-h / 8, h / 8)
    cx = w / 2 + rng.uniform(-w / 8, w / 8)
    period = rng.uniform(5.0, 9.0)
    phase = rng.uniform(0, 2 * np.pi)
    wave = lambda t: _soft(np.sin(2 * np.pi * t / period + phase) * period / 4)  # noqa: E731
    name = CLASS_NAMES[cls % len(CLASS_NAMES)]
    if name == "hstripes":
        return wave(yy)
    if name == "vstripes":
        return wave(xx)
    if name == "diag":
        return wave((xx + yy) / np.sqrt(2))
    if name == "antidiag":
        return wave((xx - yy) / np.sqrt(2))
    r = np.hypot(yy - cy, xx - cx)
    if name == "disk":
        return _soft(rng.uniform(6, 10) - r)
    if name == "ring":
        rad, width = rng.uniform(7, 11), rng.uniform(1.5, 2.5)
        return _soft(width - np.abs(r - rad))
    if name == "checker":
        p = period / 2
        return _soft(np.sin(np.pi * (xx - cx) / p) * np.sin(np.pi * (yy - cy) / p) * p / 2)
    if name == "square":
        half = rng.uniform(5, 9)
        return _soft(half - np.maximum(np.abs(yy - cy), np.abs(xx - cx)))
    if name == "cross":
        arm, width = rng.uniform(9, 13), rng.uniform(1.5, 2.5)
        dy, dx = np.abs(yy - cy), np.abs(xx - cx)
        bar1 = np.minimum(width - dy, arm - dx)
        bar2 = np.minimum(width - dx, arm - dy)
        return _soft(np.maximum(bar1, bar2))
    # dots: a lattice of small blobs
    p = period + 2
    dy = (yy - cy) % p - p / 2
    dx = (xx - cx) % p - p / 2
    return _soft(rng.uniform(1.5, 2.2) - np.hypot(dy, dx))


def generate_synthetic_dataset(classes: int = 10, per_class: int = 100, size=(32, 32), seed: int = 0,
                               channels: int = 3, noise: float = 0.03, tint: float = 0.08,
                               split: str = "train") -> Dataset:
    """Procedural shape/texture classes; deterministic per seed, pixels in [0, 1]."""
    if classes < 1 or per_class < 1:
        raise ValueError("class and per-class counts must be positive")
    if classes > len(CLASS_NAMES):
        raise ValueError(f"at most {len(CLASS_NAMES)} classes are available")
    h, w = size
    rng = np.random.default_rng(seed)
    n = classes * per_class
    images = np.empty((n, channels, h, w))
    labels = np.repeat(np.arange(classes), per_class)
    for i, cls in enumerate(labels):
        m = _mask(int(cls), rng, h, w)
        # colours are a luminance plus a small tint, so channels stay correlated
        bg = rng.uniform(0.0, 0.4) + rng.uniform(-tint, tint, size=channels)
        fg = rng.uniform(0.6, 1.0) + rng.uniform(-tint, tint, size=channels)
        img = bg[:, None, None] + (fg - bg)[:, None, None] * m[None]
        img += noise * rng.standard_normal(img.shape)
        images[i] = np.clip(img, 0.0, 1.0)
    order = rng.permutation(n)
    return Dataset(images[order], labels[order], split, classes)


def train_test_split(data: Dataset, test_fraction: float = 0.2, seed: int = 0):
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(data))
    cut = int(round(len(data) * (1.0 - test_fraction)))
    return data.subset(np.sort(order[:cut]), "train"), data.subset(np.sort(order[cut:]), "test")


# --------------------------------------------------------------------------
# IDX files
# --------------------------------------------------------------------------

_IDX_TYPES = {0x08: ">u1", 0x09: ">i1", 0x0B: ">i2", 0x0C: ">i4", 0x0D: ">f4", 0x0E: ">f8"}


class IDXFormatError(ValueError):
    pass


def read_idx(path) -> np.ndarray:
    """Parse an IDX file (optionally gzip-compressed)."""
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4 or raw[0] != 0 or raw[1] != 0:
        raise IDXFormatError(f"{path}: bad magic number")
    code, ndim = raw[2], raw[3]
    if code not in _IDX_TYPES:
        raise IDXFormatError(f"{path}: unknown element type 0x{code:02x}")
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IDXFormatError(f"{path}: truncated header")
    dims = tuple(int(d) for d in np.frombuffer(raw, ">u4", ndim, 4))
    dtype = np.dtype(_IDX_TYPES[code])
    count = int(np.prod(dims)) if dims else 1
    if len(raw) - header != count * dtype.itemsize:
        raise IDXFormatError(f"{path}: expected {count * dtype.itemsize} data bytes, found {len(raw) - header}")
    return np.frombuffer(raw, dtype, count, header).reshape(dims)


def write_idx(path, array: np.ndarray):
    array = np.asarray(array)
    inverse = {np.dtype(v).str.lstrip("<>|="): k for k, v in _IDX_TYPES.items()}
    key = array.dtype.str.lstrip("<>|=")
    if key not in inverse:
        raise ValueError(f"dtype {array.dtype} has no IDX code")
    code = inverse[key]
    header = bytes([0, 0, code, array.ndim]) + np.asarray(array.shape, ">u4").tobytes()
    payload = array.astype(_IDX_TYPES[code]).tobytes()
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "wb") as fh:
        fh.write(header + payload)


def load_idx_dataset(images_path, labels_path, split: str = "train", classes: int | None = None) -> Dataset:
    """Unsigned-byte IDX images rescaled to [0, 1] with a channel axis added."""
    images = read_idx(images_path)
    labels = read_idx(labels_path).astype(np.int64)
    if images.dtype != np.uint8:
        raise IDXFormatError("image file must hold unsigned bytes")
    if images.ndim == 3:
        images = images[:, None]
    elif images.ndim != 4:
        raise IDXFormatError(f"image tensor has {images.ndim} dimensions; expected 3 or 4")
    if len(images) != len(labels):
        raise IDXFormatError(f"{len(images)} images but {len(labels)} labels")
    classes = int(labels.max()) + 1 if classes is None else classes
    return Dataset(images.astype(np.float64) / 255.0, labels, split, classes)
