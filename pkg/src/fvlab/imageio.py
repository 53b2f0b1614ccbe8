"""Binary PGM (P5) and PPM (P6) images, 8 or 16 bit."""
from __future__ import annotations

from pathlib import Path

import numpy as np


class PNMFormatError(ValueError):
    pass


def to_bytes(img: np.ndarray, maxval: int = 255) -> np.ndarray:
    """Quantize a [0, 1] image (C,H,W or H,W) to integers in [0, maxval]."""
    img = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    return np.rint(img * maxval).astype(np.uint16 if maxval > 255 else np.uint8)


def write_pnm(path, img: np.ndarray, maxval: int = 255) -> Path:
    """Write a (1,H,W)/(H,W) image as P5 or a (3,H,W) image as P6."""
    img = np.asarray(img)
    if img.ndim == 3 and img.shape[0] == 1:
        img = img[0]
    if img.ndim == 2:
        magic, h, w, pix = b"P5", img.shape[0], img.shape[1], to_bytes(img, maxval)
    elif img.ndim == 3 and img.shape[0] == 3:
        magic, h, w = b"P6", img.shape[1], img.shape[2]
        pix = to_bytes(np.transpose(img, (1, 2, 0)), maxval)
    else:
        raise ValueError(f"cannot write image of shape {img.shape} as PGM/PPM")
    if not 0 < maxval < 65536:
        raise ValueError("maxval must be in [1, 65535]")
    path = Path(path)
    data = pix.astype(">u2").tobytes() if maxval > 255 else pix.tobytes()
    path.write_bytes(magic + b"\n%d %d\n%d\n" % (w, h, maxval) + data)
    return path


def _tokens(raw: bytes, count: int, pos: int):
    out = []
    while len(out) < count:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise PNMFormatError("truncated header")
        out.append(raw[start:pos])
    return out, pos + 1  # exactly one whitespace byte precedes the raster


def read_pnm(path) -> np.ndarray:
    """Read P5/P6 into a float (C,H,W) array in [0, 1]."""
    raw = Path(path).read_bytes()
    magic = raw[:2]
    if magic not in (b"P5", b"P6"):
        raise PNMFormatError(f"{path}: unsupported magic {magic!r}")
    (w, h, maxval), pos = _tokens(raw, 3, 2)
    w, h, maxval = int(w), int(h), int(maxval)
    if not 0 < maxval < 65536:
        raise PNMFormatError(f"{path}: bad maxval {maxval}")
    c = 3 if magic == b"P6" else 1
    dtype = np.dtype(">u2" if maxval > 255 else "u1")
    need = w * h * c * dtype.itemsize
    if len(raw) - pos < need:
        raise PNMFormatError(f"{path}: raster truncated")
    pix = np.frombuffer(raw, dtype, w * h * c, pos).reshape(h, w, c)
    return np.transpose(pix, (2, 0, 1)).astype(np.float64) / maxval
