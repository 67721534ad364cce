"""Image and table I/O.

Images: 8/16-bit grayscale PNG and TIFF (intensities normalized to [0, 1]
on load), or raw little-endian float32 with a ``<path>.dims`` sidecar
holding "ny nx".  Tables are tab-separated text with a header line.
"""

from __future__ import annotations

import os

import numpy as np
from PIL import Image

__all__ = [
    "load_image",
    "save_image",
    "write_table",
    "read_table",
]

_PIL_EXTS = {".png", ".tif", ".tiff"}


def load_image(path) -> np.ndarray:
    """Load a grayscale image as float64; integer formats map to [0, 1]."""
    path = os.fspath(path)
    ext = os.path.splitext(path)[1].lower()
    if ext in _PIL_EXTS:
        with Image.open(path) as im:
            arr = np.asarray(im)
        if arr.ndim == 3:
            arr = arr[..., 0]
        if arr.dtype == np.uint8:
            return arr.astype(np.float64) / 255.0
        if arr.dtype == np.uint16:
            return arr.astype(np.float64) / 65535.0
        if arr.dtype.kind in "iu":
            return arr.astype(np.float64) / float(np.iinfo(arr.dtype).max)
        return arr.astype(np.float64)
    dims_path = path + ".dims"
    if not os.path.exists(dims_path):
        raise FileNotFoundError(f"raw image {path} needs a sidecar {dims_path} with 'ny nx'")
    with open(dims_path) as f:
        ny, nx = (int(tok) for tok in f.read().split()[:2])
    data = np.fromfile(path, dtype="<f4")
    if data.size != ny * nx:
        raise ValueError(f"{path}: expected {ny * nx} float32 values, found {data.size}")
    return data.reshape(ny, nx).astype(np.float64)


def save_image(path, image: np.ndarray):
    """Save float data; PNG/TIFF quantize [0, 1] to 16 bit, else raw f32."""
    path = os.fspath(path)
    image = np.asarray(image, dtype=np.float64)
    ext = os.path.splitext(path)[1].lower()
    if ext in _PIL_EXTS:
        q = np.clip(image, 0.0, 1.0)
        Image.fromarray((q * 65535.0 + 0.5).astype(np.uint16)).save(path)
        return
    image.astype("<f4").tofile(path)
    with open(path + ".dims", "w") as f:
        f.write(f"{image.shape[0]} {image.shape[1]}\n")


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, float) or isinstance(v, np.floating):
        return f"{float(v):.10g}"
    return str(v)


def write_table(path, columns: list[str], rows):
    """Write a tab-separated table with a header line."""
    with open(path, "w") as f:
        f.write("\t".join(columns) + "\n")
        for row in rows:
            f.write("\t".join(_fmt(v) for v in row) + "\n")


def read_table(path) -> tuple[list[str], list[list[str]]]:
    """Read a tab-separated table; returns (header, rows of strings)."""
    with open(path) as f:
        lines = [ln.rstrip("\n") for ln in f if ln.strip()]
    if not lines:
        raise ValueError(f"{path}: empty table")
    header = lines[0].split("\t")
    return header, [ln.split("\t") for ln in lines[1:]]
