"""Coordinate-format sparse storage for reconstruction volumes.

Each z-plane keeps its nonzero entries as parallel (row, col, value) arrays
sorted by (row, col).  Memory accounting follows the 24-byte-per-entry model
(two 8-byte indices plus an 8-byte complex value) so reported numbers are
comparable across implementations, even though indices are stored as 32-bit
here.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .optics import VolumeGeometry

__all__ = [
    "SparsePlane",
    "SparseVolume",
    "from_dense",
    "memory_estimate",
    "sparsity",
    "axpy",
    "save_volume",
    "load_volume",
]

BYTES_PER_ENTRY = 24  # 8 per index + 8 for the complex value, accounting model
_MAGIC = b"RIHV"
_VERSION = 1


@dataclass
class SparsePlane:
    """One sparse complex plane: entries sorted by (row, col), no zeros."""

    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray
    shape: tuple[int, int]

    @classmethod
    def empty(cls, shape: tuple[int, int]) -> "SparsePlane":
        return cls(
            np.empty(0, dtype=np.int32),
            np.empty(0, dtype=np.int32),
            np.empty(0, dtype=np.complex128),
            shape,
        )

    @property
    def nnz(self) -> int:
        return len(self.values)

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.shape, dtype=np.complex128)
        out[self.rows, self.cols] = self.values
        return out

    def validate(self):
        if np.any(self.values == 0):
            raise ValueError("sparse plane stores explicit zeros")
        if self.nnz:
            if self.rows.min() < 0 or self.rows.max() >= self.shape[0]:
                raise ValueError("row index out of range")
            if self.cols.min() < 0 or self.cols.max() >= self.shape[1]:
                raise ValueError("col index out of range")
            lin = self.rows.astype(np.int64) * self.shape[1] + self.cols
            if np.any(np.diff(lin) <= 0):
                raise ValueError("entries not strictly sorted by (row, col)")


def from_dense(plane: np.ndarray, drop_tol: float = 0.0, shape: tuple[int, int] | None = None) -> SparsePlane:
    """Extract entries with |value| > drop_tol from a dense plane.

    With ``drop_tol=0`` this keeps exactly the nonzero entries, so
    ``from_dense(p).to_dense() == p`` bit-exactly.
    """
    if drop_tol < 0:
        raise ValueError(f"drop_tol must be nonnegative, got {drop_tol}")
    plane = np.asarray(plane, dtype=np.complex128)
    shape = shape or plane.shape
    rows, cols = np.nonzero(np.abs(plane) > drop_tol)
    return SparsePlane(
        rows.astype(np.int32), cols.astype(np.int32), plane[rows, cols].copy(), shape
    )


@dataclass
class SparseVolume:
    """A z-ordered stack of sparse planes plus its geometry."""

    planes: list[SparsePlane]
    geom: VolumeGeometry

    def __post_init__(self):
        if len(self.planes) != self.geom.nz:
            raise ValueError(
                f"volume has {len(self.planes)} planes, geometry expects {self.geom.nz}"
            )
        for k, p in enumerate(self.planes):
            if p.shape != self.geom.plane_shape:
                raise ValueError(
                    f"plane {k} shape {p.shape} does not match geometry {self.geom.plane_shape}"
                )

    @classmethod
    def zeros(cls, geom: VolumeGeometry) -> "SparseVolume":
        return cls([SparsePlane.empty(geom.plane_shape) for _ in range(geom.nz)], geom)

    @classmethod
    def from_dense_stack(cls, stack: np.ndarray, geom: VolumeGeometry, drop_tol: float = 0.0) -> "SparseVolume":
        return cls([from_dense(stack[k], drop_tol) for k in range(geom.nz)], geom)

    @property
    def nnz(self) -> int:
        return sum(p.nnz for p in self.planes)

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.geom.nz,) + self.geom.plane_shape, dtype=np.complex128)
        for k, p in enumerate(self.planes):
            out[k][p.rows, p.cols] = p.values
        return out

    def scaled(self, alpha: complex) -> "SparseVolume":
        if alpha == 0:
            return SparseVolume.zeros(self.geom)
        return SparseVolume(
            [SparsePlane(p.rows.copy(), p.cols.copy(), alpha * p.values, p.shape) for p in self.planes],
            self.geom,
        )


def memory_estimate(v: SparseVolume) -> int:
    """Bytes needed under the 24-byte-per-nonzero accounting model."""
    return v.nnz * BYTES_PER_ENTRY


def sparsity(v: SparseVolume) -> float:
    """Fraction of zero voxels: 1 - nnz / (nx*ny*nz)."""
    return 1.0 - v.nnz / v.geom.n_voxels


def _axpy_plane(alpha: complex, x: SparsePlane, y: SparsePlane) -> SparsePlane:
    ncols = x.shape[1]
    lin_x = x.rows.astype(np.int64) * ncols + x.cols
    lin_y = y.rows.astype(np.int64) * ncols + y.cols
    lin = np.concatenate([lin_x, lin_y])
    val = np.concatenate([alpha * x.values, y.values])
    uniq, inv = np.unique(lin, return_inverse=True)
    merged = np.zeros(len(uniq), dtype=np.complex128)
    np.add.at(merged, inv, val)
    keep = merged != 0
    uniq = uniq[keep]
    return SparsePlane(
        (uniq // ncols).astype(np.int32),
        (uniq % ncols).astype(np.int32),
        merged[keep],
        x.shape,
    )


def axpy(alpha: complex, x: SparseVolume, y: SparseVolume) -> SparseVolume:
    """alpha*x + y with exact entry-set merge; exact cancellations are dropped."""
    if x.geom != y.geom:
        raise ValueError("geometry mismatch between volumes")
    if alpha == 0:
        return SparseVolume(
            [SparsePlane(p.rows.copy(), p.cols.copy(), p.values.copy(), p.shape) for p in y.planes],
            y.geom,
        )
    return SparseVolume(
        [_axpy_plane(alpha, px, py) for px, py in zip(x.planes, y.planes)], x.geom
    )


# --- binary container ------------------------------------------------------
#
# header: magic "RIHV", then version, nx, ny, nz as u64, then pitch, dz, z0,
# wavelength as f64; all little-endian.  Per plane: entry count (u64), then
# (row: u32, col: u32, re: f32, im: f32) records.

_HEADER = struct.Struct("<4sQQQQdddd")
_COUNT = struct.Struct("<Q")


def save_volume(path, v: SparseVolume):
    g = v.geom
    with open(path, "wb") as f:
        f.write(_HEADER.pack(_MAGIC, _VERSION, g.nx, g.ny, g.nz, g.pitch, g.dz, g.z0, g.wavelength))
        for p in v.planes:
            f.write(_COUNT.pack(p.nnz))
            rec = np.empty(p.nnz, dtype=[("row", "<u4"), ("col", "<u4"), ("re", "<f4"), ("im", "<f4")])
            rec["row"] = p.rows
            rec["col"] = p.cols
            rec["re"] = p.values.real
            rec["im"] = p.values.imag
            f.write(rec.tobytes())


def load_volume(path) -> SparseVolume:
    with open(path, "rb") as f:
        hdr = f.read(_HEADER.size)
        if len(hdr) != _HEADER.size:
            raise ValueError(f"{path}: truncated header")
        magic, version, nx, ny, nz, pitch, dz, z0, wavelength = _HEADER.unpack(hdr)
        if magic != _MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        if version != _VERSION:
            raise ValueError(f"{path}: unsupported container version {version}")
        geom = VolumeGeometry(nx=int(nx), ny=int(ny), nz=int(nz), pitch=pitch, dz=dz, z0=z0, wavelength=wavelength)
        planes = []
        rec_t = np.dtype([("row", "<u4"), ("col", "<u4"), ("re", "<f4"), ("im", "<f4")])
        for _ in range(geom.nz):
            (count,) = _COUNT.unpack(f.read(_COUNT.size))
            raw = f.read(count * rec_t.itemsize)
            if len(raw) != count * rec_t.itemsize:
                raise ValueError(f"{path}: truncated plane data")
            rec = np.frombuffer(raw, dtype=rec_t)
            planes.append(
                SparsePlane(
                    rec["row"].astype(np.int32),
                    rec["col"].astype(np.int32),
                    rec["re"].astype(np.float64) + 1j * rec["im"].astype(np.float64),
                    geom.plane_shape,
                )
            )
    return SparseVolume(planes, geom)
