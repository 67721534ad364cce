"""Convert reconstructed volumes into discrete particles.

Thresholding, 26-connected components over the sparse voxel set,
minimum-volume filtering, intensity-weighted centroids, and rod orientation
by weighted principal components.  Intensity means the modulus of the
complex reconstruction value.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .sparsevol import SparsePlane, SparseVolume

__all__ = [
    "Blob",
    "AxisEstimate",
    "threshold_volume",
    "connected_components",
    "filter_min_volume",
    "weighted_centroid",
    "principal_axis",
    "extract_particles",
    "peak_depth_particles",
    "ParticleDetection",
]


@dataclass
class Blob:
    """A 26-connected set of nonzero voxels.

    ``voxels`` is an (n, 3) int array of (k, i, j) = (plane, row, col);
    ``intensities`` holds the voxel moduli.
    """

    voxels: np.ndarray
    intensities: np.ndarray

    @property
    def volume(self) -> int:
        return len(self.intensities)

    @property
    def peak_intensity(self) -> float:
        return float(self.intensities.max())

    def centroid(self) -> tuple[float, float, float]:
        return weighted_centroid(self)


@dataclass
class AxisEstimate:
    axis: np.ndarray  # unit 3-vector (x, y, z)
    elongation: float
    reliable: bool


@dataclass
class ParticleDetection:
    """One segmented particle: centroid in voxels and meters plus shape info."""

    blob_id: int
    x_vox: float
    y_vox: float
    z_vox: float
    x: float
    y: float
    z: float
    volume: int
    peak_intensity: float
    axis: np.ndarray | None = None
    elongation: float | None = None


def threshold_volume(v: SparseVolume, rel_tol: float) -> SparseVolume:
    """Drop entries with modulus below rel_tol times the volume maximum."""
    if not 0.0 <= rel_tol < 1.0:
        raise ValueError(f"rel_tol must be in [0, 1), got {rel_tol}")
    if rel_tol == 0.0 or v.nnz == 0:
        return v
    vmax = max(float(np.abs(p.values).max()) for p in v.planes if p.nnz)
    cut = rel_tol * vmax
    planes = []
    for p in v.planes:
        if p.nnz == 0:
            planes.append(p)
            continue
        keep = np.abs(p.values) >= cut
        planes.append(SparsePlane(p.rows[keep], p.cols[keep], p.values[keep], p.shape))
    return SparseVolume(planes, v.geom)


_NEIGHBOR_OFFSETS = [
    (dk, di, dj)
    for dk in (-1, 0, 1)
    for di in (-1, 0, 1)
    for dj in (-1, 0, 1)
    if (dk, di, dj) != (0, 0, 0)
]


def connected_components(v: SparseVolume) -> list[Blob]:
    """Partition nonzero voxels into 26-connected 3D components.

    Works directly on the sparse coordinate set; the result is independent
    of entry order (components are emitted sorted by their smallest voxel).
    """
    index: dict[tuple[int, int, int], int] = {}
    coords: list[tuple[int, int, int]] = []
    values: list[float] = []
    for k, p in enumerate(v.planes):
        for r, c, val in zip(p.rows.tolist(), p.cols.tolist(), np.abs(p.values).tolist()):
            index[(k, r, c)] = len(coords)
            coords.append((k, r, c))
            values.append(val)
    n = len(coords)
    label = np.full(n, -1, dtype=np.int64)
    blobs: list[list[int]] = []
    for start in sorted(range(n), key=lambda i: coords[i]):
        if label[start] >= 0:
            continue
        lab = len(blobs)
        members = []
        queue = deque([start])
        label[start] = lab
        while queue:
            i = queue.popleft()
            members.append(i)
            k, r, c = coords[i]
            for dk, di, dj in _NEIGHBOR_OFFSETS:
                j = index.get((k + dk, r + di, c + dj))
                if j is not None and label[j] < 0:
                    label[j] = lab
                    queue.append(j)
        blobs.append(members)
    out = []
    for members in blobs:
        vox = np.array([coords[i] for i in members], dtype=np.int64)
        inten = np.array([values[i] for i in members])
        order = np.lexsort((vox[:, 2], vox[:, 1], vox[:, 0]))
        out.append(Blob(vox[order], inten[order]))
    return out


def filter_min_volume(blobs: list[Blob], min_vox: int) -> list[Blob]:
    """Keep blobs with volume strictly greater than min_vox."""
    if min_vox < 0:
        raise ValueError(f"min_vox must be nonnegative, got {min_vox}")
    return [b for b in blobs if b.volume > min_vox]


def weighted_centroid(blob: Blob) -> tuple[float, float, float]:
    """Intensity-weighted centroid (x, y, z) in voxel coordinates."""
    if blob.volume == 0:
        raise ValueError("empty blob")
    w = blob.intensities
    total = float(w.sum())
    if total <= 0.0:
        raise ValueError("blob has no positive intensity")
    x = float((w * blob.voxels[:, 2]).sum() / total)
    y = float((w * blob.voxels[:, 1]).sum() / total)
    z = float((w * blob.voxels[:, 0]).sum() / total)
    return (x, y, z)


def principal_axis(blob: Blob, degenerate_tol: float = 1e-9) -> AxisEstimate:
    """Leading eigenvector of the intensity-weighted position covariance.

    The sign convention makes the largest-magnitude component positive;
    elongation is sqrt(lambda1/lambda2).  Nearly isotropic blobs
    (lambda1 ~ lambda2) are flagged unreliable.
    """
    if blob.volume < 2 or np.count_nonzero(blob.intensities > 0) < 2:
        raise ValueError("principal axis needs at least 2 voxels with positive intensity")
    w = blob.intensities
    pos = blob.voxels[:, [2, 1, 0]].astype(np.float64)  # (x, y, z)
    total = w.sum()
    mean = (w[:, None] * pos).sum(axis=0) / total
    d = pos - mean
    cov = (w[:, None, None] * d[:, :, None] * d[:, None, :]).sum(axis=0) / total
    evals, evecs = np.linalg.eigh(cov)
    lam1, lam2 = float(evals[-1]), float(evals[-2])
    axis = evecs[:, -1]
    i = int(np.argmax(np.abs(axis)))
    if axis[i] < 0:
        axis = -axis
    elong = float(np.sqrt(lam1 / lam2)) if lam2 > 0 else float("inf")
    reliable = (lam1 - lam2) > degenerate_tol * max(lam1, degenerate_tol)
    return AxisEstimate(axis=axis, elongation=elong, reliable=reliable)


def extract_particles(
    v: SparseVolume,
    rel_tol: float,
    min_vox: int,
    with_orientation: bool = False,
) -> list[ParticleDetection]:
    """Threshold, label, filter and reduce a volume to particle detections."""
    g = v.geom
    blobs = filter_min_volume(connected_components(threshold_volume(v, rel_tol)), min_vox)
    out = []
    for bid, blob in enumerate(blobs):
        cx, cy, cz = weighted_centroid(blob)
        det = ParticleDetection(
            blob_id=bid,
            x_vox=cx,
            y_vox=cy,
            z_vox=cz,
            x=cx * g.pitch,
            y=cy * g.pitch,
            z=g.z0 + cz * g.dz,
            volume=blob.volume,
            peak_intensity=blob.peak_intensity,
        )
        if with_orientation and blob.volume >= 2:
            est = principal_axis(blob)
            if est.reliable:
                det.axis = est.axis
                det.elongation = est.elongation
        out.append(det)
    return out


def peak_depth_particles(v: SparseVolume, min_pixels: int = 3) -> list[ParticleDetection]:
    """Localize particles in a single-voxel-per-pixel volume (simple method).

    The simple reconstruction keeps one voxel per surviving lateral pixel,
    so its depth map is too scattered for 3D connectivity.  This groups the
    voxels by 8-connected lateral footprint, takes the intensity-weighted
    lateral centroid, and reads the depth off the brightest pixel of each
    footprint (peak-intensity depth).
    """
    g = v.geom
    lateral: dict[tuple[int, int], tuple[float, int]] = {}
    for k, p in enumerate(v.planes):
        for r, c, val in zip(p.rows.tolist(), p.cols.tolist(), np.abs(p.values).tolist()):
            key = (r, c)
            old = lateral.get(key)
            if old is None or val > old[0]:
                lateral[key] = (val, k)
    label: dict[tuple[int, int], int] = {}
    groups: list[list[tuple[int, int]]] = []
    for start in sorted(lateral):
        if start in label:
            continue
        lab = len(groups)
        members: list[tuple[int, int]] = []
        queue = deque([start])
        label[start] = lab
        while queue:
            r, c = queue.popleft()
            members.append((r, c))
            for di in (-1, 0, 1):
                for dj in (-1, 0, 1):
                    if di == dj == 0:
                        continue
                    nb = (r + di, c + dj)
                    if nb in lateral and nb not in label:
                        label[nb] = lab
                        queue.append(nb)
        groups.append(members)
    out = []
    bid = 0
    for members in groups:
        if len(members) < min_pixels:
            continue
        w = np.array([lateral[m][0] for m in members])
        rr = np.array([m[0] for m in members], dtype=np.float64)
        cc = np.array([m[1] for m in members], dtype=np.float64)
        total = w.sum()
        cx = float((w * cc).sum() / total)
        cy = float((w * rr).sum() / total)
        peak = int(np.argmax(w))
        kz = lateral[members[peak]][1]
        out.append(
            ParticleDetection(
                blob_id=bid,
                x_vox=cx,
                y_vox=cy,
                z_vox=float(kz),
                x=cx * g.pitch,
                y=cy * g.pitch,
                z=g.z0 + kz * g.dz,
                volume=len(members),
                peak_intensity=float(w.max()),
            )
        )
        bid += 1
    return out
