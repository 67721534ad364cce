"""Scalar diffraction model.

Angular-spectrum propagation of sampled complex wavefields, plus the linear
sensor operator (object volume -> real hologram residual) and its adjoint.
All propagation is FFT-based with periodic boundary semantics; evanescent
frequency components are truncated to zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ComplexField2D",
    "VolumeGeometry",
    "TransferLadder",
    "transfer_function",
    "propagate",
    "forward",
    "adjoint",
    "data_gradient",
]


@dataclass
class ComplexField2D:
    """A complex wavefield sampled on a uniform square-pixel grid.

    ``values`` is a (height, width) complex array; ``pitch`` is the pixel
    size in meters and ``wavelength`` the illumination wavelength in meters.
    """

    values: np.ndarray
    pitch: float
    wavelength: float

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.complex128)
        if self.values.ndim != 2 or self.values.shape[0] < 1 or self.values.shape[1] < 1:
            raise ValueError(f"field values must be a 2D array, got shape {self.values.shape}")
        if self.pitch <= 0:
            raise ValueError(f"pitch must be positive, got {self.pitch}")
        if self.wavelength <= 0:
            raise ValueError(f"wavelength must be positive, got {self.wavelength}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values contain NaN or Inf")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def copy(self) -> "ComplexField2D":
        return ComplexField2D(self.values.copy(), self.pitch, self.wavelength)


@dataclass(frozen=True)
class VolumeGeometry:
    """Reconstruction volume: nx*ny lateral voxels on nz planes.

    Plane k sits at distance ``z0 + k*dz`` from the sensor, k in [0, nz).
    ``pitch`` is the lateral voxel size (equal to the sensor pixel size).
    """

    nx: int
    ny: int
    nz: int
    pitch: float
    dz: float
    z0: float
    wavelength: float

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1 or self.nz < 1:
            raise ValueError(f"voxel counts must be >= 1, got {(self.nx, self.ny, self.nz)}")
        if self.pitch <= 0 or self.dz <= 0 or self.wavelength <= 0:
            raise ValueError("pitch, dz and wavelength must be positive")
        if self.z0 < 0:
            raise ValueError(f"z0 must be nonnegative, got {self.z0}")

    @property
    def plane_shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    def plane_z(self, k: int) -> float:
        return self.z0 + k * self.dz

    @property
    def n_voxels(self) -> int:
        return self.nx * self.ny * self.nz


def transfer_function(fx, fy, z: float, wavelength: float):
    """Angular-spectrum transfer function at spatial frequency (fx, fy).

    Returns exp(i*2*pi*(z/wavelength)*sqrt(1 - (wavelength*fx)^2 -
    (wavelength*fy)^2)) for propagating components and exactly 0 for
    evanescent ones. Accepts scalars or broadcastable arrays.
    """
    if wavelength <= 0:
        raise ValueError("wavelength must be positive")
    fx = np.asarray(fx, dtype=np.float64)
    fy = np.asarray(fy, dtype=np.float64)
    arg = 1.0 - (wavelength * fx) ** 2 - (wavelength * fy) ** 2
    out = np.zeros(np.broadcast_shapes(fx.shape, fy.shape), dtype=np.complex128)
    prop = arg >= 0.0
    phase = 2.0 * np.pi * (z / wavelength) * np.sqrt(arg, where=prop, out=np.zeros_like(arg))
    np.place(out, prop, np.exp(1j * phase[prop]))
    if out.ndim == 0:
        return complex(out)
    return out


def _transfer_grid(shape: tuple[int, int], pitch: float, wavelength: float, z: float) -> np.ndarray:
    fy = np.fft.fftfreq(shape[0], d=pitch)
    fx = np.fft.fftfreq(shape[1], d=pitch)
    return transfer_function(fx[np.newaxis, :], fy[:, np.newaxis], z, wavelength)


def propagate(fld: ComplexField2D, z: float, pad_factor: int = 1) -> ComplexField2D:
    """Propagate a field by distance z (meters, signed).

    Periodic boundary semantics by default; ``pad_factor=2`` zero-pads to
    twice the extent before transforming and crops afterwards.
    """
    if pad_factor not in (1, 2):
        raise ValueError(f"pad_factor must be 1 or 2, got {pad_factor}")
    ny, nx = fld.values.shape
    if pad_factor == 1:
        work = fld.values
    else:
        work = np.zeros((pad_factor * ny, pad_factor * nx), dtype=np.complex128)
        work[:ny, :nx] = fld.values
    H = _transfer_grid(work.shape, fld.pitch, fld.wavelength, z)
    out = np.fft.ifft2(np.fft.fft2(work) * H)
    if pad_factor != 1:
        out = out[:ny, :nx]
    return ComplexField2D(out, fld.pitch, fld.wavelength)


class TransferLadder:
    """Per-plane transfer functions H(z0 + k*dz), built incrementally.

    One complex multiply per plane instead of a fresh sqrt/exp grid.  The
    forward direction (object plane -> sensor, distance -(z0 + k*dz)) is the
    complex conjugate of the adjoint direction, which keeps the two operator
    applications exactly adjoint in floating point.
    """

    def __init__(self, geom: VolumeGeometry):
        self.geom = geom
        shape = geom.plane_shape
        self._H0 = _transfer_grid(shape, geom.pitch, geom.wavelength, geom.z0)
        self._G = _transfer_grid(shape, geom.pitch, geom.wavelength, geom.dz)

    def stack(self, k0: int, k1: int, conj: bool = False) -> np.ndarray:
        """Transfer functions for planes k0..k1-1 as a (k1-k0, ny, nx) array."""
        out = np.empty((k1 - k0,) + self._H0.shape, dtype=np.complex128)
        Hk = self._H0 * self._G**k0 if k0 else self._H0.copy()
        for i in range(k1 - k0):
            out[i] = Hk
            if i + 1 < k1 - k0:
                Hk *= self._G
        return np.conj(out) if conj else out


def _check_lateral(values: np.ndarray, geom: VolumeGeometry, what: str):
    if values.shape != geom.plane_shape:
        raise ValueError(
            f"{what} shape {values.shape} does not match geometry planes {geom.plane_shape}"
        )


def _volume_planes(x) -> list:
    # duck-typed: SparseVolume (has .planes with .to_dense()) or a (nz, ny, nx) array
    if hasattr(x, "planes"):
        return [p.to_dense() for p in x.planes]
    arr = np.asarray(x)
    return [arr[k] for k in range(arr.shape[0])]


def forward(x, geom: VolumeGeometry, chunk: int = 16) -> ComplexField2D:
    """Apply the linear sensor operator: real field Re{sum_k P(-z_k) x_k}.

    ``x`` is a sparse volume (or a dense (nz, ny, nx) stack) matching
    ``geom``.  Planes are accumulated in frequency space in fixed k order so
    the reduction is deterministic.
    """
    planes = _volume_planes(x)
    if len(planes) != geom.nz:
        raise ValueError(f"volume has {len(planes)} planes, geometry expects {geom.nz}")
    ladder = TransferLadder(geom)
    spec = np.zeros(geom.plane_shape, dtype=np.complex128)
    for k0 in range(0, geom.nz, chunk):
        k1 = min(geom.nz, k0 + chunk)
        block = np.empty((k1 - k0,) + geom.plane_shape, dtype=np.complex128)
        for i, k in enumerate(range(k0, k1)):
            pk = planes[k]
            if pk.shape != geom.plane_shape:
                raise ValueError(
                    f"plane {k} shape {pk.shape} does not match geometry {geom.plane_shape}"
                )
            block[i] = pk
        Hs = ladder.stack(k0, k1, conj=True)
        spec += (np.fft.fft2(block, axes=(-2, -1)) * Hs).sum(axis=0)
    out = np.fft.ifft2(spec).real.astype(np.complex128)
    return ComplexField2D(out, geom.pitch, geom.wavelength)


def adjoint(r: ComplexField2D, geom: VolumeGeometry, chunk: int = 16) -> np.ndarray:
    """Adjoint of :func:`forward`: back-propagate r to every plane.

    Returns a dense (nz, ny, nx) complex stack with plane k propagated by
    +(z0 + k*dz).  For a real-valued r this is the exact floating-point
    adjoint of the forward operator under the real inner product.
    """
    _check_lateral(r.values, geom, "sensor field")
    ladder = TransferLadder(geom)
    R = np.fft.fft2(r.values)
    out = np.empty((geom.nz,) + geom.plane_shape, dtype=np.complex128)
    for k0 in range(0, geom.nz, chunk):
        k1 = min(geom.nz, k0 + chunk)
        Hs = ladder.stack(k0, k1)
        out[k0:k1] = np.fft.ifft2(Hs * R[np.newaxis, :, :], axes=(-2, -1))
    return out


def data_gradient(x, b: ComplexField2D, geom: VolumeGeometry, chunk: int = 16) -> np.ndarray:
    """Gradient of ||Hx - b||_2^2 with respect to x: 2 H*(Hx - b)."""
    hx = forward(x, geom, chunk=chunk)
    _check_lateral(b.values, geom, "hologram")
    res = ComplexField2D(hx.values - b.values, b.pitch, b.wavelength)
    return 2.0 * adjoint(res, geom, chunk=chunk)
