"""Ground-truth scene generation and nonlinear hologram rendering.

Scenes hold particles with continuous positions; rendering treats each
particle as an opaque amplitude mask (disk, or rectangle for oriented
rods), propagates every mask to the sensor at its exact depth, and returns
the full nonlinear intensity |1 - sum of scattered fields|^2, so twin-image
and cross-interference terms are present as model error for the linear
solver.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .optics import VolumeGeometry

__all__ = [
    "Particle",
    "Scene",
    "generate_scene",
    "advect_scene",
    "render_hologram",
    "add_noise",
    "shadow_density",
]


@dataclass
class Particle:
    x: float  # meters
    y: float
    z: float  # distance from the sensor
    diameter: float
    opacity: float = 1.0
    orientation: np.ndarray | None = None  # unit 3-vector for rods
    length: float | None = None  # rod length; None for spheres

    def __post_init__(self):
        if self.diameter <= 0:
            raise ValueError(f"particle diameter must be positive, got {self.diameter}")
        if not 0.0 <= self.opacity <= 1.0:
            raise ValueError(f"opacity must be in [0, 1], got {self.opacity}")
        if self.orientation is not None:
            self.orientation = np.asarray(self.orientation, dtype=np.float64)
            n = np.linalg.norm(self.orientation)
            if abs(n - 1.0) > 1e-9:
                raise ValueError(f"orientation must be unit norm, got |p|={n}")


@dataclass
class Scene:
    particles: list[Particle]
    geom: VolumeGeometry
    rng_seed: int = 0

    def __post_init__(self):
        g = self.geom
        for i, p in enumerate(self.particles):
            if not (0.0 <= p.x <= g.nx * g.pitch and 0.0 <= p.y <= g.ny * g.pitch):
                raise ValueError(f"particle {i} lateral position outside the volume")
            if not (g.z0 <= p.z <= g.z0 + g.nz * g.dz):
                raise ValueError(f"particle {i} depth {p.z} outside [{g.z0}, {g.z0 + g.nz * g.dz}]")

    def positions(self) -> np.ndarray:
        """(n, 3) array of particle centers in meters (x, y, z)."""
        if not self.particles:
            return np.zeros((0, 3))
        return np.array([[p.x, p.y, p.z] for p in self.particles])


def generate_scene(
    n: int,
    geom: VolumeGeometry,
    diameter: float,
    seed: int = 0,
    opacity: float = 1.0,
    margin_planes: int = 0,
) -> Scene:
    """n particles uniformly distributed in the volume, reproducible from seed.

    ``margin_planes`` insets the sampled depth range by that many planes at
    both ends (0 keeps the full volume).
    """
    if n < 0:
        raise ValueError(f"particle count must be nonnegative, got {n}")
    if margin_planes < 0:
        raise ValueError("margin_planes must be nonnegative")
    if n > 0 and 2 * margin_planes >= geom.nz:
        raise ValueError("margin_planes leaves no depth range to sample")
    rng = np.random.default_rng(seed)
    zmin = geom.z0 + margin_planes * geom.dz
    zmax = geom.z0 + (geom.nz - margin_planes) * geom.dz
    particles = [
        Particle(
            x=rng.uniform(0.0, geom.nx * geom.pitch),
            y=rng.uniform(0.0, geom.ny * geom.pitch),
            z=rng.uniform(zmin, zmax),
            diameter=diameter,
            opacity=opacity,
        )
        for _ in range(n)
    ]
    return Scene(particles, geom, rng_seed=seed)


def advect_scene(scene: Scene, velocity_field, dt: float) -> Scene:
    """Forward-Euler step of every particle; positions wrap periodically."""
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    g = scene.geom
    lx, ly, lz = g.nx * g.pitch, g.ny * g.pitch, g.nz * g.dz
    moved = []
    for p in scene.particles:
        v = np.asarray(velocity_field((p.x, p.y, p.z)), dtype=np.float64)
        moved.append(
            replace(
                p,
                x=(p.x + dt * v[0]) % lx,
                y=(p.y + dt * v[1]) % ly,
                z=g.z0 + (p.z + dt * v[2] - g.z0) % lz,
            )
        )
    return Scene(moved, g, rng_seed=scene.rng_seed)


def _particle_mask(p: Particle, geom: VolumeGeometry) -> np.ndarray:
    """Opaque amplitude mask of one particle on the sensor-aligned grid."""
    g = geom
    xs = (np.arange(g.nx) * g.pitch - p.x)[np.newaxis, :]
    ys = (np.arange(g.ny) * g.pitch - p.y)[:, np.newaxis]
    if p.diameter < g.pitch:
        warnings.warn(
            f"particle diameter {p.diameter:g} below pixel pitch {g.pitch:g}; using a single-pixel mask",
            stacklevel=3,
        )
        mask = np.zeros(g.plane_shape)
        iy = int(np.clip(round(p.y / g.pitch), 0, g.ny - 1))
        ix = int(np.clip(round(p.x / g.pitch), 0, g.nx - 1))
        mask[iy, ix] = p.opacity
        return mask
    if p.orientation is None or p.length is None:
        mask = (xs**2 + ys**2) <= (p.diameter / 2.0) ** 2
        return mask.astype(np.float64) * p.opacity
    # rod: rectangle oriented along the lateral projection of the axis
    axis = p.orientation[:2]
    lat = np.linalg.norm(axis)
    proj_len = max(p.length * lat, p.diameter)
    if lat > 1e-12:
        ux, uy = axis / lat
    else:
        ux, uy = 1.0, 0.0
    u = ux * xs + uy * ys
    v = -uy * xs + ux * ys
    mask = (np.abs(u) <= proj_len / 2.0) & (np.abs(v) <= p.diameter / 2.0)
    return mask.astype(np.float64) * p.opacity


def render_hologram(scene: Scene) -> np.ndarray:
    """Nonlinear intensity image |1 - sum of propagated particle masks|^2.

    Each particle is propagated from its exact depth; fields superpose
    before the modulus so cross-interference between particles is included.
    """
    g = scene.geom
    fy = np.fft.fftfreq(g.ny, d=g.pitch)
    fx = np.fft.fftfreq(g.nx, d=g.pitch)
    FY, FX = np.meshgrid(fy, fx, indexing="ij")
    arg = 1.0 - (g.wavelength * FY) ** 2 - (g.wavelength * FX) ** 2
    prop = arg >= 0
    root = np.sqrt(np.where(prop, arg, 0.0))
    spec = np.zeros(g.plane_shape, dtype=np.complex128)
    for p in scene.particles:
        mask = _particle_mask(p, g)
        # distance -z: object plane back to the sensor
        H = np.exp(-1j * 2.0 * np.pi * (p.z / g.wavelength) * root) * prop
        spec += np.fft.fft2(mask) * H
    fld = np.fft.ifft2(spec)
    return np.abs(1.0 - fld) ** 2


def add_noise(image: np.ndarray, gaussian_sigma: float, seed: int = 0) -> np.ndarray:
    """White Gaussian noise, clamped to nonnegative, reproducible from seed."""
    if gaussian_sigma < 0:
        raise ValueError(f"sigma must be nonnegative, got {gaussian_sigma}")
    if gaussian_sigma == 0:
        return np.array(image, copy=True)
    rng = np.random.default_rng(seed)
    return np.maximum(image + rng.normal(0.0, gaussian_sigma, np.shape(image)), 0.0)


def shadow_density(n_s: float, depth: float, d: float) -> float:
    """Fraction of sensor area shadowed: concentration * depth * diameter^2.

    ``n_s`` in 1/m^3, ``depth`` and ``d`` in meters.  Factors are paired to
    keep intermediate magnitudes balanced.
    """
    if n_s < 0 or depth < 0 or d < 0:
        raise ValueError("shadow density inputs must be nonnegative")
    return (n_s * d) * (depth * d)
