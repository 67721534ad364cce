"""Accelerated proximal-gradient reconstruction of sparse volumes.

Minimizes ||Hx - b||_2^2 + lambda_l1*||x||_1 + lambda_tv*||x||_TV over a
volume x stored sparsely, where H is the multi-plane propagation operator
from :mod:`holotrack.optics`.  Also provides the simple reference method
(back-propagate, global threshold, peak-intensity depth) used for
comparisons.

Two compute paths share one outer loop: the default complex path, and a
faster real-nonnegative path that restricts the operator to real volumes
and works on half-spectrum transforms.  Dense data exists only in chunks of
``dense_plane_budget`` planes at a time; iterates live in sparse storage.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .optics import ComplexField2D, TransferLadder, VolumeGeometry
from .prox import RegularizerWeights, prox_l1, prox_tv_2d, tv_norm_2d
from .sparsevol import SparsePlane, SparseVolume, axpy, from_dense

__all__ = [
    "SolverConfig",
    "SolveReport",
    "DivergenceError",
    "fista",
    "baseline_reconstruct",
    "estimate_operator_norm",
]

DIVERGENCE_FACTOR = 1e6


@dataclass
class SolverConfig:
    weights: RegularizerWeights = field(default_factory=lambda: RegularizerWeights(0.5, 0.2))
    max_iters: int = 100
    tv_inner_iters: int = 5
    step_policy: str = "backtracking"  # "backtracking" | "fixed"
    step_size: float | None = None  # None: estimate from operator norm
    bt_shrink: float = 0.5
    stop_tol: float = 0.0  # 0 disables early stopping
    log_objective: bool = True
    real_nonnegative: bool = False
    dtype: str = "float64"  # "float64" | "float32" compute precision
    dense_plane_budget: int = 16

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.step_size is not None and self.step_size <= 0:
            raise ValueError(f"step_size must be positive, got {self.step_size}")
        if not 0.0 < self.bt_shrink < 1.0:
            raise ValueError(f"bt_shrink must be in (0, 1), got {self.bt_shrink}")
        if self.step_policy not in ("backtracking", "fixed"):
            raise ValueError(f"unknown step_policy {self.step_policy!r}")
        if self.tv_inner_iters < 1:
            raise ValueError(f"tv_inner_iters must be >= 1, got {self.tv_inner_iters}")
        if self.dtype not in ("float64", "float32"):
            raise ValueError(f"dtype must be float64 or float32, got {self.dtype!r}")
        if self.dense_plane_budget < 1:
            raise ValueError("dense_plane_budget must be >= 1")
        if self.stop_tol < 0:
            raise ValueError("stop_tol must be nonnegative")


@dataclass
class SolveReport:
    objective: list[float]
    iterations: int
    final_sparsity: float
    wall_time: float
    step_size: float
    restarts: int = 0
    diverged: bool = False

    def history_table(self) -> str:
        """Two-column text table: iteration index and objective value."""
        lines = ["iteration\tobjective"]
        lines += [f"{i}\t{v:.10g}" for i, v in enumerate(self.objective)]
        return "\n".join(lines) + "\n"


class DivergenceError(RuntimeError):
    def __init__(self, message: str, report: SolveReport):
        super().__init__(message)
        self.report = report


class _ComplexEngine:
    """Full-spectrum operator on complex plane stacks."""

    real = False

    def __init__(self, geom: VolumeGeometry, dtype: str):
        self.geom = geom
        self.cdtype = np.complex128 if dtype == "float64" else np.complex64
        self._ladder = TransferLadder(geom)

    def transfer(self, k0: int, k1: int, conj: bool) -> np.ndarray:
        return self._ladder.stack(k0, k1, conj=conj).astype(self.cdtype)

    def spectrum(self, plane: np.ndarray) -> np.ndarray:
        return np.fft.fft2(plane)

    def forward_sparse(self, vol: list[SparsePlane], chunk: int) -> np.ndarray:
        geom = self.geom
        spec = np.zeros(geom.plane_shape, dtype=self.cdtype)
        for k0 in range(0, geom.nz, chunk):
            k1 = min(geom.nz, k0 + chunk)
            if all(vol[k].nnz == 0 for k in range(k0, k1)):
                continue
            Hs = self.transfer(k0, k1, conj=True)
            for i, k in enumerate(range(k0, k1)):
                if vol[k].nnz == 0:
                    continue
                dense = np.zeros(geom.plane_shape, dtype=self.cdtype)
                dense[vol[k].rows, vol[k].cols] = vol[k].values
                spec += np.fft.fft2(dense) * Hs[i]
        return np.fft.ifft2(spec).real

    def gradient_chunks(self, residual: np.ndarray, chunk: int):
        """Yield (k0, k1, grad_chunk) for 2*H*(residual), chunk by chunk."""
        R = np.fft.fft2(residual.astype(self.cdtype))
        for k0 in range(0, self.geom.nz, chunk):
            k1 = min(self.geom.nz, k0 + chunk)
            Hs = self.transfer(k0, k1, conj=False)
            yield k0, k1, 2.0 * np.fft.ifft2(Hs * R[np.newaxis], axes=(-2, -1))

    def densify(self, plane: SparsePlane) -> np.ndarray:
        out = np.zeros(self.geom.plane_shape, dtype=self.cdtype)
        out[plane.rows, plane.cols] = plane.values
        return out

    def prox(self, cand: np.ndarray, tau_l1: float, tau_tv: float, inner: int) -> np.ndarray:
        if tau_tv > 0:
            w = prox_tv_2d(cand.real, tau_tv, inner) + 1j * prox_tv_2d(cand.imag, tau_tv, inner)
        else:
            w = cand
        return prox_l1(w, tau_l1)

    def plane_penalty(self, plane: SparsePlane, lam_l1: float, lam_tv: float) -> float:
        val = lam_l1 * float(np.sum(np.abs(plane.values)))
        if lam_tv > 0 and plane.nnz:
            dense = self.densify(plane)
            val += lam_tv * (tv_norm_2d(dense.real) + tv_norm_2d(dense.imag))
        return val


class _RealEngine:
    """Half-spectrum operator restricted to real nonnegative volumes.

    For real plane stacks the real part of the propagated sum only sees the
    cosine of each plane's transfer phase, so the whole pipeline runs on
    rfft half-spectra with a real cosine stack, built once per solve by a
    float64 angle-addition recurrence.
    """

    real = True

    def __init__(self, geom: VolumeGeometry, dtype: str):
        self.geom = geom
        self.rdtype = np.float64 if dtype == "float64" else np.float32
        fy = np.fft.fftfreq(geom.ny, d=geom.pitch)
        fx = np.fft.rfftfreq(geom.nx, d=geom.pitch)
        FY, FX = np.meshgrid(fy, fx, indexing="ij")
        arg = 1.0 - (geom.wavelength * FY) ** 2 - (geom.wavelength * FX) ** 2
        mask = arg >= 0
        s = np.sqrt(np.where(mask, arg, 0.0))
        c = np.cos(2 * np.pi * (geom.z0 / geom.wavelength) * s) * mask
        sn = np.sin(2 * np.pi * (geom.z0 / geom.wavelength) * s) * mask
        cG = np.cos(2 * np.pi * (geom.dz / geom.wavelength) * s)
        sG = np.sin(2 * np.pi * (geom.dz / geom.wavelength) * s)
        C = np.empty((geom.nz,) + c.shape, dtype=self.rdtype)
        for k in range(geom.nz):
            C[k] = c
            c, sn = c * cG - sn * sG, c * sG + sn * cG
        self._C = C

    def forward_sparse(self, vol: list[SparsePlane], chunk: int) -> np.ndarray:
        geom = self.geom
        spec = np.zeros(self._C.shape[1:], dtype=np.complex128 if self.rdtype == np.float64 else np.complex64)
        for k in range(geom.nz):
            if vol[k].nnz == 0:
                continue
            dense = np.zeros(geom.plane_shape, dtype=self.rdtype)
            dense[vol[k].rows, vol[k].cols] = vol[k].values.real
            spec += np.fft.rfft2(dense) * self._C[k]
        return np.fft.irfft2(spec, s=geom.plane_shape).astype(self.rdtype)

    def gradient_chunks(self, residual: np.ndarray, chunk: int):
        R = np.fft.rfft2(residual.astype(self.rdtype))
        for k0 in range(0, self.geom.nz, chunk):
            k1 = min(self.geom.nz, k0 + chunk)
            g = np.fft.irfft2(self._C[k0:k1] * R[np.newaxis], s=self.geom.plane_shape, axes=(-2, -1))
            yield k0, k1, 2.0 * g.astype(self.rdtype)

    def densify(self, plane: SparsePlane) -> np.ndarray:
        out = np.zeros(self.geom.plane_shape, dtype=self.rdtype)
        out[plane.rows, plane.cols] = plane.values.real
        return out

    def prox(self, cand: np.ndarray, tau_l1: float, tau_tv: float, inner: int) -> np.ndarray:
        w = prox_tv_2d(cand, tau_tv, inner) if tau_tv > 0 else cand
        # one-sided soft threshold: exact proximal of l1 + nonnegativity
        return np.maximum(w - tau_l1, 0.0)

    def plane_penalty(self, plane: SparsePlane, lam_l1: float, lam_tv: float) -> float:
        val = lam_l1 * float(np.sum(plane.values.real))
        if lam_tv > 0 and plane.nnz:
            val += lam_tv * tv_norm_2d(self.densify(plane))
        return val


def _make_engine(geom: VolumeGeometry, cfg: SolverConfig):
    if cfg.real_nonnegative:
        return _RealEngine(geom, cfg.dtype)
    return _ComplexEngine(geom, cfg.dtype)


def estimate_operator_norm(
    geom: VolumeGeometry, iters: int = 10, seed: int = 0, real: bool = False, dtype: str = "float64"
) -> float:
    """Power-iteration estimate of ||H||^2 for the given geometry."""
    cfg = SolverConfig(real_nonnegative=real, dtype=dtype)
    eng = _make_engine(geom, cfg)
    rng = np.random.default_rng(seed)
    shape = (geom.nz,) + geom.plane_shape
    if real:
        v = rng.standard_normal(shape).astype(eng.rdtype)
    else:
        v = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)).astype(eng.cdtype)
    v /= np.linalg.norm(v)
    nrm = 1.0
    for _ in range(iters):
        planes = [from_dense(v[k]) for k in range(geom.nz)]
        hx = eng.forward_sparse(planes, chunk=geom.nz)
        w = np.empty_like(v)
        for k0, k1, g in eng.gradient_chunks(hx, chunk=64):
            w[k0:k1] = g / 2.0
        nrm = float(np.linalg.norm(w))
        v = w / nrm
    return nrm


def _sparsify_real(chunk_planes: np.ndarray) -> list[SparsePlane]:
    return [from_dense(chunk_planes[i]) for i in range(chunk_planes.shape[0])]


def fista(b: ComplexField2D, geom: VolumeGeometry, cfg: SolverConfig) -> tuple[SparseVolume, SolveReport]:
    """Reconstruct a sparse volume from the hologram residual b.

    The outer loop is standard accelerated proximal descent: extrapolate
    with momentum, take a gradient step on the data term, apply the
    fused-lasso proximal with thresholds tau = lambda * step, and keep the
    result sparse.  Momentum restarts whenever the recorded objective would
    increase, which keeps the recorded history non-increasing under
    backtracking.

    Raises :class:`DivergenceError` when the objective exceeds 1e6 times its
    initial value.
    """
    if b.values.shape != geom.plane_shape:
        raise ValueError(f"hologram shape {b.values.shape} does not match geometry {geom.plane_shape}")
    t_start = time.perf_counter()
    eng = _make_engine(geom, cfg)
    chunk = cfg.dense_plane_budget
    lam_l1, lam_tv = cfg.weights.lambda_l1, cfg.weights.lambda_tv

    bb = b.values.real.astype(eng.rdtype if eng.real else np.float64)

    if cfg.step_size is not None:
        step = float(cfg.step_size)
    else:
        sigma2 = estimate_operator_norm(geom, real=eng.real, dtype=cfg.dtype)
        step = 1.0 / (2.0 * sigma2) if sigma2 > 0 else 1.0

    def penalty(planes: list[SparsePlane]) -> float:
        return sum(eng.plane_penalty(p, lam_l1, lam_tv) for p in planes)

    def data_term(planes: list[SparsePlane]) -> float:
        r = eng.forward_sparse(planes, chunk) - bb
        return float(np.sum((r * r).astype(np.float64)))

    x = SparseVolume.zeros(geom)
    x_prev = x
    t_mom = 1.0
    f0 = float(np.sum((bb * bb).astype(np.float64)))  # objective at x0 = 0
    history: list[float] = []
    last_obj = f0
    restarts = 0

    def iterate_from(y_planes: list[SparsePlane], step_local: float):
        """One proximal-gradient step from extrapolation point y.

        Returns (planes, f_new, f_y, step_used)."""
        hy = eng.forward_sparse(y_planes, chunk)
        residual = hy - bb
        f_y = float(np.sum((residual * residual).astype(np.float64)))
        while True:
            new_planes: list[SparsePlane] = [None] * geom.nz  # type: ignore[list-item]
            ip = 0.0  # Re<grad, x_new - y>
            dx2 = 0.0  # ||x_new - y||^2
            for k0, k1, grad in eng.gradient_chunks(residual, chunk):
                yd = np.stack([eng.densify(y_planes[k]) for k in range(k0, k1)])
                cand = yd - step_local * grad.astype(yd.dtype)
                xa = eng.prox(cand, step_local * lam_l1, step_local * lam_tv, cfg.tv_inner_iters)
                dx = xa - yd
                if eng.real:
                    ip += float(np.sum((grad * dx).astype(np.float64)))
                    dx2 += float(np.sum((dx * dx).astype(np.float64)))
                else:
                    ip += float(np.sum((grad.conj() * dx).real.astype(np.float64)))
                    dx2 += float(np.sum((dx * dx.conj()).real.astype(np.float64)))
                for i, k in enumerate(range(k0, k1)):
                    new_planes[k] = from_dense(xa[i])
            f_new = data_term(new_planes)
            if cfg.step_policy != "backtracking":
                return new_planes, f_new, f_y, step_local
            bound = f_y + ip + dx2 / (2.0 * step_local)
            if f_new <= bound + 1e-12 * max(1.0, abs(bound)) or step_local < 1e-30:
                return new_planes, f_new, f_y, step_local
            step_local *= cfg.bt_shrink

    for it in range(cfg.max_iters):
        tn = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_mom * t_mom))
        beta = (t_mom - 1.0) / tn
        if beta != 0.0:
            y_vol = axpy(-beta, x_prev, x.scaled(1.0 + beta))
            y_planes = y_vol.planes
        else:
            y_planes = x.planes
        new_planes, f_new, f_y, step = iterate_from(y_planes, step)
        obj = f_new + penalty(new_planes)
        if obj > last_obj and it > 0:
            # adaptive restart: drop momentum, step from the previous iterate
            restarts += 1
            t_mom = 1.0
            tn = 1.0
            new_planes, f_new, f_y, step = iterate_from(x.planes, step)
            obj = f_new + penalty(new_planes)
            if obj > last_obj:
                # keep the previous iterate; records stay monotone
                new_planes = x.planes
                obj = last_obj
        x_prev = x
        x = SparseVolume(list(new_planes), geom)
        t_mom = tn
        history.append(obj)
        if obj > DIVERGENCE_FACTOR * max(f0, 1e-300):
            report = SolveReport(
                objective=history,
                iterations=it + 1,
                final_sparsity=1.0 - x.nnz / geom.n_voxels,
                wall_time=time.perf_counter() - t_start,
                step_size=step,
                restarts=restarts,
                diverged=True,
            )
            raise DivergenceError(f"objective diverged at iteration {it}", report)
        if cfg.stop_tol > 0 and last_obj > 0:
            if abs(last_obj - obj) / max(last_obj, 1e-300) < cfg.stop_tol:
                last_obj = obj
                break
        last_obj = obj

    report = SolveReport(
        objective=history if cfg.log_objective else [],
        iterations=len(history),
        final_sparsity=1.0 - x.nnz / geom.n_voxels,
        wall_time=time.perf_counter() - t_start,
        step_size=step,
        restarts=restarts,
    )
    return x, report


def baseline_reconstruct(b: ComplexField2D, geom: VolumeGeometry, threshold: float) -> SparseVolume:
    """Simple reference method: global threshold plus peak-intensity depth.

    Back-propagates b to every plane, keeps lateral pixels whose maximal
    intensity along z reaches ``threshold`` times the volume-wide maximum,
    and stores for each surviving pixel only the voxel on its brightest
    plane.
    """
    if not 0.0 < threshold <= 1.0:
        raise ValueError(f"threshold must be in (0, 1], got {threshold}")
    if b.values.shape != geom.plane_shape:
        raise ValueError(f"hologram shape {b.values.shape} does not match geometry {geom.plane_shape}")
    ladder = TransferLadder(geom)
    R = np.fft.fft2(b.values)
    best_i = np.zeros(geom.plane_shape)
    best_k = np.zeros(geom.plane_shape, dtype=np.int32)
    best_v = np.zeros(geom.plane_shape, dtype=np.complex128)
    for k0 in range(0, geom.nz, 16):
        k1 = min(geom.nz, k0 + 16)
        Hs = ladder.stack(k0, k1)
        fields = np.fft.ifft2(Hs * R[np.newaxis], axes=(-2, -1))
        for i, k in enumerate(range(k0, k1)):
            inten = np.abs(fields[i]) ** 2
            better = inten > best_i
            best_i[better] = inten[better]
            best_k[better] = k
            best_v[better] = fields[i][better]
    gmax = float(best_i.max())
    vol = SparseVolume.zeros(geom)
    if gmax == 0.0:
        return vol
    keep = best_i >= threshold * gmax
    iy, ix = np.nonzero(keep)
    order_k = best_k[iy, ix]
    for k in range(geom.nz):
        sel = order_k == k
        if not np.any(sel):
            continue
        rows = iy[sel].astype(np.int32)
        cols = ix[sel].astype(np.int32)
        vals = best_v[iy[sel], ix[sel]]
        lin = rows.astype(np.int64) * geom.nx + cols
        srt = np.argsort(lin)
        vol.planes[k] = SparsePlane(rows[srt], cols[srt], vals[srt], geom.plane_shape)
    return vol
