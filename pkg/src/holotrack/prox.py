"""Regularization penalties and their proximal operators.

Implements elementwise soft thresholding for the l1 penalty, the isotropic
2D total-variation proximal via fast gradient projection on the dual, and
the fused-lasso proximal as soft thresholding of the TV solution.  TV of a
complex plane acts on real and imaginary parts independently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "RegularizerWeights",
    "l1_norm",
    "tv_norm_2d",
    "tv_norm",
    "prox_l1",
    "prox_tv_2d",
    "prox_fl",
]


@dataclass(frozen=True)
class RegularizerWeights:
    """Fused-lasso weights: lambda_l1 for sparsity, lambda_tv for smoothness."""

    lambda_l1: float
    lambda_tv: float

    def __post_init__(self):
        if self.lambda_l1 < 0 or self.lambda_tv < 0:
            raise ValueError(f"regularizer weights must be nonnegative, got {self}")


def l1_norm(plane) -> float:
    """Sum of complex moduli over the plane."""
    return float(np.sum(np.abs(plane)))


def _backward_diffs(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # backward differences with replicated edges: first row/col differences are 0
    dy = np.zeros_like(x)
    dx = np.zeros_like(x)
    dy[..., 1:, :] = x[..., 1:, :] - x[..., :-1, :]
    dx[..., :, 1:] = x[..., :, 1:] - x[..., :, :-1]
    return dy, dx


def _diffs_adjoint(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    # adjoint of _backward_diffs: out[i,j] = p[i,j]-p[i+1,j] + q[i,j]-q[i,j+1]
    out = p.copy()
    out[..., :-1, :] -= p[..., 1:, :]
    out += q
    out[..., :, :-1] -= q[..., :, 1:]
    return out


def tv_norm_2d(plane) -> float:
    """Isotropic total variation of a real plane.

    Sum over pixels of sqrt of the two squared backward differences,
    out-of-range neighbors replicated (zero difference on the first
    row/column).
    """
    plane = np.asarray(plane)
    if np.iscomplexobj(plane):
        raise ValueError("tv_norm_2d expects a real plane; use tv_norm for complex data")
    dy, dx = _backward_diffs(plane.astype(np.float64))
    return float(np.sum(np.sqrt(dy * dy + dx * dx)))


def tv_norm(plane) -> float:
    """TV of a possibly complex plane: real and imaginary parts separately."""
    plane = np.asarray(plane)
    if np.iscomplexobj(plane):
        return tv_norm_2d(plane.real) + tv_norm_2d(plane.imag)
    return tv_norm_2d(plane)


def prox_l1(v: np.ndarray, tau: float) -> np.ndarray:
    """Soft thresholding: shrink the modulus by tau, keep the phase.

    Elements with |v| <= tau become exact zeros.
    """
    if tau < 0:
        raise ValueError(f"tau must be nonnegative, got {tau}")
    v = np.asarray(v)
    if tau == 0:
        return v.copy()
    a = np.abs(v)
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(a > tau, 1.0 - tau / a, 0.0)
    return v * scale


def _tv_objective(x: np.ndarray, v: np.ndarray, tau: float) -> float:
    d = (x - v).ravel()
    return tau * tv_norm_2d(x) + 0.5 * float(np.dot(d, d))


def prox_tv_2d(v: np.ndarray, tau: float, inner_iters: int = 5) -> np.ndarray:
    """Approximate argmin_x tau*TV(x) + 0.5*||x - v||^2 for real planes.

    Fast gradient projection on the dual (paired isotropic projection of the
    difference field), run for ``inner_iters`` iterations.  The returned
    plane never has a larger objective than ``v`` itself; stacks of planes
    (..., ny, nx) are processed independently and in parallel.
    """
    if tau < 0:
        raise ValueError(f"tau must be nonnegative, got {tau}")
    if inner_iters < 1:
        raise ValueError(f"inner_iters must be >= 1, got {inner_iters}")
    v = np.asarray(v, dtype=np.float64)
    if tau == 0:
        return v.copy()
    p = np.zeros_like(v)
    q = np.zeros_like(v)
    rp, rq = p, q
    t = 1.0
    step = 1.0 / (8.0 * tau)
    for _ in range(inner_iters):
        u = v - tau * _diffs_adjoint(rp, rq)
        gy, gx = _backward_diffs(u)
        pn = rp + step * gy
        qn = rq + step * gx
        denom = np.maximum(1.0, np.sqrt(pn * pn + qn * qn))
        pn /= denom
        qn /= denom
        tn = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        beta = (t - 1.0) / tn
        rp = pn + beta * (pn - p)
        rq = qn + beta * (qn - q)
        p, q, t = pn, qn, tn
    out = v - tau * _diffs_adjoint(p, q)
    if out.ndim == 2:
        if _tv_objective(out, v, tau) > _tv_objective(v, v, tau):
            return v.copy()
    else:
        # stacked planes: guard each plane independently
        flat_out = out.reshape(-1, *out.shape[-2:])
        flat_v = v.reshape(-1, *v.shape[-2:])
        for i in range(flat_out.shape[0]):
            if _tv_objective(flat_out[i], flat_v[i], tau) > _tv_objective(flat_v[i], flat_v[i], tau):
                flat_out[i] = flat_v[i]
    return out


def prox_fl(v: np.ndarray, tau_l1: float, tau_tv: float, inner_iters: int = 5) -> np.ndarray:
    """Fused-lasso proximal: soft-threshold the TV proximal's output.

    Complex planes get TV applied to real and imaginary parts separately;
    the l1 shrinkage then acts on the complex modulus.
    """
    v = np.asarray(v)
    if tau_tv > 0:
        if np.iscomplexobj(v):
            w = prox_tv_2d(v.real, tau_tv, inner_iters) + 1j * prox_tv_2d(v.imag, tau_tv, inner_iters)
        else:
            w = prox_tv_2d(v, tau_tv, inner_iters)
    else:
        w = v
    return prox_l1(w, tau_l1)
