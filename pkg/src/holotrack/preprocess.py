"""Hologram preprocessing: background removal and residual formation.

The sliding-window background method subtracts the local temporal mean and
divides by its square root; each frame's own contribution is excluded from
the mean so a transient does not bias its own background estimate.
"""

from __future__ import annotations

import numpy as np

__all__ = ["preprocess_background", "invert_residual"]

_MEAN_FLOOR = 1e-12


def preprocess_background(images: np.ndarray, window: int = 151) -> np.ndarray:
    """(I - M) / sqrt(M) with M the sliding-window temporal mean.

    ``images`` is a (T, ny, nx) stack; the window is centered and truncated
    at the stack ends, and excludes the current frame.  ``window`` must be
    odd, at least 3, and no longer than the stack.
    """
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 3:
        raise ValueError(f"expected a (T, ny, nx) stack, got shape {images.shape}")
    T = images.shape[0]
    if window % 2 != 1 or window < 3 or window > T:
        raise ValueError(f"window must be odd, >= 3 and <= {T}, got {window}")
    half = window // 2
    csum = np.concatenate([np.zeros((1,) + images.shape[1:]), np.cumsum(images, axis=0)])
    out = np.empty_like(images)
    for t in range(T):
        lo = max(0, t - half)
        hi = min(T, t + half + 1)
        mean = (csum[hi] - csum[lo] - images[t]) / (hi - lo - 1)
        out[t] = (images[t] - mean) / np.sqrt(np.maximum(mean, _MEAN_FLOOR))
    return out


def invert_residual(image: np.ndarray, normalize: bool = True) -> np.ndarray:
    """Residual of a single hologram: 1 - I (optionally I scaled to unit mean).

    Opaque objects darken the hologram, so the residual is positive where
    the linearized object term is.
    """
    image = np.asarray(image, dtype=np.float64)
    if normalize:
        m = image.mean()
        if m <= 0:
            raise ValueError("image mean must be positive to normalize")
        return 1.0 - image / m
    return 1.0 - image
