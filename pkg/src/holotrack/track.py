"""Temporal linking of detections into trajectories, smoothing, rotation.

Linking is greedy mutual-nearest-neighbor per frame pair with a maximum
displacement; a missed detection terminates a track (no gap closing).
Smoothing offers a local-least-squares polynomial filter with truncated
windows at the track ends, or 1D total-variation denoising per coordinate.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .prox import prox_tv_2d

__all__ = [
    "Trajectory",
    "link_frames",
    "filter_min_duration",
    "smooth_trajectory",
    "rotation_rate",
]


@dataclass
class Trajectory:
    """Time-ordered samples of one tracked particle.

    ``frames`` are strictly increasing with unit gaps; ``positions`` is an
    (n, 3) array in meters; ``orientations`` is an (n, 3) array of unit
    vectors or None when the detections carried no orientation.
    """

    id: int
    frames: list[int]
    positions: np.ndarray
    orientations: np.ndarray | None = None

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(len(self.frames), 3)
        diffs = np.diff(self.frames)
        if len(diffs) and not np.all(diffs == 1):
            raise ValueError("trajectory frames must be consecutive")

    def __len__(self) -> int:
        return len(self.frames)

    def velocities(self) -> np.ndarray:
        """(n-1, 3) forward-difference velocities in position units per frame."""
        return np.diff(self.positions, axis=0)


def _position(det) -> tuple[float, float, float]:
    if hasattr(det, "x"):
        return (det.x, det.y, det.z)
    return (det[0], det[1], det[2])


def _orientation(det):
    return getattr(det, "axis", None)


def link_frames(frames, max_disp: float) -> list[Trajectory]:
    """Link per-frame detection lists into trajectories.

    A link requires the pair to be mutual nearest neighbors no farther than
    ``max_disp`` apart; equidistant candidates resolve to the lowest index.
    Every detection belongs to at most one trajectory.
    """
    if max_disp <= 0:
        raise ValueError(f"max_disp must be positive, got {max_disp}")
    finished: list[Trajectory] = []
    open_tracks: list[dict] = []
    next_id = 0

    def start(det, t):
        nonlocal next_id
        tr = {
            "id": next_id,
            "frames": [t],
            "pos": [np.array(_position(det), dtype=np.float64)],
            "ori": [_orientation(det)],
        }
        next_id += 1
        open_tracks.append(tr)

    def close(tr):
        ori = None
        if all(o is not None for o in tr["ori"]):
            ori = np.array([np.asarray(o, dtype=np.float64) for o in tr["ori"]])
        finished.append(
            Trajectory(id=tr["id"], frames=tr["frames"], positions=np.array(tr["pos"]), orientations=ori)
        )

    for t, dets in enumerate(frames):
        dets = list(dets)
        if not open_tracks:
            for det in dets:
                start(det, t)
            continue
        if not dets:
            for tr in open_tracks:
                close(tr)
            open_tracks = []
            continue
        A = np.array([tr["pos"][-1] for tr in open_tracks])
        B = np.array([_position(d) for d in dets])
        D = np.linalg.norm(A[:, None, :] - B[None, :, :], axis=2)
        nearest_b = D.argmin(axis=1)
        nearest_a = D.argmin(axis=0)
        matched_a = set()
        matched_b = set()
        for i in range(len(open_tracks)):
            j = int(nearest_b[i])
            if int(nearest_a[j]) == i and D[i, j] <= max_disp:
                tr = open_tracks[i]
                tr["frames"].append(t)
                tr["pos"].append(B[j])
                tr["ori"].append(_orientation(dets[j]))
                matched_a.add(i)
                matched_b.add(j)
        still_open = []
        for i, tr in enumerate(open_tracks):
            if i in matched_a:
                still_open.append(tr)
            else:
                close(tr)
        open_tracks = still_open
        for j, det in enumerate(dets):
            if j not in matched_b:
                start(det, t)
    for tr in open_tracks:
        close(tr)
    finished.sort(key=lambda tr: tr.id)
    return finished


def filter_min_duration(trajs: list[Trajectory], min_frames: int) -> list[Trajectory]:
    """Keep trajectories with at least min_frames samples."""
    if min_frames < 1:
        raise ValueError(f"min_frames must be >= 1, got {min_frames}")
    return [tr for tr in trajs if len(tr) >= min_frames]


def _savgol_truncated(y: np.ndarray, window: int, order: int) -> np.ndarray:
    """Local polynomial least squares; windows truncate at the ends."""
    n = len(y)
    half = (window - 1) // 2
    out = np.empty_like(y)
    for i in range(n):
        lo = max(0, i - half)
        hi = min(n, i + (window - half))
        t = np.arange(lo, hi, dtype=np.float64) - i
        V = np.vander(t, order + 1, increasing=True)
        coef, *_ = np.linalg.lstsq(V, y[lo:hi], rcond=None)
        out[i] = coef[0]
    return out


def smooth_trajectory(
    traj: Trajectory,
    method: str = "savitzky_golay",
    window: int = 20,
    order: int = 2,
    weight: float = 0.0,
    tv_iters: int = 200,
) -> Trajectory:
    """Replace positions with filtered values; frames are unchanged."""
    pos = traj.positions.copy()
    if method == "savitzky_golay":
        if order < 1:
            raise ValueError("polynomial order must be >= 1")
        if window > len(traj):
            warnings.warn(
                f"track {traj.id} shorter than window {window}; returned unsmoothed", stacklevel=2
            )
            return Trajectory(traj.id, list(traj.frames), pos, traj.orientations)
        for c in range(3):
            pos[:, c] = _savgol_truncated(pos[:, c], window, order)
    elif method == "tv":
        if weight < 0:
            raise ValueError("tv weight must be nonnegative")
        if weight > 0:
            for c in range(3):
                pos[:, c] = prox_tv_2d(pos[:, c].reshape(-1, 1), weight, tv_iters)[:, 0]
    else:
        raise ValueError(f"unknown smoothing method {method!r}")
    return Trajectory(traj.id, list(traj.frames), pos, traj.orientations)


def rotation_rate(traj: Trajectory, frame_rate: float = 1.0) -> np.ndarray:
    """|dp/dt| per frame from sign-aligned central differences.

    Orientations are head-tail ambiguous, so each vector is flipped to match
    its predecessor before differencing; endpoints use one-sided
    differences.  ``frame_rate`` converts per-frame rates to 1/s.
    """
    if traj.orientations is None:
        raise ValueError(f"trajectory {traj.id} has no orientations")
    if frame_rate <= 0:
        raise ValueError("frame_rate must be positive")
    p = traj.orientations.copy()
    for i in range(1, len(p)):
        if np.dot(p[i], p[i - 1]) < 0:
            p[i] = -p[i]
    n = len(p)
    if n == 1:
        return np.zeros(1)
    dp = np.empty_like(p)
    dp[0] = p[1] - p[0]
    dp[-1] = p[-1] - p[-2]
    if n > 2:
        dp[1:-1] = (p[2:] - p[:-2]) / 2.0
    return np.linalg.norm(dp, axis=1) * frame_rate
