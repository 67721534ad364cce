"""Pipeline driver: synthesize, reconstruct, track and evaluate subcommands.

Every subcommand takes ``--config`` (YAML), with ``--seed``, ``--workers``
and ``--output`` overriding the corresponding config entries.  All outputs
are deterministic for a fixed config and seed; reruns produce byte
identical tables.
"""

from __future__ import annotations

import argparse
import glob
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import io as htio
from . import metrics, preprocess, segment, solver, synth, track
from .config import PipelineConfig, config_from_dict, load_config, validate_config
from .optics import ComplexField2D
from .sparsevol import save_volume

TRUTH_COLUMNS = ["frame", "particle", "x", "y", "z", "px", "py", "pz"]
PARTICLE_COLUMNS = [
    "frame", "blob", "x_vox", "y_vox", "z_vox", "x", "y", "z",
    "volume", "peak_intensity", "px", "py", "pz", "elongation",
]
TRAJECTORY_COLUMNS = ["track", "frame", "x", "y", "z", "u", "v", "w", "px", "py", "pz", "rot_rate"]


def _load_cfg(args) -> PipelineConfig:
    if args.config:
        cfg = load_config(args.config)
    else:
        cfg = config_from_dict({})
    if args.seed is not None:
        cfg.seed = args.seed
    if args.workers is not None:
        cfg.workers = args.workers
    if args.output is not None:
        cfg.paths.output = args.output
    problems = validate_config(cfg)
    if problems:
        for p in problems:
            print(f"config error: {p}", file=sys.stderr)
        raise SystemExit(1)
    return cfg


def _outdir(cfg: PipelineConfig) -> str:
    os.makedirs(cfg.paths.output, exist_ok=True)
    return cfg.paths.output


# --- synthesize -------------------------------------------------------------


def cmd_synthesize(args) -> int:
    cfg = _load_cfg(args)
    out = _outdir(cfg)
    geom = cfg.geometry.to_geometry()
    sy = cfg.synthesis
    scene = synth.generate_scene(
        sy.particles, geom, sy.diameter, seed=cfg.seed, opacity=sy.opacity, margin_planes=sy.margin_planes
    )
    vel = tuple(float(v) for v in sy.velocity)
    truth_rows = []
    for frame in range(sy.frames):
        img = synth.render_hologram(scene)
        if sy.noise_sigma > 0:
            img = synth.add_noise(img, sy.noise_sigma, seed=cfg.seed + 100000 + frame)
        htio.save_image(os.path.join(out, f"hologram_{frame:04d}.f32"), img)
        for pid, p in enumerate(scene.particles):
            ori = p.orientation if p.orientation is not None else (math.nan,) * 3
            truth_rows.append((frame, pid, p.x, p.y, p.z, ori[0], ori[1], ori[2]))
        if frame + 1 < sy.frames:
            scene = synth.advect_scene(scene, lambda pos: vel, dt=1.0)
    htio.write_table(os.path.join(out, "truth.tsv"), TRUTH_COLUMNS, truth_rows)
    print(f"wrote {sy.frames} hologram(s) and truth table to {out}")
    return 0


# --- reconstruct ------------------------------------------------------------


def _solver_config(cfg: PipelineConfig, step_size: float | None) -> solver.SolverConfig:
    s = cfg.solver
    return solver.SolverConfig(
        weights=solver.RegularizerWeights(s.lambda_l1, s.lambda_tv),
        max_iters=s.max_iters,
        tv_inner_iters=s.tv_inner_iters,
        step_policy=s.step_policy,
        step_size=s.step_size if s.step_size is not None else step_size,
        bt_shrink=s.bt_shrink,
        stop_tol=s.stop_tol,
        real_nonnegative=s.real_nonnegative,
        dtype=s.dtype,
        dense_plane_budget=s.dense_plane_budget,
    )


def _residuals(cfg: PipelineConfig, images: list[np.ndarray]) -> list[np.ndarray]:
    mode = cfg.preprocessing.mode
    if mode == "none":
        return images
    if mode == "invert":
        return [preprocess.invert_residual(img) for img in images]
    stack = np.stack(images)
    window = min(cfg.preprocessing.window, len(images) - (1 - len(images) % 2))
    if window < 3:
        raise SystemExit("background preprocessing needs at least 3 frames")
    cleaned = preprocess.preprocess_background(stack, window)
    # opaque objects give negative residuals after background division
    return [-cleaned[t] for t in range(len(images))]


def _reconstruct_one(payload):
    frame, b_values, cfg_dict, step_size = payload
    cfg = config_from_dict(cfg_dict)
    geom = cfg.geometry.to_geometry()
    b = ComplexField2D(b_values, geom.pitch, geom.wavelength)
    if cfg.solver.method == "baseline":
        vol = solver.baseline_reconstruct(b, geom, cfg.solver.baseline_threshold)
        dets = segment.peak_depth_particles(vol, cfg.solver.baseline_min_pixels)
        history = None
    else:
        vol, report = solver.fista(b, geom, _solver_config(cfg, step_size))
        dets = segment.extract_particles(
            vol, cfg.segmentation.rel_tol, cfg.segmentation.min_vox, cfg.segmentation.with_orientation
        )
        history = report.objective
    return frame, vol, dets, history


def cmd_reconstruct(args) -> int:
    cfg = _load_cfg(args)
    out = _outdir(cfg)
    geom = cfg.geometry.to_geometry()
    pattern = cfg.paths.input or os.path.join(out, "hologram_*.f32")
    files = sorted(glob.glob(pattern))
    if not files:
        print(f"no input holograms match {pattern!r}", file=sys.stderr)
        return 1
    try:
        images = [htio.load_image(p) for p in files]
    except (OSError, ValueError) as exc:
        print(f"failed to read holograms: {exc}", file=sys.stderr)
        return 1
    for p, img in zip(files, images):
        if img.shape != geom.plane_shape:
            print(f"{p}: image shape {img.shape} does not match geometry {geom.plane_shape}", file=sys.stderr)
            return 1
    residuals = _residuals(cfg, images)
    step_size = cfg.solver.step_size
    if cfg.solver.method == "fista" and step_size is None:
        sigma2 = solver.estimate_operator_norm(
            geom, real=cfg.solver.real_nonnegative, dtype=cfg.solver.dtype
        )
        step_size = 1.0 / (2.0 * sigma2)
    from .config import config_to_dict

    payloads = [(t, residuals[t], config_to_dict(cfg), step_size) for t in range(len(files))]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_reconstruct_one, payloads))
    else:
        results = [_reconstruct_one(p) for p in payloads]
    results.sort(key=lambda r: r[0])
    particle_rows = []
    for frame, vol, dets, history in results:
        save_volume(os.path.join(out, f"volume_{frame:04d}.rihv"), vol)
        if history is not None:
            htio.write_table(
                os.path.join(out, f"objective_{frame:04d}.tsv"),
                ["iteration", "objective"],
                list(enumerate(history)),
            )
        for d in dets:
            ax = d.axis if d.axis is not None else (math.nan,) * 3
            elong = d.elongation if d.elongation is not None else math.nan
            particle_rows.append(
                (frame, d.blob_id, d.x_vox, d.y_vox, d.z_vox, d.x, d.y, d.z,
                 d.volume, d.peak_intensity, ax[0], ax[1], ax[2], elong)
            )
    htio.write_table(os.path.join(out, "particles.tsv"), PARTICLE_COLUMNS, particle_rows)
    print(f"reconstructed {len(files)} frame(s) into {out}")
    return 0


# --- track ------------------------------------------------------------------


def _read_particles(path):
    header, rows = htio.read_table(path)
    idx = {name: i for i, name in enumerate(header)}
    frames: dict[int, list] = {}
    for row in rows:
        t = int(row[idx["frame"]])
        x, y, z = (float(row[idx[c]]) for c in ("x", "y", "z"))
        det = segment.ParticleDetection(
            blob_id=int(row[idx["blob"]]),
            x_vox=float(row[idx["x_vox"]]), y_vox=float(row[idx["y_vox"]]), z_vox=float(row[idx["z_vox"]]),
            x=x, y=y, z=z,
            volume=int(row[idx["volume"]]),
            peak_intensity=float(row[idx["peak_intensity"]]),
        )
        px = float(row[idx["px"]])
        if not math.isnan(px):
            det.axis = np.array([px, float(row[idx["py"]]), float(row[idx["pz"]])])
            det.elongation = float(row[idx["elongation"]])
        frames.setdefault(t, []).append(det)
    if not frames:
        return []
    return [frames.get(t, []) for t in range(max(frames) + 1)]


def cmd_track(args) -> int:
    cfg = _load_cfg(args)
    out = _outdir(cfg)
    path = cfg.paths.input or os.path.join(out, "particles.tsv")
    if not os.path.exists(path):
        print(f"particle table {path} not found", file=sys.stderr)
        return 1
    frames = _read_particles(path)
    t = cfg.tracking
    trajs = track.link_frames(frames, t.max_disp)
    trajs = track.filter_min_duration(trajs, t.min_frames)
    if t.smoothing == "savitzky_golay":
        trajs = [track.smooth_trajectory(tr, "savitzky_golay", window=t.window, order=t.order) for tr in trajs]
    elif t.smoothing == "tv":
        trajs = [track.smooth_trajectory(tr, "tv", weight=t.tv_weight) for tr in trajs]
    rows = []
    for tr in trajs:
        vel = tr.velocities()
        rates = track.rotation_rate(tr, t.frame_rate) if tr.orientations is not None else None
        for i, frame in enumerate(tr.frames):
            u, v, w = (vel[i] if i < len(vel) else (math.nan,) * 3)
            ori = tr.orientations[i] if tr.orientations is not None else (math.nan,) * 3
            rate = rates[i] if rates is not None else math.nan
            rows.append((tr.id, frame, tr.positions[i, 0], tr.positions[i, 1], tr.positions[i, 2],
                         u, v, w, ori[0], ori[1], ori[2], rate))
    htio.write_table(os.path.join(out, "trajectories.tsv"), TRAJECTORY_COLUMNS, rows)
    print(f"linked {len(trajs)} trajectorie(s) into {out}")
    return 0


# --- evaluate ---------------------------------------------------------------


def _truth_by_frame(path):
    header, rows = htio.read_table(path)
    idx = {name: i for i, name in enumerate(header)}
    frames: dict[int, list] = {}
    tracks: dict[int, list] = {}
    for row in rows:
        t = int(row[idx["frame"]])
        pid = int(row[idx["particle"]])
        pos = tuple(float(row[idx[c]]) for c in ("x", "y", "z"))
        frames.setdefault(t, []).append(pos)
        tracks.setdefault(pid, []).append((t, pos))
    return frames, tracks


def cmd_evaluate(args) -> int:
    cfg = _load_cfg(args)
    out = _outdir(cfg)
    geom = cfg.geometry.to_geometry()
    truth_path = cfg.paths.input or os.path.join(out, "truth.tsv")
    particles_path = os.path.join(out, "particles.tsv")
    for path in (truth_path, particles_path):
        if not os.path.exists(path):
            print(f"required table {path} not found", file=sys.stderr)
            return 1
    truth_frames, truth_tracks = _truth_by_frame(truth_path)
    det_frames = _read_particles(particles_path)

    def vox(pos):
        return ((pos[0]) / geom.pitch, (pos[1]) / geom.pitch, (pos[2] - geom.z0) / geom.dz)

    match_rows = []
    all_errors = []
    for t in sorted(truth_frames):
        truth_vox = np.array([vox(p) for p in truth_frames[t]]).reshape(-1, 3)
        dets = det_frames[t] if t < len(det_frames) else []
        det_vox = np.array([[d.x_vox, d.y_vox, d.z_vox] for d in dets]).reshape(-1, 3)
        rep = metrics.match_particles(truth_vox, det_vox)
        if len(rep.pairs):
            all_errors.append(rep.errors)
        match_rows.append((t, rep.n_truth, rep.n_detected, len(rep.pairs), rep.extraction_rate, rep.false_positives))
    htio.write_table(
        os.path.join(out, "match_metrics.tsv"),
        ["frame", "n_truth", "n_detected", "n_matched", "extraction_rate", "false_positives"],
        match_rows,
    )
    if all_errors:
        err = np.concatenate(all_errors)
        rows = []
        for name, col in (("x", 0), ("y", 1), ("z", 2)):
            a = np.abs(err[:, col])
            rows.append((name, float(np.percentile(a, 50)), float(np.percentile(a, 75)), float(np.percentile(a, 95))))
        htio.write_table(os.path.join(out, "error_percentiles.tsv"), ["axis", "p50", "p75", "p95"], rows)

    traj_path = os.path.join(out, "trajectories.tsv")
    if os.path.exists(traj_path):
        header, rows = htio.read_table(traj_path)
        idx = {name: i for i, name in enumerate(header)}
        by_track: dict[int, list] = {}
        for row in rows:
            by_track.setdefault(int(row[idx["track"]]), []).append(
                (int(row[idx["frame"]]), [float(row[idx[c]]) for c in ("x", "y", "z")])
            )
        measured = []
        for tid, samples in sorted(by_track.items()):
            samples.sort(key=lambda s: s[0])
            measured.append(
                track.Trajectory(tid, [s[0] for s in samples], np.array([s[1] for s in samples]))
            )
        truth_trajs = []
        for pid, samples in sorted(truth_tracks.items()):
            samples.sort(key=lambda s: s[0])
            truth_trajs.append(
                track.Trajectory(pid, [s[0] for s in samples], np.array([s[1] for s in samples]))
            )
        scale = {"x": geom.pitch, "y": geom.pitch, "z": geom.dz}
        rows = []
        for axis in ("x", "y", "z"):
            m = metrics.rms_velocity(measured, axis) / scale[axis]
            tr = metrics.rms_velocity(truth_trajs, axis) / scale[axis]
            rel = abs(m - tr) / tr if tr > 0 else math.nan
            rows.append((axis, m, tr, rel))
        htio.write_table(
            os.path.join(out, "rms_velocity.tsv"),
            ["axis", "measured_vox_per_frame", "truth_vox_per_frame", "rel_error"],
            rows,
        )
    print(f"evaluation tables written to {out}")
    return 0


# --- entry point ------------------------------------------------------------


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="holotrack",
        description="Inverse reconstruction and tracking of 3D particle fields from inline holograms",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (
        ("synthesize", cmd_synthesize),
        ("reconstruct", cmd_reconstruct),
        ("track", cmd_track),
        ("evaluate", cmd_evaluate),
    ):
        p = sub.add_parser(name)
        p.add_argument("--config", help="YAML configuration file")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--workers", type=int, default=None, help="override worker count")
        p.add_argument("--output", default=None, help="override output directory")
        p.set_defaults(fn=fn)
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except SystemExit as exc:
        raise
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
