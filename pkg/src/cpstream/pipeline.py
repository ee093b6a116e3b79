"""Streaming reconstruction loop: segment, bind controls to flow, warp, correct keyframes.

Observations for frame t (flow, object masks and rendered depth, per view) are
all indexed on the frame-t image grid, so the control points they produce sit
at frame-t positions. Before warping G_{t-1} each control point is moved back
by its own translation, which puts it where it was at t-1.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace

import numpy as np

from . import metrics
from .cloud import GaussianCloud
from .control_points import (
    ControlPoint,
    default_group_radius,
    fuse_hidden_components,
    generate_control_points,
    prune_control_points,
)
from .errors import CPStreamError, FrameError
from .fileio import FlowField
from .harness import SyntheticSequence, synthesize_flow
from .motion import ControlArrays, apply_motion
from .render import render
from .segmentation import apply_labels, vote_labels
from .streaming import GoSModel, apply_residuals, fit_residuals, is_keyframe

MODES = ("none", "partial", "full")
CSV_COLUMNS = ("frame", "psnr", "ssim", "loss", "mean_position_error")


@dataclass
class RunConfig:
    scene: str | None = None
    cameras: str | None = None
    output: str | None = None
    gos_n: int = 10
    knn_k: int = 3
    spacing: int = 16
    radius: float = 10.0
    prune_target: int | None = None
    prune_ratio: float | None = None
    seed: int = 0
    mode: str = "full"
    group_radius: float | None = None
    metrics_view: int | None = 0

    def __post_init__(self):
        if self.knn_k < 1:
            raise ValueError("knn_k must be >= 1")
        if self.gos_n < 1:
            raise ValueError("gos_n must be >= 1")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.prune_ratio is not None and not 0 < self.prune_ratio <= 1:
            raise ValueError("prune_ratio must lie in (0, 1]")


@dataclass
class Observation:
    flow: FlowField
    labels: np.ndarray  # 8-bit object label image
    depth: np.ndarray


def oracle_observer(seq: SyntheticSequence):
    """Observation callback backed by exact synthetic renders and flows."""

    def observe(frame: int) -> list[Observation]:
        out = []
        for j in range(len(seq.cameras)):
            r = seq.render_view(j, frame)
            out.append(Observation(synthesize_flow(seq, j, frame), r.object_mask(), r.depth))
        return out

    return observe


def frame_controls(cameras, observations, cfg: RunConfig, frame: int = 0) -> list[ControlPoint]:
    """Generate per-view control points, fuse hidden parts across views, optionally prune."""
    points = []
    for j, (cam, obs) in enumerate(zip(cameras, observations)):
        points += generate_control_points(cam, obs.flow, obs.labels, obs.depth, cfg.spacing, cfg.radius, view=j)
    if not points:
        return []
    radius = cfg.group_radius
    if radius is None:
        radius = float(np.median([
            default_group_radius([p for p in points if p.source_view == j], cam, cfg.spacing)
            for j, cam in enumerate(cameras)
            if any(p.source_view == j for p in points)
        ]))
    return prune_frame_controls(fuse_hidden_components(points, radius), cfg, frame)


def prune_frame_controls(points, cfg: RunConfig, frame: int = 0) -> list[ControlPoint]:
    """Apply the configured prune target or ratio; every category keeps at least one point."""
    target = cfg.prune_target
    if target is None and cfg.prune_ratio is not None:
        target = max(1, int(round(cfg.prune_ratio * len(points))))
    if target is None or target >= len(points):
        return list(points)
    n_cat = len({p.category for p in points})
    return prune_control_points(points, max(target, n_cat), seed=cfg.seed + frame)


def with_mode(points, mode: str) -> list[ControlPoint]:
    """'full' keeps everything, 'partial' drops the fused hidden parts, 'none' drops all motion."""
    if mode == "full":
        return list(points)
    if mode == "partial":
        return [replace(p, hidden_translation=0.0, hidden_rotation=np.zeros(2)) for p in points]
    if mode == "none":
        return [replace(p, observed_translation=np.zeros(2), observed_rotation=0.0,
                        hidden_translation=0.0, hidden_rotation=np.zeros(2)) for p in points]
    raise ValueError(f"unknown mode {mode!r}")


def anchored(points) -> list[ControlPoint]:
    """Move control points back by their own translation (frame-t -> frame t-1 positions)."""
    return [replace(p, position=p.position - p.world_translation()) for p in points]


def mean_position_error(cloud: GaussianCloud, reference: GaussianCloud) -> float:
    return float(np.mean(np.linalg.norm(cloud.positions - reference.positions, axis=1)))


@dataclass
class RunResult:
    rows: list[dict]
    model: GoSModel
    states: list[GaussianCloud] = field(default_factory=list)

    def errors(self) -> np.ndarray:
        return np.array([r["mean_position_error"] for r in self.rows])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.rows:
            w.writerow([r["frame"]] + [repr(float(r[c])) for c in CSV_COLUMNS[1:]])
        return buf.getvalue()


def _metrics_row(frame, state, seq, view):
    row = {"frame": frame, "mean_position_error": mean_position_error(state, seq.cloud_at(frame))}
    if view is None:
        row.update(psnr=float("nan"), ssim=float("nan"), loss=float("nan"))
    else:
        img = render(state, seq.cameras[view]).image
        ref = seq.render_view(view, frame).image
        row.update(psnr=metrics.psnr(img, ref), ssim=metrics.ssim(img, ref), loss=metrics.loss(img, ref))
    return row


def precompute_controls(seq: SyntheticSequence, observe, cfg: RunConfig, frames: int | None = None) -> dict:
    """Fused (and pruned) control points for frames 1..F-1, independent of the run mode."""
    frames = seq.frame_count if frames is None else frames
    out = {}
    for t in range(1, frames):
        try:
            out[t] = frame_controls(seq.cameras, observe(t), cfg, t)
        except (CPStreamError, OSError) as exc:
            raise FrameError(t, exc) from exc
    return out


def run_stream(seq: SyntheticSequence, observe, cfg: RunConfig, masks0=None, controls=None,
               frames: int | None = None, keep_states: bool = False) -> RunResult:
    """Stream frames 1..F-1 from the ground-truth initial cloud.

    ``seq`` supplies cameras, reference clouds (keyframe residual targets and
    error metrics) and reference renders. ``observe(t)`` returns the per-view
    observations of frame t. ``controls`` may hold precomputed mode-free
    control sets per frame.
    """
    frames = seq.frame_count if frames is None else frames
    masks0 = seq.masks(0) if masks0 is None else masks0
    state = apply_labels(seq.initial, vote_labels(seq.initial, seq.cameras, masks0))
    model = GoSModel(cfg.gos_n, state.copy())
    rows = [_metrics_row(0, state, seq, cfg.metrics_view)]
    states = [state] if keep_states else []
    for t in range(1, frames):
        try:
            base = controls[t] if controls is not None else frame_controls(seq.cameras, observe(t), cfg, t)
            pts = anchored(with_mode(base, cfg.mode))
            moved = apply_motion(state, ControlArrays.from_points(pts), cfg.knn_k)
            if is_keyframe(t, cfg.gos_n):
                res = fit_residuals(moved, seq.cloud_at(t))
                state = apply_residuals(moved, res)
                model.residuals[t] = res
            else:
                state = moved
            model.controls[t] = pts
            rows.append(_metrics_row(t, state, seq, cfg.metrics_view))
        except (CPStreamError, OSError) as exc:
            if isinstance(exc, FrameError):
                raise
            raise FrameError(t, exc) from exc
        if keep_states:
            states.append(state)
    return RunResult(rows, model, states)
