"""Group-of-Scenes streaming: motion-only frames, keyframe residuals, on-disk layout.

A GoS-N model stores the initial cloud G_0, a control-point set C_t for every
later frame, and an attribute residual set R_t on every frame that is a
multiple of N:

    G_0, C_1, ..., C_{N-1}, (R_N, C_N), C_{N+1}, ...
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import quat
from .cloud import GaussianCloud, read_cloud, read_ply_records, write_cloud, write_ply_records
from .control_points import LEARNABLE_DIMS, ControlPoint, read_control_points, write_control_points
from .errors import CorruptManifest, MissingPayload, ResidualSizeMismatch, SizeMismatch
from .motion import DEFAULT_K, apply_motion

DEFAULT_GOS_N = 10
RESIDUAL_DIMS = 14
_RESIDUAL_FIELDS = (
    "dx", "dy", "dz", "dqw", "dqx", "dqy", "dqz",
    "dlsx", "dlsy", "dlsz", "dopacity", "dr", "dg", "db",
)


@dataclass
class ResidualSet:
    """Per-Gaussian attribute corrections applied on keyframes."""

    position: np.ndarray  # (N, 3) additive
    rotation: np.ndarray  # (N, 4) left-multiplied unit quaternion
    log_scale: np.ndarray  # (N, 3) additive in log space
    opacity: np.ndarray  # (N,) additive
    color: np.ndarray  # (N, 3) additive

    def __len__(self):
        return len(self.position)

    @classmethod
    def zeros(cls, n: int) -> "ResidualSet":
        return cls(np.zeros((n, 3)), np.tile(quat.IDENTITY, (n, 1)), np.zeros((n, 3)), np.zeros(n), np.zeros((n, 3)))

    def to_records(self) -> np.ndarray:
        rec = np.empty(len(self), dtype=[(name, "<f8") for name in _RESIDUAL_FIELDS])
        cols = np.concatenate([self.position, self.rotation, self.log_scale, self.opacity[:, None], self.color], axis=1)
        for i, name in enumerate(_RESIDUAL_FIELDS):
            rec[name] = cols[:, i]
        return rec

    @classmethod
    def from_records(cls, rec) -> "ResidualSet":
        cols = np.stack([rec[name] for name in _RESIDUAL_FIELDS], axis=1)
        return cls(cols[:, 0:3], cols[:, 3:7], cols[:, 7:10], cols[:, 10], cols[:, 11:14])


def fit_residuals(predicted: GaussianCloud, reference: GaussianCloud) -> ResidualSet:
    """Residuals that turn ``predicted`` into ``reference`` (same points, same order)."""
    if len(predicted) != len(reference):
        raise SizeMismatch(f"{len(predicted)} predicted vs {len(reference)} reference points")
    return ResidualSet(
        position=reference.positions - predicted.positions,
        rotation=quat.multiply(reference.rotations, quat.conjugate(predicted.rotations)),
        log_scale=np.log(reference.scales) - np.log(predicted.scales),
        opacity=reference.opacities - predicted.opacities,
        color=reference.colors - predicted.colors,
    )


def apply_residuals(cloud: GaussianCloud, residuals: ResidualSet) -> GaussianCloud:
    if len(cloud) != len(residuals):
        raise ResidualSizeMismatch(f"{len(residuals)} residuals for {len(cloud)} Gaussians")
    out = cloud.copy()
    out.positions = cloud.positions + residuals.position
    out.rotations = quat.multiply(residuals.rotation, cloud.rotations)
    out.scales = cloud.scales * np.exp(residuals.log_scale)
    out.opacities = np.clip(cloud.opacities + residuals.opacity, 0.0, 1.0)
    out.colors = cloud.colors + residuals.color
    return out


def subtract_residuals(cloud: GaussianCloud, residuals: ResidualSet) -> GaussianCloud:
    """Inverse of :func:`apply_residuals` (exact up to rounding for unclipped opacities)."""
    if len(cloud) != len(residuals):
        raise ResidualSizeMismatch(f"{len(residuals)} residuals for {len(cloud)} Gaussians")
    out = cloud.copy()
    out.positions = cloud.positions - residuals.position
    out.rotations = quat.multiply(quat.conjugate(residuals.rotation), cloud.rotations)
    out.scales = cloud.scales * np.exp(-residuals.log_scale)
    out.opacities = cloud.opacities - residuals.opacity
    out.colors = cloud.colors - residuals.color
    return out


def advance_non_keyframe(state: GaussianCloud, controls, k: int = DEFAULT_K) -> GaussianCloud:
    """G_t = F_{C_t}(G_{t-1}); only positions and rotations change."""
    return apply_motion(state, controls, k)


def advance_keyframe(state: GaussianCloud, controls, residuals: ResidualSet, k: int = DEFAULT_K) -> GaussianCloud:
    """G_t = F_{C_t}(G_{t-1}) + R_t."""
    if len(residuals) != len(state):
        raise ResidualSizeMismatch(f"{len(residuals)} residuals for {len(state)} Gaussians")
    return apply_residuals(apply_motion(state, controls, k), residuals)


def is_keyframe(frame: int, gos_n: int) -> bool:
    return frame > 0 and frame % gos_n == 0


@dataclass
class GoSModel:
    gos_n: int
    initial: GaussianCloud
    controls: dict[int, list[ControlPoint]] = field(default_factory=dict)
    residuals: dict[int, ResidualSet] = field(default_factory=dict)

    @property
    def frame_count(self) -> int:
        return 1 + max(self.controls, default=0)

    def validate(self):
        if self.gos_n < 1:
            raise CorruptManifest("gos_n must be >= 1")
        expected = list(range(1, self.frame_count))
        if sorted(self.controls) != expected:
            raise CorruptManifest("control sets must cover every frame after the first")
        keys = sorted(t for t in expected if is_keyframe(t, self.gos_n))
        if sorted(self.residuals) != keys:
            raise CorruptManifest(f"residual frames {sorted(self.residuals)} do not match keyframes {keys}")
        for t, r in self.residuals.items():
            if len(r) != len(self.initial):
                raise CorruptManifest(f"residual set at frame {t} has {len(r)} entries, cloud has {len(self.initial)}")

    def parameter_counts(self, frame: int) -> dict:
        counts = {
            "control_points": len(self.controls[frame]),
            "learnable_params": LEARNABLE_DIMS * len(self.controls[frame]),
        }
        if frame in self.residuals:
            counts["residual_params"] = RESIDUAL_DIMS * len(self.residuals[frame])
        return counts

    def replay(self, k: int = DEFAULT_K) -> list[GaussianCloud]:
        """Decode every frame G_0..G_{F-1}."""
        states = [self.initial]
        for t in range(1, self.frame_count):
            if t in self.residuals:
                states.append(advance_keyframe(states[-1], self.controls[t], self.residuals[t], k))
            else:
                states.append(advance_non_keyframe(states[-1], self.controls[t], k))
        return states


def serialize_gos(model: GoSModel, directory):
    """Write ``manifest.json`` plus per-frame payloads into ``directory``."""
    model.validate()
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_cloud(d / "g0.ply", model.initial)
    entries = []
    for t in range(1, model.frame_count):
        entry = {"frame": t, "controls_path": f"controls_{t:05d}.jsonl"}
        write_control_points(d / entry["controls_path"], model.controls[t])
        if t in model.residuals:
            entry["residuals_path"] = f"residuals_{t:05d}.ply"
            write_ply_records(d / entry["residuals_path"], model.residuals[t].to_records())
        entry.update(model.parameter_counts(t))
        entries.append(entry)
    manifest = {
        "gos_n": model.gos_n,
        "frames": model.frame_count,
        "initial_path": "g0.ply",
        "gaussians": len(model.initial),
        "entries": entries,
    }
    with open(d / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=1)


def read_manifest(directory) -> dict:
    path = Path(directory) / "manifest.json"
    if not path.exists():
        raise MissingPayload(f"{path} not found")
    try:
        with open(path) as f:
            manifest = json.load(f)
        gos_n = int(manifest["gos_n"])
        frames = int(manifest["frames"])
        entries = manifest["entries"]
        frames_listed = [int(e["frame"]) for e in entries]
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise CorruptManifest(f"{path}: {exc}") from None
    if frames_listed != list(range(1, frames)):
        raise CorruptManifest(f"{path}: entries must list frames 1..{frames - 1} in order")
    for e in entries:
        if ("residuals_path" in e) != is_keyframe(int(e["frame"]), gos_n):
            raise CorruptManifest(f"{path}: residual placement at frame {e['frame']} breaks GoS-{gos_n} layout")
    return manifest


def load_gos(directory) -> GoSModel:
    d = Path(directory)
    manifest = read_manifest(d)

    def need(name):
        p = d / name
        if not p.exists():
            raise MissingPayload(f"{p} not found")
        return p

    model = GoSModel(gos_n=int(manifest["gos_n"]), initial=read_cloud(need(manifest.get("initial_path", "g0.ply"))))
    for e in manifest["entries"]:
        t = int(e["frame"])
        model.controls[t] = read_control_points(need(e["controls_path"]))
        if "residuals_path" in e:
            model.residuals[t] = ResidualSet.from_records(read_ply_records(need(e["residuals_path"])))
    model.validate()
    return model
