"""On-disk layout for synthetic scenes and file-backed observations.

A scene directory holds::

    scene.json           frame/view counts, generator config, file names
    cameras.json         camera list
    cloud.ply            initial Gaussians with ground-truth labels
    trajectories.json    per-object quaternions and translations per frame
    views/v{j}/mask_{t:05d}.pgm   object label image of view j at frame t
    views/v{j}/depth_{t:05d}.pfm  rendered depth (inf where empty)
    views/v{j}/flow_{t:05d}.flo   backward flow, frames t >= 1
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

import numpy as np

from .camera import load_cameras, save_cameras
from .cloud import read_cloud, write_cloud
from .errors import CorruptManifest, MissingPayload
from .fileio import read_flow, read_mask, read_pfm, write_flow, write_mask, write_pfm
from .harness import SceneConfig, SyntheticSequence, make_scene, synthesize_flow
from .pipeline import Observation

SCENE_FILE = "scene.json"


def view_dir(root, view: int) -> Path:
    return Path(root) / "views" / f"v{view}"


def mask_path(root, view: int, frame: int) -> Path:
    return view_dir(root, view) / f"mask_{frame:05d}.pgm"


def depth_path(root, view: int, frame: int) -> Path:
    return view_dir(root, view) / f"depth_{frame:05d}.pfm"


def flow_path(root, view: int, frame: int) -> Path:
    return view_dir(root, view) / f"flow_{frame:05d}.flo"


def write_scene(seq: SyntheticSequence, root, config: SceneConfig | None = None) -> Path:
    """Write a sequence and all its per-view observations under ``root``."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    save_cameras(seq.cameras, root / "cameras.json")
    write_cloud(root / "cloud.ply", seq.initial)
    traj = {
        str(k): {
            "rotations": seq.rotations[k].tolist(),
            "translations": seq.translations[k].tolist(),
        }
        for k in seq.object_ids
    }
    with open(root / "trajectories.json", "w") as f:
        json.dump(traj, f)
    for j in range(len(seq.cameras)):
        view_dir(root, j).mkdir(parents=True, exist_ok=True)
        for t in range(seq.frame_count):
            r = seq.render_view(j, t)
            write_mask(mask_path(root, j, t), r.object_mask())
            write_pfm(depth_path(root, j, t), r.depth)
            if t >= 1:
                write_flow(synthesize_flow(seq, j, t), flow_path(root, j, t))
    meta = {
        "frames": seq.frame_count,
        "views": len(seq.cameras),
        "objects": seq.object_ids,
        "cameras": "cameras.json",
        "cloud": "cloud.ply",
        "trajectories": "trajectories.json",
        "config": dataclasses.asdict(config) if config is not None else None,
    }
    with open(root / SCENE_FILE, "w") as f:
        json.dump(meta, f, indent=1)
    return root


def generate_scene(config: SceneConfig, root) -> SyntheticSequence:
    seq = make_scene(config)
    write_scene(seq, root, config)
    return seq


def read_scene_meta(root) -> dict:
    path = Path(root) / SCENE_FILE
    if not path.exists():
        raise MissingPayload(f"{path} not found")
    try:
        with open(path) as f:
            meta = json.load(f)
        int(meta["frames"]), int(meta["views"])
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise CorruptManifest(f"{path}: {exc}") from None
    return meta


def load_scene(root, cameras=None) -> SyntheticSequence:
    """Rebuild the ground-truth sequence from a scene directory.

    ``cameras`` overrides the camera file named in ``scene.json``.
    """
    root = Path(root)
    meta = read_scene_meta(root)

    def need(name) -> Path:
        p = root / name
        if not p.exists():
            raise MissingPayload(f"{p} not found")
        return p

    cams = load_cameras(cameras if cameras is not None else need(meta.get("cameras", "cameras.json")))
    with open(need(meta.get("trajectories", "trajectories.json"))) as f:
        traj = json.load(f)
    rotations = {int(k): np.array(v["rotations"], dtype=float) for k, v in traj.items()}
    translations = {int(k): np.array(v["translations"], dtype=float) for k, v in traj.items()}
    return SyntheticSequence(
        initial=read_cloud(need(meta.get("cloud", "cloud.ply"))),
        rotations=rotations,
        translations=translations,
        cameras=cams,
        frame_count=int(meta["frames"]),
    )


def load_masks(root, frame: int, views: int) -> list[np.ndarray]:
    return [read_mask(mask_path(root, j, frame)) for j in range(views)]


def file_observer(root, views: int):
    """Observation callback reading flow, masks and depth from a scene directory.

    A missing file surfaces as ``FileNotFoundError`` naming the path, which the
    streaming loop wraps with the frame index.
    """

    def observe(frame: int) -> list[Observation]:
        out = []
        for j in range(views):
            fp = flow_path(root, j, frame)
            if not fp.exists():
                raise FileNotFoundError(f"flow for view {j} frame {frame} not found: {fp}")
            out.append(Observation(
                flow=read_flow(fp),
                labels=read_mask(mask_path(root, j, frame)),
                depth=read_pfm(depth_path(root, j, frame)).astype(float),
            ))
        return out

    return observe
