"""Command-line front end.

Subcommands: gen-scene, segment, gen-controls, prune, run, render, report.
``gen-scene`` and ``run`` accept ``--config file.json`` whose keys match the
corresponding config fields; explicit flags override the file. Failures exit
with status 1 and a single stderr line ``cpstream-error: <Type>: <message>``.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .camera import load_cameras
from .cloud import read_cloud
from .control_points import prune_control_points, read_control_points, write_control_points
from .errors import CPStreamError, MalformedInput
from .fileio import write_pfm, write_png
from .harness import SceneConfig
from .pipeline import MODES, RunConfig, frame_controls, run_stream
from .render import render
from .report import parse_metrics_csv, summarize, to_tsv
from .scene_io import file_observer, generate_scene, load_masks, load_scene, read_scene_meta
from .segmentation import vote_labels
from .streaming import load_gos, serialize_gos

ERROR_PREFIX = "cpstream-error"


def _load_config(cls, path, overrides: dict):
    """Build a dataclass from an optional JSON file plus non-None flag overrides."""
    values = {}
    if path is not None:
        try:
            with open(path) as f:
                values = json.load(f)
        except json.JSONDecodeError as exc:
            raise MalformedInput(f"{path}: {exc}") from None
        if not isinstance(values, dict):
            raise MalformedInput(f"{path}: config must be a JSON object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - names)
    if unknown:
        raise MalformedInput(f"unknown config keys {unknown}")
    values.update({k: v for k, v in overrides.items() if v is not None})
    return cls(**values)


def cmd_gen_scene(args) -> int:
    cfg = _load_config(SceneConfig, args.config, {
        "seed": args.seed,
        "frames": args.frames,
        "views": args.views,
        "width": args.width,
        "height": args.height,
        "speed": args.speed,
        "spin": args.spin,
    })
    seq = generate_scene(cfg, args.output)
    print(f"wrote {seq.frame_count} frames x {len(seq.cameras)} views, {len(seq.initial)} Gaussians to {args.output}")
    return 0


def cmd_segment(args) -> int:
    meta = read_scene_meta(args.scene)
    seq = load_scene(args.scene, args.cameras)
    masks = load_masks(args.scene, args.frame, int(meta["views"]))
    assignment = vote_labels(seq.initial, seq.cameras, masks)
    labels = assignment.labels.astype("<i4")
    Path(args.output).write_bytes(labels.tobytes())
    agree = float(np.mean(labels == seq.initial.labels))
    print(f"labeled {len(labels)} Gaussians; agreement with stored labels {agree:.4f}")
    return 0


def cmd_gen_controls(args) -> int:
    meta = read_scene_meta(args.scene)
    seq = load_scene(args.scene, args.cameras)
    if args.frame < 1:
        raise MalformedInput("control points need frame >= 1")
    cfg = RunConfig(spacing=args.spacing, radius=args.radius, group_radius=args.group_radius)
    observations = file_observer(args.scene, int(meta["views"]))(args.frame)
    points = frame_controls(seq.cameras, observations, cfg, args.frame)
    write_control_points(args.output, points)
    print(f"wrote {len(points)} control points for frame {args.frame}")
    return 0


def cmd_prune(args) -> int:
    points = read_control_points(args.input)
    if (args.target is None) == (args.ratio is None):
        raise MalformedInput("give exactly one of --target or --ratio")
    target = args.target if args.target is not None else max(1, int(round(args.ratio * len(points))))
    kept = prune_control_points(points, target, seed=args.seed)
    write_control_points(args.output, kept)
    print(f"kept {len(kept)} of {len(points)} control points")
    return 0


def cmd_run(args) -> int:
    cfg = _load_config(RunConfig, args.config, {
        "scene": args.scene,
        "cameras": args.cameras,
        "output": args.output,
        "gos_n": args.gos_n,
        "knn_k": args.knn_k,
        "spacing": args.spacing,
        "radius": args.radius,
        "prune_target": args.prune_target,
        "prune_ratio": args.prune_ratio,
        "seed": args.seed,
        "mode": args.mode,
        "group_radius": args.group_radius,
        "metrics_view": args.metrics_view,
    })
    if cfg.scene is None or cfg.output is None:
        raise MalformedInput("run needs a scene directory and an output directory")
    meta = read_scene_meta(cfg.scene)
    seq = load_scene(cfg.scene, cfg.cameras)
    views = int(meta["views"])
    result = run_stream(seq, file_observer(cfg.scene, views), cfg, masks0=load_masks(cfg.scene, 0, views))
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.csv").write_text(result.to_csv())
    serialize_gos(result.model, out / "gos")
    with open(out / "config.json", "w") as f:
        json.dump(dataclasses.asdict(cfg), f, indent=1)
    err = result.errors()
    print(f"{len(err)} frames, final mean position error {err[-1]:.6g} m; wrote {out}")
    return 0


def cmd_render(args) -> int:
    if (args.cloud is None) == (args.gos is None):
        raise MalformedInput("give exactly one of --cloud or --gos")
    if args.cloud is not None:
        cloud = read_cloud(args.cloud)
    else:
        states = load_gos(args.gos).replay()
        if not 0 <= args.frame < len(states):
            raise MalformedInput(f"frame {args.frame} outside 0..{len(states) - 1}")
        cloud = states[args.frame]
    cameras = load_cameras(args.cameras)
    if not 0 <= args.view < len(cameras):
        raise MalformedInput(f"view {args.view} outside 0..{len(cameras) - 1}")
    result = render(cloud, cameras[args.view])
    write_png(args.output, result.image)
    if args.depth is not None:
        write_pfm(args.depth, result.depth)
    print(f"rendered {len(cloud)} Gaussians to {args.output}")
    return 0


def cmd_report(args) -> int:
    text = Path(args.input).read_text()
    groups = summarize(parse_metrics_csv(text), args.gos_n)
    tsv = to_tsv(groups)
    if args.output is not None:
        Path(args.output).write_text(tsv)
    for g in groups:
        print(
            f"GoS {g.gos} frames {g.first_frame}-{g.last_frame}: "
            f"mean error {g.means['mean_position_error']:.6g} m, "
            f"drift {g.slopes['mean_position_error']:.6g} m/frame, "
            f"mean PSNR {g.means['psnr']:.4g} dB"
        )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cpstream", description="Streaming Gaussian reconstruction with flow-bound control points.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-scene", help="write a synthetic scene with masks, depth and flow")
    p.add_argument("--config")
    p.add_argument("--output", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--frames", type=int)
    p.add_argument("--views", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--speed", type=float)
    p.add_argument("--spin", type=float)
    p.set_defaults(func=cmd_gen_scene)

    p = sub.add_parser("segment", help="vote Gaussian labels from multi-view masks")
    p.add_argument("--scene", required=True)
    p.add_argument("--cameras")
    p.add_argument("--frame", type=int, default=0)
    p.add_argument("--output", required=True, help="flat little-endian int32 labels")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("gen-controls", help="control points for one frame")
    p.add_argument("--scene", required=True)
    p.add_argument("--cameras")
    p.add_argument("--frame", type=int, required=True)
    p.add_argument("--spacing", type=int, default=16)
    p.add_argument("--radius", type=float, default=10.0)
    p.add_argument("--group-radius", type=float)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_gen_controls)

    p = sub.add_parser("prune", help="k-means++ pruning of a control point file")
    p.add_argument("--input", required=True)
    p.add_argument("--target", type=int)
    p.add_argument("--ratio", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("run", help="stream a scene and write per-frame metrics plus the GoS model")
    p.add_argument("--config")
    p.add_argument("--scene")
    p.add_argument("--cameras")
    p.add_argument("--output")
    p.add_argument("--gos-n", type=int)
    p.add_argument("--knn-k", type=int)
    p.add_argument("--spacing", type=int)
    p.add_argument("--radius", type=float)
    p.add_argument("--prune-target", type=int)
    p.add_argument("--prune-ratio", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--group-radius", type=float)
    p.add_argument("--metrics-view", type=int)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("render", help="render a cloud or a replayed GoS frame")
    p.add_argument("--cloud")
    p.add_argument("--gos")
    p.add_argument("--frame", type=int, default=0)
    p.add_argument("--cameras", required=True)
    p.add_argument("--view", type=int, default=0)
    p.add_argument("--output", required=True)
    p.add_argument("--depth")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("report", help="per-GoS means and drift slopes of a metrics CSV")
    p.add_argument("--input", required=True)
    p.add_argument("--gos-n", type=int, default=10)
    p.add_argument("--output", help="plot-ready TSV")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CPStreamError, OSError, ValueError) as exc:
        print(f"{ERROR_PREFIX}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
