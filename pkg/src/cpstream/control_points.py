"""3D control points bound to optical flow.

A control point lives in a ray frame whose z-axis is the viewing ray through
its pixel. Flow observed around that pixel fixes the in-plane translation
(x, y) and the rotation about the ray (z); the translation along the ray and
the two rotations about the in-plane axes are invisible from that view and are
filled in afterwards by fusing control points from several views.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial import cKDTree

from . import quat
from .camera import (
    CameraModel,
    RayFrame,
    back_project_position,
    build_ray_frame,
    ray_direction,
)
from .errors import EmptyNeighborhood, NonPositiveDepth, RadiusExceedsFocal, TargetExceedsCount
from .fileio import FlowField
from .harness import sampling_grid

LEARNABLE_DIMS = 3
CENTER_EPS = 1e-12
FUSION_RCOND = 0.05


@dataclass
class ControlPoint:
    position: np.ndarray  # world frame, meters
    ray_frame: RayFrame
    camera_rotation: np.ndarray  # world -> camera rotation of the source view
    observed_translation: np.ndarray  # (Vx, Vy) in the ray frame, m/frame
    observed_rotation: float  # rotation about the ray, rad/frame
    hidden_translation: float = 0.0  # along the ray
    hidden_rotation: np.ndarray = field(default_factory=lambda: np.zeros(2))  # about ray x, y
    category: int = 1
    source_view: int = 0
    # Linear response of ``observed_rotation`` to a world angular velocity and
    # a world translation, measured on the neighborhood's own relief. ``None``
    # means a patch facing the ray: the ray z-axis and no coupling.
    rotation_sensitivity: np.ndarray | None = None
    translation_sensitivity: np.ndarray | None = None

    @property
    def world_axes(self) -> np.ndarray:
        """3x3 matrix whose columns are the ray-frame axes in world coordinates."""
        return self.camera_rotation.T @ self.ray_frame.rotation_cr.T

    @property
    def ray_translation(self) -> np.ndarray:
        return np.array([*self.observed_translation, self.hidden_translation])

    @property
    def ray_rotation(self) -> np.ndarray:
        """Euler angles (about ray x, y, z) in radians per frame."""
        return np.array([*self.hidden_rotation, self.observed_rotation])

    @property
    def learnable(self) -> np.ndarray:
        return np.array([self.hidden_translation, *self.hidden_rotation])

    def world_translation(self) -> np.ndarray:
        return self.world_axes @ self.ray_translation

    def world_rotation(self) -> np.ndarray:
        """Per-frame rotation as a world-frame unit quaternion."""
        q_ray = quat.euler_zyx_to_quaternion(self.ray_rotation)
        q_axes = quat.from_matrix(self.world_axes)
        return quat.normalize(quat.multiply(quat.multiply(q_axes, q_ray), quat.conjugate(q_axes)))

    def to_json(self) -> dict:
        return {
            "pos": [float(x) for x in self.position],
            "Rcr": [float(x) for x in self.ray_frame.rotation_cr.ravel()],
            "depth": float(self.ray_frame.depth),
            "Vr": [float(x) for x in self.observed_translation],
            "wz": float(self.observed_rotation),
            "hidden": [float(x) for x in self.learnable],
            "category": int(self.category),
            "view": int(self.source_view),
            "pixel": [float(x) for x in self.ray_frame.center_pixel],
            "Rwc": [float(x) for x in self.camera_rotation.ravel()],
            **_optional_vector("hw", self.rotation_sensitivity),
            **_optional_vector("hT", self.translation_sensitivity),
        }

    @classmethod
    def from_json(cls, d: dict) -> "ControlPoint":
        hidden = d["hidden"]
        return cls(
            position=np.array(d["pos"], dtype=float),
            ray_frame=RayFrame(
                rotation_cr=np.array(d["Rcr"], dtype=float).reshape(3, 3),
                center_pixel=np.array(d.get("pixel", [np.nan, np.nan]), dtype=float),
                depth=float(d["depth"]),
            ),
            camera_rotation=np.array(d.get("Rwc", np.eye(3).ravel()), dtype=float).reshape(3, 3),
            observed_translation=np.array(d["Vr"], dtype=float),
            observed_rotation=float(d["wz"]),
            hidden_translation=float(hidden[0]),
            hidden_rotation=np.array(hidden[1:], dtype=float),
            category=int(d["category"]),
            source_view=int(d["view"]),
            rotation_sensitivity=_vector_or_none(d.get("hw")),
            translation_sensitivity=_vector_or_none(d.get("hT")),
        )


def _optional_vector(key, value) -> dict:
    return {} if value is None else {key: [float(x) for x in value]}


def _vector_or_none(value):
    return None if value is None else np.array(value, dtype=float)


def write_control_points(path, points):
    with open(path, "w") as f:
        for p in points:
            f.write(json.dumps(p.to_json()) + "\n")


def read_control_points(path) -> list[ControlPoint]:
    with open(path) as f:
        return [ControlPoint.from_json(json.loads(line)) for line in f if line.strip()]


def learnable_parameter_count(points) -> int:
    return LEARNABLE_DIMS * len(points)


# ---------------------------------------------------------------------------
# Flow binding


def _to_ray_plane(camera: CameraModel, ray_frame: RayFrame, vectors):
    """Pixel-space 2-vectors -> metric ray-frame (x, y) on the physical image plane."""
    vectors = np.atleast_2d(np.asarray(vectors, dtype=float))
    return camera.focal_m * (vectors / camera.focal_px) @ ray_frame.rotation_cr[:2, :2].T


def ray_plane_positions(camera: CameraModel, ray_frame: RayFrame, pixels):
    return _to_ray_plane(camera, ray_frame, np.asarray(pixels, dtype=float) - camera.principal_point)


def flow_to_ray_translation(camera: CameraModel, neighborhood, flow: FlowField, ray_frame: RayFrame):
    """Mean neighborhood flow expressed as a metric translation on the image plane, in the ray frame."""
    neighborhood = np.asarray(neighborhood, dtype=int).reshape(-1, 2)
    if len(neighborhood) == 0:
        raise EmptyNeighborhood("neighborhood has no pixels")
    uv = np.asarray(flow.values[neighborhood[:, 1], neighborhood[:, 0]], dtype=float)
    total = uv.sum(axis=0)
    return camera.focal_m * (1.0 / len(uv)) * ray_frame.rotation_cr[:2, :2] @ (total / camera.focal_px)


def back_project_translation(v_r, ray_frame: RayFrame, camera: CameraModel):
    """Scale an image-plane translation to the scene by depth / focal length."""
    if not ray_frame.depth > 0:
        raise NonPositiveDepth(f"depth must be positive, got {ray_frame.depth}")
    return (ray_frame.depth / camera.focal_m) * np.asarray(v_r, dtype=float)


def _mean_curl(rel, flows):
    """Mean of ``rel x flow / |rel|^2``; ``flows`` may carry leading batch axes."""
    r2 = np.einsum("ij,ij->i", rel, rel)
    keep = r2 >= CENTER_EPS**2
    if not np.any(keep):
        raise EmptyNeighborhood("every neighborhood pixel coincides with the center")
    rel, r2, flows = rel[keep], r2[keep], flows[..., keep, :]
    cross = rel[:, 0] * flows[..., 1] - rel[:, 1] * flows[..., 0]
    return np.mean(cross / r2, axis=-1)


def flow_to_angular_velocity(positions, flows, center) -> float:
    """Mean of ``(x_i - x_0) x v_i / |x_i - x_0|^2`` over the neighborhood.

    ``positions`` and ``flows`` are (N, 2) metric ray-frame quantities and
    ``center`` is x_0. Pixels coinciding with the center are skipped.
    """
    rel = np.asarray(positions, dtype=float).reshape(-1, 2) - np.asarray(center, dtype=float)
    return float(_mean_curl(rel, np.asarray(flows, dtype=float).reshape(-1, 2)))


def _pixel_motion(camera: CameraModel, points_cam, motion_cam):
    """First-order pixel displacement of camera-frame points moved by ``motion_cam``."""
    z = points_cam[..., 2:3]
    xy = points_cam[..., :2] / z
    return camera.focal_px * (motion_cam[..., :2] - xy * motion_cam[..., 2:3]) / z


def rotation_sensitivities(camera: CameraModel, ray_frame: RayFrame, pixels, depths, rotation_wc=None):
    """How the ray-rotation estimate responds to world rotation and translation.

    The neighborhood is back-projected with its own depths, moved to first
    order by a unit rotation about each world axis (through the control point)
    and by a unit translation along each world axis, and the resulting flows
    are fed through the same estimator as the measured flow. For a patch
    facing the ray this returns the ray z-axis and a zero coupling; on a tilted
    patch the out-of-plane rotations and the lateral translation leak into the
    measured curl and both vectors pick that up.

    Returns (rotation_sensitivity, translation_sensitivity), world 3-vectors.
    """
    rot_wc = camera.rotation_wc if rotation_wc is None else np.asarray(rotation_wc, dtype=float)
    pixels = np.asarray(pixels, dtype=float).reshape(-1, 2)
    depths = np.asarray(depths, dtype=float).reshape(-1)
    depths = np.where(np.isfinite(depths) & (depths > 0), depths, ray_frame.depth)
    xy = (pixels - camera.principal_point) / camera.focal_px
    pts = np.concatenate([xy * depths[:, None], depths[:, None]], axis=1)
    anchor = back_project_position(camera, ray_frame.center_pixel, ray_frame.depth)
    axes = rot_wc.T  # rows: world axes in camera coordinates
    motion = np.concatenate([
        np.cross(axes[:, None, :], (pts - anchor)[None, :, :]),
        np.broadcast_to(axes[:, None, :], (3, len(pts), 3)),
    ])
    uv = _pixel_motion(camera, pts, motion)
    uv = uv - uv.mean(axis=1, keepdims=True)
    plane = camera.focal_m * (uv / camera.focal_px) @ ray_frame.rotation_cr[:2, :2].T
    rel = ray_plane_positions(camera, ray_frame, pixels) - ray_plane_positions(camera, ray_frame, ray_frame.center_pixel)[0]
    response = _mean_curl(rel, plane)
    return response[:3], response[3:]


def generate_control_points(camera: CameraModel, flow: FlowField, masks, depth_map, spacing: int,
                            radius: float, view: int = 0, camera_rotation=None) -> list[ControlPoint]:
    """Control points for every object in one view.

    ``masks`` is an 8-bit label image. The control point sits at the
    sub-pixel centroid of its neighborhood, at the median rendered depth of
    that neighborhood. Rotation about the ray is measured on flows relative to
    the neighborhood mean, so it is free of the translational part.
    """
    masks = np.asarray(masks)
    depth_map = np.asarray(depth_map, dtype=float)
    rot_wc = camera.rotation_wc if camera_rotation is None else camera_rotation
    points = []
    for k in (int(x) for x in np.unique(masks) if x > 0):
        for _, pix in sampling_grid(masks == k, spacing, radius):
            depths = depth_map[pix[:, 1], pix[:, 0]]
            depths = depths[np.isfinite(depths)]
            if len(depths) == 0:
                continue
            z = float(np.median(depths))
            x0 = pix.mean(axis=0)
            frame = build_ray_frame(camera, x0, z)
            v_r = flow_to_ray_translation(camera, pix, flow, frame)
            uv = np.asarray(flow.values[pix[:, 1], pix[:, 0]], dtype=float)
            omega = flow_to_angular_velocity(
                ray_plane_positions(camera, frame, pix),
                _to_ray_plane(camera, frame, uv - uv.mean(axis=0)),
                ray_plane_positions(camera, frame, x0)[0],
            )
            h_rot, h_trans = rotation_sensitivities(camera, frame, pix, depth_map[pix[:, 1], pix[:, 0]], rot_wc)
            points.append(ControlPoint(
                position=camera.camera_to_world(back_project_position(camera, x0, z)),
                ray_frame=frame,
                camera_rotation=rot_wc,
                observed_translation=back_project_translation(v_r, frame, camera),
                observed_rotation=omega,
                category=k,
                source_view=view,
                rotation_sensitivity=h_rot,
                translation_sensitivity=h_trans,
            ))
    return points


# ---------------------------------------------------------------------------
# Multi-view fusion of hidden components


@dataclass
class GroupTwist:
    members: list[int]
    translation: np.ndarray
    angular_velocity: np.ndarray
    translation_rank: int
    rotation_rank: int
    views: set[int] = field(default_factory=set)


def default_group_radius(points, camera: CameraModel, spacing: float) -> float:
    """Sampling spacing back-projected to the median control-point depth."""
    if not points:
        return 0.0
    z = np.median([p.ray_frame.depth for p in points])
    return float(spacing * z / camera.focal_px)


def group_points(points, radius: float) -> list[list[int]]:
    """Greedy groups of points whose pairwise distances are all below ``radius``.

    Groups never mix categories. Seeds are taken in index order.
    """
    if not points:
        return []
    pos = np.array([p.position for p in points])
    cat = np.array([p.category for p in points])
    tree = cKDTree(pos)
    assigned = np.zeros(len(points), dtype=bool)
    groups = []
    for i in range(len(points)):
        if assigned[i]:
            continue
        cand = [j for j in tree.query_ball_point(pos[i], radius) if not assigned[j] and j != i and cat[j] == cat[i]]
        cand.sort(key=lambda j: (np.linalg.norm(pos[j] - pos[i]), j))
        members = [i]
        for j in cand:
            if np.all(np.linalg.norm(pos[members] - pos[j], axis=1) < radius):
                members.append(j)
        assigned[members] = True
        groups.append(sorted(members))
    return groups


def solve_group_twist(points, rcond: float = FUSION_RCOND):
    """Least-squares world translation and angular velocity explaining every view's observables.

    Each point contributes its ray x/y axes dotted with the translation equal
    to its observed translation. The angular velocity is solved second: each
    point contributes its ray z-axis dotted with the angular velocity equal to
    its observed rotation. When the group spans at least three views and the
    points carry rotation sensitivities, those replace the ray z-axis and the
    translation coupling is removed from the observation first. Directions
    whose singular value is below ``rcond`` times the largest are left at the
    minimum-norm value.
    Returns (translation, angular_velocity, rank_translation, rank_rotation).
    """
    axes = [p.world_axes for p in points]
    a_t = np.concatenate([m[:, :2].T for m in axes])
    b_t = np.concatenate([p.observed_translation for p in points])
    t, _, rank_t, _ = np.linalg.lstsq(a_t, b_t, rcond=rcond)
    rows, rhs = [], []
    use_relief = len({p.source_view for p in points}) >= 3
    for p, m in zip(points, axes):
        if use_relief and p.rotation_sensitivity is not None:
            coupling = np.zeros(3) if p.translation_sensitivity is None else p.translation_sensitivity
            rows.append(p.rotation_sensitivity)
            rhs.append(p.observed_rotation - coupling @ t)
        else:
            rows.append(m[:, 2])
            rhs.append(p.observed_rotation)
    w, _, rank_w, _ = np.linalg.lstsq(np.array(rows), np.array(rhs), rcond=rcond)
    return t, w, int(rank_t), int(rank_w)


def fuse_groups(points, group_radius: float, rcond: float = FUSION_RCOND):
    """Fuse points into groups; returns (fused points, list of GroupTwist)."""
    fused = list(points)
    twists = []
    for members in group_points(points, group_radius):
        group = [points[i] for i in members]
        t, w, rank_t, rank_w = solve_group_twist(group, rcond)
        twists.append(GroupTwist(members, t, w, rank_t, rank_w, {p.source_view for p in group}))
        for i in members:
            m = points[i].world_axes
            fused[i] = replace(
                points[i],
                hidden_translation=float(m[:, 2] @ t),
                hidden_rotation=np.array([m[:, 0] @ w, m[:, 1] @ w]),
            )
    return fused, twists


def fuse_hidden_components(points, group_radius: float, rcond: float = FUSION_RCOND) -> list[ControlPoint]:
    """Fill each point's hidden translation/rotation from its group's fused world twist."""
    return fuse_groups(points, group_radius, rcond)[0]


# ---------------------------------------------------------------------------
# Near-parallel check


def parallel_bound(camera: CameraModel, center, radius: float) -> float:
    """Upper bound on the angle between the central ray and any ray in a pixel disk.

    Uses ``arcsin(radius * cos(beta) / f)`` with beta the angle between the
    central ray and the optical axis; this never exceeds ``arcsin(radius / f)``.
    """
    if radius < 0:
        raise ValueError("radius must be non-negative")
    if radius >= camera.focal_px:
        raise RadiusExceedsFocal(f"radius {radius} px >= focal length {camera.focal_px} px")
    cos_beta = ray_direction(camera, center)[2]
    return float(np.arcsin(radius * cos_beta / camera.focal_px))


def ray_angles(camera: CameraModel, center, radius: float):
    """Exact angles between the central ray and the rays of every integer-offset pixel in the disk."""
    r = int(np.floor(radius))
    oy, ox = np.mgrid[-r:r + 1, -r:r + 1]
    disk = ox**2 + oy**2 <= radius**2
    pix = np.asarray(center, dtype=float) + np.stack([ox[disk], oy[disk]], axis=1)
    d0 = ray_direction(camera, center)
    rays = np.concatenate([(pix - camera.principal_point) * camera.pixel_pitch,
                           np.full((len(pix), 1), camera.focal_m)], axis=1)
    rays /= np.linalg.norm(rays, axis=1, keepdims=True)
    sin = np.linalg.norm(np.cross(rays, d0), axis=1)
    cos = rays @ d0
    return np.arctan2(sin, cos)


# ---------------------------------------------------------------------------
# Pruning


KMEANS_MAX_ITER = 50
KMEANS_TOL = 1e-6


def kmeans_plus_plus(x, k: int, rng) -> np.ndarray:
    """Indices of ``k`` seeds chosen by D^2 sampling."""
    n = len(x)
    first = int(rng.integers(n))
    seeds = [first]
    d2 = np.sum((x - x[first]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            nxt = int(rng.choice(n, p=d2 / total))
        else:
            free = np.setdiff1d(np.arange(n), seeds)
            nxt = int(rng.choice(free))
        seeds.append(nxt)
        d2 = np.minimum(d2, np.sum((x - x[nxt]) ** 2, axis=1))
    return np.array(seeds)


def _assign(x, centers):
    """Nearest-center assignment, moving far points into empty clusters."""
    d2 = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    assign = np.argmin(d2, axis=1)
    counts = np.bincount(assign, minlength=len(centers))
    for c in np.nonzero(counts == 0)[0]:
        own = d2[np.arange(len(x)), assign]
        own[counts[assign] <= 1] = -1.0  # never empty another cluster
        far = int(np.argmax(own))
        counts[assign[far]] -= 1
        assign[far] = c
        counts[c] = 1
    return assign


def kmeans(x, k: int, rng, max_iter: int = KMEANS_MAX_ITER, tol: float = KMEANS_TOL):
    """Lloyd iterations from k-means++ seeds. Returns (centroids, assignment); no cluster is empty."""
    x = np.asarray(x, dtype=float)
    centers = x[kmeans_plus_plus(x, k, rng)].copy()
    for _ in range(max_iter):
        assign = _assign(x, centers)
        new = np.stack([x[assign == c].mean(axis=0) for c in range(k)])
        shift = np.max(np.linalg.norm(new - centers, axis=1))
        centers = new
        if shift < tol:
            break
    return centers, _assign(x, centers)


def _allocate(counts: dict[int, int], target: int) -> dict[int, int]:
    """Split ``target`` across categories proportionally, at least one each."""
    total = sum(counts.values())
    if target < len(counts):
        raise ValueError(f"target {target} is smaller than the number of categories {len(counts)}")
    raw = {c: target * n / total for c, n in counts.items()}
    alloc = {c: max(1, min(counts[c], int(np.floor(v)))) for c, v in raw.items()}
    order = sorted(counts, key=lambda c: (-(raw[c] - np.floor(raw[c])), c))
    i = 0
    while sum(alloc.values()) < target:
        c = order[i % len(order)]
        if alloc[c] < counts[c]:
            alloc[c] += 1
        i += 1
    while sum(alloc.values()) > target:
        c = max(alloc, key=lambda c: (alloc[c], -c))
        alloc[c] -= 1
    return alloc


def prune_control_points(points, target_count: int, seed: int = 0) -> list[ControlPoint]:
    """Reduce ``points`` to ``target_count`` members by per-category k-means++.

    Each cluster is represented by its member closest to the centroid, so the
    output is a subset of the input (kept in input order).
    """
    n = len(points)
    if target_count > n:
        raise TargetExceedsCount(f"target {target_count} exceeds {n} control points")
    if target_count < 1:
        raise ValueError("target_count must be >= 1")
    if target_count == n:
        return list(points)
    cats = np.array([p.category for p in points])
    counts = {int(c): int((cats == c).sum()) for c in np.unique(cats)}
    keep = []
    for c, k in _allocate(counts, target_count).items():
        idx = np.nonzero(cats == c)[0]
        if k == len(idx):
            keep.extend(idx.tolist())
            continue
        pos = np.array([points[i].position for i in idx])
        rng = np.random.default_rng([seed, c])
        centers, assign = kmeans(pos, k, rng)
        for j in range(k):
            members = np.nonzero(assign == j)[0]
            d = np.linalg.norm(pos[members] - centers[j], axis=1)
            keep.append(int(idx[members[np.argmin(d)]]))
    return [points[i] for i in sorted(keep)]
