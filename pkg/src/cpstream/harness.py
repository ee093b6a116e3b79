"""Synthetic rigid-motion scenes used as ground truth, plus mask sampling grids.

Every object follows a rigid trajectory ``X_t = R_t @ X_0 + T_t`` relative to
the initial cloud; background points (label 0) stay put. Flow fields are
backward-indexed: the value at a frame-t pixel is ``pixel_t - pixel_{t-1}`` of
the surface point seen there, so ``pixel_t - flow`` lands on its frame t-1
projection.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import quat
from .camera import CameraModel, back_project_pixels, look_at, project_points
from .cloud import GaussianCloud
from .fileio import FlowField
from .render import RenderResult, render

MIN_NEIGHBORHOOD = 8
MIN_RAY_DEPTH = 1e-6


@dataclass
class SyntheticSequence:
    initial: GaussianCloud
    rotations: dict[int, np.ndarray]  # object id -> (F, 4) quaternions
    translations: dict[int, np.ndarray]  # object id -> (F, 3)
    cameras: list[CameraModel]
    frame_count: int
    _renders: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        for k, q in self.rotations.items():
            if np.any(np.abs(np.linalg.norm(q, axis=1) - 1.0) > 1e-9):
                raise ValueError(f"trajectory quaternions of object {k} are not unit-norm")

    @property
    def object_ids(self) -> list[int]:
        return sorted(self.rotations)

    def pose(self, obj: int, frame: int):
        """(R, T) mapping initial positions of ``obj`` to frame ``frame``."""
        return quat.to_matrix(self.rotations[obj][frame]), self.translations[obj][frame]

    def step(self, obj: int, frame: int):
        """(R, T) mapping positions at ``frame - 1`` to ``frame``."""
        r0, t0 = self.pose(obj, frame - 1)
        r1, t1 = self.pose(obj, frame)
        r = r1 @ r0.T
        return r, t1 - r @ t0

    def cloud_at(self, frame: int) -> GaussianCloud:
        cloud = self.initial.copy()
        for k in self.object_ids:
            sel = cloud.labels == k
            r, t = self.pose(k, frame)
            cloud.positions[sel] = cloud.positions[sel] @ r.T + t
            cloud.rotations[sel] = quat.multiply(self.rotations[k][frame], cloud.rotations[sel])
        return cloud

    def render_view(self, view: int, frame: int) -> RenderResult:
        key = (view, frame)
        if key not in self._renders:
            self._renders[key] = render(self.cloud_at(frame), self.cameras[view])
        return self._renders[key]

    def masks(self, frame: int) -> list[np.ndarray]:
        return [self.render_view(j, frame).object_mask() for j in range(len(self.cameras))]


def synthesize_flow(seq: SyntheticSequence, view: int, frame: int) -> FlowField:
    """Exact backward flow between ``frame - 1`` and ``frame`` for one view.

    Each object-covered pixel is lifted to 3D with the rendered depth, moved
    back one step along its object's rigid trajectory and re-projected.
    Background pixels get zero flow.
    """
    if frame < 1:
        raise ValueError("flow needs frame >= 1")
    cam = seq.cameras[view]
    obs = seq.render_view(view, frame)
    labels = obs.object_mask()
    flow = np.zeros((cam.height, cam.width, 2))
    for k in seq.object_ids:
        ys, xs = np.nonzero(labels == k)
        if len(xs) == 0:
            continue
        pix = np.stack([xs, ys], axis=1).astype(float)
        pts = back_project_pixels(cam, pix, obs.depth[ys, xs])
        r, t = seq.step(k, frame)
        prev = (pts - t) @ r
        prev_pix, _ = project_points(cam, prev)
        flow[ys, xs] = pix - prev_pix
    return FlowField(flow)


def sampling_grid(mask, spacing: int, radius: float, min_pixels: int = MIN_NEIGHBORHOOD):
    """Lattice centers inside ``mask`` with their in-mask disk neighborhoods.

    Returns a list of ``(center, pixels)`` with ``center`` an (x, y) integer
    pair and ``pixels`` an (M, 2) array of (x, y) coordinates. Neighborhoods
    with fewer than ``min_pixels`` pixels are dropped.
    """
    if spacing < 1 or radius < 1:
        raise ValueError("spacing and radius must be >= 1")
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    r = int(np.floor(radius))
    oy, ox = np.mgrid[-r:r + 1, -r:r + 1]
    disk = ox**2 + oy**2 <= radius**2
    ox, oy = ox[disk], oy[disk]
    out = []
    for cy in range(0, h, spacing):
        for cx in range(0, w, spacing):
            if not mask[cy, cx]:
                continue
            xs, ys = cx + ox, cy + oy
            inside = (xs >= 0) & (xs < w) & (ys >= 0) & (ys < h)
            xs, ys = xs[inside], ys[inside]
            keep = mask[ys, xs]
            if keep.sum() < min_pixels:
                continue
            out.append(((cx, cy), np.stack([xs[keep], ys[keep]], axis=1)))
    return out


def ray_traced_sphere(camera: CameraModel, center, radius: float, rotation, translation, label: int = 1):
    """Exact mask, depth and backward flow of a rigid sphere, without splatting.

    The sphere's surface points move as ``X_t = R (X_{t-1} - center) + center
    + translation``, where ``center`` is the sphere center at frame t-1 and
    ``R`` is the 3x3 ``rotation``. Every pixel whose ray hits the frame-t sphere
    gets its exact camera-frame depth and the exact backward flow.
    Returns (labels uint8 (H, W), depth (H, W) with +inf off the sphere, FlowField).
    """
    center = np.asarray(center, dtype=float)
    rotation = np.asarray(rotation, dtype=float)
    translation = np.asarray(translation, dtype=float)
    ys, xs = np.mgrid[0:camera.height, 0:camera.width]
    pix = np.stack([xs.ravel(), ys.ravel()], axis=1).astype(float)
    dirs_cam = np.concatenate([(pix - camera.principal_point) / camera.focal_px, np.ones((len(pix), 1))], axis=1)
    dirs = dirs_cam @ camera.rotation_wc  # world directions with unit camera-z component
    origin = camera.center
    moved_center = center + translation
    oc = origin - moved_center
    a = np.einsum("ij,ij->i", dirs, dirs)
    b = 2.0 * dirs @ oc
    c = oc @ oc - radius**2
    disc = b * b - 4.0 * a * c
    hit = disc > 0
    s = (-b[hit] - np.sqrt(disc[hit])) / (2.0 * a[hit])
    hit_idx = np.nonzero(hit)[0]
    front = s > MIN_RAY_DEPTH
    hit_idx, s = hit_idx[front], s[front]
    points = origin + s[:, None] * dirs[hit_idx]
    previous = (points - moved_center) @ rotation + center
    prev_pix, _ = project_points(camera, previous)
    depth = np.full(len(pix), np.inf)
    depth[hit_idx] = s
    flow = np.zeros((len(pix), 2))
    flow[hit_idx] = pix[hit_idx] - prev_pix
    labels = np.zeros(len(pix), dtype=np.uint8)
    labels[hit_idx] = label
    shape = (camera.height, camera.width)
    return labels.reshape(shape), depth.reshape(shape), FlowField(flow.reshape(*shape, 2))


# ---------------------------------------------------------------------------
# Scene construction


def _frame_from_normal(normal):
    """Quaternion rotating local z onto ``normal``."""
    z = normal / np.linalg.norm(normal)
    a = np.array([1.0, 0.0, 0.0]) if abs(z[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    x = a - np.dot(a, z) * z
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return quat.from_matrix(np.stack([x, y, z], axis=1))


def _texture(points, rng, base):
    """Smooth color variation plus per-point noise, so renders carry texture."""
    phase = rng.uniform(0, 2 * np.pi, size=3)
    wave = 0.5 + 0.5 * np.sin(7.0 * points @ rng.normal(size=(3, 3)) + phase)
    col = 0.55 * np.asarray(base) + 0.35 * wave + 0.1 * rng.uniform(size=(len(points), 3))
    return np.clip(col, 0.0, 1.0)


def sphere_gaussians(center, radius, count, label, rng, base_color=(0.8, 0.3, 0.2), opacity=0.9):
    """Gaussians on a Fibonacci lattice over a sphere surface, flattened along the normal."""
    i = np.arange(count) + 0.5
    phi = np.arccos(1.0 - 2.0 * i / count)
    theta = np.pi * (1.0 + 5.0**0.5) * i
    normals = np.stack([np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)], axis=1)
    pts = np.asarray(center, dtype=float) + radius * normals
    spacing = np.sqrt(4.0 * np.pi * radius**2 / count)
    rotations = np.stack([_frame_from_normal(n) for n in normals])
    scales = np.tile([0.5 * spacing, 0.5 * spacing, 0.15 * spacing], (count, 1))
    return GaussianCloud(
        positions=pts,
        rotations=rotations,
        scales=scales,
        opacities=np.full(count, opacity),
        colors=_texture(pts, rng, base_color),
        labels=np.full(count, label),
    )


def plane_gaussians(center, normal, size, per_side, label, rng, base_color=(0.2, 0.4, 0.8), opacity=0.9, up=(0.0, 1.0, 0.0)):
    """Square patch of Gaussians centered at ``center`` facing ``normal``."""
    n = np.asarray(normal, dtype=float)
    n /= np.linalg.norm(n)
    u = np.cross(up, n)
    if np.linalg.norm(u) < 1e-9:
        u = np.cross([1.0, 0.0, 0.0], n)
    u /= np.linalg.norm(u)
    v = np.cross(n, u)
    s = (np.arange(per_side) + 0.5) / per_side - 0.5
    a, b = np.meshgrid(s * size, s * size)
    pts = np.asarray(center, dtype=float) + a.reshape(-1, 1) * u + b.reshape(-1, 1) * v
    spacing = size / per_side
    count = len(pts)
    q = quat.from_matrix(np.stack([u, v, n], axis=1))
    return GaussianCloud(
        positions=pts,
        rotations=np.tile(q, (count, 1)),
        scales=np.tile([0.6 * spacing, 0.6 * spacing, 0.1 * spacing], (count, 1)),
        opacities=np.full(count, opacity),
        colors=_texture(pts, rng, base_color),
        labels=np.full(count, label),
    )


def arc_cameras(views, distance, target=(0.0, 0.0, 0.0), focal_px=360.0, focal_m=0.0072,
                image_size=(256, 256), azimuth=(0.0, 90.0), elevation=(5.0, 35.0)):
    """Cameras along a quarter-arc spiral around ``target``, all looking at it.

    World y points down (so elevated cameras sit at negative y).
    """
    target = np.asarray(target, dtype=float)
    az = np.radians(np.linspace(*azimuth, views)) if views > 1 else np.radians([azimuth[0]])
    el = np.radians(np.linspace(*elevation, views)) if views > 1 else np.radians([elevation[0]])
    cams = []
    for a, e in zip(az, el):
        eye = target + distance * np.array([np.sin(a) * np.cos(e), -np.sin(e), -np.cos(a) * np.cos(e)])
        r, t = look_at(eye, target)
        cams.append(CameraModel(
            focal_px=focal_px,
            focal_m=focal_m,
            principal_point=np.array([(image_size[0] - 1) / 2.0, (image_size[1] - 1) / 2.0]),
            image_size=image_size,
            rotation_wc=r,
            translation_wc=t,
        ))
    return cams


def constant_twist_trajectory(frames, center, velocity, angular_velocity):
    """Rigid trajectory rotating about a moving ``center`` at constant rates per frame.

    Returns (quaternions (F, 4), translations (F, 3)) in the ``X_t = R_t X_0 + T_t`` form.
    """
    center = np.asarray(center, dtype=float)
    velocity = np.asarray(velocity, dtype=float)
    omega = np.asarray(angular_velocity, dtype=float)
    qs, ts = [], []
    for t in range(frames):
        q = quat.from_rotvec(omega * t)
        r = quat.to_matrix(q)
        qs.append(q)
        ts.append(center + velocity * t - r @ center)
    return np.array(qs), np.array(ts)


@dataclass
class SceneConfig:
    seed: int = 0
    frames: int = 30
    views: int = 4
    width: int = 256
    height: int = 256
    focal_px: float = 360.0
    focal_m: float = 0.0072
    camera_distance: float = 3.5
    sphere_radius: float = 0.3
    sphere_points: int = 1000
    background: bool = True
    wall_per_side: int = 36
    occlusion_free: bool = True
    speed: float = 0.008  # meters per frame
    spin: float = 0.02  # radians per frame


def make_scene(config: SceneConfig | None = None) -> SyntheticSequence:
    """Two rigidly moving spheres in front of a static wall, seen by an arc of cameras."""
    cfg = config or SceneConfig()
    rng = np.random.default_rng(cfg.seed)
    cams = arc_cameras(cfg.views, cfg.camera_distance, focal_px=cfg.focal_px, focal_m=cfg.focal_m,
                       image_size=(cfg.width, cfg.height))
    centers = [np.array([0.0, -0.5, 0.0]), np.array([0.0, 0.5, 0.0])]
    colors = [(0.85, 0.3, 0.2), (0.2, 0.7, 0.3)]
    parts = [
        sphere_gaussians(c, cfg.sphere_radius, cfg.sphere_points, k + 1, rng, base_color=col)
        for k, (c, col) in enumerate(zip(centers, colors))
    ]
    rotations, translations = {}, {}
    for k, c in enumerate(centers):
        vel = rng.normal(size=3)
        vel *= cfg.speed / np.linalg.norm(vel)
        omega = rng.normal(size=3)
        omega *= cfg.spin / np.linalg.norm(omega)
        rotations[k + 1], translations[k + 1] = constant_twist_trajectory(cfg.frames, c, vel, omega)

    objects = GaussianCloud.concatenate(parts)
    if cfg.background:
        view_dir = np.mean([c.rotation_wc[2] for c in cams], axis=0)
        view_dir /= np.linalg.norm(view_dir)
        wall = plane_gaussians(1.2 * view_dir, -view_dir, 3.2, cfg.wall_per_side, 0, rng,
                               base_color=(0.5, 0.5, 0.6), opacity=0.95)
        if cfg.occlusion_free:
            wall = _drop_occluded(wall, objects, cams)
        cloud = GaussianCloud.concatenate([objects, wall])
    else:
        cloud = objects
    return SyntheticSequence(cloud, rotations, translations, cams, cfg.frames)


def _drop_occluded(background, objects, cameras, margin=2):
    """Remove background points whose projection lands on an object silhouette in any view."""
    keep = np.ones(len(background), dtype=bool)
    for cam in cameras:
        sil = render(objects, cam).alpha >= 0.05
        if margin:
            from scipy.ndimage import binary_dilation

            sil = binary_dilation(sil, iterations=margin)
        pix, z = project_points(cam, background.positions)
        ij = np.floor(pix + 0.5).astype(int)
        ok = cam.in_bounds(pix) & (z > 0)
        hit = np.zeros(len(background), dtype=bool)
        hit[ok] = sil[ij[ok, 1], ij[ok, 0]]
        keep &= ~hit
    return background.subset(keep)
