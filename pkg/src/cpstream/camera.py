"""Pinhole camera model and ray coordinate frames.

Conventions: camera x points right, y down, z forward along the optical axis.
Pixel (u, v) has u along image columns and v along rows; integer coordinates
are pixel centers. A world point maps to camera coordinates as
``X_cam = rotation_wc @ X_world + translation_wc``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateRay, NonPositiveDepth, PixelOutOfBounds, PointBehindCamera

MIN_DEPTH = 1e-6


@dataclass(frozen=True)
class CameraModel:
    focal_px: float
    focal_m: float
    principal_point: np.ndarray
    image_size: tuple[int, int]  # (width, height)
    rotation_wc: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation_wc: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if not (self.focal_px > 0 and self.focal_m > 0):
            raise ValueError("focal lengths must be positive")
        object.__setattr__(self, "principal_point", np.asarray(self.principal_point, dtype=float))
        object.__setattr__(self, "rotation_wc", np.asarray(self.rotation_wc, dtype=float))
        object.__setattr__(self, "translation_wc", np.asarray(self.translation_wc, dtype=float))
        object.__setattr__(self, "image_size", (int(self.image_size[0]), int(self.image_size[1])))
        r = self.rotation_wc
        if np.abs(r.T @ r - np.eye(3)).max() > 1e-9:
            raise ValueError("rotation_wc is not orthonormal")

    @property
    def pixel_pitch(self) -> float:
        """Meters per pixel on the physical image plane."""
        return self.focal_m / self.focal_px

    @property
    def width(self) -> int:
        return self.image_size[0]

    @property
    def height(self) -> int:
        return self.image_size[1]

    @property
    def K(self) -> np.ndarray:
        cx, cy = self.principal_point
        return np.array([[self.focal_px, 0.0, cx], [0.0, self.focal_px, cy], [0.0, 0.0, 1.0]])

    @property
    def center(self) -> np.ndarray:
        """Projection center in world coordinates."""
        return -self.rotation_wc.T @ self.translation_wc

    def world_to_camera(self, points):
        return np.asarray(points, dtype=float) @ self.rotation_wc.T + self.translation_wc

    def camera_to_world(self, points):
        return (np.asarray(points, dtype=float) - self.translation_wc) @ self.rotation_wc

    def in_bounds(self, pixels) -> np.ndarray:
        """Whether pixels fall inside the image, using pixel-center rounding."""
        pixels = np.asarray(pixels, dtype=float)
        ij = np.floor(pixels + 0.5)
        return (ij[..., 0] >= 0) & (ij[..., 0] < self.width) & (ij[..., 1] >= 0) & (ij[..., 1] < self.height)

    def to_dict(self) -> dict:
        return {
            "focal_px": float(self.focal_px),
            "focal_m": float(self.focal_m),
            "cx": float(self.principal_point[0]),
            "cy": float(self.principal_point[1]),
            "width": self.width,
            "height": self.height,
            "R": [float(x) for x in self.rotation_wc.ravel()],
            "t": [float(x) for x in self.translation_wc],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraModel":
        return cls(
            focal_px=d["focal_px"],
            focal_m=d["focal_m"],
            principal_point=np.array([d["cx"], d["cy"]], dtype=float),
            image_size=(d["width"], d["height"]),
            rotation_wc=np.array(d["R"], dtype=float).reshape(3, 3),
            translation_wc=np.array(d["t"], dtype=float),
        )


@dataclass(frozen=True)
class RayFrame:
    rotation_cr: np.ndarray  # camera -> ray coordinates
    center_pixel: np.ndarray
    depth: float


def look_at(eye, target, up=(0.0, -1.0, 0.0)):
    """World->camera rotation and translation for a camera at ``eye`` facing ``target``.

    ``up`` is the world direction that should appear towards the top of the image.
    """
    eye = np.asarray(eye, dtype=float)
    z = np.asarray(target, dtype=float) - eye
    z /= np.linalg.norm(z)
    y = -np.asarray(up, dtype=float)
    y = y - np.dot(y, z) * z
    y /= np.linalg.norm(y)
    x = np.cross(y, z)
    rotation = np.stack([x, y, z])
    return rotation, -rotation @ eye


def project_points(camera: CameraModel, points_world):
    """Vectorized projection. Returns (pixels (N, 2), depths (N,)); no depth check."""
    pc = camera.world_to_camera(np.atleast_2d(points_world))
    z = pc[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        uv = camera.focal_px * pc[:, :2] / z[:, None] + camera.principal_point
    return uv, z


def project(camera: CameraModel, point_world):
    """Project a world point. Returns (pixel, camera-frame depth)."""
    pc = camera.world_to_camera(point_world)
    if pc[2] <= MIN_DEPTH:
        raise PointBehindCamera(f"camera-frame depth {pc[2]:.3g} m is not in front of the camera")
    pixel = camera.focal_px * pc[:2] / pc[2] + camera.principal_point
    return pixel, float(pc[2])


def image_plane_position(camera: CameraModel, pixel):
    """Metric position (x, y) on the physical image plane, relative to the principal point."""
    return (np.asarray(pixel, dtype=float) - camera.principal_point) * camera.pixel_pitch


def back_project_position(camera: CameraModel, pixel, depth):
    """Camera-frame point ``z/f * (x0, y0, f)`` for a pixel observed at depth ``z``."""
    if not depth > 0:
        raise NonPositiveDepth(f"depth must be positive, got {depth}")
    x0, y0 = image_plane_position(camera, pixel)
    return (depth / camera.focal_m) * np.array([x0, y0, camera.focal_m])


def back_project_pixels(camera: CameraModel, pixels, depths):
    """Vectorized back-projection to world coordinates."""
    pixels = np.asarray(pixels, dtype=float)
    depths = np.asarray(depths, dtype=float)
    xy = (pixels - camera.principal_point) / camera.focal_px
    pc = np.concatenate([xy * depths[:, None], depths[:, None]], axis=1)
    return camera.camera_to_world(pc)


def ray_direction(camera: CameraModel, pixel):
    """Unit ray through ``pixel`` in camera coordinates."""
    x0, y0 = image_plane_position(camera, pixel)
    d = np.array([x0, y0, camera.focal_m])
    return d / np.linalg.norm(d)


def build_ray_frame(camera: CameraModel, pixel, depth) -> RayFrame:
    """Ray coordinate frame whose z-axis is the viewing ray through ``pixel``.

    The x-axis is the camera x-axis made orthogonal to the ray; y completes a
    right-handed frame. Rows of ``rotation_cr`` are the frame axes in camera
    coordinates.
    """
    pixel = np.asarray(pixel, dtype=float)
    if not camera.in_bounds(pixel):
        raise PixelOutOfBounds(f"pixel {pixel.tolist()} outside {camera.image_size}")
    if not depth > 0:
        raise NonPositiveDepth(f"depth must be positive, got {depth}")
    z = ray_direction(camera, pixel)
    for seed in (np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0])):
        x = seed - np.dot(seed, z) * z
        n = np.linalg.norm(x)
        if n > 1e-12:
            break
    else:  # pragma: no cover - both seeds cannot be parallel to one ray
        raise DegenerateRay(f"ray through {pixel.tolist()} is degenerate")
    x /= n
    y = np.cross(z, x)
    return RayFrame(rotation_cr=np.stack([x, y, z]), center_pixel=pixel, depth=float(depth))


def load_cameras(path) -> list[CameraModel]:
    with open(path) as f:
        return [CameraModel.from_dict(d) for d in json.load(f)]


def save_cameras(cameras, path):
    with open(path, "w") as f:
        json.dump([c.to_dict() for c in cameras], f, indent=1)
