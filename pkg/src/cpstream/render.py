"""Forward (non-differentiable) Gaussian splat renderer used for evaluation.

Besides the color image it returns the alpha-normalized expected depth, the
accumulated opacity, and the label of the strongest contributor per pixel.
The last two drive the synthetic object masks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import quat
from .camera import CameraModel
from .cloud import GaussianCloud

NEAR_PLANE = 0.01
ALPHA_MIN = 1.0 / 255.0
ALPHA_MAX = 0.99
# Screen-space dilation added to every 2D covariance (pixels^2).
LOWPASS = 0.3
MIN_COVERAGE = 1e-4


@dataclass
class RenderResult:
    image: np.ndarray  # (H, W, 3) in [0, 1]
    depth: np.ndarray  # (H, W); +inf where nothing was drawn
    alpha: np.ndarray  # (H, W) accumulated opacity
    labels: np.ndarray  # (H, W) label of the max-weight contributor, -1 if none

    def object_mask(self, threshold: float = 0.5) -> np.ndarray:
        """Label image: object id where covered by an object, 0 elsewhere."""
        out = np.where((self.alpha >= threshold) & (self.labels > 0), self.labels, 0)
        return out.astype(np.uint8)


def splat_footprints(cloud: GaussianCloud, camera: CameraModel):
    """Project Gaussians to screen space.

    Returns (index, means2d, conics, radii, depths) for Gaussians in front of
    the near plane whose 3-sigma box overlaps the image. ``conics`` are the
    inverse 2D covariances as (a, b, c) for [[a, b], [b, c]].
    """
    pc = camera.world_to_camera(cloud.positions)
    z = pc[:, 2]
    idx = np.nonzero(z > NEAR_PLANE)[0]
    pc, z = pc[idx], z[idx]
    f = camera.focal_px
    rot = quat.to_matrix(cloud.rotations[idx])
    m = rot * cloud.scales[idx][:, None, :]
    cov3 = m @ np.swapaxes(m, 1, 2)
    w = camera.rotation_wc
    cov_c = w @ cov3 @ w.T
    jac = np.zeros((len(idx), 2, 3))
    jac[:, 0, 0] = f / z
    jac[:, 1, 1] = f / z
    jac[:, 0, 2] = -f * pc[:, 0] / z**2
    jac[:, 1, 2] = -f * pc[:, 1] / z**2
    cov2 = jac @ cov_c @ np.swapaxes(jac, 1, 2)
    a = cov2[:, 0, 0] + LOWPASS
    b = cov2[:, 0, 1]
    c = cov2[:, 1, 1] + LOWPASS
    det = a * c - b * b
    conics = np.stack([c / det, -b / det, a / det], axis=1)
    mid = 0.5 * (a + c)
    lam = mid + np.sqrt(np.maximum(mid * mid - det, 0.0))
    radii = 3.0 * np.sqrt(lam)
    means = f * pc[:, :2] / z[:, None] + camera.principal_point
    width, height = camera.image_size
    visible = (
        (means[:, 0] + radii >= -0.5) & (means[:, 0] - radii <= width - 0.5)
        & (means[:, 1] + radii >= -0.5) & (means[:, 1] - radii <= height - 0.5)
    )
    return idx[visible], means[visible], conics[visible], radii[visible], z[visible]


def render(cloud: GaussianCloud, camera: CameraModel) -> RenderResult:
    """Alpha-composite Gaussians front to back (stable depth sort)."""
    width, height = camera.image_size
    color = np.zeros((height, width, 3))
    depth_acc = np.zeros((height, width))
    weight_acc = np.zeros((height, width))
    trans = np.ones((height, width))
    best = np.zeros((height, width))
    labels = np.full((height, width), -1, dtype=np.int64)

    idx, means, conics, radii, depths = splat_footprints(cloud, camera)
    order = np.argsort(depths, kind="stable")
    x0s = np.maximum(np.ceil(means[:, 0] - radii), 0).astype(int)
    x1s = np.minimum(np.floor(means[:, 0] + radii), width - 1).astype(int)
    y0s = np.maximum(np.ceil(means[:, 1] - radii), 0).astype(int)
    y1s = np.minimum(np.floor(means[:, 1] + radii), height - 1).astype(int)
    opac = cloud.opacities[idx]
    cols = cloud.colors[idx]
    labs = cloud.labels[idx]
    for k in order:
        x0, x1, y0, y1 = x0s[k], x1s[k] + 1, y0s[k], y1s[k] + 1
        if x1 <= x0 or y1 <= y0:
            continue
        mx, my = means[k]
        dx = np.arange(x0, x1) - mx
        dy = (np.arange(y0, y1) - my)[:, None]
        ca, cb, cc = conics[k]
        maha = ca * dx * dx + 2.0 * cb * dx * dy + cc * dy * dy
        alpha = np.minimum(ALPHA_MAX, opac[k] * np.exp(-0.5 * maha))
        alpha[(alpha < ALPHA_MIN) | (maha > 9.0)] = 0.0
        t = trans[y0:y1, x0:x1]
        wgt = alpha * t
        color[y0:y1, x0:x1] += wgt[:, :, None] * cols[k]
        depth_acc[y0:y1, x0:x1] += wgt * depths[k]
        weight_acc[y0:y1, x0:x1] += wgt
        t *= 1.0 - alpha
        bpatch = best[y0:y1, x0:x1]
        stronger = wgt > bpatch
        np.copyto(bpatch, wgt, where=stronger)
        np.copyto(labels[y0:y1, x0:x1], labs[k], where=stronger)

    covered = weight_acc > MIN_COVERAGE
    depth = np.full((height, width), np.inf)
    depth[covered] = depth_acc[covered] / weight_acc[covered]
    return RenderResult(
        image=np.clip(color, 0.0, 1.0),
        depth=depth,
        alpha=weight_acc,
        labels=labels,
    )
