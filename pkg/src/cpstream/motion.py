"""Object-wise warping of Gaussians by inverse-distance blending of control-point motion."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from . import quat
from .cloud import GaussianCloud
from .errors import NoControlPointsForCategory, NoNeighbors

DEFAULT_K = 3
COINCIDENT = 1e-9
BACKGROUND = 0


@dataclass
class MotionSample:
    translation: np.ndarray
    rotation: np.ndarray


@dataclass
class ControlArrays:
    """Control points flattened into arrays for fast lookup."""

    positions: np.ndarray
    translations: np.ndarray
    rotations: np.ndarray
    categories: np.ndarray

    @classmethod
    def from_points(cls, points) -> "ControlArrays":
        if not points:
            return cls(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 4)), np.zeros(0, dtype=int))
        return cls(
            positions=np.array([p.position for p in points], dtype=float),
            translations=np.array([p.world_translation() for p in points]),
            rotations=np.array([p.world_rotation() for p in points]),
            categories=np.array([p.category for p in points], dtype=int),
        )

    def select(self, category: int) -> "ControlArrays":
        sel = self.categories == category
        return ControlArrays(self.positions[sel], self.translations[sel], self.rotations[sel], self.categories[sel])


def interpolation_weights(gaussian_pos, neighbors) -> np.ndarray:
    """Normalized inverse-distance weights. A neighbor closer than 1e-9 m takes all the weight."""
    neighbors = np.asarray(neighbors, dtype=float).reshape(-1, 3)
    if len(neighbors) == 0:
        raise NoNeighbors("at least one neighbor is required")
    d = np.linalg.norm(neighbors - np.asarray(gaussian_pos, dtype=float), axis=1)
    return weights_from_distances(d[None, :])[0]


def weights_from_distances(d):
    """Row-wise version of :func:`interpolation_weights` for a (Q, K) distance matrix."""
    d = np.asarray(d, dtype=float)
    close = d < COINCIDENT
    hit = close.any(axis=1)
    w = np.empty_like(d)
    if np.any(~hit):
        inv = 1.0 / d[~hit]
        w[~hit] = inv / inv.sum(axis=1, keepdims=True)
    if np.any(hit):
        first = np.argmax(close[hit], axis=1)
        onehot = np.zeros((hit.sum(), d.shape[1]))
        onehot[np.arange(len(first)), first] = 1.0
        w[hit] = onehot
    return w


def knn(points, queries, k: int):
    """K nearest ``points`` for each query, ordered by distance then index.

    Returns (indices, distances), both (Q, min(k, len(points))).
    """
    points = np.asarray(points, dtype=float)
    queries = np.atleast_2d(np.asarray(queries, dtype=float))
    m = len(points)
    if m == 0:
        raise NoNeighbors("no points to search")
    k = min(k, m)
    kk = min(k + 1, m)
    dist, idx = cKDTree(points).query(queries, k=kk)
    dist = dist.reshape(len(queries), kk)
    idx = idx.reshape(len(queries), kk)
    if kk > k:
        tie = dist[:, k - 1] == dist[:, k]
        for row in np.nonzero(tie)[0]:
            d = np.linalg.norm(points - queries[row], axis=1)
            order = np.argsort(d, kind="stable")[:kk]
            idx[row], dist[row] = order, d[order]
        dist, idx = dist[:, :k], idx[:, :k]
    order = np.lexsort((idx, dist), axis=1)
    rows = np.arange(len(queries))[:, None]
    return idx[rows, order], dist[rows, order]


def blend_quaternions(quats, weights):
    """Weighted sum of quaternions aligned to the first one's hemisphere, then normalized.

    ``quats`` is (..., K, 4) and ``weights`` (..., K).
    """
    quats = np.asarray(quats, dtype=float)
    weights = np.asarray(weights, dtype=float)
    sign = np.where(np.sum(quats * quats[..., :1, :], axis=-1) < 0, -1.0, 1.0)
    q = np.sum((weights * sign)[..., None] * quats, axis=-2)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def _blend(controls: ControlArrays, queries, k):
    idx, dist = knn(controls.positions, queries, k)
    w = weights_from_distances(dist)
    t = np.einsum("qk,qkd->qd", w, controls.translations[idx])
    q = blend_quaternions(controls.rotations[idx], w)
    return t, q


def interpolate_motion(position, control_points, k: int = DEFAULT_K, category: int | None = None) -> MotionSample:
    """Blend the motion of the ``k`` nearest control points (of ``category``, if given)."""
    controls = control_points if isinstance(control_points, ControlArrays) else ControlArrays.from_points(control_points)
    if category is not None:
        controls = controls.select(category)
    if len(controls.positions) == 0:
        raise NoControlPointsForCategory(category)
    t, q = _blend(controls, np.asarray(position, dtype=float)[None, :], k)
    return MotionSample(t[0], q[0])


def apply_motion(cloud: GaussianCloud, control_points, k: int = DEFAULT_K) -> GaussianCloud:
    """Move every object Gaussian by the motion blended from control points of its own category.

    Background Gaussians are untouched; only positions and rotations change,
    and rotation is applied about each Gaussian's own center.
    """
    controls = control_points if isinstance(control_points, ControlArrays) else ControlArrays.from_points(control_points)
    out = cloud.copy()
    for c in np.unique(cloud.labels):
        if c == BACKGROUND:
            continue
        sel = np.nonzero(cloud.labels == c)[0]
        cat = controls.select(int(c))
        if len(cat.positions) == 0:
            raise NoControlPointsForCategory(int(c))
        t, q = _blend(cat, cloud.positions[sel], k)
        moving = np.any(t != 0.0, axis=1) | np.any(q != quat.IDENTITY, axis=1)
        rows = sel[moving]
        out.positions[rows] = cloud.positions[rows] + t[moving]
        out.rotations[rows] = quat.multiply(q[moving], cloud.rotations[rows])
    return out
