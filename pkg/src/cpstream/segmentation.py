"""Multi-view mask voting that assigns every Gaussian to background or an object."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import MIN_DEPTH, project_points
from .cloud import GaussianCloud
from .errors import MissingMask

BACKGROUND = 0


@dataclass
class LabelAssignment:
    counters: np.ndarray  # (N, categories) vote counts, column 0 is background
    labels: np.ndarray  # (N,)


def vote_labels(cloud: GaussianCloud, cameras, masks, num_categories: int | None = None) -> LabelAssignment:
    """Count, per Gaussian center and view, which object mask it projects into.

    ``masks[j]`` is an 8-bit label image for view ``j`` (0 = background,
    k = object k). Centers landing outside every object mask vote for the
    background; projections outside the image or behind the camera do not
    vote. Labels are the argmax of the counters, ties going to the lowest
    category (so background wins ties).
    """
    masks = list(masks) if not isinstance(masks, dict) else masks
    for j in range(len(cameras)):
        try:
            m = masks[j]
        except (IndexError, KeyError):
            raise MissingMask(j) from None
        if m is None:
            raise MissingMask(j)
    if num_categories is None:
        num_categories = 1 + max(int(np.max(masks[j])) for j in range(len(cameras)))
    counters = np.zeros((len(cloud), num_categories), dtype=np.int64)
    rows = np.arange(len(cloud))
    for j, cam in enumerate(cameras):
        mask = np.asarray(masks[j])
        pix, z = project_points(cam, cloud.positions)
        ok = (z > MIN_DEPTH) & cam.in_bounds(np.where(np.isfinite(pix), pix, -1.0))
        ij = np.floor(pix[ok] + 0.5).astype(int)
        votes = mask[ij[:, 1], ij[:, 0]].astype(np.int64)
        np.add.at(counters, (rows[ok], votes), 1)
    return LabelAssignment(counters=counters, labels=np.argmax(counters, axis=1))


def apply_labels(cloud: GaussianCloud, assignment: LabelAssignment) -> GaussianCloud:
    out = cloud.copy()
    out.labels = assignment.labels.copy()
    return out
