"""Training targets derived from instance label maps.

Two supervised representations are produced here: 3-class maps
(background / foreground / border) with a border-emphasis weight map,
and star-convex targets (radial boundary distances plus a normalized
object probability).
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import distance_transform_edt

from segboost import kernels

N_RAYS_DEFAULT = 32

BACKGROUND, FOREGROUND, BORDER = 0, 1, 2


@dataclass
class StarTarget:
    """Per-pixel radial distances (H, W, n_rays) and object probability (H, W)."""

    distances: np.ndarray
    object_prob: np.ndarray

    @property
    def n_rays(self) -> int:
        return self.distances.shape[2]


def ray_directions(n_rays: int):
    """Unit step vectors (dy, dx) for rays at angles 2*pi*k / n_rays."""
    angles = 2.0 * np.pi * np.arange(n_rays, dtype=np.float64) / n_rays
    return np.sin(angles), np.cos(angles)


def to_three_class(labels: np.ndarray) -> np.ndarray:
    """Convert an instance label map to {0: background, 1: foreground, 2: border}.

    A labelled pixel is border when any in-bounds 8-neighbour carries a
    different label, including background and other instances.
    """
    labels = np.ascontiguousarray(labels, dtype=np.int32)
    return kernels.three_class_map(labels)


def class_weight_map(classes: np.ndarray, w_border: float = 5.0) -> np.ndarray:
    """Loss weight map: `w_border` on border pixels, 1 elsewhere."""
    if w_border <= 0:
        raise ValueError(f"w_border must be positive, got {w_border}")
    weights = np.ones(classes.shape, dtype=np.float32)
    weights[classes == BORDER] = w_border
    return weights


def star_distances(labels: np.ndarray, n_rays: int = N_RAYS_DEFAULT) -> StarTarget:
    """Compute star-convex training targets for an instance label map.

    For each labelled pixel, distances[k] is the number of unit steps
    along ray k (direction (cos, sin) in x/y image coordinates, nearest
    pixel per step) until a pixel with a different label, where leaving
    the image also terminates the march. Marches are capped at the image
    diagonal. object_prob is the euclidean distance to the instance
    boundary normalized by its per-instance maximum, so every instance
    peaks at 1.0; background is zero in both outputs.
    """
    if n_rays < 3:
        raise ValueError(f"n_rays must be >= 3, got {n_rays}")
    labels = np.ascontiguousarray(labels, dtype=np.int32)
    h, w = labels.shape
    dirs_y, dirs_x = ray_directions(n_rays)
    max_steps = int(math.ceil(math.hypot(h, w)))
    distances = kernels.star_dists(labels, dirs_y, dirs_x, max_steps)
    return StarTarget(distances=distances, object_prob=_object_prob(labels))


def _object_prob(labels: np.ndarray) -> np.ndarray:
    prob = np.zeros(labels.shape, dtype=np.float32)
    for inst in np.unique(labels):
        if inst == 0:
            continue
        ys, xs = np.nonzero(labels == inst)
        y0, y1 = ys.min(), ys.max()
        x0, x1 = xs.min(), xs.max()
        # 1-pixel zero pad so both the true surroundings and the image
        # border act as boundary for the distance transform.
        box = np.zeros((y1 - y0 + 3, x1 - x0 + 3), dtype=bool)
        box[1:-1, 1:-1] = labels[y0:y1 + 1, x0:x1 + 1] == inst
        edt = distance_transform_edt(box)[1:-1, 1:-1]
        inside = box[1:-1, 1:-1]
        prob[y0:y1 + 1, x0:x1 + 1][inside] = (edt[inside] / edt[inside].max()).astype(
            np.float32
        )
    return prob
