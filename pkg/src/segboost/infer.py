"""Turn trained networks into instance label maps.

Pixel-classification outputs are cut at a foreground threshold and
split into 4-connected components; star-convex outputs go through
candidate extraction, greedy non-maximum suppression on rasterized
polygon IoU, and priority rendering. Thresholds are selected by
maximizing validation AP over a grid.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from scipy import ndimage

from segboost import kernels, metrics, targets
from segboost.dataio import NORM_PERCENTILES, normalize
from segboost.network import (
    JOINT_CLASS_CHANNELS,
    JOINT_REGRESSION_CHANNEL,
    UNet,
    WeightSnapshot,
    pad_to_factor,
    restore,
)

THRESHOLD_GRID_DEFAULT = tuple(np.round(np.arange(0.1, 0.91, 0.05), 2))

OVERLAP_THRESHOLD_DEFAULT = 0.4

FOUR_CONNECTED = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


@dataclass
class PolygonCandidate:
    """Star polygon proposal: centre pixel, radial distances, score."""

    center: tuple
    dists: np.ndarray
    score: float

    def vertices(self):
        """Polygon vertices as (y, x) float coordinates."""
        dy, dx = targets.ray_directions(len(self.dists))
        return np.stack([self.center[0] + self.dists * dy,
                         self.center[1] + self.dists * dx], axis=1)


@dataclass
class ThresholdSweepResult:
    grid: list
    ap_per_threshold: list
    best_threshold: float
    best_ap: float

    def to_dict(self):
        return {
            "grid": [float(t) for t in self.grid],
            "ap_per_threshold": [float(a) for a in self.ap_per_threshold],
            "best_threshold": float(self.best_threshold),
            "best_ap": float(self.best_ap),
        }


def apply_network(model: UNet, image: np.ndarray) -> np.ndarray:
    """Run one image through a network, padding and cropping as needed.

    Returns the raw head output as a (channels, H, W) float32 array.
    """
    padded, (h, w) = pad_to_factor(image.astype(np.float32), model.spec.depth)
    was_training = model.training
    model.eval()
    with torch.no_grad():
        x = torch.from_numpy(padded[None, None]).to(next(model.parameters()).device)
        out = model(x)[0].cpu().numpy()
    if was_training:
        model.train()
    return out[:, :h, :w]


def activate_joint(raw: np.ndarray) -> dict:
    """Softmax class probabilities plus the linear regression channel."""
    logits = raw[JOINT_CLASS_CHANNELS]
    e = np.exp(logits - logits.max(axis=0, keepdims=True))
    return {
        "class_probs": e / e.sum(axis=0, keepdims=True),
        "regression": raw[JOINT_REGRESSION_CHANNEL],
    }


def activate_star(raw: np.ndarray) -> dict:
    """Sigmoid object probability plus rectified distances (H, W, R)."""
    n_rays = raw.shape[0] - 1
    return {
        "prob": 1.0 / (1.0 + np.exp(-raw[n_rays])),
        "dist": np.moveaxis(raw[:n_rays], 0, -1),
    }


def denoise_image(model: UNet, image: np.ndarray) -> np.ndarray:
    """Apply a denoiser network; returns the regression channel."""
    raw = apply_network(model, image)
    ch = JOINT_REGRESSION_CHANNEL if model.spec.head == "joint" else 0
    return raw[ch]


def _relabel_raster_order(labeled: np.ndarray) -> np.ndarray:
    """Renumber instances 1..K by raster position of each first pixel."""
    flat = labeled.ravel()
    ids, first = np.unique(flat, return_index=True)
    keep = ids > 0
    ids, first = ids[keep], first[keep]
    order = np.argsort(first)
    mapping = np.zeros(int(ids.max()) + 1, dtype=np.int32)
    mapping[ids[order]] = np.arange(1, len(ids) + 1, dtype=np.int32)
    return mapping[labeled]


def fg_threshold_to_instances(fg_prob: np.ndarray, threshold: float) -> np.ndarray:
    """Cut a foreground probability map into 4-connected instances.

    The cut is strict (prob > threshold); components are numbered 1..K
    in raster-scan order of their first pixel.
    """
    if not 0 <= threshold <= 1:
        raise ValueError(f"threshold must be in [0, 1], got {threshold}")
    mask = fg_prob > threshold
    labeled, n = ndimage.label(mask, structure=FOUR_CONNECTED)
    if n == 0:
        return labeled.astype(np.int32)
    return _relabel_raster_order(labeled)


def _candidate_geometry(cands, n_rays):
    ys = np.array([c.center[0] for c in cands], dtype=np.int64)
    xs = np.array([c.center[1] for c in cands], dtype=np.int64)
    dists = np.stack([np.asarray(c.dists, dtype=np.float64) for c in cands]) \
        if cands else np.zeros((0, n_rays), dtype=np.float64)
    return ys, xs, dists


def suppress_candidates(cands: list, shape, overlap_threshold: float) -> list:
    """Greedy NMS over score-sorted candidates via rasterized polygon IoU."""
    if not cands:
        return []
    n_rays = len(cands[0].dists)
    order = sorted(range(len(cands)),
                   key=lambda i: (-cands[i].score, cands[i].center))
    cands = [cands[i] for i in order]
    ys, xs, dists = _candidate_geometry(cands, n_rays)
    dy, dx = targets.ray_directions(n_rays)
    h, w = shape
    geo = kernels.prep_polygon_masks(ys, xs, dists, dy, dx, h, w)
    keep = kernels.nms_keep(*geo, float(overlap_threshold))
    return [c for c, k in zip(cands, keep) if k]


def stardist_nms(prob: np.ndarray, dists: np.ndarray, prob_threshold: float,
                 overlap_threshold: float = OVERLAP_THRESHOLD_DEFAULT) -> list:
    """Extract star polygon candidates above a probability threshold and
    suppress overlaps greedily in descending score order.

    A candidate survives iff its rasterized IoU with every
    higher-scoring survivor is <= overlap_threshold.
    """
    if not 0 <= prob_threshold <= 1 or not 0 <= overlap_threshold <= 1:
        raise ValueError("thresholds must be in [0, 1]")
    ys, xs = np.nonzero(prob > prob_threshold)
    cands = [
        PolygonCandidate(center=(int(y), int(x)),
                         dists=dists[y, x].astype(np.float64),
                         score=float(prob[y, x]))
        for y, x in zip(ys, xs)
    ]
    return suppress_candidates(cands, prob.shape, overlap_threshold)


def render_polygons(cands: list, shape) -> np.ndarray:
    """Rasterize candidates into an instance map, high scores first.

    Pixels already claimed by a higher-priority polygon are never
    overwritten; ids count up in rendering order over polygons that
    claim at least one pixel.
    """
    out_shape = (int(shape[0]), int(shape[1]))
    if not cands:
        return np.zeros(out_shape, dtype=np.int32)
    n_rays = len(cands[0].dists)
    order = sorted(range(len(cands)),
                   key=lambda i: (-cands[i].score, cands[i].center))
    cands = [cands[i] for i in order]
    ys, xs, dists = _candidate_geometry(cands, n_rays)
    dy, dx = targets.ray_directions(n_rays)
    geo = kernels.prep_polygon_masks(ys, xs, dists, dy, dx, *out_shape)
    return kernels.render_masks(*geo, *out_shape)


def segment_star_output(output: dict, prob_threshold: float,
                        overlap_threshold: float = OVERLAP_THRESHOLD_DEFAULT
                        ) -> np.ndarray:
    cands = stardist_nms(output["prob"], output["dist"], prob_threshold,
                         overlap_threshold)
    return render_polygons(cands, output["prob"].shape)


@dataclass
class Pipeline:
    """A trained segmentation pipeline, optionally denoiser-fronted.

    Sequential variants run the frozen denoiser on the normalized input
    and re-normalize before the segmentation network. `kind` selects the
    post-processing path ('threeclass' or 'star').
    """

    kind: str
    segmenter: UNet
    denoiser: UNet = None
    norm_percentiles: tuple = NORM_PERCENTILES
    overlap_threshold: float = OVERLAP_THRESHOLD_DEFAULT
    default_threshold: float = 0.5
    meta: dict = field(default_factory=dict)

    def preprocess(self, image: np.ndarray) -> np.ndarray:
        x = normalize(image, *self.norm_percentiles)
        if self.denoiser is not None:
            x = normalize(denoise_image(self.denoiser, x), *self.norm_percentiles)
        return x

    def raw_outputs(self, image: np.ndarray) -> dict:
        """Activated network outputs for one raw (unnormalized) image."""
        raw = apply_network(self.segmenter, self.preprocess(image))
        return activate_joint(raw) if self.kind == "threeclass" else activate_star(raw)

    def segment_from_outputs(self, outputs: dict, threshold: float) -> np.ndarray:
        if self.kind == "threeclass":
            return fg_threshold_to_instances(
                outputs["class_probs"][targets.FOREGROUND], threshold)
        return segment_star_output(outputs, threshold, self.overlap_threshold)

    def segment(self, image: np.ndarray, threshold: float = None) -> np.ndarray:
        if threshold is None:
            threshold = self.default_threshold
        return self.segment_from_outputs(self.raw_outputs(image), threshold)

    def save(self, out_dir):
        from segboost.network import snapshot

        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        snapshot(self.segmenter, role="segmenter").save(out_dir / "segmenter.npz")
        manifest = {
            "kind": self.kind,
            "norm_percentiles": list(self.norm_percentiles),
            "overlap_threshold": self.overlap_threshold,
            "default_threshold": self.default_threshold,
            "has_denoiser": self.denoiser is not None,
            "meta": self.meta,
        }
        if self.denoiser is not None:
            snapshot(self.denoiser, role="denoiser").save(out_dir / "denoiser.npz")
        (out_dir / "pipeline.json").write_text(json.dumps(manifest, indent=2))

    @classmethod
    def load(cls, out_dir) -> "Pipeline":
        out_dir = Path(out_dir)
        manifest = json.loads((out_dir / "pipeline.json").read_text())
        segmenter = restore(WeightSnapshot.load(out_dir / "segmenter.npz"))
        denoiser = None
        if manifest["has_denoiser"]:
            denoiser = restore(WeightSnapshot.load(out_dir / "denoiser.npz"))
        return cls(
            kind=manifest["kind"],
            segmenter=segmenter,
            denoiser=denoiser,
            norm_percentiles=tuple(manifest["norm_percentiles"]),
            overlap_threshold=manifest["overlap_threshold"],
            default_threshold=manifest["default_threshold"],
            meta=manifest.get("meta", {}),
        )


def predict(pipeline: Pipeline, image: np.ndarray) -> dict:
    """Activated per-pixel outputs of a pipeline for one raw image."""
    return pipeline.raw_outputs(image)


def threshold_sweep(pipeline: Pipeline, val_pairs: list,
                    grid=THRESHOLD_GRID_DEFAULT) -> ThresholdSweepResult:
    """Pick the threshold that maximizes AP over validation pairs.

    Network outputs are computed once per image and re-thresholded per
    grid point; ties break toward the lowest threshold.
    """
    if not val_pairs or len(grid) == 0:
        raise ValueError("need non-empty validation pairs and grid")
    grid = sorted(float(t) for t in grid)
    outputs = [pipeline.raw_outputs(img) for img, _ in val_pairs]
    gts = [lab for _, lab in val_pairs]
    ap_per = []
    for t in grid:
        preds = [pipeline.segment_from_outputs(o, t) for o in outputs]
        ap_per.append(metrics.score_images(gts, preds).ap)
    best = int(np.argmax(ap_per))
    return ThresholdSweepResult(
        grid=grid,
        ap_per_threshold=ap_per,
        best_threshold=grid[best],
        best_ap=ap_per[best],
    )
