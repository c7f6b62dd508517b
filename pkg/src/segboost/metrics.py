"""Instance-level evaluation: object matching, AP, SEG, aggregation.

AP follows the detection convention TP / (TP + FP + FN) under greedy
one-to-one matching at an IoU criterion (default 0.5). SEG is the mean
Jaccard index over ground-truth objects, each paired with the unique
predicted object covering a strict majority of its pixels.
"""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class MatchResult:
    """One-to-one matching between gt and pred instance ids."""

    pairs: list  # (gt_id, pred_id, iou)
    unmatched_gt: list
    unmatched_pred: list

    @property
    def tp(self) -> int:
        return len(self.pairs)

    @property
    def fp(self) -> int:
        return len(self.unmatched_pred)

    @property
    def fn(self) -> int:
        return len(self.unmatched_gt)


@dataclass
class MetricsReport:
    """Scores for one evaluated run (one threshold, many images)."""

    ap: float
    seg: float
    tp: int
    fp: int
    fn: int
    best_threshold: float = float("nan")
    per_image: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "ap": self.ap,
            "seg": self.seg,
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "best_threshold": self.best_threshold,
            "per_image": self.per_image,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(**d)


@dataclass
class AggregateSummary:
    """Cross-repeat mean and standard error per metric."""

    n_runs: int
    ap_mean: float
    ap_se: float
    seg_mean: float
    seg_se: float


def _instance_stats(gt: np.ndarray, pred: np.ndarray):
    """Ids, areas, and pairwise intersection counts of two label maps."""
    gt_ids = np.unique(gt)
    gt_ids = gt_ids[gt_ids > 0]
    pred_ids = np.unique(pred)
    pred_ids = pred_ids[pred_ids > 0]
    gt_areas = {int(g): int((gt == g).sum()) for g in gt_ids}
    pred_areas = {int(p): int((pred == p).sum()) for p in pred_ids}

    both = (gt > 0) & (pred > 0)
    inter = {}
    if both.any():
        g = gt[both].astype(np.int64)
        p = pred[both].astype(np.int64)
        # encode (gt, pred) id pairs into one integer for bincount
        base = int(pred.max()) + 1
        counts = np.bincount(g * base + p)
        nz = np.nonzero(counts)[0]
        for code in nz:
            inter[(int(code // base), int(code % base))] = int(counts[code])
    return gt_ids, pred_ids, gt_areas, pred_areas, inter


def match_for_ap(gt: np.ndarray, pred: np.ndarray, iou_min: float = 0.5) -> MatchResult:
    """Greedily match instances by descending IoU, keeping IoU >= iou_min.

    Each gt and each pred id participates in at most one pair; ties in
    IoU resolve toward smaller (gt_id, pred_id) for determinism.
    """
    if gt.shape != pred.shape:
        raise ValueError(f"shape mismatch: gt {gt.shape} vs pred {pred.shape}")
    gt_ids, pred_ids, gt_areas, pred_areas, inter = _instance_stats(gt, pred)

    cand = []
    for (g, p), i in inter.items():
        iou = i / (gt_areas[g] + pred_areas[p] - i)
        if iou >= iou_min:
            cand.append((iou, g, p))
    cand.sort(key=lambda t: (-t[0], t[1], t[2]))

    matched_g, matched_p, pairs = set(), set(), []
    for iou, g, p in cand:
        if g in matched_g or p in matched_p:
            continue
        matched_g.add(g)
        matched_p.add(p)
        pairs.append((g, p, iou))
    return MatchResult(
        pairs=pairs,
        unmatched_gt=[int(g) for g in gt_ids if g not in matched_g],
        unmatched_pred=[int(p) for p in pred_ids if p not in matched_p],
    )


def average_precision(gt: np.ndarray, pred: np.ndarray, iou_min: float = 0.5) -> float:
    """TP / (TP + FP + FN); 1.0 when both maps are empty."""
    m = match_for_ap(gt, pred, iou_min)
    denom = m.tp + m.fp + m.fn
    return m.tp / denom if denom > 0 else 1.0


def seg_score(gt: np.ndarray, pred: np.ndarray, inclusive: bool = False) -> float:
    """Mean Jaccard over gt objects against their majority-covering prediction.

    A gt object contributes J = |R∩S| / |R∪S| for the predicted object S
    covering more than half of its pixels (at most one such S exists),
    and 0 when no prediction reaches majority coverage. `inclusive`
    accepts exactly-50% coverage as well (ties then resolve toward the
    larger intersection, then the smaller pred id). Empty gt scores 1.0.
    """
    if gt.shape != pred.shape:
        raise ValueError(f"shape mismatch: gt {gt.shape} vs pred {pred.shape}")
    gt_ids, _, gt_areas, pred_areas, inter = _instance_stats(gt, pred)
    if len(gt_ids) == 0:
        return 1.0

    by_gt = {}
    for (g, p), i in inter.items():
        by_gt.setdefault(g, []).append((p, i))

    total = 0.0
    for g in gt_ids:
        g = int(g)
        area = gt_areas[g]
        best = None
        for p, i in sorted(by_gt.get(g, []), key=lambda t: (-t[1], t[0])):
            if 2 * i > area or (inclusive and 2 * i == area):
                best = (p, i)
                break
        if best is not None:
            p, i = best
            total += i / (area + pred_areas[p] - i)
    return total / len(gt_ids)


def score_images(gt_list, pred_list, iou_min: float = 0.5,
                 inclusive_seg: bool = False) -> MetricsReport:
    """Dataset-level metrics over paired label maps.

    AP pools TP/FP/FN over all images; SEG averages over all gt objects
    in the dataset (empty-gt images contribute their 1.0 convention as a
    single pseudo-object so perfect background predictions are not
    penalized). Per-image scores are retained for reporting.
    """
    if len(gt_list) != len(pred_list) or len(gt_list) == 0:
        raise ValueError("need equal, non-empty gt and prediction lists")
    tp = fp = fn = 0
    seg_num = 0.0
    seg_den = 0
    per_image = []
    for idx, (gt, pred) in enumerate(zip(gt_list, pred_list)):
        m = match_for_ap(gt, pred, iou_min)
        s = seg_score(gt, pred, inclusive_seg)
        n_gt = m.tp + m.fn
        tp += m.tp
        fp += m.fp
        fn += m.fn
        seg_num += s * max(n_gt, 1)
        seg_den += max(n_gt, 1)
        denom = m.tp + m.fp + m.fn
        per_image.append({
            "index": idx,
            "ap": m.tp / denom if denom > 0 else 1.0,
            "seg": s,
            "tp": m.tp,
            "fp": m.fp,
            "fn": m.fn,
        })
    denom = tp + fp + fn
    return MetricsReport(
        ap=tp / denom if denom > 0 else 1.0,
        seg=seg_num / seg_den,
        tp=tp,
        fp=fp,
        fn=fn,
        per_image=per_image,
    )


def aggregate(runs) -> AggregateSummary:
    """Mean and standard error (sample std / sqrt(n)) over repeated runs."""
    if len(runs) == 0:
        raise ValueError("cannot aggregate zero runs")
    aps = np.array([r.ap for r in runs], dtype=np.float64)
    segs = np.array([r.seg for r in runs], dtype=np.float64)

    def se(v):
        return float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else 0.0

    return AggregateSummary(
        n_runs=len(runs),
        ap_mean=float(aps.mean()),
        ap_se=se(aps),
        seg_mean=float(segs.mean()),
        seg_se=se(segs),
    )
