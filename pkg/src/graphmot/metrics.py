"""CLEAR MOT (MOTA/MOTP) and IDF1 in 2D (IoU) or 3D (Euclidean) matching."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

BIG = 1e9


class EvalError(ValueError):
    pass


@dataclass(frozen=True)
class EvalConfig:
    mode: str = "3d"
    iou_threshold: float = 0.5
    dist_threshold: float = 1.0

    def __post_init__(self):
        if self.mode not in ("2d", "3d"):
            raise EvalError(f"mode must be '2d' or '3d', got {self.mode!r}")
        if self.iou_threshold <= 0 or self.dist_threshold <= 0:
            raise EvalError("thresholds must be positive")


@dataclass
class EvalReport:
    mota: float
    motp: float
    idf1: float
    fp: int
    fn: int
    idsw: int
    matches: int
    gt_total: int
    pred_total: int
    idtp: float

    def to_dict(self) -> dict:
        return asdict(self)


def box_iou(a, b) -> float:
    ax1, ay1, ax2, ay2 = a
    bx1, by1, bx2, by2 = b
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    return inter / union


def _compatible(a, b, cfg: EvalConfig) -> tuple[bool, float]:
    """(is within threshold, matching cost). Cost is 1-IoU in 2D, distance in 3D."""
    if cfg.mode == "2d":
        iou = box_iou(a, b)
        return iou >= cfg.iou_threshold, 1.0 - iou
    d = float(np.linalg.norm(np.asarray(a, dtype=float) - np.asarray(b, dtype=float)))
    return d <= cfg.dist_threshold, d


def match_frame(gt_t: Mapping, pred_t: Mapping, cfg: EvalConfig,
                carryover: Optional[Mapping[int, int]] = None) -> dict[int, int]:
    """One CLEAR matching step: keep still-valid previous pairs, then assign the
    rest by minimum total cost under the threshold."""
    matches: dict[int, int] = {}
    if carryover:
        for gid, pid in carryover.items():
            if gid in gt_t and pid in pred_t:
                ok, _ = _compatible(gt_t[gid], pred_t[pid], cfg)
                if ok:
                    matches[gid] = pid
    free_gt = sorted(g for g in gt_t if g not in matches)
    used_pred = set(matches.values())
    free_pred = sorted(p for p in pred_t if p not in used_pred)
    if free_gt and free_pred:
        cost = np.full((len(free_gt), len(free_pred)), BIG)
        for i, gid in enumerate(free_gt):
            for j, pid in enumerate(free_pred):
                ok, c = _compatible(gt_t[gid], pred_t[pid], cfg)
                if ok:
                    cost[i, j] = c
        rows, cols = linear_sum_assignment(cost)
        for i, j in zip(rows, cols):
            if cost[i, j] < BIG:
                matches[free_gt[i]] = free_pred[j]
    return matches


def evaluate(gt: Mapping[int, Mapping], pred: Mapping[int, Mapping],
             cfg: EvalConfig) -> EvalReport:
    """Accumulate CLEAR events over frames and compute IDF1 globally.

    gt/pred: frame -> object id -> box (2D) or point (3D).
    """
    gt_total = sum(len(objs) for objs in gt.values())
    if gt_total == 0:
        raise EvalError("empty ground truth: MOTA undefined")
    pred_total = sum(len(objs) for objs in pred.values())

    frames = sorted(set(gt) | set(pred))
    fp = fn = idsw = n_matches = 0
    quality = 0.0  # summed IoU (2d) or distance (3d) over matches
    prev_matches: dict[int, int] = {}
    last_match: dict[int, int] = {}
    overlap: dict[tuple[int, int], int] = {}

    for frame in frames:
        gt_t = gt.get(frame, {})
        pred_t = pred.get(frame, {})
        matches = match_frame(gt_t, pred_t, cfg, prev_matches)
        for gid, pid in matches.items():
            if gid in last_match and last_match[gid] != pid:
                idsw += 1
            last_match[gid] = pid
            _, c = _compatible(gt_t[gid], pred_t[pid], cfg)
            quality += (1.0 - c) if cfg.mode == "2d" else c
        n_matches += len(matches)
        fp += len(pred_t) - len(matches)
        fn += len(gt_t) - len(matches)
        prev_matches = matches
        # identity overlaps for IDF1 (independent of the CLEAR assignment)
        for gid, gbox in gt_t.items():
            for pid, pbox in pred_t.items():
                ok, _ = _compatible(gbox, pbox, cfg)
                if ok:
                    overlap[(gid, pid)] = overlap.get((gid, pid), 0) + 1

    idtp = _best_identity_overlap(overlap)
    idf1 = 2.0 * idtp / (gt_total + pred_total) if (gt_total + pred_total) else 0.0
    if n_matches == 0:
        motp = 0.0
    elif cfg.mode == "2d":
        motp = quality / n_matches  # mean IoU of matches, higher is better
    else:
        motp = 1.0 - (quality / n_matches) / cfg.dist_threshold

    return EvalReport(
        mota=1.0 - (fp + fn + idsw) / gt_total,
        motp=motp,
        idf1=idf1,
        fp=fp,
        fn=fn,
        idsw=idsw,
        matches=n_matches,
        gt_total=gt_total,
        pred_total=pred_total,
        idtp=idtp,
    )


def _best_identity_overlap(overlap: Mapping[tuple[int, int], int]) -> float:
    """Max-weight bipartite matching of GT to prediction trajectories."""
    if not overlap:
        return 0.0
    gt_ids = sorted({g for g, _ in overlap})
    pred_ids = sorted({p for _, p in overlap})
    w = np.zeros((len(gt_ids), len(pred_ids)))
    for (g, p), count in overlap.items():
        w[gt_ids.index(g), pred_ids.index(p)] = count
    rows, cols = linear_sum_assignment(-w)
    return float(w[rows, cols].sum())


def pooled_report(reports: Sequence[EvalReport]) -> EvalReport:
    """Combine per-camera reports by summing events (2D multi-camera mode)."""
    if not reports:
        raise EvalError("nothing to pool")
    fp = sum(r.fp for r in reports)
    fn = sum(r.fn for r in reports)
    idsw = sum(r.idsw for r in reports)
    matches = sum(r.matches for r in reports)
    gt_total = sum(r.gt_total for r in reports)
    pred_total = sum(r.pred_total for r in reports)
    idtp = sum(r.idtp for r in reports)
    motp = (sum(r.motp * r.matches for r in reports) / matches) if matches else 0.0
    return EvalReport(
        mota=1.0 - (fp + fn + idsw) / gt_total,
        motp=motp,
        idf1=2.0 * idtp / (gt_total + pred_total) if (gt_total + pred_total) else 0.0,
        fp=fp, fn=fn, idsw=idsw, matches=matches,
        gt_total=gt_total, pred_total=pred_total, idtp=idtp,
    )
