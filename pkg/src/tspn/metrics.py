"""Relation detection (R@K, mAP) and relation tagging (P@K) evaluation.

A prediction matches a ground-truth relation when the (subject category,
predicate, object category) labels agree and both the subject and the object
trajectories overlap the ground truth with vIoU above the threshold.
Matching is greedy in rank order and one-to-one.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .data import RelationInstance, VideoAnnotation, ranked
from .geometry import clipped_viou, viou

log = logging.getLogger(__name__)

RECALL_KS = (50, 100)
PRECISION_KS = (1, 5, 10)
COLUMNS = ("R@50", "R@100", "mAP", "P@1", "P@5", "P@10")


@dataclass
class MatchResult:
    pred_to_gt: list[int | None]
    gt_matched: list[bool]

    @property
    def n_gt(self) -> int:
        return len(self.gt_matched)


def labels(video: VideoAnnotation, rel: RelationInstance) -> tuple[int, int, int]:
    return (video.category_of(rel.subject_id), rel.predicate_id,
            video.category_of(rel.object_id))


def pair_vious(pred_video: VideoAnnotation, pred: RelationInstance,
               gt_video: VideoAnnotation, gt: RelationInstance,
               clip: bool = True) -> tuple[float, float]:
    """(subject vIoU, object vIoU), trajectories clipped to the relation spans."""
    out = []
    for pid, gid in ((pred.subject_id, gt.subject_id), (pred.object_id, gt.object_id)):
        pt, gtt = pred_video.trajectory(pid), gt_video.trajectory(gid)
        if clip:
            out.append(clipped_viou(pt, (pred.begin, pred.end), gtt, (gt.begin, gt.end)))
        else:
            out.append(viou(pt, gtt))
    return out[0], out[1]


def eligibility(preds: Sequence[RelationInstance], gts: Sequence[RelationInstance],
                pred_video: VideoAnnotation, gt_video: VideoAnnotation,
                viou_threshold: float = 0.5, clip: bool = True) -> np.ndarray:
    """``(n_pred, n_gt)`` matrix of min(subject vIoU, object vIoU) for eligible
    pairs and -1 elsewhere."""
    q = np.full((len(preds), len(gts)), -1.0)
    gt_labels = [labels(gt_video, g) for g in gts]
    for i, p in enumerate(preds):
        pl = labels(pred_video, p)
        for j, g in enumerate(gts):
            if pl != gt_labels[j]:
                continue
            vs, vo = pair_vious(pred_video, p, gt_video, g, clip)
            if vs > viou_threshold and vo > viou_threshold:
                q[i, j] = min(vs, vo)
    return q


def greedy_match(quality: np.ndarray) -> MatchResult:
    """Rank-order greedy assignment over an eligibility matrix (rows = ranks)."""
    n_pred, n_gt = quality.shape
    taken = [False] * n_gt
    pred_to_gt: list[int | None] = []
    for i in range(n_pred):
        best, best_q = None, -1.0
        for j in range(n_gt):
            if not taken[j] and quality[i, j] >= 0 and quality[i, j] > best_q:
                best, best_q = j, quality[i, j]
        if best is not None:
            taken[best] = True
        pred_to_gt.append(best)
    return MatchResult(pred_to_gt, taken)


def match_detections(preds: Sequence[RelationInstance], gts: Sequence[RelationInstance],
                     pred_video: VideoAnnotation, gt_video: VideoAnnotation,
                     viou_threshold: float = 0.5, clip: bool = True) -> MatchResult:
    """Match ``preds`` (already in rank order) against ``gts``."""
    return greedy_match(eligibility(preds, gts, pred_video, gt_video, viou_threshold, clip))


def recall_at_k(match: MatchResult, k: int) -> float:
    if match.n_gt == 0:
        log.warning("recall on a video without ground truth; reporting 0")
        return 0.0
    hits = sum(1 for g in match.pred_to_gt[:k] if g is not None)
    return hits / match.n_gt


def video_ap(match: MatchResult) -> float:
    """Mean over ground truths of the precision at the rank where each was hit."""
    if match.n_gt == 0:
        return 0.0
    hits, total = 0, 0.0
    for rank, g in enumerate(match.pred_to_gt, start=1):
        if g is not None:
            hits += 1
            total += hits / rank
    return total / match.n_gt


def average_precision(matches: Sequence[MatchResult]) -> float:
    """Per-video AP averaged over videos with at least one ground truth."""
    aps = [video_ap(m) for m in matches if m.n_gt > 0]
    return float(np.mean(aps)) if aps else 0.0


def tags(video: VideoAnnotation, preds: Sequence[RelationInstance]) -> list[tuple]:
    """Distinct label triplets in order of their best-ranked prediction."""
    seen, out = set(), []
    for p in preds:
        t = labels(video, p)
        if t not in seen:
            seen.add(t)
            out.append(t)
    return out


def precision_at_k(tag_list: Sequence[tuple], gt_tags: set, k: int) -> float:
    return sum(1 for t in tag_list[:k] if t in gt_tags) / k


@dataclass
class MetricsReport:
    per_video: dict[str, dict[str, float]] = field(default_factory=dict)
    aggregate: dict[str, float] = field(default_factory=dict)
    n_gt: int = 0
    n_pred: int = 0

    def table(self) -> str:
        head = f"{'':>12} | {'R@50':>7} {'R@100':>7} {'mAP':>7} | {'P@1':>7} {'P@5':>7} {'P@10':>7}"
        a = self.aggregate
        row = (f"{'all':>12} | {100 * a['R@50']:7.2f} {100 * a['R@100']:7.2f} "
               f"{100 * a['mAP']:7.2f} | {100 * a['P@1']:7.2f} {100 * a['P@5']:7.2f} "
               f"{100 * a['P@10']:7.2f}")
        return "\n".join([head, "-" * len(head), row,
                          f"videos={len(self.per_video)} gt={self.n_gt} predictions={self.n_pred}"])

    def to_dict(self) -> dict:
        return {"aggregate": self.aggregate, "per_video": self.per_video,
                "n_gt": self.n_gt, "n_pred": self.n_pred}


def evaluate(gt_videos: Sequence[VideoAnnotation],
             predictions: Mapping[str, Sequence[RelationInstance]],
             pred_videos: Mapping[str, VideoAnnotation] | None = None,
             viou_threshold: float = 0.5, clip: bool = True,
             gt_filter=None) -> MetricsReport:
    """Score predictions against ground truth, video by video.

    ``pred_videos`` supplies the trajectories predictions refer to (ground
    truth trajectories by default). ``gt_filter`` restricts which ground-truth
    relations count for detection metrics.
    """
    report = MetricsReport()
    matches = []
    for gv in sorted(gt_videos, key=lambda v: v.video_id):
        preds = ranked(predictions.get(gv.video_id, []))
        pv = (pred_videos or {}).get(gv.video_id, gv)
        gts = [g for g in gv.relations if gt_filter is None or gt_filter(g)]
        m = match_detections(preds, gts, pv, gv, viou_threshold, clip)
        row = {f"R@{k}": recall_at_k(m, k) if gts else 0.0 for k in RECALL_KS}
        row["mAP"] = video_ap(m)
        gt_tags = {labels(gv, g) for g in gv.relations}
        tl = tags(pv, preds)
        row.update({f"P@{k}": precision_at_k(tl, gt_tags, k) for k in PRECISION_KS})
        report.per_video[gv.video_id] = row
        report.n_gt += len(gts)
        report.n_pred += len(preds)
        matches.append(m)
    with_gt = [v for v, m in zip(report.per_video, matches) if m.n_gt > 0]
    agg = {}
    for k in RECALL_KS:
        agg[f"R@{k}"] = float(np.mean([report.per_video[v][f"R@{k}"] for v in with_gt])) \
            if with_gt else 0.0
    agg["mAP"] = average_precision(matches)
    for k in PRECISION_KS:
        agg[f"P@{k}"] = float(np.mean([r[f"P@{k}"] for r in report.per_video.values()])) \
            if report.per_video else 0.0
    report.aggregate = {c: agg[c] for c in COLUMNS}
    return report
