"""Segment-based baseline: short fixed-length segments, one relation guess per
segment, then greedy association of identical triplets on touching segments."""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from . import model
from .autograd import ParamSet
from .data import RelationInstance, VideoAnnotation, ranked
from .features import FeatureProvider

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SegmentSpec:
    length: int = 30
    stride: int = 15

    def __post_init__(self):
        if not 0 < self.stride <= self.length:
            raise ValueError(f"need 0 < stride <= segment length, got stride={self.stride}, "
                             f"length={self.length}")


def segment_count(span_len: int, spec: SegmentSpec) -> int:
    """ceil((L - l + s) / s) in integer arithmetic."""
    return -(-(span_len - spec.length + spec.stride) // spec.stride)


def enumerate_segments(begin: int, end: int, spec: SegmentSpec) -> list[tuple[int, int]]:
    """Segments ``[b + i*s, b + i*s + l)`` plus a clipped tail ending at ``end``.

    A span shorter than one segment yields itself as a single (degenerate)
    segment.
    """
    if end - begin < spec.length:
        log.debug("span [%d, %d) shorter than a segment; using it whole", begin, end)
        return [(begin, end)]
    out = []
    start = begin
    while start + spec.length <= end:
        out.append((start, start + spec.length))
        start += spec.stride
    if out[-1][1] < end:
        out.append((start, end))
    return out


def segmenter(spec: SegmentSpec):
    return lambda b, e: enumerate_segments(b, e, spec)


def segment_config(cfg: model.TSPNConfig) -> model.TSPNConfig:
    """The heads reused per segment: one sector, no pair-of-interest gating."""
    return replace(cfg, k=1)


def train_baseline(videos: Sequence[VideoAnnotation], cfg: model.TSPNConfig, spec: SegmentSpec,
                   provider: FeatureProvider | None = None):
    return model.train(videos, segment_config(cfg), provider, segmenter(spec))


def predict_segmentwise(video: VideoAnnotation, params: ParamSet, cfg: model.TSPNConfig,
                        spec: SegmentSpec,
                        provider: FeatureProvider | None = None) -> list[RelationInstance]:
    """Per-segment relations; each emitted span is exactly its segment."""
    cfg = segment_config(cfg)
    spans = [(s, o, seg) for s, o, ov in model.ordered_pairs(video)
             for seg in enumerate_segments(*ov, spec)]
    cands = model.score_candidates(video, params, cfg, provider, spans)
    return model.emit_triplets(cands, params, cfg)


def greedy_associate(relations: Iterable[RelationInstance]) -> list[RelationInstance]:
    """Merge same-triplet relations whose spans overlap or touch.

    The merged span runs from the earliest begin to the latest end; its score
    is the mean of the members' scores.
    """
    groups: dict[tuple, list[RelationInstance]] = {}
    for r in relations:
        groups.setdefault(r.triplet, []).append(r)
    out = []
    for key in sorted(groups):
        members = sorted(groups[key], key=lambda r: (r.begin, r.end))
        cur = [members[0]]
        end = members[0].end
        for r in members[1:]:
            if r.begin <= end:
                cur.append(r)
                end = max(end, r.end)
            else:
                out.append(_merge(cur, end))
                cur, end = [r], r.end
        out.append(_merge(cur, end))
    return out


def _merge(members: list[RelationInstance], end: int) -> RelationInstance:
    first = members[0]
    scores = [m.score for m in members]
    score = None if any(s is None for s in scores) else float(np.mean(scores))
    return RelationInstance(first.subject_id, first.predicate_id, first.object_id,
                            first.begin, end, score)


def predict_baseline(video: VideoAnnotation, params: ParamSet, cfg: model.TSPNConfig,
                     spec: SegmentSpec,
                     provider: FeatureProvider | None = None) -> list[RelationInstance]:
    merged = greedy_associate(predict_segmentwise(video, params, cfg, spec, provider))
    return ranked(merged)[:cfg.top_n]
