"""Box and trajectory geometry: IoU, union boxes, temporal overlap, vIoU."""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .data import BBox, Trajectory


class SpanOverlap(NamedTuple):
    begin: int
    end: int

    def __len__(self) -> int:
        return max(0, self.end - self.begin)

    @property
    def empty(self) -> bool:
        return self.end <= self.begin


def span_overlap(a: Trajectory, b: Trajectory) -> SpanOverlap:
    begin, end = max(a.begin, b.begin), min(a.end, b.end)
    if end < begin:
        end = begin
    return SpanOverlap(begin, end)


def box_iou(a: BBox, b: BBox) -> float:
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    inter = max(iw, 0.0) * max(ih, 0.0)
    union = a.area + b.area - inter
    if union <= 0:
        return 0.0
    return inter / union


def union_box(a: BBox, b: BBox) -> BBox:
    return BBox(min(a.x_min, b.x_min), min(a.y_min, b.y_min),
                max(a.x_max, b.x_max), max(a.y_max, b.y_max))


def box_areas(boxes: np.ndarray) -> np.ndarray:
    return (boxes[..., 2] - boxes[..., 0]) * (boxes[..., 3] - boxes[..., 1])


def intersection_areas(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise intersection areas of two ``(N, 4)`` box arrays."""
    iw = np.minimum(a[:, 2], b[:, 2]) - np.maximum(a[:, 0], b[:, 0])
    ih = np.minimum(a[:, 3], b[:, 3]) - np.maximum(a[:, 1], b[:, 1])
    return np.clip(iw, 0, None) * np.clip(ih, 0, None)


def ious(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise IoU of two ``(N, 4)`` box arrays (0 where the union is empty)."""
    inter = intersection_areas(a, b)
    union = box_areas(a) + box_areas(b) - inter
    out = np.zeros(len(a))
    np.divide(inter, union, out=out, where=union > 0)
    return out


def union_boxes(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.stack([np.minimum(a[:, 0], b[:, 0]), np.minimum(a[:, 1], b[:, 1]),
                     np.maximum(a[:, 2], b[:, 2]), np.maximum(a[:, 3], b[:, 3])], axis=1)


def viou(a: Trajectory, b: Trajectory) -> float:
    """Volumetric IoU: summed per-frame intersections over summed unions.

    Frames covered by a single trajectory contribute that box's area to the
    union only.
    """
    ov = span_overlap(a, b)
    inter = 0.0
    union = float(box_areas(a.boxes).sum() + box_areas(b.boxes).sum())
    if not ov.empty:
        ba = a.boxes[ov.begin - a.begin:ov.end - a.begin]
        bb = b.boxes[ov.begin - b.begin:ov.end - b.begin]
        inter = float(intersection_areas(ba, bb).sum())
        union -= inter
    if union <= 0:
        return 0.0
    return inter / union


def clipped_viou(a: Trajectory, a_span: tuple[int, int],
                 b: Trajectory, b_span: tuple[int, int]) -> float:
    """vIoU of ``a`` restricted to ``a_span`` against ``b`` restricted to ``b_span``."""
    ca = a.clip(*a_span)
    cb = b.clip(*b_span)
    if ca is None or cb is None:
        return 0.0
    return viou(ca, cb)


def centers(boxes: np.ndarray) -> np.ndarray:
    return np.stack([(boxes[:, 0] + boxes[:, 2]) / 2, (boxes[:, 1] + boxes[:, 3]) / 2], axis=1)


def center_velocity(boxes: np.ndarray) -> np.ndarray:
    """Forward-difference center velocity per frame (pixels/frame).

    The last frame repeats the previous difference; a single frame has zero
    velocity.
    """
    c = centers(boxes)
    v = np.zeros_like(c)
    if len(c) > 1:
        v[:-1] = c[1:] - c[:-1]
        v[-1] = v[-2]
    return v
