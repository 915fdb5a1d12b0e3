"""Per-pair feature providers.

A provider maps a (subject, object, span) triple of a video to the three
appearance vectors ``A_s, A_o, A_u``. The box and class parts of the joint
features are computed here too, so every provider yields a full
:class:`FeatureBundle`.

The default ``synthetic-descriptor`` provider stands in for RoI-pooled CNN
features. It summarizes the pair's motion and relative geometry over the
span as coarse temporal profiles: the span is cut into ``d_a // 2`` bins
(same rounding as sector boundaries) and each channel carries two per-bin
signals.

    A_s: subject speed, cosine between subject motion and the direction to the object
    A_o: forward speed of the subject relative to the object, proximity of the boxes
    A_u: signed horizontal offset, box IoU
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from . import geometry
from .data import Trajectory, VideoAnnotation

OFFSET_SCALE = 10.0     # px; tanh scale of the horizontal offset signal
PROX_RADIUS = 60.0      # px; matches the synthetic `passes` proximity rule
SPEED_SCALE = 2.0       # px/frame


@dataclass(frozen=True)
class FeatureBundle:
    a_s: np.ndarray
    a_o: np.ndarray
    a_u: np.ndarray
    b_s: np.ndarray
    b_o: np.ndarray
    b_u: np.ndarray
    c_s: np.ndarray
    c_o: np.ndarray

    @property
    def c_u(self) -> np.ndarray:
        return self.c_s + self.c_o


class FeatureProvider(Protocol):
    d_a: int

    def appearance(self, video: VideoAnnotation, subject: Trajectory, obj: Trajectory,
                   span: tuple[int, int]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        ...


def bin_edges(length: int, n_bins: int) -> np.ndarray:
    i = np.arange(n_bins + 1)
    return (2 * i * length + n_bins) // (2 * n_bins)


def binned(signal: np.ndarray, n_bins: int) -> np.ndarray:
    """Mean of ``signal`` (last axis) per bin; bins too short to hold a frame
    sample their center frame."""
    signal = np.asarray(signal, dtype=np.float64)
    n = signal.shape[-1]
    edges = bin_edges(n, n_bins)
    csum = np.concatenate([np.zeros(signal.shape[:-1] + (1,)), np.cumsum(signal, axis=-1)],
                          axis=-1)
    width = np.diff(edges)
    sums = csum[..., edges[1:]] - csum[..., edges[:-1]]
    centre = np.minimum(((np.arange(n_bins) + 0.5) * n / n_bins).astype(int), n - 1)
    return np.where(width > 0, sums / np.maximum(width, 1), signal[..., centre])


def heading(vx_s: np.ndarray, vx_o: np.ndarray, still: float = 0.1) -> np.ndarray:
    """Reference direction along x: the object's, or the subject's when the object is still."""
    d = np.where(np.abs(vx_o) > still, np.sign(vx_o), np.sign(vx_s))
    return np.where(np.abs(vx_s) + np.abs(vx_o) > still, d, 0.0)


def pair_signals(subject: Trajectory, obj: Trajectory, span: tuple[int, int]) -> dict:
    """Per-frame geometric signals of a pair over ``span`` (pixels, pixels/frame)."""
    b, e = span
    bs = subject.boxes[b - subject.begin:e - subject.begin]
    bo = obj.boxes[b - obj.begin:e - obj.begin]
    vs = geometry.center_velocity(subject.boxes)[b - subject.begin:e - subject.begin]
    vo = geometry.center_velocity(obj.boxes)[b - obj.begin:e - obj.begin]
    cs, co = geometry.centers(bs), geometry.centers(bo)
    return {"boxes_s": bs, "boxes_o": bo, "cs": cs, "co": co, "vs": vs, "vo": vo,
            "dx": cs[:, 0] - co[:, 0], "dy": cs[:, 1] - co[:, 1],
            "iou": geometry.ious(bs, bo)}


def pursuit_cosine(cs: np.ndarray, co: np.ndarray, vs: np.ndarray) -> np.ndarray:
    to_obj = co - cs
    norm = np.linalg.norm(to_obj, axis=1) * np.linalg.norm(vs, axis=1)
    out = np.zeros(len(cs))
    np.divide((to_obj * vs).sum(axis=1), norm, out=out, where=norm > 0)
    return out


class SyntheticDescriptor:
    name = "synthetic-descriptor"

    def __init__(self, d_a: int = 16):
        if d_a < 2:
            raise ValueError("synthetic-descriptor needs d_a >= 2")
        self.d_a = d_a
        self.n_bins = d_a // 2

    def appearance(self, video, subject, obj, span):
        sig = pair_signals(subject, obj, span)
        vs, vo = sig["vs"], sig["vo"]
        fwd = heading(vs[:, 0], vo[:, 0]) * (vs[:, 0] - vo[:, 0])
        rel_speed = np.tanh(fwd / SPEED_SCALE)
        speed_s = np.tanh(np.linalg.norm(vs, axis=1) / SPEED_SCALE)
        align = pursuit_cosine(sig["cs"], sig["co"], vs)
        reach = np.maximum(np.abs(sig["dx"]), np.abs(sig["dy"])) / PROX_RADIUS
        prox = np.tanh(3.0 * (1.0 - reach))
        offset = np.tanh(sig["dx"] / OFFSET_SCALE)
        prof = binned(np.stack([speed_s, align, rel_speed, prox, offset, sig["iou"]]),
                      self.n_bins)
        out = np.zeros((3, self.d_a))
        out[:, :2 * self.n_bins] = prof.reshape(3, -1)
        return out[0], out[1], out[2]


class Precomputed:
    """Appearance vectors read from JSON: ``{video_id: {"sid,oid": {"A_s": [...], ...}}}``.

    Keys may carry a span suffix ``"sid,oid@begin,end"``; the plain pair key is
    the fallback.
    """

    name = "precomputed"

    def __init__(self, path, d_a: int):
        with open(path, encoding="utf-8") as fh:
            self.table = json.load(fh)
        self.d_a = d_a

    def appearance(self, video, subject, obj, span):
        recs = self.table.get(video.video_id, {})
        key = f"{subject.traj_id},{obj.traj_id}"
        rec = recs.get(f"{key}@{span[0]},{span[1]}", recs.get(key))
        if rec is None:
            raise KeyError(f"{video.video_id}: no precomputed features for pair {key}")
        out = tuple(np.asarray(rec[n], dtype=np.float64) for n in ("A_s", "A_o", "A_u"))
        for v in out:
            if v.shape != (self.d_a,):
                raise ValueError(f"{video.video_id}: pair {key} feature has shape {v.shape}, "
                                 f"expected ({self.d_a},)")
        return out


def make_provider(name: str, d_a: int, path=None) -> FeatureProvider:
    if name == SyntheticDescriptor.name:
        return SyntheticDescriptor(d_a)
    if name == Precomputed.name:
        if path is None:
            raise ValueError("precomputed provider needs a feature file")
        return Precomputed(path, d_a)
    raise ValueError(f"unknown feature provider '{name}'")


def _class_dist(video: VideoAnnotation, tr: Trajectory, n_cls: int) -> np.ndarray:
    if tr.class_dist is not None:
        return np.asarray(tr.class_dist)
    c = np.zeros(n_cls)
    c[tr.category_id] = 1.0
    return c


def bundle(provider: FeatureProvider, video: VideoAnnotation, subject: Trajectory,
           obj: Trajectory, span: tuple[int, int], n_cls: int) -> FeatureBundle:
    a_s, a_o, a_u = provider.appearance(video, subject, obj, span)
    w, h = video.canvas()
    norm = np.array([w, h, w, h])
    b, e = span
    bs = subject.boxes[b - subject.begin:e - subject.begin]
    bo = obj.boxes[b - obj.begin:e - obj.begin]
    bu = geometry.union_boxes(bs, bo)
    return FeatureBundle(
        a_s, a_o, a_u,
        np.clip(bs.mean(axis=0) / norm, 0.0, 1.0),
        np.clip(bo.mean(axis=0) / norm, 0.0, 1.0),
        np.clip(bu.mean(axis=0) / norm, 0.0, 1.0),
        _class_dist(video, subject, n_cls), _class_dist(video, obj, n_cls))
