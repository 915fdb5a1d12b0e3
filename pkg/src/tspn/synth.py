"""Deterministic synthetic videos of moving boxes with rule-defined relations.

Each predicate is a per-frame geometric test on an ordered (subject, object)
pair. Ground-truth spans are the maximal runs of frames where the test holds
(``passes`` additionally requires the subject to start behind and finish
ahead within the run), dropping runs shorter than ``min_relation_len``.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from . import geometry
from .data import RelationInstance, Trajectory, VideoAnnotation
from .features import heading, pursuit_cosine

PREDICATES = ("left-of", "overlapping", "passes", "chases")
OBJECT_VOCAB = ("person", "dog", "car", "bicycle", "ball")

OVERLAP_IOU = 0.3
PASS_RADIUS = 60.0
PASS_MIN_GAIN = 0.5
CHASE_MIN_SPEED = 1.0
CHASE_MIN_DIST = 20.0
CHASE_MIN_COS = 0.9


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int = 0
    n_videos: int = 250
    frames: tuple[int, int] = (96, 192)
    objects: tuple[int, int] = (3, 5)
    canvas: tuple[float, float] = (640.0, 360.0)
    predicates: tuple[str, ...] = PREDICATES
    noise: float = 0.0
    min_relation_len: int = 10

    def __post_init__(self):
        if self.frames[0] > self.frames[1] or self.objects[0] > self.objects[1]:
            raise ValueError("empty frame or object range")
        if self.frames[0] < 2 or self.objects[0] < 1:
            raise ValueError("need at least 2 frames and 1 object")
        if self.noise < 0:
            raise ValueError("noise must be non-negative")
        unknown = set(self.predicates) - set(PREDICATES)
        if unknown:
            raise ValueError(f"unknown predicates {sorted(unknown)}")


# ---------------------------------------------------------------------------
# rules
# ---------------------------------------------------------------------------

def _pair_view(s: Trajectory, o: Trajectory, span):
    b, e = span
    bs = s.boxes[b - s.begin:e - s.begin]
    bo = o.boxes[b - o.begin:e - o.begin]
    vs = geometry.center_velocity(s.boxes)[b - s.begin:e - s.begin]
    vo = geometry.center_velocity(o.boxes)[b - o.begin:e - o.begin]
    return bs, bo, geometry.centers(bs), geometry.centers(bo), vs, vo


def rule_mask(predicate: str, s: Trajectory, o: Trajectory, span) -> np.ndarray:
    """Per-frame truth of ``predicate(s, o)`` over ``span``."""
    bs, bo, cs, co, vs, vo = _pair_view(s, o, span)
    if predicate == "left-of":
        return cs[:, 0] < co[:, 0]
    if predicate == "overlapping":
        return geometry.ious(bs, bo) > OVERLAP_IOU
    if predicate == "passes":
        d = np.abs(cs - co)
        gain = heading(vs[:, 0], vo[:, 0]) * (vs[:, 0] - vo[:, 0])
        return (np.maximum(d[:, 0], d[:, 1]) < PASS_RADIUS) & (gain > PASS_MIN_GAIN)
    if predicate == "chases":
        speed = np.linalg.norm(vs, axis=1)
        dist = np.linalg.norm(co - cs, axis=1)
        return ((speed > CHASE_MIN_SPEED) & (dist > CHASE_MIN_DIST)
                & (pursuit_cosine(cs, co, vs) > CHASE_MIN_COS))
    raise ValueError(f"unknown predicate '{predicate}'")


def runs(mask: np.ndarray) -> list[tuple[int, int]]:
    """Maximal runs of True as half-open index intervals."""
    padded = np.concatenate([[False], mask, [False]]).astype(np.int8)
    edges = np.flatnonzero(np.diff(padded))
    return list(zip(edges[0::2].tolist(), edges[1::2].tolist()))


def crosses(s: Trajectory, o: Trajectory, begin: int, end: int) -> bool:
    """Subject behind the object at ``begin`` and ahead at ``end - 1``."""
    _, _, cs, co, vs, vo = _pair_view(s, o, (begin, end))
    side = heading(vs[:, 0], vo[:, 0]) * (cs[:, 0] - co[:, 0])
    return bool(side[0] < 0 and side[-1] > 0)


def pair_relations(s: Trajectory, o: Trajectory, predicates, pred_index,
                   min_len: int) -> list[RelationInstance]:
    b, e = max(s.begin, o.begin), min(s.end, o.end)
    if e <= b:
        return []
    out = []
    for name in predicates:
        for rb, re_ in runs(rule_mask(name, s, o, (b, e))):
            rb, re_ = rb + b, re_ + b
            if re_ - rb < min_len:
                continue
            if name == "passes" and not crosses(s, o, rb, re_):
                continue
            out.append(RelationInstance(s.traj_id, pred_index[name], o.traj_id, rb, re_))
    return out


def annotate(video: VideoAnnotation, predicates=PREDICATES,
             min_len: int = 1) -> VideoAnnotation:
    """Replace a video's relations with the rule-derived ones."""
    pred_index = {p: video.predicate_vocab.index(p) for p in predicates}
    rels = []
    for s in video.trajectories:
        for o in video.trajectories:
            if s.traj_id != o.traj_id:
                rels.extend(pair_relations(s, o, predicates, pred_index, min_len))
    return video.replace(relations=rels)


# ---------------------------------------------------------------------------
# motion
# ---------------------------------------------------------------------------

def _bounce(pos, vel, half, canvas):
    for ax in range(2):
        lo, hi = half[ax], canvas[ax] - half[ax]
        if pos[ax] < lo:
            pos[ax], vel[ax] = 2 * lo - pos[ax], abs(vel[ax])
        elif pos[ax] > hi:
            pos[ax], vel[ax] = 2 * hi - pos[ax], -abs(vel[ax])


def _passer_gain(rng, f, tc):
    """Per-frame speed gain of a passer over its target.

    Besides plain overtakes, a passer may stall (fall back for a while, then
    overtake) or abort (fall back for good). Any short window of the approach
    looks the same in all three cases; only the full course tells whether a
    pass completes.
    """
    g = rng.uniform(0.8, 1.8)
    out = np.full(f, g)
    mode = rng.choice(["overtake", "stall", "abort"], p=[0.5, 0.25, 0.25])
    if mode == "overtake":
        return out
    # turn back while 10-35 px behind, tc being the planned crossing frame
    t1 = max(1, int(tc - rng.uniform(10, 35) / g))
    back = -rng.uniform(0.8, 1.5)
    if mode == "abort":
        out[t1:] = back
    else:
        out[t1:t1 + int(rng.integers(12, 26))] = back
    return out


def _simulate(rng, f, n, canvas):
    """Centers ``(n, f, 2)`` and half sizes ``(n, 2)`` for n objects."""
    W, H = canvas
    half = rng.uniform(15, 35, size=(n, 2))
    pos = np.empty((n, 2))
    vel = np.zeros((n, 2))
    roles = ["wander"] * n
    target = 0
    roles[0] = "target"
    pos[0] = [rng.uniform(0.2 * W, 0.8 * W), rng.uniform(0.25 * H, 0.75 * H)]
    vel[0] = [rng.choice([-1, 1]) * rng.uniform(0.8, 2.0), rng.uniform(-0.2, 0.2)]
    free = list(range(1, n))
    rng.shuffle(free)
    chase_window = (0, 0)
    gain = None
    if free and rng.random() < 0.6:
        i = free.pop()
        roles[i] = "passer"
        tc = int(f * rng.uniform(0.3, 0.5))
        gain = _passer_gain(rng, f, tc)
        lead = gain[0] * tc
        pos[i] = [pos[0, 0] - np.sign(vel[0, 0]) * lead, pos[0, 1] + rng.uniform(-15, 15)]
        pos[i] = np.clip(pos[i], half[i], np.asarray(canvas) - half[i])
        vel[i] = [np.sign(vel[0, 0]) * (abs(vel[0, 0]) + gain[0]), vel[0, 1]]
    if free and rng.random() < 0.6:
        i = free.pop()
        roles[i] = "chaser"
        a = int(rng.integers(0, f // 2))
        chase_window = (a, int(rng.integers(a + f // 4, f + 1)))
        pos[i] = [rng.uniform(half[i, 0], W - half[i, 0]), rng.uniform(half[i, 1], H - half[i, 1])]
        vel[i] = rng.uniform(-1.5, 1.5, size=2)
        chase_speed = rng.uniform(2.5, 4.0)
    switches = {}
    for i in free:
        pos[i] = [rng.uniform(half[i, 0], W - half[i, 0]), rng.uniform(half[i, 1], H - half[i, 1])]
        vel[i] = rng.uniform(-2.0, 2.0, size=2) * (rng.random() < 0.8)
        switches[i] = sorted(rng.integers(1, f, size=int(rng.integers(0, 3))).tolist())
    centers = np.empty((n, f, 2))
    for t in range(f):
        for i in range(n):
            if roles[i] == "passer":
                vel[i, 0] = np.sign(vel[target, 0]) * (abs(vel[target, 0]) + gain[t])
                vel[i, 1] = vel[target, 1]
            elif roles[i] == "chaser" and chase_window[0] <= t < chase_window[1]:
                d = pos[target] - pos[i]
                dist = np.linalg.norm(d)
                if dist > 1e-9:
                    vel[i] = d / dist * min(chase_speed, dist)
            elif roles[i] == "wander" and t in switches.get(i, ()):
                vel[i] = rng.uniform(-2.0, 2.0, size=2)
            if t:
                pos[i] = pos[i] + vel[i]
                _bounce(pos[i], vel[i], half[i], canvas)
            centers[i, t] = pos[i]
    return centers, half


def video_seed(seed: int, index: int) -> list[int]:
    return [seed, index]


def generate_video(cfg: ScenarioConfig, index: int) -> VideoAnnotation:
    rng = np.random.default_rng(video_seed(cfg.seed, index))
    f = int(rng.integers(cfg.frames[0], cfg.frames[1] + 1))
    n = int(rng.integers(cfg.objects[0], cfg.objects[1] + 1))
    centers, half = _simulate(rng, f, n, cfg.canvas)
    n_cls = len(OBJECT_VOCAB)
    trajs = []
    for i in range(n):
        if i == 0 or rng.random() < 0.6:
            b, e = 0, f
        else:
            b = int(rng.integers(0, f // 4 + 1))
            e = int(rng.integers(3 * f // 4, f + 1))
        c = centers[i, b:e]
        boxes = np.concatenate([c - half[i], c + half[i]], axis=1)
        if cfg.noise > 0:
            boxes = boxes + rng.uniform(-cfg.noise, cfg.noise, size=boxes.shape)
            lo = np.minimum(boxes[:, :2], boxes[:, 2:])
            hi = np.maximum(boxes[:, :2], boxes[:, 2:])
            boxes = np.concatenate([lo, hi], axis=1)
        boxes = np.round(boxes, 2)
        trajs.append(Trajectory(i, int(rng.integers(0, n_cls)), b, e, boxes, n_cls=n_cls))
    video = VideoAnnotation(f"synth{cfg.seed}_{index:04d}", f, trajs, (), OBJECT_VOCAB,
                            PREDICATES, cfg.canvas[0], cfg.canvas[1])
    return annotate(video, cfg.predicates, cfg.min_relation_len)


def generate(cfg: ScenarioConfig) -> list[VideoAnnotation]:
    return [generate_video(cfg, i) for i in range(cfg.n_videos)]


def split(videos, train_frac: float = 0.8):
    """Seed-stable train/test split: videos ranked by a hash of their id."""
    order = sorted(videos, key=lambda v: hashlib.sha1(v.video_id.encode()).hexdigest())
    cut = int(round(train_frac * len(order)))
    train = sorted(order[:cut], key=lambda v: v.video_id)
    test = sorted(order[cut:], key=lambda v: v.video_id)
    return train, test
