"""Domain records for videos, trajectories and relation instances.

Frame intervals are half-open everywhere: frame ``t`` belongs to
``[begin, end)`` iff ``begin <= t < end``.

Annotation files are JSON, one video per document or a list of videos::

    {
      "video_id": "v0001",
      "frame_count": 150,
      "width": 640, "height": 360,            # optional
      "object_vocab": ["person", "dog"],
      "predicate_vocab": ["left-of", "chases"],
      "objects": [
        {"tid": 0, "category": "person", "begin": 0, "end": 150,
         "boxes": [[x_min, y_min, x_max, y_max], ...],
         "class_dist": [...]}                  # optional
      ],
      "relations": [
        {"sid": 0, "predicate": "chases", "oid": 1, "begin": 10, "end": 80}
      ]
    }

Prediction files use the same layout; relations carry an extra ``score`` and
``objects`` may be omitted (trajectory ids then refer to the ground truth).
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

DIST_TOL = 1e-6


class AnnotationError(ValueError):
    """Base class for malformed annotation or prediction files."""


class ParseError(AnnotationError):
    pass


class DanglingReferenceError(AnnotationError):
    pass


class SpanError(AnnotationError):
    pass


@dataclass(frozen=True)
class BBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise ValueError(f"inverted box {self.as_tuple()}")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Per-frame boxes of one tracked object over ``[begin, end)``.

    ``boxes`` is an ``(end - begin, 4)`` float array. ``class_dist`` defaults
    to the one-hot vector of ``category_id`` when ``n_cls`` is given.
    """

    traj_id: int
    category_id: int
    begin: int
    end: int
    boxes: np.ndarray
    class_dist: np.ndarray | None = None
    n_cls: int | None = None

    def __post_init__(self):
        if not self.begin < self.end:
            raise SpanError(f"trajectory {self.traj_id}: empty span [{self.begin}, {self.end})")
        boxes = np.array(self.boxes, dtype=np.float64).reshape(-1, 4)
        if len(boxes) != self.end - self.begin:
            raise SpanError(
                f"trajectory {self.traj_id}: {len(boxes)} boxes for span "
                f"[{self.begin}, {self.end})")
        if np.any(boxes[:, 0] > boxes[:, 2]) or np.any(boxes[:, 1] > boxes[:, 3]):
            raise ValueError(f"trajectory {self.traj_id}: inverted box")
        object.__setattr__(self, "boxes", _frozen(boxes))
        dist = self.class_dist
        if dist is None and self.n_cls is not None:
            dist = np.zeros(self.n_cls)
            dist[self.category_id] = 1.0
        if dist is not None:
            dist = np.array(dist, dtype=np.float64)
            if abs(dist.sum() - 1.0) > DIST_TOL:
                raise ValueError(f"trajectory {self.traj_id}: class_dist sums to {dist.sum()}")
            object.__setattr__(self, "class_dist", _frozen(dist))
            object.__setattr__(self, "n_cls", len(dist))

    def __len__(self) -> int:
        return self.end - self.begin

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return NotImplemented
        return (
            (self.traj_id, self.category_id, self.begin, self.end)
            == (other.traj_id, other.category_id, other.begin, other.end)
            and np.array_equal(self.boxes, other.boxes)
            and (self.class_dist is None) == (other.class_dist is None)
            and (self.class_dist is None or np.array_equal(self.class_dist, other.class_dist))
        )

    __hash__ = None

    def box_at(self, t: int) -> BBox:
        return BBox(*self.boxes[t - self.begin])

    def clip(self, begin: int, end: int) -> Trajectory | None:
        """Restrict to ``[begin, end)``; ``None`` when nothing remains."""
        b, e = max(begin, self.begin), min(end, self.end)
        if b >= e:
            return None
        return Trajectory(self.traj_id, self.category_id, b, e,
                          self.boxes[b - self.begin:e - self.begin], self.class_dist)


@dataclass(frozen=True)
class RelationInstance:
    subject_id: int
    predicate_id: int
    object_id: int
    begin: int
    end: int
    score: float | None = None

    def __post_init__(self):
        if self.subject_id == self.object_id:
            raise ValueError(f"relation links trajectory {self.subject_id} to itself")
        if not self.begin < self.end:
            raise SpanError(f"relation span [{self.begin}, {self.end}) is empty")

    @property
    def triplet(self) -> tuple[int, int, int]:
        return (self.subject_id, self.predicate_id, self.object_id)


@dataclass(frozen=True)
class VideoAnnotation:
    video_id: str
    frame_count: int
    trajectories: tuple[Trajectory, ...]
    relations: tuple[RelationInstance, ...] = ()
    object_vocab: tuple[str, ...] = ()
    predicate_vocab: tuple[str, ...] = ()
    width: float | None = None
    height: float | None = None
    _by_id: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "trajectories", tuple(self.trajectories))
        object.__setattr__(self, "relations", tuple(self.relations))
        object.__setattr__(self, "object_vocab", tuple(self.object_vocab))
        object.__setattr__(self, "predicate_vocab", tuple(self.predicate_vocab))
        by_id = {}
        for tr in self.trajectories:
            if tr.traj_id in by_id:
                raise AnnotationError(f"{self.video_id}: duplicate trajectory id {tr.traj_id}")
            if tr.end > self.frame_count:
                raise SpanError(
                    f"{self.video_id}: trajectory {tr.traj_id} span [{tr.begin}, {tr.end}) "
                    f"exceeds frame count {self.frame_count}")
            by_id[tr.traj_id] = tr
        object.__setattr__(self, "_by_id", by_id)
        for rel in self.relations:
            self.check_relation(rel)

    def check_relation(self, rel: RelationInstance) -> None:
        for tid in (rel.subject_id, rel.object_id):
            if tid not in self._by_id:
                raise DanglingReferenceError(
                    f"{self.video_id}: relation references unknown trajectory id {tid}")
        if rel.begin < 0 or rel.end > self.frame_count:
            raise SpanError(
                f"{self.video_id}: relation span [{rel.begin}, {rel.end}) outside "
                f"[0, {self.frame_count})")
        s, o = self._by_id[rel.subject_id], self._by_id[rel.object_id]
        if rel.begin < max(s.begin, o.begin) or rel.end > min(s.end, o.end):
            raise SpanError(
                f"{self.video_id}: relation span [{rel.begin}, {rel.end}) not inside the "
                f"intersection of trajectories {s.traj_id} and {o.traj_id}")
        if self.predicate_vocab and not 0 <= rel.predicate_id < len(self.predicate_vocab):
            raise AnnotationError(f"{self.video_id}: predicate id {rel.predicate_id} out of range")

    def trajectory(self, traj_id: int) -> Trajectory:
        return self._by_id[traj_id]

    def category_of(self, traj_id: int) -> int:
        tr = self._by_id[traj_id]
        if tr.class_dist is not None:
            return int(np.argmax(tr.class_dist))
        return tr.category_id

    def canvas(self) -> tuple[float, float]:
        """Frame width and height, falling back to the largest box extent."""
        if self.width and self.height:
            return float(self.width), float(self.height)
        w = max((float(t.boxes[:, 2].max()) for t in self.trajectories), default=1.0)
        h = max((float(t.boxes[:, 3].max()) for t in self.trajectories), default=1.0)
        return max(w, 1.0), max(h, 1.0)

    def replace(self, **changes) -> VideoAnnotation:
        kw = dict(video_id=self.video_id, frame_count=self.frame_count,
                  trajectories=self.trajectories, relations=self.relations,
                  object_vocab=self.object_vocab, predicate_vocab=self.predicate_vocab,
                  width=self.width, height=self.height)
        kw.update(changes)
        return VideoAnnotation(**kw)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def _field(rec: Mapping, key: str, ctx: str):
    try:
        return rec[key]
    except (KeyError, TypeError):
        raise ParseError(f"{ctx}: missing field '{key}'") from None


def _int_field(rec: Mapping, key: str, ctx: str) -> int:
    v = _field(rec, key, ctx)
    if isinstance(v, bool) or not isinstance(v, int):
        raise ParseError(f"{ctx}: field '{key}' must be an integer, got {v!r}")
    return v


def _label_index(value, vocab: Sequence[str], ctx: str, key: str) -> int:
    if isinstance(value, str):
        try:
            return vocab.index(value)
        except ValueError:
            raise ParseError(f"{ctx}: unknown {key} '{value}'") from None
    if isinstance(value, int) and not isinstance(value, bool):
        if vocab and not 0 <= value < len(vocab):
            raise ParseError(f"{ctx}: {key} index {value} out of range")
        return value
    raise ParseError(f"{ctx}: field '{key}' must be a label or index, got {value!r}")


def _read_json(path) -> list:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    docs = doc if isinstance(doc, list) else [doc]
    if not all(isinstance(d, dict) for d in docs):
        raise ParseError(f"{path}: expected a video object or a list of video objects")
    return docs


def _parse_relation(rec, vocab, ctx, shift, scored):
    rctx = f"{ctx} relation"
    rel = RelationInstance(
        _int_field(rec, "sid", rctx),
        _label_index(_field(rec, "predicate", rctx), vocab, rctx, "predicate"),
        _int_field(rec, "oid", rctx),
        _int_field(rec, "begin", rctx),
        _int_field(rec, "end", rctx) + shift,
        float(_field(rec, "score", rctx)) if scored else None,
    )
    return rel


def _parse_video(doc: Mapping, path, shift: int, scored: bool,
                 gt: Mapping[str, VideoAnnotation] | None = None) -> VideoAnnotation:
    vid = str(_field(doc, "video_id", str(path)))
    ctx = f"{path}[{vid}]"
    obj_vocab = list(doc.get("object_vocab", []))
    pred_vocab = list(doc.get("predicate_vocab", []))
    n_cls = len(obj_vocab) or None
    objects = doc.get("objects")
    trajs = []
    if objects is None and gt is not None and vid in gt:
        ref = gt[vid]
        trajs = list(ref.trajectories)
        obj_vocab = obj_vocab or list(ref.object_vocab)
        pred_vocab = pred_vocab or list(ref.predicate_vocab)
        frame_count = doc.get("frame_count", ref.frame_count)
    else:
        frame_count = _int_field(doc, "frame_count", ctx)
        for i, o in enumerate(objects or []):
            octx = f"{ctx} objects[{i}]"
            tid = _int_field(o, "tid", octx)
            begin = _int_field(o, "begin", octx)
            end = _int_field(o, "end", octx) + shift
            if end <= begin:
                raise SpanError(f"{octx}: trajectory {tid} has zero-length span")
            if begin < 0 or end > frame_count:
                raise SpanError(f"{octx}: trajectory {tid} span [{begin}, {end}) outside "
                                f"[0, {frame_count})")
            try:
                trajs.append(Trajectory(
                    tid, _label_index(_field(o, "category", octx), obj_vocab, octx, "category"),
                    begin, end, _field(o, "boxes", octx), o.get("class_dist"), n_cls))
            except (TypeError, ValueError) as exc:
                if isinstance(exc, AnnotationError):
                    raise
                raise ParseError(f"{octx}: {exc}") from None
    rels = [_parse_relation(r, pred_vocab, ctx, shift, scored)
            for r in doc.get("relations", [])]
    return VideoAnnotation(vid, frame_count, trajs, rels, obj_vocab, pred_vocab,
                           doc.get("width"), doc.get("height"))


def load_annotations(path, inclusive_ends: bool = False) -> list[VideoAnnotation]:
    """Read annotation file(s).

    ``path`` may be a JSON file or a directory of ``*.json`` files (read in
    sorted order). With ``inclusive_ends`` the file's end frames are taken
    as inclusive and converted to exclusive by adding one.
    """
    shift = 1 if inclusive_ends else 0
    videos = []
    for p in _json_files(path):
        videos.extend(_parse_video(d, p, shift, scored=False) for d in _read_json(p))
    return videos


def _json_files(path) -> list:
    if os.path.isdir(path):
        return [os.path.join(path, n) for n in sorted(os.listdir(path)) if n.endswith(".json")]
    if not os.path.exists(path):
        raise FileNotFoundError(f"no such file or directory: {path}")
    return [path]


def _box_list(boxes: np.ndarray) -> list:
    return [[float(v) for v in b] for b in boxes]


def video_to_dict(video: VideoAnnotation, scored: bool = False) -> dict:
    vocab, pvocab = video.object_vocab, video.predicate_vocab
    doc = {
        "video_id": video.video_id,
        "frame_count": video.frame_count,
    }
    if video.width is not None:
        doc["width"] = video.width
        doc["height"] = video.height
    doc["object_vocab"] = list(vocab)
    doc["predicate_vocab"] = list(pvocab)
    objs = []
    for t in video.trajectories:
        o = {"tid": t.traj_id,
             "category": vocab[t.category_id] if vocab else t.category_id,
             "begin": t.begin, "end": t.end, "boxes": _box_list(t.boxes)}
        if t.class_dist is not None and not _is_one_hot(t.class_dist, t.category_id):
            o["class_dist"] = [float(v) for v in t.class_dist]
        objs.append(o)
    doc["objects"] = objs
    doc["relations"] = [_relation_dict(r, pvocab, scored) for r in video.relations]
    return doc


def _is_one_hot(dist: np.ndarray, idx: int) -> bool:
    return dist[idx] == 1.0 and np.count_nonzero(dist) == 1


def _relation_dict(r: RelationInstance, pvocab, scored: bool) -> dict:
    d = {"sid": r.subject_id,
         "predicate": pvocab[r.predicate_id] if pvocab else r.predicate_id,
         "oid": r.object_id, "begin": r.begin, "end": r.end}
    if scored:
        d["score"] = float(r.score)
    return d


def _write(path, docs: list) -> None:
    text = json.dumps(docs, separators=(",", ":"), ensure_ascii=False)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text + "\n")


def save_annotations(videos: Iterable[VideoAnnotation], path) -> None:
    _write(path, [video_to_dict(v) for v in videos])


def ranked(preds: Iterable[RelationInstance]) -> list[RelationInstance]:
    """Descending score; ties broken by (subject, predicate, object, begin)."""
    return sorted(preds, key=lambda r: (-r.score, r.subject_id, r.predicate_id,
                                        r.object_id, r.begin, r.end))


def save_predictions(predictions: Mapping[str, Sequence[RelationInstance]], path,
                     predicate_vocab: Sequence[str] = (),
                     videos: Mapping[str, VideoAnnotation] | None = None) -> None:
    """Write scored relations per video, sorted by descending score.

    When ``videos`` is given, the trajectories each prediction refers to are
    embedded so the file is self-contained.
    """
    docs = []
    for vid in predictions:
        rels = list(predictions[vid])
        for r in rels:
            if r.score is None:
                raise ValueError(f"{vid}: prediction {r.triplet} has no score")
        doc = {"video_id": vid, "predicate_vocab": list(predicate_vocab)}
        if videos is not None and vid in videos:
            full = video_to_dict(videos[vid])
            doc = {k: full[k] for k in ("video_id", "frame_count", "width", "height",
                                        "object_vocab", "predicate_vocab", "objects")
                   if k in full}
            if not doc["predicate_vocab"]:
                doc["predicate_vocab"] = list(predicate_vocab)
        doc["relations"] = [_relation_dict(r, doc["predicate_vocab"], True) for r in ranked(rels)]
        docs.append(doc)
    _write(path, docs)


def load_predictions(path, gt: Sequence[VideoAnnotation] | None = None,
                     inclusive_ends: bool = False) -> dict[str, list[RelationInstance]]:
    """Read a prediction file into ``{video_id: [RelationInstance, ...]}``.

    Records without embedded objects are validated against ``gt`` when given.
    """
    shift = 1 if inclusive_ends else 0
    by_id = {v.video_id: v for v in gt} if gt is not None else None
    out = {}
    for p in _json_files(path):
        for d in _read_json(p):
            if d.get("objects") is None and (by_id is None or d.get("video_id") not in by_id):
                vid = str(_field(d, "video_id", str(p)))
                vocab = list(d.get("predicate_vocab", []))
                out[vid] = [_parse_relation(r, vocab, f"{p}[{vid}]", shift, True)
                            for r in d.get("relations", [])]
                continue
            video = _parse_video(d, p, shift, scored=True, gt=by_id)
            out[video.video_id] = list(video.relations)
    return out


def load_prediction_videos(path, gt: Sequence[VideoAnnotation]) -> dict[str, VideoAnnotation]:
    """Prediction records as videos whose trajectories are the ones referenced."""
    by_id = {v.video_id: v for v in gt}
    out = {}
    for p in _json_files(path):
        for d in _read_json(p):
            video = _parse_video(d, p, 0, scored=True, gt=by_id)
            out[video.video_id] = video
    return out
