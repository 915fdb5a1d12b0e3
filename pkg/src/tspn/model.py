"""Relationness scoring and joint relation / temporal-sector prediction heads.

Shapes, with ``d_J = d_a + 4 + n_cls``::

    J_s, J_o, J_u                     (n, d_J)
    H = J_s W_s * J_o W_o * J_u W_u + B_h        (n, d_H)
    S = sigmoid(H W_r + B_r)                     (n,)
    Z = sigmoid([J_s | J_o | J_u] W_z + B_z)     (n, m*k), one m x k matrix per row

With ``z_mode="rank1"`` the sector head instead produces a predicate vector
and a sector vector per pair and Z is their outer product.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Iterable, Sequence

import numpy as np

from . import autograd as ag
from .autograd import ParamSet, Tensor
from .data import RelationInstance, VideoAnnotation, ranked
from .features import FeatureBundle, FeatureProvider, bundle, make_provider
from .tempspan import SectorGrid, decode_spans, label_sectors

log = logging.getLogger(__name__)


@dataclass
class TSPNConfig:
    n_cls: int
    m: int
    d_a: int = 16
    d_h: int = 64
    k: int = 16
    p: int = 64
    threshold: float = 0.5
    top_n: int = 100
    decode_gap: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epochs: int = 40
    batch_size: int = 32
    neg_ratio: float = 3.0
    seed: int = 0
    use_relationness: bool = True
    z_mode: str = "direct"
    provider: str = "synthetic-descriptor"
    feature_file: str | None = None

    def __post_init__(self):
        if self.p < 1 or self.k < 1 or self.top_n < 0:
            raise ValueError("p and k must be >= 1, top_n >= 0")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError(f"threshold must lie in (0, 1), got {self.threshold}")
        if self.z_mode not in ("direct", "rank1"):
            raise ValueError(f"unknown z_mode '{self.z_mode}'")

    @property
    def d_j(self) -> int:
        return self.d_a + 4 + self.n_cls

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> TSPNConfig:
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def param_shapes(cfg: TSPNConfig) -> dict[str, tuple[int, ...]]:
    dj, dh, m, k = cfg.d_j, cfg.d_h, cfg.m, cfg.k
    shapes = {"W_s": (dj, dh), "W_o": (dj, dh), "W_u": (dj, dh), "B_h": (dh,),
              "W_r": (dh, 1), "B_r": (1,)}
    if cfg.z_mode == "direct":
        shapes.update({"W_z": (3 * dj, m * k), "B_z": (m * k,)})
    else:
        shapes.update({"W_zr": (3 * dj, m), "B_zr": (m,), "W_zt": (3 * dj, k), "B_zt": (k,)})
    return shapes


def init_params(cfg: TSPNConfig, seed: int | None = None) -> ParamSet:
    shapes = param_shapes(cfg)
    fan_in = {"W_s": cfg.d_j, "W_o": cfg.d_j, "W_u": cfg.d_j, "B_h": cfg.d_j,
              "W_r": cfg.d_h, "B_r": cfg.d_h}
    for name in shapes:
        if name.startswith(("W_z", "B_z")):
            fan_in[name] = 3 * cfg.d_j
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    return ParamSet.init_uniform(shapes, rng, fan_in)


# ---------------------------------------------------------------------------
# forward passes
# ---------------------------------------------------------------------------

def build_joint_features(b: FeatureBundle, d_a: int | None = None,
                         n_cls: int | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``J_i = A_i | B_i | C_i`` for i in (s, o, u)."""
    parts = ((b.a_s, b.b_s, b.c_s), (b.a_o, b.b_o, b.c_o), (b.a_u, b.b_u, b.c_u))
    out = []
    for a, box, c in parts:
        if d_a is not None and len(a) != d_a:
            raise ValueError(f"appearance vector has {len(a)} entries, expected {d_a}")
        if n_cls is not None and len(c) != n_cls:
            raise ValueError(f"class vector has {len(c)} entries, expected {n_cls}")
        if len(box) != 4:
            raise ValueError("box part must have 4 coordinates")
        out.append(np.concatenate([a, box, c]).astype(np.float64))
    return tuple(out)


def _batched(x) -> tuple[Tensor, bool]:
    t = x if isinstance(x, Tensor) else Tensor(x)
    if t.values.ndim == 1:
        return ag.reshape(t, (1, t.shape[0])), True
    return t, False


def relationness_forward(params: ParamSet, j_s, j_o, j_u) -> Tensor:
    """Relationness per pair, shape ``(n,)`` (a scalar for unbatched input)."""
    (js, single), (jo, _), (ju, _) = _batched(j_s), _batched(j_o), _batched(j_u)
    h = ag.hadamard(ag.hadamard(ag.linear(params["W_s"], js), ag.linear(params["W_o"], jo)),
                    ag.linear(params["W_u"], ju))
    h = ag.bias_add(h, params["B_h"])
    s = ag.sigmoid(ag.linear(params["W_r"], h, params["B_r"]))
    return ag.reshape(s, () if single else (s.shape[0],))


def span_relation_forward(params: ParamSet, j_s, j_o, j_u, cfg: TSPNConfig) -> Tensor:
    """Sector probabilities per pair, flattened row-major to ``(n, m*k)``."""
    (js, single), (jo, _), (ju, _) = _batched(j_s), _batched(j_o), _batched(j_u)
    x = ag.concat([js, jo, ju])
    if cfg.z_mode == "direct":
        z = ag.sigmoid(ag.linear(params["W_z"], x, params["B_z"]))
    else:
        r = ag.sigmoid(ag.linear(params["W_zr"], x, params["B_zr"]))
        t = ag.sigmoid(ag.linear(params["W_zt"], x, params["B_zt"]))
        z = ag.outer_rows(r, t)
    return ag.reshape(z, (cfg.m * cfg.k,)) if single else z


def prediction_matrices(z: Tensor, cfg: TSPNConfig) -> np.ndarray:
    return z.values.reshape(-1, cfg.m, cfg.k)


# ---------------------------------------------------------------------------
# pair samples and losses
# ---------------------------------------------------------------------------

@dataclass
class PairSample:
    video_id: str
    subject_id: int
    object_id: int
    span: tuple[int, int]
    joint: tuple[np.ndarray, np.ndarray, np.ndarray]
    relationness: float
    sectors: np.ndarray          # (m, k) binary targets


@dataclass
class Batch:
    j_s: np.ndarray
    j_o: np.ndarray
    j_u: np.ndarray
    r: np.ndarray
    t: np.ndarray                # (n, m*k)

    @classmethod
    def stack(cls, samples: Sequence[PairSample]) -> Batch:
        if not samples:
            raise ValueError("empty batch")
        return cls(np.stack([s.joint[0] for s in samples]),
                   np.stack([s.joint[1] for s in samples]),
                   np.stack([s.joint[2] for s in samples]),
                   np.array([s.relationness for s in samples], dtype=np.float64),
                   np.stack([s.sectors.reshape(-1) for s in samples]))


def loss_terms(params: ParamSet, batch: Batch, cfg: TSPNConfig) -> tuple[Tensor, Tensor, Tensor]:
    """``(total, L_R, L_T)``.

    L_R averages BCE over all pairs in the batch; L_T averages BCE over the
    m*k entries of the positive pairs (all pairs when relationness is off).
    """
    if batch.t.shape[1] != cfg.m * cfg.k:
        raise ValueError(f"sector targets have {batch.t.shape[1]} entries, expected "
                         f"{cfg.m * cfg.k}")
    z = span_relation_forward(params, batch.j_s, batch.j_o, batch.j_u, cfg)
    zero = Tensor(0.0)
    if cfg.use_relationness:
        s = relationness_forward(params, batch.j_s, batch.j_o, batch.j_u)
        l_r = ag.mean(ag.bce(s, batch.r))
        pos = np.flatnonzero(batch.r > 0.5)
        if len(pos):
            l_t = ag.mean(ag.bce(ag.rows(z, pos), batch.t[pos]))
        else:
            l_t = zero
    else:
        l_r = zero
        l_t = ag.mean(ag.bce(z, batch.t))
    return ag.add(l_r, l_t), l_r, l_t


def total_loss(params: ParamSet, samples: Sequence[PairSample] | Batch,
               cfg: TSPNConfig) -> Tensor:
    batch = samples if isinstance(samples, Batch) else Batch.stack(samples)
    return loss_terms(params, batch, cfg)[0]


def ordered_pairs(video: VideoAnnotation, min_overlap: int = 1) -> list[tuple]:
    """All (subject, object, overlap) with at least ``min_overlap`` shared frames."""
    out = []
    for s in video.trajectories:
        for o in video.trajectories:
            if s.traj_id == o.traj_id:
                continue
            b, e = max(s.begin, o.begin), min(s.end, o.end)
            if e - b >= min_overlap:
                out.append((s, o, (b, e)))
    out.sort(key=lambda x: (x[0].traj_id, x[1].traj_id))
    return out


Segmenter = Callable[[int, int], Sequence[tuple[int, int]]]


def _clip_relations(rels, span):
    b, e = span
    out = []
    for r in rels:
        rb, re_ = max(r.begin, b), min(r.end, e)
        if rb < re_:
            out.append(RelationInstance(r.subject_id, r.predicate_id, r.object_id, rb, re_))
    return out


def pair_samples(videos: Iterable[VideoAnnotation], cfg: TSPNConfig,
                 provider: FeatureProvider, segmenter: Segmenter | None = None
                 ) -> tuple[list[PairSample], int]:
    """Labelled samples for every ordered pair (or pair x segment).

    Pairs whose span is shorter than ``k`` frames are skipped; the second
    return value counts them.
    """
    samples, skipped = [], 0
    for video in videos:
        by_pair: dict = {}
        for r in video.relations:
            by_pair.setdefault((r.subject_id, r.object_id), []).append(r)
        for s, o, overlap in ordered_pairs(video):
            spans = segmenter(*overlap) if segmenter else [overlap]
            for span in spans:
                if span[1] - span[0] < cfg.k:
                    skipped += 1
                    continue
                rels = _clip_relations(by_pair.get((s.traj_id, o.traj_id), []), span)
                grid = SectorGrid(span[0], span[1], cfg.k)
                fb = bundle(provider, video, s, o, span, cfg.n_cls)
                samples.append(PairSample(
                    video.video_id, s.traj_id, o.traj_id, span,
                    build_joint_features(fb, cfg.d_a, cfg.n_cls),
                    1.0 if rels else 0.0, label_sectors(grid, rels, cfg.m)))
    return samples, skipped


def balance(samples: Sequence[PairSample], ratio: float,
            rng: np.random.Generator) -> list[PairSample]:
    """Keep every positive and at most ``ratio`` x positives negatives per video.

    Videos without positives keep ``ceil(ratio)`` negatives so the head
    still sees empty videos.
    """
    by_video: dict[str, list[int]] = {}
    for i, s in enumerate(samples):
        by_video.setdefault(s.video_id, []).append(i)
    keep = []
    for vid in sorted(by_video):
        idx = by_video[vid]
        pos = [i for i in idx if samples[i].relationness > 0.5]
        neg = [i for i in idx if samples[i].relationness <= 0.5]
        cap = int(ratio * len(pos)) if pos else int(np.ceil(ratio))
        if len(neg) > cap:
            neg = sorted(rng.choice(neg, size=cap, replace=False).tolist())
        keep.extend(pos)
        keep.extend(neg)
    keep.sort()
    return [samples[i] for i in keep]


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class TrainLog:
    epochs: list[dict] = field(default_factory=list)
    skipped_pairs: int = 0
    n_samples: int = 0


def _provider(cfg: TSPNConfig, provider: FeatureProvider | None) -> FeatureProvider:
    return provider or make_provider(cfg.provider, cfg.d_a, cfg.feature_file)


def _dataset_loss(params, samples, cfg) -> tuple[float, float]:
    if not samples:
        return 0.0, 0.0
    _, l_r, l_t = loss_terms(params, Batch.stack(samples), cfg)
    return l_r.item(), l_t.item()


def train(videos: Sequence[VideoAnnotation], cfg: TSPNConfig,
          provider: FeatureProvider | None = None, segmenter: Segmenter | None = None,
          params: ParamSet | None = None) -> tuple[ParamSet, TrainLog]:
    """Fit both heads with Adam on minibatches of balanced pair samples.

    The log holds one record per epoch (epoch 0 = before any update) with
    the dataset-level L_R and L_T of the full, unbalanced sample set.
    """
    if not videos:
        raise ValueError("empty training set")
    provider = _provider(cfg, provider)
    samples, skipped = pair_samples(videos, cfg, provider, segmenter)
    if skipped:
        log.warning("skipped %d pair spans shorter than k=%d frames", skipped, cfg.k)
    params = params if params is not None else init_params(cfg)
    tlog = TrainLog(skipped_pairs=skipped, n_samples=len(samples))
    l_r, l_t = _dataset_loss(params, samples, cfg)
    tlog.epochs.append({"epoch": 0, "loss_r": l_r, "loss_t": l_t, "loss": l_r + l_t})
    opt = ag.Adam(params, cfg.lr, cfg.beta1, cfg.beta2)
    for epoch in range(1, cfg.epochs + 1):
        rng = np.random.default_rng([cfg.seed, epoch])
        chosen = balance(samples, cfg.neg_ratio, rng)
        order = rng.permutation(len(chosen))
        for start in range(0, len(order), cfg.batch_size):
            batch = Batch.stack([chosen[i] for i in order[start:start + cfg.batch_size]])
            loss, _, _ = loss_terms(params, batch, cfg)
            ag.backward(loss)
            opt.step()
        l_r, l_t = _dataset_loss(params, samples, cfg)
        tlog.epochs.append({"epoch": epoch, "loss_r": l_r, "loss_t": l_t, "loss": l_r + l_t})
        log.info("epoch %d  L_R %.4f  L_T %.4f", epoch, l_r, l_t)
    return params, tlog


# ---------------------------------------------------------------------------
# inference
# ---------------------------------------------------------------------------

@dataclass
class PairCandidate:
    subject_id: int
    object_id: int
    score: float
    span: tuple[int, int]
    joint: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None


def select_pairs_of_interest(candidates: Iterable[PairCandidate], p: int) -> list[PairCandidate]:
    """Top-``p`` by relationness, ties broken by (subject, object) id."""
    if p < 1:
        raise ValueError("p must be >= 1")
    return sorted(candidates, key=lambda c: (-c.score, c.subject_id, c.object_id))[:p]


def score_candidates(video: VideoAnnotation, params: ParamSet, cfg: TSPNConfig,
                     provider: FeatureProvider | None = None,
                     spans: Sequence[tuple] | None = None) -> list[PairCandidate]:
    """Relationness for each (subject, object, span); all pairs by default."""
    provider = _provider(cfg, provider)
    if spans is None:
        spans = ordered_pairs(video)
    if not spans:
        return []
    joints = [build_joint_features(bundle(provider, video, s, o, span, cfg.n_cls),
                                   cfg.d_a, cfg.n_cls) for s, o, span in spans]
    if cfg.use_relationness:
        scores = relationness_forward(params, *(np.stack(j) for j in zip(*joints))).values
    else:
        scores = np.ones(len(spans))
    return [PairCandidate(s.traj_id, o.traj_id, float(sc), span, j)
            for (s, o, span), sc, j in zip(spans, scores, joints)]


def emit_triplets(cands: Sequence[PairCandidate], params: ParamSet,
                  cfg: TSPNConfig) -> list[RelationInstance]:
    """Decode sector activations of each candidate into scored relations."""
    if not cands:
        return []
    z = prediction_matrices(span_relation_forward(
        params, *(np.stack(j) for j in zip(*(c.joint for c in cands))), cfg), cfg)
    out = []
    for c, zc in zip(cands, z):
        b, e = c.span
        if e - b >= cfg.k:
            grid = SectorGrid(b, e, cfg.k)
        else:
            # too short for k sectors: one sector, probability averaged over the k columns
            grid, zc = SectorGrid(b, e, 1), zc.mean(axis=1, keepdims=True)
        for d in decode_spans(grid, zc, cfg.threshold, cfg.decode_gap):
            out.append(RelationInstance(c.subject_id, d.predicate_id, c.object_id,
                                        d.begin, d.end, c.score * d.confidence))
    return out


def predict(video: VideoAnnotation, params: ParamSet, cfg: TSPNConfig,
            provider: FeatureProvider | None = None) -> list[RelationInstance]:
    """Scored relation triplets for one video, best first, at most ``top_n``."""
    cands = score_candidates(video, params, cfg, provider)
    if cfg.use_relationness:
        cands = select_pairs_of_interest(cands, cfg.p)
    return ranked(emit_triplets(cands, params, cfg))[:cfg.top_n]
