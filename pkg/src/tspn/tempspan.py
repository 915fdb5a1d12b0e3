"""Temporal sectors over a pair's overlap: quantization, labels, decoding."""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .data import RelationInstance, Trajectory


class NoOverlapError(ValueError):
    pass


class DegenerateGridError(ValueError):
    pass


@dataclass(frozen=True)
class SectorGrid:
    """``k`` sectors over ``[begin, end)``, each nominally ``coverage`` frames.

    Boundaries are ``begin + round_half_up(i * coverage)`` so sector lengths
    differ by at most one frame and sum to the span length exactly.
    """

    begin: int
    end: int
    k: int

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"sector count must be positive, got {self.k}")
        if self.end - self.begin < self.k:
            raise DegenerateGridError(
                f"span [{self.begin}, {self.end}) shorter than {self.k} sectors")

    @property
    def length(self) -> int:
        return self.end - self.begin

    @property
    def coverage(self) -> float:
        return self.length / self.k

    @property
    def boundaries(self) -> tuple[int, ...]:
        n, k = self.length, self.k
        # floor(i*n/k + 1/2) in exact integer arithmetic
        return tuple(self.begin + (2 * i * n + k) // (2 * k) for i in range(k + 1))

    def sector_lengths(self) -> np.ndarray:
        return np.diff(self.boundaries)


def span_grid(begin: int, end: int, k: int) -> SectorGrid:
    if end <= begin:
        raise NoOverlapError(f"empty span [{begin}, {end})")
    return SectorGrid(begin, end, k)


def build_grid(subject: Trajectory, obj: Trajectory, k: int) -> SectorGrid:
    begin, end = max(subject.begin, obj.begin), min(subject.end, obj.end)
    if end <= begin:
        raise NoOverlapError(
            f"trajectories {subject.traj_id} and {obj.traj_id} do not overlap in time")
    return SectorGrid(begin, end, k)


def label_sectors(grid: SectorGrid, gt_relations: Sequence[RelationInstance],
                  m: int) -> np.ndarray:
    """Binary ``(m, k)`` targets: 1 where one GT instance of that predicate
    covers strictly more than half of the sector's frames."""
    labels = np.zeros((m, grid.k), dtype=np.float64)
    bounds = np.asarray(grid.boundaries)
    starts, ends = bounds[:-1], bounds[1:]
    lengths = ends - starts
    for rel in gt_relations:
        if not 0 <= rel.predicate_id < m:
            raise IndexError(f"predicate id {rel.predicate_id} outside vocabulary of size {m}")
        cover = np.clip(np.minimum(ends, rel.end) - np.maximum(starts, rel.begin), 0, None)
        labels[rel.predicate_id, 2 * cover > lengths] = 1.0
    return labels


class DecodedSpan(NamedTuple):
    predicate_id: int
    begin: int
    end: int
    confidence: float


def decode_spans(grid: SectorGrid, z: np.ndarray, threshold: float = 0.5,
                 gap: int = 0) -> list[DecodedSpan]:
    """Turn sector probabilities into frame spans.

    Per predicate row, maximal runs of sectors with ``z >= threshold`` become
    spans; runs separated by at most ``gap`` inactive sectors are joined.
    Confidence is the mean probability over the sectors a span covers.
    """
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[1] != grid.k:
        raise ValueError(f"prediction matrix shape {z.shape} does not fit a {grid.k}-sector grid")
    bounds = grid.boundaries
    out = []
    for r, row in enumerate(z):
        active = np.flatnonzero(row >= threshold)
        if not len(active):
            continue
        runs = []
        start = prev = active[0]
        for i in active[1:]:
            if i - prev - 1 > gap:
                runs.append((start, prev))
                start = i
            prev = i
        runs.append((start, prev))
        for a, b in runs:
            out.append(DecodedSpan(r, bounds[a], bounds[b + 1], float(row[a:b + 1].mean())))
    return out
