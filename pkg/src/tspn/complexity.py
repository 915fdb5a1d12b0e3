"""Proposal-count cost model for segment-, window- and sector-based relation
detection over a pair overlap of ``L`` frames.

``l`` is the segment length / smallest window / sector coverage and ``s`` the
stride. Counts are exact integers; where the closed forms assume ``l``
divides ``L``, the sum bound is ``floor(L / l)``, negative ceiling terms count
as zero, and the sector count is ``ceil(L / l)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable


class CostInputError(ValueError):
    pass


@dataclass(frozen=True)
class CostInput:
    L: float
    l: float
    s: float

    def __post_init__(self):
        if not 0 < self.s < self.l <= self.L:
            raise CostInputError(f"need 0 < s < l <= L, got L={self.L}, l={self.l}, s={self.s}")


def _ceil_div(num, den) -> int:
    return math.ceil(Fraction(num) / Fraction(den))


def count_segments(c: CostInput) -> int:
    return _ceil_div(Fraction(c.L) - Fraction(c.l) + Fraction(c.s), c.s)


def count_windows(c: CostInput) -> int:
    L, l, s = Fraction(c.L), Fraction(c.l), Fraction(c.s)
    total = 0
    for k in range(1, math.floor(L / l) + 1):
        total += max(0, _ceil_div(L - k * l + s, s))
    return total


def count_sectors(c: CostInput) -> int:
    return _ceil_div(c.L, c.l)


def segment_upper_bound(c: CostInput) -> float:
    return (c.L - c.l + 2 * c.s) / c.s


def window_upper_bound(c: CostInput) -> float:
    """Bound on the squared window count (two windows per relation)."""
    L, l, s = c.L, c.l, c.s
    return (L ** 2 / s - L ** 2 / (2 * l ** 2 * s) - L / (2 * l * s) + 2 * L) ** 2


def sector_upper_bound(c: CostInput) -> float:
    return c.L / c.l


def segment_typical(L: float, l: float) -> float:
    return 2 * L / l


def window_typical(L: float, l: float) -> float:
    return (2 * L ** 2 / l - L ** 2 / l ** 3 - L / l ** 2 + 2 * L) ** 2


def sector_typical(L: float, l: float) -> float:
    return L / l


BIG_O = {"segment": "O(L)", "window": "O(L^4)", "tspn": "O(L)"}


@dataclass(frozen=True)
class CostRow:
    L: float
    l: float
    s: float
    n_segments: int
    n_windows: int
    n_sectors: int
    segment_bound: float
    window_cost: int          # n_windows ** 2
    window_bound: float
    sector_bound: float
    segment_typical: float
    window_typical: float
    sector_typical: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def cost_row(c: CostInput) -> CostRow:
    nw = count_windows(c)
    return CostRow(c.L, c.l, c.s, count_segments(c), nw, count_sectors(c),
                   segment_upper_bound(c), nw * nw, window_upper_bound(c),
                   sector_upper_bound(c), segment_typical(c.L, c.l),
                   window_typical(c.L, c.l), sector_typical(c.L, c.l))


def emit_cost_table(inputs: Iterable[CostInput]) -> list[CostRow]:
    return [cost_row(c) for c in inputs]


def _num(x: float) -> str:
    return f"{x:.6g}"


def format_table(rows: list[CostRow]) -> str:
    """Exact counts plus the approximated / upper-bound / typical / Big-O columns."""
    lines = []
    for r in rows:
        lines.append(f"L={_num(r.L)} l={_num(r.l)} s={_num(r.s)}  exact: "
                     f"N_s={r.n_segments} N_w={r.n_windows} N_t={r.n_sectors}")
        lines.append(f"  {'method':<10} {'approx':>12} {'upper bound':>14} "
                     f"{'typical(s=l/2)':>16} {'big-O':>7}")
        lines.append(f"  {'segment':<10} {r.n_segments:>12} {_num(r.segment_bound):>14} "
                     f"{_num(r.segment_typical):>16} {BIG_O['segment']:>7}")
        lines.append(f"  {'window':<10} {r.window_cost:>12} {_num(r.window_bound):>14} "
                     f"{_num(r.window_typical):>16} {BIG_O['window']:>7}")
        lines.append(f"  {'tspn':<10} {r.n_sectors:>12} {_num(r.sector_bound):>14} "
                     f"{_num(r.sector_typical):>16} {BIG_O['tspn']:>7}")
    return "\n".join(lines)
