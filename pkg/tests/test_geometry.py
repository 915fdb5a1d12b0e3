import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tspn.data import BBox, Trajectory
from tspn.geometry import (box_iou, center_velocity, clipped_viou, span_overlap, union_box,
                           viou)

from oracles import voxel_viou


def traj(begin, boxes, tid=0):
    boxes = np.asarray(boxes, dtype=np.float64)
    return Trajectory(tid, 0, begin, begin + len(boxes), boxes)


@st.composite
def int_trajectories(draw, max_len=6, size=32):
    begin = draw(st.integers(0, 8))
    n = draw(st.integers(1, max_len))
    boxes = []
    for _ in range(n):
        x0, x1 = sorted(draw(st.lists(st.integers(0, size), min_size=2, max_size=2, unique=True)))
        y0, y1 = sorted(draw(st.lists(st.integers(0, size), min_size=2, max_size=2, unique=True)))
        boxes.append((x0, y0, x1, y1))
    return traj(begin, boxes)


class TestBoxIoU:
    def test_identical(self):
        assert box_iou(BBox(0, 0, 10, 10), BBox(0, 0, 10, 10)) == 1.0

    def test_disjoint(self):
        assert box_iou(BBox(0, 0, 10, 10), BBox(20, 20, 30, 30)) == 0.0

    def test_half_shift(self):
        assert box_iou(BBox(0, 0, 10, 10), BBox(5, 0, 15, 10)) == pytest.approx(50 / 150)

    def test_degenerate_boxes(self):
        assert box_iou(BBox(1, 1, 1, 1), BBox(1, 1, 1, 1)) == 0.0


class TestUnionBox:
    @pytest.mark.parametrize("a, b, expected", [
        ((0, 0, 1, 1), (0, 0, 1, 1), (0, 0, 1, 1)),
        ((0, 0, 1, 1), (2, 2, 3, 3), (0, 0, 3, 3)),
        ((0, 5, 2, 9), (1, 0, 3, 6), (0, 0, 3, 9)),
    ])
    def test_examples(self, a, b, expected):
        assert union_box(BBox(*a), BBox(*b)).as_tuple() == expected


class TestVIoU:
    def test_identical(self):
        t = traj(3, [(0, 0, 4, 4), (1, 1, 5, 5)])
        assert viou(t, t) == 1.0

    def test_temporally_disjoint(self):
        assert viou(traj(0, [(0, 0, 4, 4)] * 3), traj(5, [(0, 0, 4, 4)] * 3)) == 0.0

    def test_single_frame(self):
        assert viou(traj(2, [(0, 0, 10, 10)]), traj(2, [(5, 0, 15, 10)])) == pytest.approx(1 / 3)

    def test_non_shared_frames_count_in_union(self):
        a = traj(0, [(0, 0, 2, 2)] * 2)
        b = traj(1, [(0, 0, 2, 2)])
        assert viou(a, b) == pytest.approx(4 / 8)

    def test_clipped(self):
        a = traj(0, [(0, 0, 2, 2)] * 10)
        assert clipped_viou(a, (0, 5), a, (5, 10)) == 0.0
        assert clipped_viou(a, (2, 6), a, (2, 6)) == 1.0

    @settings(max_examples=200, deadline=None)
    @given(int_trajectories(), int_trajectories())
    def test_voxel_oracle(self, a, b):
        assert viou(a, b) == voxel_viou(a, b)

    @settings(max_examples=200, deadline=None)
    @given(int_trajectories(), int_trajectories())
    def test_symmetric_and_bounded(self, a, b):
        v = viou(a, b)
        assert v == viou(b, a)
        assert 0.0 <= v <= 1.0

    @settings(max_examples=100, deadline=None)
    @given(int_trajectories())
    def test_identity(self, a):
        assert viou(a, a) == 1.0


class TestSpans:
    def test_overlap(self):
        ov = span_overlap(traj(0, [(0, 0, 1, 1)] * 10), traj(5, [(0, 0, 1, 1)] * 10))
        assert (ov.begin, ov.end, len(ov)) == (5, 10, 5)

    def test_disjoint_overlap_is_empty(self):
        ov = span_overlap(traj(0, [(0, 0, 1, 1)] * 2), traj(5, [(0, 0, 1, 1)] * 2))
        assert ov.empty and len(ov) == 0


class TestVelocity:
    def test_forward_difference(self):
        boxes = np.array([[0, 0, 2, 2], [1, 0, 3, 2], [3, 0, 5, 2]], dtype=float)
        assert np.array_equal(center_velocity(boxes)[:, 0], [1, 2, 2])

    def test_single_frame(self):
        assert np.array_equal(center_velocity(np.array([[0, 0, 1, 1.0]])), [[0, 0]])
