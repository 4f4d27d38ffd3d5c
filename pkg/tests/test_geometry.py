import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graspnet.geometry import (
    CorrectionFactors,
    GraspCandidate,
    OrientationBinning,
    RegionProposal,
    angle_delta,
    corners,
    decode_candidate,
    encode_targets,
    enclosing_aabb,
    nms_rotated,
    normalize_angle,
    rotated_iou,
    smooth_l1,
)

from oracles import rasterized_iou

angles = st.floats(-720, 720, allow_nan=False)
extents = st.floats(0.5, 120, allow_nan=False)
coords = st.floats(-200, 200, allow_nan=False)


def rect(x=0.0, y=0.0, w=2.0, h=2.0, theta=0.0):
    return GraspCandidate(x, y, w, h, theta)


rects = st.builds(rect, x=coords, y=coords, w=extents, h=extents, theta=angles)


class TestGraspCandidate:
    def test_theta_normalized_on_construction(self):
        assert rect(theta=190.0).theta == pytest.approx(10.0)
        assert rect(theta=-30.0).theta == pytest.approx(150.0)
        assert rect(theta=180.0).theta == 0.0

    def test_rejects_nonpositive_extents(self):
        with pytest.raises(ValueError):
            GraspCandidate(0, 0, 0, 2, 0)
        with pytest.raises(ValueError):
            GraspCandidate(0, 0, 2, -1, 0)

    def test_proposal_rejects_bad_score(self):
        with pytest.raises(ValueError):
            RegionProposal(0, 0, 1, 1, score=1.5)


class TestCorners:
    def test_axis_aligned_unit_square(self):
        pts = corners(rect(0, 0, 2, 2, 0))
        assert sorted(map(tuple, pts.round(9))) == [(-1, -1), (-1, 1), (1, -1), (1, 1)]

    def test_square_90_degrees_same_corner_set(self):
        a = sorted(map(tuple, corners(rect(0, 0, 2, 2, 0)).round(9)))
        b = sorted(map(tuple, corners(rect(0, 0, 2, 2, 90)).round(9)))
        assert a == b

    def test_rotated_rect_matches_rotation_matrix(self):
        # R(30 deg) applied to local corners (+-2, +-1), shifted by (5, 5)
        pts = corners(rect(5, 5, 4, 2, 30))
        c, s = math.cos(math.radians(30)), math.sin(math.radians(30))
        expected = []
        for lx, ly in [(-2, -1), (2, -1), (2, 1), (-2, 1)]:
            expected.append((5 + c * lx - s * ly, 5 + s * lx + c * ly))
        np.testing.assert_allclose(pts, expected, atol=1e-12)

    @given(rects)
    @settings(max_examples=50)
    def test_counter_clockwise_and_area(self, g):
        pts = corners(g)
        signed = 0.0
        for i in range(4):
            x1, y1 = pts[i]
            x2, y2 = pts[(i + 1) % 4]
            signed += x1 * y2 - x2 * y1
        assert signed > 0
        assert signed * 0.5 == pytest.approx(g.area, rel=1e-9)


class TestRotatedIoU:
    def test_identical(self):
        g = rect(3, 4, 5, 2, 37)
        assert rotated_iou(g, g) == pytest.approx(1.0)

    def test_disjoint(self):
        assert rotated_iou(rect(0, 0, 10, 10), rect(100, 0, 10, 10)) == 0.0

    def test_axis_aligned_partial_overlap(self):
        # x-overlap 3 of 4, same height: inter 6, union 10
        assert rotated_iou(rect(0, 0, 4, 2, 0), rect(1, 0, 4, 2, 0)) == pytest.approx(0.6)

    def test_cross_at_90_degrees(self):
        # 4x2 crossed with itself rotated 90: intersection 2x2, union 2*8-4
        iou = rotated_iou(rect(0, 0, 4, 2, 0), rect(0, 0, 4, 2, 90))
        assert iou == pytest.approx(4 / 12)

    def test_touching_edges_is_zero(self):
        assert rotated_iou(rect(0, 0, 2, 2, 0), rect(2, 0, 2, 2, 0)) == 0.0

    @given(rects, rects)
    @settings(max_examples=60, deadline=None)
    def test_symmetric_and_bounded(self, a, b):
        iou = rotated_iou(a, b)
        assert 0.0 <= iou <= 1.0
        assert iou == pytest.approx(rotated_iou(b, a), abs=1e-12)

    def test_matches_rasterization_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(40):
            a = rect(rng.uniform(-20, 20), rng.uniform(-20, 20),
                     rng.uniform(5, 100), rng.uniform(5, 100), rng.uniform(0, 180))
            b = rect(a.x + rng.uniform(-30, 30), a.y + rng.uniform(-30, 30),
                     rng.uniform(5, 100), rng.uniform(5, 100), rng.uniform(0, 180))
            assert abs(rotated_iou(a, b) - rasterized_iou(a, b)) <= 0.02


class TestAngleDelta:
    def test_examples(self):
        assert angle_delta(30, 30) == 0
        assert angle_delta(175, 5) == pytest.approx(10)  # brute: min over k of |170 + 180k|
        assert angle_delta(0, 90) == pytest.approx(90)

    @given(angles, angles)
    @settings(max_examples=80)
    def test_bounded_symmetric_periodic(self, a, b):
        d = angle_delta(a, b)
        assert 0 <= d <= 90.0 + 1e-9
        assert d == pytest.approx(angle_delta(b, a), abs=1e-9)
        assert d == pytest.approx(angle_delta(a + 180, b), abs=1e-6)

    @given(angles, angles)
    @settings(max_examples=40)
    def test_matches_bruteforce_shift_search(self, a, b):
        brute = min(abs(a - b + 180 * k) for k in range(-9, 10))
        assert angle_delta(a, b) == pytest.approx(brute, abs=1e-9)


class TestTargetCoding:
    def test_identity(self):
        g = rect(10, 20, 8, 4, 0)
        r = RegionProposal(10, 20, 8, 4)
        f = encode_targets(g, r)
        assert (f.t_x, f.t_y, f.t_w, f.t_h) == (0, 0, 0, 0)

    def test_center_shift(self):
        f = encode_targets(rect(6, 0, 4, 4), RegionProposal(4, 0, 4, 4))
        assert f.t_x == pytest.approx(0.5)

    def test_log_scale(self):
        f = encode_targets(rect(0, 0, 8, 4), RegionProposal(0, 0, 4, 4))
        assert f.t_w == pytest.approx(math.log(2))

    def test_y_normalized_by_proposal_height(self):
        f = encode_targets(rect(0, 3, 4, 4), RegionProposal(0, 0, 10, 6))
        assert f.t_y == pytest.approx(0.5)

    def test_decode_zero_factors_takes_bin_midpoint(self):
        binning = OrientationBinning(18)
        r = RegionProposal(5, 6, 4, 2)
        g = decode_candidate(r, CorrectionFactors(0, 0, 0, 0), 9, binning)
        assert (g.x, g.y, g.w, g.h) == (5, 6, 4, 2)
        assert g.theta == pytest.approx(95.0)

    def test_decode_angle_offset(self):
        binning = OrientationBinning(18)
        g = decode_candidate(RegionProposal(0, 0, 2, 2),
                             CorrectionFactors(0, 0, 0, 0, t_theta=0.5), 0, binning)
        assert g.theta == pytest.approx(binning.representative(0) + 5.0)

    def test_decode_rejects_null_class(self):
        binning = OrientationBinning(18)
        with pytest.raises(ValueError):
            decode_candidate(RegionProposal(0, 0, 2, 2),
                             CorrectionFactors(0, 0, 0, 0), binning.null_class, binning)

    @given(rects, st.floats(-40, 40), st.floats(-40, 40), extents, extents)
    @settings(max_examples=100)
    def test_roundtrip(self, g, px, py, pw, ph):
        binning = OrientationBinning(18)
        r = RegionProposal(px, py, pw, ph)
        f = encode_targets(g, r)
        back = decode_candidate(r, f, binning.bin_of(g.theta), binning)
        assert back.x == pytest.approx(g.x, rel=1e-6, abs=1e-6)
        assert back.y == pytest.approx(g.y, rel=1e-6, abs=1e-6)
        assert back.w == pytest.approx(g.w, rel=1e-6)
        assert back.h == pytest.approx(g.h, rel=1e-6)
        assert angle_delta(back.theta, g.theta) <= binning.bin_width / 2 + 1e-9


class TestBinning:
    def test_examples(self):
        b = OrientationBinning(18)
        assert b.bin_width == 10
        assert b.null_class == 18
        assert b.bin_of(5) == 0
        assert b.representative(0) == 5
        assert b.bin_of(179.9) == 17
        assert b.representative(17) == 175

    def test_representative_rejects_out_of_range(self):
        b = OrientationBinning(18)
        for c in (-1, 18, 25):
            with pytest.raises(ValueError):
                b.representative(c)

    @given(angles)
    @settings(max_examples=80)
    def test_half_bin_width_quantization(self, theta):
        b = OrientationBinning(18)
        c = b.bin_of(theta)
        assert angle_delta(theta, b.representative(c)) <= b.bin_width / 2 + 1e-9

    def test_bins_partition_without_gap_or_overlap(self):
        b = OrientationBinning(18)
        for c in range(18):
            assert b.bin_of(b.representative(c)) == c
        edges = [c * b.bin_width for c in range(18)]
        for c, e in enumerate(edges):
            assert b.bin_of(e) == c


class TestSmoothL1:
    def test_values(self):
        assert smooth_l1(0) == 0
        assert smooth_l1(0.5) == 0.125
        assert smooth_l1(-2) == 1.5

    @given(st.floats(-1e6, 1e6, allow_nan=False))
    @settings(max_examples=80)
    def test_even_and_nonnegative(self, x):
        assert smooth_l1(x) >= 0
        assert smooth_l1(x) == pytest.approx(smooth_l1(-x))

    def test_continuously_differentiable_at_one(self):
        h = 1e-7
        left = (smooth_l1(1.0) - smooth_l1(1.0 - h)) / h
        right = (smooth_l1(1.0 + h) - smooth_l1(1.0)) / h
        assert left == pytest.approx(1.0, abs=1e-6)
        assert right == pytest.approx(1.0, abs=1e-6)
        assert smooth_l1(1.0 - 1e-12) == pytest.approx(smooth_l1(1.0 + 1e-12), abs=1e-9)


class TestEnclosingAabb:
    def test_axis_aligned(self):
        box = enclosing_aabb(rect(3, 4, 6, 2, 0))
        assert (box.x, box.y, box.w, box.h) == (3, 4, 6, 2)

    def test_ninety_degrees_swaps_extents(self):
        box = enclosing_aabb(rect(0, 0, 6, 2, 90))
        assert box.w == pytest.approx(2)
        assert box.h == pytest.approx(6)

    def test_thirty_degrees(self):
        c, s = math.cos(math.radians(30)), math.sin(math.radians(30))
        box = enclosing_aabb(rect(0, 0, 4, 2, 30))
        assert box.w == pytest.approx(4 * c + 2 * s)
        assert box.h == pytest.approx(4 * s + 2 * c)

    @given(rects)
    @settings(max_examples=50)
    def test_contains_all_corners(self, g):
        box = enclosing_aabb(g)
        pts = corners(g)
        assert (pts[:, 0] >= box.x - box.w / 2 - 1e-9).all()
        assert (pts[:, 0] <= box.x + box.w / 2 + 1e-9).all()
        assert (pts[:, 1] >= box.y - box.h / 2 - 1e-9).all()
        assert (pts[:, 1] <= box.y + box.h / 2 + 1e-9).all()


class TestNmsRotated:
    def test_identical_candidates_keep_one(self):
        g = rect(0, 0, 4, 4, 0)
        assert nms_rotated([g, g], [0.9, 0.8], 0.5) == [0]

    def test_disjoint_all_kept(self):
        cands = [rect(0, 0, 2, 2), rect(10, 0, 2, 2), rect(20, 0, 2, 2)]
        assert sorted(nms_rotated(cands, [0.5, 0.9, 0.7], 0.5)) == [0, 1, 2]

    def test_chain_suppression(self):
        # A overlaps B, B overlaps C, A and C clear of each other (hand-traced greedy)
        a = rect(0, 0, 4, 4, 0)
        b = rect(1.0, 0, 4, 4, 0)   # IoU(A,B) = 12/20 = 0.60
        c = rect(2.5, 0, 4, 4, 0)   # IoU(A,C) = 6/26 ~ 0.23, IoU(B,C) = 10/22 ~ 0.45
        kept = nms_rotated([a, b, c], [0.9, 0.8, 0.7], 0.3)
        assert kept == [0, 2]

    def test_tie_breaks_by_lower_index(self):
        g = rect(0, 0, 4, 4, 0)
        far = rect(50, 0, 4, 4, 0)
        assert nms_rotated([far, g, g], [0.5, 0.5, 0.5], 0.5) == [0, 1]


class TestNormalizeAngle:
    @given(angles)
    @settings(max_examples=80)
    def test_in_range_and_equivalent(self, theta):
        n = normalize_angle(theta)
        assert 0 <= n < 180
        assert angle_delta(n, theta) < 1e-6
