import json
import math

import numpy as np
import pytest
from PIL import Image

from graspnet.geometry import GraspCandidate
from graspnet.evaluation import (
    EvalReport,
    dump_predictions,
    jaccard_correct,
    render_overlay,
    segmentation_iou,
)


def overlapping_pair(target_iou, theta_pred=0.0, theta_gt=0.0, w=10.0, h=10.0):
    """Axis-aligned pair at a controlled IoU via horizontal shift."""
    # For equal boxes shifted by d: IoU = (w - d) / (w + d)
    d = w * (1 - target_iou) / (1 + target_iou)
    gt = GraspCandidate(0, 0, w, h, theta_gt)
    pred = GraspCandidate(d, 0, w, h, theta_pred)
    return pred, gt


def pair_at(iou_target, delta_deg, w=20.0, h=14.0):
    """Pred/gt pair at an exact IoU and angle discrepancy.

    The gt sits axis-aligned at the origin; pred is rotated by delta and
    shifted along x until the rotated IoU hits the target (IoU decreases
    monotonically with the shift).
    """
    from graspnet.geometry import rotated_iou

    gt = GraspCandidate(0, 0, w, h, 0)
    lo, hi = 0.0, 2.0 * w
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if rotated_iou(GraspCandidate(mid, 0, w, h, delta_deg), gt) > iou_target:
            lo = mid
        else:
            hi = mid
    pred = GraspCandidate(0.5 * (lo + hi), 0, w, h, delta_deg)
    assert rotated_iou(pred, gt) == pytest.approx(iou_target, abs=1e-6)
    return pred, gt


class TestJaccardCorrect:
    def test_iou_26_angle_29_correct(self):
        pred, gt = pair_at(0.26, 29.0)
        assert jaccard_correct(pred, [gt])

    def test_iou_26_angle_31_incorrect(self):
        pred, gt = pair_at(0.26, 31.0)
        assert not jaccard_correct(pred, [gt])

    def test_iou_24_angle_0_incorrect(self):
        pred, gt = pair_at(0.24, 0.0)
        assert not jaccard_correct(pred, [gt])

    def test_exact_thresholds_are_strict(self):
        pred, gt = overlapping_pair(0.25)
        assert not jaccard_correct(pred, [gt])  # IoU must exceed 0.25
        sq = GraspCandidate(0, 0, 10, 10, 0)
        assert not jaccard_correct(GraspCandidate(0, 0, 10, 10, 30.0), [sq])

    def test_any_gt_suffices(self):
        pred = GraspCandidate(0, 0, 10, 10, 0)
        far = GraspCandidate(100, 100, 10, 10, 0)
        assert jaccard_correct(pred, [far, pred])

    def test_empty_gts(self):
        assert not jaccard_correct(GraspCandidate(0, 0, 10, 10, 0), [])

    def test_monotone_in_iou_and_angle(self):
        gt = GraspCandidate(0, 0, 10, 10, 0)
        rng = np.random.default_rng(0)
        for _ in range(30):
            iou_a, iou_b = sorted(rng.uniform(0.05, 0.9, 2))
            ang_a, ang_b = sorted(rng.uniform(0, 90, 2))
            pred_weak, _ = overlapping_pair(iou_a)
            pred_strong, _ = overlapping_pair(iou_b)
            # same angle, more IoU never flips correct -> incorrect
            if jaccard_correct(pred_weak, [gt]):
                assert jaccard_correct(pred_strong, [gt])


class TestSegmentationIoU:
    def test_identical_masks(self):
        m = np.random.default_rng(0).integers(0, 4, (16, 16))
        assert segmentation_iou([m], [m], 4) == pytest.approx(1.0)

    def test_disjoint_classes(self):
        a = np.zeros((8, 8), dtype=int)
        b = np.ones((8, 8), dtype=int)
        assert segmentation_iou([a], [b], 2) == 0.0

    def test_absent_classes_skipped(self):
        a = np.zeros((8, 8), dtype=int)
        assert segmentation_iou([a], [a], 5) == pytest.approx(1.0)

    def test_known_half_overlap(self):
        gt = np.zeros((4, 4), dtype=int)
        gt[:, :2] = 1
        pred = np.zeros((4, 4), dtype=int)
        pred[:, 1:3] = 1
        # class 1: inter 4, union 12 -> 1/3; class 0 same by symmetry
        assert segmentation_iou([pred], [gt], 2) == pytest.approx(1 / 3)


class TestRenderOverlay:
    def test_zero_candidates_unmodified(self, tmp_path):
        img = np.random.default_rng(0).integers(0, 255, (48, 64, 3), dtype=np.uint8)
        out = render_overlay(img, [], [], tmp_path / "o.png")
        assert np.array_equal(out, img)
        back = np.asarray(Image.open(tmp_path / "o.png"))
        assert np.array_equal(back, img)

    def test_one_candidate_changes_pixels(self, tmp_path):
        img = np.zeros((64, 64, 3), dtype=np.uint8)
        out = render_overlay(img, [GraspCandidate(32, 32, 20, 10, 30)], [True],
                             tmp_path / "o.png")
        assert not np.array_equal(out, img)
        assert (np.asarray(Image.open(tmp_path / "o.png")) == out).all()

    def test_failure_highlight_differs_from_success(self, tmp_path):
        img = np.zeros((64, 64, 3), dtype=np.uint8)
        ok = render_overlay(img, [GraspCandidate(32, 32, 20, 10, 0)], [True],
                            tmp_path / "a.png")
        bad = render_overlay(img, [GraspCandidate(32, 32, 20, 10, 0)], [False],
                             tmp_path / "b.png")
        assert not np.array_equal(ok, bad)

    def test_deterministic(self, tmp_path):
        img = np.full((48, 48, 3), 100, dtype=np.uint8)
        cands = [GraspCandidate(24, 24, 16, 8, 45)]
        a = render_overlay(img, cands, [True], tmp_path / "a.png")
        b = render_overlay(img, cands, [True], tmp_path / "b.png")
        assert np.array_equal(a, b)

    def test_flag_count_mismatch(self, tmp_path):
        with pytest.raises(ValueError):
            render_overlay(np.zeros((8, 8, 3), dtype=np.uint8),
                           [GraspCandidate(4, 4, 2, 2, 0)], [True, False],
                           tmp_path / "x.png")


class TestReportAndDump:
    def test_report_json_roundtrip(self, tmp_path):
        rep = EvalReport(grasp_accuracy=0.5, seg_iou=0.75, images_per_sec=3.2,
                         candidate_precision=0.4,
                         per_image=[{"index": 0, "name": "a", "top1_correct": True,
                                     "candidates": []}])
        rep.to_json(tmp_path / "r.json")
        back = EvalReport.from_json(tmp_path / "r.json")
        assert back == rep
        data = json.loads((tmp_path / "r.json").read_text())
        assert set(data) >= {"grasp_accuracy", "seg_iou", "images_per_sec", "per_image"}

    def test_dump_format(self, tmp_path):
        recs = [("img0", GraspCandidate(1, 2, 3, 4, 50), 0.9)]
        dump_predictions(recs, tmp_path / "d.txt")
        line = (tmp_path / "d.txt").read_text().strip()
        parts = line.split()
        assert parts[0] == "img0"
        assert [float(x) for x in parts[1:]] == [1.0, 2.0, 3.0, 4.0, 50.0, 0.9]
