"""Evaluation: Jaccard grasp accuracy, segmentation IoU, throughput,
prediction dumps, and overlay rendering.

A predicted grasp counts as correct when some ground-truth grasp agrees
within 30 degrees of rotation and overlaps with rotated IoU above 0.25.
Image-level accuracy scores only the top candidate; a secondary
precision figure scores every emitted candidate.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from graspnet.data.samples import SceneSample
from graspnet.geometry import GraspCandidate, angle_delta, corners, rotated_iou
from graspnet.model import GraspNetwork

__all__ = [
    "jaccard_correct",
    "EvalReport",
    "evaluate",
    "segmentation_iou",
    "render_overlay",
    "dump_predictions",
    "ANGLE_TOLERANCE_DEG",
    "IOU_THRESHOLD",
]

ANGLE_TOLERANCE_DEG = 30.0
IOU_THRESHOLD = 0.25


def jaccard_correct(pred: GraspCandidate, gts: list[GraspCandidate]) -> bool:
    """True iff some ground truth is within 30 degrees and above 0.25 IoU.

    Both comparisons are strict, so boundary values (exactly 30 degrees or
    exactly 0.25) do not count.
    """
    return any(
        angle_delta(pred.theta, gt.theta) < ANGLE_TOLERANCE_DEG
        and rotated_iou(pred, gt) > IOU_THRESHOLD
        for gt in gts
    )


@dataclass
class EvalReport:
    grasp_accuracy: float
    seg_iou: float
    images_per_sec: float
    candidate_precision: float = 0.0
    per_image: list[dict] = field(default_factory=list)

    def to_json(self, path: str | Path | None = None) -> str:
        text = json.dumps(asdict(self), indent=2)
        if path is not None:
            Path(path).write_text(text)
        return text

    @staticmethod
    def from_json(path: str | Path) -> "EvalReport":
        return EvalReport(**json.loads(Path(path).read_text()))


def segmentation_iou(pred_masks: list[np.ndarray], gt_masks: list[np.ndarray],
                     n_classes: int) -> float:
    """Mean over classes of dataset-aggregated intersection over union.

    Classes absent from both prediction and ground truth are skipped.
    """
    inter = np.zeros(n_classes, dtype=np.int64)
    union = np.zeros(n_classes, dtype=np.int64)
    for pred, gt in zip(pred_masks, gt_masks):
        for c in range(n_classes):
            p = pred == c
            g = gt == c
            inter[c] += np.logical_and(p, g).sum()
            union[c] += np.logical_or(p, g).sum()
    present = union > 0
    if not present.any():
        return 0.0
    return float((inter[present] / union[present]).mean())


def evaluate(model: GraspNetwork, dataset: list[SceneSample],
             score_threshold: float | None = None) -> EvalReport:
    """Run the full predict path over a dataset and aggregate metrics.

    Throughput counts forward-pass wall time only, single stream, after a
    one-image warmup; it is excluded from any determinism expectations.
    """
    if not dataset:
        raise ValueError("empty evaluation dataset")
    model.predict(dataset[0].image, score_threshold)  # warmup

    per_image = []
    pred_masks, gt_masks = [], []
    n_top_correct = 0
    n_candidates = 0
    n_candidates_correct = 0
    elapsed = 0.0
    for i, sample in enumerate(dataset):
        t0 = time.perf_counter()
        pred = model.predict(sample.image, score_threshold)
        elapsed += time.perf_counter() - t0
        gts = sample.feasible_grasps
        flags = [jaccard_correct(g, gts) for g, _ in pred.candidates]
        top1 = bool(flags and flags[0])
        n_top_correct += top1
        n_candidates += len(flags)
        n_candidates_correct += sum(flags)
        pred_masks.append(pred.class_map)
        gt_masks.append(sample.semantic_mask)
        per_image.append(
            {
                "index": i,
                "name": sample.name,
                "top1_correct": top1,
                "candidates": [
                    [g.x, g.y, g.w, g.h, g.theta, s, bool(ok)]
                    for (g, s), ok in zip(pred.candidates, flags)
                ],
            }
        )

    s_classes = model.config.s_classes
    return EvalReport(
        grasp_accuracy=n_top_correct / len(dataset),
        seg_iou=segmentation_iou(pred_masks, gt_masks, s_classes),
        images_per_sec=len(dataset) / max(elapsed, 1e-9),
        candidate_precision=(n_candidates_correct / n_candidates) if n_candidates else 0.0,
        per_image=per_image,
    )


def render_overlay(
    image: np.ndarray,
    candidates: list[GraspCandidate],
    correct: list[bool] | None,
    path: str | Path,
) -> np.ndarray:
    """Draw grasp rectangles onto an image and save it as PNG.

    Jaw edges (the pair crossed by the opening axis) are drawn thick and
    colored: blue for correct grasps, green highlight for failures. The
    other two edges stay thin and dark. No candidates leaves the image
    untouched.
    """
    if correct is None:
        correct = [True] * len(candidates)
    if len(correct) != len(candidates):
        raise ValueError("one correctness flag per candidate required")
    img = Image.fromarray(np.asarray(image)).convert("RGB")
    draw = ImageDraw.Draw(img)
    for g, ok in zip(candidates, correct):
        pts = [tuple(p) for p in corners(g)]
        jaw_color = (40, 90, 220) if ok else (40, 200, 60)
        # corners order: (-w,-h), (w,-h), (w,h), (-w,h) halves; jaws sit at
        # +-w/2, i.e. edges 1-2 and 3-0.
        draw.line([pts[1], pts[2]], fill=jaw_color, width=3)
        draw.line([pts[3], pts[0]], fill=jaw_color, width=3)
        draw.line([pts[0], pts[1]], fill=(30, 30, 30), width=1)
        draw.line([pts[2], pts[3]], fill=(30, 30, 30), width=1)
    out = np.asarray(img)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    img.save(path)
    return out


def dump_predictions(records: list[tuple[str, GraspCandidate, float]],
                     path: str | Path) -> None:
    """Write one line per candidate: image_id cx cy w h theta_deg score."""
    lines = [
        f"{image_id} {g.x:.3f} {g.y:.3f} {g.w:.3f} {g.h:.3f} {g.theta:.3f} {score:.4f}"
        for image_id, g, score in records
    ]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))
