"""Task losses and their weighted sum.

Grasp detection loss = RPN loss + box regression + orientation
classification; segmentation uses pixel-wise hard negative mining over
the worst-predicted quarter of pixels; refinement regresses the five
correction factors of candidates matched to ground truth. The total is a
weighted sum of the three task losses.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from graspnet.geometry import GraspCandidate, OrientationBinning, rotated_iou
from graspnet.refinement import encode_refinement_targets

__all__ = [
    "LossWeights",
    "LossParts",
    "loss_rot",
    "loss_box",
    "loss_rpn",
    "hard_negative_weights",
    "loss_seg",
    "loss_refine",
    "total_loss",
]

_LOG_EPS = 1e-12


@dataclass(frozen=True)
class LossWeights:
    grasp: float = 1.0
    seg: float = 1.0
    refine: float = 1.0

    def __post_init__(self):
        if min(self.grasp, self.seg, self.refine) < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass
class LossParts:
    rpn: torch.Tensor
    box: torch.Tensor
    rot: torch.Tensor
    seg: torch.Tensor
    refine: torch.Tensor

    def detach_floats(self) -> dict[str, float]:
        return {k: float(getattr(self, k).detach()) for k in ("rpn", "box", "rot", "seg", "refine")}


def _zero_like(t: torch.Tensor) -> torch.Tensor:
    return torch.zeros((), dtype=t.dtype if t.is_floating_point() else torch.float32,
                       device=t.device)


def loss_rot(scores: torch.Tensor, valid: torch.Tensor, gt_classes: torch.Tensor,
             null_class: int) -> torch.Tensor:
    """Orientation classification over sampled proposals.

    ``scores`` are softmax probabilities (N, C+1); valid proposals are
    scored on their ground-truth class, invalid ones on the null class.
    Mean negative log likelihood over all N; zero when N = 0.
    """
    n = scores.shape[0]
    if n == 0:
        return _zero_like(scores)
    target = torch.where(valid, gt_classes, torch.full_like(gt_classes, null_class))
    picked = scores[torch.arange(n, device=scores.device), target]
    return -torch.log(picked.clamp_min(_LOG_EPS)).mean()


def loss_box(corrections: torch.Tensor, gt_classes: torch.Tensor,
             targets: torch.Tensor) -> torch.Tensor:
    """Smooth-L1 between the ground-truth class's correction quadruple and
    its target, summed over the four box components, averaged over the
    given (valid) proposals. Zero when none are given.
    """
    n = corrections.shape[0]
    if n == 0:
        return _zero_like(corrections)
    quads = corrections.reshape(n, -1, 4)[torch.arange(n, device=corrections.device), gt_classes]
    per = F.smooth_l1_loss(quads, targets, beta=1.0, reduction="none").sum(dim=1)
    return per.mean()


def loss_rpn(objectness_logits: torch.Tensor, labels: torch.Tensor,
             deltas: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Binary cross-entropy on sampled anchors plus smooth-L1 on positives.

    ``labels`` are {0, 1} for the sampled anchors only (ignored anchors are
    excluded upstream). The regression term is zero without positives.
    """
    if objectness_logits.shape[0] == 0:
        return _zero_like(objectness_logits)
    cls = F.binary_cross_entropy_with_logits(objectness_logits, labels.float())
    pos = labels > 0
    if pos.any():
        reg = F.smooth_l1_loss(deltas[pos], targets[pos], beta=1.0, reduction="none")
        reg = reg.sum(dim=1).mean()
    else:
        reg = _zero_like(objectness_logits)
    return cls + reg


def hard_negative_weights(p_true: torch.Tensor) -> torch.Tensor:
    """Pixel weights for hard negative mining.

    The floor(W*H/4) pixels with the lowest predicted likelihood of their
    true class get weight 4/(W*H); everything else 0. Boundary ties break
    in row-major pixel order.
    """
    h, w = p_true.shape
    k = (h * w) // 4
    flat = p_true.reshape(-1)
    order = torch.argsort(flat, stable=True)
    weights = torch.zeros_like(flat)
    weights[order[:k]] = 4.0 / (h * w)
    return weights.reshape(h, w)


def loss_seg(probs: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Hard-negative-mined cross entropy over full-resolution probabilities.

    Accepts (S, H, W) with an (H, W) mask, or batched (B, S, H, W) with a
    (B, H, W) mask (averaged over the batch).
    """
    if probs.ndim == 4:
        total = _zero_like(probs)
        for b in range(probs.shape[0]):
            total = total + loss_seg(probs[b], mask[b])
        return total / max(probs.shape[0], 1)
    p_true = probs.gather(0, mask.unsqueeze(0)).squeeze(0)
    weights = hard_negative_weights(p_true.detach())
    return -(weights * torch.log(p_true.clamp_min(_LOG_EPS))).sum()


def loss_refine(
    refined: torch.Tensor,
    candidates: list[GraspCandidate],
    gts: list[GraspCandidate],
    binning: OrientationBinning = OrientationBinning(),
    match_iou: float = 0.25,
) -> torch.Tensor:
    """Smooth-L1 over the five correction factors of matched candidates.

    Each candidate is matched to its best ground-truth grasp by rotated
    IoU; matches below the threshold contribute nothing. Averaged over
    matched candidates, zero when nothing matches.
    """
    if refined.shape[0] != len(candidates):
        raise ValueError("one refined row per candidate required")
    rows, targets = [], []
    for i, g in enumerate(candidates):
        if not gts:
            break
        ious = [rotated_iou(g, gt) for gt in gts]
        j = max(range(len(gts)), key=lambda k: ious[k])
        if ious[j] < match_iou:
            continue
        rows.append(i)
        targets.append(encode_refinement_targets(g, gts[j], binning))
    if not rows:
        return _zero_like(refined)
    pred = refined[rows]
    tgt = torch.as_tensor(np.stack(targets), dtype=refined.dtype, device=refined.device)
    per = F.smooth_l1_loss(pred, tgt.reshape(len(rows), 5), beta=1.0, reduction="none").sum(dim=1)
    return per.mean()


def total_loss(parts: LossParts, weights: LossWeights = LossWeights()) -> torch.Tensor:
    """Weighted sum: grasp * (rpn + box + rot) + seg + refine terms."""
    return (
        weights.grasp * (parts.rpn + parts.box + parts.rot)
        + weights.seg * parts.seg
        + weights.refine * parts.refine
    )
