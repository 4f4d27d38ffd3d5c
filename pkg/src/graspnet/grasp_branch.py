"""Region proposal network and grasp detection head.

The RPN slides a small conv head over every pyramid level, scoring
axis-aligned anchors and regressing them toward object envelopes. Kept
proposals are pooled to 14x14 region features, average-pooled to 7x7,
and classified by the grasp head into one of ``n_classes`` orientation
bins plus a null class, alongside class-specific box corrections.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from torchvision.ops import nms as aabb_nms
from torchvision.ops import roi_align

from graspnet.backbone import FeaturePyramid
from graspnet.blocks import LEAKY_SLOPE, LinearNormAct
from graspnet.geometry import (
    CorrectionFactors,
    GraspCandidate,
    OrientationBinning,
    RegionProposal,
    decode_candidate,
    nms_rotated,
)

__all__ = [
    "AnchorConfig",
    "generate_anchors",
    "RPNHead",
    "generate_proposals",
    "assign_rpn_targets",
    "sample_balanced",
    "roi_pool",
    "GraspHead",
    "select_and_decode",
    "aabb_iou_matrix",
    "encode_boxes",
    "decode_boxes",
]


@dataclass(frozen=True)
class AnchorConfig:
    """Anchor grid and proposal selection knobs (two-stage detector defaults)."""

    base_sizes: tuple[float, float, float, float] = (16.0, 32.0, 64.0, 128.0)
    aspect_ratios: tuple[float, ...] = (0.5, 1.0, 2.0)
    positive_iou: float = 0.7
    negative_iou: float = 0.3
    nms_iou: float = 0.7
    pre_nms_top_n: int = 1000
    post_nms_top_n: int = 100

    def __post_init__(self):
        for t in (self.positive_iou, self.negative_iou, self.nms_iou):
            if not (0.0 < t < 1.0):
                raise ValueError(f"IoU thresholds must lie in (0, 1), got {t}")
        if self.positive_iou <= self.negative_iou:
            raise ValueError("positive threshold must exceed negative threshold")

    @property
    def anchors_per_cell(self) -> int:
        return len(self.aspect_ratios)


# Boxes travel as (cx, cy, w, h) float arrays throughout this module.

def encode_boxes(gt: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Vectorized regression targets: center shifts over extents, log scales."""
    out = np.empty_like(gt, dtype=np.float64)
    out[:, 0] = (gt[:, 0] - ref[:, 0]) / ref[:, 2]
    out[:, 1] = (gt[:, 1] - ref[:, 1]) / ref[:, 3]
    out[:, 2] = np.log(gt[:, 2] / ref[:, 2])
    out[:, 3] = np.log(gt[:, 3] / ref[:, 3])
    return out


def decode_boxes(deltas: np.ndarray, ref: np.ndarray, max_log_scale: float = 4.0) -> np.ndarray:
    """Inverse of :func:`encode_boxes`; log scales clamped against blowup."""
    out = np.empty_like(deltas, dtype=np.float64)
    out[:, 0] = ref[:, 0] + deltas[:, 0] * ref[:, 2]
    out[:, 1] = ref[:, 1] + deltas[:, 1] * ref[:, 3]
    out[:, 2] = ref[:, 2] * np.exp(np.clip(deltas[:, 2], -max_log_scale, max_log_scale))
    out[:, 3] = ref[:, 3] * np.exp(np.clip(deltas[:, 3], -max_log_scale, max_log_scale))
    return out


def _cxcywh_to_xyxy(boxes: np.ndarray) -> np.ndarray:
    out = np.empty_like(boxes)
    out[:, 0] = boxes[:, 0] - 0.5 * boxes[:, 2]
    out[:, 1] = boxes[:, 1] - 0.5 * boxes[:, 3]
    out[:, 2] = boxes[:, 0] + 0.5 * boxes[:, 2]
    out[:, 3] = boxes[:, 1] + 0.5 * boxes[:, 3]
    return out


def aabb_iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU of (cx, cy, w, h) box arrays, shape (len(a), len(b))."""
    if len(a) == 0 or len(b) == 0:
        return np.zeros((len(a), len(b)))
    ax = _cxcywh_to_xyxy(a)
    bx = _cxcywh_to_xyxy(b)
    lt = np.maximum(ax[:, None, :2], bx[None, :, :2])
    rb = np.minimum(ax[:, None, 2:], bx[None, :, 2:])
    wh = np.clip(rb - lt, 0, None)
    inter = wh[:, :, 0] * wh[:, :, 1]
    area_a = a[:, 2] * a[:, 3]
    area_b = b[:, 2] * b[:, 3]
    union = area_a[:, None] + area_b[None, :] - inter
    return inter / np.maximum(union, 1e-12)


def generate_anchors(
    feature_sizes: dict[int, tuple[int, int]], config: AnchorConfig
) -> dict[int, np.ndarray]:
    """Per-level anchor grids as (N, 4) cxcywh arrays.

    Anchors sit at cell centers; each aspect ratio r yields extents
    (base / sqrt(r), base * sqrt(r)) so the area is preserved.
    """
    strides = {2: 4, 3: 8, 4: 16, 5: 32}
    out = {}
    for level, (fh, fw) in feature_sizes.items():
        stride = strides[level]
        base = config.base_sizes[level - 2]
        shapes = np.array(
            [(base / math.sqrt(r), base * math.sqrt(r)) for r in config.aspect_ratios]
        )
        ys, xs = np.mgrid[0:fh, 0:fw]
        centers = np.stack([(xs + 0.5) * stride, (ys + 0.5) * stride], axis=-1).reshape(-1, 2)
        anchors = np.concatenate(
            [
                np.repeat(centers, len(shapes), axis=0),
                np.tile(shapes, (len(centers), 1)),
            ],
            axis=1,
        )
        out[level] = anchors
    return out


class RPNHead(nn.Module):
    """Shared 3x3 conv trunk with objectness and box-delta outputs per level."""

    def __init__(self, in_channels: int, anchors_per_cell: int):
        super().__init__()
        self.trunk = nn.Sequential(
            nn.Conv2d(in_channels, in_channels, 3, padding=1),
            nn.LeakyReLU(LEAKY_SLOPE, inplace=True),
        )
        self.objectness = nn.Conv2d(in_channels, anchors_per_cell, 1)
        self.deltas = nn.Conv2d(in_channels, 4 * anchors_per_cell, 1)

    def forward(self, pyramid: FeaturePyramid) -> dict[int, tuple[torch.Tensor, torch.Tensor]]:
        """Per level: objectness logits (B, A, H, W) and deltas (B, 4A, H, W)."""
        out = {}
        for level, feat in pyramid.levels.items():
            t = self.trunk(feat)
            out[level] = (self.objectness(t), self.deltas(t))
        return out


def _flatten_rpn_outputs(
    rpn_out: dict[int, tuple[torch.Tensor, torch.Tensor]], batch_index: int
) -> tuple[np.ndarray, np.ndarray]:
    """Concatenate per-level maps into flat (N,) scores and (N, 4) deltas
    matching :func:`generate_anchors` ordering (row-major cells, ratios inner)."""
    scores, deltas = [], []
    for level in sorted(rpn_out):
        obj, reg = rpn_out[level]
        a = obj.shape[1]
        s = obj[batch_index].detach().cpu().numpy()  # (A, H, W)
        d = reg[batch_index].detach().cpu().numpy().reshape(a, 4, *reg.shape[2:])
        scores.append(s.transpose(1, 2, 0).reshape(-1))
        deltas.append(d.transpose(2, 3, 0, 1).reshape(-1, 4))
    return np.concatenate(scores), np.concatenate(deltas)


def generate_proposals(
    rpn_out: dict[int, tuple[torch.Tensor, torch.Tensor]],
    anchors: dict[int, np.ndarray],
    image_size: tuple[int, int],
    config: AnchorConfig,
    batch_index: int = 0,
) -> list[RegionProposal]:
    """Decode, clip, and NMS-filter RPN output into scored proposals.

    Returns at most ``post_nms_top_n`` proposals sorted by descending
    objectness.
    """
    h, w = image_size
    logits, deltas = _flatten_rpn_outputs(rpn_out, batch_index)
    flat_anchors = np.concatenate([anchors[lvl] for lvl in sorted(anchors)])

    if len(logits) > config.pre_nms_top_n:
        keep = np.argpartition(-logits, config.pre_nms_top_n)[: config.pre_nms_top_n]
        logits, deltas, flat_anchors = logits[keep], deltas[keep], flat_anchors[keep]

    boxes = decode_boxes(deltas, flat_anchors)
    xyxy = _cxcywh_to_xyxy(boxes)
    xyxy[:, 0::2] = np.clip(xyxy[:, 0::2], 0, w)
    xyxy[:, 1::2] = np.clip(xyxy[:, 1::2], 0, h)
    wh = xyxy[:, 2:] - xyxy[:, :2]
    valid = (wh > 1.0).all(axis=1)
    xyxy, logits = xyxy[valid], logits[valid]
    if len(xyxy) == 0:
        return []

    keep = aabb_nms(
        torch.from_numpy(xyxy),
        torch.from_numpy(logits.astype(xyxy.dtype)),
        config.nms_iou,
    ).numpy()[: config.post_nms_top_n]
    scores = 1.0 / (1.0 + np.exp(-logits[keep]))
    out = []
    for (x1, y1, x2, y2), s in zip(xyxy[keep], scores):
        out.append(
            RegionProposal(
                x=0.5 * (x1 + x2),
                y=0.5 * (y1 + y2),
                w=x2 - x1,
                h=y2 - y1,
                score=float(s),
            )
        )
    return out


def assign_rpn_targets(
    anchors: np.ndarray,
    gt_aabbs: list[RegionProposal],
    config: AnchorConfig = AnchorConfig(),
) -> tuple[np.ndarray, np.ndarray]:
    """Label anchors {1 positive, 0 negative, -1 ignore} and build targets.

    Positive: IoU >= positive threshold with some envelope, or best anchor
    for an envelope. Negative: max IoU below the negative threshold.
    Targets regress each positive anchor onto its best-matching envelope.
    """
    n = len(anchors)
    labels = np.full(n, -1, dtype=np.int8)
    targets = np.zeros((n, 4), dtype=np.float64)
    if not gt_aabbs:
        labels[:] = 0
        return labels, targets
    gt = np.array([[g.x, g.y, g.w, g.h] for g in gt_aabbs])
    iou = aabb_iou_matrix(anchors, gt)
    best_gt = iou.argmax(axis=1)
    best_iou = iou[np.arange(n), best_gt]
    labels[best_iou < config.negative_iou] = 0
    labels[best_iou >= config.positive_iou] = 1
    labels[iou.argmax(axis=0)] = 1  # each envelope claims its best anchor
    pos = labels == 1
    targets[pos] = encode_boxes(gt[best_gt[pos]], anchors[pos])
    return labels, targets


def sample_balanced(
    labels: np.ndarray, batch: int, pos_fraction: float, rng: np.random.Generator
) -> np.ndarray:
    """Sample up to ``batch`` indices with at most ``pos_fraction`` positives."""
    pos = np.flatnonzero(labels == 1)
    neg = np.flatnonzero(labels == 0)
    n_pos = min(len(pos), int(batch * pos_fraction))
    if len(pos) > n_pos:
        pos = rng.choice(pos, n_pos, replace=False)
    n_neg = min(len(neg), batch - len(pos))
    if len(neg) > n_neg:
        neg = rng.choice(neg, n_neg, replace=False)
    return np.concatenate([pos, neg]).astype(np.int64)


def _pyramid_level_for(boxes: np.ndarray) -> np.ndarray:
    """Standard size heuristic: level = 4 + log2(sqrt(area) / 224), clamped to [2, 5]."""
    scale = np.sqrt(boxes[:, 2] * boxes[:, 3])
    levels = np.floor(4 + np.log2(np.maximum(scale, 1e-6) / 224.0))
    return np.clip(levels, 2, 5).astype(np.int64)


def roi_pool(
    pyramid: FeaturePyramid,
    proposals: list[RegionProposal],
    output_size: int = 14,
    batch_index: int = 0,
) -> torch.Tensor:
    """Pool one 14x14 region feature block per proposal.

    Bilinear sampling with 2x2 samples per output cell from the pyramid
    level selected by the size heuristic. Returns (N, C, 14, 14); N = 0
    yields an empty block with the right trailing shape.
    """
    c = pyramid.channels
    if not proposals:
        return torch.zeros(0, c, output_size, output_size, device=pyramid.p2.device)
    boxes = np.array([[p.x, p.y, p.w, p.h] for p in proposals])
    levels = _pyramid_level_for(boxes)
    xyxy = torch.from_numpy(_cxcywh_to_xyxy(boxes)).to(pyramid.p2.dtype)
    idx = torch.full((len(proposals), 1), float(batch_index), dtype=pyramid.p2.dtype)
    rois = torch.cat([idx, xyxy], dim=1)
    pooled_chunks, order = [], []
    for level, feat in pyramid.levels.items():
        sel = np.flatnonzero(levels == level)
        if len(sel) == 0:
            continue
        pooled_chunks.append(
            roi_align(
                feat,
                rois[sel].to(feat.device),
                output_size=output_size,
                spatial_scale=1.0 / pyramid.strides[level],
                sampling_ratio=2,
                aligned=True,
            )
        )
        order.append(sel)
    inverse = np.argsort(np.concatenate(order))
    return torch.cat(pooled_chunks)[torch.from_numpy(inverse)]


class GraspHead(nn.Module):
    """Orientation classification and class-specific rectangle regression.

    Region features are average-pooled (kernel 2) to 7x7, flattened, pushed
    through two fc+norm+leaky layers, then split into an orientation
    sub-network (n_classes + 1 softmax scores, last index = invalid) and a
    rectangle sub-network (4 corrections per orientation class).
    """

    def __init__(self, in_channels: int, n_classes: int = 18, width: int = 1024,
                 pooled_size: int = 14):
        super().__init__()
        self.n_classes = n_classes
        flat = in_channels * (pooled_size // 2) ** 2
        self.pool = nn.AvgPool2d(2)
        self.trunk = nn.Sequential(
            nn.Flatten(),
            LinearNormAct(flat, width),
            LinearNormAct(width, width),
        )
        self.orientation = nn.Sequential(
            LinearNormAct(width, width), nn.Linear(width, n_classes + 1)
        )
        self.rectangle = nn.Sequential(
            LinearNormAct(width, width), nn.Linear(width, 4 * n_classes)
        )

    def forward(self, region_features: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Returns softmax orientation scores (N, C+1) and corrections (N, 4C)."""
        if region_features.shape[0] == 0:
            dev = region_features.device
            return (
                torch.zeros(0, self.n_classes + 1, device=dev),
                torch.zeros(0, 4 * self.n_classes, device=dev),
            )
        t = self.trunk(self.pool(region_features))
        return F.softmax(self.orientation(t), dim=1), self.rectangle(t)


def select_and_decode(
    proposals: list[RegionProposal],
    scores: torch.Tensor,
    corrections: torch.Tensor,
    score_threshold: float = 0.5,
    binning: OrientationBinning = OrientationBinning(),
    nms_iou: float = 0.5,
) -> list[tuple[GraspCandidate, float]]:
    """Turn head outputs into final scored grasp candidates.

    Per proposal: argmax over orientation classes incl. the invalid class;
    keep only confident real classes; decode the class-specific correction
    quadruple; finish with rotated NMS.
    """
    scores_np = scores.detach().cpu().numpy()
    corr_np = corrections.detach().cpu().numpy()
    cands: list[GraspCandidate] = []
    confs: list[float] = []
    for i, prop in enumerate(proposals):
        c = int(scores_np[i].argmax())
        conf = float(scores_np[i, c])
        if c == binning.null_class or conf < score_threshold:
            continue
        q = corr_np[i, 4 * c : 4 * c + 4]
        f = CorrectionFactors(float(q[0]), float(q[1]), float(q[2]), float(q[3]))
        cands.append(decode_candidate(prop, f, c, binning))
        confs.append(conf)
    keep = nms_rotated(cands, confs, nms_iou)
    return [(cands[i], confs[i]) for i in keep]
