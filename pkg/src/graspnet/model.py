"""The assembled grasp detection network.

One shared backbone feeds three consumers: the region-proposal +
grasp-head branch, the segmentation branch, and (through the semantic
probability map) the refinement head. The module owns both the training
loss computation and the inference path.

Training keeps the usual two-stage convention: proposal boxes, target
assignments, and sampled minibatches are treated as constants of the
step (no gradient flows through box coordinates). ``training_losses``
can return this frozen step plan and re-run against it, which makes the
loss a pure function of the parameters for finite-difference checks.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import torch
import torch.nn as nn

from graspnet.backbone import BackboneConfig, BackboneFPN, FeaturePyramid
from graspnet.data.samples import SceneSample, pad_to_multiple
from graspnet.geometry import (
    GraspCandidate,
    OrientationBinning,
    RegionProposal,
    enclosing_aabb,
    normalize_angle,
)
from graspnet.grasp_branch import (
    AnchorConfig,
    GraspHead,
    RPNHead,
    aabb_iou_matrix,
    assign_rpn_targets,
    encode_boxes,
    generate_anchors,
    generate_proposals,
    roi_pool,
    sample_balanced,
    select_and_decode,
)
from graspnet.losses import (
    LossParts,
    LossWeights,
    loss_box,
    loss_refine,
    loss_rot,
    loss_rpn,
    loss_seg,
    total_loss,
)
from graspnet.refinement import RefinementConfig, RefinementNet, apply_refinement, build_stack
from graspnet.segmentation import SegConfig, SegmentationBranch, SemanticProbabilityMap

__all__ = ["ModelConfig", "GraspNetwork", "Prediction", "StepPlan", "images_to_tensor"]


@dataclass(frozen=True)
class ModelConfig:
    """Flat, serializable description of the whole network."""

    preset: str = "tiny"
    n_orientation_classes: int = 18
    s_classes: int = 5
    head_width: int = 0  # 0 = preset default (tiny 256, resnet101 1024)
    seg_context_width: int = 0  # 0 = preset default (tiny 32, resnet101 128)
    frozen_stages: int = 0
    anchor_base_sizes: tuple[float, float, float, float] = (16.0, 32.0, 64.0, 128.0)
    proposals_kept: int = 100
    score_threshold: float = 0.5
    feasibility_gate: float = 0.25
    refine_working_size: int = 96
    refine_margin: float = 1.2
    head_batch: int = 128
    head_pos_fraction: float = 0.25
    head_valid_iou: float = 0.5
    rpn_batch: int = 256
    rpn_pos_fraction: float = 0.5

    def __post_init__(self):
        if self.preset not in ("tiny", "resnet101"):
            raise ValueError(f"unknown model preset {self.preset!r}")

    def resolved_head_width(self) -> int:
        return self.head_width or (1024 if self.preset == "resnet101" else 256)

    def resolved_context_width(self) -> int:
        return self.seg_context_width or (128 if self.preset == "resnet101" else 32)

    def anchor_config(self) -> AnchorConfig:
        return AnchorConfig(
            base_sizes=self.anchor_base_sizes, post_nms_top_n=self.proposals_kept
        )

    def seg_config(self) -> SegConfig:
        return SegConfig(s_classes=self.s_classes, context_width=self.resolved_context_width())

    def refine_config(self) -> RefinementConfig:
        return RefinementConfig(
            working_size=self.refine_working_size,
            margin=self.refine_margin,
            preset=self.preset,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        d = dict(d)
        d["anchor_base_sizes"] = tuple(d["anchor_base_sizes"])
        return ModelConfig(**d)


def images_to_tensor(images: list[np.ndarray] | np.ndarray, dtype=torch.float32) -> torch.Tensor:
    """Stack HxWx3 uint8 images into a centered Bx3xHxW float tensor."""
    arr = np.stack([np.asarray(im) for im in images]) if isinstance(images, list) else images[None] if images.ndim == 3 else images
    t = torch.from_numpy(np.ascontiguousarray(arr)).to(dtype)
    return t.permute(0, 3, 1, 2) / 255.0 - 0.5


@dataclass
class ImagePlan:
    """Frozen non-differentiable structure of one image's training step."""

    anchor_idx: np.ndarray
    anchor_labels: np.ndarray
    anchor_targets: np.ndarray
    proposals: list[RegionProposal]
    valid: np.ndarray
    classes: np.ndarray
    box_targets: np.ndarray
    refine_candidates: list[GraspCandidate]


@dataclass
class StepPlan:
    images: list[ImagePlan] = field(default_factory=list)


@dataclass
class Prediction:
    """Inference output for one image."""

    candidates: list[tuple[GraspCandidate, float]]  # refined, sorted by score
    raw_candidates: list[tuple[GraspCandidate, float]]  # pre-refinement survivors
    class_map: np.ndarray  # (H, W) argmax semantic classes
    feasibility: np.ndarray  # (H, W) graspable probability mass


class GraspNetwork(nn.Module):
    def __init__(self, config: ModelConfig = ModelConfig()):
        super().__init__()
        self.config = config
        self.binning = OrientationBinning(config.n_orientation_classes)
        self.anchor_cfg = config.anchor_config()
        backbone_cfg = BackboneConfig.from_preset(config.preset, config.frozen_stages)
        self.backbone = BackboneFPN(backbone_cfg)
        fpn_ch = backbone_cfg.fpn_channels
        self.rpn = RPNHead(fpn_ch, self.anchor_cfg.anchors_per_cell)
        self.head = GraspHead(
            fpn_ch, config.n_orientation_classes, config.resolved_head_width()
        )
        self.seg = SegmentationBranch(fpn_ch, config.seg_config())
        self.refine = RefinementNet(config.refine_config())
        self._anchor_cache: dict = {}

    # ---- shared helpers -------------------------------------------------

    def anchors_for(self, pyramid: FeaturePyramid) -> dict[int, np.ndarray]:
        key = tuple(tuple(t.shape[2:]) for t in pyramid.levels.values())
        if key not in self._anchor_cache:
            sizes = {lvl: tuple(t.shape[2:]) for lvl, t in pyramid.levels.items()}
            self._anchor_cache[key] = generate_anchors(sizes, self.anchor_cfg)
        return self._anchor_cache[key]

    def _flat_rpn_tensors(self, rpn_out, batch_index: int):
        """Grad-carrying (N,) logits and (N, 4) deltas in anchor order."""
        logits, deltas = [], []
        for level in sorted(rpn_out):
            obj, reg = rpn_out[level]
            a = obj.shape[1]
            h, w = obj.shape[2], obj.shape[3]
            logits.append(obj[batch_index].permute(1, 2, 0).reshape(-1))
            deltas.append(
                reg[batch_index].reshape(a, 4, h, w).permute(2, 3, 0, 1).reshape(-1, 4)
            )
        return torch.cat(logits), torch.cat(deltas)

    def probability_map(self, pyramid: FeaturePyramid, image_size) -> SemanticProbabilityMap:
        logits = self.seg(pyramid)
        return SemanticProbabilityMap.from_logits(logits, image_size, self.config.seg_config())

    # ---- training -------------------------------------------------------

    def _jittered_gt_proposals(self, gts: list[GraspCandidate], rng: np.random.Generator):
        """Envelope proposals around ground truth, exact and jittered."""
        out = []
        for g in gts:
            box = enclosing_aabb(g)
            out.append(box)
            for _ in range(2):
                out.append(
                    RegionProposal(
                        x=box.x + rng.uniform(-0.15, 0.15) * box.w,
                        y=box.y + rng.uniform(-0.15, 0.15) * box.h,
                        w=box.w * math.exp(rng.uniform(-0.25, 0.25)),
                        h=box.h * math.exp(rng.uniform(-0.25, 0.25)),
                    )
                )
        return out

    def _assign_head_targets(self, proposals, gts: list[GraspCandidate]):
        """Per proposal: valid flag, orientation class, box regression target."""
        n = len(proposals)
        valid = np.zeros(n, dtype=bool)
        classes = np.zeros(n, dtype=np.int64)
        targets = np.zeros((n, 4), dtype=np.float64)
        if n == 0 or not gts:
            return valid, classes, targets
        prop_boxes = np.array([[p.x, p.y, p.w, p.h] for p in proposals])
        gt_boxes = np.array(
            [[b.x, b.y, b.w, b.h] for b in (enclosing_aabb(g) for g in gts)]
        )
        iou = aabb_iou_matrix(prop_boxes, gt_boxes)
        best = iou.argmax(axis=1)
        best_iou = iou[np.arange(n), best]
        valid = best_iou >= self.config.head_valid_iou
        for i in np.flatnonzero(valid):
            g = gts[best[i]]
            classes[i] = self.binning.bin_of(g.theta)
            targets[i] = [
                (g.x - proposals[i].x) / proposals[i].w,
                (g.y - proposals[i].y) / proposals[i].h,
                math.log(g.w / proposals[i].w),
                math.log(g.h / proposals[i].h),
            ]
        return valid, classes, targets

    def _refinement_candidates(self, proposals, scores, corrections,
                               gts: list[GraspCandidate], rng: np.random.Generator):
        """Training inputs for the refinement head: current decoded candidates
        plus jittered copies of the ground truth for dense early signal."""
        decoded = select_and_decode(
            proposals, scores, corrections, score_threshold=0.2,
            binning=self.binning, nms_iou=0.5,
        )[:6]
        cands = [g for g, _ in decoded]
        for g in gts:
            for _ in range(2):
                cands.append(
                    GraspCandidate(
                        x=g.x + rng.uniform(-0.2, 0.2) * g.w,
                        y=g.y + rng.uniform(-0.2, 0.2) * g.h,
                        w=g.w * math.exp(rng.uniform(-0.2, 0.2)),
                        h=g.h * math.exp(rng.uniform(-0.2, 0.2)),
                        theta=normalize_angle(
                            g.theta + rng.uniform(-1.2, 1.2) * self.binning.bin_width
                        ),
                    )
                )
        return cands

    def training_losses(
        self,
        samples: list[SceneSample],
        rng: np.random.Generator | None = None,
        weights: LossWeights = LossWeights(),
        plan: StepPlan | None = None,
    ) -> tuple[torch.Tensor, LossParts, StepPlan]:
        """Compute the weighted loss over a batch of same-sized samples.

        When ``plan`` is given, its proposals / assignments / sampled
        indices are reused verbatim, making the result a deterministic
        function of the parameters alone.
        """
        rng = rng or np.random.default_rng(0)
        images = images_to_tensor([s.image for s in samples])
        dtype = next(self.parameters()).dtype
        images = images.to(dtype)
        pyramid = self.backbone(images)
        rpn_out = self.rpn(pyramid)
        h, w = images.shape[2], images.shape[3]
        prob_map = self.probability_map(pyramid, (h, w))

        anchors_per_level = self.anchors_for(pyramid)
        flat_anchors = np.concatenate([anchors_per_level[k] for k in sorted(anchors_per_level)])

        build_plan = plan is None
        if build_plan:
            plan = StepPlan()

        zero = images.new_zeros(())
        parts = LossParts(rpn=zero.clone(), box=zero.clone(), rot=zero.clone(),
                          seg=zero.clone(), refine=zero.clone())
        masks = torch.from_numpy(np.stack([s.semantic_mask for s in samples])).long()
        parts.seg = loss_seg(prob_map.probs, masks)

        n_img = len(samples)
        for i, sample in enumerate(samples):
            gts = sample.feasible_grasps
            logits_t, deltas_t = self._flat_rpn_tensors(rpn_out, i)

            if build_plan:
                gt_aabbs = [enclosing_aabb(g) for g in gts]
                labels, targets = assign_rpn_targets(flat_anchors, gt_aabbs, self.anchor_cfg)
                idx = sample_balanced(labels, self.config.rpn_batch,
                                      self.config.rpn_pos_fraction, rng)
                rpn_props = generate_proposals(
                    rpn_out, anchors_per_level, (h, w), self.anchor_cfg, batch_index=i
                )
                proposals = rpn_props[:40] + self._jittered_gt_proposals(gts, rng)
                valid, classes, box_targets = self._assign_head_targets(proposals, gts)
                head_labels = np.where(valid, 1, 0)
                head_idx = sample_balanced(head_labels, self.config.head_batch,
                                           self.config.head_pos_fraction, rng)
                if self.training and 0 < len(head_idx) < 2:
                    head_idx = np.repeat(head_idx, 2)[:2]
                proposals = [proposals[j] for j in head_idx]
                valid, classes, box_targets = (
                    valid[head_idx], classes[head_idx], box_targets[head_idx]
                )
                img_plan = ImagePlan(
                    anchor_idx=idx,
                    anchor_labels=labels[idx].astype(np.int64),
                    anchor_targets=targets[idx],
                    proposals=proposals,
                    valid=valid,
                    classes=classes,
                    box_targets=box_targets,
                    refine_candidates=[],
                )
                plan.images.append(img_plan)
            else:
                img_plan = plan.images[i]

            sel = torch.from_numpy(img_plan.anchor_idx)
            parts.rpn = parts.rpn + loss_rpn(
                logits_t[sel],
                torch.from_numpy(img_plan.anchor_labels),
                deltas_t[sel],
                torch.as_tensor(img_plan.anchor_targets, dtype=dtype),
            ) / n_img

            proposals = img_plan.proposals
            if proposals:
                pooled = roi_pool(pyramid, proposals, batch_index=i)
                scores, corrections = self.head(pooled)
                valid_t = torch.from_numpy(np.asarray(img_plan.valid))
                classes_t = torch.from_numpy(np.asarray(img_plan.classes))
                parts.rot = parts.rot + loss_rot(
                    scores, valid_t, classes_t, self.binning.null_class
                ) / n_img
                vsel = np.flatnonzero(img_plan.valid)
                if len(vsel):
                    parts.box = parts.box + loss_box(
                        corrections[torch.from_numpy(vsel)],
                        classes_t[torch.from_numpy(vsel)],
                        torch.as_tensor(img_plan.box_targets[vsel], dtype=dtype),
                    ) / n_img

                if build_plan:
                    img_plan.refine_candidates = self._refinement_candidates(
                        proposals, scores, corrections, gts, rng
                    )

            cands = img_plan.refine_candidates
            if cands and gts:
                stack = build_stack(prob_map.feasibility[i], cands, self.config.refine_config())
                refined = self.refine(stack)
                parts.refine = parts.refine + loss_refine(
                    refined, cands, gts, self.binning
                ) / n_img

        return total_loss(parts, weights), parts, plan

    # ---- inference ------------------------------------------------------

    @torch.no_grad()
    def predict(self, image: np.ndarray, score_threshold: float | None = None) -> Prediction:
        """Detect, gate by feasibility, and refine grasps on one RGB image."""
        was_training = self.training
        self.eval()
        try:
            h0, w0 = image.shape[:2]
            padded = pad_to_multiple(image, 32)
            images = images_to_tensor([padded]).to(next(self.parameters()).dtype)
            pyramid = self.backbone(images)
            rpn_out = self.rpn(pyramid)
            anchors = self.anchors_for(pyramid)
            proposals = generate_proposals(
                rpn_out, anchors, padded.shape[:2], self.anchor_cfg
            )
            prob_map = self.probability_map(pyramid, padded.shape[:2])
            feas_full = prob_map.feasibility[0][:h0, :w0]
            class_map = prob_map.class_map[0][:h0, :w0].cpu().numpy()

            raw: list[tuple[GraspCandidate, float]] = []
            if proposals:
                pooled = roi_pool(pyramid, proposals)
                scores, corrections = self.head(pooled)
                threshold = self.config.score_threshold if score_threshold is None else score_threshold
                raw = select_and_decode(
                    proposals, scores, corrections, threshold, self.binning, nms_iou=0.5
                )

            gated = [
                (g, s) for g, s in raw
                if self._mean_feasibility(feas_full, g) >= self.config.feasibility_gate
            ]
            refined: list[tuple[GraspCandidate, float]] = []
            if gated:
                stack = build_stack(
                    feas_full, [g for g, _ in gated], self.config.refine_config()
                )
                factors = self.refine(stack).cpu().numpy()
                for (g, s), f in zip(gated, factors):
                    refined.append((apply_refinement(g, f, self.binning), s))
            refined.sort(key=lambda t: -t[1])
            return Prediction(
                candidates=refined,
                raw_candidates=raw,
                class_map=class_map,
                feasibility=feas_full.cpu().numpy(),
            )
        finally:
            self.train(was_training)

    @staticmethod
    def _mean_feasibility(feasibility: torch.Tensor, g: GraspCandidate) -> float:
        h, w = feasibility.shape
        box = enclosing_aabb(g)
        x1 = min(max(int(box.x - 0.5 * box.w), 0), w - 1)
        y1 = min(max(int(box.y - 0.5 * box.h), 0), h - 1)
        x2 = min(max(int(math.ceil(box.x + 0.5 * box.w)), x1 + 1), w)
        y2 = min(max(int(math.ceil(box.y + 0.5 * box.h)), y1 + 1), h)
        return float(feasibility[y1:y2, x1:x2].mean())
