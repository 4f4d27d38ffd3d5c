"""Semantic segmentation branch with per-level context modules.

Each pyramid level runs through its own small context module (parallel
3x3 convs at dilations 1 and 6 plus a global-pool branch), the results
are upsampled to quarter resolution, concatenated, and classified per
pixel. The per-pixel class distribution also yields a feasibility
channel: the total probability mass on graspable object classes, which
feeds the refinement head.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from graspnet.backbone import FeaturePyramid
from graspnet.blocks import ConvNormAct

__all__ = ["SegConfig", "MiniContextModule", "SegmentationBranch", "SemanticProbabilityMap"]


@dataclass(frozen=True)
class SegConfig:
    """Class layout: 0 background, 1 infeasible object, >= 2 graspable classes."""

    s_classes: int = 5
    feasible_ids: tuple[int, ...] = ()
    context_width: int = 32

    def __post_init__(self):
        if self.s_classes < 3:
            raise ValueError("need background, infeasible, and at least one object class")
        if not self.feasible_ids:
            object.__setattr__(self, "feasible_ids", tuple(range(2, self.s_classes)))
        if any(i < 2 or i >= self.s_classes for i in self.feasible_ids):
            raise ValueError(f"feasible ids must lie in [2, {self.s_classes}), got {self.feasible_ids}")


class MiniContextModule(nn.Module):
    """Local + dilated + global context over one pyramid level.

    Three parallel branches: 3x3 conv, 3x3 conv at dilation 6, and global
    average pooling -> 1x1 conv broadcast back over the map. Concatenated
    and mixed by a 1x1 conv to the module width.
    """

    def __init__(self, in_channels: int, width: int):
        super().__init__()
        self.local_branch = ConvNormAct(in_channels, width, 3)
        self.dilated_branch = ConvNormAct(in_channels, width, 3, dilation=6)
        self.global_branch = ConvNormAct(in_channels, width, 1)
        self.mix = ConvNormAct(3 * width, width, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        pooled = x.mean(dim=(2, 3), keepdim=True)
        g = self.global_branch(pooled).expand(-1, -1, x.shape[2], x.shape[3])
        out = torch.cat([self.local_branch(x), self.dilated_branch(x), g], dim=1)
        return self.mix(out)


class SegmentationBranch(nn.Module):
    """Fused per-pixel classification over all pyramid levels."""

    def __init__(self, in_channels: int, config: SegConfig):
        super().__init__()
        self.config = config
        w = config.context_width
        self.context = nn.ModuleList(MiniContextModule(in_channels, w) for _ in range(4))
        self.classify = nn.Conv2d(4 * w, config.s_classes, 1)

    def forward(self, pyramid: FeaturePyramid) -> torch.Tensor:
        """Class logits at quarter resolution: (B, S, H/4, W/4)."""
        target = pyramid.p2.shape[2:]
        maps = []
        for module, (_, feat) in zip(self.context, sorted(pyramid.levels.items())):
            m = module(feat)
            if m.shape[2:] != target:
                m = F.interpolate(m, size=target, mode="bilinear", align_corners=False)
            maps.append(m)
        return self.classify(torch.cat(maps, dim=1))


@dataclass
class SemanticProbabilityMap:
    """Full-resolution per-pixel class distribution plus feasibility channel.

    ``probs`` is (B, S, H, W) with each pixel summing to 1; ``feasibility``
    is the exact sum of the graspable classes' probabilities.
    """

    probs: torch.Tensor
    feasibility: torch.Tensor = field(init=False)
    feasible_ids: tuple[int, ...] = (2, 3, 4)

    def __post_init__(self):
        self.feasibility = self.probs[:, list(self.feasible_ids)].sum(dim=1)

    @classmethod
    def from_logits(
        cls, logits: torch.Tensor, image_size: tuple[int, int], config: SegConfig
    ) -> "SemanticProbabilityMap":
        """Upsample quarter-resolution logits to the image and take a softmax."""
        up = F.interpolate(logits, size=image_size, mode="bilinear", align_corners=False)
        return cls(probs=F.softmax(up, dim=1), feasible_ids=config.feasible_ids)

    @property
    def class_map(self) -> torch.Tensor:
        return self.probs.argmax(dim=1)
