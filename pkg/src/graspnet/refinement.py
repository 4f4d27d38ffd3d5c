"""Grasp refinement: fuse candidates with the feasibility map.

For each candidate the full feasibility map and a crop-masked copy (zero
outside the candidate's expanded envelope) are stacked into a 2-channel
input at a fixed working resolution. A compact residual network maps the
whole batch (N, 2, H', W') to five correction factors per candidate:
center shifts in box units, log scales, and an angle offset measured in
orientation-bin widths.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from graspnet.blocks import BasicBlock, Bottleneck, ConvNormAct, make_stage
from graspnet.geometry import (
    GraspCandidate,
    OrientationBinning,
    enclosing_aabb,
    normalize_angle,
)

__all__ = [
    "RefinementConfig",
    "crop_mask",
    "build_stack",
    "RefinementNet",
    "apply_refinement",
    "encode_refinement_targets",
]


@dataclass(frozen=True)
class RefinementConfig:
    working_size: int = 96
    margin: float = 1.2
    preset: str = "tiny"

    def __post_init__(self):
        if self.preset not in ("tiny", "resnet101"):
            raise ValueError(f"unknown refinement preset {self.preset!r}")


def crop_mask(feasibility: torch.Tensor, g: GraspCandidate, margin: float = 1.2) -> torch.Tensor:
    """Zero the map outside the candidate's envelope scaled by ``margin``.

    Values inside are copied unchanged; a box falling entirely outside the
    map yields an all-zero result (degenerate candidate, not an error).
    """
    h, w = feasibility.shape[-2:]
    box = enclosing_aabb(g)
    x1 = max(int(math.floor(box.x - 0.5 * margin * box.w)), 0)
    y1 = max(int(math.floor(box.y - 0.5 * margin * box.h)), 0)
    x2 = min(int(math.ceil(box.x + 0.5 * margin * box.w)), w)
    y2 = min(int(math.ceil(box.y + 0.5 * margin * box.h)), h)
    out = torch.zeros_like(feasibility)
    if x1 < x2 and y1 < y2:
        out[..., y1:y2, x1:x2] = feasibility[..., y1:y2, x1:x2]
    return out


def build_stack(
    feasibility: torch.Tensor,
    candidates: list[GraspCandidate],
    config: RefinementConfig = RefinementConfig(),
) -> torch.Tensor:
    """Per-candidate 2-channel stacks at working resolution: (N, 2, H', W').

    Channel 0 is the downsampled feasibility map (identical across
    candidates); channel 1 is the same map crop-masked to the candidate.
    """
    size = config.working_size
    h, w = feasibility.shape[-2:]
    small = F.interpolate(
        feasibility.reshape(1, 1, h, w), size=(size, size), mode="bilinear", align_corners=False
    )[0, 0]
    if not candidates:
        return torch.zeros(0, 2, size, size, dtype=feasibility.dtype, device=feasibility.device)
    sx, sy = size / w, size / h
    rows = []
    for g in candidates:
        scaled = GraspCandidate(g.x * sx, g.y * sy, max(g.w * sx, 1e-3), max(g.h * sy, 1e-3), g.theta)
        rows.append(torch.stack([small, crop_mask(small, scaled, config.margin)]))
    return torch.stack(rows)


class RefinementNet(nn.Module):
    """Residual trunk over the 2-channel stack, five outputs per candidate."""

    def __init__(self, config: RefinementConfig = RefinementConfig()):
        super().__init__()
        self.config = config
        if config.preset == "resnet101":
            block, counts, widths, stem = Bottleneck, (3, 4, 23, 3), (64, 128, 256, 512), 64
        else:
            block, counts, widths, stem = BasicBlock, (1, 1, 1, 1), (16, 32, 48, 64), 16
        self.stem = nn.Sequential(
            ConvNormAct(2, stem, kernel_size=7, stride=2),
            nn.MaxPool2d(3, stride=2, padding=1),
        )
        stages = []
        in_ch = stem
        for i, (n, wdt) in enumerate(zip(counts, widths)):
            stages.append(make_stage(block, in_ch, wdt, n, stride=1 if i == 0 else 2))
            in_ch = wdt * block.expansion
        self.stages = nn.Sequential(*stages)
        self.head = nn.Linear(in_ch, 5)

    def forward(self, stack: torch.Tensor) -> torch.Tensor:
        """(N, 2, H', W') -> correction factors (N, 5)."""
        if stack.shape[0] == 0:
            return torch.zeros(0, 5, dtype=stack.dtype, device=stack.device)
        x = self.stages(self.stem(stack))
        return self.head(x.mean(dim=(2, 3)))


def apply_refinement(
    g: GraspCandidate,
    factors,
    binning: OrientationBinning = OrientationBinning(),
) -> GraspCandidate:
    """Shift-and-scale a candidate by five correction factors.

    Zero factors return the candidate unchanged; the angle moves by
    ``t_theta`` bin widths and is renormalized to [0, 180).
    """
    t_x, t_y, t_w, t_h, t_theta = (float(v) for v in factors)
    return GraspCandidate(
        x=g.x + t_x * g.w,
        y=g.y + t_y * g.h,
        w=g.w * math.exp(t_w),
        h=g.h * math.exp(t_h),
        theta=normalize_angle(g.theta + t_theta * binning.bin_width),
    )


def encode_refinement_targets(
    g: GraspCandidate,
    gt: GraspCandidate,
    binning: OrientationBinning = OrientationBinning(),
) -> np.ndarray:
    """Factors that :func:`apply_refinement` needs to move ``g`` onto ``gt``."""
    d_theta = math.fmod(gt.theta - g.theta + 90.0, 180.0)
    if d_theta < 0:
        d_theta += 180.0
    d_theta -= 90.0  # wrapped to (-90, 90]
    return np.array([
        (gt.x - g.x) / g.w,
        (gt.y - g.y) / g.h,
        math.log(gt.w / g.w),
        math.log(gt.h / g.h),
        d_theta / binning.bin_width,
    ])
