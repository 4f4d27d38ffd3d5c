"""Shared feature extractor: residual backbone plus feature pyramid.

Two presets: ``tiny`` (basic blocks, narrow widths, for desk-scale
training from scratch) and ``resnet101`` (bottleneck blocks, stage
counts 3-4-23-3). Stage outputs conv2..conv5 feed lateral 1x1
projections, a nearest-neighbor top-down pathway, and 3x3 smoothing
convs, producing levels P2..P5 at strides 4/8/16/32 with a common
channel count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from graspnet.blocks import LEAKY_SLOPE, BasicBlock, Bottleneck, make_stage

__all__ = [
    "BackboneConfig",
    "FeaturePyramid",
    "BackboneFPN",
    "build_backbone",
    "extract_features",
    "load_pretrained",
]

STRIDES = (4, 8, 16, 32)


@dataclass(frozen=True)
class BackboneConfig:
    stage_block_counts: tuple[int, int, int, int] = (2, 2, 2, 2)
    stage_widths: tuple[int, int, int, int] = (16, 32, 64, 128)
    frozen_stage_count: int = 0
    fpn_channels: int = 64
    bottleneck: bool = False
    stem_width: int = 16

    def __post_init__(self):
        if not (0 <= self.frozen_stage_count <= 4):
            raise ValueError(f"frozen_stage_count must lie in [0, 4], got {self.frozen_stage_count}")

    @staticmethod
    def tiny(frozen_stage_count: int = 0) -> "BackboneConfig":
        return BackboneConfig(frozen_stage_count=frozen_stage_count)

    @staticmethod
    def resnet101(frozen_stage_count: int = 2) -> "BackboneConfig":
        return BackboneConfig(
            stage_block_counts=(3, 4, 23, 3),
            stage_widths=(64, 128, 256, 512),
            frozen_stage_count=frozen_stage_count,
            fpn_channels=256,
            bottleneck=True,
            stem_width=64,
        )

    @staticmethod
    def from_preset(name: str, frozen_stage_count: int | None = None) -> "BackboneConfig":
        presets = {"tiny": BackboneConfig.tiny, "resnet101": BackboneConfig.resnet101}
        if name not in presets:
            raise ValueError(f"unknown backbone preset {name!r}; choose from {sorted(presets)}")
        cfg = presets[name]()
        if frozen_stage_count is not None:
            cfg = BackboneConfig(**{**cfg.__dict__, "frozen_stage_count": frozen_stage_count})
        return cfg


@dataclass
class FeaturePyramid:
    """Levels P2..P5 at strides 4/8/16/32 sharing one channel count."""

    p2: torch.Tensor
    p3: torch.Tensor
    p4: torch.Tensor
    p5: torch.Tensor

    def __post_init__(self):
        chans = {t.shape[1] for t in self.levels.values()}
        if len(chans) != 1:
            raise ValueError(f"pyramid levels disagree on channel count: {chans}")

    @property
    def levels(self) -> dict[int, torch.Tensor]:
        return {2: self.p2, 3: self.p3, 4: self.p4, 5: self.p5}

    @property
    def strides(self) -> dict[int, int]:
        return {2: 4, 3: 8, 4: 16, 5: 32}

    @property
    def channels(self) -> int:
        return self.p2.shape[1]

    @property
    def image_size(self) -> tuple[int, int]:
        return self.p2.shape[2] * 4, self.p2.shape[3] * 4


class BackboneFPN(nn.Module):
    """Residual stages conv1..conv5 with a feature pyramid on top.

    Stages ``conv1..conv<frozen_stage_count>`` are excluded from gradient
    updates and keep inference-mode normalization statistics even in
    training mode.
    """

    def __init__(self, config: BackboneConfig):
        super().__init__()
        self.config = config
        block = Bottleneck if config.bottleneck else BasicBlock
        w = config.stage_widths
        n = config.stage_block_counts

        self.conv1 = nn.Sequential(
            nn.Conv2d(3, config.stem_width, 7, stride=2, padding=3, bias=False),
            nn.BatchNorm2d(config.stem_width),
            nn.LeakyReLU(LEAKY_SLOPE, inplace=True),
            nn.MaxPool2d(3, stride=2, padding=1),
        )
        self.conv2 = make_stage(block, config.stem_width, w[0], n[0], stride=1)
        self.conv3 = make_stage(block, w[0] * block.expansion, w[1], n[1], stride=2)
        self.conv4 = make_stage(block, w[1] * block.expansion, w[2], n[2], stride=2)
        self.conv5 = make_stage(block, w[2] * block.expansion, w[3], n[3], stride=2)

        c = config.fpn_channels
        self.lateral = nn.ModuleList(
            [nn.Conv2d(w[i] * block.expansion, c, 1) for i in range(4)]
        )
        self.smooth = nn.ModuleList([nn.Conv2d(c, c, 3, padding=1) for _ in range(4)])

        self._freeze_stages()

    def _stage_modules(self):
        return [self.conv1, self.conv2, self.conv3, self.conv4, self.conv5]

    def _freeze_stages(self):
        for stage in self._stage_modules()[: self.config.frozen_stage_count]:
            for p in stage.parameters():
                p.requires_grad_(False)

    def train(self, mode: bool = True):
        super().train(mode)
        for stage in self._stage_modules()[: self.config.frozen_stage_count]:
            stage.eval()
        return self

    def forward(self, images: torch.Tensor) -> FeaturePyramid:
        if images.ndim != 4 or images.shape[1] != 3:
            raise ValueError(f"expected Bx3xHxW input, got {tuple(images.shape)}")
        h, w = images.shape[2], images.shape[3]
        if h % 32 or w % 32:
            raise ValueError(f"input dims must be divisible by 32, got {h}x{w} (pad upstream)")
        c1 = self.conv1(images)
        c2 = self.conv2(c1)
        c3 = self.conv3(c2)
        c4 = self.conv4(c3)
        c5 = self.conv5(c4)

        laterals = [lat(c) for lat, c in zip(self.lateral, (c2, c3, c4, c5))]
        merged = [laterals[3]]
        for lvl in (2, 1, 0):
            up = F.interpolate(merged[0], size=laterals[lvl].shape[2:], mode="nearest")
            merged.insert(0, laterals[lvl] + up)
        p2, p3, p4, p5 = (sm(m) for sm, m in zip(self.smooth, merged))
        return FeaturePyramid(p2, p3, p4, p5)


def build_backbone(config: BackboneConfig | str) -> BackboneFPN:
    """Construct the feature extractor from a config or a preset name."""
    if isinstance(config, str):
        config = BackboneConfig.from_preset(config)
    return BackboneFPN(config)


def extract_features(model: BackboneFPN, images: torch.Tensor) -> FeaturePyramid:
    return model(images)


def load_pretrained(model: nn.Module, mapping: dict[str, np.ndarray]) -> None:
    """Load named parameter/buffer arrays into a model.

    Keys follow the model's own state-dict naming (e.g.
    ``conv2.0.conv1.weight``). Unknown keys or shape mismatches are hard
    errors listing every offending key; keys absent from the mapping keep
    their current values.
    """
    state = model.state_dict()
    unknown = [k for k in mapping if k not in state]
    mismatched = [
        f"{k} (got {tuple(np.shape(v))}, want {tuple(state[k].shape)})"
        for k, v in mapping.items()
        if k in state and tuple(np.shape(v)) != tuple(state[k].shape)
    ]
    if unknown or mismatched:
        parts = []
        if unknown:
            parts.append(f"unknown keys: {sorted(unknown)}")
        if mismatched:
            parts.append(f"shape mismatches: {sorted(mismatched)}")
        raise ValueError("pretrained weight mapping rejected; " + "; ".join(parts))
    with torch.no_grad():
        for k, v in mapping.items():
            state[k].copy_(torch.as_tensor(np.asarray(v)))
