"""Shared network building blocks.

Every normalization site in the network is per-channel batch-statistics
normalization immediately followed by a leaky rectifier with slope 0.01.
"""

from __future__ import annotations

import torch
import torch.nn as nn

LEAKY_SLOPE = 0.01

__all__ = ["LEAKY_SLOPE", "ConvNormAct", "LinearNormAct", "BasicBlock", "Bottleneck", "make_stage"]


class ConvNormAct(nn.Sequential):
    """3x3/1x1 convolution + batch norm + leaky activation."""

    def __init__(self, in_ch: int, out_ch: int, kernel_size: int = 3, stride: int = 1,
                 dilation: int = 1):
        padding = dilation * (kernel_size - 1) // 2
        super().__init__(
            nn.Conv2d(in_ch, out_ch, kernel_size, stride=stride, padding=padding,
                      dilation=dilation, bias=False),
            nn.BatchNorm2d(out_ch),
            nn.LeakyReLU(LEAKY_SLOPE, inplace=True),
        )


class LinearNormAct(nn.Sequential):
    """Fully connected layer + batch norm + leaky activation."""

    def __init__(self, in_features: int, out_features: int):
        super().__init__(
            nn.Linear(in_features, out_features, bias=False),
            nn.BatchNorm1d(out_features),
            nn.LeakyReLU(LEAKY_SLOPE, inplace=True),
        )


class BasicBlock(nn.Module):
    expansion = 1

    def __init__(self, in_ch: int, width: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, width, 3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(width)
        self.conv2 = nn.Conv2d(width, width, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(width)
        self.act = nn.LeakyReLU(LEAKY_SLOPE, inplace=True)
        self.downsample = None
        if stride != 1 or in_ch != width:
            self.downsample = nn.Sequential(
                nn.Conv2d(in_ch, width, 1, stride=stride, bias=False),
                nn.BatchNorm2d(width),
            )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        identity = x if self.downsample is None else self.downsample(x)
        out = self.act(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return self.act(out + identity)


class Bottleneck(nn.Module):
    expansion = 4

    def __init__(self, in_ch: int, width: int, stride: int = 1):
        super().__init__()
        out_ch = width * self.expansion
        self.conv1 = nn.Conv2d(in_ch, width, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(width)
        self.conv2 = nn.Conv2d(width, width, 3, stride=stride, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(width)
        self.conv3 = nn.Conv2d(width, out_ch, 1, bias=False)
        self.bn3 = nn.BatchNorm2d(out_ch)
        self.act = nn.LeakyReLU(LEAKY_SLOPE, inplace=True)
        self.downsample = None
        if stride != 1 or in_ch != out_ch:
            self.downsample = nn.Sequential(
                nn.Conv2d(in_ch, out_ch, 1, stride=stride, bias=False),
                nn.BatchNorm2d(out_ch),
            )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        identity = x if self.downsample is None else self.downsample(x)
        out = self.act(self.bn1(self.conv1(x)))
        out = self.act(self.bn2(self.conv2(out)))
        out = self.bn3(self.conv3(out))
        return self.act(out + identity)


def make_stage(block, in_ch: int, width: int, blocks: int, stride: int) -> nn.Sequential:
    """Residual stage: first block carries the stride, the rest keep shape."""
    layers = [block(in_ch, width, stride)]
    in_ch = width * block.expansion
    for _ in range(blocks - 1):
        layers.append(block(in_ch, width, 1))
    return nn.Sequential(*layers)
