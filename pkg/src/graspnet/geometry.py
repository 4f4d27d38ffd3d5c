"""Rotated-rectangle geometry for grasp detection.

A grasp is an oriented rectangle ``(x, y, w, h, theta)`` in image
coordinates (x right, y down): ``(x, y)`` is the center, ``w`` spans the
gripper-opening axis, ``h`` the jaw length, and ``theta`` is the rotation
of the opening axis in degrees. A rectangle and its 180-degree rotation
denote the same grasp, so ``theta`` is normalized to ``[0, 180)``.

Everything in this module is a pure function of its inputs: rotated IoU
via convex polygon clipping, orientation binning, box regression
encoding/decoding, smooth-L1, and rotated non-maximum suppression.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "GraspCandidate",
    "RegionProposal",
    "OrientationBinning",
    "CorrectionFactors",
    "corners",
    "rotated_iou",
    "angle_delta",
    "encode_targets",
    "decode_candidate",
    "smooth_l1",
    "enclosing_aabb",
    "nms_rotated",
    "normalize_angle",
]

_AREA_EPS = 1e-12


def normalize_angle(theta: float) -> float:
    """Map an angle in degrees onto [0, 180) under 180-degree symmetry."""
    theta = math.fmod(theta, 180.0)
    if theta < 0.0:
        theta += 180.0
    if theta >= 180.0:  # fmod rounding can land exactly on 180
        theta -= 180.0
    return theta


@dataclass(frozen=True)
class GraspCandidate:
    """Oriented grasp rectangle ``(x, y, w, h, theta_deg)``.

    ``w`` and ``h`` must be positive; ``theta_deg`` is normalized to
    ``[0, 180)`` on construction.
    """

    x: float
    y: float
    w: float
    h: float
    theta: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"grasp extents must be positive, got w={self.w}, h={self.h}")
        object.__setattr__(self, "theta", normalize_angle(float(self.theta)))

    @property
    def area(self) -> float:
        return self.w * self.h


@dataclass(frozen=True)
class RegionProposal:
    """Axis-aligned proposal: center ``(x, y)``, extents ``(w, h)``, objectness score."""

    x: float
    y: float
    w: float
    h: float
    score: float = 1.0

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"proposal extents must be positive, got w={self.w}, h={self.h}")
        if not (0.0 <= self.score <= 1.0):
            raise ValueError(f"objectness score must lie in [0, 1], got {self.score}")

    @property
    def area(self) -> float:
        return self.w * self.h


@dataclass(frozen=True)
class OrientationBinning:
    """Equal-width discretization of [0, 180) into ``n_classes`` bins.

    Class ``c`` covers ``[c * width, (c + 1) * width)`` and is represented
    by its midpoint. Index ``n_classes`` is reserved for the null class
    (invalid proposal) and has no representative angle.
    """

    n_classes: int = 18

    def __post_init__(self):
        if self.n_classes < 1:
            raise ValueError("need at least one orientation bin")

    @property
    def bin_width(self) -> float:
        return 180.0 / self.n_classes

    @property
    def null_class(self) -> int:
        return self.n_classes

    def bin_of(self, theta: float) -> int:
        """Bin index of a normalized angle."""
        theta = normalize_angle(theta)
        c = int(theta // self.bin_width)
        return min(c, self.n_classes - 1)

    def representative(self, c: int) -> float:
        """Midpoint angle of bin ``c``."""
        if not (0 <= c < self.n_classes):
            raise ValueError(f"orientation class {c} outside [0, {self.n_classes})")
        return (c + 0.5) * self.bin_width


@dataclass(frozen=True)
class CorrectionFactors:
    """Box regression offsets: center shifts in proposal units, log-scale ratios.

    ``t_theta`` (angle offset in bin-width units) is present only in the
    refinement context.
    """

    t_x: float
    t_y: float
    t_w: float
    t_h: float
    t_theta: float | None = None

    def __post_init__(self):
        vals = [self.t_x, self.t_y, self.t_w, self.t_h]
        if self.t_theta is not None:
            vals.append(self.t_theta)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"correction factors must be finite, got {vals}")


def corners(g: GraspCandidate) -> np.ndarray:
    """Corner points of a grasp rectangle, shape (4, 2), counter-clockwise.

    Local corners ``(+-w/2, +-h/2)`` rotated by ``theta`` and shifted to the
    center. Counter-clockwise in the mathematical sense (positive shoelace
    area).
    """
    c = math.cos(math.radians(g.theta))
    s = math.sin(math.radians(g.theta))
    hw, hh = 0.5 * g.w, 0.5 * g.h
    local = np.array([(-hw, -hh), (hw, -hh), (hw, hh), (-hw, hh)])
    rot = np.array([(c, -s), (s, c)])
    return local @ rot.T + np.array([g.x, g.y])


def _polygon_area(pts: Sequence[Sequence[float]]) -> float:
    """Absolute shoelace area of a polygon given as a vertex sequence."""
    n = len(pts)
    if n < 3:
        return 0.0
    acc = 0.0
    for i in range(n):
        x1, y1 = pts[i]
        x2, y2 = pts[(i + 1) % n]
        acc += x1 * y2 - x2 * y1
    return abs(acc) * 0.5


def _clip_against_edge(poly, a, b):
    """One Sutherland-Hodgman pass: keep the half-plane left of edge a->b."""
    ex, ey = b[0] - a[0], b[1] - a[1]
    out = []
    n = len(poly)
    for i in range(n):
        px, py = poly[i]
        qx, qy = poly[(i + 1) % n]
        p_in = ex * (py - a[1]) - ey * (px - a[0]) >= 0.0
        q_in = ex * (qy - a[1]) - ey * (qx - a[0]) >= 0.0
        if p_in:
            out.append((px, py))
        if p_in != q_in:
            dx, dy = qx - px, qy - py
            denom = ex * dy - ey * dx
            if abs(denom) > _AREA_EPS:
                t = (ey * (px - a[0]) - ex * (py - a[1])) / denom
                out.append((px + t * dx, py + t * dy))
    return out


def _intersection_area(pa: np.ndarray, pb: np.ndarray) -> float:
    """Area of the intersection of two convex quadrilaterals (CCW corners)."""
    poly = [tuple(p) for p in pa]
    clip = [tuple(p) for p in pb]
    for i in range(4):
        if len(poly) < 3:
            return 0.0
        poly = _clip_against_edge(poly, clip[i], clip[(i + 1) % 4])
    return _polygon_area(poly)


def rotated_iou(a: GraspCandidate, b: GraspCandidate) -> float:
    """Exact intersection-over-union of two rotated rectangles, in [0, 1].

    The intersection polygon is computed by clipping one rectangle against
    the other's edges; degenerate slivers evaluate to 0, never negative.
    """
    ca, cb = corners(a), corners(b)
    # Cheap reject: separated axis-aligned envelopes cannot intersect.
    if (ca[:, 0].max() <= cb[:, 0].min() or cb[:, 0].max() <= ca[:, 0].min()
            or ca[:, 1].max() <= cb[:, 1].min() or cb[:, 1].max() <= ca[:, 1].min()):
        return 0.0
    inter = _intersection_area(ca, cb)
    if inter <= _AREA_EPS:
        return 0.0
    union = a.area + b.area - inter
    if union <= _AREA_EPS:
        return 0.0
    return min(max(inter / union, 0.0), 1.0)


def angle_delta(theta_a: float, theta_b: float) -> float:
    """Smallest angular discrepancy under 180-degree symmetry, in [0, 90]."""
    d = math.fmod(abs(theta_a - theta_b), 180.0)
    return min(d, 180.0 - d)


def encode_targets(g_star: GraspCandidate, r_hat: RegionProposal) -> CorrectionFactors:
    """Regression targets that map a proposal onto a ground-truth rectangle.

    Center offsets are normalized by the proposal extents (x by width, y by
    height) and scales are log-ratios.
    """
    if not (g_star.w > 0 and g_star.h > 0):
        raise ValueError("ground-truth extents must be positive")
    return CorrectionFactors(
        t_x=(g_star.x - r_hat.x) / r_hat.w,
        t_y=(g_star.y - r_hat.y) / r_hat.h,
        t_w=math.log(g_star.w / r_hat.w),
        t_h=math.log(g_star.h / r_hat.h),
    )


def decode_candidate(
    r_hat: RegionProposal,
    f: CorrectionFactors,
    c: int,
    binning: OrientationBinning = OrientationBinning(),
) -> GraspCandidate:
    """Apply correction factors to a proposal; orientation from bin ``c``.

    Exact inverse of :func:`encode_targets` on the box fields. ``c`` must be
    a real orientation class; callers filter null-class proposals first. If
    ``f`` carries an angle offset it shifts theta by that many bin widths.
    """
    theta = binning.representative(c)
    if f.t_theta is not None:
        theta += f.t_theta * binning.bin_width
    return GraspCandidate(
        x=r_hat.x + f.t_x * r_hat.w,
        y=r_hat.y + f.t_y * r_hat.h,
        w=r_hat.w * math.exp(f.t_w),
        h=r_hat.h * math.exp(f.t_h),
        theta=theta,
    )


def smooth_l1(x: float) -> float:
    """Smooth-L1: quadratic inside |x| < 1, linear with slope 1 outside."""
    ax = abs(x)
    if ax < 1.0:
        return 0.5 * x * x
    return ax - 0.5


def enclosing_aabb(g: GraspCandidate, score: float = 1.0) -> RegionProposal:
    """Tight axis-aligned envelope of a grasp rectangle."""
    pts = corners(g)
    x_min, y_min = pts.min(axis=0)
    x_max, y_max = pts.max(axis=0)
    return RegionProposal(
        x=0.5 * (x_min + x_max),
        y=0.5 * (y_min + y_max),
        w=x_max - x_min,
        h=y_max - y_min,
        score=score,
    )


def nms_rotated(
    candidates: Sequence[GraspCandidate],
    scores: Sequence[float],
    iou_threshold: float,
) -> list[int]:
    """Greedy rotated non-maximum suppression.

    Returns indices of surviving candidates in pick order (descending
    score, ties broken by lower index). A candidate is suppressed when its
    rotated IoU with an already-picked one exceeds the threshold.
    """
    if len(candidates) != len(scores):
        raise ValueError("candidates and scores must have equal length")
    order = sorted(range(len(candidates)), key=lambda i: (-scores[i], i))
    kept: list[int] = []
    for i in order:
        if all(rotated_iou(candidates[i], candidates[k]) <= iou_threshold for k in kept):
            kept.append(i)
    return kept
