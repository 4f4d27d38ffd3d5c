"""Independent oracles used by the test suite.

These deliberately avoid the library's own polygon-clipping code path:
IoU is estimated by rasterizing both rectangles onto a fixed grid and
counting cells.
"""

from __future__ import annotations

import math

import numpy as np

from graspnet.geometry import GraspCandidate


def points_in_rect(xs: np.ndarray, ys: np.ndarray, g: GraspCandidate) -> np.ndarray:
    """Boolean mask of points inside a rotated rectangle.

    Each point is rotated into the rectangle's frame and compared against
    the half-extents.
    """
    c = math.cos(math.radians(g.theta))
    s = math.sin(math.radians(g.theta))
    dx = xs - g.x
    dy = ys - g.y
    u = dx * c + dy * s
    v = -dx * s + dy * c
    return (np.abs(u) <= 0.5 * g.w) & (np.abs(v) <= 0.5 * g.h)


def rasterized_iou(a: GraspCandidate, b: GraspCandidate, grid: int = 512) -> float:
    """IoU estimated on a ``grid x grid`` rasterization of the joint extent."""
    pts = []
    for g in (a, b):
        r = 0.5 * math.hypot(g.w, g.h)
        pts.append((g.x - r, g.x + r, g.y - r, g.y + r))
    x_lo = min(p[0] for p in pts)
    x_hi = max(p[1] for p in pts)
    y_lo = min(p[2] for p in pts)
    y_hi = max(p[3] for p in pts)
    xs = np.linspace(x_lo, x_hi, grid)
    ys = np.linspace(y_lo, y_hi, grid)
    gx, gy = np.meshgrid(xs, ys)
    in_a = points_in_rect(gx, gy, a)
    in_b = points_in_rect(gx, gy, b)
    union = np.count_nonzero(in_a | in_b)
    if union == 0:
        return 0.0
    return np.count_nonzero(in_a & in_b) / union
