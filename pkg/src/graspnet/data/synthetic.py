"""Synthetic tabletop scenes with exact ground truth.

Renders flat-colored shapes (bars, ellipses, boxes) on a plain background
and emits, per scene: the RGB image, instance and semantic masks, grasp
rectangles across each shape's minor axis, and per-instance occlusion /
support facts for the feasibility rules. Scenes are deterministic for a
fixed seed.

Semantic classes: 0 background, 1 infeasible (assigned by relabeling),
then one class per shape kind in ``SHAPE_CLASSES`` order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from graspnet.data.corruption import derive_seed
from graspnet.data.samples import InstanceMeta, SceneSample, relabel_feasibility, FeasibilityRules
from graspnet.geometry import GraspCandidate, normalize_angle

__all__ = [
    "SyntheticSceneConfig",
    "generate_synthetic_scene",
    "generate_synthetic_dataset",
    "canonical_grasps",
    "SHAPE_CLASSES",
]

SHAPE_CLASSES = {"bar": 2, "ellipse": 3, "box": 4}

# Three shades per shape kind, in SHAPE_CLASSES order.
_DEFAULT_PALETTE = (
    (200, 60, 50), (220, 110, 40), (180, 40, 90),     # bars: reds/oranges
    (50, 90, 200), (40, 160, 200), (90, 60, 190),     # ellipses: blues
    (110, 80, 40), (60, 140, 60), (150, 120, 50),     # boxes: browns/greens
)


@dataclass(frozen=True)
class SyntheticSceneConfig:
    image_size: tuple[int, int] = (128, 128)  # (H, W)
    object_count: tuple[int, int] = (2, 4)
    shapes: tuple[str, ...] = ("bar", "ellipse", "box")
    occlusion_prob: float = 0.2
    support_prob: float = 0.25
    palette: tuple[tuple[int, int, int], ...] = _DEFAULT_PALETTE
    background: tuple[int, int, int] = (205, 205, 205)
    texture_sigma: float = 3.0
    seed: int = 0

    def __post_init__(self):
        if self.object_count[0] < 0 or self.object_count[1] < self.object_count[0]:
            raise ValueError(f"bad object count range {self.object_count}")
        unknown = set(self.shapes) - set(SHAPE_CLASSES)
        if unknown:
            raise ValueError(f"unknown shapes {unknown}")


@dataclass
class _Shape:
    kind: str
    cx: float
    cy: float
    long_ext: float
    short_ext: float
    phi: float  # long-axis direction, degrees

    @property
    def class_id(self) -> int:
        return SHAPE_CLASSES[self.kind]


def _footprint(shape: _Shape, h: int, w: int) -> np.ndarray:
    ys, xs = np.mgrid[0:h, 0:w]
    dx = xs + 0.5 - shape.cx
    dy = ys + 0.5 - shape.cy
    c = math.cos(math.radians(shape.phi))
    s = math.sin(math.radians(shape.phi))
    u = dx * c + dy * s
    v = -dx * s + dy * c
    if shape.kind == "ellipse":
        return (u / (0.5 * shape.long_ext)) ** 2 + (v / (0.5 * shape.short_ext)) ** 2 <= 1.0
    return (np.abs(u) <= 0.5 * shape.long_ext) & (np.abs(v) <= 0.5 * shape.short_ext)


def canonical_grasps(kind: str, cx: float, cy: float, long_ext: float, short_ext: float, phi: float) -> list[GraspCandidate]:
    """Ground-truth grasps for a shape: opening across the minor axis.

    The opening axis is perpendicular to the shape's long axis, opened 1.5x
    wider than the object; the jaws span half the long extent. Elongated
    shapes get two extra grasps offset along the long axis.
    """
    theta = normalize_angle(phi + 90.0)
    opening = 1.5 * short_ext
    jaw = 0.5 * long_ext
    ux = math.cos(math.radians(phi))
    uy = math.sin(math.radians(phi))
    offsets = [0.0]
    if long_ext / short_ext >= 2.5:
        offsets += [-0.2 * long_ext, 0.2 * long_ext]
    return [
        GraspCandidate(cx + d * ux, cy + d * uy, opening, jaw, theta)
        for d in offsets
    ]


def _sample_shape(rng: np.random.Generator, kind: str, base: float) -> tuple[float, float]:
    if kind == "bar":
        long_ext = rng.uniform(0.30, 0.44) * base
        short_ext = max(long_ext / rng.uniform(3.0, 4.5), 5.0)
    elif kind == "ellipse":
        long_ext = rng.uniform(0.20, 0.32) * base
        short_ext = max(long_ext / rng.uniform(1.6, 2.6), 6.0)
    else:  # box
        long_ext = rng.uniform(0.24, 0.38) * base
        short_ext = max(long_ext / rng.uniform(1.05, 1.5), 8.0)
    return long_ext, short_ext


def _color_for(rng: np.random.Generator, config: SyntheticSceneConfig, kind: str) -> np.ndarray:
    shades = max(len(config.palette) // len(SHAPE_CLASSES), 1)
    offset = (SHAPE_CLASSES[kind] - 2) * shades
    idx = (offset + int(rng.integers(shades))) % len(config.palette)
    return np.array(config.palette[idx], dtype=np.float64)


def generate_synthetic_scene(config: SyntheticSceneConfig, seed: int | None = None) -> SceneSample:
    """Render one scene; deterministic for a fixed seed.

    The returned sample carries instance metadata (occlusion fractions and
    support relations) and feasibility flags per the default rules, but all
    grasps are still attached and the semantic mask holds original shape
    classes; run :func:`relabel_feasibility` to produce training ground truth.
    """
    rng = np.random.default_rng(config.seed if seed is None else seed)
    h, w = config.image_size
    base = min(h, w)

    shapes: list[_Shape] = []
    supports: dict[int, list[int]] = {}

    n = int(rng.integers(config.object_count[0], config.object_count[1] + 1))
    i = 0
    while i < n:
        pair = (
            "box" in config.shapes
            and i + 1 < n
            and rng.random() < config.support_prob
        )
        if pair:
            # A large box with a smaller object resting on top of it.
            long_ext = rng.uniform(0.34, 0.46) * base
            short_ext = long_ext / rng.uniform(1.05, 1.4)
            cx = rng.uniform(0.25, 0.75) * w
            cy = rng.uniform(0.25, 0.75) * h
            phi = rng.uniform(0, 180)
            shapes.append(_Shape("box", cx, cy, long_ext, short_ext, phi))
            box_idx = len(shapes) - 1

            top_kind = str(rng.choice([k for k in config.shapes if k != "box"] or ["bar"]))
            t_long, t_short = _sample_shape(rng, top_kind, 0.55 * base)
            off = 0.18 * min(long_ext, short_ext)
            shapes.append(
                _Shape(
                    top_kind,
                    cx + rng.uniform(-off, off),
                    cy + rng.uniform(-off, off),
                    t_long,
                    t_short,
                    rng.uniform(0, 180),
                )
            )
            supports.setdefault(box_idx, []).append(len(shapes) - 1)
            i += 2
            continue

        kind = str(rng.choice(config.shapes))
        long_ext, short_ext = _sample_shape(rng, kind, base)
        occlude = shapes and rng.random() < config.occlusion_prob
        placed = False
        for _ in range(40):
            if occlude:
                other = shapes[int(rng.integers(len(shapes)))]
                r = 0.5 * (other.long_ext + long_ext) * 0.45
                ang = rng.uniform(0, 2 * math.pi)
                cx = other.cx + r * math.cos(ang)
                cy = other.cy + r * math.sin(ang)
            else:
                cx = rng.uniform(0.18, 0.82) * w
                cy = rng.uniform(0.18, 0.82) * h
            if not (0.1 * w < cx < 0.9 * w and 0.1 * h < cy < 0.9 * h):
                continue
            cand = _Shape(kind, cx, cy, long_ext, short_ext, rng.uniform(0, 180))
            if occlude:
                shapes.append(cand)
                placed = True
                break
            # Free placement: keep clear of existing objects.
            clear = all(
                math.hypot(s.cx - cx, s.cy - cy) > 0.55 * (s.long_ext + long_ext)
                for s in shapes
            )
            if clear:
                shapes.append(cand)
                placed = True
                break
        if not placed:  # crowded scene, accept the last candidate position
            shapes.append(_Shape(kind, rng.uniform(0.2, 0.8) * w, rng.uniform(0.2, 0.8) * h,
                                 long_ext, short_ext, rng.uniform(0, 180)))
        i += 1

    # Paint in placement order; later shapes sit on top.
    image = np.ones((h, w, 3), dtype=np.float64) * np.array(config.background, dtype=np.float64)
    instance_mask = np.zeros((h, w), dtype=np.int32)
    semantic_mask = np.zeros((h, w), dtype=np.int64)
    footprints = []
    for idx, shape in enumerate(shapes):
        fp = _footprint(shape, h, w)
        footprints.append(fp)
        image[fp] = _color_for(rng, config, shape.kind)
        instance_mask[fp] = idx + 1
        semantic_mask[fp] = shape.class_id

    if config.texture_sigma > 0:
        image += rng.normal(0.0, config.texture_sigma, image.shape)
    image = np.clip(np.rint(image), 0, 255).astype(np.uint8)

    instances: dict[int, InstanceMeta] = {}
    grasps: list[tuple[GraspCandidate, int]] = []
    for idx, shape in enumerate(shapes):
        inst = idx + 1
        fp_area = int(footprints[idx].sum())
        visible = int((instance_mask == inst).sum())
        occ = 1.0 - visible / fp_area if fp_area else 1.0
        # A hidden center means nothing can close on this object at all.
        cyi = min(max(int(shape.cy), 0), h - 1)
        cxi = min(max(int(shape.cx), 0), w - 1)
        if instance_mask[cyi, cxi] != inst:
            occ = 1.0
        instances[inst] = InstanceMeta(
            class_id=shape.class_id,
            occlusion=occ,
            supports=tuple(j + 1 for j in supports.get(idx, [])),
        )
        for g in canonical_grasps(shape.kind, shape.cx, shape.cy, shape.long_ext, shape.short_ext, shape.phi):
            grasps.append((g, inst))

    rules = FeasibilityRules()
    feasibility = {
        inst: not (meta.occlusion > rules.max_occlusion or meta.supports)
        for inst, meta in instances.items()
    }
    return SceneSample(
        image=image,
        grasps=grasps,
        semantic_mask=semantic_mask,
        feasibility=feasibility,
        instance_mask=instance_mask,
        instances=instances,
    )


def generate_synthetic_dataset(
    config: SyntheticSceneConfig,
    count: int,
    base_seed: int = 0,
    relabel: bool = True,
) -> list[SceneSample]:
    """Generate ``count`` scenes with per-scene seeds derived from ``base_seed``."""
    samples = []
    for i in range(count):
        sample = generate_synthetic_scene(config, derive_seed("scene", base_seed, i))
        if relabel:
            sample = relabel_feasibility(sample)
        sample.name = f"scene_{i:04d}"
        samples.append(sample)
    return samples
