"""Scene samples: dataset layout, annotation parsing, feasibility relabeling.

On-disk layout of a dataset root::

    root/<split>/rgb/NAME.png      8-bit RGB image
    root/<split>/mask/NAME.png     8-bit semantic class ids (0 background,
                                   1 infeasible object, >=2 object classes)
    root/<split>/grasps/NAME.txt   one grasp per line:
                                   cx cy w h theta_deg instance_id
                                   ('#' starts a comment)

Grasp files holding only "x y" pairs are treated as corner-quadruple
imports (four consecutive lines per rectangle). Stored masks are already
feasibility-relabeled, so every grasp on disk belongs to a feasible
instance.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image

from graspnet.geometry import GraspCandidate, normalize_angle

__all__ = [
    "InstanceMeta",
    "SceneSample",
    "FeasibilityRules",
    "relabel_feasibility",
    "parse_corner_rects",
    "load_dataset",
    "save_sample",
    "pad_to_multiple",
]

BACKGROUND_CLASS = 0
INFEASIBLE_CLASS = 1


@dataclass(frozen=True)
class InstanceMeta:
    """Per-instance scene facts used by the feasibility rules."""

    class_id: int
    occlusion: float = 0.0  # fraction of the footprint hidden by objects above
    supports: tuple[int, ...] = ()  # instance ids resting on this object


@dataclass
class SceneSample:
    """One annotated scene.

    ``semantic_mask`` holds class ids; ``instance_mask`` (when available,
    e.g. for synthetic scenes) holds instance ids with 0 as background.
    ``feasibility`` flags whether each instance is graspable right now.
    """

    image: np.ndarray
    grasps: list[tuple[GraspCandidate, int]]
    semantic_mask: np.ndarray
    feasibility: dict[int, bool]
    instance_mask: np.ndarray | None = None
    instances: dict[int, InstanceMeta] = field(default_factory=dict)
    name: str = ""

    def __post_init__(self):
        h, w = self.image.shape[:2]
        if self.semantic_mask.shape != (h, w):
            raise ValueError("semantic mask must match image shape")
        for g, inst in self.grasps:
            if not (0 <= g.x < w and 0 <= g.y < h):
                raise ValueError(f"grasp center ({g.x}, {g.y}) outside {w}x{h} image")
            if self.instance_mask is not None and not (self.instance_mask == inst).any():
                raise ValueError(f"grasp instance id {inst} absent from instance mask")

    @property
    def feasible_grasps(self) -> list[GraspCandidate]:
        return [g for g, inst in self.grasps if self.feasibility.get(inst, True)]


@dataclass(frozen=True)
class FeasibilityRules:
    """Automated stand-in for manual graspability labels.

    An instance is infeasible when more than ``max_occlusion`` of its
    footprint is hidden, or when anything rests on top of it.
    """

    max_occlusion: float = 0.2
    support_blocks: bool = True


def relabel_feasibility(sample: SceneSample, rules: FeasibilityRules = FeasibilityRules()) -> SceneSample:
    """Apply feasibility rules: drop grasps of infeasible instances and
    remap their mask pixels to the dedicated infeasible class.

    Scenes without instance metadata pass through unchanged.
    """
    if not sample.instances:
        return sample
    feasibility = {}
    for inst, meta in sample.instances.items():
        blocked = meta.occlusion > rules.max_occlusion
        if rules.support_blocks and meta.supports:
            blocked = True
        feasibility[inst] = not blocked
    grasps = [(g, inst) for g, inst in sample.grasps if feasibility.get(inst, True)]
    semantic = sample.semantic_mask.copy()
    if sample.instance_mask is not None:
        for inst, ok in feasibility.items():
            if not ok:
                semantic[sample.instance_mask == inst] = INFEASIBLE_CLASS
    return replace(sample, grasps=grasps, semantic_mask=semantic, feasibility=feasibility)


def _corner_rect(points: np.ndarray) -> GraspCandidate:
    """Center-form rectangle from 4 corner points (first edge gives theta and w)."""
    center = points.mean(axis=0)
    e1 = points[1] - points[0]
    e2 = points[2] - points[1]
    theta = normalize_angle(np.degrees(np.arctan2(e1[1], e1[0])))
    return GraspCandidate(center[0], center[1], float(np.hypot(*e1)), float(np.hypot(*e2)), theta)


def parse_corner_rects(path: str | Path) -> list[GraspCandidate]:
    """Read corner-quadruple annotations: four "x y" lines per rectangle."""
    points = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#")[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"{path}:{lineno}: expected 'x y', got {raw!r}")
        try:
            points.append((float(parts[0]), float(parts[1])))
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: non-numeric corner {raw!r}") from exc
    if len(points) % 4 != 0:
        raise ValueError(f"{path}: corner count {len(points)} not divisible by 4")
    pts = np.asarray(points, dtype=np.float64)
    return [_corner_rect(pts[i : i + 4]) for i in range(0, len(pts), 4)]


def _parse_native_grasps(path: Path) -> list[tuple[GraspCandidate, int]]:
    out = []
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#")[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 6:
            raise ValueError(
                f"{path}:{lineno}: expected 'cx cy w h theta_deg instance_id', got {raw!r}"
            )
        try:
            cx, cy, w, h, theta = (float(v) for v in parts[:5])
            inst = int(parts[5])
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: malformed grasp line {raw!r}") from exc
        out.append((GraspCandidate(cx, cy, w, h, theta), inst))
    return out


def _grasp_file_is_corner_format(path: Path) -> bool:
    for raw in path.read_text().splitlines():
        line = raw.split("#")[0].strip()
        if line:
            return len(line.split()) == 2
    return False


def load_dataset(root: str | Path, split: str) -> list[SceneSample]:
    """Load a split in deterministic (name-sorted) order.

    Missing mask or grasp files are hard errors naming the offending file;
    malformed annotation lines report their line number.
    """
    split_dir = Path(root) / split
    if not split_dir.is_dir():
        raise FileNotFoundError(f"split directory not found: {split_dir}")
    rgb_dir = split_dir / "rgb"
    if not rgb_dir.is_dir():
        return []
    samples = []
    for rgb_path in sorted(rgb_dir.glob("*.png")):
        name = rgb_path.stem
        mask_path = split_dir / "mask" / f"{name}.png"
        grasp_path = split_dir / "grasps" / f"{name}.txt"
        if not mask_path.exists():
            raise FileNotFoundError(f"missing mask for {rgb_path}: {mask_path}")
        if not grasp_path.exists():
            raise FileNotFoundError(f"missing grasp annotation for {rgb_path}: {grasp_path}")
        image = np.asarray(Image.open(rgb_path).convert("RGB"))
        mask = np.asarray(Image.open(mask_path)).astype(np.int64)
        if _grasp_file_is_corner_format(grasp_path):
            rects = parse_corner_rects(grasp_path)
            grasps = [(g, i + 1) for i, g in enumerate(rects)]
        else:
            grasps = _parse_native_grasps(grasp_path)
        feasibility = {inst: True for _, inst in grasps}
        samples.append(
            SceneSample(
                image=image,
                grasps=grasps,
                semantic_mask=mask,
                feasibility=feasibility,
                name=name,
            )
        )
    return samples


def save_sample(sample: SceneSample, split_dir: str | Path, name: str | None = None) -> None:
    """Write one sample into a split directory (creates rgb/, mask/, grasps/).

    Only feasible grasps are written, matching the stored relabeled mask.
    """
    split_dir = Path(split_dir)
    name = name or sample.name or "sample"
    for sub in ("rgb", "mask", "grasps"):
        (split_dir / sub).mkdir(parents=True, exist_ok=True)
    Image.fromarray(sample.image).save(split_dir / "rgb" / f"{name}.png")
    Image.fromarray(sample.semantic_mask.astype(np.uint8)).save(split_dir / "mask" / f"{name}.png")
    lines = []
    for g, inst in sample.grasps:
        if sample.feasibility.get(inst, True):
            lines.append(f"{g.x:.3f} {g.y:.3f} {g.w:.3f} {g.h:.3f} {g.theta:.3f} {inst}")
    (split_dir / "grasps" / f"{name}.txt").write_text("\n".join(lines) + ("\n" if lines else ""))


def pad_to_multiple(image: np.ndarray, multiple: int = 32) -> np.ndarray:
    """Edge-replicate pad the bottom/right so both spatial dims divide ``multiple``."""
    h, w = image.shape[:2]
    ph = (-h) % multiple
    pw = (-w) % multiple
    if ph == 0 and pw == 0:
        return image
    pad = [(0, ph), (0, pw)] + [(0, 0)] * (image.ndim - 2)
    return np.pad(image, pad, mode="edge")


def flip_sample(sample: SceneSample, horizontal: bool, vertical: bool) -> SceneSample:
    """Mirror a sample with exactly transformed ground truth.

    A single mirror negates grasp orientation (theta -> 180 - theta); both
    mirrors together are a 180-degree rotation and leave theta unchanged.
    """
    if not horizontal and not vertical:
        return sample
    h, w = sample.image.shape[:2]

    def flip_arr(a):
        if a is None:
            return None
        if horizontal:
            a = np.flip(a, axis=1)
        if vertical:
            a = np.flip(a, axis=0)
        return np.ascontiguousarray(a)

    grasps = []
    for g, inst in sample.grasps:
        x = w - g.x if horizontal else g.x
        y = h - g.y if vertical else g.y
        theta = g.theta if horizontal == vertical else 180.0 - g.theta
        grasps.append((GraspCandidate(x, y, g.w, g.h, theta), inst))
    return replace(
        sample,
        image=flip_arr(sample.image),
        semantic_mask=flip_arr(sample.semantic_mask),
        instance_mask=flip_arr(sample.instance_mask),
        grasps=grasps,
    )
