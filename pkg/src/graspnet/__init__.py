"""Multi-task grasp detection from RGB images.

Library layout:

- :mod:`graspnet.geometry` -- rotated grasp rectangles, IoU, binning, box coding
- :mod:`graspnet.data` -- dataset IO, corruption ops, synthetic scene generator
- :mod:`graspnet.backbone` -- residual backbone with feature pyramid
- :mod:`graspnet.grasp_branch` -- region proposals and the grasp detection head
- :mod:`graspnet.segmentation` -- per-level context modules and pixel classification
- :mod:`graspnet.refinement` -- probability-map fusion and candidate refinement
- :mod:`graspnet.losses` -- task losses and their weighted sum
- :mod:`graspnet.model` -- the assembled network and its predict path
- :mod:`graspnet.training` / :mod:`graspnet.evaluation` -- train loop, metrics, overlays
- :mod:`graspnet.cli` -- train / eval / predict / corrupt / synth commands
"""

from graspnet.geometry import (
    CorrectionFactors,
    GraspCandidate,
    OrientationBinning,
    RegionProposal,
    angle_delta,
    corners,
    decode_candidate,
    encode_targets,
    enclosing_aabb,
    nms_rotated,
    rotated_iou,
    smooth_l1,
)

__all__ = [
    "CorrectionFactors",
    "GraspCandidate",
    "OrientationBinning",
    "RegionProposal",
    "angle_delta",
    "corners",
    "decode_candidate",
    "encode_targets",
    "enclosing_aabb",
    "nms_rotated",
    "rotated_iou",
    "smooth_l1",
]

__version__ = "0.1.0"
