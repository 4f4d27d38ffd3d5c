from graspnet.data.corruption import (
    NoiseConfig,
    add_gaussian_noise,
    add_salt_pepper,
    augment_image,
    blur,
    derive_seed,
)
from graspnet.data.samples import (
    FeasibilityRules,
    InstanceMeta,
    SceneSample,
    flip_sample,
    load_dataset,
    pad_to_multiple,
    parse_corner_rects,
    relabel_feasibility,
    save_sample,
)
from graspnet.data.synthetic import (
    SyntheticSceneConfig,
    generate_synthetic_dataset,
    generate_synthetic_scene,
)

__all__ = [
    "NoiseConfig",
    "add_gaussian_noise",
    "add_salt_pepper",
    "augment_image",
    "blur",
    "derive_seed",
    "FeasibilityRules",
    "InstanceMeta",
    "SceneSample",
    "load_dataset",
    "pad_to_multiple",
    "parse_corner_rects",
    "relabel_feasibility",
    "save_sample",
    "SyntheticSceneConfig",
    "generate_synthetic_dataset",
    "generate_synthetic_scene",
]
