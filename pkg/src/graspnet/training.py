"""Training loop, configuration file handling, and checkpoints.

Plain mini-batch SGD with momentum and cosine learning-rate decay.
Checkpoints are versioned containers holding the model and train configs
plus the named parameter arrays; loading a checkpoint with a different
format version is a hard error.

Config files are flat ``key = value`` text with '#' comments; every key
has a default, unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import torch

from graspnet.data.corruption import NoiseConfig, augment_image, derive_seed
from graspnet.data.samples import SceneSample
from graspnet.losses import LossWeights
from graspnet.model import GraspNetwork, ModelConfig

__all__ = [
    "TrainConfig",
    "TrainResult",
    "train",
    "save_checkpoint",
    "load_checkpoint",
    "parse_config_file",
    "CHECKPOINT_VERSION",
]

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    """Desk-scale defaults; :meth:`full_scale` matches the reference protocol
    (800 epochs, batch 10, the large backbone with its first two stages frozen)."""

    epochs: int = 60
    batch_size: int = 4
    learning_rate: float = 0.01
    momentum: float = 0.9
    seed: int = 0
    preset: str = "tiny"
    frozen_stages: int = 0
    checkpoint_interval: int = 20
    noise_augment: bool = False
    gaussian_sigma: float = 10.0
    sp_density: float = 0.02
    blur_sigma: float = 1.0
    augment_prob: float = 0.5
    grasp_weight: float = 1.0
    seg_weight: float = 1.0
    refine_weight: float = 1.0
    s_classes: int = 5
    score_threshold: float = 0.5
    feasibility_gate: float = 0.25

    def __post_init__(self):
        if self.epochs <= 0 or self.batch_size <= 0 or self.learning_rate <= 0:
            raise ValueError("epochs, batch size, and learning rate must be positive")

    @staticmethod
    def full_scale() -> "TrainConfig":
        return TrainConfig(epochs=800, batch_size=10, preset="resnet101", frozen_stages=2)

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            preset=self.preset,
            frozen_stages=self.frozen_stages,
            s_classes=self.s_classes,
            score_threshold=self.score_threshold,
            feasibility_gate=self.feasibility_gate,
        )

    def noise_config(self) -> NoiseConfig:
        return NoiseConfig(
            gaussian_sigma=self.gaussian_sigma,
            sp_density=self.sp_density,
            blur_sigma=self.blur_sigma,
            augment_prob=self.augment_prob,
            seed=self.seed,
        )

    def loss_weights(self) -> LossWeights:
        return LossWeights(grasp=self.grasp_weight, seg=self.seg_weight,
                           refine=self.refine_weight)


@dataclass
class TrainResult:
    model: GraspNetwork
    loss_curve: list[float]
    checkpoint_path: Path | None


def _coerce(value: str, target_type):
    if target_type is bool:
        low = value.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ValueError(f"expected a boolean, got {value!r}")
    return target_type(value)


def parse_config_file(path: str | Path) -> TrainConfig:
    """Read a flat key=value config; every key is optional."""
    fields = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
    types = {
        "epochs": int, "batch_size": int, "seed": int, "frozen_stages": int,
        "checkpoint_interval": int, "s_classes": int,
        "preset": str, "noise_augment": bool,
    }
    overrides = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#")[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, value = (p.strip() for p in line.partition("="))
        if key not in fields:
            raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
        overrides[key] = _coerce(value, types.get(key, float))
    return TrainConfig(**overrides)


def save_checkpoint(model: GraspNetwork, path: str | Path,
                    train_config: TrainConfig | None = None,
                    epoch: int = 0, loss_curve: list[float] | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "model_config": model.config.to_dict(),
        "train_config": dataclasses.asdict(train_config) if train_config else None,
        "state_dict": model.state_dict(),
        "epoch": epoch,
        "loss_curve": list(loss_curve or []),
    }
    torch.save(payload, path)
    return path


def load_checkpoint(path: str | Path) -> tuple[GraspNetwork, dict]:
    """Rebuild a model from a checkpoint; format version mismatch is fatal."""
    payload = torch.load(path, map_location="cpu", weights_only=False)
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(
            f"checkpoint format version {version!r} unsupported "
            f"(expected {CHECKPOINT_VERSION}): {path}"
        )
    model = GraspNetwork(ModelConfig.from_dict(payload["model_config"]))
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model, payload


def train(
    config: TrainConfig,
    dataset: list[SceneSample],
    out_dir: str | Path | None = None,
    model: GraspNetwork | None = None,
    log=None,
) -> TrainResult:
    """Fit the network on a dataset of same-sized samples.

    Per-sample corruption augmentation (when enabled) is seeded by
    (seed, epoch, sample index), so results do not depend on iteration
    order. A non-finite loss aborts immediately, reporting the epoch and
    batch index. Returns the trained model, the per-step loss curve, and
    the final checkpoint path when an output directory is given.
    """
    if not dataset:
        raise ValueError("empty training dataset")
    torch.manual_seed(config.seed)
    rng = np.random.default_rng(derive_seed("train", config.seed))
    if model is None:
        model = GraspNetwork(config.model_config())
    model.train()
    params = [p for p in model.parameters() if p.requires_grad]
    optimizer = torch.optim.SGD(params, lr=config.learning_rate, momentum=config.momentum)
    weights = config.loss_weights()
    noise_cfg = config.noise_config()

    out_dir = Path(out_dir) if out_dir is not None else None
    loss_curve: list[float] = []
    order = np.arange(len(dataset))

    for epoch in range(config.epochs):
        lr = config.learning_rate * 0.5 * (1.0 + math.cos(math.pi * epoch / config.epochs))
        for group in optimizer.param_groups:
            group["lr"] = lr
        rng.shuffle(order)
        for batch_no, start in enumerate(range(0, len(order), config.batch_size)):
            idx = order[start : start + config.batch_size]
            batch = []
            for j in idx:
                sample = dataset[j]
                if config.noise_augment:
                    image = augment_image(
                        sample.image, noise_cfg, derive_seed(config.seed, epoch, int(j))
                    )
                    sample = replace(sample, image=image)
                batch.append(sample)
            loss, parts, _ = model.training_losses(batch, rng, weights)
            if not torch.isfinite(loss):
                raise RuntimeError(
                    f"non-finite loss at epoch {epoch}, batch {batch_no} "
                    f"(samples {idx.tolist()}): {parts.detach_floats()}"
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            loss_curve.append(float(loss.detach()))
        if log is not None and (epoch % 10 == 0 or epoch == config.epochs - 1):
            log(f"epoch {epoch}: lr {lr:.4f} loss {loss_curve[-1]:.4f}")
        if out_dir is not None and config.checkpoint_interval > 0 \
                and (epoch + 1) % config.checkpoint_interval == 0:
            save_checkpoint(model, out_dir / f"checkpoint_ep{epoch + 1:04d}.pt",
                            config, epoch + 1, loss_curve)

    checkpoint_path = None
    if out_dir is not None:
        checkpoint_path = save_checkpoint(
            model, out_dir / "checkpoint_final.pt", config, config.epochs, loss_curve
        )
    model.eval()
    return TrainResult(model=model, loss_curve=loss_curve, checkpoint_path=checkpoint_path)
