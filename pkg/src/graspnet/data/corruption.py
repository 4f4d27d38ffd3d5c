"""Image corruption ops: Gaussian noise, salt-and-pepper, Gaussian blur.

All ops take and return HxWx3 uint8 arrays, are deterministic under a
fixed seed, and preserve shape and dtype. Training-time augmentation
derives per-sample seeds from (global seed, epoch, index) so results do
not depend on worker scheduling.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "NoiseConfig",
    "add_gaussian_noise",
    "add_salt_pepper",
    "blur",
    "augment_image",
    "derive_seed",
]


@dataclass(frozen=True)
class NoiseConfig:
    """Corruption magnitudes on the 8-bit intensity scale.

    ``augment_prob`` is the chance a training sample is corrupted at all;
    when it fires, one of the three corruption types is chosen uniformly.
    """

    gaussian_sigma: float = 10.0
    sp_density: float = 0.02
    blur_sigma: float = 1.0
    augment_prob: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.gaussian_sigma < 0 or self.blur_sigma < 0:
            raise ValueError("noise magnitudes must be non-negative")
        if not (0.0 <= self.sp_density <= 1.0):
            raise ValueError(f"sp_density must lie in [0, 1], got {self.sp_density}")
        if not (0.0 <= self.augment_prob <= 1.0):
            raise ValueError(f"augment_prob must lie in [0, 1], got {self.augment_prob}")


def _check_image(image: np.ndarray) -> None:
    if image.ndim != 3 or image.shape[2] != 3 or image.dtype != np.uint8:
        raise ValueError(f"expected HxWx3 uint8 image, got shape {image.shape} dtype {image.dtype}")


def derive_seed(*parts) -> int:
    """Stable 63-bit seed from arbitrary parts (process-independent)."""
    key = ":".join(str(p) for p in parts).encode()
    return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "big") >> 1


def add_gaussian_noise(image: np.ndarray, sigma: float, seed: int = 0) -> np.ndarray:
    """Add i.i.d. zero-mean Gaussian noise per pixel and channel.

    Added in float, clamped to [0, 255], rounded back to uint8.
    """
    _check_image(image)
    if sigma == 0:
        return image.copy()
    rng = np.random.default_rng(seed)
    noisy = image.astype(np.float64) + rng.normal(0.0, sigma, image.shape)
    return np.clip(np.rint(noisy), 0, 255).astype(np.uint8)


def add_salt_pepper(image: np.ndarray, density: float, seed: int = 0) -> np.ndarray:
    """Corrupt each pixel with probability ``density``.

    A corrupted pixel is set to 0 or 255 with equal probability, applied
    across all three channels.
    """
    _check_image(image)
    if not (0.0 <= density <= 1.0):
        raise ValueError(f"density must lie in [0, 1], got {density}")
    out = image.copy()
    if density == 0:
        return out
    rng = np.random.default_rng(seed)
    h, w = image.shape[:2]
    hit = rng.random((h, w)) < density
    salt = rng.random((h, w)) < 0.5
    out[hit & salt] = 255
    out[hit & ~salt] = 0
    return out


def _gaussian_kernel(sigma: float) -> np.ndarray:
    radius = math.ceil(3 * sigma)
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (xs / sigma) ** 2)
    return k / k.sum()


def blur(image: np.ndarray, sigma: float) -> np.ndarray:
    """Gaussian blur with kernel radius ceil(3*sigma) and edge-replicate padding."""
    _check_image(image)
    if sigma == 0:
        return image.copy()
    k = _gaussian_kernel(sigma)
    r = len(k) // 2
    work = image.astype(np.float64)
    # Separable convolution along each image axis.
    for axis in (0, 1):
        pad = [(0, 0)] * 3
        pad[axis] = (r, r)
        padded = np.pad(work, pad, mode="edge")
        acc = np.zeros_like(work)
        for i, weight in enumerate(k):
            sl = [slice(None)] * 3
            sl[axis] = slice(i, i + work.shape[axis])
            acc += weight * padded[tuple(sl)]
        work = acc
    return np.clip(np.rint(work), 0, 255).astype(np.uint8)


def augment_image(image: np.ndarray, config: NoiseConfig, seed: int) -> np.ndarray:
    """Randomly corrupt one training image.

    With probability ``config.augment_prob`` applies exactly one corruption,
    the type drawn uniformly from {gaussian, salt-and-pepper, blur}.
    Deterministic for a fixed seed.
    """
    rng = np.random.default_rng(seed)
    if rng.random() >= config.augment_prob:
        return image.copy()
    mode = rng.integers(3)
    sub = int(rng.integers(2**31))
    if mode == 0:
        return add_gaussian_noise(image, config.gaussian_sigma, sub)
    if mode == 1:
        return add_salt_pepper(image, config.sp_density, sub)
    return blur(image, config.blur_sigma)
