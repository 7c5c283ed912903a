"""Growth compensation: isotropic scaling of minutiae sets and images.

Infants enrolled before the age cutoff get their enrollment data scaled up
so it overlays probe impressions captured months later. Minutiae scale
coordinate-wise about the origin with directions untouched; images resize
with Catmull-Rom bicubic interpolation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import GrayImage, Minutia, MinutiaeSet, ValidationError


@dataclass(frozen=True)
class AgingPolicy:
    """Static growth model: one scale factor below an enrollment-age cutoff."""

    scale_factor: float = 1.1
    age_cutoff_weeks: int = 13

    def __post_init__(self) -> None:
        if not (math.isfinite(self.scale_factor) and self.scale_factor >= 1.0):
            raise ValidationError(f"scale_factor must be >= 1, got {self.scale_factor!r}")
        if int(self.age_cutoff_weeks) <= 0:
            raise ValidationError(f"age_cutoff_weeks must be positive, got {self.age_cutoff_weeks!r}")
        object.__setattr__(self, "age_cutoff_weeks", int(self.age_cutoff_weeks))


def select_scale_factor(age_weeks_at_capture: int, policy: AgingPolicy) -> float:
    """Scale to apply at enrollment: policy factor below the cutoff, else 1."""
    if age_weeks_at_capture < 0:
        raise ValidationError(f"age must be non-negative, got {age_weeks_at_capture!r}")
    return policy.scale_factor if age_weeks_at_capture < policy.age_cutoff_weeks else 1.0


def age_minutiae_set(mset: MinutiaeSet, scale: float) -> MinutiaeSet:
    """Scale every minutia position by ``scale`` about the origin."""
    if not (math.isfinite(scale) and scale > 0.0):
        raise ValidationError(f"scale must be positive, got {scale!r}")
    scaled = tuple(Minutia(m.x * scale, m.y * scale, m.theta) for m in mset)
    return MinutiaeSet(scaled, mset.source_ppi)


def _catmull_rom_weights(t: np.ndarray) -> np.ndarray:
    """Weights of the 4 taps around fractional offset t, cubic kernel a=-0.5."""
    t = np.asarray(t, dtype=np.float64)
    t2 = t * t
    t3 = t2 * t
    w0 = 0.5 * (-t3 + 2.0 * t2 - t)
    w1 = 0.5 * (3.0 * t3 - 5.0 * t2 + 2.0)
    w2 = 0.5 * (-3.0 * t3 + 4.0 * t2 + t)
    w3 = 0.5 * (t3 - t2)
    return np.stack([w0, w1, w2, w3], axis=0)


def _resample_axis(values: np.ndarray, new_len: int, axis: int) -> np.ndarray:
    """Cubic interpolation along one axis with clamped borders."""
    old_len = values.shape[axis]
    scale = new_len / old_len
    # Map output pixel centers onto input coordinates.
    coords = (np.arange(new_len, dtype=np.float64) + 0.5) / scale - 0.5
    base = np.floor(coords).astype(np.int64)
    frac = coords - base
    weights = _catmull_rom_weights(frac)
    moved = np.moveaxis(values, axis, 0)
    out = np.zeros((new_len,) + moved.shape[1:], dtype=np.float64)
    for tap in range(4):
        idx = np.clip(base + tap - 1, 0, old_len - 1)
        out += weights[tap].reshape((new_len,) + (1,) * (moved.ndim - 1)) * moved[idx]
    return np.moveaxis(out, 0, axis)


def resize_bicubic(pixels: np.ndarray, new_height: int, new_width: int) -> np.ndarray:
    """Separable Catmull-Rom resize of a 2-d array, output clipped to [0, 1]."""
    if new_height <= 0 or new_width <= 0:
        raise ValidationError("resize dimensions must be positive")
    out = np.asarray(pixels, dtype=np.float64)
    if out.shape[0] != new_height:
        out = _resample_axis(out, new_height, axis=0)
    if out.shape[1] != new_width:
        out = _resample_axis(out, new_width, axis=1)
    return np.clip(out, 0.0, 1.0)


def _scaled_ppi(ppi: int, scale: float) -> int:
    return max(1, int(round(ppi * scale)))


def age_image(img: GrayImage, scale: float) -> GrayImage:
    """Resize an image by ``scale`` with bicubic interpolation, rescaling ppi."""
    if not (math.isfinite(scale) and scale > 0.0):
        raise ValidationError(f"scale must be positive, got {scale!r}")
    new_h = max(1, int(round(img.height * scale)))
    new_w = max(1, int(round(img.width * scale)))
    if new_h == img.height and new_w == img.width and scale == 1.0:
        return GrayImage(img.pixels, img.ppi)
    return GrayImage(resize_bicubic(img.pixels, new_h, new_w), _scaled_ppi(img.ppi, scale))


def downscale_for_external(img: GrayImage) -> GrayImage:
    """Half-size bicubic resize used before handing images to an external matcher."""
    new_h = max(1, int(round(img.height * 0.5)))
    new_w = max(1, int(round(img.width * 0.5)))
    return GrayImage(resize_bicubic(img.pixels, new_h, new_w), _scaled_ppi(img.ppi, 0.5))
