"""Encode minutiae sets as 12-channel Gaussian hot-spot maps and decode them back.

Each minutia contributes, at map cell (i=row, j=col, channel k), the product of
a spatial factor exp(-d^2 / (2*sigma_s^2)) with d the Euclidean distance from
(x, y) to the cell center (j, i), and an orientation factor
exp(-dphi(theta, 2*pi*k/12) / (2*sigma_s^2)) with dphi the circular distance
between angles. Decoding finds spatial peaks of the channel-summed map,
suppresses near-duplicates, and reads each peak's direction as the circular
weighted mean of the channel centers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import maximum_filter

from .core import MAP_CHANNELS, TWO_PI, Minutia, MinutiaeMap, MinutiaeSet, ValidationError, wrap_angle

CHANNEL_CENTERS = np.arange(MAP_CHANNELS) * TWO_PI / MAP_CHANNELS

# Contributions beyond this many sigmas are dropped when rasterizing
# (exp(-18) < 2e-8); the window is anchored to the minutia so integer
# translations shift the rasterized footprint exactly.
_WINDOW_SIGMAS = 6.0


@dataclass(frozen=True)
class MinmapParams:
    """Encoder width and decoder peak-picking parameters."""

    sigma_s: float = 6.0
    peak_threshold: float = 0.3
    nms_radius: float = 12.0

    def __post_init__(self) -> None:
        if not (math.isfinite(self.sigma_s) and self.sigma_s > 0):
            raise ValidationError(f"sigma_s must be positive, got {self.sigma_s!r}")
        if not (0.0 < self.peak_threshold <= 1.0):
            raise ValidationError(f"peak_threshold must lie in (0, 1], got {self.peak_threshold!r}")
        if not (math.isfinite(self.nms_radius) and self.nms_radius >= 1.0):
            raise ValidationError(f"nms_radius must be >= 1, got {self.nms_radius!r}")


def angle_difference(theta1: float, theta2: float) -> float:
    """Circular distance between two angles, in [0, pi]."""
    a = wrap_angle(float(theta1))
    b = wrap_angle(float(theta2))
    d = abs(a - b)
    return d if d <= math.pi else TWO_PI - d


def _angle_difference_vec(theta: float, centers: np.ndarray) -> np.ndarray:
    d = np.abs(np.mod(theta, TWO_PI) - centers)
    return np.minimum(d, TWO_PI - d)


def spatial_contribution(px: float, py: float, i: int, j: int, sigma_s: float) -> float:
    """Gaussian falloff with distance from (px, py) to cell center (col=j, row=i)."""
    if not (math.isfinite(sigma_s) and sigma_s > 0):
        raise ValidationError(f"sigma_s must be positive, got {sigma_s!r}")
    d2 = (px - j) ** 2 + (py - i) ** 2
    return math.exp(-d2 / (2.0 * sigma_s * sigma_s))


def orientation_contribution(theta: float, k: int, sigma_s: float) -> float:
    """Falloff with circular distance from theta to channel center 2*pi*k/12.

    The circular distance enters the exponent unsquared and shares sigma_s
    with the spatial factor.
    """
    if not (math.isfinite(sigma_s) and sigma_s > 0):
        raise ValidationError(f"sigma_s must be positive, got {sigma_s!r}")
    if not (0 <= int(k) < MAP_CHANNELS) or int(k) != k:
        raise ValidationError(f"channel index must be an integer in [0, {MAP_CHANNELS}), got {k!r}")
    dphi = angle_difference(theta, CHANNEL_CENTERS[int(k)])
    return math.exp(-dphi / (2.0 * sigma_s * sigma_s))


def encode_minutiae_map(mset: MinutiaeSet, height: int, width: int, params: MinmapParams) -> MinutiaeMap:
    """Rasterize a minutiae set into an (height, width, 12) hot-spot map.

    Minutiae are accumulated one at a time in list order, so encoding the
    union of two sets equals the element-wise sum of their encodings.
    """
    height = int(height)
    width = int(width)
    if height <= 0 or width <= 0:
        raise ValidationError("map dimensions must be positive")
    for m in mset:
        if not (0.0 <= m.x < width and 0.0 <= m.y < height):
            raise ValidationError(f"minutia ({m.x}, {m.y}) outside the {width}x{height} map")

    sigma = params.sigma_s
    inv = 1.0 / (2.0 * sigma * sigma)
    radius = int(math.ceil(_WINDOW_SIGMAS * sigma))
    values = np.zeros((height, width, MAP_CHANNELS), dtype=np.float64)

    for m in mset:
        co = np.exp(-_angle_difference_vec(m.theta, CHANNEL_CENTERS) * inv)
        cx, cy = m.x, m.y
        r0 = max(0, int(math.floor(cy)) - radius)
        r1 = min(height, int(math.ceil(cy)) + radius + 1)
        c0 = max(0, int(math.floor(cx)) - radius)
        c1 = min(width, int(math.ceil(cx)) + radius + 1)
        rows = np.arange(r0, r1, dtype=np.float64)
        cols = np.arange(c0, c1, dtype=np.float64)
        d2 = (cols[None, :] - cx) ** 2 + (rows[:, None] - cy) ** 2
        spatial = np.exp(-d2 * inv)
        values[r0:r1, c0:c1, :] += spatial[:, :, None] * co[None, None, :]

    return MinutiaeMap(values)


def decode_minutiae_map(h: MinutiaeMap, params: MinmapParams, source_ppi: int = 500) -> MinutiaeSet:
    """Recover a minutiae set from a hot-spot map.

    Candidate peaks are cells of the channel-summed map that are at least
    peak_threshold and not exceeded by any 8-neighbour; exact-tie plateaus
    yield multiple candidates which the radius suppression then dedupes,
    keeping the higher peak and breaking ties by (row, col) order.
    """
    summed = h.values.sum(axis=2)
    if summed.size == 0:
        return MinutiaeSet((), source_ppi)

    footprint = np.ones((3, 3), dtype=bool)
    footprint[1, 1] = False
    neighbor_max = maximum_filter(summed, footprint=footprint, mode="constant", cval=-np.inf)
    candidates = (summed >= neighbor_max) & (summed >= params.peak_threshold)
    rows, cols = np.nonzero(candidates)
    if rows.size == 0:
        return MinutiaeSet((), source_ppi)

    peaks = summed[rows, cols]
    order = np.lexsort((cols, rows, -peaks))
    kept_rc: list[tuple[int, int]] = []
    r_min = params.nms_radius
    for idx in order:
        r, c = int(rows[idx]), int(cols[idx])
        if any((r - kr) ** 2 + (c - kc) ** 2 < r_min * r_min for kr, kc in kept_rc):
            continue
        kept_rc.append((r, c))

    minutiae = []
    for r, c in kept_rc:
        channel_values = h.values[r, c, :]
        resultant = complex(
            float(np.dot(channel_values, np.cos(CHANNEL_CENTERS))),
            float(np.dot(channel_values, np.sin(CHANNEL_CENTERS))),
        )
        theta = wrap_angle(math.atan2(resultant.imag, resultant.real)) if abs(resultant) > 1e-12 else 0.0
        minutiae.append(Minutia(float(c), float(r), theta))
    minutiae.sort(key=lambda m: (m.y, m.x))
    return MinutiaeSet(tuple(minutiae), source_ppi)


def dump_map_channels(h: MinutiaeMap, directory, prefix: str = "map") -> list[Path]:
    """Write each channel as a plain-text float grid for inspection.

    ``<prefix>_ch<k>.txt`` holds a ``width height channel`` header line and
    then one whitespace-separated row of values per map row.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for k in range(h.channels):
        path = directory / f"{prefix}_ch{k:02d}.txt"
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"{h.width} {h.height} {k}\n")
            for row in h.values[:, :, k]:
                fh.write(" ".join(f"{v:.9g}" for v in row) + "\n")
        paths.append(path)
    return paths
