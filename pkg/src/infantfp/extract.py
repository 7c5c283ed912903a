"""Classical minutiae extraction from grayscale fingerprint images.

Pipeline: intensity normalization, block-wise ridge orientation estimation by
gradient least squares, oriented Gabor enhancement, binarization plus
thinning, and crossing-number analysis of the ridge skeleton with spurious
minutiae suppression. Ridges are dark pixels throughout. All spatial
parameters are expressed at 500 ppi and scaled linearly with the image
resolution, so low- and high-resolution inputs share one code path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.ndimage import distance_transform_edt, gaussian_filter
from scipy.signal import fftconvolve

from .core import GrayImage, Minutia, MinutiaeSet, TWO_PI, ValidationError, wrap_angle
from .minmap import angle_difference

ENDING = "ending"
BIFURCATION = "bifurcation"

_N_GABOR_ORIENTATIONS = 16
_REFERENCE_PPI = 500
# Infant inter-ridge spacing is about 5 px at 500 ppi; used when no
# wavelength is configured or estimable.
_DEFAULT_WAVELENGTH_500 = 5.0


@dataclass(frozen=True)
class ExtractParams:
    """Knobs of the classical pipeline, expressed at 500 ppi.

    block_size 12 is about 2.4 infant inter-ridge periods, which keeps the
    orientation field responsive enough for loop and whorl curvature.
    """

    block_size: int = 12
    gabor_wavelength: Optional[float] = None
    binarize_threshold: str = "otsu"
    min_quality_coherence: float = 0.3
    border_margin: int = 12

    def __post_init__(self) -> None:
        if int(self.block_size) <= 0:
            raise ValidationError(f"block_size must be positive, got {self.block_size!r}")
        if self.gabor_wavelength is not None and not (self.gabor_wavelength > 0):
            raise ValidationError(f"gabor_wavelength must be positive, got {self.gabor_wavelength!r}")
        if self.binarize_threshold not in ("otsu", "mean"):
            raise ValidationError(f"unknown binarize_threshold {self.binarize_threshold!r}")
        if not (0.0 <= self.min_quality_coherence <= 1.0):
            raise ValidationError("min_quality_coherence must lie in [0, 1]")
        if int(self.border_margin) < 0:
            raise ValidationError("border_margin must be non-negative")

    def scale_for(self, ppi: int) -> float:
        return ppi / _REFERENCE_PPI


@dataclass(frozen=True)
class OrientationField:
    """Block-wise ridge orientations in [0, pi) with per-block coherence."""

    block_size: int
    angles: np.ndarray
    coherence: np.ndarray

    def __post_init__(self) -> None:
        angles = np.asarray(self.angles, dtype=np.float64)
        coh = np.asarray(self.coherence, dtype=np.float64)
        if angles.shape != coh.shape or angles.ndim != 2:
            raise ValidationError("angles and coherence must be 2-d grids of equal shape")
        if angles.size and (angles.min() < 0.0 or angles.max() >= math.pi):
            raise ValidationError("orientations must lie in [0, pi)")
        if coh.size and (coh.min() < -1e-12 or coh.max() > 1.0 + 1e-12):
            raise ValidationError("coherence must lie in [0, 1]")
        object.__setattr__(self, "angles", angles)
        object.__setattr__(self, "coherence", np.clip(coh, 0.0, 1.0))

    def block_of(self, x: float, y: float) -> tuple[int, int]:
        bi = min(self.angles.shape[0] - 1, int(y) // self.block_size)
        bj = min(self.angles.shape[1] - 1, int(x) // self.block_size)
        return bi, bj


def normalize_image(img: GrayImage, target_std: float = 0.15) -> GrayImage:
    """Shift and scale intensities to mean 0.5 and a fixed spread.

    The affine map targets ``target_std``; when clipping to [0, 1] disturbs
    the mean, the offset is re-solved by bisection so the output mean is 0.5
    to within 1e-9. Constant images map to all 0.5.
    """
    px = img.pixels
    std = float(px.std())
    if std < 1e-12:
        return GrayImage(np.full_like(px, 0.5), img.ppi)
    scaled = (px - float(px.mean())) * (target_std / std)

    def mean_at(offset: float) -> float:
        return float(np.clip(scaled + offset, 0.0, 1.0).mean())

    lo, hi = 0.0, 1.0
    if mean_at(0.5) > 0.5:
        lo, hi = 0.0, 0.5
    else:
        lo, hi = 0.5, 1.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if mean_at(mid) < 0.5:
            lo = mid
        else:
            hi = mid
    offset = 0.5 * (lo + hi)
    return GrayImage(np.clip(scaled + offset, 0.0, 1.0), img.ppi)


def _block_sums(values: np.ndarray, block: int) -> np.ndarray:
    h, w = values.shape
    bh = math.ceil(h / block)
    bw = math.ceil(w / block)
    padded = np.zeros((bh * block, bw * block), dtype=np.float64)
    padded[:h, :w] = values
    return padded.reshape(bh, block, bw, block).sum(axis=(1, 3))


def estimate_orientation_field(img: GrayImage, params: ExtractParams) -> OrientationField:
    """Dominant ridge orientation per block via doubled-angle gradient averaging.

    Coherence is the normalized eigen-gap of the block gradient covariance:
    1 for perfectly parallel ridges, 0 for isotropic or flat blocks.
    """
    block = max(4, int(round(params.block_size * params.scale_for(img.ppi))))
    gy, gx = np.gradient(img.pixels)
    gxx = _block_sums(gx * gx, block)
    gyy = _block_sums(gy * gy, block)
    gxy = _block_sums(gx * gy, block)

    diff = gxx - gyy
    cross = 2.0 * gxy
    energy = gxx + gyy
    magnitude = np.hypot(diff, cross)
    coherence = np.where(energy > 1e-12, magnitude / np.maximum(energy, 1e-12), 0.0)

    normal = 0.5 * np.arctan2(cross, diff)
    ridge = np.mod(normal + math.pi / 2.0, math.pi)
    ridge = np.where(energy > 1e-12, ridge, 0.0)
    ridge = np.where(ridge >= math.pi, 0.0, ridge)
    return OrientationField(block, ridge, coherence)


def estimate_ridge_wavelength(img: GrayImage, params: ExtractParams) -> float:
    """Dominant ridge period in pixels from the radial power spectrum."""
    if params.gabor_wavelength is not None:
        return params.gabor_wavelength * params.scale_for(img.ppi)
    px = img.pixels - img.pixels.mean()
    h, w = px.shape
    win = np.outer(np.hanning(h), np.hanning(w))
    spectrum = np.abs(np.fft.rfft2(px * win)) ** 2
    fy = np.fft.fftfreq(h)[:, None]
    fx = np.fft.rfftfreq(w)[None, :]
    freq = np.hypot(fy, fx)
    fallback = _DEFAULT_WAVELENGTH_500 * params.scale_for(img.ppi)
    band = (freq >= 1.0 / (6.0 * fallback)) & (freq <= min(0.5, 2.0 / fallback))
    if not band.any() or spectrum[band].max() <= 0:
        return fallback
    peak = np.argmax(np.where(band, spectrum, 0.0))
    peak_freq = float(freq.flat[peak])
    if peak_freq <= 0:
        return fallback
    return 1.0 / peak_freq


def _gabor_kernel(wavelength: float, orientation: float) -> np.ndarray:
    """Even Gabor tuned to ridges at ``orientation``; zero mean."""
    sigma_u = 0.5 * wavelength   # across the ridge
    sigma_v = 0.7 * wavelength   # along the ridge
    half = int(math.ceil(2.5 * max(sigma_u, sigma_v)))
    ys, xs = np.mgrid[-half:half + 1, -half:half + 1].astype(np.float64)
    # u runs along the ridge normal, v along the ridge.
    normal = orientation + math.pi / 2.0
    u = xs * math.cos(normal) + ys * math.sin(normal)
    v = -xs * math.sin(normal) + ys * math.cos(normal)
    kernel = np.exp(-(u * u / (2 * sigma_u**2) + v * v / (2 * sigma_v**2))) * np.cos(TWO_PI * u / wavelength)
    return kernel - kernel.mean()


def smooth_pixel_orientations(field: OrientationField, height: int, width: int) -> np.ndarray:
    """Per-pixel ridge orientations in [0, pi) from a smoothed block field.

    The doubled-angle vector field (coherence weighted) is upsampled and
    blurred, which keeps the estimate usable in curved regions where a
    single block straddles a wide range of directions.
    """
    doubled = 2.0 * field.angles
    cos2 = np.cos(doubled) * field.coherence
    sin2 = np.sin(doubled) * field.coherence
    bs = field.block_size
    up_c = np.repeat(np.repeat(cos2, bs, axis=0), bs, axis=1)[:height, :width]
    up_s = np.repeat(np.repeat(sin2, bs, axis=0), bs, axis=1)[:height, :width]
    sigma = 0.75 * bs
    up_c = gaussian_filter(up_c, sigma, mode="nearest")
    up_s = gaussian_filter(up_s, sigma, mode="nearest")
    return np.mod(0.5 * np.arctan2(up_s, up_c), math.pi)


def _pixel_orientation_bins(field: OrientationField, height: int, width: int) -> np.ndarray:
    theta = smooth_pixel_orientations(field, height, width)
    step = math.pi / _N_GABOR_ORIENTATIONS
    return np.mod(np.round(theta / step).astype(np.int64), _N_GABOR_ORIENTATIONS)


def enhance(img: GrayImage, field: OrientationField, params: ExtractParams) -> GrayImage:
    """Oriented Gabor filtering steered by the block orientation field.

    The filter response is softly renormalized with tanh, which sharpens
    ridge/valley contrast; structure-free inputs come out flat at 0.5.
    """
    wavelength = estimate_ridge_wavelength(img, params)
    signal = 0.5 - img.pixels  # positive on (dark) ridges

    step = math.pi / _N_GABOR_ORIENTATIONS
    pixel_bins = _pixel_orientation_bins(field, img.height, img.width)

    response = np.zeros_like(signal)
    for q in np.unique(pixel_bins):
        kernel = _gabor_kernel(wavelength, q * step)
        filtered = fftconvolve(signal, kernel, mode="same")
        response = np.where(pixel_bins == q, filtered, response)

    scale = float(np.abs(response).mean())
    if scale < 1e-9:
        return GrayImage(np.full_like(signal, 0.5), img.ppi)
    out = 0.5 - 0.5 * np.tanh(response / (2.0 * scale))
    return GrayImage(np.clip(out, 0.0, 1.0), img.ppi)


def _otsu_threshold(px: np.ndarray) -> float:
    hist, edges = np.histogram(px, bins=256, range=(0.0, 1.0))
    total = hist.sum()
    if total == 0:
        return 0.0
    centers = 0.5 * (edges[:-1] + edges[1:])
    weight_lo = np.cumsum(hist)
    weight_hi = total - weight_lo
    sum_lo = np.cumsum(hist * centers)
    sum_total = sum_lo[-1]
    valid = (weight_lo > 0) & (weight_hi > 0)
    mean_lo = np.where(valid, sum_lo / np.maximum(weight_lo, 1), 0.0)
    mean_hi = np.where(valid, (sum_total - sum_lo) / np.maximum(weight_hi, 1), 0.0)
    between = np.where(valid, weight_lo * weight_hi * (mean_lo - mean_hi) ** 2, -1.0)
    return float(centers[int(np.argmax(between))])


def _neighbor_views(mask: np.ndarray) -> list[np.ndarray]:
    """8-neighborhoods of every pixel, clockwise from north (padded borders off)."""
    p = np.pad(mask, 1, constant_values=False)
    return [
        p[:-2, 1:-1],   # N
        p[:-2, 2:],     # NE
        p[1:-1, 2:],    # E
        p[2:, 2:],      # SE
        p[2:, 1:-1],    # S
        p[2:, :-2],     # SW
        p[1:-1, :-2],   # W
        p[:-2, :-2],    # NW
    ]


def _transitions(neigh: list[np.ndarray]) -> np.ndarray:
    count = np.zeros(neigh[0].shape, dtype=np.int64)
    for a, b in zip(neigh, neigh[1:] + neigh[:1]):
        count += (~a) & b
    return count


def crossing_number(neighborhood) -> int:
    """0-to-1 transitions around an 8-neighborhood given clockwise from north.

    1 marks a ridge ending, 3 a bifurcation; 2 is an interior ridge pixel.
    """
    bits = [bool(v) for v in neighborhood]
    if len(bits) != 8:
        raise ValidationError("crossing_number expects exactly 8 neighbor values")
    return sum((not a) and b for a, b in zip(bits, bits[1:] + bits[:1]))


def _thin_pass(mask: np.ndarray, second: bool) -> np.ndarray:
    neigh = _neighbor_views(mask)
    n, ne, e, se, s, sw, w, nw = neigh
    count = sum(x.astype(np.int64) for x in neigh)
    trans = _transitions(neigh)
    if not second:
        cond = (~(n & e & s)) & (~(e & s & w))
    else:
        cond = (~(n & e & w)) & (~(n & s & w))
    remove = mask & (count >= 2) & (count <= 6) & (trans == 1) & cond
    return mask & ~remove


def _remove_2x2_blocks(mask: np.ndarray) -> np.ndarray:
    """Drop redundant pixels so no 2x2 all-ridge block survives.

    A pixel is removed only when its 8-neighbors stay a single connected run,
    which preserves skeleton connectivity.
    """
    mask = mask.copy()
    while True:
        blocks = mask[:-1, :-1] & mask[1:, :-1] & mask[:-1, 1:] & mask[1:, 1:]
        rows, cols = np.nonzero(blocks)
        if rows.size == 0:
            return mask
        changed = False
        for r, c in zip(rows.tolist(), cols.tolist()):
            for dr, dc in ((0, 0), (0, 1), (1, 0), (1, 1)):
                y, x = r + dr, c + dc
                if not mask[y, x]:
                    continue
                neigh = _neighbors_of(mask, y, x)
                if sum((not a) and b for a, b in zip(neigh, neigh[1:] + neigh[:1])) == 1:
                    mask[y, x] = False
                    changed = True
                    break
        if not changed:
            # Degenerate tie: drop the top-left pixel of the first block.
            mask[rows[0], cols[0]] = False
    return mask


def _neighbors_of(mask: np.ndarray, y: int, x: int) -> list[bool]:
    h, w = mask.shape
    out = []
    for dy, dx in ((-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1)):
        yy, xx = y + dy, x + dx
        out.append(bool(mask[yy, xx]) if 0 <= yy < h and 0 <= xx < w else False)
    return out


def binarize_and_thin(img: GrayImage, params: ExtractParams) -> GrayImage:
    """Threshold dark ridges and thin them to a one-pixel-wide skeleton."""
    px = img.pixels
    if float(px.max() - px.min()) < 1e-6:
        return GrayImage(np.zeros_like(px), img.ppi)
    if params.binarize_threshold == "otsu":
        threshold = _otsu_threshold(px)
    else:
        threshold = float(px.mean())
    mask = px < threshold

    while True:
        after = _thin_pass(_thin_pass(mask, second=False), second=True)
        if np.array_equal(after, mask):
            break
        mask = after
    mask = _remove_2x2_blocks(mask)
    return GrayImage(mask.astype(np.float64), img.ppi)


def segmentation_mask(img: GrayImage, params: ExtractParams) -> np.ndarray:
    """Boolean foreground mask from block intensity spread."""
    block = max(4, int(round(params.block_size * params.scale_for(img.ppi))))
    h, w = img.pixels.shape
    ones = _block_sums(np.ones_like(img.pixels), block)
    sums = _block_sums(img.pixels, block)
    sq = _block_sums(img.pixels**2, block)
    var = np.maximum(sq / ones - (sums / ones) ** 2, 0.0)
    std = np.sqrt(var)
    cut = 0.35 * float(std.max()) if std.max() > 0 else 0.0
    grid = std > max(cut, 1e-3)
    mask = np.repeat(np.repeat(grid, block, axis=0), block, axis=1)
    return mask[:h, :w]


_OFFSETS = ((-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1))


def _on_neighbors(mask: np.ndarray, y: int, x: int) -> list[tuple[int, int]]:
    h, w = mask.shape
    return [(y + dy, x + dx) for dy, dx in _OFFSETS
            if 0 <= y + dy < h and 0 <= x + dx < w and mask[y + dy, x + dx]]


def _neighbor_runs(mask: np.ndarray, y: int, x: int,
                   visited: Optional[set] = None) -> list[list[tuple[int, int]]]:
    """Cyclic runs of contiguous on-neighbors around a pixel.

    Each run is one skeleton branch; a crossing number of n yields n runs.
    """
    h, w = mask.shape
    ring = [(y + dy, x + dx) for dy, dx in _OFFSETS]
    on = [0 <= py < h and 0 <= px < w and bool(mask[py, px])
          and (visited is None or (py, px) not in visited) for py, px in ring]
    if all(on):
        return [ring]
    starts = [i for i in range(8) if on[i] and not on[(i - 1) % 8]]
    runs = []
    for start in starts:
        run = []
        i = start
        while on[i]:
            run.append((i, ring[i]))
            i = (i + 1) % 8
        # Prefer a 4-connected representative (even ring index) as the step.
        rep = next((p for idx, p in run if idx % 2 == 0), run[0][1])
        runs.append([rep] + [p for _, p in run if p != rep])
    return runs


def _walk_branch(mask: np.ndarray, start_y: int, start_x: int, first_run: list[tuple[int, int]],
                 max_steps: int) -> list[tuple[int, int]]:
    """Follow one skeleton branch run from ``start``; returns the path pixels.

    The start pixel's whole neighborhood counts as visited so sibling
    branches touching diagonally do not read as forks, and staircase double
    corners are consumed one run at a time.
    """
    visited = {(start_y, start_x)}
    visited.update(_on_neighbors(mask, start_y, start_x))
    cur = first_run[0]
    path = [cur]
    while len(path) < max_steps:
        runs = _neighbor_runs(mask, cur[0], cur[1], visited)
        if len(runs) != 1:
            break  # junction or dead end
        visited.update(runs[0])
        cur = runs[0][0]
        path.append(cur)
    return path


def _branch_direction(y: int, x: int, path: list[tuple[int, int]]) -> float:
    """Direction from (y, x) toward the centroid of a branch path.

    The centroid averages out pixel quantization and halves the bias a
    curving ridge puts on an endpoint-based estimate.
    """
    cy = float(np.mean([p[0] for p in path]))
    cx = float(np.mean([p[1] for p in path]))
    return math.atan2(cy - y, cx - x)


def _mean_direction(dirs: list[float]) -> float:
    return math.atan2(sum(math.sin(d) for d in dirs), sum(math.cos(d) for d in dirs))


def _corridor_gap(skeleton_gap: np.ndarray, y: int, x: int, direction: float,
                  period: float) -> float:
    """Mean distance-to-skeleton sampled a short way out along ``direction``."""
    h, w = skeleton_gap.shape
    total = 0.0
    for frac in (0.5, 0.8, 1.1):
        sy = min(h - 1, max(0, int(round(y + frac * period * math.sin(direction)))))
        sx = min(w - 1, max(0, int(round(x + frac * period * math.cos(direction)))))
        total += float(skeleton_gap[sy, sx])
    return total / 3.0


def _prune_spurs(mask: np.ndarray, max_len: int) -> np.ndarray:
    """Remove short branches that dangle off a junction."""
    mask = mask.copy()
    for _ in range(2):
        neigh = _neighbor_views(mask)
        trans = _transitions(neigh)
        endings = np.argwhere(mask & (trans == 1))
        removed_any = False
        for y, x in endings.tolist():
            spur = {(y, x)}
            cur = (y, x)
            steps = 0
            hit_junction = False
            while steps <= max_len:
                runs = _neighbor_runs(mask, cur[0], cur[1], spur)
                if len(runs) != 1:
                    hit_junction = len(runs) > 1
                    break
                spur.update(runs[0])
                cur = runs[0][0]
                steps += 1
            if hit_junction and steps <= max_len:
                for yy, xx in spur:
                    mask[yy, xx] = False
                removed_any = True
        if not removed_any:
            break
    return mask


def extract_minutiae_labeled(skeleton: GrayImage, field: Optional[OrientationField],
                             params: ExtractParams,
                             mask: Optional[np.ndarray] = None) -> list[tuple[Minutia, str]]:
    """Crossing-number minutiae with type labels, spurious features suppressed.

    Endings point along the ridge they terminate; bifurcations point along
    the valley between their two closest branches. Minutiae near the border,
    in low-coherence blocks, outside the foreground mask, or forming an
    opposing-ending pair closer than one ridge period are removed.
    """
    ridge = skeleton.pixels > 0.5
    scale = params.scale_for(skeleton.ppi)
    period = (params.gabor_wavelength or _DEFAULT_WAVELENGTH_500) * scale
    margin = params.border_margin * scale

    ridge = _prune_spurs(ridge, max_len=max(2, int(round(0.7 * period))))
    neigh = _neighbor_views(ridge)
    trans = _transitions(neigh)
    walk_len = max(4, int(round(1.2 * period)))

    raw: list[tuple[int, int, str]] = []
    for y, x in np.argwhere(ridge & ((trans == 1) | (trans == 3))).tolist():
        raw.append((y, x, ENDING if trans[y, x] == 1 else BIFURCATION))

    # Junctions often flag 2 adjacent pixels; keep the first in raster order.
    deduped: list[tuple[int, int, str]] = []
    for y, x, kind in raw:
        if any(k == kind and (y - py) ** 2 + (x - px) ** 2 <= 8 for py, px, k in deduped):
            continue
        deduped.append((y, x, kind))

    pixel_theta = None
    if field is not None:
        pixel_theta = smooth_pixel_orientations(field, ridge.shape[0], ridge.shape[1])
    skeleton_gap = distance_transform_edt(~ridge)

    labeled: list[tuple[Minutia, str]] = []
    for y, x, kind in deduped:
        paths = []
        for run in _neighbor_runs(ridge, y, x):
            path = _walk_branch(ridge, y, x, run, walk_len)
            if path and path[-1] != (y, x):
                paths.append(path)
        if not paths:
            continue
        dirs = [_branch_direction(y, x, p) for p in paths]
        if kind == ENDING:
            raw = dirs[0]
        else:
            if len(dirs) < 3:
                continue  # junction too tangled to orient
            # Stem = branch most opposed to the other two; the minutia points
            # along the valley between the fork, the bisector of the others.
            stem = max(range(len(dirs)),
                       key=lambda i: angle_difference(
                           dirs[i], _mean_direction([d for j, d in enumerate(dirs) if j != i])))
            raw = _mean_direction([d for j, d in enumerate(dirs) if j != stem])
        if pixel_theta is not None:
            # Snap to the local ridge-flow axis: the field fixes the line,
            # evidence along each side fixes which way along it. An ending
            # points into its continuing ridge (skeleton hugs the axis); a
            # bifurcation points down the valley between its forks
            # (skeleton stays off the axis).
            axis = float(pixel_theta[y, x])
            if kind == ENDING:
                raw = axis if angle_difference(axis, raw) <= math.pi / 2.0 else axis + math.pi
            else:
                fwd = _corridor_gap(skeleton_gap, y, x, axis, period)
                bwd = _corridor_gap(skeleton_gap, y, x, axis + math.pi, period)
                raw = axis if fwd >= bwd else axis + math.pi
        labeled.append((Minutia(float(x), float(y), wrap_angle(raw)), kind))

    # Broken-ridge suppression: opposing endings closer than one period.
    drop: set[int] = set()
    endings = [(i, m) for i, (m, kind) in enumerate(labeled) if kind == ENDING]
    for a in range(len(endings)):
        ia, ma = endings[a]
        if ia in drop:
            continue
        for b in range(a + 1, len(endings)):
            ib, mb = endings[b]
            if ib in drop:
                continue
            if math.hypot(ma.x - mb.x, ma.y - mb.y) < period and angle_difference(ma.theta, mb.theta) > 2.0:
                drop.add(ia)
                drop.add(ib)
                break

    h, w = ridge.shape
    mask_depth = None
    if mask is not None:
        mask_depth = distance_transform_edt(mask)
    kept: list[tuple[Minutia, str]] = []
    for i, (m, kind) in enumerate(labeled):
        if i in drop:
            continue
        if m.x < margin or m.y < margin or m.x >= w - margin or m.y >= h - margin:
            continue
        if field is not None:
            bi, bj = field.block_of(m.x, m.y)
            if field.coherence[bi, bj] < params.min_quality_coherence:
                continue
        if mask_depth is not None and mask_depth[int(m.y), int(m.x)] <= margin:
            continue
        kept.append((m, kind))
    kept.sort(key=lambda item: (item[0].y, item[0].x))
    return kept


def extract_minutiae(skeleton: GrayImage, field: Optional[OrientationField],
                     params: ExtractParams, mask: Optional[np.ndarray] = None) -> MinutiaeSet:
    labeled = extract_minutiae_labeled(skeleton, field, params, mask)
    return MinutiaeSet(tuple(m for m, _ in labeled), skeleton.ppi)


def extract_from_image(img: GrayImage, params: ExtractParams) -> tuple[MinutiaeSet, list[tuple[Minutia, str]]]:
    """Full pipeline from raw grayscale image to minutiae."""
    normalized = normalize_image(img)
    field = estimate_orientation_field(normalized, params)
    enhanced = enhance(normalized, field, params)
    skeleton = binarize_and_thin(enhanced, params)
    mask = segmentation_mask(normalized, params)
    labeled = extract_minutiae_labeled(skeleton, field, params, mask)
    return MinutiaeSet(tuple(m for m, _ in labeled), img.ppi), labeled
