"""Synthetic longitudinal fingerprint generator with exact ground truth.

A master finger is a smooth ridge-phase field (arch, loop, or whorl family)
plus a set of planted phase dislocations. Rendering takes the cosine of the
total phase, so ridges follow the smooth field's level sets and every
dislocation produces exactly one ridge ending or bifurcation at a known
position with a known direction. Impressions re-evaluate the analytic field
under a similarity transform (growth, rotation, translation) and then apply
seeded degradations (noise, blur, moisture blotches), so ground-truth
minutiae transport through the transform exactly.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from datetime import date, timedelta
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .aging import resize_bicubic
from .core import Gender, GrayImage, Minutia, MinutiaeSet, Template, Thumb, ValidationError, wrap_angle
from .match import fallback_embedding
from .iptf import save_template
from .pgm import write_pgm

SYNTH_PPI = 1000

# Rotating the local flow direction by this signed quarter turn, oriented by
# the dislocation's winding sign, gives the direction the terminating ridge
# (or valley) points; fixed once against the extractor's convention.
_SPIRAL_DIRECTION_SIGN = -1.0


class PatternClass(enum.Enum):
    ARCH = "arch"
    LOOP = "loop"
    WHORL = "whorl"


@dataclass(frozen=True)
class MasterFinger:
    """Deterministic synthetic finger with exact ground-truth minutiae."""

    finger_id: str
    pattern: PatternClass
    canvas: tuple[int, int]          # (height, width)
    ridge_period: float
    center: tuple[float, float]      # pattern anchor (x, y)
    tilt: float                      # pattern rotation, radians
    arch_amplitude: float
    arch_width: float
    pattern_radius: float
    spirals: tuple[tuple[float, float, int], ...]  # (x, y, winding sign)
    minutiae: MinutiaeSet

    def __post_init__(self) -> None:
        if self.ridge_period <= 2.0:
            raise ValidationError("ridge period must exceed 2 px")
        h, w = self.canvas
        for m in self.minutiae:
            if not (0 <= m.x < w and 0 <= m.y < h):
                raise ValidationError("ground-truth minutiae must lie on the canvas")


@dataclass(frozen=True)
class ImpressionParams:
    """Acquisition model for one rendered impression."""

    growth_lambda: float = 1.0
    rotation: float = 0.0
    translation: tuple[float, float] = (0.0, 0.0)
    noise_sigma: float = 0.0
    blur_radius: float = 0.0
    moisture: float = 0.0
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if not (self.growth_lambda >= 1.0):
            raise ValidationError("growth_lambda must be >= 1")
        if not (0.0 <= self.moisture <= 1.0):
            raise ValidationError("moisture must lie in [0, 1]")
        if self.noise_sigma < 0 or self.blur_radius < 0:
            raise ValidationError("noise_sigma and blur_radius must be non-negative")


@dataclass(frozen=True)
class DegradationProfile:
    noise_sigma: float
    blur_radius: float
    moisture: float
    max_rotation: float
    max_translation: float


PROFILES = {
    "clean": DegradationProfile(0.0, 0.0, 0.0, 0.03, 2.0),
    "mild": DegradationProfile(0.05, 0.5, 0.15, 0.10, 8.0),
    "hard": DegradationProfile(0.12, 1.1, 0.40, 0.21, 16.0),
}


def _rotated_frame(master: MasterFinger, x, y):
    cx, cy = master.center
    u = x - cx
    v = y - cy
    ct, st = math.cos(master.tilt), math.sin(master.tilt)
    return u * ct + v * st, -u * st + v * ct, ct, st


def _smooth_field(master: MasterFinger, x, y):
    """Smooth phase (radians) and its gradient in image coordinates."""
    ur, vr, ct, st = _rotated_frame(master, x, y)
    k = 2.0 * math.pi / master.ridge_period
    if master.pattern is PatternClass.WHORL:
        r = np.hypot(ur, vr)
        safe = np.maximum(r, 1e-9)
        f = r
        gu, gv = ur / safe, vr / safe
    elif master.pattern is PatternClass.ARCH:
        bump = np.exp(-((ur / master.arch_width) ** 2))
        f = vr - master.arch_amplitude * bump
        gu = master.arch_amplitude * (2.0 * ur / master.arch_width**2) * bump
        gv = np.ones_like(np.asarray(vr, dtype=np.float64))
    else:  # LOOP: rounded capsule distance to the half-line running down (+v)
        # The eps floor keeps the field C^1 across the spine: ridges run
        # parallel beside the spine below the core and hairpin around it
        # above, with a plain valley along the spine itself.
        eps = 0.5 * master.ridge_period
        vneg = np.minimum(np.asarray(vr, dtype=np.float64), 0.0)
        f = np.sqrt(ur * ur + vneg * vneg + eps * eps)
        gu = ur / f
        gv = vneg / f
    # Rotate the gradient back to the image frame.
    gx = gu * ct - gv * st
    gy = gu * st + gv * ct
    return k * np.asarray(f, dtype=np.float64), k * gx, k * gy


def _spiral_phase(master: MasterFinger, x, y) -> np.ndarray:
    """Total winding phase of all planted dislocations, mod 2*pi."""
    w = np.ones(np.broadcast(np.asarray(x), np.asarray(y)).shape, dtype=np.complex128)
    for idx, (sx, sy, sign) in enumerate(master.spirals):
        dz = (np.asarray(x, dtype=np.float64) - sx) + 1j * (np.asarray(y, dtype=np.float64) - sy)
        w = w * dz if sign > 0 else w * np.conj(dz)
        if (idx + 1) % 6 == 0:
            w = w / np.maximum(np.abs(w), 1e-300)
    return np.angle(w)


def _flow_direction(master: MasterFinger, x: float, y: float, skip: int) -> float:
    """Direction of the total phase gradient at one point, one spiral excluded."""
    _, gx, gy = _smooth_field(master, x, y)
    gx = float(gx)
    gy = float(gy)
    for idx, (sx, sy, sign) in enumerate(master.spirals):
        if idx == skip:
            continue
        dx, dy = x - sx, y - sy
        r2 = dx * dx + dy * dy
        if r2 < 1e-12:
            continue
        gx += sign * (-dy / r2)
        gy += sign * (dx / r2)
    return math.atan2(gy, gx)


def _ridge_profile(master: MasterFinger, x, y) -> np.ndarray:
    phase, _, _ = _smooth_field(master, x, y)
    total = phase + _spiral_phase(master, x, y)
    return 0.5 * (1.0 + np.cos(total))


def _amplitude(master: MasterFinger, x, y) -> np.ndarray:
    cx, cy = master.center
    r = np.hypot(np.asarray(x, dtype=np.float64) - cx, np.asarray(y, dtype=np.float64) - cy)
    amp = np.exp(-((r / master.pattern_radius) ** 8))
    if master.pattern is not PatternClass.ARCH:
        # Fade out the singular point; its innermost rings are tighter than
        # any extractor can resolve and carry no planted minutiae.
        core_sigma = 1.5 * master.ridge_period
        amp = amp * (1.0 - np.exp(-(r * r) / (2.0 * core_sigma * core_sigma)))
    return amp


def generate_master(seed: int, pattern: PatternClass, canvas: tuple[int, int] = (384, 384)) -> MasterFinger:
    """Deterministic master finger with 15 to 60 planted minutiae."""
    if not isinstance(pattern, PatternClass):
        raise ValidationError(f"pattern must be a PatternClass, got {pattern!r}")
    class_index = list(PatternClass).index(pattern)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), class_index, 0xF1A9]))
    h, w = canvas

    period = float(rng.uniform(8.5, 11.0))
    side = min(h, w)
    center = (0.40 * w + rng.uniform(-4, 4), 0.40 * h + rng.uniform(-4, 4))
    pattern_radius = 0.34 * side
    tilt = float(rng.uniform(-0.35, 0.35))
    arch_amplitude = float(rng.uniform(30.0, 60.0))
    arch_width = float(rng.uniform(0.8, 1.3)) * pattern_radius

    base = MasterFinger(
        finger_id=f"seed{seed}", pattern=pattern, canvas=canvas, ridge_period=period,
        center=center, tilt=tilt, arch_amplitude=arch_amplitude, arch_width=arch_width,
        pattern_radius=pattern_radius, spirals=(), minutiae=MinutiaeSet((), SYNTH_PPI))

    target = int(rng.integers(22, 41))
    min_sep = max(2.2 * period, 20.0)
    place_radius = 0.75 * pattern_radius
    placed: list[tuple[float, float, int]] = []
    attempts = 0
    while len(placed) < target and attempts < 6000:
        attempts += 1
        rho = place_radius * math.sqrt(rng.uniform())
        phi = rng.uniform(0.0, 2.0 * math.pi)
        px = center[0] + rho * math.cos(phi)
        py = center[1] + rho * math.sin(phi)
        ur, vr, _, _ = _rotated_frame(base, px, py)
        if pattern is PatternClass.LOOP and vr >= -2.0 * period and abs(ur) < 1.5 * period:
            continue  # off the loop spine, where ridge kinks confuse walks
        if pattern is not PatternClass.ARCH and math.hypot(ur, vr) < 3.5 * period:
            continue  # away from the faded singular point
        if any((px - qx) ** 2 + (py - qy) ** 2 < min_sep**2 for qx, qy, _ in placed):
            continue
        placed.append((px, py, 1 if rng.uniform() < 0.5 else -1))
    if len(placed) < 15:
        raise ValidationError(f"could not place enough minutiae for seed {seed}")

    master = MasterFinger(
        finger_id=f"seed{seed}-{pattern.value}", pattern=pattern, canvas=canvas,
        ridge_period=period, center=center, tilt=tilt, arch_amplitude=arch_amplitude,
        arch_width=arch_width, pattern_radius=pattern_radius, spirals=tuple(placed),
        minutiae=MinutiaeSet((), SYNTH_PPI))

    minutiae = []
    for idx, (px, py, sign) in enumerate(placed):
        flow = _flow_direction(master, px, py, skip=idx)
        theta = wrap_angle(flow + _SPIRAL_DIRECTION_SIGN * sign * math.pi / 2.0)
        minutiae.append(Minutia(px, py, theta))

    return MasterFinger(
        finger_id=master.finger_id, pattern=pattern, canvas=canvas, ridge_period=period,
        center=center, tilt=tilt, arch_amplitude=arch_amplitude, arch_width=arch_width,
        pattern_radius=pattern_radius, spirals=tuple(placed),
        minutiae=MinutiaeSet(tuple(minutiae), SYNTH_PPI))


def transform_point(x: float, y: float, params: ImpressionParams,
                    canvas: tuple[int, int]) -> tuple[float, float]:
    """Similarity map used by impressions: scale about the origin, rotate about
    the canvas center, then translate."""
    h, w = canvas
    cx, cy = w / 2.0, h / 2.0
    sx, sy = params.growth_lambda * x, params.growth_lambda * y
    cr, sr = math.cos(params.rotation), math.sin(params.rotation)
    rx = cx + (sx - cx) * cr - (sy - cy) * sr
    ry = cy + (sx - cx) * sr + (sy - cy) * cr
    return rx + params.translation[0], ry + params.translation[1]


def _inverse_grid(params: ImpressionParams, canvas: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    h, w = canvas
    cx, cy = w / 2.0, h / 2.0
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    xs -= params.translation[0]
    ys -= params.translation[1]
    cr, sr = math.cos(-params.rotation), math.sin(-params.rotation)
    rx = cx + (xs - cx) * cr - (ys - cy) * sr
    ry = cy + (xs - cx) * sr + (ys - cy) * cr
    return rx / params.growth_lambda, ry / params.growth_lambda


def render_impression(master: MasterFinger, params: ImpressionParams) -> tuple[GrayImage, MinutiaeSet]:
    """Render one impression and transport the ground truth through its transform."""
    h, w = master.canvas
    mx, my = _inverse_grid(params, master.canvas)
    ridge = _ridge_profile(master, mx, my)
    amplitude = _amplitude(master, mx, my)
    out = 1.0 - amplitude * ridge

    truth = []
    for m in master.minutiae:
        px, py = transform_point(m.x, m.y, params, master.canvas)
        if 0.0 <= px < w and 0.0 <= py < h:
            truth.append(Minutia(px, py, wrap_angle(m.theta + params.rotation)))
    if not truth:
        raise ValidationError("impression transform pushed every minutia off-canvas")

    rng = np.random.default_rng(np.random.PCG64(int(params.rng_seed)))
    if params.moisture > 0.0:
        coarse = rng.uniform(size=(6, 6))
        blotch = resize_bicubic(coarse, h, w)
        out = out * (1.0 - 0.7 * params.moisture * blotch)
    if params.blur_radius > 0.0:
        out = gaussian_filter(out, params.blur_radius, mode="nearest")
    if params.noise_sigma > 0.0:
        out = out + rng.normal(0.0, params.noise_sigma, size=out.shape)

    return GrayImage(np.clip(out, 0.0, 1.0), SYNTH_PPI), MinutiaeSet(tuple(truth), SYNTH_PPI)


_MANIFEST_HEADER = ["subject_id", "session_id", "capture_date", "age_weeks", "gender", "thumb", "path"]
_SESSION_GAP_WEEKS = 13
_BASE_DATE = date(2024, 1, 15)
_MALE_FRACTION = 0.43


def _impression_seed(seed: int, *key: int) -> int:
    return int(np.random.SeedSequence([int(seed), *key]).generate_state(1)[0])


def build_benchmark(out_dir, n_subjects: int, sessions: int = 2, profile: str = "mild",
                    seed: int = 0, canvas: tuple[int, int] = (384, 384),
                    impressions_per_thumb: int = 2) -> Path:
    """Write a longitudinal benchmark (images, templates, manifest) to disk.

    Per subject: two master fingers (thumbs) and, per session,
    ``impressions_per_thumb`` impressions per thumb rendered at cumulative
    growth 1.1 per session step. Returns the manifest path. Everything is a
    pure function of the seed and arguments.
    """
    if n_subjects < 2:
        raise ValidationError("a benchmark needs at least 2 subjects")
    if profile not in PROFILES:
        raise ValidationError(f"unknown profile {profile!r}, expected one of {sorted(PROFILES)}")
    degrade = PROFILES[profile]
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    rows = []
    classes = list(PatternClass)
    for si in range(n_subjects):
        subject_rng = np.random.default_rng(np.random.SeedSequence([int(seed), si, 0x5B]))
        subject_id = f"s{si:04d}"
        gender = Gender.MALE if subject_rng.uniform() < _MALE_FRACTION else Gender.FEMALE
        enroll_age = int(subject_rng.integers(4, 13))
        masters = {}
        for ti, thumb in enumerate((Thumb.LEFT, Thumb.RIGHT)):
            pattern = classes[int(subject_rng.integers(0, len(classes)))]
            masters[thumb] = generate_master(_impression_seed(seed, si, ti, 0xA1), pattern, canvas)

        for se in range(sessions):
            session_id = f"v{se + 1}"
            capture = _BASE_DATE + timedelta(weeks=se * _SESSION_GAP_WEEKS)
            age_weeks = enroll_age + se * _SESSION_GAP_WEEKS
            growth = 1.1 ** se
            for ti, thumb in enumerate((Thumb.LEFT, Thumb.RIGHT)):
                for imp in range(impressions_per_thumb):
                    draw = np.random.default_rng(
                        np.random.SeedSequence([int(seed), si, se, ti, imp, 0xD3]))
                    params = ImpressionParams(
                        growth_lambda=growth,
                        rotation=float(draw.uniform(-degrade.max_rotation, degrade.max_rotation)),
                        translation=(float(draw.uniform(-degrade.max_translation, degrade.max_translation)),
                                     float(draw.uniform(-degrade.max_translation, degrade.max_translation))),
                        noise_sigma=degrade.noise_sigma,
                        blur_radius=degrade.blur_radius,
                        moisture=degrade.moisture,
                        rng_seed=_impression_seed(seed, si, se, ti, imp, 0xE4),
                    )
                    image, truth = render_impression(masters[thumb], params)
                    stem = f"{subject_id}_{session_id}_{thumb.value}_{imp + 1}"
                    write_pgm(image, out_dir / f"{stem}.pgm")
                    template = Template(
                        subject_id=subject_id, thumb=thumb, session_id=session_id,
                        age_weeks_at_capture=age_weeks, gender=gender, minutiae=truth,
                        embedding=fallback_embedding(image), aged=False)
                    save_template(template, out_dir / f"{stem}.iptf")
                    rows.append([subject_id, session_id, capture.isoformat(), str(age_weeks),
                                 gender.value, thumb.value, f"{stem}.iptf"])

    manifest = out_dir / "manifest.tsv"
    with open(manifest, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\t".join(_MANIFEST_HEADER) + "\n")
        for row in rows:
            fh.write("\t".join(row) + "\n")
    return manifest
