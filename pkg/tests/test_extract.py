import itertools
import math

import numpy as np
import pytest

from infantfp.core import GrayImage, ValidationError
from infantfp.extract import (
    BIFURCATION,
    ENDING,
    ExtractParams,
    binarize_and_thin,
    crossing_number,
    enhance,
    estimate_orientation_field,
    extract_from_image,
    extract_minutiae,
    extract_minutiae_labeled,
    normalize_image,
)
from infantfp.minmap import angle_difference
from infantfp.synth import ImpressionParams, PatternClass, generate_master, render_impression

PARAMS = ExtractParams()


def stripe_image(angle_deg, period=10.0, size=128, ppi=500):
    """Parallel dark ridges running along ``angle_deg``."""
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    normal = math.radians(angle_deg) + math.pi / 2
    phase = (xs * math.cos(normal) + ys * math.sin(normal)) * 2 * math.pi / period
    return GrayImage(0.5 + 0.45 * np.cos(phase), ppi)


def test_normalize_constant_image():
    img = GrayImage(np.full((32, 32), 0.8), 500)
    out = normalize_image(img)
    assert np.array_equal(out.pixels, np.full((32, 32), 0.5))


def test_normalize_mean():
    rng = np.random.default_rng(1)
    for _ in range(5):
        img = GrayImage(rng.uniform(size=(40, 50)) ** 2, 500)
        out = normalize_image(img)
        # Oracle: direct mean computation.
        assert float(out.pixels.mean()) == pytest.approx(0.5, abs=1e-6)
        assert out.pixels.min() >= 0.0 and out.pixels.max() <= 1.0


def test_normalize_fixed_point():
    rng = np.random.default_rng(2)
    img = GrayImage(rng.uniform(size=(48, 48)), 500)
    once = normalize_image(img)
    twice = normalize_image(once)
    assert np.allclose(twice.pixels, once.pixels, atol=1e-6)


def test_orientation_field_stripes():
    img = stripe_image(30.0)
    field = estimate_orientation_field(img, PARAMS)
    interior = field.angles[2:-2, 2:-2]
    err = np.abs(np.degrees(interior) - 30.0)
    err = np.minimum(err, 180.0 - err)
    assert err.max() <= 2.0
    assert field.coherence[2:-2, 2:-2].min() > 0.5


def test_orientation_field_flat():
    img = GrayImage(np.full((64, 64), 0.5), 500)
    field = estimate_orientation_field(img, PARAMS)
    assert np.all(field.coherence == 0.0)
    assert np.all(field.angles == 0.0)


def test_orientation_field_perpendicular_stripes():
    f30 = estimate_orientation_field(stripe_image(30.0), PARAMS)
    f120 = estimate_orientation_field(stripe_image(120.0), PARAMS)
    a = np.degrees(f30.angles[3:-3, 3:-3])
    b = np.degrees(f120.angles[3:-3, 3:-3])
    diff = np.abs(a - b)
    diff = np.minimum(diff, 180.0 - diff)
    assert np.abs(diff - 90.0).max() <= 4.0


def test_orientation_equivariance():
    base = 25.0
    for delta in (10.0, 35.0, 60.0):
        f0 = estimate_orientation_field(stripe_image(base), PARAMS)
        f1 = estimate_orientation_field(stripe_image(base + delta), PARAMS)
        a = np.degrees(f0.angles[3:-3, 3:-3]).mean()
        b = np.degrees(f1.angles[3:-3, 3:-3]).mean()
        diff = (b - a) % 180.0
        diff = min(diff, 180.0 - diff)
        assert abs(diff - min(delta, 180 - delta)) <= 2.0


def count_ridges(img: GrayImage, angle_deg: float, offsets=(-20, -10, 0, 10, 20)) -> list:
    """Oracle: dark stripe crossings along the ridge normal, several lines."""
    size = img.height
    normal = math.radians(angle_deg) + math.pi / 2
    along = math.radians(angle_deg)
    n = int(size * 0.5)
    out = []
    for off in offsets:
        cx = size / 2 + off * math.cos(along)
        cy = size / 2 + off * math.sin(along)
        samples = []
        for t in np.linspace(-n / 2, n / 2, 2 * n):
            x = int(round(cx + t * math.cos(normal)))
            y = int(round(cy + t * math.sin(normal)))
            samples.append(img.pixels[y, x])
        binary = np.asarray(samples) < 0.5
        out.append(int(np.sum(binary[1:] & ~binary[:-1])))
    return out


def test_enhance_preserves_ridge_count():
    img = stripe_image(40.0)
    field = estimate_orientation_field(img, PARAMS)
    out = enhance(img, field, PARAMS)
    assert count_ridges(out, 40.0) == count_ridges(img, 40.0)


def test_enhance_recovers_noisy_stripes():
    rng = np.random.default_rng(0)
    clean = stripe_image(25.0)
    noisy_px = np.clip(clean.pixels + rng.normal(0, 0.1, clean.pixels.shape), 0, 1)
    noisy = GrayImage(noisy_px, 500)
    expected = count_ridges(clean, 25.0)
    field = estimate_orientation_field(normalize_image(noisy), PARAMS)
    enhanced = enhance(normalize_image(noisy), field, PARAMS)
    assert count_ridges(enhanced, 25.0) == expected
    assert count_ridges(noisy, 25.0) != expected  # raw binarization is broken


def test_enhance_flat_stays_flat():
    img = GrayImage(np.full((96, 96), 0.5), 500)
    field = estimate_orientation_field(img, PARAMS)
    out = enhance(img, field, PARAMS)
    skeleton = binarize_and_thin(out, PARAMS)
    assert not skeleton.pixels.any()


def test_binarize_black_image():
    img = GrayImage(np.zeros((32, 32)), 500)
    out = binarize_and_thin(img, PARAMS)
    assert not out.pixels.any()


def test_thin_bar_to_centerline():
    px = np.ones((40, 60))
    px[18:23, 5:55] = 0.0  # 5-px-wide dark bar
    img = GrayImage(px, 500)
    skeleton = binarize_and_thin(img, PARAMS)
    ys, xs = np.nonzero(skeleton.pixels)
    assert len(ys) > 0
    assert set(ys.tolist()) == {20}  # analytic centerline row
    assert xs.min() >= 5 and xs.max() <= 54


def no_2x2_block(mask):
    return not (mask[:-1, :-1] & mask[1:, :-1] & mask[:-1, 1:] & mask[1:, 1:]).any()


def test_thin_no_2x2_blocks():
    rng = np.random.default_rng(4)
    for _ in range(5):
        base = rng.uniform(size=(48, 48))
        from scipy.ndimage import gaussian_filter
        blob = gaussian_filter(base, 3.0)
        img = GrayImage((blob - blob.min()) / (blob.max() - blob.min() + 1e-9), 500)
        skeleton = binarize_and_thin(img, PARAMS)
        assert set(np.unique(skeleton.pixels)).issubset({0.0, 1.0})
        assert no_2x2_block(skeleton.pixels > 0.5)


def reference_crossing_number(bits):
    circular = list(bits) + [bits[0]]
    return sum(1 for a, b in zip(circular, circular[1:]) if (not a) and b)


def test_crossing_number_exhaustive():
    for combo in itertools.product([0, 1], repeat=8):
        assert crossing_number(combo) == reference_crossing_number(combo)


def test_crossing_number_validation():
    with pytest.raises(ValidationError):
        crossing_number([1, 0, 1])


def bare_params():
    return ExtractParams(min_quality_coherence=0.0, border_margin=0)


def skeleton_image(mask):
    return GrayImage(mask.astype(np.float64), 500)


def test_isolated_segment_two_endings():
    mask = np.zeros((30, 30), dtype=bool)
    mask[15, 5:25] = True
    labeled = extract_minutiae_labeled(skeleton_image(mask), None, bare_params())
    kinds = [k for _, k in labeled]
    assert kinds == [ENDING, ENDING]
    xs = sorted(m.x for m, _ in labeled)
    assert xs == [5.0, 24.0]
    left = next(m for m, _ in labeled if m.x == 5.0)
    right = next(m for m, _ in labeled if m.x == 24.0)
    assert angle_difference(left.theta, 0.0) <= math.radians(10)      # points into the ridge
    assert angle_difference(right.theta, math.pi) <= math.radians(10)


def test_y_skeleton_one_bifurcation_three_endings():
    mask = np.zeros((40, 40), dtype=bool)
    for i in range(12):
        mask[20 + i, 20] = True          # stem going down
    for i in range(10):
        mask[19 - i, 19 - i] = True      # arm up-left
        mask[19 - i, 21 + i] = True      # arm up-right
    mask[20, 20] = True
    labeled = extract_minutiae_labeled(skeleton_image(mask), None, bare_params())
    kinds = sorted(k for _, k in labeled)
    assert kinds == [BIFURCATION, ENDING, ENDING, ENDING]
    bif = next(m for m, k in labeled if k == BIFURCATION)
    assert math.hypot(bif.x - 20, bif.y - 20) <= 2.0
    # Valley between the up-going arms points up.
    assert angle_difference(bif.theta, -math.pi / 2) <= math.radians(25)


def test_extraction_deterministic():
    master = generate_master(9, PatternClass.LOOP)
    img, _ = render_impression(master, ImpressionParams(rng_seed=9))
    a, la = extract_from_image(img, PARAMS)
    b, lb = extract_from_image(img, PARAMS)
    assert a == b
    assert la == lb


def test_no_minutiae_within_border_margin():
    master = generate_master(10, PatternClass.WHORL)
    img, _ = render_impression(master, ImpressionParams(rng_seed=10))
    minutiae, _ = extract_from_image(img, PARAMS)
    margin = PARAMS.border_margin * (img.ppi / 500)
    for m in minutiae:
        assert margin <= m.x < img.width - margin
        assert margin <= m.y < img.height - margin


def greedy_pr(extracted, truth, pos_tol=10.0, ang_tol=math.radians(30)):
    pairs = []
    for i, e in enumerate(extracted):
        for j, t in enumerate(truth):
            d = math.hypot(e.x - t.x, e.y - t.y)
            if d <= pos_tol and angle_difference(e.theta, t.theta) <= ang_tol:
                pairs.append((d, i, j))
    pairs.sort()
    used_e, used_t = set(), set()
    for d, i, j in pairs:
        if i in used_e or j in used_t:
            continue
        used_e.add(i)
        used_t.add(j)
    return len(used_e)


def test_extraction_accuracy_on_clean_renders():
    # Oracle: the generator's ground-truth minutiae list (12-impression spot
    # check; the 50-impression sweep runs in the acceptance suite).
    hits = n_extracted = n_truth = 0
    for seed in range(12):
        cls = list(PatternClass)[seed % 3]
        master = generate_master(seed + 100, cls)
        img, truth = render_impression(master, ImpressionParams(rng_seed=seed))
        extracted, _ = extract_from_image(img, PARAMS)
        hits += greedy_pr(list(extracted), list(truth))
        n_extracted += len(extracted)
        n_truth += len(truth)
    assert hits / n_extracted >= 0.8
    assert hits / n_truth >= 0.8


def test_extract_params_validation():
    with pytest.raises(ValidationError):
        ExtractParams(block_size=0)
    with pytest.raises(ValidationError):
        ExtractParams(binarize_threshold="fancy")
    with pytest.raises(ValidationError):
        ExtractParams(min_quality_coherence=1.5)
