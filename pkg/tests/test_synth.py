import math
import warnings
from pathlib import Path

import numpy as np
import pytest

from infantfp.core import Gender, ValidationError
from infantfp.evaluate import EvalWarning, build_protocol, parse_manifest
from infantfp.extract import ExtractParams, extract_from_image
from infantfp.iptf import load_template
from infantfp.match import minutiae_match, params_for_ppi, MatchParams
from infantfp.minmap import angle_difference
from infantfp.synth import (
    ImpressionParams,
    PatternClass,
    build_benchmark,
    generate_master,
    render_impression,
    transform_point,
)


def test_master_determinism():
    a = generate_master(5, PatternClass.LOOP)
    b = generate_master(5, PatternClass.LOOP)
    assert a == b


def test_masters_distinct_across_seeds():
    seen = set()
    for seed in range(100):
        master = generate_master(seed, PatternClass.ARCH, canvas=(256, 256))
        key = tuple((m.x, m.y, m.theta) for m in master.minutiae)
        assert key not in seen
        seen.add(key)


def test_master_minutiae_count_and_margins():
    for seed in (0, 3, 11):
        for cls in PatternClass:
            master = generate_master(seed, cls)
            n = len(master.minutiae)
            assert 15 <= n <= 60
            h, w = master.canvas
            for m in master.minutiae:
                # placed inside the pattern disc, well off the canvas edge
                assert 10 <= m.x < w - 10
                assert 10 <= m.y < h - 10
                d = math.hypot(m.x - master.center[0], m.y - master.center[1])
                assert d <= 0.75 * master.pattern_radius + 1e-9


def test_impression_determinism():
    master = generate_master(2, PatternClass.WHORL)
    params = ImpressionParams(growth_lambda=1.1, rotation=0.07, translation=(3.0, -2.0),
                              noise_sigma=0.05, blur_radius=0.5, moisture=0.2, rng_seed=99)
    img1, t1 = render_impression(master, params)
    img2, t2 = render_impression(master, params)
    assert np.array_equal(img1.pixels, img2.pixels)
    assert t1 == t2


def test_ground_truth_transport_exact():
    master = generate_master(4, PatternClass.ARCH)
    params = ImpressionParams(growth_lambda=1.1, rotation=0.1, translation=(5.0, -3.0))
    _, truth = render_impression(master, params)
    h, w = master.canvas
    cx, cy = w / 2.0, h / 2.0
    expected = []
    for m in master.minutiae:
        sx, sy = 1.1 * m.x, 1.1 * m.y
        rx = cx + (sx - cx) * math.cos(0.1) - (sy - cy) * math.sin(0.1)
        ry = cy + (sx - cx) * math.sin(0.1) + (sy - cy) * math.cos(0.1)
        px, py = rx + 5.0, ry - 3.0
        if 0 <= px < w and 0 <= py < h:
            expected.append((px, py, (m.theta + 0.1) % (2 * math.pi)))
    got = [(m.x, m.y, m.theta) for m in truth]
    assert len(got) == len(expected)
    for (gx, gy, gt), (ex, ey, et) in zip(got, expected):
        assert gx == ex and gy == ey
        assert angle_difference(gt, et) <= 1e-12


def test_growth_scales_coordinates_exactly():
    master = generate_master(6, PatternClass.LOOP)
    _, identity = render_impression(master, ImpressionParams())
    _, grown = render_impression(master, ImpressionParams(growth_lambda=1.1))
    assert len(identity) == len(grown)
    for m0, m1 in zip(identity, grown):
        assert m1.x == 1.1 * m0.x
        assert m1.y == 1.1 * m0.y
        assert m1.theta == m0.theta


def test_transform_off_canvas_error():
    master = generate_master(7, PatternClass.ARCH)
    with pytest.raises(ValidationError):
        render_impression(master, ImpressionParams(translation=(5000.0, 5000.0)))


def test_impression_params_validation():
    with pytest.raises(ValidationError):
        ImpressionParams(growth_lambda=0.9)
    with pytest.raises(ValidationError):
        ImpressionParams(moisture=1.5)
    with pytest.raises(ValidationError):
        ImpressionParams(noise_sigma=-0.1)


def test_benchmark_file_counts(tmp_path):
    manifest = build_benchmark(tmp_path, n_subjects=10, sessions=2, profile="clean", seed=3)
    pgms = sorted(tmp_path.glob("*.pgm"))
    templates = sorted(tmp_path.glob("*.iptf"))
    assert len(pgms) == 10 * 2 * 2 * 2
    assert len(templates) == 10 * 2 * 2 * 2
    assert manifest.name == "manifest.tsv"
    entries = parse_manifest(manifest)
    assert len(entries) == 80
    with warnings.catch_warnings():
        warnings.simplefilter("error")  # zero warnings while building the protocol
        pairs = build_protocol(entries)
    assert len([p for p in pairs if p.label == "genuine"]) == 10


def test_benchmark_deterministic(tmp_path):
    a_dir = tmp_path / "a"
    b_dir = tmp_path / "b"
    build_benchmark(a_dir, n_subjects=3, sessions=2, profile="mild", seed=42)
    build_benchmark(b_dir, n_subjects=3, sessions=2, profile="mild", seed=42)
    files_a = sorted(p.name for p in a_dir.iterdir())
    files_b = sorted(p.name for p in b_dir.iterdir())
    assert files_a == files_b
    for name in files_a:
        assert (a_dir / name).read_bytes() == (b_dir / name).read_bytes()


def test_benchmark_seeds_differ(tmp_path):
    a_dir = tmp_path / "a"
    b_dir = tmp_path / "b"
    build_benchmark(a_dir, n_subjects=2, sessions=2, profile="mild", seed=1)
    build_benchmark(b_dir, n_subjects=2, sessions=2, profile="mild", seed=2)
    names = sorted(p.name for p in a_dir.glob("*.pgm"))
    assert any((a_dir / n).read_bytes() != (b_dir / n).read_bytes() for n in names)


def test_benchmark_templates_consistent(tmp_path):
    manifest = build_benchmark(tmp_path, n_subjects=2, sessions=2, profile="clean", seed=9)
    entries = parse_manifest(manifest)
    genders = {}
    for e in entries:
        template = load_template(tmp_path / e.path)
        assert template.subject_id == e.subject_id
        assert template.session_id == e.session_id
        assert template.thumb is e.thumb
        assert template.gender is e.gender
        assert template.age_weeks_at_capture == e.age_weeks
        assert not template.aged
        assert template.embedding is not None
        assert len(template.minutiae) >= 10
        genders.setdefault(e.subject_id, template.gender)
    assert set(genders.values()) <= {Gender.MALE, Gender.FEMALE}


def test_benchmark_gender_ratio_rough():
    # 43/57 male/female target; allow binomial slack on 60 subjects.
    rng_dir = Path("/tmp/infantfp_gender_check")
    import tempfile
    with tempfile.TemporaryDirectory() as td:
        manifest = build_benchmark(td, n_subjects=60, sessions=1, profile="clean", seed=5,
                                   impressions_per_thumb=1)
        entries = parse_manifest(manifest)
        by_subject = {}
        for e in entries:
            by_subject[e.subject_id] = e.gender
        male = sum(1 for g in by_subject.values() if g is Gender.MALE)
    assert 0.43 * 60 - 12 <= male <= 0.43 * 60 + 12


def test_degradation_monotone_in_noise():
    # Mean genuine minutiae-match score (via extraction) must not increase
    # with noise; statistical check over 30 master pairs and 3 noise levels.
    params = ExtractParams()
    match_params = params_for_ppi(MatchParams(), 1000)
    levels = (0.0, 0.12, 0.3)
    means = []
    masters = [generate_master(seed, list(PatternClass)[seed % 3], canvas=(288, 288))
               for seed in range(30)]
    enrolled = []
    for seed, master in enumerate(masters):
        img, _ = render_impression(master, ImpressionParams(rng_seed=seed))
        enrolled.append(extract_from_image(img, params)[0])
    for noise in levels:
        scores = []
        for seed, master in enumerate(masters):
            probe_img, _ = render_impression(master, ImpressionParams(
                noise_sigma=noise, rotation=0.04, translation=(2.0, -3.0), rng_seed=seed + 1000))
            probe = extract_from_image(probe_img, params)[0]
            scores.append(minutiae_match(probe, enrolled[seed], match_params))
        means.append(float(np.mean(scores)))
    assert means[0] >= means[1] >= means[2]
    assert means[0] - means[2] > 0.05  # degradation is actually biting
