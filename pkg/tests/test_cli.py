import math
import sys
from pathlib import Path

import numpy as np
import pytest

from infantfp import config as config_mod
from infantfp.cli import main
from infantfp.core import Gender, Thumb
from infantfp.iptf import load_template, save_template
from infantfp.pgm import read_pgm, write_pgm
from infantfp.synth import ImpressionParams, PatternClass, generate_master, render_impression

from conftest import make_template, unit_vector


def run(args):
    return main(args)


def test_usage_errors(capsys):
    assert run([]) == 1
    assert run(["match"]) == 1  # missing required flags
    capsys.readouterr()


def test_pgm_round_trip(tmp_path):
    master = generate_master(31, PatternClass.ARCH, canvas=(256, 256))
    img, _ = render_impression(master, ImpressionParams(rng_seed=31))
    path = tmp_path / "img.pgm"
    write_pgm(img, path)
    loaded = read_pgm(path)
    assert loaded.ppi == img.ppi
    assert np.allclose(loaded.pixels, img.pixels, atol=1 / 255 + 1e-9)
    override = read_pgm(path, ppi=777)
    assert override.ppi == 777


def test_enroll_young_sets_aged(tmp_path, capsys):
    master = generate_master(32, PatternClass.LOOP)
    img, _ = render_impression(master, ImpressionParams(rng_seed=32))
    img_path = tmp_path / "young.pgm"
    write_pgm(img, img_path)
    code = run(["enroll", str(img_path), "--subject", "s1", "--session", "v1",
                "--thumb", "left", "--gender", "female", "--age-weeks", "8",
                "--out-dir", str(tmp_path), "--minutiae-text"])
    assert code == 0
    out = capsys.readouterr().out
    assert "aged=true" in out
    template = load_template(tmp_path / "young.iptf")
    assert template.aged
    assert template.gender is Gender.FEMALE
    assert len(template.minutiae) > 5
    text = (tmp_path / "young.txt").read_text().strip().split("\n")
    assert len(text) == len(template.minutiae)
    parts = text[0].split()
    assert len(parts) == 4 and parts[3] in ("ending", "bifurcation")


def test_enroll_old_not_aged(tmp_path, capsys):
    master = generate_master(33, PatternClass.WHORL)
    img, _ = render_impression(master, ImpressionParams(rng_seed=33))
    img_path = tmp_path / "old.pgm"
    write_pgm(img, img_path)
    code = run(["enroll", str(img_path), "--subject", "s1", "--session", "v1",
                "--thumb", "right", "--gender", "male", "--age-weeks", "26",
                "--out-dir", str(tmp_path)])
    assert code == 0
    assert "aged=false" in capsys.readouterr().out
    assert not load_template(tmp_path / "old.iptf").aged


def test_enroll_blank_image_warns_but_writes(tmp_path, capsys):
    from infantfp.core import GrayImage
    img = GrayImage(np.full((96, 96), 0.6), 1000)
    img_path = tmp_path / "blank.pgm"
    write_pgm(img, img_path)
    code = run(["enroll", str(img_path), "--subject", "s1", "--session", "v1",
                "--thumb", "left", "--age-weeks", "20", "--out-dir", str(tmp_path)])
    assert code == 0
    captured = capsys.readouterr()
    assert "no minutiae" in captured.err
    template = load_template(tmp_path / "blank.iptf")
    assert len(template.minutiae) == 0


def test_match_self_prints_one(tmp_path, capsys):
    template = make_template(age=20, points=tuple(
        (float(x), float(y), 0.5) for x, y in zip(range(40, 200, 16), range(60, 220, 16))),
        embedding=unit_vector([0.6, 0.8]), aged=True)
    path = tmp_path / "t.iptf"
    save_template(template, path)
    code = run(["match", "--probe", str(path), "--enrolled", str(path)])
    assert code == 0
    out = capsys.readouterr().out.strip()
    assert out == "1.0000"


def test_match_cross_gender_zero(tmp_path, capsys):
    points = tuple((float(x), float(y), 0.5) for x, y in zip(range(40, 200, 16), range(60, 220, 16)))
    a = make_template(subject="a", gender=Gender.MALE, age=20, points=points, aged=True)
    b = make_template(subject="b", gender=Gender.FEMALE, age=20, points=points, aged=True)
    pa, pb = tmp_path / "a.iptf", tmp_path / "b.iptf"
    save_template(a, pa)
    save_template(b, pb)
    code = run(["match", "--probe", str(pa), "--enrolled", str(pb)])
    assert code == 0
    assert capsys.readouterr().out.strip() == "0.0000"


def test_match_no_common_thumb_is_data_error(tmp_path, capsys):
    a = make_template(subject="a", thumb=Thumb.LEFT, aged=True)
    b = make_template(subject="b", thumb=Thumb.RIGHT, aged=True)
    pa, pb = tmp_path / "a.iptf", tmp_path / "b.iptf"
    save_template(a, pa)
    save_template(b, pb)
    code = run(["match", "--probe", str(pa), "--enrolled", str(pb)])
    assert code == 2
    assert "no same-thumb" in capsys.readouterr().err


def test_match_external_connector(tmp_path, capsys, small_benchmark):
    bench = small_benchmark.parent
    probe = sorted(bench.glob("s0000_v2_left_*.iptf"))[0]
    enrolled = sorted(bench.glob("s0000_v1_left_*.iptf"))[0]
    code = run(["match", "--probe", str(probe), "--enrolled", str(enrolled),
                "--set", "external.command=echo 0.5"])
    assert code == 0
    capsys.readouterr()
    # A configured connector that always fails exits 3 after printing a score.
    code = run(["match", "--probe", str(probe), "--enrolled", str(enrolled),
                "--set", "external.command=false"])
    captured = capsys.readouterr()
    assert code == 3
    assert captured.out.strip()  # score still printed from the other matchers


def test_missing_file_is_data_error(tmp_path, capsys):
    code = run(["match", "--probe", str(tmp_path / "nope.iptf"),
                "--enrolled", str(tmp_path / "nope.iptf")])
    assert code == 2
    capsys.readouterr()


def test_synth_eval_search_flow(tmp_path, capsys, small_benchmark):
    bench_dir = small_benchmark.parent
    out_dir = tmp_path / "report"
    code = run(["eval", "--manifest", str(small_benchmark), "--out-dir", str(out_dir)])
    assert code == 0
    capsys.readouterr()
    csv_text = (out_dir / "report.csv").read_text()
    assert csv_text.startswith("age_bucket_weeks")
    assert (out_dir / "report.txt").exists()
    # The command must reproduce the library evaluation byte for byte.
    from infantfp.evaluate import evaluate_manifest, render_csv
    cfg = config_mod.Config()
    api_report = evaluate_manifest(small_benchmark, cfg.weights, cfg.bounds, cfg.match,
                                   cfg.aging, cfg.eval_params)
    assert csv_text == render_csv(api_report)

    probes = [str(p) for p in sorted(bench_dir.glob("s0003_v2_*.iptf"))]
    code = run(["search", "--probe", *probes, "--manifest", str(small_benchmark), "--top", "3"])
    assert code == 0
    out_lines = capsys.readouterr().out.strip().split("\n")
    assert out_lines[0].split()[1] == "s0003"  # rank-1 hit printed first
    assert len(out_lines) == 3


def test_synth_cli_deterministic(tmp_path, capsys):
    a_dir = tmp_path / "a"
    b_dir = tmp_path / "b"
    assert run(["synth", "--out-dir", str(a_dir), "--subjects", "2", "--sessions", "2",
                "--profile", "mild", "--seed", "11"]) == 0
    assert run(["synth", "--out-dir", str(b_dir), "--subjects", "2", "--sessions", "2",
                "--profile", "mild", "--seed", "11"]) == 0
    capsys.readouterr()
    names_a = sorted(p.name for p in a_dir.iterdir())
    assert names_a == sorted(p.name for p in b_dir.iterdir())
    for name in names_a:
        assert (a_dir / name).read_bytes() == (b_dir / name).read_bytes()


def test_calibrate_cli(tmp_path, capsys, small_benchmark):
    code = run(["calibrate", "--manifest", str(small_benchmark), "--far-target", "0.05",
                "--grid-step", "0.25"])
    assert code == 0
    out = capsys.readouterr().out
    assert "weights.lambda_m" in out
    values = dict(line.split(" = ") for line in out.strip().split("\n"))
    total = sum(float(v) for v in values.values())
    assert abs(total - 1.0) <= 1e-9


def test_config_round_trip():
    cfg = config_mod.Config()
    dumped = config_mod.dumps(cfg)
    loaded = config_mod.loads(dumped)
    assert loaded == cfg
    custom = config_mod.apply_overrides(cfg, {"minmap.sigma_s": "4.5",
                                              "weights.lambda_m": "0.5",
                                              "weights.lambda_t": "0.2",
                                              "weights.lambda_l": "0.3"})
    assert custom.minmap.sigma_s == 4.5
    assert config_mod.loads(config_mod.dumps(custom)) == custom


def test_config_rejects_unknown_key():
    with pytest.raises(config_mod.ConfigError):
        config_mod.loads("nope.key = 3\n")
    with pytest.raises(config_mod.ConfigError):
        config_mod.loads("minmap.sigma_s == 3\n")


def test_config_file_and_set_precedence(tmp_path, capsys, small_benchmark):
    cfg_file = tmp_path / "cfg.txt"
    cfg_file.write_text("aging.scale_factor = 1.3\n# comment line\n")
    bench = small_benchmark.parent
    probe = sorted(bench.glob("s0001_v1_left_*.iptf"))[0]
    code = run(["match", "--probe", str(probe), "--enrolled", str(probe),
                "--config", str(cfg_file), "--set", "aging.scale_factor=1.0"])
    assert code == 0
    # flag override wins: no aging applied, self-match stays 1.0
    assert capsys.readouterr().out.strip() == "1.0000"


def test_config_bad_value_is_data_error(tmp_path, capsys):
    code = run(["synth", "--out-dir", str(tmp_path / "x"), "--subjects", "2",
                "--seed", "1", "--set", "minmap.sigma_s=banana"])
    assert code == 2
    capsys.readouterr()
