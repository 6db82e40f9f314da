import json
from pathlib import Path

import numpy as np
import pytest

from disque.cli import main, save_features
from disque.egip import reconstruct
from disque.pixelcore import Image, read_image, write_png
from disque.quality import feature_tags
from disque.synthetic import colorful_image
from disque.trainer import load_manifest, save_checkpoint, TrainConfig

DATA = Path(__file__).parent / "data"


def _gray(seed, size=48):
    v = np.random.default_rng(seed).uniform(0.2, 0.8, (size, size, 1))
    return Image(np.repeat(v, 3, axis=-1))


@pytest.fixture
def image_dir(tmp_path):
    d = tmp_path / "imgs"
    d.mkdir()
    for i in range(3):
        write_png(_gray(i), d / f"gray{i}.png")
    for i in range(2):
        write_png(colorful_image(i, 64), d / f"color{i}.png")
    return d


def test_make_manifest_screens_gray_images(image_dir, tmp_path):
    out = tmp_path / "m.jsonl"
    assert main(["make-manifest", str(image_dir), "--out", str(out)]) == 0
    entries = load_manifest(out).entries
    assert sorted(Path(e.path).name for e in entries) == ["color0.png", "color1.png"]
    report = json.loads(out.with_name("m.jsonl.rejected.json").read_text())
    assert sorted(report) == ["gray0.png", "gray1.png", "gray2.png"]
    assert all(r["is_grayscale"] for r in report.values())
    first = out.read_bytes()
    assert main(["make-manifest", str(image_dir), "--out", str(out)]) == 0
    assert out.read_bytes() == first
    assert (tmp_path / "m.jsonl.run.json").exists()


def test_make_manifest_without_screening(image_dir, tmp_path):
    out = tmp_path / "m.jsonl"
    assert main(["make-manifest", str(image_dir), "--out", str(out), "--no-screening"]) == 0
    assert len(load_manifest(out).entries) == 5


def test_make_manifest_empty_dir(tmp_path):
    (tmp_path / "empty").mkdir()
    assert main(["make-manifest", str(tmp_path / "empty"), "--out", str(tmp_path / "m.jsonl")]) == 3


def test_distort_matches_golden(tmp_path, capsys):
    out = tmp_path / "blur.png"
    assert main(["distort", str(DATA / "fixture.png"), str(out), "--spec", "GaussianBlur:3:0"]) == 0
    assert capsys.readouterr().out.strip() == "GaussianBlur:3:0"
    got = read_image(out).pixels
    golden = read_image(DATA / "golden_gaussianblur_3_0.png").pixels
    np.testing.assert_array_equal(got, golden)


def test_distort_malformed_spec(tmp_path, capsys):
    rc = main(["distort", str(DATA / "fixture.png"), str(tmp_path / "o.png"), "--spec", "Blur;3"])
    assert rc == 2
    err = capsys.readouterr().err.strip().splitlines()[-1]
    assert err.startswith("error: SpecParseError:")
    assert "Blur;3" in err


def test_distort_random_echo_is_stable(tmp_path, capsys):
    echoes = []
    for name in ("a.png", "b.png"):
        assert main(["distort", str(DATA / "fixture.png"), str(tmp_path / name), "--random", "17"]) == 0
        echoes.append(capsys.readouterr().out.strip())
    assert echoes[0] == echoes[1]
    assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()


def test_distort_needs_exactly_one_source(tmp_path):
    assert main(["distort", str(DATA / "fixture.png"), str(tmp_path / "o.png")]) == 2


def test_missing_input_is_data_error(tmp_path):
    assert main(["distort", str(tmp_path / "nope.png"), str(tmp_path / "o.png"),
                 "--spec", "GaussianBlur:1:0"]) == 3


@pytest.fixture
def linear_features(tmp_path):
    rng = np.random.default_rng(0)
    X = rng.standard_normal((120, 16))
    mos = X @ rng.standard_normal(16) + 50
    scale, pool = feature_tags([1, 1, 1, 1])
    path = tmp_path / "feat.npz"
    save_features(path, X, mos, [str(i // 4) for i in range(120)], scale, pool)
    return path


def test_evaluate_linear_features(linear_features, tmp_path):
    out = tmp_path / "report.json"
    assert main(["evaluate", "--features", str(linear_features), "--out", str(out),
                 "--folds", "3", "--methods", "RIDGE"]) == 0
    report = json.loads(out.read_text())
    assert report["median"]["srocc"] > 0.99
    assert len(report["folds"]) == 3
    assert out.with_suffix(".txt").exists()
    meta = json.loads((tmp_path / "report.json.run.json").read_text())
    assert set(meta) >= {"config_hash", "seed", "code_version", "command"}


def test_evaluate_replays_from_metadata(linear_features, tmp_path):
    out = tmp_path / "report.json"
    assert main(["evaluate", "--features", str(linear_features), "--out", str(out),
                 "--folds", "3", "--methods", "RIDGE", "--seed", "4"]) == 0
    first = out.read_bytes()
    meta = tmp_path / "report.json.run.json"
    out.unlink()
    assert main(["--config", str(meta), "evaluate"]) == 0
    assert out.read_bytes() == first


def test_ablate_emits_four_rows(linear_features, tmp_path):
    out = tmp_path / "abl.json"
    assert main(["ablate", "--features", str(linear_features), "--out", str(out),
                 "--folds", "2", "--methods", "RIDGE"]) == 0
    rows = out.with_suffix(".txt").read_text().strip().splitlines()
    assert len(rows) == 5
    assert [r.split("  ")[0].strip() for r in rows[1:]] == [
        "Single-Scale, Mean Pooling", "Multi-Scale, Mean Pooling",
        "Single-Scale, Mean+Std Pooling", "Multi-Scale, Mean+Std Pooling"]
    assert len(json.loads(out.read_text())) == 4


def test_config_file_and_precedence(linear_features, tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(f"evaluate:\n  features: {linear_features}\n  folds: 2\n  methods: [RIDGE]\n")
    out = tmp_path / "r.json"
    assert main(["--config", str(cfg), "evaluate", "--out", str(out), "--folds", "3"]) == 0
    assert len(json.loads(out.read_text())["folds"]) == 3
    cfg.write_text("evaluate:\n  bogus: 1\n")
    assert main(["--config", str(cfg), "evaluate"]) == 2


def test_evaluate_missing_features(tmp_path):
    assert main(["evaluate", "--features", str(tmp_path / "none.npz")]) == 3


def test_egtm_identical_pair_is_self_reconstruction(tmp_path, toy_model):
    ckpt = tmp_path / "m.pt"
    save_checkpoint(ckpt, toy_model, None, 0, TrainConfig.desk())
    x = colorful_image(3, 96)
    ex = colorful_image(4, 64)
    write_png(x, tmp_path / "x.png")
    write_png(ex, tmp_path / "ex.png")
    out = tmp_path / "y.png"
    assert main(["egtm", "--model", str(ckpt), "--input", str(tmp_path / "x.png"),
                 "--example-src", str(tmp_path / "ex.png"), "--example-tgt", str(tmp_path / "ex.png"),
                 "--out", str(out)]) == 0
    expected = tmp_path / "expected.png"
    write_png(reconstruct(toy_model, read_image(tmp_path / "x.png")), expected)
    np.testing.assert_array_equal(read_image(out).pixels, read_image(expected).pixels)


def test_egtm_bad_checkpoint(tmp_path):
    (tmp_path / "bad.pt").write_bytes(b"junk")
    write_png(colorful_image(0, 64), tmp_path / "x.png")
    x = str(tmp_path / "x.png")
    assert main(["egtm", "--model", str(tmp_path / "bad.pt"), "--input", x,
                 "--example-src", x, "--example-tgt", x]) != 0
