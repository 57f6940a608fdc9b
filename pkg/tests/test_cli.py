import csv
import json

import numpy as np
import pytest

from dcptlab.cli import main
from dcptlab.image import constant_image, read_ppm, write_ppm


def run(*argv):
    return main(["-q", *map(str, argv)])


@pytest.fixture(scope="module")
def data_dirs(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert run("gen-data", "--seed", 0, "--n", 12, "--generators", 3, "--out", root / "train") == 0
    assert run("gen-data", "--seed", 1, "--n", 6, "--generators", 3, "--out", root / "test") == 0
    return root


FAST = ("--epochs", 2, "--hidden-dim", 8, "--batch-size", 8, "--lr", 1e-2)


def test_gen_data_layout(tmp_path):
    assert run("gen-data", "--n", 9, "--out", tmp_path / "d") == 0
    entries = json.loads((tmp_path / "d" / "manifest.json").read_text())
    assert len(entries) == 18
    assert sorted({e["generator_id"] for e in entries}) == list(range(9))
    assert len(list((tmp_path / "d").glob("*.ppm"))) == 18


def test_gen_data_is_byte_identical(tmp_path):
    for name in ("a", "b"):
        assert run("gen-data", "--seed", 4, "--n", 3, "--out", tmp_path / name) == 0
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert files == sorted(p.name for p in (tmp_path / "b").iterdir())
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_train_writes_artifacts_and_echoes_config(data_dirs, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"lambda_f": 0.0, "lambda_p": 0.0, "epochs": 5}))
    out = tmp_path / "run"
    assert run("train", "--config", cfg, "--data", data_dirs / "train", "--out", out, *FAST) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    # flags beat the file, the file beats defaults, absent fields keep defaults
    assert manifest["config"]["epochs"] == 2
    assert manifest["config"]["lambda_f"] == 0.0 and manifest["config"]["lambda_p"] == 0.0
    assert manifest["config"]["p_deg"] == 0.5 and manifest["config"]["weight_decay"] == 0.01
    assert manifest["seed"] == 0
    for path in manifest["artifacts"].values():
        assert (out / path).exists()
    assert len(list(out.glob("manifest*.json"))) == 1
    rows = list(csv.reader(open(out / "epochs.csv")))
    assert rows[0] == ["epoch", "ce_clean", "ce_deg", "l_feat", "l_pred", "total", "train_acc"]
    assert len(rows) == 3


def test_train_validation_errors(data_dirs, tmp_path, capsys):
    code = run("train", "--data", data_dirs / "train", "--out", tmp_path, "--lambda-f", -1, "--p-deg", 2)
    assert code == 1
    err = capsys.readouterr().err
    assert "lambda_f" in err and "p_deg" in err
    bad = tmp_path / "bad.json"
    bad.write_text('{"lamda_p": 1}')
    assert run("train", "--config", bad, "--data", data_dirs / "train", "--out", tmp_path) == 1
    assert run("train", "--data", tmp_path / "nowhere", "--out", tmp_path) == 2


def test_train_rejects_single_class(tmp_path):
    run("gen-data", "--n", 3, "--out", tmp_path / "d")
    m = tmp_path / "d" / "manifest.json"
    m.write_text(json.dumps([e for e in json.loads(m.read_text()) if e["label"] == 0]))
    assert run("train", "--data", tmp_path / "d", "--out", tmp_path / "r", *FAST) == 1


def test_eval_report_and_repeatability(data_dirs, tmp_path):
    run("train", "--data", data_dirs / "train", "--out", tmp_path / "run", *FAST)
    for name in ("e1", "e2"):
        assert run("eval", "--checkpoint", tmp_path / "run" / "head.bin", "--data", data_dirs / "test",
                   "--out", tmp_path / name) == 0
    for f in ("grid.csv", "grid.json"):
        assert (tmp_path / "e1" / f).read_bytes() == (tmp_path / "e2" / f).read_bytes()
    rows = list(csv.reader(open(tmp_path / "e1" / "grid.csv")))
    assert [r[0] for r in rows[1:]] == ["Clean", "J70", "J50", "J30", "B1", "B2", "B3", "R.5", "R.25"]
    assert rows[0] == ["condition", "acc", "auc", "gen0", "gen1", "gen2"]


def test_eval_rejects_truncated_checkpoint(data_dirs, tmp_path):
    run("train", "--data", data_dirs / "train", "--out", tmp_path / "run", *FAST)
    ckpt = tmp_path / "run" / "head.bin"
    ckpt.write_bytes(ckpt.read_bytes()[:-5])
    assert run("eval", "--checkpoint", ckpt, "--data", data_dirs / "test", "--out", tmp_path / "e") == 2
    assert run("eval", "--checkpoint", tmp_path / "none.bin", "--data", data_dirs / "test",
               "--out", tmp_path / "e") == 2


def test_ablate_table(data_dirs, tmp_path):
    out = tmp_path / "abl"
    assert run("ablate", "--data", data_dirs / "train", "--eval-data", data_dirs / "test",
               "--out", out, *FAST) == 0
    rows = list(csv.DictReader(open(out / "ablation.csv")))
    assert [(r["variant"], float(r["lambda_f"]), float(r["lambda_p"])) for r in rows] == [
        ("Baseline", 0.0, 0.0), ("feat-only", 0.5, 0.0), ("pred-only", 0.0, 0.1), ("both", 0.5, 0.1)]
    assert len({r["seed"] for r in rows}) == 1
    for r in rows:
        mean = (float(r["J70"]) + float(r["J50"]) + float(r["J30"])) / 3
        assert float(r["jpeg_avg"]) == pytest.approx(mean, abs=1e-15)
    assert (out / "manifest.json").exists()


def test_gradcheck_exit_codes(capsys):
    assert run("gradcheck", "--configs", 8) == 0
    assert "PASS" in capsys.readouterr().out
    assert run("gradcheck", "--configs", 4, "--force-wrong") == 3
    assert "FAIL" in capsys.readouterr().out
    assert run("gradcheck", "--dim", 0) == 1


def test_degrade_commands(tmp_path, capsys):
    gray = tmp_path / "gray.ppm"
    write_ppm(constant_image(32, 40, 128), gray)
    assert run("degrade", "--in", gray, "--out", tmp_path / "j.ppm", "--kind", "jpeg", "--param", 50) == 0
    assert np.array_equal(read_ppm(tmp_path / "j.ppm"), read_ppm(gray))

    assert run("degrade", "--in", gray, "--out", tmp_path / "b.ppm", "--kind", "blur", "--param", 2.5) == 1
    assert "{1, 2, 3}" in capsys.readouterr().err
    assert run("degrade", "--in", gray, "--out", tmp_path / "b.ppm", "--kind", "blur", "--param", 2.5,
               "--unsafe") == 0

    noise = tmp_path / "noise.ppm"
    write_ppm(np.random.default_rng(0).integers(0, 256, (30, 44, 3), dtype=np.uint8), noise)
    assert run("degrade", "--in", noise, "--out", tmp_path / "r.ppm", "--kind", "resize", "--param", 0.5) == 0
    assert read_ppm(tmp_path / "r.ppm").shape == (30, 44, 3)


def test_degrade_bad_inputs(tmp_path):
    bad = tmp_path / "bad.ppm"
    bad.write_bytes(b"P3\n1 1\n255\n0 0 0\n")
    assert run("degrade", "--in", bad, "--out", tmp_path / "o.ppm", "--kind", "blur", "--param", 1) == 2
    assert run("degrade", "--in", bad, "--out", tmp_path / "o.ppm", "--kind", "sharpen", "--param", 1) == 1
    assert run("degrade", "--in", bad, "--out", tmp_path / "o.ppm", "--kind", "jpeg", "--param", 50.5) == 1
