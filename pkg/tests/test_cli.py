import subprocess
import sys

import numpy as np
import pytest

from aibe.cli import main
from aibe.datakit import load_dataset


def files(d):
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    d = tmp_path_factory.mktemp("data")
    assert main(["gen", "--classes-seen", "6", "--classes-unseen", "3", "--attrs", "8", "--dim", "16",
                 "--per-class", "20", "--sigma", "0.1", "--seed", "7", "--out", str(d)]) == 0
    return d


def test_gen_writes_loadable_dataset(data, tmp_path):
    ds = load_dataset(data, heldout=True)
    assert ds.seen_features.shape == (120, 16) and ds.unseen_features.shape == (60, 16)
    main(["gen", "--classes-seen", "6", "--classes-unseen", "3", "--attrs", "8", "--dim", "16",
          "--per-class", "20", "--sigma", "0.1", "--seed", "7", "--out", str(tmp_path)])
    assert files(tmp_path) == files(data)


def test_usage_errors(capsys):
    assert main(["gen"]) == 1
    assert main(["eval", "--data", "x", "--out", "y", "--setting", "bogus"]) == 1
    assert main(["frobnicate"]) == 1
    assert main(["train", "--data", "x", "--out", "y", "--ablation", "dropout=off"]) == 1


def test_invalid_spec_is_validation_error(tmp_path):
    assert main(["gen", "--sigma", "-1", "--out", str(tmp_path)]) == 2


def test_train_without_label_file(data, tmp_path):
    blind = tmp_path / "blind"
    blind.mkdir()
    for p in data.iterdir():
        if p.name != "unseen_labels.csv":
            (blind / p.name).write_bytes(p.read_bytes())
    out = tmp_path / "run"
    assert main(["train", "--data", str(blind), "--out", str(out), "--set", "epochs_visual=3",
                 "--set", "epochs_semantic=3"]) == 0
    assert {"visual/manifest.csv", "semantic/manifest.csv", "train_log.csv", "config.txt"} <= set(files(out))
    assert main(["eval", "--data", str(blind), "--out", str(out)]) == 2


def test_uvc_ablation_zeroes_applied_weight(data, tmp_path):
    cfg = tmp_path / "c.txt"
    cfg.write_text("epochs_visual=4\nepochs_semantic=2\n")
    assert main(["train", "--config", str(cfg), "--data", str(data), "--out", str(tmp_path / "r"),
                 "--ablation", "uvc=off"]) == 0
    rows = [r.split(",") for r in (tmp_path / "r" / "train_log.csv").read_text().splitlines()]
    assert rows[0] == ["epoch", "l_svc", "l_uvc", "omega2", "l_ssa", "l_usa"]
    visual = [r for r in rows[1:] if r[1]]
    assert len(visual) == 4 and all(float(r[3]) == 0.0 for r in visual)
    assert "uvc=false" in (tmp_path / "r" / "config.txt").read_text()


def test_flags_override_config(data, tmp_path):
    cfg = tmp_path / "c.txt"
    cfg.write_text("seed=1\nepochs_visual=1\nepochs_semantic=1\nembed_kind=GAE\n")
    main(["train", "--config", str(cfg), "--seed", "5", "--data", str(data), "--out", str(tmp_path / "r"),
          "--ablation", "embed=fce"])
    text = (tmp_path / "r" / "config.txt").read_text()
    assert "seed=5" in text and "embed_kind=FCE" in text


def test_bad_config_exit_code(data, tmp_path):
    cfg = tmp_path / "c.txt"
    cfg.write_text("omega1=1.5\n")
    assert main(["train", "--config", str(cfg), "--data", str(data), "--out", str(tmp_path / "r")]) == 2


def test_eval_gzsl_consistent(data, tmp_path, capsys):
    out = tmp_path / "r"
    main(["train", "--data", str(data), "--out", str(out), "--set", "epochs_visual=5", "--set", "epochs_semantic=20"])
    capsys.readouterr()
    export = tmp_path / "emb.csv"
    assert main(["eval", "--data", str(data), "--out", str(out), "--setting", "gzsl", "--export", str(export)]) == 0
    printed = dict(line.split() for line in capsys.readouterr().out.splitlines())
    u, s, h = float(printed["MCA_u"]), float(printed["MCA_s"]), float(printed["H"])
    assert abs(h - (2 * u * s / (u + s) if u + s else 0.0)) <= 0.1
    rows = export.read_text().splitlines()
    assert len(rows) == 60 + 3 and rows[-1].startswith("semantic,8,")
    report = dict(r.split(",") for r in (out / "report_gzsl.csv").read_text().splitlines()[:5])
    assert np.isclose(float(report["h"]) * 100, h, atol=0.05)


def test_missing_checkpoint(data, tmp_path):
    assert main(["eval", "--data", str(data), "--out", str(tmp_path)]) == 2


def test_module_entry_point():
    done = subprocess.run([sys.executable, "-m", "aibe", "--help"], capture_output=True, text=True)
    assert done.returncode == 0 and "gradcheck" in done.stdout
