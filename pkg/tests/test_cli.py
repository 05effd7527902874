import json
import os

import numpy as np
import pytest

from segprompt.archive import load_archive
from segprompt.cli import main


def run_cli(capsys, argv):
    code = main(argv)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def one_line_summary(out):
    lines = [line for line in out.splitlines() if line.strip()]
    assert len(lines) == 1, lines
    doc = json.loads(lines[0])
    assert "command" in doc and "seed" in doc and "config_hash" in doc
    return doc


def tree_bytes(root):
    out = {}
    for dirpath, _dirnames, filenames in os.walk(root):
        for fn in filenames:
            path = os.path.join(dirpath, fn)
            with open(path, "rb") as f:
                out[os.path.relpath(path, root)] = f.read()
    return out


def write_config(tmp_path, doc, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


SMALL_ARCH_CONFIG = {
    "patch_size": 16,
    "embed_dim": 16,
    "num_layers": 1,
    "num_heads": 2,
    "mlp_ratio": 2,
    "mask_mode": "none",
}


def test_gen_data_summary_and_rerun_bytes(capsys, tmp_path):
    argv = ["gen-data", "--out", None, "--seed", "5", "--classes", "3",
            "--per-class", "2"]
    roots = [str(tmp_path / "a"), str(tmp_path / "b")]
    summaries = []
    for root in roots:
        argv[2] = root
        code, out, _err = run_cli(capsys, list(argv))
        assert code == 0
        summaries.append(one_line_summary(out))
    for doc in summaries:
        assert doc["command"] == "gen-data"
        assert doc["seed"] == 5
        # 2 train + 1 test per class, 3 classes
        assert doc["samples"] == 9
    assert summaries[0]["config_hash"] == summaries[1]["config_hash"]
    assert tree_bytes(roots[0]) == tree_bytes(roots[1])


def test_segment_builtin_and_external(capsys, tiny_root, tmp_path):
    out1 = str(tmp_path / "m1")
    code, out, _err = run_cli(capsys, ["segment", "--data", tiny_root,
                                       "--out", out1])
    assert code == 0
    doc = one_line_summary(out)
    assert doc["masks"] == 48
    assert doc["source"] == "builtin"
    assert doc["mean_iou_vs_gt"] > 0.9

    out2 = str(tmp_path / "m2")
    code, _out, _err = run_cli(capsys, ["segment", "--data", tiny_root,
                                        "--out", out2])
    assert code == 0
    assert tree_bytes(out1) == tree_bytes(out2)

    # ingesting the ground-truth masks reproduces them exactly
    gt_dir = os.path.join(tiny_root, "gt_masks")
    out3 = str(tmp_path / "m3")
    code, out, _err = run_cli(capsys, ["segment", "--data", tiny_root,
                                       "--external", gt_dir, "--out", out3])
    assert code == 0
    doc = one_line_summary(out)
    assert doc["source"] == "external"
    assert doc["mean_iou_vs_gt"] == 1.0


def test_train_probe_eval_pipeline(capsys, tiny_root, tmp_path):
    config = write_config(tmp_path, dict(SMALL_ARCH_CONFIG, epochs=1))
    ckpt = str(tmp_path / "model.mfc1")
    argv = ["train", "--data", tiny_root, "--config", config,
            "--fraction", "0.25", "--seed", "0", "--out", ckpt]
    code, out, _err = run_cli(capsys, argv)
    assert code == 0
    doc = one_line_summary(out)
    assert doc["train_samples"] == 8
    assert doc["final_loss"] is not None
    assert os.path.isfile(ckpt) and os.path.isfile(ckpt + ".json")

    ckpt2 = str(tmp_path / "model2.mfc1")
    argv2 = list(argv)
    argv2[-1] = ckpt2
    code, _out, _err = run_cli(capsys, argv2)
    assert code == 0
    with open(ckpt, "rb") as a, open(ckpt2, "rb") as b:
        assert a.read() == b.read()
    sidecar = json.load(open(ckpt + ".json"))
    assert sidecar["train_config"]["mask_mode"] == "none"
    assert len(sidecar["history"]) == 1

    probe = str(tmp_path / "probe.mfc1")
    code, out, _err = run_cli(capsys, ["probe", "--ckpt", ckpt, "--data",
                                       tiny_root, "--fraction", "0.25",
                                       "--seed", "0", "--out", probe])
    assert code == 0
    doc = one_line_summary(out)
    assert doc["train_samples"] == 8
    arrays = load_archive(probe)
    assert arrays["weights"].shape == (4, 16)
    assert arrays["bias"].shape == (1, 4)
    feats = load_archive(probe + ".features.mfc1")
    assert feats["features"].shape == (8, 16)
    assert feats["labels"].shape == (8, 1)
    meta = json.load(open(probe + ".json"))
    assert meta["fraction"] == 0.25

    metrics_path = str(tmp_path / "metrics.json")
    code, out, _err = run_cli(capsys, ["eval", "--ckpt", ckpt, "--probe", probe,
                                       "--data", tiny_root, "--out", metrics_path])
    assert code == 0
    doc = one_line_summary(out)
    metrics = json.load(open(metrics_path))
    assert metrics["test_samples"] == 16
    assert doc["accuracy"] == metrics["accuracy"]
    assert 0.0 <= metrics["accuracy"] <= 1.0
    assert int(np.sum(metrics["confusion"])) == 16


def test_experiment_cli_deterministic(capsys, tiny_root, tmp_path):
    config = write_config(tmp_path, dict(SMALL_ARCH_CONFIG, epochs=0))
    reports = []
    for name in ("r1.json", "r2.json"):
        out_path = str(tmp_path / name)
        code, out, _err = run_cli(capsys, ["experiment", "--data", tiny_root,
                                           "--config", config,
                                           "--fractions", "0.5",
                                           "--seeds", "0,1",
                                           "--out", out_path])
        assert code == 0
        doc = one_line_summary(out)
        assert doc["cells"] == 4
        assert set(doc["mean_accuracy"]) == {"masked", "unmasked"}
        with open(out_path, "rb") as f:
            reports.append(f.read())
        assert os.path.isfile(os.path.splitext(out_path)[0] + ".csv")
    assert reports[0] == reports[1]
    report = json.loads(reports[0])
    assert [c["pipeline"] for c in report["cells"]] == [
        "masked", "unmasked", "masked", "unmasked",
    ]


def test_gradcheck_command(capsys):
    code, out, _err = run_cli(capsys, ["gradcheck", "--trials", "1"])
    assert code == 0
    doc = one_line_summary(out)
    assert doc["ok"] is True
    assert doc["max_relative_error"] < 1e-4


def test_flag_overrides_config_file(capsys, tiny_root, tmp_path):
    config = write_config(
        tmp_path, dict(SMALL_ARCH_CONFIG, epochs=0, mask_mode="builtin")
    )
    ckpt = str(tmp_path / "override.mfc1")
    code, _out, _err = run_cli(capsys, ["train", "--data", tiny_root,
                                        "--config", config,
                                        "--fraction", "0.25", "--out", ckpt,
                                        "--mask-mode", "none"])
    assert code == 0
    sidecar = json.load(open(ckpt + ".json"))
    assert sidecar["train_config"]["mask_mode"] == "none"


def test_exit_code_bad_fraction(capsys, tiny_root, tmp_path):
    code, out, err = run_cli(capsys, ["train", "--data", tiny_root,
                                      "--fraction", "2.0",
                                      "--out", str(tmp_path / "x.mfc1")])
    assert code == 1
    assert out == ""
    assert "FractionOutOfRange" in err


def test_exit_code_unknown_flag(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["gen-data", "--bogus"])
    assert exc.value.code == 1


def test_exit_code_missing_dataset(capsys, tmp_path):
    code, out, err = run_cli(capsys, ["train", "--data",
                                      str(tmp_path / "missing"),
                                      "--out", str(tmp_path / "x.mfc1")])
    assert code == 2
    assert out == ""


def test_exit_code_unknown_config_key(capsys, tiny_root, tmp_path):
    config = write_config(tmp_path, {"bogus": 1})
    code, _out, err = run_cli(capsys, ["train", "--data", tiny_root,
                                       "--config", config,
                                       "--out", str(tmp_path / "x.mfc1")])
    assert code == 1
    assert "bogus" in err


def test_exit_code_config_not_json(capsys, tiny_root, tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{nope")
    code, _out, _err = run_cli(capsys, ["train", "--data", tiny_root,
                                        "--config", str(path),
                                        "--out", str(tmp_path / "x.mfc1")])
    assert code == 2


def test_exit_code_bad_gen_value(capsys, tmp_path):
    code, _out, err = run_cli(capsys, ["gen-data", "--out",
                                       str(tmp_path / "d"), "--classes", "9"])
    assert code == 1
    assert "ValidationError" in err


def test_exit_code_empty_experiment_grid(capsys, tiny_root, tmp_path):
    code, _out, _err = run_cli(capsys, ["experiment", "--data", tiny_root,
                                        "--fractions", "", "--seeds", "0",
                                        "--out", str(tmp_path / "r.json")])
    assert code == 1
