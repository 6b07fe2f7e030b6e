import json

import numpy as np
import pytest
import yaml

from p3d.ablation import ENCODING_ROWS, REPRESENTATION_ROWS, ablation_report, ablation_rows
from p3d.cli import main
from p3d.config import ConfigError, RunConfig, load_run_config
from p3d.model import ModelConfig
from p3d.pose import SyntheticSpec, generate_sequences, generate_synthetic_dataset
from p3d.training import TrainConfig

JOINTS = {"body": 2, "left_hand": 3, "right_hand": 2}
SMALL_MODEL = {"T": 8, "D": 4, "alpha": 2, "N": 1, "heads": 2, "ffn_dim": 16}
SMALL_DATA = {"num_classes": 3, "samples_per_class": 3, "test_per_class": 1, "frames_per_video": 12,
              "joints_per_part": JOINTS, "expression_width": 4}


def write_config(path, **over):
    doc = {"model": dict(SMALL_MODEL), "train": {"epochs": 2, "batch_size": 4},
           "data": {"synthetic": dict(SMALL_DATA)}, "output_dir": "out"}
    doc.update(over)
    path.write_text(yaml.safe_dump(doc))
    return path


# ---------------------------------------------------------------- config

def test_empty_config_gives_default_hyperparameters():
    cfg = RunConfig.from_dict({"data": {"synthetic": {"num_classes": 100}}})
    assert cfg.model == ModelConfig()
    assert cfg.train == TrainConfig()
    assert (cfg.train.lr, cfg.train.weight_decay, cfg.train.batch_size, cfg.train.epochs) == (5e-4, 5e-3, 512, 500)


@pytest.mark.parametrize("doc", [
    {"modle": {}},
    {"model": {"depth": 3}},
    {"train": {"momentum": 0.9}},
    {"data": {"synthetic": {"classes": 3}}},
    {"data": {"manifest": "a.json", "synthetic": {}}},
    {"model": {"heads": 3}},
])
def test_bad_configs_rejected(doc):
    with pytest.raises((ConfigError, FileNotFoundError)):
        RunConfig.from_dict(doc)


def test_effective_config_round_trip(tmp_path):
    cfg = load_run_config(write_config(tmp_path / "run.yaml"))
    cfg.dump(tmp_path / "dumped.yaml")
    again = load_run_config(tmp_path / "dumped.yaml")
    assert again.to_dict() == cfg.to_dict()


def test_manifest_paths_resolve_against_config(tmp_path):
    (tmp_path / "data").mkdir()
    generate_synthetic_dataset(SyntheticSpec(**SMALL_DATA), tmp_path / "data")
    path = write_config(tmp_path / "run.yaml", data={"manifest": "data/manifest.json"})
    cfg = load_run_config(path)
    assert cfg.model.num_classes == 3
    assert len(cfg.load_split("train")) == 9


# ---------------------------------------------------------------- CLI

def test_unknown_subcommand(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["bogus"])
    assert exc.value.code != 0
    assert "usage" in capsys.readouterr().err


def test_no_subcommand(capsys):
    assert main([]) != 0
    assert "usage" in capsys.readouterr().err


def test_missing_config_is_one_line_error(tmp_path, capsys):
    assert main(["train", "--config", str(tmp_path / "nope.yaml")]) == 1
    err = capsys.readouterr().err.strip()
    assert len(err.splitlines()) == 1 and "nope.yaml" in err


def test_bad_key_reported(tmp_path, capsys):
    path = write_config(tmp_path / "bad.yaml", train={"epochz": 3})
    assert main(["train", "--config", str(path)]) == 1
    assert "epochz" in capsys.readouterr().err


def test_train_twice_same_history_then_eval(tmp_path, capsys):
    path = write_config(tmp_path / "run.yaml")
    assert main(["train", "--config", str(path), "--seed", "7"]) == 0
    first = (tmp_path / "out" / "history.tsv").read_text()
    assert main(["train", "--config", str(path), "--seed", "7"]) == 0
    assert (tmp_path / "out" / "history.tsv").read_text() == first
    assert first.splitlines()[0] == "epoch\tloss\ttrain_top1"
    dumped = yaml.safe_load((tmp_path / "out" / "config.yaml").read_text())
    assert dumped["train"]["seed"] == 7

    assert main(["eval", "--config", str(path), "--split", "test"]) == 0
    out = capsys.readouterr().out
    assert "Per-instance" in out and "Per-class" in out
    metrics = json.loads((tmp_path / "out" / "metrics_test.json").read_text())
    assert metrics["num_instances"] == 3


def test_eval_missing_checkpoint(tmp_path, capsys):
    path = write_config(tmp_path / "run.yaml")
    assert main(["eval", "--config", str(path), "--checkpoint", str(tmp_path / "x.p3dc")]) == 1
    assert "x.p3dc" in capsys.readouterr().err


def test_synth_then_train_from_manifest(tmp_path):
    path = write_config(tmp_path / "run.yaml")
    assert main(["synth", "--config", str(path), "--out", str(tmp_path / "ds")]) == 0
    manifest = json.loads((tmp_path / "ds" / "manifest.json").read_text())
    assert len(manifest["samples"]) == 12
    path2 = write_config(tmp_path / "run2.yaml", data={"manifest": "ds/manifest.json"}, output_dir="out2")
    # P3DS files do not record the per-part joint split, so a mismatch is a one-line error
    assert main(["train", "--config", str(path2)]) == 1
    path2 = write_config(tmp_path / "run2.yaml", data={"manifest": "ds/manifest.json"}, output_dir="out2",
                         model={**SMALL_MODEL, "joints_per_part": JOINTS, "expression_width": 4})
    assert main(["train", "--config", str(path2), "--precision", "double"]) == 0
    assert (tmp_path / "out2" / "checkpoint.p3dc").exists()


def test_preprocess(tmp_path, capsys):
    gen = np.random.default_rng(0)
    (tmp_path / "raw").mkdir()
    for name in ("a", "b"):
        np.savez(tmp_path / "raw" / f"{name}.npz", pos2d=gen.random((5, 7, 2)) * 100,
                 pos3d=gen.normal(size=(5, 7, 3)), rot_aa=gen.normal(size=(5, 7, 3)) * 0.2,
                 pelvis=np.zeros(3), expression=gen.normal(size=(5, 4)))
    assert main(["preprocess", "--input", str(tmp_path / "raw"), "--out", str(tmp_path / "seq")]) == 0
    assert sorted(p.name for p in (tmp_path / "seq").iterdir()) == ["a.p3ds", "b.p3ds"]
    assert main(["preprocess", "--input", str(tmp_path / "missing"), "--out", str(tmp_path / "x")]) == 1


def test_costs_prints_both_class_counts(tmp_path, capsys):
    assert main(["costs", "--out", str(tmp_path / "c")]) == 0
    out = capsys.readouterr().out
    assert "C = 100" in out and "C = 2000" in out
    rows = [l.split()[0] for l in out.splitlines() if l.split() and l.split()[0] in ("Late", "Middle", "Early")]
    assert rows == ["Late", "Middle", "Early"] * 2
    doc = json.loads((tmp_path / "c" / "costs.json").read_text())
    assert doc["early_params_c100"] == 3_719_060


def test_gradcheck_subcommand(capsys):
    assert main(["gradcheck", "--samples", "20"]) == 0
    assert "max relative error" in capsys.readouterr().out


def test_ablate_subcommand(tmp_path, capsys):
    path = write_config(tmp_path / "run.yaml", train={"epochs": 1, "batch_size": 9})
    assert main(["ablate", "--config", str(path), "--table", "ensemble"]) == 0
    table = json.loads((tmp_path / "out" / "ablation_ensemble.json").read_text())
    assert [r["label"] for r in table["rows"]] == ["Late", "Middle", "Early"]


# ---------------------------------------------------------------- ablation harness

def test_ablation_row_sets():
    base = ModelConfig()
    assert [r.label for r in ablation_rows("encoding", base)] == list(ENCODING_ROWS)
    assert len(ablation_rows("representations", base)) == 7 == len(REPRESENTATION_ROWS)
    assert len({r.config.reps for r in ablation_rows("representations", base)}) == 7
    parts = ablation_rows("parts", base)
    assert [r.flags for r in parts] == [(True, False, False), (True, False, True), (False, True, False),
                                        (True, True, False), (True, True, True)]
    with pytest.raises(ValueError):
        ablation_rows("depth", base)


def test_identical_configs_identical_metrics():
    spec = SyntheticSpec(**SMALL_DATA)
    data = generate_sequences(spec)
    base = ModelConfig(num_classes=3, joints_per_part=JOINTS, expression_width=4, **SMALL_MODEL)
    rows = ablation_rows("encoding", base)[-1:] * 2
    table = ablation_report(rows, data["train"], data["test"], TrainConfig(epochs=2, batch_size=4))
    assert table.rows[0]["metrics"] == table.rows[1]["metrics"]
