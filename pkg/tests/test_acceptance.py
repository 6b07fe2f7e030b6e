"""Acceptance suite: one test per criterion, each reported as a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``; the summary block at the
end of the session lists every criterion with its outcome.
"""

import json
import time

import numpy as np
import pytest
import yaml
from scipy.spatial.transform import Rotation

from p3d import tensor as tn
from p3d.ablation import ENCODING_ROWS, ENSEMBLE_ROWS, METRIC_COLUMNS, PART_ROWS, REPRESENTATION_ROWS, TABLES
from p3d.ablation import ablation_rows
from p3d.cli import main
from p3d.costs import count_flops, count_params
from p3d.evaluation import compute_metrics, evaluate
from p3d.gradcheck import model_grad_check, tiny_config
from p3d.model import ModelConfig, build_model, model_forward
from p3d.pose import (
    PART_ORDER,
    SyntheticSpec,
    generate_sequences,
    matrix_to_6d,
    read_sequence,
    sixd_to_matrix,
    write_sequence,
)
from p3d.tensor import RngState, Tensor
from p3d.training import TrainConfig, format_history, load_checkpoint, resume, save_checkpoint, train


def detail(request, text):
    request.node.user_properties.append(("detail", text))


# ---------------------------------------------------------------- 1

@pytest.mark.criterion(1, "gradient fidelity on the tiny config")
def test_gradient_fidelity(request):
    cfg = tiny_config()
    assert (cfg.T, cfg.D, cfg.heads, cfg.N, cfg.num_classes) == (4, 2, 2, 1, 3)
    assert set(cfg.joints_per_part.values()) == {2} and cfg.precision == "double"
    t0 = time.perf_counter()
    result = model_grad_check(cfg, num_samples=50)
    elapsed = time.perf_counter() - t0
    detail(request, f"{result['num_checked']} parameters, max rel err {result['max_rel_error']:.2e}")
    assert result["num_checked"] >= 50
    assert result["max_rel_error"] < 1e-4
    assert elapsed < 60


# ---------------------------------------------------------------- 2

OVERFIT_EPOCHS = 80  # fixed budget, well inside the 300-epoch cap


@pytest.mark.slow
@pytest.mark.criterion(2, "overfit oracle on the synthetic set, full-width model")
def test_overfit_oracle(request):
    spec = SyntheticSpec(num_classes=8, samples_per_class=16, noise_sigma=0.05, discriminative_part="left_hand",
                         test_per_class=8, seed=0)
    data = generate_sequences(spec)
    model = build_model(ModelConfig(num_classes=8), RngState(0))
    result = train(model, data["train"], TrainConfig(epochs=OVERFIT_EPOCHS, seed=0))
    first_full = next((r.epoch for r in result.history if r.train_top1 == 100.0), None)
    train_top1 = evaluate(model, data["train"]).per_instance_top1
    test = evaluate(model, data["test"])
    detail(request, f"train top-1 first 100% at epoch {first_full}, final train {train_top1:.1f}%, "
                    f"held-out {test.per_instance_top1:.1f}% on {test.num_instances} videos")
    assert first_full is not None and first_full <= 300
    assert train_top1 == 100.0
    assert test.num_instances == 64
    assert test.per_instance_top1 >= 90.0


# ---------------------------------------------------------------- 3

def input_part_columns(cfg):
    """Input feature columns owned by each part for a single-stream config."""
    lay, F = cfg.layout, 11
    cols = {p: np.arange(lay.part_slice(p).start * F, lay.part_slice(p).stop * F) for p in lay.joint_parts}
    jf = lay.num_joints * F
    cols["face"] = np.arange(jf, jf + lay.expression_width)
    return cols


@pytest.mark.criterion(3, "PET part-locality, 100 random inputs, every part")
def test_pet_part_locality(request):
    cfg = ModelConfig(dropout=0.0)
    stream = build_model(cfg, 0).streams[0]
    pet = stream.layers[0]
    in_cols = input_part_columns(cfg)
    out_cols = cfg.part_slices
    gen = np.random.default_rng(0)
    checks = 0
    with tn.no_grad():
        for _ in range(100):
            x = gen.normal(size=(1, cfg.T, cfg.input_width())).astype(np.float32)
            base = pet(stream.embed(Tensor(x))).data
            for part in PART_ORDER:
                y = x.copy()
                y[..., in_cols[part]] += gen.normal(size=(1, cfg.T, in_cols[part].size)).astype(np.float32)
                out = pet(stream.embed(Tensor(y))).data
                assert not np.array_equal(out[..., out_cols[part]], base[..., out_cols[part]])
                for other in PART_ORDER:
                    if other != part:
                        assert np.array_equal(out[..., out_cols[other]], base[..., out_cols[other]]), (part, other)
                        checks += 1
    detail(request, f"{checks} bitwise slice comparisons")


# ---------------------------------------------------------------- 4

@pytest.mark.criterion(4, "time-permutation invariance without PE, counter-test with PE")
def test_time_permutation(request):
    gen = np.random.default_rng(0)
    x = gen.normal(size=(2, 32, 450)).astype(np.float32)
    off = build_model(ModelConfig(positional_encoding=False), 0)
    base = model_forward(off, [x]).probs
    worst = 0.0
    for seed in range(10):
        perm = np.random.default_rng(seed).permutation(32)
        worst = max(worst, float(np.abs(model_forward(off, [x[:, perm]]).probs - base).max()))
    on = build_model(ModelConfig(positional_encoding=True), 0)
    base_on = model_forward(on, [x]).probs
    moved = max(float(np.abs(model_forward(on, [x[:, np.random.default_rng(s).permutation(32)]]).probs
                             - base_on).max()) for s in range(3))
    detail(request, f"PE off max change {worst:.1e}, PE on max change {moved:.1e}")
    assert worst <= 1e-6
    assert moved > 1e-4


# ---------------------------------------------------------------- 5

@pytest.mark.criterion(5, "cost accounting: exact counts, ordering, FLOP ratio, early param range")
def test_cost_accounting(request):
    mismatches, checked = [], 0
    for c in (100, 2000):
        base = ModelConfig(num_classes=c)
        for kind in TABLES:
            for row in ablation_rows(kind, base):
                checked += 1
                if count_params(row.config).parameter_count != build_model(row.config, 0).num_parameters():
                    mismatches.append((c, kind, row.label))
    assert not mismatches

    full = ModelConfig(num_classes=100)
    p = {m: count_params(full.replace(ensemble=m)).parameter_count for m in ENSEMBLE_ROWS}
    f = {m: count_flops(full.replace(ensemble=m)).flops_per_forward for m in ENSEMBLE_ROWS}
    ratio = f["middle"] / f["early"]
    detail(request, f"{checked} configs exact; early {p['early']:,} params; middle/early FLOPs {ratio:.4f}")
    assert p["early"] < p["middle"] < p["late"]
    assert f["early"] < f["middle"] <= f["late"]
    assert 1.6 <= ratio <= 2.8
    assert 3.4e6 <= p["early"] <= 5.6e6


def test_costs_report_documents_residual(tmp_path, capsys):
    assert main(["costs", "--out", str(tmp_path)]) == 0
    assert "4.94M" in capsys.readouterr().out
    doc = json.loads((tmp_path / "costs.json").read_text())
    assert "per-joint embedding" in doc["residual_note"]


# ---------------------------------------------------------------- 6

@pytest.mark.criterion(6, "dimension chain 450 -> 400 -> (80,120,120,80) -> head 400")
def test_dimension_chain(request):
    cfg = ModelConfig()
    model = build_model(cfg, 0)
    x = Tensor(np.zeros((1, cfg.T, 450), dtype=np.float32))
    with tn.no_grad():
        h = model.streams[0].embed(x)
        widths = [h.shape[-1]]
        for layer in model.streams[0].layers:
            h = layer(h)
            widths.append(h.shape[-1])
    slices = tuple(s.stop - s.start for s in cfg.part_slices.values())
    detail(request, f"input {cfg.input_width()}, layers {sorted(set(widths))}, slices {slices}")
    assert cfg.input_width() == 450
    assert set(widths) == {400}
    assert slices == (80, 120, 120, 80)
    assert model.heads[0].fc.weight.shape[0] == 400


# ---------------------------------------------------------------- 7

def brute_force(probs, labels, k):
    hits = []
    for p, y in zip(probs, labels):
        order = sorted(range(len(p)), key=lambda c: (-p[c], c))
        hits.append(y in order[:k])
    hits = np.array(hits, dtype=float)
    per_class = [hits[labels == c].mean() for c in np.unique(labels)]
    return 100 * hits.mean(), 100 * float(np.mean(per_class))


@pytest.mark.criterion(7, "metrics vs brute force on 1,000 random sets")
def test_metrics_oracle(request):
    gen = np.random.default_rng(0)
    balanced = 0
    for i in range(1000):
        c = int(gen.integers(2, 15))
        if i % 4 == 0:
            labels = np.repeat(np.arange(c), int(gen.integers(1, 5)))
        else:
            labels = gen.integers(c, size=int(gen.integers(1, 50)))
        probs = gen.dirichlet(np.ones(c), size=labels.size)
        if i % 3 == 0:
            probs = np.round(probs, 1)
        r = compute_metrics(probs, labels, c)
        for k, inst, cls in ((1, r.per_instance_top1, r.per_class_top1), (5, r.per_instance_top5, r.per_class_top5)):
            bi, bc = brute_force(probs, labels, min(k, c))
            assert inst == pytest.approx(bi, abs=1e-9) and cls == pytest.approx(bc, abs=1e-9)
        assert r.per_instance_top5 >= r.per_instance_top1 and r.per_class_top5 >= r.per_class_top1
        if i % 4 == 0:
            balanced += 1
            assert r.per_instance_top1 == pytest.approx(r.per_class_top1, abs=1e-9)
            assert r.per_instance_top5 == pytest.approx(r.per_class_top5, abs=1e-9)
    detail(request, f"1000 sets, {balanced} balanced")


# ---------------------------------------------------------------- 8

@pytest.mark.criterion(8, "rotation round trip on 10,000 rotations, Gram-Schmidt orthonormality")
def test_rotation_math(request):
    R = Rotation.random(10_000, random_state=0).as_matrix()
    back = sixd_to_matrix(matrix_to_6d(R))
    dev = float(np.abs(back - R).max())
    a = np.random.default_rng(1).normal(size=(10_000, 6))
    M = sixd_to_matrix(a)
    ortho = float(np.abs(np.swapaxes(M, -1, -2) @ M - np.eye(3)).max())
    det = float(np.abs(np.linalg.det(M) - 1).max())
    detail(request, f"round trip {dev:.1e}, orthonormality {ortho:.1e}, det {det:.1e}")
    assert dev < 1e-6
    assert ortho < 1e-9
    assert det < 1e-9


# ---------------------------------------------------------------- 9

@pytest.mark.criterion(9, "bitwise determinism, resume, P3DS and checkpoint round trips")
def test_determinism_and_persistence(request, tmp_path):
    joints = {"body": 2, "left_hand": 3, "right_hand": 2}
    spec = SyntheticSpec(num_classes=3, samples_per_class=3, frames_per_video=12, joints_per_part=joints,
                         expression_width=4, seed=2)
    seqs = generate_sequences(spec)["train"]
    cfg = ModelConfig(num_classes=3, T=8, joints_per_part=joints, expression_width=4, D=4, alpha=2, N=1,
                      heads=2, ffn_dim=16, dropout=0.2)
    tc = TrainConfig(epochs=4, batch_size=4, seed=11)

    a = train(build_model(cfg, RngState(11)), seqs, tc)
    b = train(build_model(cfg, RngState(11)), seqs, tc)
    assert format_history(a.history) == format_history(b.history)
    for (_, pa), (_, pb) in zip(a.model.named_parameters(), b.model.named_parameters()):
        assert pa.data.tobytes() == pb.data.tobytes()

    half = train(build_model(cfg, RngState(11)), seqs, TrainConfig(epochs=2, batch_size=4, seed=11))
    save_checkpoint(tmp_path / "half.p3dc", half.model, half.optim, half.rng, half.epoch, half.history, tc)
    resumed = resume(tmp_path / "half.p3dc", seqs)
    assert format_history(resumed.history) == format_history(a.history)
    for (_, pa), (_, pb) in zip(a.model.named_parameters(), resumed.model.named_parameters()):
        assert pa.data.tobytes() == pb.data.tobytes()
    for (_, ba), (_, bb) in zip(a.model.named_buffers(), resumed.model.named_buffers()):
        assert ba.tobytes() == bb.tobytes()

    save_checkpoint(tmp_path / "a.p3dc", a.model, a.optim, a.rng, a.epoch, a.history, tc)
    ck = load_checkpoint(tmp_path / "a.p3dc")
    save_checkpoint(tmp_path / "b.p3dc", ck.model, ck.optim, ck.rng, ck.epoch, ck.history, ck.train_config)
    assert (tmp_path / "a.p3dc").read_bytes() == (tmp_path / "b.p3dc").read_bytes()

    write_sequence(tmp_path / "s.p3ds", seqs[0])
    again = read_sequence(tmp_path / "s.p3ds")
    write_sequence(tmp_path / "t.p3ds", again)
    assert (tmp_path / "s.p3ds").read_bytes() == (tmp_path / "t.p3ds").read_bytes()
    for name in ("pos2d", "pos3d", "rot6d", "expression"):
        assert getattr(seqs[0], name).tobytes() == getattr(again, name).tobytes()
    detail(request, "training, resume, checkpoint and P3DS bytes identical")


# ---------------------------------------------------------------- 10

ABLATION_JOINTS = {"body": 3, "left_hand": 4, "right_hand": 4}


@pytest.mark.slow
@pytest.mark.criterion(10, "ablation table shapes and the discriminative-part direction")
def test_ablation_harness(request, tmp_path):
    doc = {
        "model": {"T": 8, "D": 4, "alpha": 2, "N": 1, "heads": 2, "ffn_dim": 32, "dropout": 0.0,
                  "joints_per_part": ABLATION_JOINTS, "expression_width": 4},
        "train": {"epochs": 40, "batch_size": 16, "lr": 3e-3},
        "data": {"synthetic": {"num_classes": 4, "samples_per_class": 8, "test_per_class": 4,
                               "frames_per_video": 24, "discriminative_part": "left_hand",
                               "joints_per_part": ABLATION_JOINTS, "expression_width": 4}},
        "output_dir": "ablate",
    }
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump(doc))
    assert main(["ablate", "--config", str(path), "--table", "all"]) == 0

    tables = {k: json.loads((tmp_path / "ablate" / f"ablation_{k}.json").read_text()) for k in TABLES}
    metric_keys = [k for k, _ in METRIC_COLUMNS]
    for t in tables.values():
        assert t["metric_columns"] == metric_keys
        assert all(set(metric_keys) <= set(r["metrics"]) for r in t["rows"])
    assert [r["label"] for r in tables["encoding"]["rows"]] == list(ENCODING_ROWS)
    assert tables["parts"]["flag_columns"] == ["Body", "Hands", "Expr."]
    assert len(tables["parts"]["rows"]) == len(PART_ROWS)
    assert tables["representations"]["flag_columns"] == ["2D pos.", "3D pos.", "3D rot."]
    assert len(tables["representations"]["rows"]) == len(REPRESENTATION_ROWS)
    assert [r["label"] for r in tables["ensemble"]["rows"]] == ["Late", "Middle", "Early"]

    with_part, without = [], []
    for row, parts in zip(tables["parts"]["rows"], PART_ROWS):
        top1 = row["metrics"]["per_instance_top1"]
        (with_part if "left_hand" in parts else without).append(top1)
    detail(request, f"with left hand {with_part}, without {without}")
    assert min(with_part) > max(without)
