"""Four-chunk inference and top-k recognition metrics."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import tensor as tn
from .model import P3DModel, batch_inputs, model_forward
from .pose.sequence import PoseSequence, sample_eval_chunks


def chunk_probabilities(seq: PoseSequence, model: P3DModel) -> np.ndarray:
    """(4, C) class distributions, one per evaluation chunk."""
    chunks = sample_eval_chunks(seq, model.config.T)
    with tn.no_grad():
        return model_forward(model, batch_inputs(model.config, chunks), training=False).probs


def predict_video(seq: PoseSequence, model: P3DModel) -> np.ndarray:
    """Mean of the class distributions of the four evaluation chunks."""
    probs = chunk_probabilities(seq, model)
    total = probs[0]
    for p in probs[1:]:
        total = total + p
    return total / len(probs)


def predict_videos(seqs: Sequence[PoseSequence], model: P3DModel) -> np.ndarray:
    if not seqs:
        return np.zeros((0, model.config.num_classes))
    return np.stack([predict_video(s, model) for s in seqs])


def top_k_hits(probs: np.ndarray, labels: np.ndarray, k: int) -> np.ndarray:
    """Boolean hit per row; ties go to the lower class index."""
    probs = np.asarray(probs)
    # stable sort on -p keeps equal probabilities in index order
    order = np.argsort(-probs, axis=1, kind="stable")[:, :k]
    return (order == np.asarray(labels)[:, None]).any(axis=1)


@dataclass
class MetricsReport:
    per_instance_top1: float
    per_instance_top5: float
    per_class_top1: float
    per_class_top5: float
    num_instances: int
    num_classes_evaluated: int
    per_class: dict  # class index -> {"count", "top1", "top5"}
    per_instance: dict | None = None  # k -> accuracy for every requested k
    per_class_k: dict | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_class"] = {str(k): v for k, v in self.per_class.items()}
        return d


def compute_metrics(probs, labels, num_classes: int, k_list: Sequence[int] = (1, 5)) -> MetricsReport:
    """Per-instance (micro) and per-class (macro) top-k accuracy in percent.

    The macro mean runs over classes with at least one test instance.
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        raise ValueError("cannot compute metrics on an empty test set")
    if probs.shape != (labels.size, num_classes):
        raise ValueError(f"expected predictions of shape {(labels.size, num_classes)}, got {probs.shape}")
    ks = sorted(set(k_list) | {1, 5})
    hits = {k: top_k_hits(probs, labels, min(k, num_classes)) for k in ks}
    present = np.unique(labels)
    inst = {k: 100.0 * float(hits[k].mean()) for k in ks}
    per_class, macro = {}, {k: [] for k in ks}
    for c in present:
        mask = labels == c
        row = {"count": int(mask.sum())}
        for k in ks:
            acc = 100.0 * float(hits[k][mask].mean())
            macro[k].append(acc)
            row[f"top{k}"] = acc
        per_class[int(c)] = row
    cls = {k: float(np.mean(macro[k])) for k in ks}
    return MetricsReport(
        per_instance_top1=inst[1],
        per_instance_top5=inst[5],
        per_class_top1=cls[1],
        per_class_top5=cls[5],
        num_instances=int(labels.size),
        num_classes_evaluated=int(present.size),
        per_class=per_class,
        per_instance={k: inst[k] for k in k_list},
        per_class_k={k: cls[k] for k in k_list},
    )


def evaluate(model: P3DModel, seqs: Sequence[PoseSequence]) -> MetricsReport:
    probs = predict_videos(seqs, model)
    return compute_metrics(probs, [s.label for s in seqs], model.config.num_classes)


def format_metrics(report: MetricsReport, classes: Sequence[str] | None = None) -> str:
    lines = [
        f"instances {report.num_instances}, classes evaluated {report.num_classes_evaluated}",
        f"{'':14s}{'Top-1':>8s}{'Top-5':>8s}",
        f"{'Per-instance':14s}{report.per_instance_top1:8.2f}{report.per_instance_top5:8.2f}",
        f"{'Per-class':14s}{report.per_class_top1:8.2f}{report.per_class_top5:8.2f}",
        "",
        f"{'class':>20s}{'count':>7s}{'top1':>8s}{'top5':>8s}",
    ]
    for c, row in report.per_class.items():
        name = classes[c] if classes is not None else str(c)
        lines.append(f"{name:>20s}{row['count']:7d}{row['top1']:8.2f}{row['top5']:8.2f}")
    return "\n".join(lines) + "\n"
