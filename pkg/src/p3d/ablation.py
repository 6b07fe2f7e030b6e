"""Ablation tables: encoding methods, human parts, pose representations, ensembles."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

from .evaluation import evaluate
from .model import COMPOSITIONS, ModelConfig, build_model
from .pose.layout import PART_ORDER, REP_LABEL
from .pose.sequence import PoseSequence
from .tensor import RngState
from .training import TrainConfig, train

TABLES = ("encoding", "parts", "representations", "ensemble")
METRIC_COLUMNS = (
    ("per_instance_top1", "Per-instance Top-1"),
    ("per_instance_top5", "Per-instance Top-5"),
    ("per_class_top1", "Per-class Top-1"),
    ("per_class_top5", "Per-class Top-5"),
)

ENCODING_ROWS = ("MLP-WET", "MLP-PET", "PET-PET", "WET-WET", "PET-WET")
PART_ROWS = (
    ("body",),
    ("body", "face"),
    ("left_hand", "right_hand"),
    ("body", "left_hand", "right_hand"),
    PART_ORDER,
)
REPRESENTATION_ROWS = (
    ("pos2d",),
    ("pos3d",),
    ("rot6d",),
    ("pos2d", "pos3d"),
    ("pos2d", "rot6d"),
    ("pos3d", "rot6d"),
    ("pos2d", "pos3d", "rot6d"),
)
ENSEMBLE_ROWS = ("late", "middle", "early")

FLAG_COLUMNS = {
    "encoding": (),
    "parts": ("Body", "Hands", "Expr."),
    "representations": tuple(REP_LABEL.values()),
    "ensemble": (),
}

assert set(ENCODING_ROWS) == set(COMPOSITIONS)


@dataclass
class AblationRow:
    label: str
    config: ModelConfig
    flags: tuple[bool, ...] = ()


@dataclass
class AblationTable:
    kind: str
    flag_columns: tuple[str, ...]
    rows: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "table": self.kind,
            "flag_columns": list(self.flag_columns),
            "metric_columns": [key for key, _ in METRIC_COLUMNS],
            "rows": self.rows,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    def to_text(self) -> str:
        label_w = max([len(r["label"]) for r in self.rows] + [len("Method"), 10]) + 2
        head = "".join(f"{c:>8s}" for c in self.flag_columns)
        if not self.flag_columns:
            head = f"{'Method':<{label_w}s}"
        head += "".join(f"{name:>20s}" for _, name in METRIC_COLUMNS)
        lines = [head]
        for r in self.rows:
            if self.flag_columns:
                line = "".join(f"{'x' if f else '':>8s}" for f in r["flags"])
            else:
                line = f"{r['label']:<{label_w}s}"
            line += "".join(f"{r['metrics'][key]:>20.2f}" for key, _ in METRIC_COLUMNS)
            lines.append(line)
        return "\n".join(lines) + "\n"


def ablation_rows(kind: str, base: ModelConfig) -> list[AblationRow]:
    """The configurations of one table, in its canonical row order.

    Everything not under test stays as in ``base``.
    """
    if kind == "encoding":
        return [AblationRow(c, base.replace(block_composition=c)) for c in ENCODING_ROWS]
    if kind == "parts":
        rows = []
        for parts in PART_ROWS:
            flags = ("body" in parts, "left_hand" in parts, "face" in parts)
            label = "+".join(n for n, f in zip(("Body", "Hands", "Expr."), flags) if f)
            rows.append(AblationRow(label, base.replace(parts=parts), flags))
        return rows
    if kind == "representations":
        rows = []
        for reps in REPRESENTATION_ROWS:
            flags = tuple(r in reps for r in REP_LABEL)
            label = "+".join(REP_LABEL[r] for r in reps)
            rows.append(AblationRow(label, base.replace(reps=reps, ensemble="early"), flags))
        return rows
    if kind == "ensemble":
        return [AblationRow(m.capitalize(), base.replace(ensemble=m)) for m in ENSEMBLE_ROWS]
    raise ValueError(f"unknown ablation table {kind!r}; expected one of {TABLES}")


def ablation_report(
    rows: Sequence[AblationRow] | str,
    train_set: Sequence[PoseSequence],
    test_set: Sequence[PoseSequence],
    train_config: TrainConfig,
    base: ModelConfig | None = None,
) -> AblationTable:
    """Train and evaluate every row with the same seed."""
    kind = "custom"
    if isinstance(rows, str):
        if base is None:
            raise ValueError("a base ModelConfig is needed to expand a named table")
        kind = rows
        rows = ablation_rows(rows, base)
    table = AblationTable(kind, FLAG_COLUMNS.get(kind, ()))
    for row in rows:
        model = build_model(row.config, RngState(train_config.seed))
        train(model, train_set, train_config)
        report = evaluate(model, test_set)
        table.rows.append({
            "label": row.label,
            "flags": list(row.flags),
            "metrics": {key: getattr(report, key) for key, _ in METRIC_COLUMNS},
        })
    return table
