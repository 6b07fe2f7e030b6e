"""Desk-scale synthetic sign data with a part-localised class signal.

Every class owns a deterministic sinusoidal motion pattern (frequency,
per-joint direction, phase) that is applied to one part only. The other
parts move with patterns drawn per sample, independent of the class, so a
model that never sees the discriminative part is at chance level.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..tensor import RngState
from .io import Dataset, Sample, write_manifest, write_sequence
from .layout import JOINT_PARTS, PART_ORDER
from .rotation import axis_angle_to_6d
from .sequence import PoseSequence

POS2D_AMPLITUDE = 0.1
POS3D_AMPLITUDE = 0.1
ROT_AMPLITUDE = 0.5
EXPR_AMPLITUDE = 1.0
BASE_CYCLES = 1.0
CYCLE_STEP = 0.75
CYCLE_WINDOW = 32


def _default_joints():
    return {"body": 10, "left_hand": 15, "right_hand": 15}


@dataclass
class SyntheticSpec:
    num_classes: int = 8
    samples_per_class: int = 16
    frames_per_video: int = 48
    noise_sigma: float = 0.05
    discriminative_part: str = "left_hand"
    seed: int = 0
    val_per_class: int = 0
    test_per_class: int = 0
    joints_per_part: dict = field(default_factory=_default_joints)
    expression_width: int = 10

    def validate(self) -> None:
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.samples_per_class < 1 or self.frames_per_video < 1:
            raise ValueError("samples_per_class and frames_per_video must be >= 1")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.discriminative_part not in PART_ORDER:
            raise ValueError(f"discriminative_part must be one of {PART_ORDER}")


@dataclass
class _Pattern:
    omega: np.ndarray  # (n,) angular frequency per channel group, rad/frame
    phase: np.ndarray  # (n,)
    dir2d: np.ndarray  # (n, 2)
    dir3d: np.ndarray  # (n, 3)
    axis: np.ndarray  # (n, 3)


def _unit(gen: np.random.Generator, shape) -> np.ndarray:
    v = gen.normal(size=shape)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def _cycles_to_omega(cycles) -> np.ndarray:
    return 2.0 * np.pi * np.asarray(cycles, dtype=np.float64) / CYCLE_WINDOW


def _class_pattern(gen, k: int, n: int) -> _Pattern:
    omega = np.full(n, _cycles_to_omega(BASE_CYCLES + CYCLE_STEP * k))
    return _Pattern(omega, gen.uniform(0, 2 * np.pi, n), _unit(gen, (n, 2)), _unit(gen, (n, 3)), _unit(gen, (n, 3)))


def _random_pattern(gen, num_classes: int, n: int) -> _Pattern:
    cycles = gen.uniform(BASE_CYCLES, BASE_CYCLES + CYCLE_STEP * (num_classes - 1))
    omega = np.full(n, _cycles_to_omega(cycles))
    return _Pattern(omega, gen.uniform(0, 2 * np.pi, n), _unit(gen, (n, 2)), _unit(gen, (n, 3)), _unit(gen, (n, 3)))


class SyntheticGenerator:
    def __init__(self, spec: SyntheticSpec):
        spec.validate()
        self.spec = spec
        self.rng = RngState(spec.seed)
        gen = self.rng.generator
        self.total_joints = sum(spec.joints_per_part[p] for p in JOINT_PARTS)
        # shared rest pose
        self.base2d = gen.uniform(0.2, 0.8, (self.total_joints, 2))
        self.base3d = gen.normal(scale=0.3, size=(self.total_joints, 3))
        self.base_rot = gen.normal(scale=0.3, size=(self.total_joints, 3))
        self.base_expr = gen.normal(scale=0.5, size=spec.expression_width)
        disc = spec.discriminative_part
        n = spec.expression_width if disc == "face" else spec.joints_per_part[disc]
        self.class_patterns = [_class_pattern(gen, k, n) for k in range(spec.num_classes)]

    def _part_rows(self, part: str) -> slice:
        start = 0
        for p in JOINT_PARTS:
            n = self.spec.joints_per_part[p]
            if p == part:
                return slice(start, start + n)
            start += n
        raise KeyError(part)

    def sample(self, label: int, seq_id: str) -> PoseSequence:
        spec, gen = self.spec, self.rng.generator
        L = spec.frames_per_video
        t = np.arange(L, dtype=np.float64)[:, None]
        pos2d = np.repeat(self.base2d[None], L, axis=0)
        pos3d = np.repeat(self.base3d[None], L, axis=0)
        aa = np.repeat(self.base_rot[None], L, axis=0)
        expr = np.repeat(self.base_expr[None], L, axis=0)
        for part in PART_ORDER:
            if part == spec.discriminative_part:
                pat = self.class_patterns[label]
            else:
                n = spec.expression_width if part == "face" else spec.joints_per_part[part]
                pat = _random_pattern(gen, spec.num_classes, n)
            wave = np.sin(t * pat.omega[None] + pat.phase[None])  # (L, n)
            if part == "face":
                expr = expr + EXPR_AMPLITUDE * wave * pat.dir3d[None, :, 0]
                continue
            rows = self._part_rows(part)
            pos2d[:, rows] += POS2D_AMPLITUDE * wave[..., None] * pat.dir2d[None]
            pos3d[:, rows] += POS3D_AMPLITUDE * wave[..., None] * pat.dir3d[None]
            aa[:, rows] += ROT_AMPLITUDE * wave[..., None] * pat.axis[None]
        root = gen.normal(scale=1.0, size=3)
        if spec.noise_sigma > 0:
            s = spec.noise_sigma
            pos2d = pos2d + gen.normal(scale=s, size=pos2d.shape)
            pos3d = pos3d + gen.normal(scale=s, size=pos3d.shape)
            aa = aa + gen.normal(scale=s, size=aa.shape)
            expr = expr + gen.normal(scale=s, size=expr.shape)
        return PoseSequence(
            pos2d=np.clip(pos2d, 0.0, 1.0).astype(np.float32),
            pos3d=pos3d.astype(np.float32),
            rot6d=axis_angle_to_6d(aa).astype(np.float32),
            expression=expr.astype(np.float32),
            root=root.astype(np.float32),
            label=label,
            id=seq_id,
        )

    def samples(self):
        spec = self.spec
        counts = {"train": spec.samples_per_class, "val": spec.val_per_class, "test": spec.test_per_class}
        for split, count in counts.items():
            for k in range(spec.num_classes):
                for i in range(count):
                    yield split, self.sample(k, f"c{k:03d}_{split}_{i:03d}")


def generate_sequences(spec: SyntheticSpec) -> dict[str, list[PoseSequence]]:
    """In-memory variant of :func:`generate_synthetic_dataset`."""
    out: dict[str, list[PoseSequence]] = {"train": [], "val": [], "test": []}
    for split, seq in SyntheticGenerator(spec).samples():
        out[split].append(seq)
    return out


def generate_synthetic_dataset(spec: SyntheticSpec, out_dir) -> Dataset:
    """Write P3DS files plus ``manifest.json`` under ``out_dir``."""
    out_dir = Path(out_dir)
    (out_dir / "sequences").mkdir(parents=True, exist_ok=True)
    classes = [f"class_{k:03d}" for k in range(spec.num_classes)]
    samples = []
    for split, seq in SyntheticGenerator(spec).samples():
        rel = f"sequences/{seq.id}.p3ds"
        write_sequence(out_dir / rel, seq)
        samples.append(Sample(seq.id, rel, seq.label, split, len(seq)))
    write_manifest(out_dir / "manifest.json", classes, samples)
    return Dataset(classes, samples, out_dir)


def spec_to_dict(spec: SyntheticSpec) -> dict:
    return asdict(spec)
