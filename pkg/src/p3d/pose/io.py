"""P3DS sequence files and JSON dataset manifests.

P3DS layout (little-endian)::

    b"P3DS" | u32 version | u32 num_frames | u32 num_joints | u32 flags
    | u32 expression_width | 3 x f32 pelvis (frame 0, pre-alignment)
    | per frame: per joint [pos2d(2) pos3d(3) rot6d(6)] present blocks, then expression

flags: bit0 pos2d, bit1 pos3d, bit2 rot6d, bit3 expression.
"""

from __future__ import annotations

import json
import os
import struct
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .layout import REP_WIDTH, REPRESENTATIONS
from .sequence import PoseSequence

MAGIC = b"P3DS"
VERSION = 1
_HEADER = struct.Struct("<4sIIIII3f")
_FLAG_BITS = {"pos2d": 1, "pos3d": 2, "rot6d": 4, "expression": 8}
SPLITS = ("train", "val", "test")


class FormatError(ValueError):
    pass


def write_sequence(path, seq: PoseSequence) -> None:
    flags, widths = 0, []
    for rep in REPRESENTATIONS:
        if getattr(seq, rep) is not None:
            flags |= _FLAG_BITS[rep]
            widths.append(REP_WIDTH[rep])
    if seq.expression is not None:
        flags |= _FLAG_BITS["expression"]
    if not widths:
        raise FormatError("sequence carries no joint representation")
    frames, joints = len(seq), seq.num_joints
    root = np.asarray(seq.root, dtype=np.float32)
    header = _HEADER.pack(MAGIC, VERSION, frames, joints, flags, seq.expression_width, *root.tolist())
    blocks = [getattr(seq, r).astype("<f4").reshape(frames, joints, -1) for r in REPRESENTATIONS
              if getattr(seq, r) is not None]
    payload = np.concatenate(blocks, axis=-1).reshape(frames, -1)
    if seq.expression is not None:
        payload = np.concatenate([payload, seq.expression.astype("<f4")], axis=-1)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(payload, dtype="<f4").tobytes())


def read_sequence(path, label: int = -1, seq_id: str | None = None) -> PoseSequence:
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise FormatError(f"bad magic in {path}")
    if len(raw) < _HEADER.size:
        raise FormatError(f"truncated header in {path}")
    _, version, frames, joints, flags, ew, *root = _HEADER.unpack_from(raw)
    if version != VERSION:
        raise FormatError(f"version mismatch in {path}: file has {version}, reader supports {VERSION}")
    if flags & ~0xF:
        raise FormatError(f"unknown flag bits {flags:#x} in {path}")
    present = [r for r in REPRESENTATIONS if flags & _FLAG_BITS[r]]
    has_expr = bool(flags & _FLAG_BITS["expression"])
    if not present:
        raise FormatError(f"flag/width inconsistency in {path}: no joint representation")
    if has_expr != (ew > 0):
        raise FormatError(f"flag/width inconsistency in {path}: expression flag {has_expr} with width {ew}")
    per_joint = sum(REP_WIDTH[r] for r in present)
    row = joints * per_joint + ew
    expected = _HEADER.size + 4 * frames * row
    if len(raw) < expected:
        raise FormatError(f"truncated payload in {path}")
    if len(raw) > expected:
        raise FormatError(f"trailing bytes in {path}")
    data = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(frames, row).astype(np.float32)
    joint_block = data[:, : joints * per_joint].reshape(frames, joints, per_joint)
    out, col = {}, 0
    for r in present:
        out[r] = np.ascontiguousarray(joint_block[:, :, col:col + REP_WIDTH[r]])
        col += REP_WIDTH[r]
    expr = np.ascontiguousarray(data[:, joints * per_joint:]) if has_expr else None
    return PoseSequence(expression=expr, root=np.asarray(root, dtype=np.float32), label=label,
                        id=seq_id if seq_id is not None else Path(path).stem, **out)


@dataclass
class Sample:
    id: str
    file: str
    label: int
    split: str
    num_frames: int


@dataclass
class Dataset:
    """A manifest plus lazy access to its sequence files."""

    classes: list[str]
    samples: list[Sample]
    root: Path = field(default_factory=Path)

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    def path(self, sample: Sample) -> Path:
        return self.root / sample.file

    def split_samples(self, split: str) -> list[Sample]:
        if split not in SPLITS:
            raise ValueError(f"unknown split {split!r}; expected one of {SPLITS}")
        return [s for s in self.samples if s.split == split]

    def iter_split(self, split: str) -> Iterator[PoseSequence]:
        for s in self.split_samples(split):
            yield self.load(s)

    def load(self, sample: Sample) -> PoseSequence:
        return read_sequence(self.path(sample), label=sample.label, seq_id=sample.id)

    def load_split(self, split: str) -> list[PoseSequence]:
        return list(self.iter_split(split))

    def class_counts(self, split: str | None = None) -> dict[int, int]:
        pool = self.samples if split is None else self.split_samples(split)
        counts = Counter(s.label for s in pool)
        return dict(sorted(counts.items()))


def load_dataset(manifest_path) -> Dataset:
    manifest_path = Path(manifest_path)
    try:
        doc = json.loads(manifest_path.read_text())
    except FileNotFoundError:
        raise FileNotFoundError(f"manifest not found: {manifest_path}") from None
    except json.JSONDecodeError as exc:
        raise ValueError(f"manifest {manifest_path} is not valid JSON: {exc}") from None
    if not isinstance(doc, dict) or set(doc) != {"classes", "samples"}:
        raise ValueError(f"manifest {manifest_path} must have exactly the keys 'classes' and 'samples'")
    classes = [str(c) for c in doc["classes"]]
    root = manifest_path.parent
    samples, seen = [], set()
    for i, entry in enumerate(doc["samples"]):
        missing = {"id", "file", "label", "split", "num_frames"} - set(entry)
        if missing:
            raise ValueError(f"sample #{i} misses key(s) {sorted(missing)}")
        s = Sample(str(entry["id"]), str(entry["file"]), int(entry["label"]), str(entry["split"]),
                   int(entry["num_frames"]))
        if s.id in seen:
            raise ValueError(f"duplicate sample id {s.id!r}")
        seen.add(s.id)
        if not 0 <= s.label < len(classes):
            raise ValueError(f"sample {s.id!r}: label {s.label} out of range [0, {len(classes)})")
        if s.split not in SPLITS:
            raise ValueError(f"sample {s.id!r}: unknown split {s.split!r}")
        if not (root / s.file).is_file():
            raise FileNotFoundError(f"sample {s.id!r}: dangling file reference {root / s.file}")
        samples.append(s)
    return Dataset(classes, samples, root)


def write_manifest(path, classes, samples) -> None:
    doc = {
        "classes": list(classes),
        "samples": [
            {"id": s.id, "file": s.file, "label": s.label, "split": s.split, "num_frames": s.num_frames}
            for s in samples
        ],
    }
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")
    os.replace(tmp, path)
