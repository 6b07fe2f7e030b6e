"""Joint layout, representation selection and per-frame feature assembly."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PART_ORDER = ("body", "left_hand", "right_hand", "face")
JOINT_PARTS = PART_ORDER[:3]
REPRESENTATIONS = ("pos2d", "pos3d", "rot6d")
REP_WIDTH = {"pos2d": 2, "pos3d": 3, "rot6d": 6}
REP_LABEL = {"pos2d": "2D pos.", "pos3d": "3D pos.", "rot6d": "3D rot."}


def _default_joints():
    return {"body": 10, "left_hand": 15, "right_hand": 15}


@dataclass(frozen=True)
class PartLayout:
    """Which human parts are used and how many joints each part owns.

    ``joints_per_part`` describes the full joint set stored on disk (always
    body, left hand, right hand in that order); ``parts`` selects the subset
    fed to the model. ``face`` stands for the expression vector.
    """

    parts: tuple[str, ...] = PART_ORDER
    joints_per_part: dict = field(default_factory=_default_joints)
    expression_width: int = 10

    def __post_init__(self):
        unknown = [p for p in self.parts if p not in PART_ORDER]
        if unknown:
            raise ValueError(f"unknown part(s) {unknown}; choose from {PART_ORDER}")
        if not self.parts:
            raise ValueError("at least one part must be selected")
        if len(set(self.parts)) != len(self.parts):
            raise ValueError(f"duplicate parts in {self.parts}")
        ordered = tuple(p for p in PART_ORDER if p in self.parts)
        object.__setattr__(self, "parts", ordered)
        if set(self.joints_per_part) != set(JOINT_PARTS):
            raise ValueError(f"joints_per_part needs exactly the keys {JOINT_PARTS}")
        if self.uses_expression and self.expression_width < 1:
            raise ValueError("face part selected but expression_width is 0")

    def __hash__(self):
        return hash((self.parts, tuple(self.joints_per_part[p] for p in JOINT_PARTS), self.expression_width))

    @property
    def joint_parts(self) -> tuple[str, ...]:
        return tuple(p for p in self.parts if p != "face")

    @property
    def uses_expression(self) -> bool:
        return "face" in self.parts

    @property
    def total_joints(self) -> int:
        """Joints stored per frame (all three joint parts)."""
        return sum(self.joints_per_part[p] for p in JOINT_PARTS)

    @property
    def num_joints(self) -> int:
        """Joints fed to the model."""
        return sum(self.joints_per_part[p] for p in self.joint_parts)

    def joint_indices(self) -> np.ndarray:
        """Indices into the stored joint axis for the selected joint parts."""
        idx, start = [], 0
        for p in JOINT_PARTS:
            n = self.joints_per_part[p]
            if p in self.parts:
                idx.extend(range(start, start + n))
            start += n
        return np.asarray(idx, dtype=np.int64)

    def part_slice(self, part: str) -> slice:
        start = 0
        for p in JOINT_PARTS:
            n = self.joints_per_part[p]
            if p == part:
                return slice(start, start + n)
            start += n
        raise KeyError(part)


def normalize_reps(reps) -> tuple[str, ...]:
    reps = tuple(reps)
    unknown = [r for r in reps if r not in REPRESENTATIONS]
    if unknown:
        raise ValueError(f"unknown representation(s) {unknown}; choose from {REPRESENTATIONS}")
    if not reps:
        raise ValueError("at least one joint representation must be selected")
    return tuple(r for r in REPRESENTATIONS if r in reps)


def joint_width(reps) -> int:
    """Per-joint feature width F for a representation subset."""
    return sum(REP_WIDTH[r] for r in normalize_reps(reps))


def feature_width(layout: PartLayout, reps, expression: bool | None = None) -> int:
    if expression is None:
        expression = layout.uses_expression
    return layout.num_joints * joint_width(reps) + (layout.expression_width if expression else 0)


def assemble_features(seq, reps, layout: PartLayout, expression: bool | None = None) -> np.ndarray:
    """Flatten frames of ``seq`` into rows of length ``J*F (+ E)``.

    Per joint (in part order) the selected blocks are concatenated as
    pos2d, pos3d, rot6d; the expression block, when enabled, comes last.
    """
    reps = normalize_reps(reps)
    if expression is None:
        expression = layout.uses_expression
    if seq.num_joints != layout.total_joints:
        raise ValueError(f"sequence has {seq.num_joints} joints but the layout stores {layout.total_joints} "
                         f"({dict(layout.joints_per_part)})")
    idx = layout.joint_indices()
    blocks = []
    for r in reps:
        arr = getattr(seq, r)
        if arr is None:
            raise ValueError(f"sequence has no {r} block")
        blocks.append(arr[:, idx, :])
    frames = blocks[0].shape[0]
    if idx.size:
        joints = np.concatenate(blocks, axis=-1).reshape(frames, -1)
    else:
        joints = np.zeros((frames, 0), dtype=blocks[0].dtype)
    if expression:
        if seq.expression is None:
            raise ValueError("sequence has no expression block")
        joints = np.concatenate([joints, seq.expression], axis=-1)
    return joints


def assemble_frame_features(frame, reps, layout: PartLayout, expression: bool | None = None) -> np.ndarray:
    """Single-frame version of :func:`assemble_features`."""
    return assemble_features(frame, reps, layout, expression)[0]
