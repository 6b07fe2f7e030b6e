"""Pose sequences, alignment and chunk sampling."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ..tensor import RngState

NUM_EVAL_CHUNKS = 4


@dataclass
class PoseSequence:
    """All frames of one video.

    Arrays are frame-major: ``pos2d`` (L, J, 2), ``pos3d`` (L, J, 3),
    ``rot6d`` (L, J, 6), ``expression`` (L, E). ``root`` is the pelvis 3D
    position of frame 0 before alignment. Absent blocks are ``None``.
    """

    pos2d: np.ndarray | None = None
    pos3d: np.ndarray | None = None
    rot6d: np.ndarray | None = None
    expression: np.ndarray | None = None
    root: np.ndarray | None = None
    label: int = -1
    id: str = ""

    def __post_init__(self):
        lengths = {len(a) for a in self._blocks().values()}
        joints = {a.shape[1] for n, a in self._blocks().items() if n != "expression"}
        if not lengths:
            raise ValueError("a pose sequence needs at least one block")
        if len(lengths) != 1 or len(joints) > 1:
            raise ValueError("pose blocks disagree on frame or joint count")
        if lengths.pop() < 1:
            raise ValueError("a pose sequence needs at least one frame")
        if self.root is None:
            self.root = np.zeros(3, dtype=np.float32)

    def _blocks(self) -> dict[str, np.ndarray]:
        names = ("pos2d", "pos3d", "rot6d", "expression")
        return {n: getattr(self, n) for n in names if getattr(self, n) is not None}

    def __len__(self) -> int:
        return len(next(iter(self._blocks().values())))

    @property
    def num_joints(self) -> int:
        for n in ("pos2d", "pos3d", "rot6d"):
            if getattr(self, n) is not None:
                return getattr(self, n).shape[1]
        return 0

    @property
    def expression_width(self) -> int:
        return 0 if self.expression is None else self.expression.shape[1]

    def take(self, frames) -> "PoseSequence":
        """Sequence made of the given frame indices (repeats allowed)."""
        frames = np.asarray(frames, dtype=np.int64)
        picked = {n: a[frames] for n, a in self._blocks().items()}
        return replace(self, **picked)

    def frame(self, i: int) -> "PoseSequence":
        return self.take([i])


def align_2d(seq: PoseSequence) -> PoseSequence:
    """Map the tight bounding box of all finite 2D joints onto [0, 1]^2.

    The box spans every frame; each axis is scaled independently.
    """
    pts = seq.pos2d
    if pts is None:
        raise ValueError("sequence has no 2D pose")
    finite = np.all(np.isfinite(pts), axis=-1)
    if not finite.any():
        raise ValueError("no finite 2D keypoint in sequence")
    valid = pts[finite].astype(np.float64)
    lo, hi = valid.min(axis=0), valid.max(axis=0)
    span = hi - lo
    if np.any(span <= 0):
        raise ValueError("zero-area bounding box: all 2D points coincide on an axis")
    out = (pts.astype(np.float64) - lo) / span
    return replace(seq, pos2d=np.clip(out, 0.0, 1.0, where=np.isfinite(out), out=out).astype(pts.dtype))


def align_3d_root(seq: PoseSequence, root=None) -> PoseSequence:
    """Translate every 3D joint so frame 0's pelvis sits at the origin (no scaling)."""
    if seq.pos3d is None:
        raise ValueError("sequence has no 3D pose")
    root = np.asarray(seq.root if root is None else root, dtype=np.float64)
    shifted = (seq.pos3d.astype(np.float64) - root).astype(seq.pos3d.dtype)
    return replace(seq, pos3d=shifted, root=root.astype(np.float32))


def train_chunk_indices(length: int, T: int, rng: RngState) -> np.ndarray:
    """Frame indices of a random window of T consecutive frames.

    Videos shorter than T are repeated cyclically from frame 0.
    """
    if length < 1:
        raise ValueError("cannot sample from an empty sequence")
    if T < 1:
        raise ValueError("chunk length T must be >= 1")
    start = int(rng.generator.integers(0, length - T + 1)) if length >= T else 0
    return (start + np.arange(T)) % length


def eval_chunk_starts(length: int, T: int) -> list[int]:
    """Evenly spaced starts ``floor(i * (len - T) / 3)``, clamped at 0."""
    if length < 1:
        raise ValueError("cannot sample from an empty sequence")
    if T < 1:
        raise ValueError("chunk length T must be >= 1")
    span = max(length - T, 0)
    return [(i * span) // (NUM_EVAL_CHUNKS - 1) for i in range(NUM_EVAL_CHUNKS)]


def eval_chunk_indices(length: int, T: int) -> list[np.ndarray]:
    return [(s + np.arange(T)) % length for s in eval_chunk_starts(length, T)]


def sample_train_chunk(seq: PoseSequence, T: int, rng: RngState) -> PoseSequence:
    return seq.take(train_chunk_indices(len(seq), T, rng))


def sample_eval_chunks(seq: PoseSequence, T: int) -> list[PoseSequence]:
    return [seq.take(ix) for ix in eval_chunk_indices(len(seq), T)]
