"""The P3D network: joint-wise embedding, alternating part-wise / whole-body
encoders, mean-pooled prediction head, and the three ensemble modes."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Sequence

import numpy as np

from . import tensor as tn
from .nn import BatchNorm1d, EncoderLayer, JointwiseLinear, Linear, Module
from .pose.layout import (
    PART_ORDER,
    REPRESENTATIONS,
    PartLayout,
    assemble_features,
    joint_width,
    normalize_reps,
)
from .pose.sequence import PoseSequence
from .tensor import RngState, Tensor

COMPOSITIONS = ("PET-WET", "PET-PET", "WET-WET", "MLP-WET", "MLP-PET")
ENSEMBLES = ("early", "middle", "late")


def _default_joints():
    return {"body": 10, "left_hand": 15, "right_hand": 15}


@dataclass
class ModelConfig:
    """Architecture knobs. Defaults reproduce the full P3D model."""

    num_classes: int = 100
    T: int = 32
    parts: tuple = PART_ORDER
    joints_per_part: dict = field(default_factory=_default_joints)
    expression_width: int = 10
    reps: tuple = REPRESENTATIONS
    D: int = 8
    alpha: int = 10
    N: int = 3
    heads: int = 4
    ffn_dim: int = 256
    dropout: float = 0.3
    block_composition: str = "PET-WET"
    ensemble: str = "early"
    positional_encoding: bool = True
    norm_first: bool = False
    # middle/late only: whether each per-representation stream also carries
    # the expression (face) part
    stream_expression: bool = False
    precision: str = "single"

    def __post_init__(self):
        self.parts = tuple(p for p in PART_ORDER if p in tuple(self.parts))
        self.reps = normalize_reps(self.reps)
        self.joints_per_part = dict(self.joints_per_part)
        self.validate()

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown model config key(s): {', '.join(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["parts"] = list(self.parts)
        out["reps"] = list(self.reps)
        return out

    def replace(self, **changes) -> "ModelConfig":
        return replace(self, **changes)

    # -- derived layout ----------------------------------------------------
    @property
    def layout(self) -> PartLayout:
        return PartLayout(self.parts, self.joints_per_part, self.expression_width)

    @property
    def stream_reps(self) -> list[tuple[str, ...]]:
        if self.ensemble == "early":
            return [self.reps]
        return [(r,) for r in self.reps]

    @property
    def stream_parts(self) -> tuple[str, ...]:
        if self.ensemble == "early" or self.stream_expression:
            return self.parts
        return tuple(p for p in self.parts if p != "face")

    @property
    def stream_layout(self) -> PartLayout:
        return PartLayout(self.stream_parts, self.joints_per_part, self.expression_width)

    def part_width(self, part: str) -> int:
        return self.alpha * self.D if part == "face" else self.joints_per_part[part] * self.D

    @property
    def part_widths(self) -> tuple[int, ...]:
        return tuple(self.part_width(p) for p in self.stream_parts)

    @property
    def part_slices(self) -> dict[str, slice]:
        out, start = {}, 0
        for p, w in zip(self.stream_parts, self.part_widths):
            out[p] = slice(start, start + w)
            start += w
        return out

    @property
    def d_model(self) -> int:
        return sum(self.part_widths)

    def input_width(self, stream: int = 0) -> int:
        lay = self.stream_layout
        width = lay.num_joints * joint_width(self.stream_reps[stream])
        return width + (self.expression_width if lay.uses_expression else 0)

    @property
    def block_kinds(self) -> tuple[str, str]:
        first, second = self.block_composition.split("-")
        return first, second

    @property
    def dtype(self) -> np.dtype:
        return tn.resolve_dtype(self.precision)

    def validate(self) -> None:
        if self.block_composition not in COMPOSITIONS:
            raise ValueError(f"block_composition must be one of {COMPOSITIONS}, got {self.block_composition!r}")
        if self.ensemble not in ENSEMBLES:
            raise ValueError(f"ensemble must be one of {ENSEMBLES}, got {self.ensemble!r}")
        if self.ensemble != "early" and len(self.reps) < 2:
            raise ValueError(f"{self.ensemble} ensemble needs at least two representations")
        for name in ("num_classes", "T", "D", "alpha", "N", "heads", "ffn_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        tn.resolve_dtype(self.precision)
        _ = self.layout
        if not self.stream_parts:
            raise ValueError("no part left for the per-representation streams; enable stream_expression")
        for p, w in zip(self.stream_parts, self.part_widths):
            if w % self.heads:
                raise ValueError(f"{p} width {w} is not divisible by {self.heads} heads")

    def assemble(self, seq: PoseSequence) -> list[np.ndarray]:
        """Per-stream input rows (L, input_width(s)) for one sequence."""
        lay = self.stream_layout
        return [assemble_features(seq, reps, lay).astype(self.dtype, copy=False) for reps in self.stream_reps]


def positional_encoding(T: int, width: int, dtype=np.float64) -> np.ndarray:
    """Sinusoidal table: even columns sin, odd columns cos."""
    pos = np.arange(T, dtype=np.float64)[:, None]
    i = np.arange(0, width, 2, dtype=np.float64)
    angle = pos / np.power(10000.0, i / width)
    pe = np.zeros((T, width))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle[:, : width // 2])
    return pe.astype(dtype)


# ---------------------------------------------------------------------------
# blocks
# ---------------------------------------------------------------------------

class PartwiseEncoder(Module):
    """PET: a dedicated encoder layer per part channel slice."""

    kind = "PET"

    def __init__(self, config: ModelConfig, rng: RngState):
        super().__init__()
        self.slices = config.part_slices
        for part, sl in self.slices.items():
            setattr(self, part, EncoderLayer(sl.stop - sl.start, config.heads, config.ffn_dim, config.dropout,
                                             rng, config.dtype, config.norm_first))

    def __call__(self, x: Tensor, training: bool = False, rng: RngState | None = None) -> Tensor:
        width = next(reversed(self.slices.values())).stop
        if x.shape[-1] != width:
            raise ValueError(f"PET expects width {width}, got {x.shape[-1]}")
        outs = [getattr(self, part)(x[..., sl], training, rng) for part, sl in self.slices.items()]
        return tn.concat(outs, axis=-1)


class WholeBodyEncoder(Module):
    """WET: one encoder layer over all channels."""

    kind = "WET"

    def __init__(self, config: ModelConfig, rng: RngState):
        super().__init__()
        self.layer = EncoderLayer(config.d_model, config.heads, config.ffn_dim, config.dropout, rng,
                                  config.dtype, config.norm_first)

    def __call__(self, x: Tensor, training: bool = False, rng: RngState | None = None) -> Tensor:
        return self.layer(x, training, rng)


class MLPBlock(Module):
    """Per-frame FC -> batch norm (over all frames in the batch) -> GELU -> dropout -> FC."""

    kind = "MLP"

    def __init__(self, config: ModelConfig, rng: RngState):
        super().__init__()
        self.width = config.d_model
        self.dropout = config.dropout
        self.fc1 = Linear(config.d_model, config.ffn_dim, rng, config.dtype)
        self.norm = BatchNorm1d(config.ffn_dim, config.dtype)
        self.fc2 = Linear(config.ffn_dim, config.d_model, rng, config.dtype)

    def __call__(self, x: Tensor, training: bool = False, rng: RngState | None = None) -> Tensor:
        if x.shape[-1] != self.width:
            raise ValueError(f"MLP block expects width {self.width}, got {x.shape[-1]}")
        h = tn.gelu(self.norm(self.fc1(x), training))
        return self.fc2(tn.dropout(h, self.dropout, training, rng))


BLOCKS = {"PET": PartwiseEncoder, "WET": WholeBodyEncoder, "MLP": MLPBlock}


class Embedding(Module):
    """Joint-wise F->D maps plus the expression E->alpha*D map, then positional encoding."""

    def __init__(self, config: ModelConfig, reps: tuple[str, ...], rng: RngState):
        super().__init__()
        lay = config.stream_layout
        self.num_joints = lay.num_joints
        self.F = joint_width(reps)
        self.E = config.expression_width if lay.uses_expression else 0
        self.input_width = self.num_joints * self.F + self.E
        self.width = config.d_model
        if self.num_joints:
            self.joints = JointwiseLinear(self.num_joints, self.F, config.D, rng, config.dtype)
        if self.E:
            self.expression = Linear(self.E, config.alpha * config.D, rng, config.dtype)
        self.pe = positional_encoding(config.T, self.width, config.dtype) if config.positional_encoding else None

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.input_width:
            raise ValueError(f"input width {x.shape[-1]} does not match expected {self.input_width}")
        jf = self.num_joints * self.F
        pieces = []
        if self.num_joints:
            pieces.append(self.joints(x[..., :jf]))
        if self.E:
            pieces.append(self.expression(x[..., jf:]))
        out = tn.concat(pieces, axis=-1)
        if self.pe is not None:
            T = x.shape[-2]
            if T > self.pe.shape[0]:
                self.pe = positional_encoding(T, self.width, self.pe.dtype)
            out = out + self.pe[:T]
        return out


class Stream(Module):
    """Embedding followed by N (first-block, second-block) pairs."""

    def __init__(self, config: ModelConfig, reps: tuple[str, ...], rng: RngState):
        super().__init__()
        self.reps = reps
        self.embed = Embedding(config, reps, rng)
        first, second = config.block_kinds
        layers = []
        for _ in range(config.N):
            layers.append(BLOCKS[first](config, rng))
            layers.append(BLOCKS[second](config, rng))
        self.add_module_list("layers", layers)

    def __call__(self, x: Tensor, training: bool = False, rng: RngState | None = None) -> Tensor:
        h = self.embed(x)
        for layer in self.layers:
            h = layer(h, training, rng)
        return h


class Head(Module):
    """Time mean -> batch norm -> FC -> softmax."""

    def __init__(self, config: ModelConfig, rng: RngState):
        super().__init__()
        self.norm = BatchNorm1d(config.d_model, config.dtype)
        self.fc = Linear(config.d_model, config.num_classes, rng, config.dtype)

    def features(self, x: Tensor) -> Tensor:
        return time_mean(x)

    def __call__(self, x: Tensor, training: bool = False) -> tuple[Tensor, Tensor]:
        if x.ndim != 3:
            raise ValueError(f"head expects (B, T, d) input, got {x.shape}")
        if x.shape[-1] != self.fc.in_features:
            raise ValueError(f"head expects width {self.fc.in_features}, got {x.shape[-1]}")
        logits = self.fc(self.norm(self.features(x), training))
        return logits, tn.softmax(logits, axis=-1)


def time_mean(x: Tensor) -> Tensor:
    """Mean over axis 1, summed in sorted order so any frame permutation
    gives a bit-identical result."""
    t = x.shape[1]
    out = np.sort(x.data, axis=1).sum(axis=1) * x.dtype.type(1.0 / t)

    def backward(g):
        x._accumulate(np.broadcast_to(g[:, None, :] * x.dtype.type(1.0 / t), x.shape))

    return tn._result(out, (x,), backward)


@dataclass
class ModelOutput:
    log_probs: Tensor  # (B, C)
    probs: np.ndarray  # (B, C)
    logits: Tensor | None  # (B, C); None for the late ensemble
    features: np.ndarray  # (B, d_model) time-mean feature fed to the head(s)


class P3DModel(Module):
    def __init__(self, config: ModelConfig, rng: RngState):
        super().__init__()
        self.config = config
        self.add_module_list("streams", [Stream(config, reps, rng) for reps in config.stream_reps])
        num_heads = len(self.streams) if config.ensemble == "late" else 1
        self.add_module_list("heads", [Head(config, rng) for _ in range(num_heads)])

    def __call__(self, inputs, training: bool = False, rng: RngState | None = None) -> ModelOutput:
        return model_forward(self, inputs, training, rng)


def build_model(config: ModelConfig, rng: RngState | int = 0) -> P3DModel:
    """Initialise every parameter deterministically from ``rng``.

    Linear weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases 0, norm gains 1.
    """
    if not isinstance(rng, RngState):
        rng = RngState(rng)
    config.validate()
    return P3DModel(config, rng)


def _as_input(x, dtype) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=dtype))


def model_forward(model: P3DModel, inputs: Sequence, training: bool = False,
                  rng: RngState | None = None) -> ModelOutput:
    """Forward a batch. ``inputs`` holds one (B, T, width) array per stream."""
    cfg = model.config
    if isinstance(inputs, (np.ndarray, Tensor)):
        inputs = [inputs]
    if len(inputs) != len(model.streams):
        raise ValueError(f"{cfg.ensemble} ensemble expects {len(model.streams)} input stream(s), got {len(inputs)}")
    xs = [_as_input(x, cfg.dtype) for x in inputs]
    for x in xs:
        if x.ndim != 3:
            raise ValueError(f"stream input must be (B, T, width), got {x.shape}")
    feats = [stream(x, training, rng) for stream, x in zip(model.streams, xs)]

    if cfg.ensemble == "late":
        outs = [head(f, training) for head, f in zip(model.heads, feats)]
        log_each = tn.stack([tn.log_softmax(logits, axis=-1) for logits, _ in outs], axis=0)
        log_probs = tn.logsumexp(log_each, axis=0) + (-math.log(len(outs)))
        probs = tn.average([p for _, p in outs]).data
        pooled = np.mean([time_mean(f).data for f in feats], axis=0)
        return ModelOutput(log_probs, probs, None, pooled)

    fused = feats[0] if len(feats) == 1 else tn.average(feats)
    logits, probs = model.heads[0](fused, training)
    return ModelOutput(tn.log_softmax(logits, axis=-1), probs.data, logits, time_mean(fused).data)


def batch_inputs(config: ModelConfig, chunks: Sequence[PoseSequence]) -> list[np.ndarray]:
    """Stack assembled chunks into per-stream (B, T, width) arrays."""
    per_chunk = [config.assemble(c) for c in chunks]
    return [np.stack([pc[s] for pc in per_chunk]) for s in range(len(config.stream_reps))]
