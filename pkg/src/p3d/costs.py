"""Closed-form parameter and FLOP counts for a :class:`ModelConfig`.

Nothing here builds a model; the counts are derived from the layer formulas
alone so they can be checked against an instantiated network.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .model import ModelConfig
from .pose.layout import joint_width

# FLOPs charged per element for non-matmul work
SOFTMAX_PER_ELEMENT = 3  # exp, sum, divide
NORM_PER_ELEMENT = 5  # mean, centre, variance, scale, affine
GELU_PER_ELEMENT = 1
ADD_PER_ELEMENT = 1

FORMULA_SHEET = f"""\
FLOP conventions (per video chunk, multiply by batch):
  one multiply-accumulate = 2 FLOPs
  linear r x a -> b          : 2*r*a*b + r*b (bias)
  attention, width w, T steps: 4 projections (2*T*w^2 + T*w each)
                               scores 2*T^2*w, scaling h*T^2, softmax {SOFTMAX_PER_ELEMENT}*h*T^2,
                               weighted values 2*T^2*w
  feed-forward               : linear T x w -> ffn, GELU {GELU_PER_ELEMENT}*T*ffn, linear T x ffn -> w
  layer/batch norm           : {NORM_PER_ELEMENT} per element;  residual / PE add: {ADD_PER_ELEMENT} per element
  head                       : time mean T*d, batch norm, linear d -> C, softmax {SOFTMAX_PER_ELEMENT}*C
  ensembles                  : middle adds the feature average, late the probability average
Parameter formulas:
  encoder layer width w      : attention 4(w^2 + w) + FFN (2*w*ffn + ffn + w) + 2 layer norms (4w)
  MLP block                  : (d*ffn + ffn) + batch norm 2*ffn + (ffn*d + d)
  embedding                  : sum_j (F*D + D) + (E*alpha*D + alpha*D)
  head                       : d*C + C + batch norm 2d
"""


@dataclass
class CostReport:
    parameter_count: int = 0
    flops_per_forward: int = 0
    batch: int = 1
    T: int = 32
    breakdown: dict = field(default_factory=dict)
    formula: str = FORMULA_SHEET

    def total(self) -> int:
        return sum(self.breakdown.values())


def encoder_layer_params(w: int, ffn: int) -> int:
    return 4 * (w * w + w) + (2 * w * ffn + ffn + w) + 4 * w


def mlp_block_params(d: int, ffn: int) -> int:
    return (d * ffn + ffn) + 2 * ffn + (ffn * d + d)


def block_params(kind: str, config: ModelConfig) -> int:
    if kind == "PET":
        return sum(encoder_layer_params(w, config.ffn_dim) for w in config.part_widths)
    if kind == "WET":
        return encoder_layer_params(config.d_model, config.ffn_dim)
    return mlp_block_params(config.d_model, config.ffn_dim)


def embed_params(config: ModelConfig, reps) -> int:
    lay = config.stream_layout
    n = lay.num_joints * (joint_width(reps) * config.D + config.D)
    if lay.uses_expression:
        ad = config.alpha * config.D
        n += config.expression_width * ad + ad
    return n


def head_params(config: ModelConfig) -> int:
    d, c = config.d_model, config.num_classes
    return d * c + c + 2 * d


def count_params(config: ModelConfig) -> CostReport:
    first, second = config.block_kinds
    report = CostReport(T=config.T)
    for i, reps in enumerate(config.stream_reps):
        report.breakdown[f"stream{i}.embed"] = embed_params(config, reps)
        report.breakdown[f"stream{i}.blocks"] = config.N * (block_params(first, config) + block_params(second, config))
    heads = len(config.stream_reps) if config.ensemble == "late" else 1
    for h in range(heads):
        report.breakdown[f"head{h}"] = head_params(config)
    report.parameter_count = report.total()
    return report


# ---------------------------------------------------------------------------
# FLOPs
# ---------------------------------------------------------------------------

def _linear(rows: int, a: int, b: int) -> int:
    return 2 * rows * a * b + rows * b


def encoder_layer_flops(w: int, T: int, heads: int, ffn: int) -> int:
    attn = 4 * _linear(T, w, w)
    attn += 2 * T * T * w + heads * T * T + SOFTMAX_PER_ELEMENT * heads * T * T + 2 * T * T * w
    ff = _linear(T, w, ffn) + GELU_PER_ELEMENT * T * ffn + _linear(T, ffn, w)
    norms = 2 * NORM_PER_ELEMENT * T * w
    residual = 2 * ADD_PER_ELEMENT * T * w
    return attn + ff + norms + residual


def mlp_block_flops(d: int, T: int, ffn: int) -> int:
    return _linear(T, d, ffn) + NORM_PER_ELEMENT * T * ffn + GELU_PER_ELEMENT * T * ffn + _linear(T, ffn, d)


def block_flops(kind: str, config: ModelConfig, T: int) -> int:
    if kind == "PET":
        return sum(encoder_layer_flops(w, T, config.heads, config.ffn_dim) for w in config.part_widths)
    if kind == "WET":
        return encoder_layer_flops(config.d_model, T, config.heads, config.ffn_dim)
    return mlp_block_flops(config.d_model, T, config.ffn_dim)


def embed_flops(config: ModelConfig, reps, T: int) -> int:
    lay = config.stream_layout
    n = lay.num_joints * _linear(T, joint_width(reps), config.D)
    if lay.uses_expression:
        n += _linear(T, config.expression_width, config.alpha * config.D)
    if config.positional_encoding:
        n += ADD_PER_ELEMENT * T * config.d_model
    return n


def head_flops(config: ModelConfig, T: int) -> int:
    d, c = config.d_model, config.num_classes
    return T * d + NORM_PER_ELEMENT * d + _linear(1, d, c) + SOFTMAX_PER_ELEMENT * c


def count_flops(config: ModelConfig, batch: int = 1, T: int | None = None) -> CostReport:
    """FLOPs of one eval-mode forward over ``batch`` chunks of ``T`` frames."""
    T = config.T if T is None else T
    first, second = config.block_kinds
    streams = len(config.stream_reps)
    per_chunk: dict[str, int] = {}
    for i, reps in enumerate(config.stream_reps):
        per_chunk[f"stream{i}.embed"] = embed_flops(config, reps, T)
        per_chunk[f"stream{i}.blocks"] = config.N * (block_flops(first, config, T) + block_flops(second, config, T))
    if config.ensemble == "late":
        for h in range(streams):
            per_chunk[f"head{h}"] = head_flops(config, T)
        per_chunk["ensemble_average"] = ADD_PER_ELEMENT * streams * config.num_classes
    else:
        per_chunk["head0"] = head_flops(config, T)
        if config.ensemble == "middle":
            per_chunk["ensemble_average"] = ADD_PER_ELEMENT * streams * T * config.d_model
    report = CostReport(batch=batch, T=T, breakdown={k: v * batch for k, v in per_chunk.items()})
    report.flops_per_forward = report.total()
    report.parameter_count = count_params(config).parameter_count
    return report


def cost_table(config: ModelConfig, batch: int = 1) -> list[dict]:
    """One row per ensemble mode: late, middle, early."""
    rows = []
    for mode in ("late", "middle", "early"):
        cfg = config.replace(ensemble=mode)
        rows.append({
            "ensemble": mode,
            "num_classes": cfg.num_classes,
            "flops": count_flops(cfg, batch).flops_per_forward,
            "params": count_params(cfg).parameter_count,
        })
    return rows


def format_cost_table(rows: list[dict]) -> str:
    lines = [f"{'Ensemble':<10s}{'C':>6s}{'FLOPs (G)':>12s}{'# Params (M)':>14s}"]
    for r in rows:
        lines.append(f"{r['ensemble'].capitalize():<10s}{r['num_classes']:>6d}"
                     f"{r['flops'] / 1e9:>12.4f}{r['params'] / 1e6:>14.4f}")
    return "\n".join(lines) + "\n"
