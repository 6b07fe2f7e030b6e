"""End-to-end finite-difference check of the full model on a tiny configuration."""

from __future__ import annotations

import numpy as np

from . import tensor as tn
from .model import ModelConfig, build_model, model_forward
from .tensor import RngState
from .training import loss_for


def tiny_config(**overrides) -> ModelConfig:
    """T=4, 2 joints per part, D=2, 2 heads, one block pair, 3 classes, double precision."""
    kw = dict(
        num_classes=3, T=4, joints_per_part={"body": 2, "left_hand": 2, "right_hand": 2},
        expression_width=3, D=2, alpha=2, N=1, heads=2, ffn_dim=8, precision="double",
    )
    kw.update(overrides)
    return ModelConfig(**kw)


def model_grad_check(config: ModelConfig | None = None, num_samples: int | None = 50, batch: int = 4,
                     seed: int = 0, h: float = 1e-5, tol: float = 1e-4) -> dict:
    """Cross-entropy gradient of a randomly initialised model against central differences.

    The forward runs in training mode (batch statistics, dropout) with the
    dropout stream re-seeded on every evaluation so that the loss is a
    deterministic function of the parameters.
    """
    config = config or tiny_config()
    if config.precision != "double":
        raise ValueError("finite-difference checks need precision='double'")
    model = build_model(config, RngState(seed))
    gen = np.random.default_rng(seed + 1)
    inputs = [gen.normal(size=(batch, config.T, config.input_width(s))) for s in range(len(config.stream_reps))]
    labels = gen.integers(config.num_classes, size=batch)

    def loss():
        return loss_for(model_forward(model, inputs, training=True, rng=RngState(seed + 2)), labels)

    result = tn.grad_check(loss, model.named_parameters(), h=h, tol=tol, num_samples=num_samples, seed=seed)
    result["num_parameters"] = model.num_parameters()
    return result
