"""Layer building blocks used by the P3D model."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import tensor as tn
from .tensor import BatchNormState, RngState, Tensor


class Module:
    """Container that names its parameters and buffers by attribute path."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._modules: dict[str, Module] = {}

    def __setattr__(self, key, value):
        if isinstance(value, Module):
            self.__dict__.setdefault("_modules", {})[key] = value
        object.__setattr__(self, key, value)

    def add_param(self, name: str, value: np.ndarray) -> Tensor:
        t = Tensor(value, requires_grad=True, name=name)
        self._params[name] = t
        object.__setattr__(self, name, t)
        return t

    def add_module_list(self, name: str, modules) -> list:
        modules = list(modules)
        for i, m in enumerate(modules):
            self._modules[f"{name}.{i}"] = m
        object.__setattr__(self, name, modules)
        return modules

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for name, m in self._modules.items():
            yield from m.named_parameters(prefix + name + ".")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, m in self._modules.items():
            yield from m.named_buffers(prefix + name + ".")

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


def _uniform(rng: RngState, shape, fan_in: int, dtype) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.generator.uniform(-bound, bound, size=shape).astype(dtype)


class Linear(Module):
    """Affine map ``x @ W + b`` applied over the last axis."""

    def __init__(self, in_features: int, out_features: int, rng: RngState, dtype=np.float32):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        self.add_param("weight", _uniform(rng, (in_features, out_features), in_features, dtype))
        self.add_param("bias", np.zeros(out_features, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return tn.matmul(x, self.weight) + self.bias


class JointwiseLinear(Module):
    """A separate ``F -> D`` linear map for each of ``J`` joints.

    Input (..., J*F), output (..., J*D), joints kept in input order.
    """

    def __init__(self, num_joints: int, in_features: int, out_features: int, rng: RngState, dtype=np.float32):
        super().__init__()
        self.num_joints = num_joints
        self.in_features = in_features
        self.out_features = out_features
        self.add_param("weight", _uniform(rng, (num_joints, in_features, out_features), in_features, dtype))
        self.add_param("bias", np.zeros((num_joints, out_features), dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        lead = x.shape[:-1]
        rows = int(np.prod(lead))
        j, f, d = self.num_joints, self.in_features, self.out_features
        per_joint = tn.transpose(x.reshape(rows, j, f), (1, 0, 2))  # (J, rows, F)
        y = tn.matmul(per_joint, self.weight)  # (J, rows, D)
        y = tn.transpose(y, (1, 0, 2)) + self.bias  # (rows, J, D)
        return y.reshape(*lead, j * d)


class LayerNorm(Module):
    def __init__(self, width: int, dtype=np.float32, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.add_param("gain", np.ones(width, dtype=dtype))
        self.add_param("bias", np.zeros(width, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return tn.layer_norm(x, self.gain, self.bias, self.eps)


class BatchNorm1d(Module):
    """Batch norm over every row of the flattened leading axes."""

    def __init__(self, width: int, dtype=np.float32, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.add_param("gain", np.ones(width, dtype=dtype))
        self.add_param("bias", np.zeros(width, dtype=dtype))
        self.state = BatchNormState(width, dtype=dtype, momentum=momentum, eps=eps)

    def named_buffers(self, prefix: str = ""):
        yield prefix + "running_mean", self.state.running_mean
        yield prefix + "running_var", self.state.running_var

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        lead = x.shape[:-1]
        flat = x.reshape(-1, x.shape[-1])
        return tn.batch_norm(flat, self.gain, self.bias, self.state, training).reshape(*lead, x.shape[-1])


class MultiHeadSelfAttention(Module):
    """Scaled dot-product self-attention over the second-to-last (time) axis."""

    def __init__(self, width: int, heads: int, rng: RngState, dropout: float = 0.0, dtype=np.float32):
        super().__init__()
        if heads < 1 or width % heads:
            raise ValueError(f"width {width} is not divisible by {heads} heads")
        self.width = width
        self.heads = heads
        self.dropout = dropout
        self.query = Linear(width, width, rng, dtype)
        self.key = Linear(width, width, rng, dtype)
        self.value = Linear(width, width, rng, dtype)
        self.out = Linear(width, width, rng, dtype)

    def attention_weights(self, x: Tensor) -> Tensor:
        q, k = self._split(self.query(x)), self._split(self.key(x))
        scores = tn.matmul(q, tn.transpose(k, (0, 1, 3, 2))) * (1.0 / math.sqrt(self.width // self.heads))
        return tn.softmax(scores, axis=-1)

    def _split(self, t: Tensor) -> Tensor:
        b, s, _ = t.shape
        return tn.transpose(t.reshape(b, s, self.heads, self.width // self.heads), (0, 2, 1, 3))

    def __call__(self, x: Tensor, training: bool = False, rng: RngState | None = None) -> Tensor:
        squeeze = x.ndim == 2
        if squeeze:
            x = x.reshape(1, *x.shape)
        if x.shape[-1] != self.width:
            raise ValueError(f"attention expects width {self.width}, got {x.shape[-1]}")
        b, s, _ = x.shape
        attn = tn.dropout(self.attention_weights(x), self.dropout, training, rng)
        ctx = tn.matmul(attn, self._split(self.value(x)))  # (B, h, S, dh)
        ctx = tn.transpose(ctx, (0, 2, 1, 3)).reshape(b, s, self.width)
        y = self.out(ctx)
        return y.reshape(s, self.width) if squeeze else y


def multi_head_self_attention(x: Tensor, attn: MultiHeadSelfAttention, training: bool = False,
                              rng: RngState | None = None) -> Tensor:
    return attn(x, training, rng)


class EncoderLayer(Module):
    """Transformer encoder layer attending over time.

    Post-norm (default): ``u = LN(x + Drop(MHSA(x)))``,
    ``out = LN(u + Drop(W2 Drop(GELU(W1 u))))``. Pre-norm moves each LN in
    front of its sublayer.
    """

    def __init__(self, width: int, heads: int, ffn_dim: int, dropout: float, rng: RngState,
                 dtype=np.float32, norm_first: bool = False):
        super().__init__()
        self.width = width
        self.dropout = dropout
        self.norm_first = norm_first
        self.attn = MultiHeadSelfAttention(width, heads, rng, dropout, dtype)
        self.norm1 = LayerNorm(width, dtype)
        self.ff1 = Linear(width, ffn_dim, rng, dtype)
        self.ff2 = Linear(ffn_dim, width, rng, dtype)
        self.norm2 = LayerNorm(width, dtype)

    def _ffn(self, x, training, rng):
        h = tn.dropout(tn.gelu(self.ff1(x)), self.dropout, training, rng)
        return tn.dropout(self.ff2(h), self.dropout, training, rng)

    def __call__(self, x: Tensor, training: bool = False, rng: RngState | None = None) -> Tensor:
        if x.shape[-1] != self.width:
            raise ValueError(f"encoder layer expects width {self.width}, got {x.shape[-1]}")
        if self.norm_first:
            x = x + tn.dropout(self.attn(self.norm1(x), training, rng), self.dropout, training, rng)
            return x + self._ffn(self.norm2(x), training, rng)
        u = self.norm1(x + tn.dropout(self.attn(x, training, rng), self.dropout, training, rng))
        return self.norm2(u + self._ffn(u, training, rng))
