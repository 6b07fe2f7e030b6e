"""Small reverse-mode autodiff kernel on top of numpy.

Only the operations the P3D network needs are provided. Every op returns a
new :class:`Tensor`; inputs are never mutated. Gradients flow through a
graph of closures that is walked in reverse topological order by
:meth:`Tensor.backward`.
"""

from __future__ import annotations

import contextlib
import math
import os
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import ndtr

_GRAD_ENABLED = True
_DEBUG = os.environ.get("P3D_DEBUG", "") not in ("", "0")

PRECISIONS = {"single": np.float32, "double": np.float64}


def set_debug(flag: bool) -> None:
    """Toggle the non-finite check on every op output."""
    global _DEBUG
    _DEBUG = bool(flag)


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def resolve_dtype(precision) -> np.dtype:
    if isinstance(precision, str):
        try:
            return np.dtype(PRECISIONS[precision])
        except KeyError:
            raise ValueError(f"unknown precision {precision!r}; expected 'single' or 'double'") from None
    return np.dtype(precision)


class Tensor:
    """Dense array with an optional gradient and a link to the op that made it."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    # -- introspection -----------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad}{tag})"

    def zero_grad(self) -> None:
        self.grad = None

    # -- autodiff ----------------------------------------------------------
    def backward(self, grad=None) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every reachable tensor."""
        if not self.requires_grad:
            raise RuntimeError("backward() called on a tensor that does not require grad")
        if grad is None:
            if self.data.size != 1:
                raise RuntimeError("grad must be given for non-scalar outputs")
            grad = np.ones_like(self.data)
        order = _topological_order(self)
        self.grad = np.asarray(grad, dtype=self.dtype).reshape(self.shape)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                # interior buffers are no longer needed once pushed to parents
                if node._parents:
                    node.grad = None if node is not self else node.grad

    def _accumulate(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if g.dtype != self.dtype:
            g = g.astype(self.dtype)
        # never mutate in place: g may alias another node's buffer
        self.grad = g if self.grad is None else self.grad + g

    # -- operator sugar ----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other, self.dtype)))

    def __rsub__(self, other):
        return add(_as_tensor(other, self.dtype), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        if isinstance(scalar, Tensor):
            raise TypeError("division is only defined by a python scalar")
        return mul(self, 1.0 / scalar)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def _as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _result(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    if _DEBUG and not np.all(np.isfinite(data)):
        raise FloatingPointError("non-finite value produced by tensor op")
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, a.dtype)

    def backward(g):
        a._accumulate(_unbroadcast(g, a.shape))
        b._accumulate(_unbroadcast(g, b.shape))

    return _result(a.data + b.data, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, (a,), lambda g: a._accumulate(-g))


def mul(a, b) -> Tensor:
    """Elementwise product; ``b`` may be a python scalar."""
    a = _as_tensor(a)
    if not isinstance(b, Tensor):
        s = b

        def backward_scalar(g):
            a._accumulate(g * s)

        return _result(a.data * s, (a,), backward_scalar)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _result(a.data * b.data, (a, b), backward)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: a._accumulate(g * out))


# ---------------------------------------------------------------------------
# linear algebra and shape plumbing
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product ``a @ b`` with numpy broadcasting on leading axes."""
    a = _as_tensor(a)
    b = _as_tensor(b, a.dtype)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul needs at least 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    flat = b.ndim == 2 and a.ndim > 2
    if flat:
        # one large GEMM instead of numpy's per-batch loop
        out = (a.data.reshape(-1, a.shape[-1]) @ b.data).reshape(*a.shape[:-1], b.shape[-1])
    else:
        out = np.matmul(a.data, b.data)

    def backward(g):
        if a.requires_grad:
            if flat:
                ga = (g.reshape(-1, g.shape[-1]) @ b.data.T).reshape(a.shape)
            else:
                ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
            a._accumulate(ga)
        if b.requires_grad:
            if b.ndim == 2:
                k = a.shape[-1]
                gb = a.data.reshape(-1, k).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
            b._accumulate(gb)

    return _result(out, (a, b), backward)


def reshape(a: Tensor, shape) -> Tensor:
    src = a.shape
    return _result(a.data.reshape(shape), (a,), lambda g: a._accumulate(g.reshape(src)))


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _result(np.transpose(a.data, axes), (a,), lambda g: a._accumulate(np.transpose(g, inverse)))


def getitem(a: Tensor, index) -> Tensor:
    """Basic (slice/int) indexing; advanced indexing is not supported."""
    parts = index if isinstance(index, tuple) else (index,)
    if any(not isinstance(i, (slice, int, type(Ellipsis), type(None))) for i in parts):
        raise IndexError("only basic slicing is supported on tensors")
    out = a.data[index]

    def backward(g):
        full = np.zeros(a.shape, dtype=a.dtype)
        full[index] = g
        a._accumulate(full)

    return _result(out, (a,), backward)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = list(tensors)
    if len(tensors) == 1:
        return tensors[0]
    ax = axis % tensors[0].ndim
    bounds = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, bounds, axis=ax)):
            t._accumulate(piece)

    return _result(np.concatenate([t.data for t in tensors], axis=ax), tensors, backward)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    out = np.stack([t.data for t in tensors], axis=axis)
    ax = axis % out.ndim

    def backward(g):
        for i, t in enumerate(tensors):
            t._accumulate(np.take(g, i, axis=ax))

    return _result(out, tensors, backward)


def tensor_sum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.shape))

    return _result(np.asarray(out), (a,), backward)


def mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return mul(tensor_sum(a, axis, keepdims), 1.0 / count)


def average(tensors: Sequence[Tensor]) -> Tensor:
    """Arithmetic mean of equally shaped tensors, summed left to right."""
    tensors = list(tensors)
    total = tensors[0]
    for t in tensors[1:]:
        total = add(total, t)
    return mul(total, 1.0 / len(tensors))


# ---------------------------------------------------------------------------
# activations and normalisers
# ---------------------------------------------------------------------------

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, ``x * Phi(x)``."""
    cdf = ndtr(x.data).astype(x.dtype, copy=False)

    def backward(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x.data * x.data)
        x._accumulate(g * (cdf + x.data * pdf))

    return _result(x.data * cdf, (x,), backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        x._accumulate(out * (g - (g * out).sum(axis=axis, keepdims=True)))

    return _result(out, (x,), backward)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse

    def backward(g):
        x._accumulate(g - np.exp(out) * g.sum(axis=axis, keepdims=True))

    return _result(out, (x,), backward)


def logsumexp(x: Tensor, axis: int) -> Tensor:
    m = x.data.max(axis=axis, keepdims=True)
    s = np.exp(x.data - m).sum(axis=axis, keepdims=True)
    out = np.squeeze(m + np.log(s), axis=axis)

    def backward(g):
        w = np.exp(x.data - np.expand_dims(out, axis))
        x._accumulate(np.expand_dims(g, axis) * w)

    return _result(out, (x,), backward)


def _normalize_backward(g_hat: np.ndarray, x_hat: np.ndarray, inv_std: np.ndarray, axis) -> np.ndarray:
    # d/dx of (x - mean) * inv_std, given dL/dx_hat
    return inv_std * (
        g_hat
        - g_hat.mean(axis=axis, keepdims=True)
        - x_hat * (g_hat * x_hat).mean(axis=axis, keepdims=True)
    )


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    d = x.shape[-1]
    if d == 0:
        raise ValueError("layer_norm over an empty feature axis")
    if gain.shape != (d,) or bias.shape != (d,):
        raise ValueError(f"layer_norm affine shape {gain.shape}/{bias.shape} does not match width {d}")
    mu = x.data.mean(axis=-1, keepdims=True)
    centred = x.data - mu
    var = (centred * centred).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = centred * inv_std
    out = x_hat * gain.data + bias.data

    def backward(g):
        if gain.requires_grad:
            gain._accumulate((g * x_hat).reshape(-1, d).sum(axis=0))
        if bias.requires_grad:
            bias._accumulate(g.reshape(-1, d).sum(axis=0))
        if x.requires_grad:
            x._accumulate(_normalize_backward(g * gain.data, x_hat, inv_std, -1))

    return _result(out, (x, gain, bias), backward)


class BatchNormState:
    """Running statistics of a batch-norm layer (not trainable)."""

    def __init__(self, width: int, dtype=np.float32, momentum: float = 0.1, eps: float = 1e-5):
        self.running_mean = np.zeros(width, dtype=dtype)
        self.running_var = np.ones(width, dtype=dtype)
        self.momentum = momentum
        self.eps = eps


def batch_norm(x: Tensor, gain: Tensor, bias: Tensor, state: BatchNormState, training: bool) -> Tensor:
    """Normalise ``x`` of shape (M, d) over its first axis.

    In training mode the batch statistics are used and the running
    statistics are updated in place (unbiased variance, torch convention).
    """
    if x.ndim != 2:
        raise ValueError(f"batch_norm expects (M, d) input, got {x.shape}")
    m, d = x.shape
    if training:
        if m < 2:
            raise ValueError("batch_norm in training mode needs at least 2 rows")
        mu = x.data.mean(axis=0, keepdims=True)
        centred = x.data - mu
        var = (centred * centred).mean(axis=0, keepdims=True)
        mom = state.momentum
        state.running_mean[...] = (1 - mom) * state.running_mean + mom * mu[0]
        state.running_var[...] = (1 - mom) * state.running_var + mom * var[0] * (m / (m - 1))
    else:
        mu = state.running_mean[None, :]
        centred = x.data - mu
        var = state.running_var[None, :]
    inv_std = (1.0 / np.sqrt(var + state.eps)).astype(x.dtype, copy=False)
    x_hat = centred * inv_std
    out = x_hat * gain.data + bias.data

    def backward(g):
        if gain.requires_grad:
            gain._accumulate((g * x_hat).sum(axis=0))
        if bias.requires_grad:
            bias._accumulate(g.sum(axis=0))
        if x.requires_grad:
            g_hat = g * gain.data
            if training:
                x._accumulate(_normalize_backward(g_hat, x_hat, inv_std, 0))
            else:
                x._accumulate(g_hat * inv_std)

    return _result(out, (x, gain, bias), backward)


def dropout(x: Tensor, p: float, training: bool, rng: "RngState | None") -> Tensor:
    """Inverted dropout; identity (the same object) in eval mode or when p == 0."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an RngState")
    keep = rng.generator.random(x.shape, dtype=np.float32) >= np.float32(p)
    scale = np.asarray(1.0 / (1.0 - p), dtype=x.dtype)
    mask = keep.astype(x.dtype) * scale
    return _result(x.data * mask, (x,), lambda g: x._accumulate(g * mask))


def nll_loss(log_probs: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under (B, C) log-probs."""
    labels = np.asarray(labels, dtype=np.int64)
    b, c = log_probs.shape
    if labels.shape != (b,):
        raise ValueError(f"expected {b} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ValueError(f"label out of range [0, {c})")
    rows = np.arange(b)
    out = -log_probs.data[rows, labels].mean()

    def backward(g):
        full = np.zeros(log_probs.shape, dtype=log_probs.dtype)
        full[rows, labels] = -g / b
        log_probs._accumulate(full)

    return _result(np.asarray(out, dtype=log_probs.dtype), (log_probs,), backward)


# ---------------------------------------------------------------------------
# randomness
# ---------------------------------------------------------------------------

class RngState:
    """Seeded Philox (counter-based) generator.

    The same seed yields the same draws on every platform numpy supports.
    :meth:`split` derives independent child streams without advancing the
    parent.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.generator = np.random.Generator(np.random.Philox(self.seed))

    def split(self, n: int) -> list["RngState"]:
        children = []
        for i in range(n):
            child = RngState.__new__(RngState)
            child.seed = self.seed
            child.generator = np.random.Generator(self.generator.bit_generator.jumped(i + 1))
            children.append(child)
        return children

    def get_state(self) -> dict:
        return _jsonable(self.generator.bit_generator.state)

    def set_state(self, state: dict) -> None:
        st = dict(state)
        st["state"] = {k: np.asarray(v, dtype=np.uint64) for k, v in st["state"].items()}
        st["buffer"] = np.asarray(st["buffer"], dtype=np.uint64)
        self.generator.bit_generator.state = st


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, np.ndarray):
        return [int(v) for v in obj.tolist()]
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


# ---------------------------------------------------------------------------
# finite-difference gradient check
# ---------------------------------------------------------------------------

class NonDeterministicError(RuntimeError):
    pass


def grad_check(
    f: Callable[[], Tensor],
    params: Iterable[tuple[str, Tensor]],
    h: float = 1e-5,
    tol: float = 1e-4,
    num_samples: int | None = None,
    seed: int = 0,
    floor: float = 1e-6,
) -> dict:
    """Compare reverse-mode gradients of the scalar ``f()`` with central differences.

    ``f`` must rebuild its computation from scratch on each call (including
    re-seeding any dropout rng). When ``num_samples`` is given, that many
    scalar coordinates are drawn uniformly across all parameters; otherwise
    every coordinate is checked. The step is ``h * max(1, |theta|)``.

    Relative error is ``|a - n| / max(|a|, |n|, floor)``; ``floor`` keeps
    exactly-zero gradients (e.g. attention key biases) from dividing by 0.
    """
    params = list(params)
    for _, p in params:
        p.grad = None
    out = f()
    base = float(out.data)
    if float(f().data) != base:
        raise NonDeterministicError("two forward passes disagree; fix dropout seeding")
    out.backward()
    analytic = {name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for name, p in params}

    coords: list[tuple[int, int]] = []
    if num_samples is None:
        for pi, (_, p) in enumerate(params):
            coords.extend((pi, j) for j in range(p.size))
    else:
        sizes = np.array([p.size for _, p in params], dtype=np.float64)
        gen = np.random.default_rng(seed)
        owners = gen.choice(len(params), size=num_samples, p=sizes / sizes.sum())
        coords = [(int(pi), int(gen.integers(params[pi][1].size))) for pi in owners]

    per_param: dict[str, float] = {}
    worst = 0.0
    for pi, j in coords:
        name, p = params[pi]
        flat = p.data.reshape(-1)
        orig = flat[j]
        step = h * max(1.0, abs(float(orig)))
        flat[j] = orig + step
        plus = float(f().data)
        flat[j] = orig - step
        minus = float(f().data)
        flat[j] = orig
        numeric = (plus - minus) / (2 * step)
        a = float(analytic[name].reshape(-1)[j])
        err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
        per_param[name] = max(per_param.get(name, 0.0), err)
        worst = max(worst, err)
    return {
        "max_rel_error": worst,
        "per_param": per_param,
        "num_checked": len(coords),
        "passed": worst < tol,
        "loss": base,
    }
