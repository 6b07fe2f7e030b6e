"""Loss, Adam with coupled L2 decay, the training loop and checkpoints."""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import tensor as tn
from .model import ModelConfig, P3DModel, batch_inputs, build_model, model_forward
from .pose.sequence import PoseSequence, sample_train_chunk
from .tensor import RngState, Tensor

log = logging.getLogger(__name__)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean over the batch of ``-log softmax(logits)[label]`` via log-sum-exp."""
    return tn.nll_loss(tn.log_softmax(logits, axis=-1), labels)


@dataclass
class TrainConfig:
    lr: float = 5e-4
    weight_decay: float = 5e-3
    batch_size: int = 512
    epochs: int = 500
    seed: int = 0
    eval_every: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    decay_norm_and_bias: bool = True

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (batch norm)")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown train config key(s): {', '.join(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class OptimState:
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    no_decay: frozenset = frozenset()

    @classmethod
    def for_train_config(cls, cfg: TrainConfig, model: P3DModel | None = None) -> "OptimState":
        no_decay = frozenset()
        if model is not None and not cfg.decay_norm_and_bias:
            no_decay = frozenset(n for n, p in model.named_parameters() if p.ndim == 1)
        return cls(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay, no_decay=no_decay)


def adam_step(params: Sequence[tuple[str, Tensor]], state: OptimState) -> None:
    """One Adam update in place, using ``p.grad`` of each named parameter.

    Weight decay is coupled: ``g += weight_decay * theta`` before the moments.
    A non-finite gradient aborts the step before anything is modified.
    """
    params = list(params)
    for name, p in params:
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            raise FloatingPointError(f"non-finite gradient for {name}")
    state.t += 1
    t = state.t
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params:
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if state.weight_decay and name not in state.no_decay:
            g = g + state.weight_decay * p.data
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / c1
        v_hat = v / c2
        p.data -= (state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.dtype, copy=False)


def zero_grad(model: P3DModel) -> None:
    for p in model.parameters():
        p.grad = None


def loss_for(output, labels) -> Tensor:
    return tn.nll_loss(output.log_probs, labels)


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    train_top1: float


@dataclass
class TrainResult:
    model: P3DModel
    optim: OptimState
    rng: RngState
    history: list[EpochRecord]
    epoch: int


def _batches(order: np.ndarray, batch_size: int) -> list[np.ndarray]:
    batches = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    if batches and len(batches[-1]) == 1:
        log.info("dropping final batch of size 1 (batch norm needs >= 2 samples)")
        batches.pop()
    return batches


def train(
    model: P3DModel,
    train_set: Sequence[PoseSequence],
    config: TrainConfig,
    *,
    optim: OptimState | None = None,
    rng: RngState | None = None,
    start_epoch: int = 0,
    history: list[EpochRecord] | None = None,
    callback: Callable[[EpochRecord], bool | None] | None = None,
) -> TrainResult:
    """Train ``model`` in place for ``config.epochs`` epochs.

    Per epoch: seeded shuffle, one random T-frame chunk per video, forward in
    training mode, cross-entropy, backward, Adam. Passing the ``optim``,
    ``rng``, ``start_epoch`` and ``history`` of an earlier run (e.g. from a
    checkpoint) continues that run exactly. ``callback`` sees each epoch's
    record and may return True to stop.
    """
    if not train_set:
        raise ValueError("empty train split")
    cfg = model.config
    labels = np.asarray([s.label for s in train_set], dtype=np.int64)
    if labels.min() < 0 or labels.max() >= cfg.num_classes:
        raise ValueError(f"train labels must lie in [0, {cfg.num_classes})")
    if len(train_set) < 2:
        raise ValueError("need at least 2 training videos (batch norm)")
    rng = rng or RngState(config.seed)
    optim = optim or OptimState.for_train_config(config, model)
    history = list(history or [])
    params = list(model.named_parameters())

    epoch = start_epoch
    while epoch < config.epochs:
        order = rng.generator.permutation(len(train_set))
        total_loss, correct, seen = 0.0, 0, 0
        for idx in _batches(order, config.batch_size):
            chunks = [sample_train_chunk(train_set[i], cfg.T, rng) for i in idx]
            inputs = batch_inputs(cfg, chunks)
            out = model_forward(model, inputs, training=True, rng=rng)
            loss = loss_for(out, labels[idx])
            zero_grad(model)
            loss.backward()
            adam_step(params, optim)
            total_loss += float(loss.data) * len(idx)
            correct += int((np.argmax(out.probs, axis=1) == labels[idx]).sum())
            seen += len(idx)
        epoch += 1
        record = EpochRecord(epoch, total_loss / max(seen, 1), 100.0 * correct / max(seen, 1))
        history.append(record)
        if config.eval_every and epoch % config.eval_every == 0:
            log.info("epoch %d loss %.5f train_top1 %.2f", record.epoch, record.loss, record.train_top1)
        if callback is not None and callback(record):
            break
    return TrainResult(model, optim, rng, history, epoch)


def format_history(history: Sequence[EpochRecord]) -> str:
    lines = ["epoch\tloss\ttrain_top1"]
    lines += [f"{r.epoch}\t{r.loss!r}\t{r.train_top1!r}" for r in history]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

CKPT_MAGIC = b"P3DC"
CKPT_VERSION = 1
_DTYPE_CODES = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


def _pack_record(name: str, arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    dt = arr.dtype.newbyteorder("<")
    if dt not in _DTYPE_CODES:
        raise ValueError(f"cannot store dtype {arr.dtype} for {name}")
    raw_name = name.encode()
    head = struct.pack("<H", len(raw_name)) + raw_name + struct.pack("<BB", _DTYPE_CODES[dt], arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + np.ascontiguousarray(arr, dtype=dt).tobytes()


def _read_records(raw: bytes, offset: int, count: int) -> dict[str, np.ndarray]:
    out = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<H", raw, offset)
            offset += 2
            name = raw[offset:offset + n].decode()
            offset += n
            code, ndim = struct.unpack_from("<BB", raw, offset)
            offset += 2
            shape = struct.unpack_from(f"<{ndim}I", raw, offset)
            offset += 4 * ndim
            dt = _CODE_DTYPES[code]
            nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
            if offset + nbytes > len(raw):
                raise ValueError("truncated checkpoint payload")
            out[name] = np.frombuffer(raw, dtype=dt, count=nbytes // dt.itemsize, offset=offset).reshape(shape).copy()
            offset += nbytes
    except (struct.error, KeyError) as exc:
        raise ValueError(f"corrupt checkpoint record: {exc}") from None
    if offset != len(raw):
        raise ValueError("trailing bytes in checkpoint")
    return out


def save_checkpoint(path, model: P3DModel, optim: OptimState | None = None, rng: RngState | None = None,
                    epoch: int = 0, history: Sequence[EpochRecord] = (), train_config: TrainConfig | None = None) -> None:
    """Write parameters, batch-norm running stats and optional optimiser/rng state."""
    meta = {
        "model_config": model.config.to_dict(),
        "train_config": train_config.to_dict() if train_config else None,
        "epoch": epoch,
        "history": [asdict(r) for r in history],
        "rng_state": rng.get_state() if rng else None,
        "rng_seed": rng.seed if rng else None,
        "optim": None,
    }
    records = [_pack_record("param:" + n, p.data) for n, p in model.named_parameters()]
    records += [_pack_record("buffer:" + n, b) for n, b in model.named_buffers()]
    if optim is not None:
        meta["optim"] = {"lr": optim.lr, "beta1": optim.beta1, "beta2": optim.beta2, "eps": optim.eps,
                         "weight_decay": optim.weight_decay, "t": optim.t, "no_decay": sorted(optim.no_decay)}
        for n, _ in model.named_parameters():
            if n in optim.m:
                records.append(_pack_record("adam.m:" + n, optim.m[n]))
                records.append(_pack_record("adam.v:" + n, optim.v[n]))
    meta_raw = json.dumps(meta, sort_keys=True).encode()
    blob = CKPT_MAGIC + struct.pack("<III", CKPT_VERSION, len(meta_raw), len(records)) + meta_raw + b"".join(records)
    Path(path).write_bytes(blob)


@dataclass
class Checkpoint:
    model: P3DModel
    optim: OptimState | None
    rng: RngState | None
    epoch: int
    history: list[EpochRecord]
    train_config: TrainConfig | None


def load_checkpoint(path, model: P3DModel | None = None) -> Checkpoint:
    """Restore a checkpoint. When ``model`` is given its shapes must match."""
    raw = Path(path).read_bytes()
    if raw[:4] != CKPT_MAGIC:
        raise ValueError(f"bad magic in checkpoint {path}")
    if len(raw) < 16:
        raise ValueError(f"truncated checkpoint {path}")
    version, meta_len, count = struct.unpack_from("<III", raw, 4)
    if version != CKPT_VERSION:
        raise ValueError(f"checkpoint version mismatch: file {version}, reader {CKPT_VERSION}")
    meta = json.loads(raw[16:16 + meta_len].decode())
    records = _read_records(raw, 16 + meta_len, count)

    cfg = ModelConfig.from_dict(meta["model_config"])
    if model is None:
        model = build_model(cfg, RngState(0))
    for name, p in model.named_parameters():
        arr = records.get("param:" + name)
        if arr is None:
            raise ValueError(f"checkpoint lacks parameter {name}")
        if arr.shape != p.shape:
            raise ValueError(f"shape mismatch for {name}: checkpoint {arr.shape}, model {p.shape}")
        p.data = arr.astype(p.dtype, copy=False)
    for name, buf in model.named_buffers():
        arr = records.get("buffer:" + name)
        if arr is None or arr.shape != buf.shape:
            raise ValueError(f"checkpoint buffer {name} is missing or has the wrong shape")
        buf[...] = arr
    expected = {"param:" + n for n, _ in model.named_parameters()} | {"buffer:" + n for n, _ in model.named_buffers()}
    extra = [k for k in records if not k.startswith("adam.") and k not in expected]
    if extra:
        raise ValueError(f"checkpoint has parameters the model lacks: {extra[:3]}")

    optim = None
    if meta.get("optim") is not None:
        o = meta["optim"]
        optim = OptimState(o["lr"], o["beta1"], o["beta2"], o["eps"], o["weight_decay"], o["t"],
                           no_decay=frozenset(o["no_decay"]))
        for k, arr in records.items():
            if k.startswith("adam.m:"):
                optim.m[k[7:]] = arr
            elif k.startswith("adam.v:"):
                optim.v[k[7:]] = arr
    rng = None
    if meta.get("rng_state") is not None:
        rng = RngState(meta["rng_seed"])
        rng.set_state(meta["rng_state"])
    tc = TrainConfig.from_dict(meta["train_config"]) if meta.get("train_config") else None
    history = [EpochRecord(**r) for r in meta["history"]]
    return Checkpoint(model, optim, rng, meta["epoch"], history, tc)


def resume(path, train_set: Sequence[PoseSequence], config: TrainConfig | None = None, **kwargs) -> TrainResult:
    """Continue a checkpointed run up to ``config.epochs`` (default: the saved config)."""
    ck = load_checkpoint(path)
    config = config or ck.train_config
    if config is None:
        raise ValueError("checkpoint has no train config; pass one explicitly")
    return train(ck.model, train_set, config, optim=ck.optim, rng=ck.rng, start_epoch=ck.epoch,
                 history=ck.history, **kwargs)
