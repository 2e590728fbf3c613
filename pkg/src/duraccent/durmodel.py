"""Unit duration predictor: embedding + two conv blocks + linear head.

Each conv block is ``conv1d(same padding) -> ReLU -> LayerNorm -> Dropout``.
The head emits one scalar per position, read as a natural-log duration.
Training minimizes the mean squared error against ``ln(target)`` over every
position in the batch, with gradients derived by hand below and Adam updates.

All arithmetic is float64. Batches are packed into a zero-padded
``(B, N)`` grid; padded positions are masked to zero after the embedding and
after each block so they never leak into neighbouring convolutions.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, fields
from typing import Sequence

import numpy as np

from duraccent.dataio import RunLengthSequence, UnitSequence
from duraccent.errors import TrainingDivergedError, ValidationError
from duraccent.unitseq import run_length_decode, run_length_encode

log = logging.getLogger(__name__)

PARAM_ORDER = (
    "embedding",
    "conv1_w",
    "conv1_b",
    "ln1_g",
    "ln1_b",
    "conv2_w",
    "conv2_b",
    "ln2_g",
    "ln2_b",
    "proj_w",
    "proj_b",
)

LN_EPS = 1e-5


@dataclass(frozen=True)
class DurationModelConfig:
    codebook_size: int
    embed_dim: int = 128
    filter_size: int = 256
    kernel_size: int = 3
    dropout_rate: float = 0.5
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 20
    batch_utterances: int = 16
    seed: int = 0
    max_duration: int = 100

    def __post_init__(self):
        for name in ("codebook_size", "embed_dim", "filter_size", "kernel_size", "epochs",
                     "batch_utterances", "max_duration"):
            if int(getattr(self, name)) < 1:
                raise ValidationError(f"{name} must be a positive integer")
        if self.kernel_size % 2 != 1:
            raise ValidationError("kernel_size must be odd")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValidationError("dropout_rate must lie in [0, 1)")
        if not self.learning_rate > 0:
            raise ValidationError("learning_rate must be positive")
        if not 0 <= self.seed < 2**64:
            raise ValidationError("seed must be a 64-bit unsigned integer")

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


def param_shapes(cfg: DurationModelConfig) -> dict[str, tuple[int, ...]]:
    k, e, f, w = cfg.codebook_size, cfg.embed_dim, cfg.filter_size, cfg.kernel_size
    return {
        "embedding": (k, e),
        "conv1_w": (w, e, f),
        "conv1_b": (f,),
        "ln1_g": (f,),
        "ln1_b": (f,),
        "conv2_w": (w, f, f),
        "conv2_b": (f,),
        "ln2_g": (f,),
        "ln2_b": (f,),
        "proj_w": (f,),
        "proj_b": (1,),
    }


@dataclass(eq=False)
class DurationModel:
    params: dict[str, np.ndarray]
    config: DurationModelConfig
    loss_trace: list[float] = field(default_factory=list, repr=False)

    def __post_init__(self):
        shapes = param_shapes(self.config)
        if set(self.params) != set(PARAM_ORDER):
            raise ValidationError(f"parameter set mismatch: {sorted(self.params)}")
        for name in PARAM_ORDER:
            p = np.asarray(self.params[name], dtype=np.float64)
            if p.shape != shapes[name]:
                raise ValidationError(f"{name} has shape {p.shape}, expected {shapes[name]}")
            if not np.all(np.isfinite(p)):
                raise ValidationError(f"{name} contains non-finite values")
            self.params[name] = p

    @classmethod
    def zeros(cls, cfg: DurationModelConfig) -> "DurationModel":
        return cls({n: np.zeros(s) for n, s in param_shapes(cfg).items()}, cfg)

    @classmethod
    def initialize(cls, cfg: DurationModelConfig, rng: np.random.Generator) -> "DurationModel":
        s = param_shapes(cfg)
        k, e, f = cfg.kernel_size, cfg.embed_dim, cfg.filter_size

        def uniform(shape, fan_in):
            bound = 1.0 / math.sqrt(fan_in)
            return rng.uniform(-bound, bound, size=shape)

        params = {
            "embedding": rng.normal(0.0, e**-0.5, size=s["embedding"]),
            "conv1_w": uniform(s["conv1_w"], k * e),
            "conv1_b": uniform(s["conv1_b"], k * e),
            "ln1_g": np.ones(f),
            "ln1_b": np.zeros(f),
            "conv2_w": uniform(s["conv2_w"], k * f),
            "conv2_b": uniform(s["conv2_b"], k * f),
            "ln2_g": np.ones(f),
            "ln2_b": np.zeros(f),
            "proj_w": uniform(s["proj_w"], f),
            "proj_b": np.zeros(1),
        }
        return cls(params, cfg)

    def copy(self) -> "DurationModel":
        return DurationModel({n: p.copy() for n, p in self.params.items()}, self.config,
                             list(self.loss_trace))

    def __eq__(self, other):
        if not isinstance(other, DurationModel):
            return NotImplemented
        return self.config == other.config and all(
            self.params[n].tobytes() == other.params[n].tobytes() for n in PARAM_ORDER
        )


@dataclass(frozen=True)
class TrainingExample:
    input_units: np.ndarray
    target_durations: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.input_units, dtype=np.int64)
        d = np.asarray(self.target_durations, dtype=np.int64)
        if u.ndim != 1 or u.shape != d.shape or u.size == 0:
            raise ValidationError("input_units and target_durations must be equal-length, non-empty")
        if d.min() < 1:
            raise ValidationError("target durations must be >= 1")
        object.__setattr__(self, "input_units", u)
        object.__setattr__(self, "target_durations", d)


def build_training_set(corpus: Sequence[UnitSequence]) -> list[TrainingExample]:
    if len(corpus) == 0:
        raise ValidationError("training corpus is empty")
    out = []
    for s in corpus:
        r = run_length_encode(s)
        out.append(TrainingExample(r.units, r.durations))
    return out


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------


def _conv_forward(x, w, b):
    # x (B, N, C), w (k, C, F)
    k, c, f = w.shape
    p = k // 2
    n = x.shape[1]
    xp = np.pad(x, ((0, 0), (p, p), (0, 0)))
    cols = np.concatenate([xp[:, j : j + n] for j in range(k)], axis=-1)
    return cols @ w.reshape(k * c, f) + b, cols


def _conv_backward(dout, cols, w):
    k, c, f = w.shape
    p = k // 2
    b, n, _ = dout.shape
    dw = (cols.reshape(-1, k * c).T @ dout.reshape(-1, f)).reshape(k, c, f)
    db = dout.sum(axis=(0, 1))
    dcols = dout @ w.reshape(k * c, f).T
    dxp = np.zeros((b, n + 2 * p, c))
    for j in range(k):
        dxp[:, j : j + n] += dcols[..., j * c : (j + 1) * c]
    return dxp[:, p : p + n], dw, db


def _ln_forward(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = (x - mu) * inv
    return g * xhat + b, (xhat, inv)


def _ln_backward(dy, cache, g):
    xhat, inv = cache
    f = xhat.shape[-1]
    dg = (dy * xhat).sum(axis=(0, 1))
    db = dy.sum(axis=(0, 1))
    dxhat = dy * g
    dx = (inv / f) * (
        f * dxhat
        - dxhat.sum(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
    )
    return dx, dg, db


def _check_ids(model: DurationModel, ids: np.ndarray):
    k = model.config.codebook_size
    if ids.size and (ids.min() < 0 or ids.max() >= k):
        raise ValidationError(f"unit id out of range [0, {k})")


def _pack(seqs: Sequence[np.ndarray]):
    n = max(s.size for s in seqs)
    ids = np.zeros((len(seqs), n), dtype=np.int64)
    mask = np.zeros((len(seqs), n), dtype=bool)
    for i, s in enumerate(seqs):
        ids[i, : s.size] = s
        mask[i, : s.size] = True
    return ids, mask


def _dropout_mask(shape, rate, rng):
    if rate <= 0.0:
        return None
    return (rng.random(shape) >= rate) / (1.0 - rate)


def _forward(model: DurationModel, ids, mask, training: bool, rng):
    p = model.params
    rate = model.config.dropout_rate if training else 0.0
    m = mask[..., None].astype(np.float64)

    x0 = p["embedding"][ids] * m
    h1, cols1 = _conv_forward(x0, p["conv1_w"], p["conv1_b"])
    r1 = np.maximum(h1, 0.0)
    n1, ln1 = _ln_forward(r1, p["ln1_g"], p["ln1_b"])
    drop1 = _dropout_mask(n1.shape, rate, rng)
    z1 = (n1 if drop1 is None else n1 * drop1) * m

    h2, cols2 = _conv_forward(z1, p["conv2_w"], p["conv2_b"])
    r2 = np.maximum(h2, 0.0)
    n2, ln2 = _ln_forward(r2, p["ln2_g"], p["ln2_b"])
    drop2 = _dropout_mask(n2.shape, rate, rng)
    z2 = (n2 if drop2 is None else n2 * drop2) * m

    out = z2 @ p["proj_w"] + p["proj_b"][0]
    cache = (ids, m, cols1, h1, ln1, drop1, cols2, h2, ln2, drop2, z2)
    return out, cache


def _backward(model: DurationModel, dout, cache):
    p = model.params
    ids, m, cols1, h1, ln1, drop1, cols2, h2, ln2, drop2, z2 = cache
    g = {}
    g["proj_w"] = np.einsum("bn,bnf->f", dout, z2)
    g["proj_b"] = np.array([dout.sum()])
    dz2 = dout[..., None] * p["proj_w"] * m
    dn2 = dz2 if drop2 is None else dz2 * drop2
    dr2, g["ln2_g"], g["ln2_b"] = _ln_backward(dn2, ln2, p["ln2_g"])
    dh2 = dr2 * (h2 > 0)
    dz1, g["conv2_w"], g["conv2_b"] = _conv_backward(dh2, cols2, p["conv2_w"])
    dz1 = dz1 * m
    dn1 = dz1 if drop1 is None else dz1 * drop1
    dr1, g["ln1_g"], g["ln1_b"] = _ln_backward(dn1, ln1, p["ln1_g"])
    dh1 = dr1 * (h1 > 0)
    dx0, g["conv1_w"], g["conv1_b"] = _conv_backward(dh1, cols1, p["conv1_w"])
    dx0 = dx0 * m
    demb = np.zeros_like(p["embedding"])
    valid = m[..., 0] > 0
    np.add.at(demb, ids[valid], dx0[valid])
    g["embedding"] = demb
    return g


# ---------------------------------------------------------------------------
# Public operations
# ---------------------------------------------------------------------------


def _as_ids(input_units) -> np.ndarray:
    if isinstance(input_units, UnitSequence):
        return input_units.units
    ids = np.asarray(input_units)
    if ids.ndim != 1 or (ids.size and ids.dtype.kind not in "iu"):
        raise ValidationError("input units must be a 1-D integer sequence")
    return ids.astype(np.int64)


def forward(model: DurationModel, input_units, training: bool = False,
            rng: np.random.Generator | None = None) -> np.ndarray:
    """Predicted log-durations, one per input position."""
    ids = _as_ids(input_units)
    _check_ids(model, ids)
    if ids.size == 0:
        return np.zeros(0)
    if training and model.config.dropout_rate > 0 and rng is None:
        raise ValidationError("training-mode forward with dropout needs an rng")
    out, _ = _forward(model, ids[None, :], np.ones((1, ids.size), bool), training, rng)
    return out[0]


def loss_and_gradients(model: DurationModel, batch: Sequence[TrainingExample],
                       rng: np.random.Generator | None = None):
    """Mean squared log-duration error over every position, and its gradient."""
    if len(batch) == 0:
        raise ValidationError("empty batch")
    for ex in batch:
        _check_ids(model, ex.input_units)
    if model.config.dropout_rate > 0 and rng is None:
        raise ValidationError("dropout needs an rng")
    ids, mask = _pack([ex.input_units for ex in batch])
    target = np.zeros(ids.shape)
    for i, ex in enumerate(batch):
        target[i, : ex.target_durations.size] = np.log(ex.target_durations)
    out, cache = _forward(model, ids, mask, True, rng)
    n = mask.sum()
    resid = (out - target) * mask
    loss = float(np.sum(resid**2) / n)
    grads = _backward(model, 2.0 * resid / n, cache)
    return loss, grads


class Adam:
    def __init__(self, cfg: DurationModelConfig, params: dict[str, np.ndarray]):
        self.lr = cfg.learning_rate
        self.b1 = cfg.adam_beta1
        self.b2 = cfg.adam_beta2
        self.eps = cfg.adam_eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for name in PARAM_ORDER:
            g = grads[name]
            self.m[name] = self.b1 * self.m[name] + (1 - self.b1) * g
            self.v[name] = self.b2 * self.v[name] + (1 - self.b2) * g * g
            params[name] -= self.lr * (self.m[name] / c1) / (np.sqrt(self.v[name] / c2) + self.eps)


def train(examples: Sequence[TrainingExample], cfg: DurationModelConfig,
          init: DurationModel | None = None) -> DurationModel:
    """Adam over shuffled utterance batches; per-epoch mean loss in ``loss_trace``."""
    if len(examples) == 0:
        raise ValidationError("training set is empty")
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    if init is None:
        model = DurationModel.initialize(cfg, rng)
        targets = np.concatenate([np.log(ex.target_durations) for ex in examples])
        model.params["proj_b"][0] = targets.mean()
    else:
        model = init.copy()
    opt = Adam(cfg, model.params)
    trace = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(examples))
        total, count = 0.0, 0
        for lo in range(0, len(order), cfg.batch_utterances):
            batch = [examples[i] for i in order[lo : lo + cfg.batch_utterances]]
            with np.errstate(over="ignore", invalid="ignore"):
                loss, grads = loss_and_gradients(model, batch, rng)
            if not math.isfinite(loss):
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch}")
            opt.step(model.params, grads)
            n = sum(ex.input_units.size for ex in batch)
            total += loss * n
            count += n
        trace.append(total / count)
        log.info("epoch %d loss %.6f", epoch + 1, trace[-1])
    for name, p in model.params.items():
        if not np.all(np.isfinite(p)):
            raise TrainingDivergedError(f"parameter {name} became non-finite")
    model.loss_trace = trace
    return model


def durations_from_log(y: np.ndarray, max_duration: int) -> np.ndarray:
    """Round half away from zero, then clamp to [1, max_duration]."""
    with np.errstate(over="ignore"):
        d = np.floor(np.exp(np.asarray(y, dtype=np.float64)) + 0.5)
    return np.clip(d, 1, max_duration).astype(np.int64)


def predict_durations(model: DurationModel, input_units) -> np.ndarray:
    return durations_from_log(forward(model, input_units), model.config.max_duration)


def expand(model: DurationModel, dedup: UnitSequence) -> UnitSequence:
    """Frame-wise sequence from de-duplicated units and their predicted durations."""
    d = predict_durations(model, dedup)
    return run_length_decode(RunLengthSequence(dedup.units, d, dedup.codebook_size))
