"""KvsAll training with binary cross entropy, label smoothing and Adam."""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import expit

from .kgdata import Dataset, KvsAllIndex, add_reciprocals, build_kvsall
from .model import ModelKind, ModelParams, ScoreCache, backward_scores, init_params, score_batch, substream

log = logging.getLogger(__name__)

PROB_CLAMP = 1e-12
TRAIN_ABLATIONS = ("no-input-dropout", "no-feature-dropout", "no-label-smoothing", "rmsprop")


@dataclass
class TrainConfig:
    kind: ModelKind = ModelKind.CONEX
    d: int = 200
    c: int = 32
    lr: float = 0.001
    batch_size: int = 1024
    input_dropout: float = 0.4
    feature_dropout: float = 0.5
    label_smoothing: float = 0.1
    epochs: int = 500
    seed: int = 1
    optimizer: str = "adam"

    def __post_init__(self):
        self.kind = ModelKind.parse(self.kind)
        for name in ("input_dropout", "feature_dropout", "label_smoothing"):
            value = getattr(self, name)
            if not 0.0 <= value < 1.0:
                raise ValueError(f"{name} must lie in [0, 1), got {value}")
        if self.lr < 0:
            raise ValueError("learning rate must be non-negative")
        if self.batch_size < 1 or self.epochs < 0 or self.d < 1:
            raise ValueError("batch size and dimension must be positive, epochs non-negative")
        if self.kind is ModelKind.CONEX and self.c < 1:
            raise ValueError("ConEx needs at least one convolution channel")
        if self.optimizer not in ("adam", "rmsprop"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    def ablated(self, which: str) -> "TrainConfig":
        """Copy with one training-time component switched off."""
        changes = {
            "no-input-dropout": {"input_dropout": 0.0},
            "no-feature-dropout": {"feature_dropout": 0.0},
            "no-label-smoothing": {"label_smoothing": 0.0},
            "rmsprop": {"optimizer": "rmsprop"},
        }
        if which not in changes:
            raise ValueError(f"unknown training ablation {which!r}; choose from {TRAIN_ABLATIONS}")
        return dataclasses.replace(self, **changes[which])


# --------------------------------------------------------------------------
# loss


def label_smooth(y: np.ndarray, ls: float, num_entities: int | None = None) -> np.ndarray:
    if not 0.0 <= ls < 1.0:
        raise ValueError(f"label smoothing must lie in [0, 1), got {ls}")
    y = np.asarray(y, dtype=np.float64)
    n = y.shape[-1] if num_entities is None else num_entities
    return y * (1.0 - ls) + ls / n


def bce_loss(probs: np.ndarray, labels: np.ndarray) -> float:
    """Binary cross entropy averaged over entities, then over the batch."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if probs.shape != labels.shape:
        raise ValueError(f"shape mismatch: {probs.shape} vs {labels.shape}")
    p = np.clip(probs, PROB_CLAMP, 1.0 - PROB_CLAMP)
    per_entity = labels * np.log(p) + (1.0 - labels) * np.log1p(-p)
    return float(-per_entity.mean(axis=-1).mean())


def targets_for(index: KvsAllIndex, keys, num_entities: int) -> np.ndarray:
    y = np.zeros((len(keys), num_entities))
    for row, key in enumerate(keys):
        y[row, index[tuple(key)]] = 1.0
    return y


@dataclass
class BatchResult:
    loss: float
    probs: np.ndarray
    cache: ScoreCache


def forward_batch(
    params: ModelParams,
    keys: np.ndarray,
    targets: np.ndarray,
    config: TrainConfig,
    rng: np.random.Generator | None,
    update_running: bool = True,
) -> BatchResult:
    keys = np.asarray(keys, dtype=np.int64).reshape(-1, 2)
    scores, cache = score_batch(
        params, keys[:, 0], keys[:, 1], "train", rng=rng,
        input_dropout=config.input_dropout, feature_dropout=config.feature_dropout,
        update_running=update_running,
    )
    probs = expit(scores)
    loss = bce_loss(probs, targets)
    if not np.isfinite(loss):
        raise FloatingPointError("non-finite training loss")
    return BatchResult(loss, probs, cache)


def backward_batch(params: ModelParams, result: BatchResult, targets: np.ndarray) -> dict[str, np.ndarray]:
    if result.cache is None:
        raise ValueError("backward_batch needs the cache of forward_batch")
    # sigmoid and BCE fused; the two means contribute 1/(N |E|)
    n, num_entities = targets.shape
    dscores = (result.probs - targets) / (n * num_entities)
    return backward_scores(params, result.cache, dscores)


# --------------------------------------------------------------------------
# optimizers


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """Bias-corrected Adam update, in place on ``params`` and ``state``."""
    state.t += 1
    bc1 = 1.0 - beta1**state.t
    bc2 = 1.0 - beta2**state.t
    for name, p in params.items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


def rmsprop_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    alpha: float = 0.99,
    eps: float = 1e-8,
) -> None:
    """Plain RMSprop (no momentum, not centered); reuses ``state.v``."""
    state.t += 1
    for name, p in params.items():
        g = grads[name]
        v = state.v.setdefault(name, np.zeros_like(p))
        v *= alpha
        v += (1.0 - alpha) * g * g
        p -= lr * g / (np.sqrt(v) + eps)


def _step(config: TrainConfig, params: ModelParams, grads, state: AdamState) -> None:
    if config.optimizer == "rmsprop":
        rmsprop_step(params.trainable(), grads, state, config.lr)
    else:
        adam_step(params.trainable(), grads, state, config.lr)


# --------------------------------------------------------------------------
# loops


def batches(keys: np.ndarray, batch_size: int, min_size: int = 1) -> list[np.ndarray]:
    """Split into consecutive batches; a trailing batch smaller than ``min_size`` joins its predecessor."""
    out = [keys[i : i + batch_size] for i in range(0, len(keys), batch_size)]
    if len(out) > 1 and len(out[-1]) < min_size:
        tail = out.pop()
        out[-1] = np.concatenate([out[-1], tail])
    return out


def train_epoch(
    params: ModelParams,
    index: KvsAllIndex,
    config: TrainConfig,
    state: AdamState,
    shuffle_rng: np.random.Generator,
    dropout_rng: np.random.Generator,
) -> float:
    """One pass over the shuffled ``(head, rel)`` keys; returns the mean batch loss."""
    if not index:
        raise ValueError("empty KvsAll index")
    keys = np.array(sorted(index), dtype=np.int64)
    keys = keys[shuffle_rng.permutation(len(keys))]
    # batch norm on the projected vector needs two rows
    min_size = 2 if params.kind is ModelKind.CONEX else 1
    losses = []
    for batch in batches(keys, config.batch_size, min_size):
        y = label_smooth(targets_for(index, batch, params.num_entities), config.label_smoothing)
        result = forward_batch(params, batch, y, config, dropout_rng)
        grads = backward_batch(params, result, y)
        _step(config, params, grads, state)
        losses.append(result.loss)
    return float(np.mean(losses))


@dataclass
class EpochLog:
    epoch: int
    loss: float
    val_mrr: float | None = None

    def line(self) -> str:
        fields = [str(self.epoch), repr(self.loss)]
        if self.val_mrr is not None:
            fields.append(repr(self.val_mrr))
        return "\t".join(fields)


def fit(
    dataset: Dataset,
    config: TrainConfig,
    *,
    validate_every: int = 0,
    on_epoch: Callable[[EpochLog], None] | None = None,
) -> tuple[ModelParams, list[EpochLog]]:
    """Train from scratch on ``dataset.train`` (reciprocals added here)."""
    vocab = dataset.vocab
    train = add_reciprocals(dataset.train, vocab)
    index = build_kvsall(train)
    params = init_params(config.seed, vocab.num_entities, vocab.num_relations, config.d, config.c, config.kind)
    state = AdamState()
    shuffle_rng = substream(config.seed, "shuffle")
    dropout_rng = substream(config.seed, "dropout")

    valid_filter = None
    if validate_every and dataset.valid:
        from .evaluation import evaluate
        from .kgdata import build_filter_index

        valid_filter = build_filter_index(
            train, add_reciprocals(dataset.valid, vocab), add_reciprocals(dataset.test, vocab)
        )

    history = []
    for epoch in range(1, config.epochs + 1):
        loss = train_epoch(params, index, config, state, shuffle_rng, dropout_rng)
        entry = EpochLog(epoch, loss)
        if valid_filter is not None and epoch % validate_every == 0:
            entry.val_mrr = evaluate(params, dataset.valid, valid_filter)[0].mrr
        history.append(entry)
        log.debug("epoch %d loss %.6f", epoch, loss)
        if on_epoch is not None:
            on_epoch(entry)
    return params, history
