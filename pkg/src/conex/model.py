"""Parameter container and scoring heads for ConEx, ComplEx and DistMult."""
from __future__ import annotations

import copy
import enum
import zlib
from dataclasses import dataclass

import numpy as np

from .tensorcore import (
    BatchNorm,
    ComplexVector,
    ConvParams,
    FeatureTape,
    conv_backward,
    conv_forward,
    gated_product,
)


class ModelKind(str, enum.Enum):
    CONEX = "conex"
    COMPLEX = "complex"
    DISTMULT = "distmult"

    @classmethod
    def parse(cls, value) -> "ModelKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown model kind {value!r}; choose from {[k.value for k in cls]}") from None


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for one named purpose (init, shuffle, dropout, ...)."""
    return np.random.default_rng([seed, zlib.crc32(name.encode())])


@dataclass
class ModelParams:
    kind: ModelKind
    ent_re: np.ndarray  # (|E|, d)
    ent_im: np.ndarray
    rel_re: np.ndarray  # (|R'|, d), reciprocals included
    rel_im: np.ndarray
    conv: ConvParams | None = None

    def __post_init__(self):
        self.kind = ModelKind.parse(self.kind)
        if self.ent_re.shape != self.ent_im.shape or self.rel_re.shape != self.rel_im.shape:
            raise ValueError("real and imaginary tables differ in shape")
        if self.ent_re.shape[1] != self.rel_re.shape[1]:
            raise ValueError("entity and relation tables differ in dimension")
        if (self.kind is ModelKind.CONEX) != (self.conv is not None):
            raise ValueError("conv parameters are required for ConEx and only for ConEx")
        if self.conv is not None and self.conv.dim != self.dim:
            raise ValueError("conv parameters built for a different dimension")

    @property
    def dim(self) -> int:
        return self.ent_re.shape[1]

    @property
    def channels(self) -> int:
        return 0 if self.conv is None else self.conv.channels

    @property
    def num_entities(self) -> int:
        return self.ent_re.shape[0]

    @property
    def num_relations(self) -> int:
        return self.rel_re.shape[0]

    def trainable(self) -> dict[str, np.ndarray]:
        """Named views of every trainable array, in checkpoint order."""
        out = {"entity.re": self.ent_re}
        if self.kind is not ModelKind.DISTMULT:
            out["entity.im"] = self.ent_im
        out["relation.re"] = self.rel_re
        if self.kind is not ModelKind.DISTMULT:
            out["relation.im"] = self.rel_im
        if self.conv is not None:
            out.update({f"conv.{k}": v for k, v in self.conv.trainable().items()})
        return out

    def buffers(self) -> dict[str, np.ndarray]:
        """Arrays that are stored but not trained."""
        out = {}
        if self.kind is ModelKind.DISTMULT:
            out["entity.im"] = self.ent_im
            out["relation.im"] = self.rel_im
        if self.conv is not None:
            out.update({f"conv.{k}": v for k, v in self.conv.buffers().items()})
        return out

    def copy(self) -> "ModelParams":
        return copy.deepcopy(self)


def parameter_count(kind, num_entities: int, num_relations: int, d: int, c: int = 0) -> int:
    """Closed-form number of trainable scalars."""
    kind = ModelKind.parse(kind)
    planes = 1 if kind is ModelKind.DISTMULT else 2
    total = (num_entities + num_relations) * planes * d
    if kind is ModelKind.CONEX:
        total += 9 * c  # kernels
        total += c * 4 * d * 2 * d + 2 * d  # affine
        total += 2 * (1 + c + 2 * d)  # batch-norm scale and shift
    return total


def count_parameters(params: ModelParams) -> int:
    return int(sum(a.size for a in params.trainable().values()))


def _xavier(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def init_params(seed: int, num_entities: int, num_relations: int, d: int, c: int = 0, kind="conex") -> ModelParams:
    kind = ModelKind.parse(kind)
    if min(num_entities, num_relations, d) <= 0:
        raise ValueError("entity count, relation count and dimension must be positive")
    if kind is ModelKind.CONEX and c <= 0:
        raise ValueError("ConEx needs at least one convolution channel")
    rng = substream(seed, "init")
    ent_re = _xavier(rng, (num_entities, d), num_entities, d)
    rel_re = _xavier(rng, (num_relations, d), num_relations, d)
    if kind is ModelKind.DISTMULT:
        ent_im = np.zeros_like(ent_re)
        rel_im = np.zeros_like(rel_re)
    else:
        ent_im = _xavier(rng, (num_entities, d), num_entities, d)
        rel_im = _xavier(rng, (num_relations, d), num_relations, d)
    conv = None
    if kind is ModelKind.CONEX:
        conv = ConvParams(
            kernels=_xavier(rng, (c, 3, 3), 9, 9 * c),
            W=_xavier(rng, (c * 4 * d, 2 * d), c * 4 * d, 2 * d),
            b=np.zeros(2 * d),
            bn0=BatchNorm.identity(1),
            bn1=BatchNorm.identity(c),
            bn2=BatchNorm.identity(2 * d),
        )
    return ModelParams(kind, ent_re, ent_im, rel_re, rel_im, conv)


# --------------------------------------------------------------------------
# scoring


@dataclass
class ScoreCache:
    heads: np.ndarray
    rels: np.ndarray
    g_re: np.ndarray | None
    g_im: np.ndarray | None
    q_re: np.ndarray
    q_im: np.ndarray | None
    tape: FeatureTape | None


def _check_ids(params: ModelParams, heads, rels, tails=None):
    heads = np.atleast_1d(np.asarray(heads, dtype=np.int64))
    rels = np.atleast_1d(np.asarray(rels, dtype=np.int64))
    if heads.shape != rels.shape:
        raise ValueError("heads and relations must have the same length")
    for ids, n, what in ((heads, params.num_entities, "entity"), (rels, params.num_relations, "relation")):
        if ids.size and (ids.min() < 0 or ids.max() >= n):
            raise IndexError(f"{what} id out of range [0, {n})")
    if tails is not None:
        t = np.atleast_1d(np.asarray(tails, dtype=np.int64))
        if t.size and (t.min() < 0 or t.max() >= params.num_entities):
            raise IndexError(f"entity id out of range [0, {params.num_entities})")
    return heads, rels


def score_batch(
    params: ModelParams,
    heads,
    rels,
    mode: str = "eval",
    *,
    rng: np.random.Generator | None = None,
    input_dropout: float = 0.0,
    feature_dropout: float = 0.0,
    update_running: bool = True,
    gamma: ComplexVector | None = None,
) -> tuple[np.ndarray, ScoreCache]:
    """Score every entity as tail for each ``(head, rel)`` query.

    Returns an ``(N, |E|)`` score matrix and the cache needed by
    :func:`backward_scores`. ``gamma`` overrides the ConEx gate (used for the
    conv-removal evaluation and the ComplEx head).
    """
    heads, rels = _check_ids(params, heads, rels)
    h_re, h_im = params.ent_re[heads], params.ent_im[heads]
    r_re, r_im = params.rel_re[rels], params.rel_im[rels]
    tape = None
    if params.kind is ModelKind.DISTMULT:
        q_re = h_re * r_re
        cache = ScoreCache(heads, rels, None, None, q_re, None, None)
        return q_re @ params.ent_re.T, cache
    if gamma is None and params.kind is ModelKind.CONEX:
        g, tape = conv_forward(
            ComplexVector(h_re, h_im), ComplexVector(r_re, r_im), params.conv, mode,
            rng=rng, input_dropout=input_dropout, feature_dropout=feature_dropout,
            update_running=update_running,
        )
        g_re, g_im = g.re, g.im
    else:
        if gamma is None:
            gamma = ComplexVector.ones(params.dim)
        g_re = np.broadcast_to(gamma.re, h_re.shape)
        g_im = np.broadcast_to(gamma.im, h_im.shape)
    q_re, q_im = gated_product(g_re, g_im, h_re, h_im, r_re, r_im)
    scores = q_re @ params.ent_re.T + q_im @ params.ent_im.T
    return scores, ScoreCache(heads, rels, g_re, g_im, q_re, q_im, tape)


def backward_scores(params: ModelParams, cache: ScoreCache, dscores: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of a loss w.r.t. every trainable array, given ``dL/dscores``.

    The embeddings of the head and relation receive contributions from both
    the direct Hermitian product and, for ConEx, the convolutional gate.
    """
    grads = {k: np.zeros_like(v) for k, v in params.trainable().items()}
    heads, rels = cache.heads, cache.rels
    if params.kind is ModelKind.DISTMULT:
        grads["entity.re"] += dscores.T @ cache.q_re
        dq = dscores @ params.ent_re
        np.add.at(grads["entity.re"], heads, dq * params.rel_re[rels])
        np.add.at(grads["relation.re"], rels, dq * params.ent_re[heads])
        return grads

    h_re, h_im = params.ent_re[heads], params.ent_im[heads]
    r_re, r_im = params.rel_re[rels], params.rel_im[rels]
    g_re, g_im = cache.g_re, cache.g_im
    grads["entity.re"] += dscores.T @ cache.q_re
    grads["entity.im"] += dscores.T @ cache.q_im
    dq_re = dscores @ params.ent_re
    dq_im = dscores @ params.ent_im
    a = g_re * h_re
    b = g_im * h_im
    da = dq_re * r_re + dq_im * r_im
    db = dq_im * r_re - dq_re * r_im
    dh_re = da * g_re
    dh_im = db * g_im
    dr_re = dq_re * a + dq_im * b
    dr_im = dq_im * a - dq_re * b
    if cache.tape is not None:
        conv_grads, gh, gr = conv_backward(cache.tape, ComplexVector(da * h_re, db * h_im), params.conv)
        for k, v in conv_grads.items():
            grads[f"conv.{k}"] += v
        dh_re = dh_re + gh.re
        dh_im = dh_im + gh.im
        dr_re = dr_re + gr.re
        dr_im = dr_im + gr.im
    np.add.at(grads["entity.re"], heads, dh_re)
    np.add.at(grads["entity.im"], heads, dh_im)
    np.add.at(grads["relation.re"], rels, dr_re)
    np.add.at(grads["relation.im"], rels, dr_im)
    return grads


def score_all_tails(params: ModelParams, head: int, rel: int, mode: str = "eval") -> np.ndarray:
    scores, _ = score_batch(params, [head], [rel], mode, update_running=False)
    return scores[0]


def score_triple(params: ModelParams, head: int, rel: int, tail: int, mode: str = "eval") -> float:
    _check_ids(params, [head], [rel], [tail])
    return float(score_all_tails(params, head, rel, mode)[tail])


def degenerate_scores(params: ModelParams, head: int, rel: int) -> np.ndarray:
    """ConEx scores with the gate forced to 1+1i (the conv-removal evaluation)."""
    if params.kind is not ModelKind.CONEX:
        raise ValueError("conv removal only applies to ConEx models")
    scores, _ = score_batch(params, [head], [rel], "eval", gamma=ComplexVector.ones(params.dim))
    return scores[0]


def complex_view(params: ModelParams) -> ModelParams:
    """ComplEx model sharing the embedding tables of ``params``."""
    return ModelParams(ModelKind.COMPLEX, params.ent_re, params.ent_im, params.rel_re, params.rel_im)
