"""Filtered ranking metrics, ensembles and the conv-removal evaluation.

Every test triple ``(h, r, t)`` yields two queries: ``(h, r, ?)`` for the tail
and ``(t, r_reciprocal, ?)`` for the head. Candidates are ranked by predicted
probability ``sigmoid(score)``; an ensemble averages those probabilities.
"""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence, TextIO

import numpy as np
from scipy.special import expit

from .kgdata import KvsAllIndex, Rejected, Triple, Vocabulary
from .model import ModelKind, ModelParams, score_batch
from .stats import confidence_interval, wilcoxon_signed_rank

__all__ = [
    "Metrics", "RankRecord", "filtered_rank", "rank_queries", "evaluate", "ensemble_evaluate",
    "ablate_evaluate", "per_relation_mrr", "write_rank_csv", "confidence_interval", "wilcoxon_signed_rank",
]
from .tensorcore import ComplexVector

OOV_POLICIES = ("include", "skip")
EVAL_ABLATIONS = ("as-trained", "no-conv")


@dataclass(frozen=True)
class Metrics:
    mrr: float
    hits1: float
    hits3: float
    hits10: float
    n_queries: int

    @classmethod
    def from_ranks(cls, ranks: Sequence[int]) -> "Metrics":
        ranks = np.asarray(ranks, dtype=np.float64)
        if ranks.size == 0:
            raise ValueError("no ranks to summarise")
        return cls(
            mrr=float(np.mean(1.0 / ranks)),
            hits1=float(np.mean(ranks <= 1)),
            hits3=float(np.mean(ranks <= 3)),
            hits10=float(np.mean(ranks <= 10)),
            n_queries=int(ranks.size),
        )

    def as_dict(self) -> dict[str, float]:
        return {"mrr": self.mrr, "hits@1": self.hits1, "hits@3": self.hits3,
                "hits@10": self.hits10, "n_queries": self.n_queries}

    def report(self) -> str:
        return "".join(f"{k}\t{v}\n" for k, v in self.as_dict().items())


@dataclass(frozen=True)
class RankRecord:
    rank: int
    tie_count: int
    query: Triple | None = None  # (head, rel, target) as asked; None for out-of-vocabulary
    direction: str = "tail"


def filtered_rank(scores: np.ndarray, target: int, known: Iterable[int] = ()) -> RankRecord:
    """Rank of ``target`` among all entities except the other known answers.

    Only strictly higher scores push the target down; equal scores are counted
    in ``tie_count``.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if not 0 <= target < scores.shape[0]:
        raise IndexError(f"target {target} out of range")
    s = scores[target]
    if np.isnan(s) or s == -np.inf:
        raise ValueError("target score is masked out")
    candidates = np.ones(scores.shape[0], dtype=bool)
    candidates[list(known)] = False
    candidates[target] = False
    pool = scores[candidates]
    return RankRecord(int(1 + np.sum(pool > s)), int(np.sum(pool == s)))


Scorer = Callable[[np.ndarray, np.ndarray], np.ndarray]


def probability_scorer(params: ModelParams, gamma: ComplexVector | None = None) -> Scorer:
    def scorer(heads, rels):
        scores, _ = score_batch(params, heads, rels, "eval", gamma=gamma)
        return expit(scores)

    return scorer


def average_scorer(scorers: Sequence[Scorer]) -> Scorer:
    def scorer(heads, rels):
        first = scorers[0](heads, rels)
        if len(scorers) == 1:
            return first
        # offset form keeps an ensemble of identical members bit-identical to one member
        offset = sum(s(heads, rels) - first for s in scorers[1:])
        return first + offset / len(scorers)

    return scorer


def rank_queries(
    scorer: Scorer,
    triples: Sequence[Triple],
    filter_index: KvsAllIndex,
    num_entities: int,
    num_base_relations: int,
    oov: Sequence[Rejected] = (),
    oov_policy: str = "include",
    batch_size: int = 512,
) -> tuple[Metrics, list[RankRecord]]:
    if oov_policy not in OOV_POLICIES:
        raise ValueError(f"oov policy must be one of {OOV_POLICIES}")
    queries = []
    for h, r, t in triples:
        queries.append((Triple(h, r, t), "tail"))
        queries.append((Triple(t, r + num_base_relations, h), "head"))
    n_oov = len(oov) if oov_policy == "include" else 0
    if not queries and not n_oov:
        raise ValueError("empty test set")

    records: list[RankRecord] = []
    for start in range(0, len(queries), batch_size):
        chunk = queries[start : start + batch_size]
        heads = np.array([q.head for q, _ in chunk], dtype=np.int64)
        rels = np.array([q.rel for q, _ in chunk], dtype=np.int64)
        targets = np.array([q.tail for q, _ in chunk], dtype=np.int64)
        scores = np.array(scorer(heads, rels), dtype=np.float64)
        rows = np.arange(len(chunk))
        target_scores = scores[rows, targets]
        for row, (q, _) in enumerate(chunk):
            known = filter_index.get((q.head, q.rel))
            if known:
                scores[row, known] = -np.inf
        scores[rows, targets] = -np.inf
        higher = (scores > target_scores[:, None]).sum(axis=1)
        ties = (scores == target_scores[:, None]).sum(axis=1)
        for row, (q, direction) in enumerate(chunk):
            records.append(RankRecord(int(higher[row]) + 1, int(ties[row]), q, direction))
    for _ in range(n_oov):
        # unseen entities have no embedding: worst possible rank in both directions
        records.append(RankRecord(num_entities, 0, None, "tail"))
        records.append(RankRecord(num_entities, 0, None, "head"))
    return Metrics.from_ranks([rec.rank for rec in records]), records


def evaluate(
    params: ModelParams,
    triples: Sequence[Triple],
    filter_index: KvsAllIndex,
    oov: Sequence[Rejected] = (),
    oov_policy: str = "include",
) -> tuple[Metrics, list[RankRecord]]:
    return rank_queries(
        probability_scorer(params), triples, filter_index,
        params.num_entities, params.num_relations // 2, oov, oov_policy,
    )


def ensemble_evaluate(
    models: Sequence[ModelParams],
    triples: Sequence[Triple],
    filter_index: KvsAllIndex,
    oov: Sequence[Rejected] = (),
    oov_policy: str = "include",
) -> tuple[Metrics, list[RankRecord]]:
    """Equal-weight average of the members' predicted probabilities."""
    if len(models) < 2:
        raise ValueError("an ensemble needs at least two models")
    shapes = {(m.num_entities, m.num_relations) for m in models}
    if len(shapes) != 1:
        raise ValueError(f"ensemble members disagree on vocabulary size: {sorted(shapes)}")
    scorer = average_scorer([probability_scorer(m) for m in models])
    first = models[0]
    return rank_queries(
        scorer, triples, filter_index, first.num_entities, first.num_relations // 2, oov, oov_policy,
    )


def ablate_evaluate(
    params: ModelParams,
    triples: Sequence[Triple],
    filter_index: KvsAllIndex,
    ablation: str = "no-conv",
    oov: Sequence[Rejected] = (),
    oov_policy: str = "include",
) -> tuple[Metrics, list[RankRecord]]:
    if ablation not in EVAL_ABLATIONS:
        raise ValueError(f"evaluation-time ablation must be one of {EVAL_ABLATIONS}")
    if ablation == "as-trained":
        return evaluate(params, triples, filter_index, oov, oov_policy)
    if params.kind is not ModelKind.CONEX:
        raise ValueError("conv removal only applies to ConEx models")
    scorer = probability_scorer(params, gamma=ComplexVector.ones(params.dim))
    return rank_queries(
        scorer, triples, filter_index, params.num_entities, params.num_relations // 2, oov, oov_policy,
    )


def per_relation_mrr(records: Iterable[RankRecord], vocab: Vocabulary) -> dict[str, float]:
    """MRR per base relation; head queries (reciprocal relations) fold into their base relation."""
    groups: dict[int, list[float]] = defaultdict(list)
    for rec in records:
        if rec.query is None:
            continue
        groups[vocab.base_relation(rec.query.rel)].append(1.0 / rec.rank)
    return {vocab.relations[r]: float(np.mean(groups[r])) for r in sorted(groups)}


def write_rank_csv(records: Iterable[RankRecord], num_base_relations: int, stream: TextIO) -> None:
    """Per-query CSV with the original triple ids; out-of-vocabulary rows use -1."""
    stream.write("h,r,t,direction,rank,tie_count\n")
    for rec in records:
        if rec.query is None:
            h = r = t = -1
        elif rec.direction == "head":
            h, r, t = rec.query.tail, rec.query.rel - num_base_relations, rec.query.head
        else:
            h, r, t = rec.query
        stream.write(f"{h},{r},{t},{rec.direction},{rec.rank},{rec.tie_count}\n")
