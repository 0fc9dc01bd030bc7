"""Small knowledge graphs with known relation patterns.

Entities are split into ordered groups ``G0, G1, ...`` and three relations
are generated from that order:

* ``sibling_of`` is symmetric: every pair of distinct entities in one group.
* ``feeds`` is antisymmetric: every pair from ``G_k`` to ``G_{k+1}``.
* ``precedes`` is transitive (composite): every pair from ``G_j`` to ``G_k``
  with ``j < k``, i.e. the transitive closure of ``feeds``.

Held-out triples stay implied by training: a held-out ``sibling_of`` edge
keeps its reverse, and held-out ``precedes`` edges span at least two groups,
so each one is composed of ``feeds`` edges still present in training.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kgdata import Dataset, RawTriple, dataset_from_raw

SYMMETRIC = "sibling_of"
ANTISYMMETRIC = "feeds"
COMPOSITE = "precedes"


@dataclass(frozen=True)
class PatternKGConfig:
    num_entities: int = 60
    group_size: int = 10
    holdout: float = 0.05  # fraction of each relation in test, and again in valid
    seed: int = 0


def _name(i: int) -> str:
    return f"e{i:03d}"


def groups_of(num_entities: int, group_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    perm = rng.permutation(num_entities)
    return [perm[i : i + group_size] for i in range(0, num_entities - group_size + 1, group_size)]


def symmetric_edges(groups) -> list[tuple[int, int]]:
    return [(int(a), int(b)) for g in groups for a in g for b in g if a != b]


def antisymmetric_edges(groups) -> list[tuple[int, int]]:
    return [(int(a), int(b)) for src, dst in zip(groups, groups[1:]) for a in src for b in dst]


def transitive_edges(groups) -> list[tuple[int, int]]:
    return [
        (int(a), int(b))
        for j, src in enumerate(groups) for dst in groups[j + 1 :]
        for a in src for b in dst
    ]


def is_symmetric(edges) -> bool:
    s = set(edges)
    return all((b, a) in s for a, b in s)


def is_antisymmetric(edges) -> bool:
    s = set(edges)
    return all((b, a) not in s for a, b in s if a != b)


def is_transitive(edges) -> bool:
    s = set(edges)
    succ: dict[int, set[int]] = {}
    for a, b in s:
        succ.setdefault(a, set()).add(b)
    return all((a, c) in s for a, b in s for c in succ.get(b, ()))


def _holdout(edges, eligible, k: int, rng: np.random.Generator, blocked: set) -> list[tuple[int, int]]:
    picked = []
    for i in rng.permutation(len(edges)):
        if len(picked) == k:
            break
        e = edges[i]
        if e in blocked or not eligible(e):
            continue
        picked.append(e)
        blocked.add(e)
        blocked.add((e[1], e[0]))  # never hold out both directions of a pair
    return picked


def pattern_kg(config: PatternKGConfig = PatternKGConfig()) -> Dataset:
    rng = np.random.default_rng(config.seed)
    groups = groups_of(config.num_entities, config.group_size, rng)
    level = {int(e): k for k, g in enumerate(groups) for e in g}
    rules = {
        SYMMETRIC: (symmetric_edges(groups), lambda e: True),
        ANTISYMMETRIC: (antisymmetric_edges(groups), lambda e: True),
        COMPOSITE: (transitive_edges(groups), lambda e: level[e[1]] - level[e[0]] >= 2),
    }
    splits: dict[str, list[RawTriple]] = {"train": [], "valid": [], "test": []}
    for rel, (edges, eligible) in rules.items():
        k = max(1, int(round(config.holdout * len(edges))))
        blocked: set = set()
        test = _holdout(edges, eligible, k, rng, blocked)
        valid = _holdout(edges, eligible, k, rng, blocked)
        held = set(test) | set(valid)
        for name, part in (("test", test), ("valid", valid)):
            splits[name] += [RawTriple(_name(a), rel, _name(b)) for a, b in part]
        splits["train"] += [RawTriple(_name(a), rel, _name(b)) for a, b in edges if (a, b) not in held]
    return dataset_from_raw(splits)


# training settings for the pattern KG, chosen by a pilot sweep over batch size and learning rate
PATTERN_TRAINING = dict(d=16, c=8, epochs=300, lr=0.003, batch_size=128)
