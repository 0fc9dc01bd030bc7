"""Triple files, vocabularies, reciprocal augmentation and KvsAll indices.

Files are the usual benchmark layout: ``train.txt``, ``valid.txt`` and
``test.txt`` in one directory, one ``head<TAB>relation<TAB>tail`` per line.
"""
from __future__ import annotations

import hashlib
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple, TextIO

RECIPROCAL_SUFFIX = "_reciprocal"
SPLITS = ("train", "valid", "test")


class ParseError(ValueError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno
        self.detail = message


class Triple(NamedTuple):
    head: int
    rel: int
    tail: int


class RawTriple(NamedTuple):
    head: str
    rel: str
    tail: str


@dataclass(frozen=True)
class Rejected:
    """A line that could not be mapped onto the vocabulary."""

    lineno: int
    triple: RawTriple
    reason: str


@dataclass(frozen=True)
class Vocabulary:
    entities: tuple[str, ...]
    relations: tuple[str, ...]  # base relations only; reciprocals are derived

    def __post_init__(self):
        if len(set(self.entities)) != len(self.entities):
            raise ValueError("duplicate entity names")
        if len(set(self.relations)) != len(self.relations):
            raise ValueError("duplicate relation names")
        object.__setattr__(self, "_ent_ids", {n: i for i, n in enumerate(self.entities)})
        object.__setattr__(self, "_rel_ids", {n: i for i, n in enumerate(self.relations)})

    @property
    def num_entities(self) -> int:
        return len(self.entities)

    @property
    def base_relation_count(self) -> int:
        return len(self.relations)

    @property
    def num_relations(self) -> int:
        """Size of the relation-id space after reciprocal augmentation."""
        return 2 * len(self.relations)

    def entity_id(self, name: str) -> int:
        return self._ent_ids[name]

    def relation_id(self, name: str) -> int:
        if name.endswith(RECIPROCAL_SUFFIX) and name not in self._rel_ids:
            return self._rel_ids[name[: -len(RECIPROCAL_SUFFIX)]] + self.base_relation_count
        return self._rel_ids[name]

    def has_entity(self, name: str) -> bool:
        return name in self._ent_ids

    def has_relation(self, name: str) -> bool:
        return name in self._rel_ids

    def relation_name(self, rel: int) -> str:
        nbase = self.base_relation_count
        if not 0 <= rel < 2 * nbase:
            raise IndexError(f"relation id {rel} out of range")
        if rel >= nbase:
            return self.relations[rel - nbase] + RECIPROCAL_SUFFIX
        return self.relations[rel]

    def base_relation(self, rel: int) -> int:
        return rel % self.base_relation_count

    def encode(self, raw: RawTriple) -> Triple:
        return Triple(self.entity_id(raw.head), self.relation_id(raw.rel), self.entity_id(raw.tail))

    def decode(self, triple: Triple) -> RawTriple:
        return RawTriple(
            self.entities[triple.head], self.relation_name(triple.rel), self.entities[triple.tail]
        )

    def digest(self) -> str:
        h = hashlib.sha256()
        for kind, names in (("E", self.entities), ("R", self.relations)):
            for name in names:
                h.update(f"{kind}\t{name}\n".encode())
        return h.hexdigest()

    def write_tsv(self, stream: TextIO) -> None:
        for i, name in enumerate(self.entities):
            stream.write(f"{i}\tentity\t{name}\n")
        for i in range(self.num_relations):
            stream.write(f"{i}\trelation\t{self.relation_name(i)}\n")


@dataclass(frozen=True)
class Dataset:
    """Id-mapped splits. Triples are *not* augmented; see :func:`add_reciprocals`."""

    train: list[Triple]
    valid: list[Triple]
    test: list[Triple]
    vocab: Vocabulary
    rejected: Mapping[str, list[Rejected]] = field(default_factory=dict)
    raw: Mapping[str, list[RawTriple]] = field(default_factory=dict, repr=False)
    merged: bool = False


KvsAllIndex = dict[tuple[int, int], list[int]]


def parse_triples(
    stream: Iterable[str], vocab: Vocabulary | None = None
) -> tuple[list, list[Rejected]]:
    """Parse tab-separated triples.

    Without a vocabulary every line is returned as a :class:`RawTriple`. With one,
    lines are encoded to :class:`Triple` and unknown names go to the rejected list.
    """
    triples: list = []
    rejected: list[Rejected] = []
    for lineno, line in enumerate(stream, start=1):
        line = line.rstrip("\r\n")
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 3:
            raise ParseError(lineno, f"expected 3 tab-separated fields, got {len(fields)}")
        raw = RawTriple(*(f.strip() for f in fields))
        if vocab is None:
            triples.append(raw)
            continue
        missing = [
            f"unknown entity {name!r}" for name in (raw.head, raw.tail) if not vocab.has_entity(name)
        ]
        if not vocab.has_relation(raw.rel):
            missing.append(f"unknown relation {raw.rel!r}")
        if missing:
            rejected.append(Rejected(lineno, raw, "; ".join(missing)))
        else:
            triples.append(vocab.encode(raw))
    return triples, rejected


def build_vocabulary(triples: Iterable[RawTriple]) -> Vocabulary:
    entities: dict[str, None] = {}
    relations: dict[str, None] = {}
    for h, r, t in triples:
        entities.setdefault(h)
        relations.setdefault(r)
        entities.setdefault(t)
    if not entities:
        raise ValueError("cannot build a vocabulary from zero triples")
    return Vocabulary(tuple(entities), tuple(relations))


def add_reciprocals(triples: Iterable[Triple], vocab: Vocabulary) -> list[Triple]:
    triples = list(triples)
    nbase = vocab.base_relation_count
    for tr in triples:
        if tr.rel >= nbase:
            raise ValueError(f"triple {tr} already uses a reciprocal relation id; refusing to augment twice")
    return triples + [Triple(t, r + nbase, h) for h, r, t in triples]


def build_kvsall(triples: Iterable[Triple]) -> KvsAllIndex:
    groups: dict[tuple[int, int], set[int]] = defaultdict(set)
    for h, r, t in triples:
        groups[(h, r)].add(t)
    return {key: sorted(tails) for key, tails in groups.items()}


def build_filter_index(*splits: Iterable[Triple]) -> KvsAllIndex:
    return build_kvsall(tr for split in splits for tr in split)


def flatten_index(index: KvsAllIndex) -> list[Triple]:
    return [Triple(h, r, t) for (h, r), tails in index.items() for t in tails]


def _encode_splits(raw: Mapping[str, list[RawTriple]], merged: bool) -> Dataset:
    vocab = build_vocabulary(raw["train"])
    encoded: dict[str, list[Triple]] = {}
    rejected: dict[str, list[Rejected]] = {}
    for name in SPLITS:
        lines = ("\t".join(tr) for tr in raw.get(name, []))
        encoded[name], rejected[name] = parse_triples(lines, vocab)
    return Dataset(
        encoded["train"], encoded["valid"], encoded["test"], vocab, rejected, dict(raw),
        merged=merged,
    )


def dataset_from_raw(raw: Mapping[str, list[RawTriple]], merge_train_valid: bool = False) -> Dataset:
    raw = {name: list(raw.get(name, [])) for name in SPLITS}
    if merge_train_valid:
        raw["train"] = raw["train"] + raw["valid"]
        raw["valid"] = []
    return _encode_splits(raw, merge_train_valid)


def load_dataset(directory: str | Path, merge_train_valid: bool = False) -> Dataset:
    directory = Path(directory)
    raw: dict[str, list[RawTriple]] = {}
    for name in SPLITS:
        path = directory / f"{name}.txt"
        if not path.is_file():
            raise FileNotFoundError(f"missing split file {path}")
        with path.open(encoding="utf-8") as f:
            try:
                raw[name], _ = parse_triples(f)
            except ParseError as e:
                raise ParseError(e.lineno, f"{e.detail} (in {path})") from None
    return dataset_from_raw(raw, merge_train_valid)


def merge_train_valid(dataset: Dataset) -> Dataset:
    """Fold the validation split into training and rebuild the vocabulary."""
    if dataset.merged:
        return dataset
    if not dataset.raw.get("valid"):
        raise ValueError("nothing to merge: validation split is empty")
    return dataset_from_raw(dataset.raw, merge_train_valid=True)


def write_triples(triples: Iterable[RawTriple], stream: TextIO) -> None:
    for tr in triples:
        stream.write("\t".join(tr) + "\n")
