import io
from collections import defaultdict

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conex.kgdata import (
    ParseError,
    RawTriple,
    Triple,
    add_reciprocals,
    build_filter_index,
    build_kvsall,
    build_vocabulary,
    dataset_from_raw,
    flatten_index,
    load_dataset,
    merge_train_valid,
    parse_triples,
    write_triples,
)


def test_parse_single_line():
    triples, rejected = parse_triples(io.StringIO("a\tlikes\tb\n"))
    assert triples == [RawTriple("a", "likes", "b")]
    assert rejected == []


def test_parse_wrong_field_count():
    with pytest.raises(ParseError) as err:
        parse_triples(io.StringIO("a\tlikes\n"))
    assert err.value.lineno == 1


def test_parse_skips_blank_lines_and_reports_line_numbers():
    vocab = build_vocabulary([RawTriple("a", "p", "b")])
    text = "a\tp\tb\n\nz\tp\ta\nb\tq\ta\n"
    triples, rejected = parse_triples(io.StringIO(text), vocab)
    assert triples == [Triple(0, 0, 1)]
    assert [r.lineno for r in rejected] == [3, 4]
    assert "unknown entity 'z'" in rejected[0].reason
    assert "unknown relation 'q'" in rejected[1].reason


def test_vocabulary_two_entities_one_relation():
    v = build_vocabulary([RawTriple("a", "p", "b"), RawTriple("b", "p", "a")])
    assert (v.num_entities, v.base_relation_count, v.num_relations) == (2, 1, 2)


def test_vocabulary_first_appearance_order():
    v = build_vocabulary([RawTriple("z", "q", "y"), RawTriple("a", "p", "z")])
    assert v.entities == ("z", "y", "a")
    assert v.relations == ("q", "p")


def test_vocabulary_empty_input():
    with pytest.raises(ValueError):
        build_vocabulary([])


def test_vocabulary_reciprocal_names():
    v = build_vocabulary([RawTriple("a", "p", "b"), RawTriple("a", "q", "b")])
    assert v.relation_name(2) == "p_reciprocal"
    assert v.relation_id("q_reciprocal") == 3
    assert v.base_relation(3) == 1


def test_add_reciprocals_definition():
    v = build_vocabulary([RawTriple("a", "p", "b")])
    assert add_reciprocals([Triple(0, 0, 1)], v) == [Triple(0, 0, 1), Triple(1, 1, 0)]


def test_add_reciprocals_refuses_double_augmentation(toy_dataset):
    once = add_reciprocals(toy_dataset.train, toy_dataset.vocab)
    assert len(once) == 2 * len(toy_dataset.train)
    with pytest.raises(ValueError):
        add_reciprocals(once, toy_dataset.vocab)


def test_kvsall_grouping():
    assert build_kvsall([Triple(0, 0, 1), Triple(0, 0, 2)]) == {(0, 0): [1, 2]}
    assert build_kvsall([Triple(0, 0, 1), Triple(1, 1, 0)]) == {(0, 0): [1], (1, 1): [0]}


def _brute_force_groups(triples):
    out = defaultdict(set)
    for h, r, t in triples:
        out[(h, r)].add(t)
    return {k: sorted(v) for k, v in out.items()}


def test_kvsall_random_matches_brute_force(rng):
    triples = [Triple(*map(int, x)) for x in rng.integers(0, 6, size=(50, 3))]
    assert build_kvsall(triples) == _brute_force_groups(triples)


triple_lists = st.lists(
    st.tuples(st.integers(0, 9), st.integers(0, 3), st.integers(0, 9)).map(lambda t: Triple(*t)),
    max_size=60,
)


@given(triple_lists)
def test_kvsall_flatten_is_distinct_multiset(triples):
    index = build_kvsall(triples)
    assert sorted(flatten_index(index)) == sorted(set(triples))
    for tails in index.values():
        assert tails == sorted(set(tails))


def test_filter_index_disjoint_and_duplicates():
    a, b, c = [Triple(0, 0, 1)], [Triple(1, 0, 2)], [Triple(2, 1, 0)]
    assert len(flatten_index(build_filter_index(a, b, c))) == 3
    assert flatten_index(build_filter_index(a, [], a)) == a


@given(triple_lists, triple_lists, triple_lists)
@settings(max_examples=50)
def test_filter_index_is_union(a, b, c):
    assert build_filter_index(a, b, c) == _brute_force_groups(a + b + c)


def test_merge_train_valid(toy_dataset):
    merged = merge_train_valid(toy_dataset)
    assert len(merged.train) == len(toy_dataset.train) + len(toy_dataset.valid)
    assert merged.valid == []
    assert merge_train_valid(merged) is merged


def test_merge_requires_valid():
    ds = dataset_from_raw({"train": [RawTriple("a", "p", "b")]})
    with pytest.raises(ValueError):
        merge_train_valid(ds)


def test_test_split_oov_is_rejected(toy_raw):
    toy_raw["test"].append(RawTriple("a", "likes", "stranger"))
    ds = dataset_from_raw(toy_raw)
    assert len(ds.rejected["test"]) == 1
    assert "stranger" in ds.rejected["test"][0].reason
    assert len(ds.test) == len(toy_raw["test"]) - 1


def test_load_dataset_round_trip(toy_dir, toy_dataset):
    ds = load_dataset(toy_dir)
    assert ds.train == toy_dataset.train
    assert ds.vocab == toy_dataset.vocab
    buf = io.StringIO()
    write_triples([ds.vocab.decode(t) for t in ds.train], buf)
    again, _ = parse_triples(io.StringIO(buf.getvalue()), ds.vocab)
    assert again == ds.train


def test_load_dataset_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_dataset(tmp_path)


def test_vocab_tsv(toy_dataset):
    buf = io.StringIO()
    toy_dataset.vocab.write_tsv(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "0\tentity\ta"
    assert lines[-1].endswith("\trelation\tknows_reciprocal")
    assert len(lines) == toy_dataset.vocab.num_entities + toy_dataset.vocab.num_relations


@given(st.lists(st.tuples(*[st.sampled_from("abcdefg")] * 3), min_size=1, max_size=30))
def test_vocabulary_bijection(rows):
    v = build_vocabulary([RawTriple(*r) for r in rows])
    for name in v.entities:
        assert v.entities[v.entity_id(name)] == name
    for i in range(v.num_relations):
        assert v.relation_id(v.relation_name(i)) == i
