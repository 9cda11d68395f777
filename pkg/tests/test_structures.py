from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from multigram.structures import (
    BracketingError,
    Span,
    build_structure,
    left_branching_bracketing,
    level_schedule,
    ngram_text,
    parse_bracketing,
    random_bracketing,
    bracketing_leaves,
    structure_records,
    unfold_tokens,
)

TOKENS4 = ["w1", "w2", "w3", "w4"]
NGRAM_KINDS = ("pyramid", "leftforest", "rightforest")


def spans_of(dag):
    return {(node.span.start, node.span.order) for node in dag.nodes}


def children_spans(dag, start, order):
    node = dag.node_for_span(start, order)
    left, right = node.children
    ls, rs = dag.nodes[left].span, dag.nodes[right].span
    return (ls.start, ls.order), (rs.start, rs.order)


def brute_force_spans(n, max_order):
    # Independent enumeration of every contiguous (start, order) window.
    return {
        (i, k)
        for k in range(1, min(max_order, n) + 1)
        for i in range(n - k + 1)
    }


class TestFourTokenInstances:
    """The running w1..w4 example, all four structures."""

    def test_pyramid_shape_and_children(self):
        dag = build_structure("pyramid", TOKENS4, 4)
        assert len(dag.nodes) == 10
        assert [len(level) for level in dag.levels] == [4, 3, 2, 1]
        assert children_spans(dag, 0, 3) == ((0, 2), (1, 2))

    def test_leftforest_children_share_prefix(self):
        dag = build_structure("leftforest", TOKENS4, 4)
        assert spans_of(dag) == brute_force_spans(4, 4)
        assert children_spans(dag, 0, 3) == ((0, 2), (2, 1))

    def test_rightforest_children_share_suffix(self):
        dag = build_structure("rightforest", TOKENS4, 4)
        assert children_spans(dag, 0, 3) == ((0, 1), (1, 2))

    def test_tree_from_bracketing(self):
        dag = build_structure("tree", TOKENS4, 4, parse="((w1 w2) (w3 w4))")
        assert len(dag.nodes) == 2 * 4 - 1
        assert spans_of(dag) == {(0, 1), (1, 1), (2, 1), (3, 1), (0, 2), (2, 2), (0, 4)}

    def test_pyramid_reuses_middle_token_twice(self):
        dag = build_structure("pyramid", TOKENS4, 4)
        node = dag.node_for_span(0, 3)
        assert unfold_tokens(dag, node.id) == Counter({0: 1, 1: 2, 2: 1})

    def test_leftforest_unfolds_each_token_once(self):
        dag = build_structure("leftforest", TOKENS4, 4)
        node = dag.node_for_span(0, 3)
        assert unfold_tokens(dag, node.id) == Counter({0: 1, 1: 1, 2: 1})


class TestDegenerateAndClamped:
    def test_single_token(self):
        for kind in NGRAM_KINDS:
            dag = build_structure(kind, ["only"], 7)
            assert len(dag.nodes) == 1
            assert dag.nodes[0].children is None

    def test_order_clamped_to_length(self):
        dag = build_structure("pyramid", ["a", "b", "c", "d", "e"], 3)
        assert len(dag.nodes) == 5 + 4 + 3
        assert dag.max_order == 3

    def test_invalid_max_order(self):
        with pytest.raises(ValueError):
            build_structure("pyramid", TOKENS4, 0)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            build_structure("swamp", TOKENS4, 2)

    def test_unknown_node_id(self):
        dag = build_structure("pyramid", TOKENS4, 2)
        with pytest.raises(KeyError):
            unfold_tokens(dag, 99)


@settings(max_examples=60, deadline=None)
@given(n=st.integers(1, 12), max_order=st.integers(1, 7))
def test_span_sets_agree_across_ngram_kinds(n, max_order):
    expected = brute_force_spans(n, max_order)
    tokens = [f"t{i}" for i in range(n)]
    for kind in NGRAM_KINDS:
        dag = build_structure(kind, tokens, max_order)
        assert spans_of(dag) == expected
        assert len(dag.nodes) == sum(n - k + 1 for k in range(1, min(max_order, n) + 1))


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 10), max_order=st.integers(1, 7))
def test_forest_unfolding_is_exact(n, max_order):
    tokens = [f"t{i}" for i in range(n)]
    for kind in ("leftforest", "rightforest"):
        dag = build_structure(kind, tokens, max_order)
        for node in dag.nodes:
            expected = Counter(range(node.span.start, node.span.end))
            assert unfold_tokens(dag, node.id) == expected


@settings(max_examples=40, deadline=None)
@given(n=st.integers(3, 10), max_order=st.integers(3, 7))
def test_pyramid_duplicates_above_order_two(n, max_order):
    dag = build_structure("pyramid", [f"t{i}" for i in range(n)], max_order)
    for node in dag.nodes:
        counts = unfold_tokens(dag, node.id)
        if node.span.order >= 3:
            assert max(counts.values()) >= 2
        else:
            assert max(counts.values()) == 1
        assert set(counts) == set(range(node.span.start, node.span.end))


@settings(max_examples=30, deadline=None)
@given(n=st.integers(2, 9), seed=st.integers(0, 999))
def test_random_tree_unfolding_is_exact(n, seed):
    tokens = [f"t{i}" for i in range(n)]
    parse = random_bracketing(tokens, np.random.default_rng(seed))
    dag = build_structure("tree", tokens, 7, parse=parse)
    assert len(dag.nodes) == 2 * n - 1
    for node in dag.nodes:
        expected = Counter(range(node.span.start, node.span.end))
        assert unfold_tokens(dag, node.id) == expected


class TestSchedule:
    def test_pyramid_batches(self):
        dag = build_structure("pyramid", TOKENS4, 4)
        assert [len(b) for b in level_schedule(dag)] == [4, 3, 2, 1]

    def test_depth_is_capped_by_max_order(self):
        dag = build_structure("leftforest", [f"t{i}" for i in range(200)], 7)
        assert len(level_schedule(dag)) == 7

    def test_left_branching_tree_depth(self):
        parse = left_branching_bracketing(TOKENS4)
        dag = build_structure("tree", TOKENS4, 4, parse=parse)
        assert [len(b) for b in level_schedule(dag)] == [4, 1, 1, 1]

    @settings(max_examples=40, deadline=None)
    @given(n=st.integers(1, 12), max_order=st.integers(1, 7))
    def test_children_precede_their_batch(self, n, max_order):
        tokens = [f"t{i}" for i in range(n)]
        for kind in NGRAM_KINDS:
            dag = build_structure(kind, tokens, max_order)
            batches = level_schedule(dag)
            assert len(batches) == min(max_order, n)
            seen = set()
            for batch in batches:
                for node_id in batch:
                    node = dag.nodes[node_id]
                    if node.children is not None:
                        assert set(node.children) <= seen
                seen.update(batch)

    def test_deterministic_construction(self):
        a = build_structure("leftforest", TOKENS4, 3)
        b = build_structure("leftforest", TOKENS4, 3)
        assert a == b


class TestNgramText:
    def test_inner_bigram(self):
        dag = build_structure("pyramid", list("abcd"), 4)
        assert ngram_text(dag, dag.node_for_span(1, 2).id, list("abcd")) == ["b", "c"]

    def test_whole_sentence(self):
        dag = build_structure("pyramid", list("abcd"), 4)
        assert ngram_text(dag, dag.node_for_span(0, 4).id, list("abcd")) == list("abcd")

    def test_last_unigram(self):
        dag = build_structure("pyramid", list("abcd"), 4)
        assert ngram_text(dag, dag.node_for_span(3, 1).id, list("abcd")) == ["d"]


class TestBracketing:
    def test_malformed(self):
        for bad in ["((a b)", "(a b))", "(a)", "(a b c)", "", "( )"]:
            with pytest.raises(BracketingError):
                build_structure("tree", ["a", "b"], 2, parse=bad)

    def test_leaf_count_mismatch(self):
        with pytest.raises(BracketingError, match="leaves"):
            build_structure("tree", ["a", "b", "c"], 3, parse="(a b)")

    def test_leaf_word_mismatch(self):
        with pytest.raises(BracketingError, match="match"):
            build_structure("tree", ["a", "b"], 2, parse="(a c)")

    def test_tree_requires_parse(self):
        with pytest.raises(BracketingError):
            build_structure("tree", ["a", "b"], 2)

    @settings(max_examples=30, deadline=None)
    @given(n=st.integers(1, 10), seed=st.integers(0, 500))
    def test_random_bracketing_round_trip(self, n, seed):
        tokens = [f"t{i}" for i in range(n)]
        parse = random_bracketing(tokens, np.random.default_rng(seed))
        assert bracketing_leaves(parse_bracketing(parse)) == tokens


def test_structure_records_format():
    dag = build_structure("pyramid", TOKENS4, 4)
    records = structure_records(dag)
    assert len(records) == 10
    assert records[0] == "0\t0\t1\t-1\t-1"
    # (0, 2) is the first order-2 node: id 4, children are unigrams 0 and 1.
    assert records[4] == "4\t0\t2\t0\t1"
    for record in records:
        assert len(record.split("\t")) == 5
