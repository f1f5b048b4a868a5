"""Structural signatures: LCS, similarity, the operation canon, extraction."""

from __future__ import annotations

from itertools import combinations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from expmem import (
    EMPTY_SIGNATURE,
    MemoryStore,
    NodeKind,
    OperationCanon,
    RawStep,
    StructuralSignature,
    lcs_length,
    structural_similarity,
)
from expmem.errors import MalformedDocumentError
from expmem.signatures import OP_PREFIX, fingerprint


def brute_force_lcs(a: tuple, b: tuple) -> int:
    """Independent oracle: enumerate every subsequence of the shorter side
    and test it against the longer side with a greedy membership scan."""
    short, long_ = (a, b) if len(a) <= len(b) else (b, a)

    def is_subsequence(sub, seq):
        it = iter(seq)
        return all(x in it for x in sub)

    best = 0
    for r in range(len(short), 0, -1):
        if r <= best:
            break
        for combo in combinations(short, r):
            if is_subsequence(combo, long_):
                best = r
                break
    return best


seqs = st.lists(st.sampled_from("abcd"), max_size=7).map(tuple)


class TestLcs:
    def test_known_values(self):
        assert lcs_length("abcde", "ace") == 3
        assert lcs_length("abc", "def") == 0
        assert lcs_length("abab", "baba") == 3
        assert lcs_length((), "abc") == 0
        assert lcs_length("abc", "abc") == 3

    @given(seqs, seqs)
    @settings(max_examples=200, deadline=None)
    def test_matches_brute_force(self, a, b):
        assert lcs_length(a, b) == brute_force_lcs(a, b)

    @given(seqs, seqs)
    @settings(max_examples=100, deadline=None)
    def test_symmetry_and_bounds(self, a, b):
        n = lcs_length(a, b)
        assert n == lcs_length(b, a)
        assert 0 <= n <= min(len(a), len(b))

    @given(seqs)
    @settings(max_examples=50, deadline=None)
    def test_self_similarity(self, a):
        assert lcs_length(a, a) == len(a)


class TestStructuralSimilarity:
    def test_normalized_by_shorter(self):
        # LCS("abc","ab") = 2, min length 2 -> 1.0
        assert structural_similarity("abc", "ab") == pytest.approx(1.0)
        assert structural_similarity("abcd", "cd") == pytest.approx(1.0)

    def test_empty_sides_score_zero(self):
        assert structural_similarity((), ("a",)) == 0.0
        assert structural_similarity((), ()) == 0.0

    @given(seqs, seqs)
    @settings(max_examples=100, deadline=None)
    def test_range_and_symmetry(self, a, b):
        s = structural_similarity(a, b)
        assert 0.0 <= s <= 1.0
        assert s == structural_similarity(b, a)

    def test_signature_wrapper(self):
        a = StructuralSignature(ops=("op:rank", "op:lookup", "op:compare"))
        b = StructuralSignature(ops=("op:rank", "op:compare"))
        assert a.similarity(b) == pytest.approx(1.0)
        assert a.similarity(EMPTY_SIGNATURE) == 0.0
        assert len(a) == 3 and bool(a) and not EMPTY_SIGNATURE

    def test_fingerprint_is_order_sensitive(self):
        assert fingerprint(("op:a", "op:b")) != fingerprint(("op:b", "op:a"))
        assert fingerprint(("op:a",)) == fingerprint(("op:a",))

    def test_round_trip(self):
        a = StructuralSignature(ops=("op:rank", "op:lookup"))
        assert StructuralSignature.from_dict(a.to_dict()) == a


class TestOperationCanon:
    def test_synonyms_map_to_canonical(self):
        canon = OperationCanon.default()
        assert canon.canonical("aggregate records") == "aggregation"
        assert canon.canonical("Aggregate   Records") == "aggregation"

    def test_canonical_name_is_fixed_point(self):
        canon = OperationCanon.default()
        assert canon.canonical("aggregation") == "aggregation"

    def test_unknown_phrase_slugs(self):
        canon = OperationCanon.default()
        assert canon.canonical("Polish the chrome!") == "polish_the_chrome"

    def test_parse_rejects_malformed_lines(self):
        with pytest.raises(MalformedDocumentError):
            OperationCanon.parse(["no arrow here -> -> twice"])

    def test_parse_round_trip(self):
        canon = OperationCanon.parse(
            ["# comment", "", "rank", "  order the rows -> rank"]
        )
        assert canon.canonical("order the rows") == "rank"


class TestExtractor:
    @pytest.fixture
    def store(self, tmp_path):
        s = MemoryStore(tmp_path, "sig")
        yield s
        s.close()

    def steps(self):
        return (
            RawStep(text="rank results", entities=("alpha_ledger",), topic="alpha work"),
            RawStep(text="look up value", entities=("alpha_ledger",)),
            RawStep(text="aggregate records", entities=()),
        )

    def test_dry_tokens_create_no_nodes(self, store):
        before = store.graph.node_count()
        sig = store.extractor.tokens(self.steps())
        assert store.graph.node_count() == before
        assert sig.ops == ("op:ranking", "op:lookup", "op:aggregation")

    def test_extract_materializes_ops_entities_topics(self, store):
        result = store.extractor.extract(self.steps(), domain="alpha")
        assert result.signature.ops == ("op:ranking", "op:lookup", "op:aggregation")
        op_titles = {store.graph.get_node(i).title for i in result.op_node_ids}
        assert op_titles == {"ranking", "lookup", "aggregation"}
        assert len(result.entity_ids) == 1  # alpha_ledger resolved once
        assert len(result.topic_ids) == 1

    def test_extract_is_idempotent_across_calls(self, store):
        first = store.extractor.extract(self.steps(), domain="alpha")
        n_nodes = store.graph.node_count()
        second = store.extractor.extract(self.steps(), domain="alpha")
        assert store.graph.node_count() == n_nodes  # everything reused
        assert first.op_node_ids == second.op_node_ids
        assert first.entity_ids == second.entity_ids

    def test_novel_phrase_creates_an_operation_once(self, store):
        steps = (RawStep(text="spin the widget", entities=()),)
        one = store.extractor.extract(steps, domain="alpha")
        two = store.extractor.extract(steps, domain="alpha")
        assert one.signature.ops == ("op:spin_the_widget",)
        assert one.op_node_ids == two.op_node_ids
        ops = [n for n in store.graph.nodes(NodeKind.OPERATION) if n.title == "spin_the_widget"]
        assert len(ops) == 1

    def test_dry_and_write_agree(self, store):
        dry = store.extractor.tokens(self.steps())
        wet = store.extractor.extract(self.steps(), domain="alpha")
        assert dry.ops == wet.signature.ops
