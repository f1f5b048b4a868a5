"""Hashed embeddings and the in-memory vector index."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from expmem import DEFAULT_DIM, HashEmbedder, VectorIndex, cosine
from expmem.errors import DimMismatchError, EmptyTextError, ZeroVectorError

texts = st.text(
    alphabet="abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789 _-",
    min_size=1,
    max_size=60,
).filter(lambda s: any(c.isascii() and c.isalnum() for c in s))


class TestEmbedder:
    @given(texts)
    @settings(max_examples=50, deadline=None)
    def test_deterministic_and_unit_norm(self, text):
        e = HashEmbedder(dim=64)
        v1, v2 = e.embed(text), e.embed(text)
        assert np.array_equal(v1, v2)
        assert np.linalg.norm(v1) == pytest.approx(1.0, abs=1e-6)

    def test_same_bag_of_words_same_vector(self):
        e = HashEmbedder(dim=128)
        assert np.array_equal(
            e.embed("rank the survey results"), e.embed("results rank survey the")
        )

    def test_case_and_punctuation_insensitive(self):
        e = HashEmbedder(dim=128)
        assert np.array_equal(e.embed("Rank, the survey?"), e.embed("rank the survey"))

    def test_disjoint_vocabularies_are_near_orthogonal(self):
        e = HashEmbedder()
        a = e.embed("alpha_rank alpha_survey alpha_quarterly alpha_rollup")
        b = e.embed("beta_parse beta_ledger beta_manifest beta_batch")
        assert abs(cosine(a, b)) < 0.2

    def test_shared_words_raise_similarity(self):
        e = HashEmbedder()
        a = e.embed("rank the quarterly survey results")
        b = e.embed("rank the quarterly ledger results")
        c = e.embed("parse manifest entries")
        assert cosine(a, b) > cosine(a, c)

    def test_empty_text_rejected(self):
        e = HashEmbedder(dim=32)
        with pytest.raises(EmptyTextError):
            e.embed("   ")
        with pytest.raises(EmptyTextError):
            e.embed("!!!")  # tokenizes to nothing

    def test_cached_vectors_are_immutable(self):
        e = HashEmbedder(dim=32)
        v1 = e.embed("rank results")
        with pytest.raises(ValueError):
            v1[0] = 99.0  # read-only: callers cannot poison the cache

    def test_quantized_to_nine_significant_digits(self):
        v = HashEmbedder(dim=32).embed("rank the results")
        for x in v[v != 0]:
            assert float(f"{x:.9g}") == x

    def test_cache_eviction_keeps_answers_correct(self):
        e = HashEmbedder(dim=16, cache_size=4)
        ref = {f"word{i}": e.embed(f"word{i}").copy() for i in range(10)}
        for text, expect in ref.items():
            assert np.array_equal(e.embed(text), expect)


class TestCosine:
    def test_orthogonal_and_parallel(self):
        a = np.array([1.0, 0.0])
        b = np.array([0.0, 1.0])
        assert cosine(a, b) == pytest.approx(0.0)
        assert cosine(a, a) == pytest.approx(1.0)
        assert cosine(a, -a) == pytest.approx(-1.0)

    def test_dim_mismatch(self):
        with pytest.raises(DimMismatchError):
            cosine(np.ones(3), np.ones(4))

    def test_zero_vector(self):
        with pytest.raises(ZeroVectorError):
            cosine(np.zeros(3), np.ones(3))

    @given(st.lists(st.floats(-5, 5), min_size=4, max_size=4))
    @settings(max_examples=50, deadline=None)
    def test_bounded(self, values):
        a = np.array(values)
        if np.linalg.norm(a) == 0:
            return
        b = np.arange(1.0, 5.0)
        assert -1.0 - 1e-9 <= cosine(a, b) <= 1.0 + 1e-9


class TestVectorIndex:
    def embed(self, *texts, dim=32):
        e = HashEmbedder(dim=dim)
        return {t: e.embed(t) for t in texts}

    def test_insert_search_roundtrip(self):
        idx = VectorIndex(dim=32)
        vecs = self.embed("rank results", "parse manifest", "cluster points")
        for name, v in vecs.items():
            idx.insert(name, v, {"domain": "alpha"})
        hits = idx.search(vecs["rank results"], k=1)
        assert hits[0][0] == "rank results"
        assert hits[0][1] == pytest.approx(1.0)
        assert len(idx) == 3 and "parse manifest" in idx

    def test_growth_beyond_initial_capacity(self):
        idx = VectorIndex(dim=64)
        e = HashEmbedder(dim=64)
        for i in range(100):  # initial capacity is 16 rows
            idx.insert(f"id{i:03d}", e.embed(f"alpha{i} beta{i} gamma{i}"))
        assert len(idx) == 100
        v = e.embed("alpha37 beta37 gamma37")
        assert idx.search(v, k=1)[0][0] == "id037"

    def test_overwrite_same_id(self):
        idx = VectorIndex(dim=8)
        e = HashEmbedder(dim=8)
        idx.insert("a", e.embed("first words"), {"v": 1})
        idx.insert("a", e.embed("second words"), {"v": 2})
        assert len(idx) == 1
        assert np.array_equal(idx.vector("a"), e.embed("second words"))
        assert idx.metadata("a")["v"] == 2

    def test_metadata_update_merges(self):
        idx = VectorIndex(dim=8)
        idx.insert("a", HashEmbedder(dim=8).embed("words"), {"kind": "experience"})
        idx.update_metadata("a", archived=True)
        assert idx.metadata("a") == {"kind": "experience", "archived": True}

    def test_search_filter(self):
        idx = VectorIndex(dim=8)
        e = HashEmbedder(dim=8)
        idx.insert("a", e.embed("rank results"), {"keep": True})
        idx.insert("b", e.embed("rank results"), {"keep": False})
        hits = idx.search(e.embed("rank results"), k=5, where=lambda i, m: m["keep"])
        assert [h[0] for h in hits] == ["a"]

    def test_ties_break_by_id(self):
        idx = VectorIndex(dim=8)
        v = HashEmbedder(dim=8).embed("rank results")
        idx.insert("b", v)
        idx.insert("a", v)
        assert [h[0] for h in idx.search(v, k=2)] == ["a", "b"]

    def test_dim_mismatch_on_insert(self):
        idx = VectorIndex(dim=8)
        with pytest.raises(DimMismatchError):
            idx.insert("a", np.ones(9))

    def test_scan_is_sorted_and_filtered(self):
        idx = VectorIndex(dim=8)
        e = HashEmbedder(dim=8)
        for name in ("c", "a", "b"):
            idx.insert(name, e.embed(name + " text"), {"odd": name in "ac"})
        assert list(idx.scan()) == ["a", "b", "c"]
        assert list(idx.scan(lambda i, m: m["odd"])) == ["a", "c"]
