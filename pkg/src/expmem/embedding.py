"""Deterministic text embeddings and an exact nearest-neighbour index.

The embedder is a hashing stub standing in for a production embedding
provider: each token is hashed into one of ``dim`` buckets with a signed
contribution, the bucket counts are L2-normalized, and the result is
quantized to 9 significant decimal digits.  Quantizing at creation time
(rather than only at serialization) means a store reloaded from its log
computes bit-identical cosines to the live store that wrote it.

The index is a plain exact scan — no ANN structures — so rankings are
reproducible and trivially auditable against a brute-force oracle.
"""

from __future__ import annotations

import hashlib
import re
import threading
from collections import OrderedDict
from typing import Callable, Iterable

import numpy as np

from .errors import DimMismatchError, EmptyTextError, ZeroVectorError

DEFAULT_DIM = 1024

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def _quantize(vec: np.ndarray) -> np.ndarray:
    """Clamp each component to 9 significant decimal digits."""
    return np.array([float(f"{x:.9g}") for x in vec], dtype=np.float64)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity of two vectors.

    Raises:
        DimMismatchError: if the vectors differ in length.
        ZeroVectorError: if either vector has zero magnitude.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimMismatchError(f"cosine: {a.shape} vs {b.shape}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise ZeroVectorError("cosine undefined for zero vector")
    return float(np.dot(a, b) / (na * nb))


class HashEmbedder:
    """Deterministic bag-of-tokens hashing embedder.

    Identical text yields an identical vector across processes and runs
    (token hashes come from SHA-256, never Python's randomized hash()).
    """

    def __init__(self, dim: int = DEFAULT_DIM, cache_size: int = 16384):
        if dim < 2:
            raise ValueError("embedding dim must be >= 2")
        self.dim = dim
        self._cache: OrderedDict[str, np.ndarray] = OrderedDict()
        self._cache_size = cache_size
        self._lock = threading.Lock()

    def _token_slot(self, token: str) -> tuple[int, float]:
        h = int.from_bytes(hashlib.sha256(token.encode("utf-8")).digest()[:16], "big")
        bucket = h % self.dim
        sign = 1.0 if (h >> 64) & 1 else -1.0
        return bucket, sign

    def embed(self, text: str) -> np.ndarray:
        """Embed text into a unit-norm vector of ``self.dim`` components.

        Raises:
            EmptyTextError: for empty/whitespace-only input or input with
                no alphanumeric tokens at all.
        """
        if not text or not text.strip():
            raise EmptyTextError("cannot embed empty text")
        with self._lock:
            cached = self._cache.get(text)
            if cached is not None:
                self._cache.move_to_end(text)
                return cached
        tokens = _TOKEN_RE.findall(text.lower())
        if not tokens:
            raise EmptyTextError(f"no tokens in {text!r}")
        vec = np.zeros(self.dim, dtype=np.float64)
        for tok in tokens:
            bucket, sign = self._token_slot(tok)
            vec[bucket] += sign
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            # Opposite-signed collisions cancelled out completely; fall back
            # to a single deterministic slot so the vector stays usable.
            bucket, _ = self._token_slot(" ".join(tokens))
            vec[bucket] = 1.0
            norm = 1.0
        out = _quantize(vec / norm)
        out.setflags(write=False)
        with self._lock:
            self._cache[text] = out
            if len(self._cache) > self._cache_size:
                self._cache.popitem(last=False)
        return out


class VectorIndex:
    """Exact linear-scan vector index with per-entry metadata.

    search() ranks by cosine descending with ascending-id tie-breaks, and
    applies the metadata filter *before* ranking so the top-k of a filtered
    search equals filtering a full search.
    """

    def __init__(self, dim: int = DEFAULT_DIM):
        self.dim = dim
        self._meta: dict[str, dict] = {}
        # Dense storage in insertion order with capacity doubling, so an
        # insert is O(dim) amortized instead of a full matrix rebuild.
        self._pos: dict[str, int] = {}
        self._ids: list[str] = []
        self._matrix = np.zeros((16, dim), dtype=np.float64)
        self._norms = np.zeros(16, dtype=np.float64)
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._pos)

    def __contains__(self, entry_id: str) -> bool:
        return entry_id in self._pos

    def insert(self, entry_id: str, vector: np.ndarray, metadata: dict | None = None) -> None:
        vec = np.asarray(vector, dtype=np.float64)
        if vec.shape != (self.dim,):
            raise DimMismatchError(f"index dim {self.dim}, got {vec.shape}")
        with self._lock:
            row = self._pos.get(entry_id)
            if row is None:
                row = len(self._ids)
                if row == self._matrix.shape[0]:
                    grown = np.zeros((2 * row, self.dim), dtype=np.float64)
                    grown[:row] = self._matrix
                    self._matrix = grown
                    grown_norms = np.zeros(2 * row, dtype=np.float64)
                    grown_norms[:row] = self._norms
                    self._norms = grown_norms
                self._pos[entry_id] = row
                self._ids.append(entry_id)
            self._matrix[row] = vec
            self._norms[row] = float(np.linalg.norm(vec))
            self._meta[entry_id] = dict(metadata or {})

    def vector(self, entry_id: str) -> np.ndarray:
        return self._matrix[self._pos[entry_id]].copy()

    def metadata(self, entry_id: str) -> dict:
        return self._meta[entry_id]

    def update_metadata(self, entry_id: str, **updates) -> None:
        """Merge ``updates`` into an existing entry's metadata."""
        with self._lock:
            self._meta[entry_id].update(updates)

    def search(
        self,
        query: np.ndarray,
        k: int,
        where: Callable[[str, dict], bool] | None = None,
    ) -> list[tuple[str, float]]:
        """Top-k entries by cosine similarity to ``query``.

        Args:
            query: vector of the index dimension.
            k: maximum number of results.
            where: optional predicate over (entry_id, metadata); entries
                failing it are excluded before ranking.

        Returns:
            List of (entry_id, cosine) sorted by score descending, then
            entry id ascending.
        """
        q = np.asarray(query, dtype=np.float64)
        if q.shape != (self.dim,):
            raise DimMismatchError(f"query dim {q.shape} vs index {self.dim}")
        qn = float(np.linalg.norm(q))
        if qn == 0.0:
            raise ZeroVectorError("cannot search with a zero query vector")
        if k <= 0:
            return []
        with self._lock:
            n = len(self._ids)
            if n == 0:
                return []
            ids = self._ids[:n]
            matrix = self._matrix[:n]
            norms = self._norms[:n]
        safe = np.where(norms == 0.0, 1.0, norms)
        scores = (matrix @ q) / (safe * qn)
        scored: list[tuple[str, float]] = []
        for i, entry_id in enumerate(ids):
            if norms[i] == 0.0:
                continue
            if where is not None and not where(entry_id, self._meta[entry_id]):
                continue
            scored.append((entry_id, float(scores[i])))
        scored.sort(key=lambda hit: (-hit[1], hit[0]))
        return scored[:k]

    def scan(self, where: Callable[[str, dict], bool] | None = None) -> Iterable[str]:
        """Yield entry ids (ascending) that pass the predicate."""
        for entry_id in sorted(self._pos):
            if where is None or where(entry_id, self._meta[entry_id]):
                yield entry_id
