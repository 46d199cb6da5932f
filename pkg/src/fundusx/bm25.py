"""BM25 inverted index over collection titles/descriptions and record titles.

Scoring follows the non-negative idf variant:

    idf(t)     = ln(1 + (N - df + 0.5) / (df + 0.5))
    score(d,q) = sum_t idf(t) * tf * (k1 + 1) / (tf + k1 * (1 - b + b * dl/avgdl))

No stemming and no stopword removal: the corpus is short titles full of
domain-specific proper nouns where stemming hurts precision.
"""

from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

from .snapshot import read_snapshot, write_snapshot

SNAPSHOT_KIND = b"BM25"
SNAPSHOT_VERSION = 1

RECORD_TITLE = "record-title"
COLLECTION_TITLE = "collection-title"
COLLECTION_DESCRIPTION = "collection-description"
DOC_KINDS = (RECORD_TITLE, COLLECTION_TITLE, COLLECTION_DESCRIPTION)

# Unicode alphanumeric runs; underscore is a boundary, not a word character.
_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


class Bm25Error(Exception):
    pass


class DuplicateDocError(Bm25Error):
    pass


def tokenize(text: str) -> list[str]:
    """Lowercase and split on non-alphanumeric boundaries."""
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class Bm25Params:
    k1: float = 1.2
    b: float = 0.75

    def __post_init__(self) -> None:
        if self.k1 <= 0:
            raise ValueError("k1 must be > 0")
        if not 0.0 <= self.b <= 1.0:
            raise ValueError("b must lie in [0, 1]")


@dataclass(frozen=True)
class LexicalDoc:
    id: str
    kind: str
    text: str

    def __post_init__(self) -> None:
        if self.kind not in DOC_KINDS:
            raise ValueError(f"unknown doc kind {self.kind!r}")


@dataclass(frozen=True)
class LexicalHit:
    id: str
    kind: str
    score: float


class Bm25Index:
    """Immutable after build; reads are unrestricted and pure."""

    def __init__(self, params: Bm25Params | None = None) -> None:
        self.params = params or Bm25Params()
        self._doc_ids: list[str] = []
        self._doc_kinds: list[str] = []
        self._doc_lens: list[int] = []
        self._postings: dict[str, list[tuple[int, int]]] = {}
        self._avgdl = 0.0

    @classmethod
    def build(cls, docs: list[LexicalDoc], params: Bm25Params | None = None) -> "Bm25Index":
        index = cls(params)
        seen: set[tuple[str, str]] = set()
        for doc in docs:
            # a collection legitimately contributes a title doc and a
            # description doc under one id, so uniqueness is per (id, kind)
            key = (doc.id, doc.kind)
            if key in seen:
                raise DuplicateDocError(f"duplicate document {key!r}")
            seen.add(key)
            doc_idx = len(index._doc_ids)
            index._doc_ids.append(doc.id)
            index._doc_kinds.append(doc.kind)
            tokens = tokenize(doc.text)
            index._doc_lens.append(len(tokens))
            for term, freq in Counter(tokens).items():
                index._postings.setdefault(term, []).append((doc_idx, freq))
        if index._doc_lens:
            index._avgdl = sum(index._doc_lens) / len(index._doc_lens)
        return index

    def __len__(self) -> int:
        return len(self._doc_ids)

    @property
    def avgdl(self) -> float:
        return self._avgdl

    def search(
        self, query: str, k: int, kinds: tuple[str, ...] | None = None
    ) -> list[LexicalHit]:
        """Top-k matching documents; only docs sharing >= 1 term are returned.

        Sorted by score descending with ties broken by id ascending. Unknown
        query terms simply contribute nothing.
        """
        if k < 1:
            raise ValueError("k must be a positive integer")
        n_docs = len(self._doc_ids)
        if n_docs == 0:
            return []
        k1, b = self.params.k1, self.params.b
        avgdl = self._avgdl
        scores: dict[int, float] = {}
        for term in tokenize(query):
            postings = self._postings.get(term)
            if not postings:
                continue
            df = len(postings)
            idf = math.log(1.0 + (n_docs - df + 0.5) / (df + 0.5))
            for doc_idx, tf in postings:
                dl = self._doc_lens[doc_idx]
                norm = tf + k1 * (1.0 - b + b * dl / avgdl) if avgdl > 0 else tf + k1
                scores[doc_idx] = scores.get(doc_idx, 0.0) + idf * tf * (k1 + 1.0) / norm

        hits = [
            LexicalHit(id=self._doc_ids[i], kind=self._doc_kinds[i], score=s)
            for i, s in scores.items()
            if kinds is None or self._doc_kinds[i] in kinds
        ]
        hits.sort(key=lambda h: (-h.score, h.id))
        return hits[:k]

    # -- persistence -------------------------------------------------------

    def save(self, path: Path | str) -> None:
        payload = json.dumps(
            {
                "params": {"k1": self.params.k1, "b": self.params.b},
                "doc_ids": self._doc_ids,
                "doc_kinds": self._doc_kinds,
                "doc_lens": self._doc_lens,
                "postings": {t: p for t, p in self._postings.items()},
            },
            separators=(",", ":"),
            ensure_ascii=False,
        ).encode("utf-8")
        write_snapshot(path, SNAPSHOT_KIND, SNAPSHOT_VERSION, payload)

    @classmethod
    def load(cls, path: Path | str) -> "Bm25Index":
        data = json.loads(read_snapshot(path, SNAPSHOT_KIND, SNAPSHOT_VERSION))
        index = cls(Bm25Params(**data["params"]))
        index._doc_ids = list(data["doc_ids"])
        index._doc_kinds = list(data["doc_kinds"])
        index._doc_lens = list(data["doc_lens"])
        index._postings = {
            term: [(int(d), int(f)) for d, f in posting]
            for term, posting in data["postings"].items()
        }
        if index._doc_lens:
            index._avgdl = sum(index._doc_lens) / len(index._doc_lens)
        return index
