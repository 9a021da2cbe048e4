"""Two-tier knowledge store: chunked document corpus + growing expert FAQ.

Documents are split on blank-line paragraph boundaries, greedily packed into
chunks of at most `chunk_budget` characters with one paragraph of overlap
between consecutive chunks. Search is an exhaustive cosine scan (the corpus
is tens of pages, correctness beats indexing at this scale) returning the
global top-k partitioned into raw-document and expert-FAQ tiers.
"""
from __future__ import annotations

import json
import logging
import threading
from dataclasses import dataclass
from datetime import datetime
from enum import Enum
from pathlib import Path

import numpy as np

from .embeddings import EmbeddingProvider
from .model import IdGenerator

logger = logging.getLogger(__name__)

FAQ_DOC_ID = "expert-faq"


class Tier(str, Enum):
    RAW = "raw"
    EXPERT_FAQ = "expert_faq"


class KnowledgeError(ValueError):
    pass


class DuplicateDocument(KnowledgeError):
    pass


class EmptyDocument(KnowledgeError):
    pass


class TierMismatch(KnowledgeError):
    """ExpertFAQ tier is reserved for the designated FAQ document."""


@dataclass(frozen=True)
class KnowledgeChunk:
    chunk_id: str
    doc_id: str
    text: str
    embedding: np.ndarray
    tier: Tier
    ingested_at: datetime


@dataclass(frozen=True)
class ScoredChunk:
    chunk: KnowledgeChunk
    score: float


@dataclass(frozen=True)
class SearchResult:
    raw_chunks: tuple[ScoredChunk, ...]
    faq_chunks: tuple[ScoredChunk, ...]

    def all_chunks(self) -> tuple[ScoredChunk, ...]:
        merged = list(self.raw_chunks) + list(self.faq_chunks)
        merged.sort(key=lambda s: -s.score)
        return tuple(merged)


def split_paragraphs(text: str) -> list[str]:
    parts = [p.strip() for p in text.split("\n\n")]
    return [p for p in parts if p]


def chunk_text(text: str, budget: int = 500) -> list[str]:
    """Greedy paragraph packing with 1-paragraph overlap between chunks.

    A chunk grows while the blank-line join of its paragraphs stays within
    `budget`. The next chunk re-starts from the previous chunk's final
    paragraph, except when that chunk held a single (oversized) paragraph,
    which would never terminate.
    """
    paragraphs = split_paragraphs(text)
    if not paragraphs:
        return []
    chunks: list[str] = []
    start = 0
    while start < len(paragraphs):
        end = start + 1
        while (
            end < len(paragraphs)
            and len("\n\n".join(paragraphs[start : end + 1])) <= budget
        ):
            end += 1
        chunks.append("\n\n".join(paragraphs[start:end]))
        if end >= len(paragraphs):
            break
        # overlap the last paragraph unless the chunk was a single paragraph
        start = end - 1 if end - start > 1 else end
    return chunks


class KnowledgeStore:
    """Single-writer, multi-reader store over an exhaustive cosine index."""

    def __init__(
        self,
        embedder: EmbeddingProvider,
        ids: IdGenerator,
        clock,
        chunk_budget: int = 500,
        faq_doc_id: str = FAQ_DOC_ID,
    ):
        self._embedder = embedder
        self._ids = ids
        self._clock = clock
        self._chunk_budget = chunk_budget
        self._faq_doc_id = faq_doc_id
        self._chunks: list[KnowledgeChunk] = []
        self._doc_ids: set[str] = set()
        self._lock = threading.RLock()

    @property
    def faq_doc_id(self) -> str:
        return self._faq_doc_id

    def __len__(self) -> int:
        return len(self._chunks)

    def chunk_count(self, tier: Tier | None = None) -> int:
        with self._lock:
            if tier is None:
                return len(self._chunks)
            return sum(1 for c in self._chunks if c.tier is tier)

    def document_ids(self) -> set[str]:
        with self._lock:
            return set(self._doc_ids)

    def ingest_document(self, doc_id: str, text: str, tier: Tier) -> list[str]:
        if not text.strip():
            raise EmptyDocument(f"document {doc_id!r} is empty")
        if (tier is Tier.EXPERT_FAQ) != (doc_id == self._faq_doc_id):
            raise TierMismatch(
                f"tier {tier.value} not allowed for doc_id {doc_id!r}"
            )
        with self._lock:
            if doc_id in self._doc_ids:
                raise DuplicateDocument(doc_id)
            ids = []
            now = self._clock.now()
            for piece in chunk_text(text, self._chunk_budget):
                chunk = KnowledgeChunk(
                    chunk_id=self._ids.new_id(),
                    doc_id=doc_id,
                    text=piece,
                    embedding=self._embedder.embed(piece),
                    tier=tier,
                    ingested_at=now,
                )
                self._chunks.append(chunk)
                ids.append(chunk.chunk_id)
            self._doc_ids.add(doc_id)
            logger.info("ingested %s (%d chunks, tier=%s)", doc_id, len(ids), tier.value)
            return ids

    def append_faq_entries(self, entries: list[tuple[str, str]]) -> int:
        """Append question/answer pairs as individual expert-FAQ chunks."""
        if not entries:
            raise KnowledgeError("entries must be non-empty")
        for question, answer in entries:
            if not question.strip() or not answer.strip():
                raise KnowledgeError("FAQ question and answer must be non-empty")
        with self._lock:
            now = self._clock.now()
            for question, answer in entries:
                text = f"Q: {question}\nA: {answer}"
                self._chunks.append(
                    KnowledgeChunk(
                        chunk_id=self._ids.new_id(),
                        doc_id=self._faq_doc_id,
                        text=text,
                        embedding=self._embedder.embed(text),
                        tier=Tier.EXPERT_FAQ,
                        ingested_at=now,
                    )
                )
            self._doc_ids.add(self._faq_doc_id)
            return len(entries)

    def search(self, query_text: str, k: int = 3) -> SearchResult:
        if k < 1:
            raise KnowledgeError("k must be >= 1")
        with self._lock:
            snapshot = list(self._chunks)
        if not snapshot:
            return SearchResult(raw_chunks=(), faq_chunks=())
        query_vec = self._embedder.embed(query_text)
        # per-chunk dot keeps scores bitwise identical to any single-pair
        # recomputation (batched BLAS products can differ in the last ulp)
        scores = [float(np.dot(c.embedding, query_vec)) for c in snapshot]
        # ties: higher score, then older ingested_at, then chunk_id ascending
        order = sorted(
            range(len(snapshot)),
            key=lambda i: (-scores[i], snapshot[i].ingested_at, snapshot[i].chunk_id),
        )
        top = order[:k]
        raw = tuple(
            ScoredChunk(snapshot[i], float(scores[i]))
            for i in top
            if snapshot[i].tier is Tier.RAW
        )
        faq = tuple(
            ScoredChunk(snapshot[i], float(scores[i]))
            for i in top
            if snapshot[i].tier is Tier.EXPERT_FAQ
        )
        return SearchResult(raw_chunks=raw, faq_chunks=faq)


def load_corpus(store: KnowledgeStore, corpus_dir: Path) -> list[str]:
    """Ingest every .txt document in a corpus directory.

    The directory holds one UTF-8 text file per document (filename without
    extension is the doc_id) and a manifest.json mapping doc_id to tier
    ("raw" or "expert_faq"). Documents missing from the manifest default to
    the raw tier; the expert-FAQ document must be named `expert-faq`.
    """
    corpus_dir = Path(corpus_dir)
    manifest_path = corpus_dir / "manifest.json"
    tiers: dict[str, str] = {}
    if manifest_path.exists():
        tiers = json.loads(manifest_path.read_text(encoding="utf-8"))
    ingested = []
    for path in sorted(corpus_dir.glob("*.txt")):
        doc_id = path.stem
        tier = Tier(tiers.get(doc_id, Tier.RAW.value))
        store.ingest_document(doc_id, path.read_text(encoding="utf-8"), tier)
        ingested.append(doc_id)
    return ingested
