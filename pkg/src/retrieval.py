"""Context retrieval engine: project documentation ingestion and top-k lookup.

Documents are embedded with a deterministic hashed bag-of-words embedder and
searched with an exact full-scan cosine similarity. Remote embedding providers
can be plugged in through the ``Embedder`` protocol.

The index follows a single-writer, multi-reader contract: ingestion takes the
lock, retrieval works on a snapshot taken under it.
"""

from __future__ import annotations

import hashlib
import heapq
import logging
import math
import re
import threading
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional, Protocol

logger = logging.getLogger(__name__)

DEFAULT_DIMENSION = 256
DEFAULT_TOP_K = 4
DOC_EXTENSIONS = {".md", ".txt"}

_TOKEN_RE = re.compile(r"[^\W_]+")


class DuplicateDocumentError(Exception):
    """A single ingestion batch repeats one or more doc_ids."""

    def __init__(self, duplicates: list[str]):
        super().__init__(f"duplicate doc_id(s) in batch: {', '.join(duplicates)}")
        self.duplicates = duplicates


class DocKind(str, Enum):
    CODE_COMMENT = "code_comment"
    DESIGN_DOC = "design_doc"
    SECURITY_GUIDELINE = "security_guideline"
    HISTORICAL_CODE = "historical_code"


@dataclass(frozen=True)
class ContextDoc:
    doc_id: str
    source_path: str
    kind: DocKind
    text: str

    def __post_init__(self):
        if not self.text:
            raise ValueError(f"document {self.doc_id!r} has no text")


@dataclass(frozen=True)
class EmbeddingVector:
    values: tuple[float, ...]

    @property
    def dimension(self) -> int:
        return len(self.values)

    @property
    def norm(self) -> float:
        return math.sqrt(sum(v * v for v in self.values))


@dataclass(frozen=True)
class RetrievalHit:
    doc_id: str
    score: float
    text: str


class Embedder(Protocol):
    dimension: int

    def __call__(self, text: str) -> EmbeddingVector:
        ...


def tokenize(text: str) -> list[str]:
    """Lowercase and split on non-alphanumerics."""
    return _TOKEN_RE.findall(text.lower())


def _bucket(token: str, dimension: int) -> int:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big") % dimension


def embed(text: str, dimension: int = DEFAULT_DIMENSION) -> EmbeddingVector:
    """Hashed bag-of-words embedding, L2-normalized.

    Empty text (or text with no alphanumeric tokens) maps to the zero vector.
    """
    counts = [0.0] * dimension
    for token in tokenize(text):
        counts[_bucket(token, dimension)] += 1.0
    norm = math.sqrt(sum(c * c for c in counts))
    if norm == 0:
        return EmbeddingVector(tuple(counts))
    return EmbeddingVector(tuple(c / norm for c in counts))


class HashedBagOfWordsEmbedder:
    """Default embedder; deterministic across processes."""

    def __init__(self, dimension: int = DEFAULT_DIMENSION):
        if dimension <= 0:
            raise ValueError("embedding dimension must be positive")
        self.dimension = dimension

    def __call__(self, text: str) -> EmbeddingVector:
        return embed(text, self.dimension)


def cosine(a: EmbeddingVector, b: EmbeddingVector) -> float:
    """Cosine similarity; 0.0 when either vector is zero."""
    if a.dimension != b.dimension:
        raise ValueError(f"dimension mismatch: {a.dimension} != {b.dimension}")
    norm_a, norm_b = a.norm, b.norm
    if norm_a == 0 or norm_b == 0:
        return 0.0
    dot = sum(x * y for x, y in zip(a.values, b.values))
    return max(-1.0, min(1.0, dot / (norm_a * norm_b)))


class ContextIndex:
    """In-memory vector index keyed by doc_id."""

    def __init__(self, embedder: Optional[Embedder] = None):
        self.embedder = embedder or HashedBagOfWordsEmbedder()
        self._entries: dict[str, tuple[ContextDoc, EmbeddingVector]] = {}
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, doc_id: str) -> bool:
        return doc_id in self._entries

    def vector(self, doc_id: str) -> EmbeddingVector:
        return self._entries[doc_id][1]

    def documents(self) -> list[ContextDoc]:
        with self._lock:
            return [doc for doc, _ in self._entries.values()]

    def add(self, docs: list[ContextDoc]) -> None:
        """Embed and store docs, replacing existing doc_ids."""
        counts = Counter(doc.doc_id for doc in docs)
        duplicates = sorted(doc_id for doc_id, count in counts.items() if count > 1)
        if duplicates:
            raise DuplicateDocumentError(duplicates)
        embedded = [(doc, self.embedder(doc.text)) for doc in docs]
        with self._lock:
            for doc, vector in embedded:
                self._entries[doc.doc_id] = (doc, vector)

    def snapshot(self) -> list[tuple[ContextDoc, EmbeddingVector]]:
        with self._lock:
            return list(self._entries.values())


def ingest(docs: list[ContextDoc], index: Optional[ContextIndex] = None) -> ContextIndex:
    """Ingest documents into ``index`` (a new one when omitted).

    Raises:
        DuplicateDocumentError: If ``docs`` repeats a doc_id.
    """
    index = index if index is not None else ContextIndex()
    index.add(docs)
    logger.debug("Index holds %d document(s)", len(index))
    return index


def retrieve(index: ContextIndex, query: str, k: int = DEFAULT_TOP_K) -> list[RetrievalHit]:
    """Top-k documents by cosine similarity to ``query``.

    Hits are ordered by descending score, ties by ascending doc_id.
    """
    if k <= 0:
        return []
    entries = index.snapshot()
    if not entries:
        return []
    query_vector = index.embedder(query)
    scored = [(cosine(query_vector, vector), doc) for doc, vector in entries]
    best = heapq.nsmallest(k, scored, key=lambda item: (-item[0], item[1].doc_id))
    return [RetrievalHit(doc.doc_id, score, doc.text) for score, doc in best]


def kind_for_path(path: Path) -> DocKind:
    return DocKind.DESIGN_DOC if path.suffix.lower() in DOC_EXTENSIONS else DocKind.HISTORICAL_CODE


def collect_documents(
    directory: Path, kind: Optional[DocKind] = None
) -> tuple[list[ContextDoc], list[tuple[str, str]]]:
    """Walk a directory tree and build one ContextDoc per readable file.

    Hidden files and directories are skipped. ``.md``/``.txt`` files become
    design docs, everything else historical code, unless ``kind`` overrides.

    Args:
        directory: Root to walk.
        kind: Optional kind applied to every document.

    Returns:
        tuple: (documents, skipped) where skipped lists ``(relative path, reason)``.
    """
    docs: list[ContextDoc] = []
    skipped: list[tuple[str, str]] = []
    for path in sorted(directory.rglob("*")):
        relative = path.relative_to(directory)
        if any(part.startswith(".") for part in relative.parts) or not path.is_file():
            continue
        rel = relative.as_posix()
        try:
            text = path.read_text(encoding="utf-8")
        except (OSError, UnicodeDecodeError) as exc:
            logger.warning("Skipping unreadable file %s: %s", rel, exc)
            skipped.append((rel, str(exc)))
            continue
        if not text.strip():
            skipped.append((rel, "empty file"))
            continue
        docs.append(ContextDoc(rel, rel, kind or kind_for_path(path), text))
    return docs, skipped


def build_index(docs: Iterable[ContextDoc], dimension: int = DEFAULT_DIMENSION) -> ContextIndex:
    return ingest(list(docs), ContextIndex(HashedBagOfWordsEmbedder(dimension)))
