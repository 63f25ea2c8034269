"""Knowledge base: 500-character chunking, embeddings, exact cosine top-k.

Corpus sizes stay small enough that a full scan is both exact and fast, so
no approximate index is used. The index persists as JSON Lines with a
versioned header and reloads without re-embedding.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import DEFAULT_KB_CHUNK_CHARS, DEFAULT_RETRIEVE_K
from .errors import ConfigError
from .llm import LLMGateway

logger = logging.getLogger(__name__)

INDEX_FORMAT_VERSION = 1


@dataclass
class KnowledgeChunk:
    chunk_id: str
    source_doc: str
    span: tuple[int, int]
    text: str
    vector: np.ndarray


class VectorIndex:
    def __init__(self, dimension: int):
        self.dimension = dimension
        self.chunks: list[KnowledgeChunk] = []
        self._ids: set[str] = set()

    def add(self, chunk: KnowledgeChunk) -> None:
        if chunk.vector.shape[0] != self.dimension:
            raise ValueError(
                f"chunk {chunk.chunk_id} has dimension {chunk.vector.shape[0]}, index wants {self.dimension}"
            )
        if chunk.chunk_id in self._ids:
            raise ValueError(f"duplicate chunk id {chunk.chunk_id}")
        self._ids.add(chunk.chunk_id)
        self.chunks.append(chunk)

    def __len__(self) -> int:
        return len(self.chunks)


def split_doc(text: str, chunk_chars: int = DEFAULT_KB_CHUNK_CHARS) -> list[tuple[int, int]]:
    """Consecutive no-overlap spans; the final one may be shorter."""
    return [(start, min(start + chunk_chars, len(text))) for start in range(0, len(text), chunk_chars)]


def ingest_corpus(
    docs: list[tuple[str, str]],
    gateway: LLMGateway,
    chunk_chars: int = DEFAULT_KB_CHUNK_CHARS,
) -> VectorIndex:
    if not docs:
        raise ConfigError("cannot ingest an empty document list")
    index: VectorIndex | None = None
    for doc_id, text in docs:
        for start, end in split_doc(text, chunk_chars):
            chunk_text = text[start:end]
            vector = gateway.embed(chunk_text)
            if index is None:
                index = VectorIndex(dimension=int(vector.shape[0]))
            index.add(
                KnowledgeChunk(
                    chunk_id=f"{doc_id}:{start:08d}",
                    source_doc=doc_id,
                    span=(start, end),
                    text=chunk_text,
                    vector=vector,
                )
            )
    if index is None:
        raise ConfigError("corpus contained only empty documents")
    return index


def load_corpus_dir(path: str | Path) -> list[tuple[str, str]]:
    """Read every .txt/.md file under a directory, sorted by relative path."""
    base = Path(path)
    if not base.is_dir():
        raise ConfigError(f"knowledge-base directory {base} does not exist")
    docs = []
    for file in sorted(base.rglob("*")):
        if file.suffix.lower() in (".txt", ".md") and file.is_file():
            docs.append((str(file.relative_to(base)), file.read_text(encoding="utf-8")))
    if not docs:
        raise ConfigError(f"no .txt/.md documents found under {base}")
    return docs


def retrieve(
    index: VectorIndex, query: str, gateway: LLMGateway, k: int = DEFAULT_RETRIEVE_K
) -> list[KnowledgeChunk]:
    """Top-k chunks by descending cosine similarity, ties by ascending chunk id."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not index.chunks:
        return []
    query_vec = gateway.embed(query)
    sims = [float(np.dot(query_vec, chunk.vector)) for chunk in index.chunks]
    order = sorted(range(len(index.chunks)), key=lambda i: (-sims[i], index.chunks[i].chunk_id))
    return [index.chunks[i] for i in order[: min(k, len(index.chunks))]]


def save_index(index: VectorIndex, path: str | Path) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    try:
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write(
                json.dumps({"format": "kb-index", "version": INDEX_FORMAT_VERSION, "dimension": index.dimension})
                + "\n"
            )
            for chunk in index.chunks:
                fh.write(
                    json.dumps(
                        {
                            "chunk_id": chunk.chunk_id,
                            "source_doc": chunk.source_doc,
                            "span": list(chunk.span),
                            "text": chunk.text,
                            "vector": chunk.vector.tolist(),
                        }
                    )
                    + "\n"
                )
        tmp.replace(path)
    except OSError:
        tmp.unlink(missing_ok=True)
        raise


def load_index(path: str | Path) -> VectorIndex:
    with open(path, encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        if header.get("format") != "kb-index" or header.get("version") != INDEX_FORMAT_VERSION:
            raise ConfigError(f"{path}: not a version-{INDEX_FORMAT_VERSION} kb-index file")
        index = VectorIndex(dimension=int(header["dimension"]))
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            index.add(
                KnowledgeChunk(
                    chunk_id=rec["chunk_id"],
                    source_doc=rec["source_doc"],
                    span=tuple(rec["span"]),
                    text=rec["text"],
                    vector=np.asarray(rec["vector"], dtype=np.float64),
                )
            )
    return index


def build_index(
    kb_dir: str | Path,
    gateway: LLMGateway,
    cache_path: str | Path | None = None,
    chunk_chars: int = DEFAULT_KB_CHUNK_CHARS,
) -> VectorIndex:
    """Load the cached index when present, else ingest the corpus and cache it."""
    if cache_path and Path(cache_path).exists():
        try:
            return load_index(cache_path)
        except (ConfigError, json.JSONDecodeError, KeyError) as exc:
            logger.warning("ignoring unreadable index cache %s: %s", cache_path, exc)
    index = ingest_corpus(load_corpus_dir(kb_dir), gateway, chunk_chars)
    if cache_path:
        save_index(index, cache_path)
    return index
