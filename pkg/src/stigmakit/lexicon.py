"""Stigma keyword list with provenance, review state, and synonym expansion.

The lexicon is an append-only event log: every mutation (proposal, review
decision, snowball-closed flag) appends one record stamped with a new
version number. Scanner builds pin a version so the candidate extraction
stays reproducible after the lexicon grows.

Synonym candidates come from nearest-neighbor search over a word-embedding
table by cosine similarity.
"""

from __future__ import annotations

import json
import logging
import math
import random
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .corpus import Sentence

logger = logging.getLogger(__name__)

SOURCES = ("seed", "snowball", "embedding")
STATUSES = ("proposed", "approved", "rejected")


class LexiconError(Exception):
    pass


@dataclass
class Keyword:
    term: str
    source: str
    status: str
    proposed_from: str | None = None
    version: int = 0


@dataclass
class LexiconEvent:
    version: int
    kind: str  # "term" or "snowball_closed"
    term: str = ""
    source: str = ""
    status: str = ""
    proposed_from: str | None = None
    reviewer: str | None = None
    timestamp: float = 0.0


class Lexicon:
    """Current keyword state plus the event log it was built from."""

    def __init__(self) -> None:
        self.entries: dict[str, Keyword] = {}
        self.events: list[LexiconEvent] = []
        self.version = 0
        self.snowball_closed = False

    # -- mutations ---------------------------------------------------------

    def _append(self, event: LexiconEvent) -> None:
        self.events.append(event)
        self.version = event.version

    def add(
        self,
        term: str,
        source: str,
        status: str = "proposed",
        proposed_from: str | None = None,
    ) -> Keyword:
        term = " ".join(term.casefold().split())
        if not term:
            raise LexiconError("empty term")
        if source not in SOURCES:
            raise LexiconError(f"unknown source {source!r}")
        if status not in STATUSES:
            raise LexiconError(f"unknown status {status!r}")
        existing = self.entries.get(term)
        if existing is not None:
            return existing
        keyword = Keyword(term, source, status, proposed_from, self.version + 1)
        self.entries[term] = keyword
        self._append(
            LexiconEvent(
                version=keyword.version,
                kind="term",
                term=term,
                source=source,
                status=status,
                proposed_from=proposed_from,
                timestamp=time.time(),
            )
        )
        return keyword

    def review(self, term: str, decision: str, reviewer: str, override: bool = False) -> Keyword:
        """Move a proposed term to approved/rejected.

        Finalized terms can only be re-reviewed with override=True; the
        override is logged like any other transition.
        """
        term = term.casefold()
        if decision not in ("approve", "reject"):
            raise LexiconError(f"decision must be approve or reject, got {decision!r}")
        keyword = self.entries.get(term)
        if keyword is None:
            raise LexiconError(f"term {term!r} is not in the lexicon")
        if keyword.status != "proposed" and not override:
            raise LexiconError(
                f"term {term!r} already {keyword.status}; pass override to re-review"
            )
        keyword.status = "approved" if decision == "approve" else "rejected"
        keyword.version = self.version + 1
        self._append(
            LexiconEvent(
                version=keyword.version,
                kind="term",
                term=term,
                source=keyword.source,
                status=keyword.status,
                proposed_from=keyword.proposed_from,
                reviewer=reviewer,
                timestamp=time.time(),
            )
        )
        return keyword

    def close_snowball(self) -> None:
        """Record the human judgment that no new keywords are left to find."""
        self.snowball_closed = True
        self._append(
            LexiconEvent(version=self.version + 1, kind="snowball_closed", timestamp=time.time())
        )

    # -- queries -----------------------------------------------------------

    def approved_terms(self, version: int | None = None) -> list[str]:
        """Approved terms, optionally reconstructed at a pinned version."""
        if version is None or version >= self.version:
            return sorted(t for t, k in self.entries.items() if k.status == "approved")
        state: dict[str, str] = {}
        for event in self.events:
            if event.version > version:
                break
            if event.kind == "term":
                state[event.term] = event.status
        return sorted(t for t, s in state.items() if s == "approved")

    def status_of(self, term: str) -> str | None:
        keyword = self.entries.get(term.casefold())
        return keyword.status if keyword else None

    # -- persistence (line-delimited event records) -------------------------

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for event in self.events:
                fh.write(
                    json.dumps(
                        {
                            "version": event.version,
                            "kind": event.kind,
                            "term": event.term,
                            "source": event.source,
                            "status": event.status,
                            "proposed_from": event.proposed_from,
                            "reviewer": event.reviewer,
                            "timestamp": event.timestamp,
                        },
                        ensure_ascii=False,
                    )
                    + "\n"
                )

    @classmethod
    def load(cls, path: str | Path) -> "Lexicon":
        lexicon = cls()
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                record = json.loads(line)
                event = LexiconEvent(
                    version=int(record["version"]),
                    kind=record["kind"],
                    term=record.get("term", ""),
                    source=record.get("source", ""),
                    status=record.get("status", ""),
                    proposed_from=record.get("proposed_from"),
                    reviewer=record.get("reviewer"),
                    timestamp=float(record.get("timestamp", 0.0)),
                )
                lexicon.events.append(event)
                lexicon.version = event.version
                if event.kind == "snowball_closed":
                    lexicon.snowball_closed = True
                elif event.kind == "term":
                    lexicon.entries[event.term] = Keyword(
                        term=event.term,
                        source=event.source,
                        status=event.status,
                        proposed_from=event.proposed_from,
                        version=event.version,
                    )
        return lexicon


# -- embeddings --------------------------------------------------------------


class EmbeddingTable:
    """Exact-lookup term -> vector table, all vectors the same dimension."""

    def __init__(self, dimension: int) -> None:
        if dimension <= 0:
            raise LexiconError(f"dimension must be positive, got {dimension}")
        self.dimension = dimension
        self._terms: list[str] = []
        self._index: dict[str, int] = {}
        self._rows: list[np.ndarray] = []
        self._matrix: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self._terms)

    def __contains__(self, term: str) -> bool:
        return term.casefold() in self._index

    def add(self, term: str, vector: np.ndarray) -> None:
        term = term.casefold()
        if vector.shape != (self.dimension,):
            raise LexiconError(
                f"vector for {term!r} has dimension {vector.shape}, expected {self.dimension}"
            )
        if np.isnan(vector).any():
            raise LexiconError(f"vector for {term!r} contains NaN")
        self._matrix = None
        if term in self._index:
            self._rows[self._index[term]] = vector
            return
        self._index[term] = len(self._terms)
        self._terms.append(term)
        self._rows.append(vector)

    def vector(self, term: str) -> np.ndarray:
        idx = self._index.get(term.casefold())
        if idx is None:
            raise LexiconError(f"term {term!r} not found in embedding table")
        return self._rows[idx]

    def terms(self) -> list[str]:
        return list(self._terms)

    def matrix(self) -> np.ndarray:
        if self._matrix is None:
            self._matrix = np.stack(self._rows) if self._rows else np.zeros((0, self.dimension))
        return self._matrix


def load_embeddings(source: str | Path) -> EmbeddingTable:
    """Parse a text vector file: header "count dim", then "term v1 .. vd".

    Lines whose component count does not match the header dimension are
    rejected with a warning; duplicate terms keep the last vector seen.
    A file with no usable entries is a fatal error.
    """
    path = Path(source)
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise LexiconError(f"{path}: expected header 'count dim', got {header!r}")
        try:
            _count, dim = int(header[0]), int(header[1])
        except ValueError:
            raise LexiconError(f"{path}: non-integer header fields {header!r}") from None
        table = EmbeddingTable(dim)
        for line_no, line in enumerate(fh, start=2):
            parts = line.rstrip("\n").split()
            if not parts:
                continue
            term, comps = parts[0], parts[1:]
            if len(comps) != dim:
                logger.warning(
                    "%s line %d: %d components for term %r, expected %d; line rejected",
                    path, line_no, len(comps), term, dim,
                )
                continue
            try:
                vector = np.array([float(c) for c in comps], dtype=np.float64)
            except ValueError:
                logger.warning("%s line %d: non-numeric component; line rejected", path, line_no)
                continue
            if np.isnan(vector).any():
                logger.warning("%s line %d: NaN component; line rejected", path, line_no)
                continue
            folded = term.casefold()
            if folded in table:
                logger.warning("%s line %d: duplicate term %r; last wins", path, line_no, term)
            table.add(folded, vector)
    if len(table) == 0:
        raise LexiconError(f"{path}: no usable embedding entries")
    return table


def cosine_similarity(u: Sequence[float] | np.ndarray, v: Sequence[float] | np.ndarray) -> float:
    """dot(u, v) / (|u| |v|), clipped into [-1, 1]."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise LexiconError(f"dimension mismatch: {u.shape} vs {v.shape}")
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        raise LexiconError("cosine similarity is undefined for a zero vector")
    value = float(np.dot(u, v)) / (nu * nv)
    return max(-1.0, min(1.0, value))


def propose_synonyms(
    term: str,
    table: EmbeddingTable,
    lexicon: Lexicon,
    k: int = 20,
    min_sim: float = 0.6,
) -> list[tuple[str, float]]:
    """Top-k nearest terms by cosine similarity, entered as proposals.

    The query term itself and terms the lexicon has already approved or
    rejected are excluded; ties break by lexicographic term order. Every
    returned candidate is added to the lexicon as (proposed, embedding).
    """
    if k < 1:
        raise LexiconError(f"k must be >= 1, got {k}")
    if not -1.0 <= min_sim <= 1.0:
        raise LexiconError(f"min_sim must be in [-1, 1], got {min_sim}")
    term = term.casefold()
    query = table.vector(term)
    qnorm = float(np.linalg.norm(query))
    if qnorm == 0.0:
        raise LexiconError(f"term {term!r} has a zero embedding vector")

    matrix = table.matrix()
    norms = np.linalg.norm(matrix, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        sims = (matrix @ query) / (norms * qnorm)
    sims = np.clip(np.nan_to_num(sims, nan=-math.inf, neginf=-math.inf), -1.0, 1.0)

    finalized = {t for t, kw in lexicon.entries.items() if kw.status in ("approved", "rejected")}
    candidates = [
        (other, float(sims[i]))
        for i, other in enumerate(table.terms())
        if other != term and other not in finalized and sims[i] >= min_sim
    ]
    candidates.sort(key=lambda pair: (-pair[1], pair[0]))
    top = candidates[:k]
    for candidate, _sim in top:
        lexicon.add(candidate, source="embedding", status="proposed", proposed_from=term)
    return top


# -- snowball review ----------------------------------------------------------


@dataclass
class ReviewBundle:
    note_id: str
    sentences: list[Sentence] = field(default_factory=list)


def snowball_batch(
    sentences: Iterable[Sentence],
    batch_size: int,
    rng_seed: int,
) -> list[ReviewBundle]:
    """Uniformly sample whole notes (without replacement) for keyword harvest.

    Returns one bundle per sampled note carrying all of its sentences.
    Human reviewers harvest new terms from the bundles and record them via
    ``harvest_terms``; the loop ends when a reviewer calls
    ``Lexicon.close_snowball``.
    """
    if batch_size < 1:
        raise LexiconError(f"batch_size must be >= 1, got {batch_size}")
    by_note: dict[str, list[Sentence]] = {}
    for sentence in sentences:
        by_note.setdefault(sentence.note_id, []).append(sentence)
    note_ids = sorted(by_note)
    if batch_size > len(note_ids):
        logger.warning(
            "batch_size %d exceeds %d available notes; returning all",
            batch_size, len(note_ids),
        )
        batch_size = len(note_ids)
    rng = random.Random(rng_seed)
    picked = rng.sample(note_ids, batch_size)
    return [ReviewBundle(note_id=nid, sentences=list(by_note[nid])) for nid in picked]


def harvest_terms(lexicon: Lexicon, terms: Iterable[str]) -> list[Keyword]:
    """Record keywords a human found during snowball review as proposals."""
    if lexicon.snowball_closed:
        raise LexiconError("snowball phase is closed for this lexicon")
    return [lexicon.add(t, source="snowball", status="proposed") for t in terms]
