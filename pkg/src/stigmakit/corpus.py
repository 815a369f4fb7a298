"""Clinical-note corpus handling: ingest, sentence segmentation, dedup.

Notes come in as line-delimited JSON records (one note per line) so that
multi-million-note corpora can be streamed. Segmentation is rule-based and
deterministic: sentences end at . ! ? ; followed by whitespace, or at blank
lines, with an abbreviation allowlist suppressing false breaks.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Iterator

NOTE_TYPES = {"progress", "plan-of-care", "admission", "discharge", "other"}

# Tokens that end with a period but do not end a sentence. Compared
# casefolded against the whole whitespace-delimited token.
DEFAULT_ABBREVIATIONS = frozenset(
    {
        "dr.", "mr.", "mrs.", "ms.", "pt.", "pts.", "vs.", "etc.", "e.g.",
        "i.e.", "b.i.d.", "t.i.d.", "q.d.", "q.i.d.", "p.r.n.", "a.m.",
        "p.m.", "st.", "jr.", "sr.", "approx.", "appt.", "hx.", "dx.",
        "rx.", "tx.",
    }
)

_TERMINATORS = ".!?;"
_PARAGRAPH_RE = re.compile(r"\n[ \t\r]*\n")


@dataclass(frozen=True)
class ClinicalNote:
    note_id: str
    patient_id: str
    note_type: str
    date: str
    text: str


@dataclass(frozen=True)
class Sentence:
    sentence_id: str
    note_id: str
    start: int
    end: int
    text: str

    @property
    def norm_text(self) -> str:
        return normalize(self.text)


@dataclass
class IngestError:
    line_no: int
    reason: str

    def to_json(self) -> str:
        return json.dumps({"line": self.line_no, "reason": self.reason})


def normalize(text: str) -> str:
    """Dedup key: casefold, collapse whitespace runs to one space, trim."""
    return " ".join(text.casefold().split())


def _open_source(source: str | Path | IO[str]) -> IO[str]:
    if isinstance(source, (str, Path)):
        return open(source, "r", encoding="utf-8")
    return source


def ingest_corpus(
    source: str | Path | IO[str],
    errors: list[IngestError] | None = None,
) -> Iterator[ClinicalNote]:
    """Stream notes from a line-delimited JSON file in file order.

    Malformed records (bad JSON, missing note_id/text, empty text,
    duplicate note_id) are appended to ``errors`` with their 1-based line
    number and skipped; they are never silently dropped.
    """
    fh = _open_source(source)
    close = isinstance(source, (str, Path))
    seen_ids: set[str] = set()
    try:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                _record_error(errors, line_no, f"invalid JSON: {exc.msg}")
                continue
            if not isinstance(record, dict):
                _record_error(errors, line_no, "record is not an object")
                continue
            note_id = record.get("note_id")
            text = record.get("text")
            if not note_id or not isinstance(note_id, str):
                _record_error(errors, line_no, "missing note_id")
                continue
            if not isinstance(text, str) or not text.strip():
                _record_error(errors, line_no, "missing or empty text")
                continue
            if note_id in seen_ids:
                _record_error(errors, line_no, f"duplicate note_id {note_id!r}")
                continue
            seen_ids.add(note_id)
            note_type = record.get("note_type", "other")
            if note_type not in NOTE_TYPES:
                note_type = "other"
            yield ClinicalNote(
                note_id=note_id,
                patient_id=str(record.get("patient_id", "")),
                note_type=note_type,
                date=str(record.get("date", "")),
                text=text,
            )
    finally:
        if close:
            fh.close()


def _record_error(errors: list[IngestError] | None, line_no: int, reason: str) -> None:
    if errors is not None:
        errors.append(IngestError(line_no, reason))


def _is_break(text: str, i: int, abbreviations: frozenset[str]) -> bool:
    """Sentence break after text[i]? Terminator must be followed by
    whitespace or end of text; periods also respect the abbreviation list
    and never break between digits (lab values like 3.5)."""
    ch = text[i]
    if ch not in _TERMINATORS:
        return False
    if i + 1 < len(text) and not text[i + 1].isspace():
        return False
    if ch != ".":
        return True
    if 0 < i < len(text) - 1 and text[i - 1].isdigit() and text[i + 1].isdigit():
        return False
    # token = whitespace-delimited run ending at this period
    j = i
    while j > 0 and not text[j - 1].isspace():
        j -= 1
    token = text[j : i + 1].casefold()
    return token not in abbreviations


def segment(
    note: ClinicalNote,
    abbreviations: frozenset[str] = DEFAULT_ABBREVIATIONS,
) -> list[Sentence]:
    """Split a note into ordered, non-overlapping sentence spans.

    Spans are trimmed of surrounding whitespace, so every non-whitespace
    character of the note lands in exactly one sentence and the gaps
    between spans are pure whitespace.
    """
    text = note.text
    boundaries: list[tuple[int, int]] = []

    para_edges = [0]
    for m in _PARAGRAPH_RE.finditer(text):
        para_edges.extend((m.start(), m.end()))
    para_edges.append(len(text))

    for p_start, p_end in zip(para_edges[::2], para_edges[1::2]):
        seg_start = p_start
        for i in range(p_start, p_end):
            if _is_break(text, i, abbreviations):
                boundaries.append((seg_start, i + 1))
                seg_start = i + 1
        if seg_start < p_end:
            boundaries.append((seg_start, p_end))

    sentences: list[Sentence] = []
    for raw_start, raw_end in boundaries:
        chunk = text[raw_start:raw_end]
        stripped = chunk.strip()
        if not stripped:
            continue
        start = raw_start + (len(chunk) - len(chunk.lstrip()))
        end = start + len(stripped)
        sentences.append(
            Sentence(
                sentence_id=f"{note.note_id}:{len(sentences)}",
                note_id=note.note_id,
                start=start,
                end=end,
                text=text[start:end],
            )
        )
    return sentences


@dataclass
class DedupStats:
    kept: int = 0
    dropped: int = 0
    _seen: set[str] = field(default_factory=set, repr=False)


def dedup(
    sentences: Iterable[Sentence],
    stats: DedupStats | None = None,
) -> Iterator[Sentence]:
    """Keep the first occurrence of each normalized sentence, corpus-global.

    First occurrence in input order wins; later sentences whose norm_text
    is already seen are dropped and counted in ``stats``.
    """
    if stats is None:
        stats = DedupStats()
    for sentence in sentences:
        key = sentence.norm_text
        if key in stats._seen:
            stats.dropped += 1
            continue
        stats._seen.add(key)
        stats.kept += 1
        yield sentence


def sentence_to_json(sentence: Sentence) -> str:
    return json.dumps(
        {
            "sentence_id": sentence.sentence_id,
            "note_id": sentence.note_id,
            "start": sentence.start,
            "end": sentence.end,
            "text": sentence.text,
        },
        ensure_ascii=False,
    )


def sentence_from_json(line: str) -> Sentence:
    record = json.loads(line)
    return Sentence(
        sentence_id=record["sentence_id"],
        note_id=record["note_id"],
        start=int(record["start"]),
        end=int(record["end"]),
        text=record["text"],
    )


def load_sentences(path: str | Path) -> list[Sentence]:
    with open(path, "r", encoding="utf-8") as fh:
        return [sentence_from_json(line) for line in fh if line.strip()]


def write_sentences(path: str | Path, sentences: Iterable[Sentence]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for sentence in sentences:
            fh.write(sentence_to_json(sentence) + "\n")
            n += 1
    return n
