"""One-pass multi-keyword scanning and stratified candidate sampling.

The matcher is an Aho-Corasick automaton compiled over all approved
lexicon terms, so scanning cost per sentence does not grow with lexicon
size. Matching is case-insensitive with word-boundary semantics: a hit may
not be immediately preceded or followed by a letter or digit. Overlapping
terms ("shame" inside "ashamed") are resolved by the boundary rule alone;
if two terms independently satisfy it, both are reported.
"""

from __future__ import annotations

import json
import random
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

from .corpus import Sentence
from .lexicon import Lexicon

Match = tuple[str, int, int]  # (term, start, end) within the sentence

SIGNATURE_SEP = "|"


class ScannerError(Exception):
    pass


def fold(text: str) -> str:
    """Length-preserving lowercase used for matching, so match offsets in
    the folded text are valid offsets in the original."""
    return "".join(c if len(c.lower()) != 1 else c.lower() for c in text)


def _is_word_char(ch: str) -> bool:
    return ch.isalpha() or ch.isdigit()


class KeywordMatcher:
    """Compiled automaton over a pinned lexicon version. Immutable after
    construction and shareable across scan workers."""

    def __init__(self, terms: Sequence[str], lexicon_version: int) -> None:
        if not terms:
            raise ScannerError("cannot build a matcher from an empty approved lexicon")
        self.terms = sorted({fold(t) for t in terms})
        self.lexicon_version = lexicon_version
        self._build()

    def _build(self) -> None:
        # flat-array trie: goto maps char -> node index
        self._goto: list[dict[str, int]] = [{}]
        self._out: list[list[int]] = [[]]
        self._fail: list[int] = [0]

        for idx, term in enumerate(self.terms):
            node = 0
            for ch in term:
                nxt = self._goto[node].get(ch)
                if nxt is None:
                    nxt = len(self._goto)
                    self._goto[node][ch] = nxt
                    self._goto.append({})
                    self._out.append([])
                    self._fail.append(0)
                node = nxt
            self._out[node].append(idx)

        queue: deque[int] = deque()
        for child in self._goto[0].values():
            self._fail[child] = 0
            queue.append(child)
        while queue:
            node = queue.popleft()
            for ch, child in self._goto[node].items():
                queue.append(child)
                f = self._fail[node]
                while f and ch not in self._goto[f]:
                    f = self._fail[f]
                self._fail[child] = self._goto[f].get(ch, 0)
                self._out[child].extend(self._out[self._fail[child]])

    def find_matches(self, text: str) -> list[Match]:
        """All boundary-valid term occurrences, sorted by (start, end, term)."""
        folded = fold(text)
        matches: list[Match] = []
        node = 0
        for i, ch in enumerate(folded):
            while node and ch not in self._goto[node]:
                node = self._fail[node]
            node = self._goto[node].get(ch, 0)
            for term_idx in self._out[node]:
                term = self.terms[term_idx]
                start = i - len(term) + 1
                end = i + 1
                if start > 0 and _is_word_char(text[start - 1]):
                    continue
                if end < len(text) and _is_word_char(text[end]):
                    continue
                matches.append((term, start, end))
        matches.sort()
        return matches


def build_matcher(lexicon: Lexicon, version: int | None = None) -> KeywordMatcher:
    terms = lexicon.approved_terms(version)
    pinned = version if version is not None else lexicon.version
    return KeywordMatcher(terms, lexicon_version=pinned)


@dataclass(frozen=True)
class CandidateSentence:
    sentence: Sentence
    matched_terms: tuple[str, ...]  # sorted, distinct
    match_spans: tuple[Match, ...]
    lexicon_version: int

    @property
    def signature(self) -> str:
        """Stratum key: canonical join of the sorted matched-term set."""
        return SIGNATURE_SEP.join(self.matched_terms)


@dataclass
class ScanStats:
    sentences_scanned: int = 0
    candidates: int = 0
    _notes: set[str] = field(default_factory=set, repr=False)

    @property
    def unique_notes(self) -> int:
        return len(self._notes)


def scan(
    sentences: Iterable[Sentence],
    matcher: KeywordMatcher,
    stats: ScanStats | None = None,
) -> Iterator[CandidateSentence]:
    """Emit exactly the sentences with at least one boundary-valid match."""
    if stats is None:
        stats = ScanStats()
    for sentence in sentences:
        stats.sentences_scanned += 1
        spans = matcher.find_matches(sentence.text)
        if not spans:
            continue
        stats.candidates += 1
        stats._notes.add(sentence.note_id)
        terms = tuple(sorted({term for term, _s, _e in spans}))
        yield CandidateSentence(
            sentence=sentence,
            matched_terms=terms,
            match_spans=tuple(spans),
            lexicon_version=matcher.lexicon_version,
        )


# -- stratified sampling ------------------------------------------------------


@dataclass(frozen=True)
class SampledCandidate:
    candidate: CandidateSentence
    stratum_signature: str


@dataclass
class SampleResult:
    items: list[SampledCandidate]
    seed: int
    target_total: int
    min_stratum_take: int
    warnings: list[str] = field(default_factory=list)


def _largest_remainder(sizes: dict[str, int], budget: int) -> dict[str, int]:
    """Proportional integer allocation that sums exactly to budget."""
    total = sum(sizes.values())
    quotas = {sig: budget * size / total for sig, size in sizes.items()}
    alloc = {sig: int(quotas[sig]) for sig in sizes}
    leftover = budget - sum(alloc.values())
    order = sorted(
        sizes,
        key=lambda sig: (-(quotas[sig] - alloc[sig]), -sizes[sig], sig),
    )
    for sig in order[:leftover]:
        alloc[sig] += 1
    return alloc


def stratified_sample(
    candidates: Iterable[CandidateSentence],
    target_total: int,
    min_stratum_take: int = 10,
    rng_seed: int = 0,
) -> SampleResult:
    """Sample candidates for annotation, stratified by matched-keyword set.

    Strata with fewer than min_stratum_take members are included in full;
    the remaining budget is split across the other strata proportionally to
    their size (largest-remainder rounding) and sampled without replacement
    under the seed. Asking for less than the forced full-inclusion total
    returns the forced set with a warning instead of failing.
    """
    if target_total < 1:
        raise ScannerError(f"target_total must be >= 1, got {target_total}")

    strata: dict[str, list[CandidateSentence]] = {}
    for candidate in candidates:
        strata.setdefault(candidate.signature, []).append(candidate)
    for members in strata.values():
        members.sort(key=lambda c: c.sentence.sentence_id)

    result = SampleResult(
        items=[], seed=rng_seed, target_total=target_total, min_stratum_take=min_stratum_take
    )
    forced = {sig: members for sig, members in strata.items() if len(members) < min_stratum_take}
    large = {sig: members for sig, members in strata.items() if sig not in forced}

    taken: list[SampledCandidate] = []
    for sig in sorted(forced):
        taken.extend(SampledCandidate(c, sig) for c in forced[sig])

    budget = target_total - len(taken)
    if budget < 0:
        result.warnings.append(
            f"target_total {target_total} is below the {len(taken)} candidates forced in "
            f"by min_stratum_take={min_stratum_take}; budget exceeded"
        )
        budget = 0

    rng = random.Random(rng_seed)
    if large and budget > 0:
        total_large = sum(len(m) for m in large.values())
        if budget >= total_large:
            alloc = {sig: len(members) for sig, members in large.items()}
        else:
            alloc = _largest_remainder({sig: len(m) for sig, m in large.items()}, budget)
        for sig in sorted(large):
            take = alloc[sig]
            if take <= 0:
                continue
            picked = rng.sample(large[sig], take) if take < len(large[sig]) else list(large[sig])
            taken.extend(SampledCandidate(c, sig) for c in picked)

    taken.sort(key=lambda s: s.candidate.sentence.sentence_id)
    result.items = taken
    return result


# -- line-delimited persistence ----------------------------------------------


def candidate_to_json(candidate: CandidateSentence) -> str:
    return json.dumps(
        {
            "sentence_id": candidate.sentence.sentence_id,
            "note_id": candidate.sentence.note_id,
            "start": candidate.sentence.start,
            "end": candidate.sentence.end,
            "text": candidate.sentence.text,
            "matched_terms": list(candidate.matched_terms),
            "spans": [[t, s, e] for t, s, e in candidate.match_spans],
            "lexicon_version": candidate.lexicon_version,
        },
        ensure_ascii=False,
    )


def candidate_from_json(line: str) -> CandidateSentence:
    record = json.loads(line)
    sentence = Sentence(
        sentence_id=record["sentence_id"],
        note_id=record["note_id"],
        start=int(record.get("start", 0)),
        end=int(record.get("end", 0)),
        text=record["text"],
    )
    return CandidateSentence(
        sentence=sentence,
        matched_terms=tuple(record["matched_terms"]),
        match_spans=tuple((t, int(s), int(e)) for t, s, e in record["spans"]),
        lexicon_version=int(record["lexicon_version"]),
    )


def write_candidates(path: str | Path, candidates: Iterable[CandidateSentence]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for candidate in candidates:
            fh.write(candidate_to_json(candidate) + "\n")
            n += 1
    return n


def load_candidates(path: str | Path) -> list[CandidateSentence]:
    with open(path, "r", encoding="utf-8") as fh:
        return [candidate_from_json(line) for line in fh if line.strip()]


def write_sample(path: str | Path, result: SampleResult) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for item in result.items:
            record = json.loads(candidate_to_json(item.candidate))
            record["stratum_signature"] = item.stratum_signature
            record["seed"] = result.seed
            record["budget"] = result.target_total
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")
            n += 1
    return n


def load_sample(path: str | Path) -> list[SampledCandidate]:
    items = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            candidate = candidate_from_json(line)
            record = json.loads(line)
            items.append(SampledCandidate(candidate, record["stratum_signature"]))
    return items
