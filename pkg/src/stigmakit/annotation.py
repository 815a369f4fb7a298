"""Dual annotation over the four subscales: task assignment, Cohen's kappa,
adjudication, gold-dataset construction, and 6:2:2 splitting.

Agreement is computed as Cohen's kappa over binary present/absent
decisions. The headline "entity" agreement pools every
(sentence x subscale) decision from both raters into a single kappa;
per-subscale kappas are reported alongside.
"""

from __future__ import annotations

import json
import random
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from .subscales import SUBSCALES, GUIDELINES, Subscale


class AnnotationError(Exception):
    pass


@dataclass(frozen=True)
class LabelSet:
    """One boolean per subscale; partial label sets are not representable."""

    personalized_stigma: bool
    disclosure_concern: bool
    negative_self_image: bool
    public_attitudes: bool

    def get(self, subscale: Subscale) -> bool:
        return getattr(self, subscale.value)

    def as_dict(self) -> dict[str, bool]:
        return {s.value: self.get(s) for s in SUBSCALES}

    def any_positive(self) -> bool:
        return any(self.get(s) for s in SUBSCALES)

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, bool]) -> "LabelSet":
        missing = [s.value for s in SUBSCALES if s.value not in mapping]
        if missing:
            raise AnnotationError(f"label set missing subscales: {missing}")
        extra = set(mapping) - {s.value for s in SUBSCALES}
        if extra:
            raise AnnotationError(f"label set has unknown subscales: {sorted(extra)}")
        return cls(**{k: bool(v) for k, v in mapping.items()})


@dataclass(frozen=True)
class AnnotationRecord:
    sentence_id: str
    annotator_id: str
    labels: LabelSet
    timestamp: float
    revision: int = 0  # corrections submit a superseding revision


@dataclass(frozen=True)
class Adjudication:
    sentence_id: str
    adjudicator_id: str
    labels: LabelSet
    timestamp: float
    override: bool = False


@dataclass(frozen=True)
class TaskAssignment:
    sentence_id: str
    annotator_id: str


def assign_tasks(
    sentence_ids: Iterable[str],
    annotators: Iterable[str],
    per_sentence: int = 2,
) -> list[TaskAssignment]:
    """Assign each sentence to per_sentence distinct annotators, rotating
    through the pool so workloads stay balanced within one task."""
    annotators = list(dict.fromkeys(annotators))
    sentence_ids = list(sentence_ids)
    if per_sentence < 1:
        raise AnnotationError(f"per_sentence must be >= 1, got {per_sentence}")
    if len(annotators) < per_sentence:
        raise AnnotationError(
            f"need at least {per_sentence} annotators, have {len(annotators)}"
        )
    assignments = []
    cursor = 0
    for sid in sentence_ids:
        for _ in range(per_sentence):
            assignments.append(TaskAssignment(sid, annotators[cursor % len(annotators)]))
            cursor += 1
    return assignments


# -- agreement ----------------------------------------------------------------


@dataclass
class KappaResult:
    n: int
    p_o: float
    p_e: float
    kappa: float | None
    undefined: bool = False  # p_e == 1: degenerate marginals, no chance correction


def cohens_kappa(pairs: list[tuple[bool, bool]]) -> KappaResult:
    """Cohen's kappa over paired binary decisions.

    p_e comes from the raters' own marginals. When p_e == 1 both raters
    were constant and agreeing; kappa is reported as undefined instead of
    dividing by zero.
    """
    n = len(pairs)
    if n == 0:
        raise AnnotationError("cannot compute kappa over zero decisions")
    agree = sum(1 for a, b in pairs if a == b)
    a_yes = sum(1 for a, _ in pairs if a)
    b_yes = sum(1 for _, b in pairs if b)
    p_o = agree / n
    pa, pb = a_yes / n, b_yes / n
    p_e = pa * pb + (1 - pa) * (1 - pb)
    if p_e >= 1.0:
        return KappaResult(n=n, p_o=p_o, p_e=1.0, kappa=None, undefined=True)
    return KappaResult(n=n, p_o=p_o, p_e=p_e, kappa=(p_o - p_e) / (1 - p_e))


@dataclass
class AgreementReport:
    pooled: KappaResult
    per_subscale: dict[Subscale, KappaResult | None]
    n_sentences: int
    excluded: list[str] = field(default_factory=list)  # sentences without exactly 2 records

    def to_rows(self) -> list[dict[str, object]]:
        rows = []
        for subscale in SUBSCALES:
            result = self.per_subscale.get(subscale)
            if result is None:
                continue
            rows.append(_kappa_row(GUIDELINES[subscale].display_name, result))
        rows.append(_kappa_row("pooled", self.pooled))
        return rows


def _kappa_row(name: str, result: KappaResult) -> dict[str, object]:
    return {
        "scope": name,
        "n": result.n,
        "p_o": result.p_o,
        "p_e": result.p_e,
        "kappa": result.kappa,
        "undefined": result.undefined,
    }


def latest_records(records: Iterable[AnnotationRecord]) -> dict[tuple[str, str], AnnotationRecord]:
    """Highest-revision record per (sentence, annotator)."""
    latest: dict[tuple[str, str], AnnotationRecord] = {}
    for record in records:
        key = (record.sentence_id, record.annotator_id)
        if key not in latest or record.revision > latest[key].revision:
            latest[key] = record
    return latest


def paired_records(
    records: Iterable[AnnotationRecord],
) -> tuple[dict[str, tuple[AnnotationRecord, AnnotationRecord]], list[str]]:
    by_sentence: dict[str, list[AnnotationRecord]] = {}
    for record in latest_records(records).values():
        by_sentence.setdefault(record.sentence_id, []).append(record)
    pairs: dict[str, tuple[AnnotationRecord, AnnotationRecord]] = {}
    excluded: list[str] = []
    for sid in sorted(by_sentence):
        recs = sorted(by_sentence[sid], key=lambda r: r.annotator_id)
        if len(recs) != 2:
            excluded.append(sid)
            continue
        pairs[sid] = (recs[0], recs[1])
    return pairs, excluded


def pooled_entity_kappa(records: Iterable[AnnotationRecord]) -> AgreementReport:
    """Kappa pooled over all (sentence x subscale) decisions, plus one kappa
    per subscale. Sentences lacking exactly two annotation records are
    excluded and listed in the report."""
    pairs, excluded = paired_records(records)
    if not pairs:
        raise AnnotationError("no dually annotated sentences to score")
    pooled_pairs: list[tuple[bool, bool]] = []
    per_subscale_pairs: dict[Subscale, list[tuple[bool, bool]]] = {s: [] for s in SUBSCALES}
    for sid in sorted(pairs):
        rec_a, rec_b = pairs[sid]
        for subscale in SUBSCALES:
            decision = (rec_a.labels.get(subscale), rec_b.labels.get(subscale))
            pooled_pairs.append(decision)
            per_subscale_pairs[subscale].append(decision)
    return AgreementReport(
        pooled=cohens_kappa(pooled_pairs),
        per_subscale={s: cohens_kappa(p) if p else None for s, p in per_subscale_pairs.items()},
        n_sentences=len(pairs),
        excluded=excluded,
    )


# -- adjudication and gold ------------------------------------------------------


def disagreements(records: Iterable[AnnotationRecord]) -> dict[str, list[Subscale]]:
    """Sentences whose two label sets differ, with the differing subscales."""
    pairs, _excluded = paired_records(records)
    out: dict[str, list[Subscale]] = {}
    for sid, (rec_a, rec_b) in pairs.items():
        diff = [s for s in SUBSCALES if rec_a.labels.get(s) != rec_b.labels.get(s)]
        if diff:
            out[sid] = diff
    return out


def adjudicate(
    records: Iterable[AnnotationRecord],
    sentence_id: str,
    final_labels: LabelSet,
    adjudicator_id: str,
    override: bool = False,
    timestamp: float | None = None,
) -> Adjudication:
    """Resolve a disagreement to a final label set. Adjudicating a sentence
    the annotators agreed on requires the override flag."""
    records = list(records)
    pairs, _ = paired_records(records)
    if sentence_id not in pairs:
        raise AnnotationError(f"sentence {sentence_id!r} is not dually annotated")
    if sentence_id not in disagreements(records) and not override:
        raise AnnotationError(
            f"annotators agreed on {sentence_id!r}; pass override to adjudicate anyway"
        )
    return Adjudication(
        sentence_id=sentence_id,
        adjudicator_id=adjudicator_id,
        labels=final_labels,
        timestamp=time.time() if timestamp is None else timestamp,
        override=override,
    )


@dataclass
class GoldDataset:
    """Final labels over one shared sentence set, with one binary dataset
    per subscale and a shared train/validation/test assignment."""

    labels: dict[str, LabelSet]
    texts: dict[str, str]
    split: dict[str, str] = field(default_factory=dict)

    def sentence_ids(self) -> list[str]:
        return sorted(self.labels)

    def positives(self, subscale: Subscale) -> int:
        return sum(1 for labels in self.labels.values() if labels.get(subscale))

    def table1_rows(self) -> list[dict[str, object]]:
        n = len(self.labels)
        rows = []
        for subscale in SUBSCALES:
            yes = self.positives(subscale)
            rows.append(
                {
                    "subscale": GUIDELINES[subscale].display_name,
                    "n": n,
                    "yes": yes,
                    "yes_pct": 100.0 * yes / n if n else 0.0,
                    "no": n - yes,
                    "no_pct": 100.0 * (n - yes) / n if n else 0.0,
                }
            )
        return rows

    def subscale_items(
        self, subscale: Subscale, split: str | None = None
    ) -> list[tuple[str, str, bool]]:
        """(sentence_id, text, label) rows for one subscale, optionally
        filtered to one split."""
        items = []
        for sid in self.sentence_ids():
            if split is not None and self.split.get(sid) != split:
                continue
            items.append((sid, self.texts[sid], self.labels[sid].get(subscale)))
        return items


def build_gold(
    records: Iterable[AnnotationRecord],
    adjudications: Iterable[Adjudication],
    texts: Mapping[str, str],
    include_negatives: bool = False,
) -> GoldDataset:
    """Resolve every annotated sentence to a final label set.

    Sentences the annotators agreed on take the agreed labels; disagreeing
    sentences must have an adjudication, otherwise this raises listing the
    unresolved ids. By default only stigma-related sentences (at least one
    positive subscale) enter the gold set; include_negatives keeps the rest
    as all-absent rows.
    """
    records = list(records)
    pairs, _excluded = paired_records(records)
    adjudicated = {adj.sentence_id: adj for adj in adjudications}
    unresolved = sorted(
        sid for sid in disagreements(records) if sid not in adjudicated
    )
    if unresolved:
        raise AnnotationError(f"unadjudicated disagreements: {unresolved}")

    labels: dict[str, LabelSet] = {}
    for sid, (rec_a, _rec_b) in pairs.items():
        if sid in adjudicated:
            final = adjudicated[sid].labels
        else:
            final = rec_a.labels  # agreed, so either record works
        if final.any_positive() or include_negatives:
            labels[sid] = final

    missing_text = sorted(sid for sid in labels if sid not in texts)
    if missing_text:
        raise AnnotationError(f"gold sentences without text: {missing_text}")
    return GoldDataset(labels=labels, texts={sid: texts[sid] for sid in labels})


SPLIT_NAMES = ("train", "validation", "test")


def split_gold(
    gold: GoldDataset,
    ratios: tuple[int, int, int] = (6, 2, 2),
    rng_seed: int = 0,
) -> dict[str, str]:
    """Deterministic seeded shuffle, then contiguous cuts at the ratio
    points. The assignment is sentence-level and shared by all four
    subscales, so micro pooling across subscales stays well-defined."""
    ids = gold.sentence_ids()
    n = len(ids)
    if n < 5:
        raise AnnotationError(f"gold set of {n} sentences is too small to split")
    total = sum(ratios)
    rng = random.Random(rng_seed)
    rng.shuffle(ids)
    cut1 = round(n * ratios[0] / total)
    cut2 = round(n * (ratios[0] + ratios[1]) / total)
    assignment = {}
    for i, sid in enumerate(ids):
        assignment[sid] = SPLIT_NAMES[0] if i < cut1 else SPLIT_NAMES[1] if i < cut2 else SPLIT_NAMES[2]
    gold.split = assignment
    return assignment


# -- line-delimited persistence -------------------------------------------------


def record_to_json(record: AnnotationRecord) -> str:
    return json.dumps(
        {
            "sentence_id": record.sentence_id,
            "annotator_id": record.annotator_id,
            "labels": record.labels.as_dict(),
            "timestamp": record.timestamp,
            "revision": record.revision,
        },
        ensure_ascii=False,
    )


def record_from_json(line: str) -> AnnotationRecord:
    data = json.loads(line)
    return AnnotationRecord(
        sentence_id=data["sentence_id"],
        annotator_id=data["annotator_id"],
        labels=LabelSet.from_mapping(data["labels"]),
        timestamp=float(data.get("timestamp", 0.0)),
        revision=int(data.get("revision", 0)),
    )


def load_records(path: str | Path) -> list[AnnotationRecord]:
    with open(path, "r", encoding="utf-8") as fh:
        return [record_from_json(line) for line in fh if line.strip()]


def adjudication_to_json(adj: Adjudication) -> str:
    return json.dumps(
        {
            "sentence_id": adj.sentence_id,
            "adjudicator_id": adj.adjudicator_id,
            "labels": adj.labels.as_dict(),
            "timestamp": adj.timestamp,
            "override": adj.override,
        },
        ensure_ascii=False,
    )


def adjudication_from_json(line: str) -> Adjudication:
    data = json.loads(line)
    return Adjudication(
        sentence_id=data["sentence_id"],
        adjudicator_id=data["adjudicator_id"],
        labels=LabelSet.from_mapping(data["labels"]),
        timestamp=float(data.get("timestamp", 0.0)),
        override=bool(data.get("override", False)),
    )


def load_adjudications(path: str | Path) -> list[Adjudication]:
    with open(path, "r", encoding="utf-8") as fh:
        return [adjudication_from_json(line) for line in fh if line.strip()]


def write_gold(gold: GoldDataset, directory: str | Path) -> dict[Subscale, Path]:
    """One line-delimited file per subscale: sentence_id, text, met/not_met,
    split."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {}
    for subscale in SUBSCALES:
        path = directory / f"gold_{subscale.value}.jsonl"
        with open(path, "w", encoding="utf-8") as fh:
            for sid, text, label in gold.subscale_items(subscale):
                fh.write(
                    json.dumps(
                        {
                            "sentence_id": sid,
                            "text": text,
                            "label": "met" if label else "not_met",
                            "split": gold.split.get(sid, ""),
                        },
                        ensure_ascii=False,
                    )
                    + "\n"
                )
        paths[subscale] = path
    return paths


def load_gold(directory: str | Path) -> GoldDataset:
    directory = Path(directory)
    labels_raw: dict[str, dict[str, bool]] = {}
    texts: dict[str, str] = {}
    split: dict[str, str] = {}
    for subscale in SUBSCALES:
        path = directory / f"gold_{subscale.value}.jsonl"
        if not path.exists():
            raise AnnotationError(f"missing gold file {path}")
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                data = json.loads(line)
                sid = data["sentence_id"]
                labels_raw.setdefault(sid, {})[subscale.value] = data["label"] == "met"
                texts[sid] = data["text"]
                if data.get("split"):
                    split[sid] = data["split"]
    labels = {sid: LabelSet.from_mapping(vals) for sid, vals in labels_raw.items()}
    gold = GoldDataset(labels=labels, texts=texts, split=split)
    return gold
