"""HTTP service backing the annotation UI.

Reads are served from an in-memory snapshot of the store; writes (label
submissions, adjudications) are serialized through one lock and appended
to the store files, so the files stay the single source of truth. Roles
gate the endpoints: annotators label, adjudicators and admins resolve
disagreements.
"""

from __future__ import annotations

import threading
import time
from typing import Any

from fastapi import Depends, FastAPI, Header, HTTPException
from pydantic import BaseModel, field_validator

from . import annotation as ann
from .annotation import Adjudication, AnnotationRecord, LabelSet
from .scanner import load_sample
from .store import ProjectStore, append_jsonl
from .subscales import GUIDELINES, SUBSCALES


class LabelsPayload(BaseModel):
    sentence_id: str
    labels: dict[str, bool]

    @field_validator("labels")
    @classmethod
    def complete_label_set(cls, value: dict[str, bool]) -> dict[str, bool]:
        expected = {s.value for s in SUBSCALES}
        missing = expected - set(value)
        if missing:
            raise ValueError(f"labels missing subscales: {sorted(missing)}")
        extra = set(value) - expected
        if extra:
            raise ValueError(f"labels has unknown subscales: {sorted(extra)}")
        return value


class AdjudicationPayload(LabelsPayload):
    override: bool = False


class ServiceState:
    def __init__(self, store: ProjectStore) -> None:
        self.store = store
        self.lock = threading.Lock()
        self.sessions = store.sessions()
        self.sentences: dict[str, dict[str, Any]] = {}
        if store.sample_path.exists():
            for item in load_sample(store.sample_path):
                sentence = item.candidate.sentence
                self.sentences[sentence.sentence_id] = {
                    "sentence_id": sentence.sentence_id,
                    "note_id": sentence.note_id,
                    "text": sentence.text,
                    "match_spans": [list(span) for span in item.candidate.match_spans],
                    "stratum_signature": item.stratum_signature,
                }
        self.assignments: list[dict[str, str]] = []
        if store.assignments_path.exists():
            import json

            with open(store.assignments_path, "r", encoding="utf-8") as fh:
                self.assignments = [json.loads(line) for line in fh if line.strip()]
        self.records: list[AnnotationRecord] = (
            ann.load_records(store.records_path) if store.records_path.exists() else []
        )
        self.adjudications: dict[str, Adjudication] = {}
        if store.adjudications_path.exists():
            for adj in ann.load_adjudications(store.adjudications_path):
                self.adjudications[adj.sentence_id] = adj

    # -- write paths -----------------------------------------------------------

    def submit_labels(self, annotator_id: str, sentence_id: str, labels: LabelSet) -> dict[str, Any]:
        with self.lock:
            latest = ann.latest_records(self.records).get((sentence_id, annotator_id))
            if latest is not None and latest.labels == labels:
                return {"sentence_id": sentence_id, "revision": latest.revision, "duplicate": True}
            record = AnnotationRecord(
                sentence_id=sentence_id,
                annotator_id=annotator_id,
                labels=labels,
                timestamp=time.time(),
                revision=0 if latest is None else latest.revision + 1,
            )
            self.records.append(record)
            append_jsonl(self.store.records_path, ann.record_to_json(record))
            return {"sentence_id": sentence_id, "revision": record.revision, "duplicate": False}

    def submit_adjudication(
        self, adjudicator_id: str, sentence_id: str, labels: LabelSet, override: bool
    ) -> Adjudication:
        with self.lock:
            if sentence_id in self.adjudications:
                raise HTTPException(
                    status_code=409, detail=f"sentence {sentence_id} already adjudicated"
                )
            try:
                adjudication = ann.adjudicate(
                    self.records, sentence_id, labels, adjudicator_id, override=override
                )
            except ann.AnnotationError as exc:
                raise HTTPException(status_code=400, detail=str(exc)) from exc
            self.adjudications[sentence_id] = adjudication
            append_jsonl(self.store.adjudications_path, ann.adjudication_to_json(adjudication))
            return adjudication

    # -- read paths --------------------------------------------------------------

    def pending_tasks(self, annotator_id: str) -> dict[str, Any]:
        assigned = [a["sentence_id"] for a in self.assignments if a["annotator_id"] == annotator_id]
        done = {
            sid
            for (sid, aid) in ann.latest_records(self.records)
            if aid == annotator_id
        }
        pending = [sid for sid in assigned if sid not in done]
        items = [self.sentences.get(sid, {"sentence_id": sid}) for sid in pending]
        return {
            "annotator_id": annotator_id,
            "progress": {"done": len(assigned) - len(pending), "total": len(assigned)},
            "tasks": items,
        }

    def disagreement_queue(self) -> list[dict[str, Any]]:
        pairs, _ = ann.paired_records(self.records)
        queue = []
        for sid, subscales in sorted(ann.disagreements(self.records).items()):
            if sid in self.adjudications:
                continue
            rec_a, rec_b = pairs[sid]
            queue.append(
                {
                    "sentence_id": sid,
                    "text": self.sentences.get(sid, {}).get("text", ""),
                    "match_spans": self.sentences.get(sid, {}).get("match_spans", []),
                    "annotators": [rec_a.annotator_id, rec_b.annotator_id],
                    "labels_a": rec_a.labels.as_dict(),
                    "labels_b": rec_b.labels.as_dict(),
                    "differing": [s.value for s in subscales],
                }
            )
        return queue


def create_app(store: ProjectStore) -> FastAPI:
    app = FastAPI(title="stigma annotation service")
    state = ServiceState(store)
    app.state.service = state

    def current_session(x_session_token: str = Header(default="")) -> dict[str, str]:
        session = state.sessions.get(x_session_token)
        if session is None:
            raise HTTPException(status_code=401, detail="unknown or missing session token")
        return session

    def require_adjudicator(session: dict[str, str] = Depends(current_session)) -> dict[str, str]:
        if session["role"] not in ("adjudicator", "admin"):
            raise HTTPException(status_code=403, detail="adjudicator role required")
        return session

    @app.get("/guidelines")
    def guidelines() -> list[dict[str, Any]]:
        return [
            {
                "subscale": s.value,
                "display_name": GUIDELINES[s].display_name,
                "definition": GUIDELINES[s].definition,
                "example_items": list(GUIDELINES[s].example_items),
            }
            for s in SUBSCALES
        ]

    @app.get("/tasks")
    def tasks(session: dict[str, str] = Depends(current_session)) -> dict[str, Any]:
        return state.pending_tasks(session["annotator_id"])

    @app.get("/sentences/{sentence_id}")
    def sentence(sentence_id: str, session: dict[str, str] = Depends(current_session)) -> dict[str, Any]:
        item = state.sentences.get(sentence_id)
        if item is None:
            raise HTTPException(status_code=404, detail=f"unknown sentence {sentence_id}")
        return item

    @app.post("/annotations")
    def submit(payload: LabelsPayload, session: dict[str, str] = Depends(current_session)) -> dict[str, Any]:
        labels = LabelSet.from_mapping(payload.labels)
        return state.submit_labels(session["annotator_id"], payload.sentence_id, labels)

    @app.get("/agreement")
    def agreement(session: dict[str, str] = Depends(current_session)) -> dict[str, Any]:
        try:
            report = ann.pooled_entity_kappa(state.records)
        except ann.AnnotationError as exc:
            raise HTTPException(status_code=409, detail=str(exc)) from exc
        return {
            "n_sentences": report.n_sentences,
            "excluded": report.excluded,
            "rows": report.to_rows(),
        }

    @app.get("/disagreements")
    def disagreements(session: dict[str, str] = Depends(require_adjudicator)) -> list[dict[str, Any]]:
        return state.disagreement_queue()

    @app.post("/adjudications")
    def adjudicate(
        payload: AdjudicationPayload, session: dict[str, str] = Depends(require_adjudicator)
    ) -> dict[str, Any]:
        labels = LabelSet.from_mapping(payload.labels)
        adjudication = state.submit_adjudication(
            session["annotator_id"], payload.sentence_id, labels, payload.override
        )
        return {
            "sentence_id": adjudication.sentence_id,
            "labels": adjudication.labels.as_dict(),
            "adjudicator_id": adjudication.adjudicator_id,
            "override": adjudication.override,
        }

    @app.get("/gold/export")
    def gold_export(session: dict[str, str] = Depends(current_session)) -> dict[str, Any]:
        texts = {sid: item.get("text", "") for sid, item in state.sentences.items()}
        try:
            gold = ann.build_gold(state.records, state.adjudications.values(), texts)
        except ann.AnnotationError as exc:
            raise HTTPException(status_code=409, detail=str(exc)) from exc
        return {
            "n": len(gold.labels),
            "table1": gold.table1_rows(),
            "datasets": {
                s.value: [
                    {"sentence_id": sid, "text": text, "label": "met" if label else "not_met"}
                    for sid, text, label in gold.subscale_items(s)
                ]
                for s in SUBSCALES
            },
        }

    @app.get("/records/count")
    def records_count(session: dict[str, str] = Depends(current_session)) -> dict[str, int]:
        return {"records": len(ann.latest_records(state.records))}

    return app


def serve(store: ProjectStore, host: str = "127.0.0.1", port: int = 8712) -> None:
    import uvicorn

    app = create_app(store)
    uvicorn.run(app, host=host, port=port, log_level="warning")
