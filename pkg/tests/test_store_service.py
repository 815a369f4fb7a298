import json

import pytest
from fastapi.testclient import TestClient

from stigmakit.annotation import LabelSet, load_records
from stigmakit.scanner import CandidateSentence, SampleResult, SampledCandidate, write_sample
from stigmakit.corpus import Sentence
from stigmakit.service import create_app
from stigmakit.store import ProjectStore, StoreError
from stigmakit.subscales import SUBSCALES

FULL = {s.value: False for s in SUBSCALES}


def make_store(tmp_path):
    return ProjectStore(tmp_path / "proj", create=True)


def seed_sample(store, sentence_ids):
    items = []
    for sid in sentence_ids:
        text = f"feels ashamed in {sid}"
        sentence = Sentence(sid, f"note-{sid}", 0, len(text), text)
        start = text.find("ashamed")
        candidate = CandidateSentence(
            sentence, ("ashamed",), (("ashamed", start, start + 7),), lexicon_version=1
        )
        items.append(SampledCandidate(candidate, "ashamed"))
    write_sample(store.sample_path, SampleResult(items, seed=1, target_total=len(items),
                                                 min_stratum_take=10))


def seed_assignments(store, sentence_ids, annotators=("ann1", "ann2")):
    with open(store.assignments_path, "w", encoding="utf-8") as fh:
        for sid in sentence_ids:
            for annotator in annotators:
                fh.write(json.dumps({"sentence_id": sid, "annotator_id": annotator}) + "\n")


@pytest.fixture
def service(tmp_path):
    store = make_store(tmp_path)
    seed_sample(store, ["s1", "s2", "s3"])
    seed_assignments(store, ["s1", "s2", "s3"])
    store.add_session("ann1", "annotator", "tok-ann1")
    store.add_session("ann2", "annotator", "tok-ann2")
    store.add_session("adj1", "adjudicator", "tok-adj")
    app = create_app(store)
    return TestClient(app), store


def auth(token):
    return {"X-Session-Token": token}


class TestStore:
    def test_create_and_reopen(self, tmp_path):
        store = make_store(tmp_path)
        again = ProjectStore(store.root)
        assert again.root == store.root

    def test_open_missing_without_create_fails(self, tmp_path):
        with pytest.raises(StoreError):
            ProjectStore(tmp_path / "missing")

    def test_writer_lock_exclusive(self, tmp_path):
        store = ProjectStore(tmp_path / "p", writer=True, create=True)
        with pytest.raises(StoreError, match="locked"):
            ProjectStore(tmp_path / "p", writer=True)
        store.release()
        second = ProjectStore(tmp_path / "p", writer=True)
        second.release()

    def test_schema_version_checked(self, tmp_path):
        store = make_store(tmp_path)
        (store.root / "store.json").write_text('{"schema_version": 99}\n')
        with pytest.raises(StoreError, match="schema_version"):
            ProjectStore(store.root)

    def test_manifest_records_hashes(self, tmp_path):
        store = make_store(tmp_path)
        artifact = store.root / "corpus" / "x.jsonl"
        artifact.write_text("{}\n")
        store.manifest_append("test-stage", outputs=[artifact], params={"seed": 3})
        entries = store.manifest_entries()
        assert entries[-1]["stage"] == "test-stage"
        assert entries[-1]["outputs"][0]["sha256"]
        assert entries[-1]["params"]["seed"] == 3


class TestAuth:
    def test_missing_token_401(self, service):
        client, _ = service
        assert client.get("/tasks").status_code == 401

    def test_unknown_token_401(self, service):
        client, _ = service
        assert client.get("/tasks", headers=auth("nope")).status_code == 401

    def test_annotator_cannot_adjudicate(self, service):
        client, _ = service
        response = client.post(
            "/adjudications",
            headers=auth("tok-ann1"),
            json={"sentence_id": "s1", "labels": FULL},
        )
        assert response.status_code == 403

    def test_annotator_cannot_read_disagreements(self, service):
        client, _ = service
        assert client.get("/disagreements", headers=auth("tok-ann1")).status_code == 403


class TestTasksAndSubmission:
    def test_pending_tasks_lists_assignments(self, service):
        client, _ = service
        data = client.get("/tasks", headers=auth("tok-ann1")).json()
        assert len(data["tasks"]) == 3
        assert data["progress"] == {"done": 0, "total": 3}
        assert data["tasks"][0]["match_spans"]

    def test_sentence_highlights(self, service):
        client, _ = service
        data = client.get("/sentences/s1", headers=auth("tok-ann1")).json()
        term, start, end = data["match_spans"][0]
        assert data["text"][start:end] == "ashamed" == term

    def test_unknown_sentence_404(self, service):
        client, _ = service
        assert client.get("/sentences/zzz", headers=auth("tok-ann1")).status_code == 404

    def test_submit_complete_labels(self, service):
        client, store = service
        payload = {"sentence_id": "s1", "labels": {**FULL, "disclosure_concern": True}}
        response = client.post("/annotations", headers=auth("tok-ann1"), json=payload)
        assert response.status_code == 200
        tasks = client.get("/tasks", headers=auth("tok-ann1")).json()
        assert tasks["progress"] == {"done": 1, "total": 3}
        records = load_records(store.records_path)
        assert len(records) == 1
        assert records[0].labels.get(SUBSCALES[1])

    def test_submit_missing_subscale_422(self, service):
        client, _ = service
        incomplete = {k: v for k, v in FULL.items() if k != "public_attitudes"}
        response = client.post("/annotations", headers=auth("tok-ann1"),
                               json={"sentence_id": "s1", "labels": incomplete})
        assert response.status_code == 422

    def test_resubmit_same_labels_is_idempotent(self, service):
        client, store = service
        payload = {"sentence_id": "s1", "labels": FULL}
        first = client.post("/annotations", headers=auth("tok-ann1"), json=payload).json()
        second = client.post("/annotations", headers=auth("tok-ann1"), json=payload).json()
        assert not first["duplicate"]
        assert second["duplicate"]
        assert len(load_records(store.records_path)) == 1

    def test_correction_creates_superseding_revision(self, service):
        client, store = service
        client.post("/annotations", headers=auth("tok-ann1"),
                    json={"sentence_id": "s1", "labels": FULL})
        changed = {**FULL, "negative_self_image": True}
        response = client.post("/annotations", headers=auth("tok-ann1"),
                               json={"sentence_id": "s1", "labels": changed}).json()
        assert response["revision"] == 1
        assert len(load_records(store.records_path)) == 2  # append-only history


def annotate_all(client, sentence_ids, token, positive=None):
    for sid in sentence_ids:
        labels = dict(FULL)
        if positive and sid in positive:
            labels[positive[sid]] = True
        client.post("/annotations", headers=auth(token), json={"sentence_id": sid,
                                                               "labels": labels})


class TestAgreementAndAdjudication:
    def test_agreement_dashboard_data(self, service):
        client, _ = service
        annotate_all(client, ["s1", "s2", "s3"], "tok-ann1",
                     positive={"s1": "disclosure_concern"})
        annotate_all(client, ["s1", "s2", "s3"], "tok-ann2",
                     positive={"s1": "disclosure_concern"})
        data = client.get("/agreement", headers=auth("tok-adj")).json()
        pooled = [row for row in data["rows"] if row["scope"] == "pooled"][0]
        assert pooled["n"] == 12
        assert pooled["kappa"] == pytest.approx(1.0)

    def test_disagreement_queue_and_adjudication(self, service):
        client, store = service
        annotate_all(client, ["s1", "s2", "s3"], "tok-ann1",
                     positive={"s1": "disclosure_concern"})
        annotate_all(client, ["s1", "s2", "s3"], "tok-ann2")  # disagrees on s1
        queue = client.get("/disagreements", headers=auth("tok-adj")).json()
        assert [item["sentence_id"] for item in queue] == ["s1"]
        assert queue[0]["differing"] == ["disclosure_concern"]
        assert queue[0]["labels_a"] != queue[0]["labels_b"]

        response = client.post(
            "/adjudications", headers=auth("tok-adj"),
            json={"sentence_id": "s1", "labels": {**FULL, "disclosure_concern": True}},
        )
        assert response.status_code == 200
        assert client.get("/disagreements", headers=auth("tok-adj")).json() == []

    def test_double_adjudication_conflict(self, service):
        client, _ = service
        annotate_all(client, ["s1"], "tok-ann1", positive={"s1": "disclosure_concern"})
        annotate_all(client, ["s1"], "tok-ann2")
        body = {"sentence_id": "s1", "labels": {**FULL, "disclosure_concern": True}}
        assert client.post("/adjudications", headers=auth("tok-adj"), json=body).status_code == 200
        second = client.post("/adjudications", headers=auth("tok-adj"), json=body)
        assert second.status_code == 409

    def test_adjudicating_agreed_sentence_needs_override(self, service):
        client, _ = service
        annotate_all(client, ["s2"], "tok-ann1")
        annotate_all(client, ["s2"], "tok-ann2")
        body = {"sentence_id": "s2", "labels": FULL}
        assert client.post("/adjudications", headers=auth("tok-adj"), json=body).status_code == 400
        body["override"] = True
        assert client.post("/adjudications", headers=auth("tok-adj"), json=body).status_code == 200

    def test_gold_export_after_resolution(self, service):
        client, _ = service
        annotate_all(client, ["s1", "s2", "s3"], "tok-ann1",
                     positive={"s1": "disclosure_concern", "s2": "negative_self_image"})
        annotate_all(client, ["s1", "s2", "s3"], "tok-ann2",
                     positive={"s1": "disclosure_concern"})
        client.post("/adjudications", headers=auth("tok-adj"),
                    json={"sentence_id": "s2",
                          "labels": {**FULL, "negative_self_image": True}})
        export = client.get("/gold/export", headers=auth("tok-adj")).json()
        assert export["n"] == 2
        nsi = export["datasets"]["negative_self_image"]
        assert {row["sentence_id"]: row["label"] for row in nsi} == {
            "s1": "not_met", "s2": "met",
        }


class TestGuidelines:
    def test_guidelines_served_for_ui(self, service):
        client, _ = service
        data = client.get("/guidelines").json()
        assert len(data) == 4
        by_name = {row["subscale"]: row for row in data}
        assert "internalized feelings of shame" in by_name["negative_self_image"]["definition"]
        assert by_name["personalized_stigma"]["example_items"]
