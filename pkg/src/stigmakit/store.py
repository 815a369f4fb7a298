"""File-backed project store: every pipeline artifact lives under one root
directory as plain line-delimited files, with a manifest tying each stage's
outputs back to its inputs, seeds, and versions.

Writes are guarded by a single-writer lock file; concurrent readers are
fine because artifacts are append-only or rewritten atomically.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
import uuid
from pathlib import Path
from typing import Any

SCHEMA_VERSION = 1

SUBDIRS = ("corpus", "lexicon", "candidates", "annotation", "gold", "runs", "reports")


class StoreError(Exception):
    pass


class ProjectStore:
    def __init__(self, root: str | Path, writer: bool = False, create: bool = False) -> None:
        self.root = Path(root)
        self._lock_acquired = False
        marker = self.root / "store.json"
        if not marker.exists():
            if not create:
                raise StoreError(f"{self.root} is not a project store (no store.json)")
            self.root.mkdir(parents=True, exist_ok=True)
            for sub in SUBDIRS:
                (self.root / sub).mkdir(exist_ok=True)
            marker.write_text(json.dumps({"schema_version": SCHEMA_VERSION}) + "\n")
        else:
            meta = json.loads(marker.read_text())
            if meta.get("schema_version") != SCHEMA_VERSION:
                raise StoreError(
                    f"store schema_version {meta.get('schema_version')} != {SCHEMA_VERSION}"
                )
            for sub in SUBDIRS:
                (self.root / sub).mkdir(exist_ok=True)
        if writer:
            self._acquire_lock()

    def _acquire_lock(self) -> None:
        lock = self.root / ".lock"
        try:
            fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise StoreError(
                f"store {self.root} is locked by another writer ({lock})"
            ) from None
        with os.fdopen(fd, "w") as fh:
            fh.write(f"pid={os.getpid()}\n")
        self._lock_acquired = True

    def release(self) -> None:
        if self._lock_acquired:
            (self.root / ".lock").unlink(missing_ok=True)
            self._lock_acquired = False

    def __enter__(self) -> "ProjectStore":
        return self

    def __exit__(self, *exc: object) -> None:
        self.release()

    # -- well-known paths ----------------------------------------------------

    @property
    def notes_path(self) -> Path:
        return self.root / "corpus" / "notes.jsonl"

    @property
    def ingest_errors_path(self) -> Path:
        return self.root / "corpus" / "ingest_errors.jsonl"

    @property
    def sentences_path(self) -> Path:
        return self.root / "corpus" / "sentences.jsonl"

    @property
    def lexicon_path(self) -> Path:
        return self.root / "lexicon" / "lexicon.jsonl"

    @property
    def candidates_path(self) -> Path:
        return self.root / "candidates" / "candidates.jsonl"

    @property
    def sample_path(self) -> Path:
        return self.root / "candidates" / "sample.jsonl"

    @property
    def assignments_path(self) -> Path:
        return self.root / "annotation" / "assignments.jsonl"

    @property
    def records_path(self) -> Path:
        return self.root / "annotation" / "records.jsonl"

    @property
    def adjudications_path(self) -> Path:
        return self.root / "annotation" / "adjudications.jsonl"

    @property
    def sessions_path(self) -> Path:
        return self.root / "annotation" / "sessions.jsonl"

    @property
    def gold_dir(self) -> Path:
        return self.root / "gold"

    @property
    def runs_dir(self) -> Path:
        return self.root / "runs"

    @property
    def reports_dir(self) -> Path:
        return self.root / "reports"

    def run_dir(self, run_id: str) -> Path:
        path = self.runs_dir / run_id
        path.mkdir(parents=True, exist_ok=True)
        return path

    # -- manifest --------------------------------------------------------------

    @property
    def manifest_path(self) -> Path:
        return self.root / "manifest.jsonl"

    def manifest_append(
        self,
        stage: str,
        inputs: list[str | Path] | None = None,
        outputs: list[str | Path] | None = None,
        params: dict[str, Any] | None = None,
    ) -> dict[str, Any]:
        entry = {
            "stage": stage,
            "entry_id": uuid.uuid4().hex[:12],
            "timestamp": time.time(),
            "inputs": [self._artifact_ref(p) for p in (inputs or [])],
            "outputs": [self._artifact_ref(p) for p in (outputs or [])],
            "params": params or {},
        }
        with open(self.manifest_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(entry, ensure_ascii=False) + "\n")
        return entry

    def _artifact_ref(self, path: str | Path) -> dict[str, str]:
        path = Path(path)
        ref = {"name": str(path)}
        if path.is_file():
            ref["sha256"] = file_sha256(path)
        return ref

    def manifest_entries(self) -> list[dict[str, Any]]:
        if not self.manifest_path.exists():
            return []
        with open(self.manifest_path, "r", encoding="utf-8") as fh:
            return [json.loads(line) for line in fh if line.strip()]

    # -- sessions ----------------------------------------------------------------

    def add_session(self, annotator_id: str, role: str, token: str) -> None:
        if role not in ("annotator", "adjudicator", "admin"):
            raise StoreError(f"unknown role {role!r}")
        with open(self.sessions_path, "a", encoding="utf-8") as fh:
            fh.write(
                json.dumps({"annotator_id": annotator_id, "role": role, "token": token}) + "\n"
            )

    def sessions(self) -> dict[str, dict[str, str]]:
        """token -> {annotator_id, role}"""
        out: dict[str, dict[str, str]] = {}
        if not self.sessions_path.exists():
            return out
        with open(self.sessions_path, "r", encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                row = json.loads(line)
                out[row["token"]] = {"annotator_id": row["annotator_id"], "role": row["role"]}
        return out


def file_sha256(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def append_jsonl(path: str | Path, line: str) -> None:
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(line + "\n")
