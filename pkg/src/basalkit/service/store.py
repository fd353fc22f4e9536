"""Append-only event-log persistence for patient records.

Each patient's history is a JSONL file: the first record is the profile,
every later record an FBG reading or an injected dose. The log is the
source of truth; anything derived (model estimates) is reconstructed by
replaying it, which keeps dose recommendations auditable.
"""

from __future__ import annotations

import json
import threading
from pathlib import Path


class UnknownPatient(KeyError):
    pass


class DuplicatePatient(ValueError):
    pass


class EventStore:
    """One JSONL file per patient; appends are serialized per patient."""

    def __init__(self, data_dir: str | Path):
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self._locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()

    def _path(self, patient_id: str) -> Path:
        safe = "".join(c for c in patient_id if c.isalnum() or c in "-_")
        if safe != patient_id or not safe:
            raise ValueError(f"patient id must be non-empty alphanumeric/-/_ (got {patient_id!r})")
        return self.data_dir / f"{safe}.jsonl"

    def lock(self, patient_id: str) -> threading.Lock:
        with self._locks_guard:
            return self._locks.setdefault(patient_id, threading.Lock())

    def exists(self, patient_id: str) -> bool:
        return self._path(patient_id).exists()

    def create(self, patient_id: str, profile: dict) -> None:
        path = self._path(patient_id)
        with self.lock(patient_id):
            if path.exists():
                raise DuplicatePatient(patient_id)
            path.write_text(json.dumps({"type": "created", "profile": profile}) + "\n")

    def append(self, patient_id: str, event: dict) -> None:
        path = self._path(patient_id)
        with self.lock(patient_id):
            if not path.exists():
                raise UnknownPatient(patient_id)
            with open(path, "a") as fh:
                fh.write(json.dumps(event) + "\n")
                fh.flush()

    def events(self, patient_id: str) -> list[dict]:
        path = self._path(patient_id)
        if not path.exists():
            raise UnknownPatient(patient_id)
        return [json.loads(line) for line in path.read_text().splitlines() if line.strip()]

    def patient_ids(self) -> list[str]:
        return sorted(p.stem for p in self.data_dir.glob("*.jsonl"))
