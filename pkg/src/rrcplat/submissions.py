"""Submission records: uploaded archives, validation reports, results.

Layout: ``submissions/<sid>/{meta.json, submission.zip, validation.json,
results/<protocol>/overall.json, results/<protocol>/per_sample/*.json}``.
Results directories are committed atomically by the evaluation service.
"""

from __future__ import annotations

import secrets
import time
from dataclasses import dataclass, field
from pathlib import Path

from .datastore import now_iso
from .fileio import read_json, write_atomic, write_json_atomic
from .ingest import ValidationReport


class UnknownSubmission(Exception):
    pass


@dataclass
class SubmissionRecord:
    id: str
    task: str
    owner: str
    method_name: str
    description: str = ""
    uploaded_at: str = ""
    visibility: str = "private"
    validation_ok: bool = False
    gt_snapshot: str | None = None

    def as_dict(self) -> dict:
        return dict(self.__dict__)


class SubmissionStore:
    def __init__(self, root: Path):
        self.dir = Path(root) / "submissions"

    def _sdir(self, sid: str) -> Path:
        return self.dir / sid

    def create(
        self,
        task: str,
        owner: str,
        method_name: str,
        description: str,
        archive: bytes,
        report: ValidationReport,
        gt_snapshot: str | None,
    ) -> SubmissionRecord:
        sid = f"s-{int(time.time() * 1000):013d}-{secrets.token_hex(3)}"
        record = SubmissionRecord(
            id=sid,
            task=task,
            owner=owner,
            method_name=method_name,
            description=description,
            uploaded_at=now_iso(),
            validation_ok=report.ok,
            gt_snapshot=gt_snapshot,
        )
        sdir = self._sdir(sid)
        write_atomic(sdir / "submission.zip", archive)
        write_json_atomic(sdir / "validation.json", report.as_dict())
        write_json_atomic(sdir / "meta.json", record.as_dict())
        return record

    def load(self, sid: str) -> SubmissionRecord:
        path = self._sdir(sid) / "meta.json"
        if not path.exists():
            raise UnknownSubmission(sid)
        return SubmissionRecord(**read_json(path))

    def archive_bytes(self, sid: str) -> bytes:
        return (self._sdir(sid) / "submission.zip").read_bytes()

    def validation(self, sid: str) -> dict:
        return read_json(self._sdir(sid) / "validation.json")

    def set_visibility(self, sid: str, visibility: str) -> SubmissionRecord:
        if visibility not in ("private", "public"):
            raise ValueError(f"visibility must be private|public, got {visibility!r}")
        record = self.load(sid)
        record.visibility = visibility
        write_json_atomic(self._sdir(sid) / "meta.json", record.as_dict())
        return record

    def list_for_task(self, task: str) -> list[SubmissionRecord]:
        if not self.dir.is_dir():
            return []
        records = []
        for meta in sorted(self.dir.glob("s-*/meta.json")):
            record = SubmissionRecord(**read_json(meta))
            if record.task == task:
                records.append(record)
        return records

    def results_dir(self, sid: str, protocol_id: str) -> Path:
        return self._sdir(sid) / "results" / protocol_id

    def has_results(self, sid: str, protocol_id: str) -> bool:
        return (self.results_dir(sid, protocol_id) / "overall.json").exists()

    def overall_bytes(self, sid: str, protocol_id: str) -> bytes:
        path = self.results_dir(sid, protocol_id) / "overall.json"
        if not path.exists():
            raise UnknownSubmission(f"{sid} has no results for {protocol_id}")
        return path.read_bytes()

    def per_sample_bytes(self, sid: str, protocol_id: str, image_id: str) -> bytes:
        path = self.results_dir(sid, protocol_id) / "per_sample" / f"{image_id}.json"
        if not path.exists():
            raise UnknownSubmission(f"{sid} has no per-sample record for {image_id}")
        return path.read_bytes()
