"""Research task definitions, frozen GT snapshots, and standalone bundles.

A task binds a GT source (a collection subset, or an external archive) to
an input format and one or more evaluation protocols.  Rankings must stay
stable against later GT edits, so evaluation always runs against a frozen
snapshot: a content-addressed archive with sorted entries, stored
uncompressed with zeroed timestamps so the same GT always hashes the same.
"""

from __future__ import annotations

import hashlib
import io
import json
import stat
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

from .annotations import iter_nodes
from .datastore import Store, SUBSETS, UnknownCollection
from .evalcore import GtRegion
from .evalrun import gt_line, load_gt_archive, resolve_params
from .fileio import read_json, write_json_atomic
from .geometry import Quad
from .ingest import DEFAULT_PATTERN, GRAMMARS


class TaskError(Exception):
    pass


class UnresolvableGT(TaskError):
    pass


class BadParams(TaskError):
    def __init__(self, protocol: str, key: str, message: str = ""):
        self.protocol = protocol
        self.key = key
        super().__init__(f"protocol {protocol!r}, parameter {key!r}: {message}")


class UnknownTask(TaskError):
    pass


class NoFrozenGT(TaskError):
    pass


class SequesteredLeak(TaskError):
    pass


@dataclass(frozen=True)
class FormatSpec:
    id: str
    line_grammar: str
    archive_rule: str = DEFAULT_PATTERN
    encoding: str = "utf-8"

    def as_dict(self) -> dict:
        return {
            "id": self.id,
            "line_grammar": self.line_grammar,
            "archive_rule": self.archive_rule,
            "encoding": self.encoding,
        }


BUILTIN_FORMATS = {grammar: FormatSpec(id=grammar, line_grammar=grammar) for grammar in GRAMMARS}


@dataclass(frozen=True)
class EvaluationProtocol:
    id: str
    kind: str
    params: dict = field(default_factory=dict)
    per_sample: bool = True

    def as_dict(self) -> dict:
        return {
            "id": self.id,
            "kind": self.kind,
            "params": dict(self.params),
            "per_sample": self.per_sample,
        }


@dataclass
class ResearchTask:
    challenge_id: str
    task_id: str
    title: str
    gt_source: dict
    input_format: FormatSpec
    evaluations: list[EvaluationProtocol]
    default_evaluation: int = 0
    gt_snapshot: str | None = None

    @property
    def tid(self) -> str:
        return f"{self.challenge_id}__{self.task_id}"

    def protocol(self, protocol_id: str) -> EvaluationProtocol:
        for proto in self.evaluations:
            if proto.id == protocol_id:
                return proto
        raise UnknownTask(f"task {self.tid} has no protocol {protocol_id!r}")

    @property
    def is_sequestered(self) -> bool:
        internal = self.gt_source.get("internal")
        return bool(internal) and internal.get("subset") == "sequestered-test"

    def as_dict(self) -> dict:
        return {
            "challenge_id": self.challenge_id,
            "task_id": self.task_id,
            "title": self.title,
            "gt_source": self.gt_source,
            "input_format": self.input_format.as_dict(),
            "evaluations": [e.as_dict() for e in self.evaluations],
            "default_evaluation": self.default_evaluation,
            "gt_snapshot": self.gt_snapshot,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ResearchTask":
        fmt = data["input_format"]
        return cls(
            challenge_id=data["challenge_id"],
            task_id=data["task_id"],
            title=data["title"],
            gt_source=data["gt_source"],
            input_format=FormatSpec(
                id=fmt["id"],
                line_grammar=fmt["line_grammar"],
                archive_rule=fmt.get("archive_rule", DEFAULT_PATTERN),
                encoding=fmt.get("encoding", "utf-8"),
            ),
            evaluations=[
                EvaluationProtocol(
                    id=e["id"], kind=e["kind"], params=e.get("params", {}),
                    per_sample=e.get("per_sample", True),
                )
                for e in data["evaluations"]
            ],
            default_evaluation=data.get("default_evaluation", 0),
            gt_snapshot=data.get("gt_snapshot"),
        )


def canonical_zip(entries: dict[str, bytes]) -> bytes:
    """Reproducible archive: sorted paths, zeroed timestamps, stored uncompressed."""
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", compression=zipfile.ZIP_STORED) as zf:
        for name in sorted(entries):
            info = zipfile.ZipInfo(name, date_time=(1980, 1, 1, 0, 0, 0))
            info.external_attr = (stat.S_IFREG | 0o644) << 16
            info.create_system = 3
            zf.writestr(info, entries[name])
    return buf.getvalue()


class TaskStore:
    def __init__(self, store: Store):
        self.store = store
        self.dir = store.root / "tasks"

    def _task_dir(self, tid: str) -> Path:
        return self.dir / tid

    def define_task(
        self,
        challenge_id: str,
        task_id: str,
        title: str,
        gt_source: dict,
        input_format: str,
        evaluations: list[dict],
        default_evaluation: int = 0,
    ) -> ResearchTask:
        if input_format not in BUILTIN_FORMATS:
            raise BadParams("input_format", input_format, f"unknown format; use one of {GRAMMARS}")
        if not evaluations:
            raise BadParams("evaluations", "", "at least one evaluation protocol is required")
        protos: list[EvaluationProtocol] = []
        seen_ids: set[str] = set()
        for entry in evaluations:
            pid = entry.get("id") or entry["kind"]
            if pid in seen_ids:
                raise BadParams(pid, "id", "duplicate protocol id")
            seen_ids.add(pid)
            try:
                resolve_params(entry["kind"], entry.get("params"))
            except (ValueError, TypeError) as exc:
                raise BadParams(pid, str(entry.get("params")), str(exc)) from exc
            protos.append(
                EvaluationProtocol(
                    id=pid,
                    kind=entry["kind"],
                    params=entry.get("params", {}),
                    per_sample=entry.get("per_sample", True),
                )
            )
        if not 0 <= default_evaluation < len(protos):
            raise BadParams("default_evaluation", str(default_evaluation), "index out of range")
        self._check_gt_source(gt_source)
        task = ResearchTask(
            challenge_id=challenge_id,
            task_id=task_id,
            title=title,
            gt_source=gt_source,
            input_format=BUILTIN_FORMATS[input_format],
            evaluations=protos,
            default_evaluation=default_evaluation,
        )
        write_json_atomic(self._task_dir(task.tid) / "task.json", task.as_dict())
        return task

    def _check_gt_source(self, gt_source: dict) -> None:
        internal = gt_source.get("internal")
        external = gt_source.get("external")
        if bool(internal) == bool(external):
            raise UnresolvableGT("gt_source needs exactly one of internal/external")
        if internal:
            if internal.get("subset") not in SUBSETS:
                raise UnresolvableGT(f"unknown subset {internal.get('subset')!r}")
            try:
                self.store.collection(internal["collection"])
            except UnknownCollection as exc:
                raise UnresolvableGT(str(exc)) from exc
        else:
            if not Path(external["path"]).exists():
                raise UnresolvableGT(f"external GT archive {external['path']} not found")

    def load_task(self, tid: str) -> ResearchTask:
        path = self._task_dir(tid) / "task.json"
        if not path.exists():
            raise UnknownTask(tid)
        return ResearchTask.from_dict(read_json(path))

    def list_tasks(self) -> list[ResearchTask]:
        if not self.dir.is_dir():
            return []
        return [
            ResearchTask.from_dict(read_json(p))
            for p in sorted(self.dir.glob("*/task.json"))
        ]

    # -- GT snapshots -----------------------------------------------------------

    def freeze_gt(self, tid: str) -> str:
        """Copy the task's GT into an immutable snapshot; returns its hash."""
        task = self.load_task(tid)
        entries = self._collect_gt_entries(task)
        data = canonical_zip(entries)
        digest = hashlib.sha256(data).hexdigest()
        snap_path = self._task_dir(tid) / "snapshots" / f"{digest}.zip"
        if not snap_path.exists():
            snap_path.parent.mkdir(parents=True, exist_ok=True)
            snap_path.write_bytes(data)
        task.gt_snapshot = digest
        write_json_atomic(self._task_dir(tid) / "task.json", task.as_dict())
        return digest

    def _collect_gt_entries(self, task: ResearchTask) -> dict[str, bytes]:
        internal = task.gt_source.get("internal")
        if internal:
            coll = self.store.collection(internal["collection"])
            images = coll.images_in_subset(internal["subset"])
            entries: dict[str, bytes] = {}
            index = []
            for rec in sorted(images, key=lambda r: r.id):
                head = coll.head_revision(rec.id)
                regions: list[GtRegion] = []
                if head:
                    version = coll.load_annotation(rec.id)
                    for node in iter_nodes(version.tree):
                        if node.granularity == "word" and isinstance(node.region, Quad):
                            regions.append(
                                GtRegion(
                                    node_id=node.id,
                                    quad=node.region,
                                    care=node.care,
                                    transcription=node.transcription,
                                )
                            )
                text = "".join(gt_line(r) + "\n" for r in regions)
                entries[f"gt_{rec.id}.txt"] = text.encode("utf-8")
                index.append(
                    {"id": rec.id, "width": rec.width, "height": rec.height, "revision": head}
                )
            entries["snapshot.json"] = (
                json.dumps({"task": task.tid, "images": index}, ensure_ascii=False, indent=2)
                + "\n"
            ).encode("utf-8")
            return entries
        data = Path(task.gt_source["external"]["path"]).read_bytes()
        gt = load_gt_archive(data)  # validates and normalizes
        entries = {}
        for image_id in sorted(gt.regions):
            text = "".join(gt_line(r) + "\n" for r in gt.regions[image_id])
            entries[f"gt_{image_id}.txt"] = text.encode("utf-8")
        entries["snapshot.json"] = (
            json.dumps({"task": task.tid, "images": gt.images}, ensure_ascii=False, indent=2)
            + "\n"
        ).encode("utf-8")
        return entries

    def snapshot_bytes(self, tid: str, digest: str | None = None) -> bytes:
        task = self.load_task(tid)
        digest = digest or task.gt_snapshot
        if not digest:
            raise NoFrozenGT(f"task {tid} has no frozen GT; run freeze_gt first")
        path = self._task_dir(tid) / "snapshots" / f"{digest}.zip"
        if not path.exists():
            raise NoFrozenGT(f"snapshot {digest} missing for task {tid}")
        return path.read_bytes()

    # -- standalone bundles -------------------------------------------------------

    def export_standalone_bundle(
        self, tid: str, evaluation_id: str | None = None, ui_assets: dict[str, bytes] | None = None
    ) -> bytes:
        """Self-contained archive: GT + task descriptor + serve entrypoint + UI."""
        task = self.load_task(tid)
        if task.is_sequestered:
            raise SequesteredLeak(
                f"task {tid} is bound to the sequestered test subset; bundles "
                "can only be built from public subsets"
            )
        gt_zip = self.snapshot_bytes(tid)
        if evaluation_id is not None:
            task.protocol(evaluation_id)  # raises UnknownTask for bad ids
        descriptor = dict(task.as_dict())
        descriptor["bundle_evaluation"] = evaluation_id or task.evaluations[task.default_evaluation].id
        entries: dict[str, bytes] = {
            "task.json": (json.dumps(descriptor, ensure_ascii=False, indent=2) + "\n").encode(),
            "gt/gt.zip": gt_zip,
            "serve": _SERVE_SCRIPT.encode("utf-8"),
        }
        if ui_assets is None:
            from .bundle import default_ui_assets

            ui_assets = default_ui_assets()
        for name, data in ui_assets.items():
            entries[f"ui/{name}"] = data
        return canonical_zip(entries)


_SERVE_SCRIPT = """\
#!/usr/bin/env python3
\"\"\"Standalone entrypoint: `python serve` runs the local portal,
`python serve eval --subm RES.zip -o OUT/` evaluates offline.\"\"\"
import pathlib
import sys

from rrcplat.bundle import main

if __name__ == "__main__":
    sys.exit(main(pathlib.Path(__file__).resolve().parent, sys.argv[1:]))
"""
