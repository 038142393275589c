"""HTTP portal: accounts, submissions, rankings, exploration, annotation.

Stateless request handlers over the shared store; any number of portal
instances can run next to the workers because every write goes through
the same rename/link discipline the other modules use.  Responses never
include password hashes, and ground truth bound to a sequestered subset
is never serialized into any response.
"""

from __future__ import annotations

import base64
import io
import json
from datetime import timedelta
from pathlib import Path

import numpy as np
from fastapi import Depends, FastAPI, File, Form, Header, Request, UploadFile
from fastapi.responses import JSONResponse, Response
from PIL import Image

from . import annotations as ann
from . import datastore, workflow
from .datastore import Store
from .evalrun import load_gt_archive
from .evalservice import JobQueue
from .geometry import (
    GeometryError,
    Homography,
    canonicalize_quad,
    quad_aspect,
    rectification_homography,
)
from .ingest import validate_archive
from .submissions import SubmissionStore, UnknownSubmission
from .taskdef import NoFrozenGT, SequesteredLeak, TaskError, TaskStore, UnknownTask
from .users import DuplicateEmail, UserAccount, UserStore
from .workflow import WorkflowEngine

DEFAULT_MAX_UPLOAD = 256 * 1024 * 1024

_STATUS_BY_EXC: list[tuple[type[Exception], int]] = [
    (datastore.Forbidden, 403),
    (SequesteredLeak, 403),
    (datastore.UnknownCollection, 404),
    (datastore.UnknownImage, 404),
    (datastore.NoSuchRevision, 404),
    (UnknownTask, 404),
    (UnknownSubmission, 404),
    (workflow.UnknownNode, 404),
    (NoFrozenGT, 409),
    (datastore.StaleHead, 409),
    (workflow.AlreadyReservedByOther, 409),
    (workflow.NotEligible, 409),
    (workflow.NotReservedByYou, 409),
    (workflow.NoAnnotationSaved, 409),
    (workflow.WrongState, 409),
    (workflow.StaleReservation, 409),
    (workflow.StageOrderViolation, 409),
    (workflow.NothingEligible, 404),
    (workflow.NoWords, 404),
    (workflow.CommentRequired, 422),
    (ann.InvalidTree, 422),
    (datastore.InvalidSubset, 422),
    (datastore.UndecodableImage, 422),
    (datastore.MissingMask, 422),
    (GeometryError, 400),
    (DuplicateEmail, 409),
    (datastore.DuplicateId, 409),
    (TaskError, 422),
    (workflow.WorkflowError, 409),
    (datastore.DatastoreError, 422),
]


class HttpError(Exception):
    def __init__(self, status: int, code: str, detail):
        self.status = status
        self.code = code
        self.detail = detail
        super().__init__(f"{status} {code}")


class PortalContext:
    def __init__(self, store_root: Path, max_upload: int = DEFAULT_MAX_UPLOAD):
        self.root = Path(store_root)
        self.store = Store(self.root)
        self.tasks = TaskStore(self.store)
        self.submissions = SubmissionStore(self.root)
        self.users = UserStore(self.root)
        self.queue = JobQueue(self.root)
        self.max_upload = max_upload

    def engine(self, cid: str) -> WorkflowEngine:
        return WorkflowEngine(self.store.collection(cid))


def create_app(store_root: Path | str, max_upload: int = DEFAULT_MAX_UPLOAD) -> FastAPI:
    ctx = PortalContext(Path(store_root), max_upload)
    app = FastAPI(title="rrcplat portal", version="0.1.0")
    app.state.ctx = ctx

    def on_http_error(request: Request, exc: HttpError) -> JSONResponse:
        return JSONResponse(
            status_code=exc.status, content={"error": exc.code, "detail": exc.detail}
        )

    app.add_exception_handler(HttpError, on_http_error)

    def on_domain_error(request: Request, exc: Exception) -> JSONResponse:
        for klass, status in _STATUS_BY_EXC:
            if isinstance(exc, klass):
                return JSONResponse(
                    status_code=status,
                    content={"error": type(exc).__name__, "detail": str(exc)},
                )
        raise exc

    for klass, _ in _STATUS_BY_EXC:
        app.add_exception_handler(klass, on_domain_error)

    # -- auth ---------------------------------------------------------------------

    def current_user(authorization: str | None = Header(default=None)) -> UserAccount | None:
        if not authorization or not authorization.startswith("Bearer "):
            return None
        return ctx.users.session_user(authorization.removeprefix("Bearer "))

    def require_user(user: UserAccount | None = Depends(current_user)) -> UserAccount:
        if user is None:
            raise HttpError(401, "Unauthenticated", "a valid session token is required")
        return user

    def member_engine(cid: str, user: UserAccount) -> WorkflowEngine:
        engine = ctx.engine(cid)
        if engine.coll.role_of(user.id) is None:
            raise datastore.Forbidden(f"{user.id} is not a member of {cid}")
        return engine

    # -- users / sessions -----------------------------------------------------------

    @app.post("/api/users", status_code=201)
    def register(payload: dict):
        account = ctx.users.register(
            payload["email"], payload.get("display_name", ""), payload["password"]
        )
        return account.public_dict()

    @app.post("/api/sessions")
    def login(payload: dict):
        account = ctx.users.authenticate(payload["email"], payload["password"])
        if account is None:
            raise HttpError(401, "BadCredentials", "email or password incorrect")
        token = ctx.users.create_session(account.id)
        return {"token": token, "user": account.public_dict()}

    # -- tasks and rankings -----------------------------------------------------------

    @app.get("/api/tasks")
    def list_tasks():
        return [
            {
                "tid": t.tid,
                "challenge_id": t.challenge_id,
                "task_id": t.task_id,
                "title": t.title,
                "evaluations": [e.as_dict() for e in t.evaluations],
                "default_evaluation": t.default_evaluation,
                "input_format": t.input_format.as_dict(),
                "sequestered": t.is_sequestered,
            }
            for t in ctx.tasks.list_tasks()
        ]

    @app.get("/api/tasks/{tid}")
    def get_task(tid: str):
        task = ctx.tasks.load_task(tid)
        data = task.as_dict()
        data["tid"] = task.tid
        data["sequestered"] = task.is_sequestered
        return data

    def _resolve_protocol(task, protocol: str | None):
        if protocol is None:
            return task.evaluations[task.default_evaluation]
        return task.protocol(protocol)

    @app.post("/api/tasks/{tid}/submissions", status_code=202)
    async def upload_submission(
        tid: str,
        archive: UploadFile = File(...),
        method_name: str = Form(...),
        description: str = Form(""),
        user: UserAccount = Depends(require_user),
    ):
        task = ctx.tasks.load_task(tid)
        if task.gt_snapshot is None:
            raise HttpError(409, "NoFrozenGT", f"task {tid} is not open for submissions yet")
        data = await archive.read()
        if len(data) > ctx.max_upload:
            raise HttpError(413, "TooLarge", f"archive exceeds {ctx.max_upload} bytes")
        gt = load_gt_archive(ctx.tasks.snapshot_bytes(tid))
        report, _ = validate_archive(
            data, gt.image_ids, task.input_format.line_grammar, task.input_format.archive_rule
        )
        if not report.ok:
            raise HttpError(422, "ValidationFailed", report.as_dict())
        record = ctx.submissions.create(
            tid, user.id, method_name, description, data, report, task.gt_snapshot
        )
        ctx.queue.enqueue(record.id, task)
        return {
            "id": record.id,
            "validation": report.as_dict(),
            "protocols": {e.id: "pending" for e in task.evaluations},
        }

    def _visible(record, user: UserAccount | None) -> bool:
        if record.visibility == "public":
            return True
        return user is not None and user.id == record.owner

    def _evaluated_rows(tid: str, protocol_id: str, user: UserAccount | None):
        rows = []
        for record in ctx.submissions.list_for_task(tid):
            if not ctx.submissions.has_results(record.id, protocol_id):
                continue
            if not _visible(record, user):
                continue
            overall = json.loads(ctx.submissions.overall_bytes(record.id, protocol_id))
            try:
                owner_display = ctx.users.get(record.owner).display_name or record.owner
            except Exception:
                owner_display = record.owner
            rows.append(
                {
                    "submission": record.id,
                    "method": record.method_name,
                    "owner": owner_display,
                    "date": record.uploaded_at,
                    "precision": overall["precision"],
                    "recall": overall["recall"],
                    "hmean": overall["hmean"],
                    "private": record.visibility != "public",
                }
            )
        return rows

    @app.get("/api/tasks/{tid}/rankings")
    def rankings(tid: str, protocol: str | None = None,
                 user: UserAccount | None = Depends(current_user)):
        task = ctx.tasks.load_task(tid)
        proto = _resolve_protocol(task, protocol)
        rows = _evaluated_rows(tid, proto.id, user)
        rows.sort(key=lambda r: (-r["hmean"], r["date"]))
        return {"task": tid, "protocol": proto.id, "rows": rows}

    @app.get("/api/tasks/{tid}/sota")
    def sota(tid: str, protocol: str | None = None):
        task = ctx.tasks.load_task(tid)
        proto = _resolve_protocol(task, protocol)
        rows = [r for r in _evaluated_rows(tid, proto.id, None) if not r["private"]]
        rows.sort(key=lambda r: r["date"])
        by_day: dict[str, dict] = {}
        for row in rows:
            day = row["date"][:10]
            if day not in by_day or row["hmean"] > by_day[day]["hmean"]:
                by_day[day] = row
        series = []
        best: dict | None = None
        for day in sorted(by_day):
            row = by_day[day]
            if best is None or row["hmean"] > best["hmean"]:
                best = row
            series.append({"date": day, "hmean": best["hmean"], "method": best["method"]})
        return {"task": tid, "protocol": proto.id, "series": series}

    @app.get("/api/tasks/{tid}/bundle")
    def bundle(tid: str, evaluation: str | None = None):
        data = ctx.tasks.export_standalone_bundle(tid, evaluation)
        return Response(
            content=data,
            media_type="application/zip",
            headers={"Content-Disposition": f'attachment; filename="{tid}-bundle.zip"'},
        )

    # -- submissions ------------------------------------------------------------------

    def _load_visible_submission(sid: str, user: UserAccount | None):
        record = ctx.submissions.load(sid)
        if not _visible(record, user):
            raise HttpError(403, "Forbidden", "this submission is private")
        return record

    @app.get("/api/submissions/{sid}")
    def get_submission(sid: str, user: UserAccount | None = Depends(current_user)):
        record = _load_visible_submission(sid, user)
        task = ctx.tasks.load_task(record.task)
        protocols = {}
        for proto in task.evaluations:
            if ctx.submissions.has_results(sid, proto.id):
                state = "done"
            else:
                state = ctx.queue.job_state(sid, proto.id) or "missing"
            protocols[proto.id] = state
        return {
            **record.as_dict(),
            "protocols": protocols,
            "validation": ctx.submissions.validation(sid),
        }

    @app.get("/api/submissions/{sid}/results/{protocol}/overall.json")
    def overall_json(sid: str, protocol: str,
                     user: UserAccount | None = Depends(current_user)):
        _load_visible_submission(sid, user)
        return Response(
            content=ctx.submissions.overall_bytes(sid, protocol),
            media_type="application/json",
        )

    @app.put("/api/submissions/{sid}/visibility")
    def set_visibility(sid: str, payload: dict, user: UserAccount = Depends(require_user)):
        record = ctx.submissions.load(sid)
        if record.owner != user.id:
            raise HttpError(403, "Forbidden", "only the owner can change visibility")
        record = ctx.submissions.set_visibility(sid, payload["visibility"])
        return record.as_dict()

    def _sample_payload(record, image_id: str, protocol_id: str) -> dict:
        task = ctx.tasks.load_task(record.task)
        sample = json.loads(
            ctx.submissions.per_sample_bytes(record.id, protocol_id, image_id)
        )
        grammar = task.input_format.line_grammar
        dets = []
        if grammar != "transcription-only":
            import zipfile

            from .ingest import parse_result_file

            archive = zipfile.ZipFile(io.BytesIO(ctx.submissions.archive_bytes(record.id)))
            name = task.input_format.archive_rule.replace("{image_id}", image_id)
            if name in archive.namelist():
                parsed, _ = parse_result_file(archive.read(name).decode("utf-8"), grammar)
                for i, det in enumerate(parsed):
                    dets.append(
                        {
                            "index": i,
                            "points": [list(p) for p in det.quad.corners] if det.quad else None,
                            "confidence": det.confidence,
                            "transcription": det.transcription,
                        }
                    )
        payload = {
            "image": image_id,
            "protocol": protocol_id,
            "sample": sample,
            "detections": dets,
            "gt": None,
        }
        if not task.is_sequestered:
            gt = load_gt_archive(ctx.tasks.snapshot_bytes(record.task, record.gt_snapshot))
            payload["gt"] = [
                {
                    "node_id": r.node_id,
                    "points": [list(p) for p in r.quad.corners],
                    "care": r.care,
                    "transcription": r.transcription,
                }
                for r in gt.regions.get(image_id, [])
            ]
        return payload

    @app.get("/api/submissions/{sid}/samples/{image_id}")
    def per_sample(sid: str, image_id: str, protocol: str | None = None,
                   user: UserAccount | None = Depends(current_user)):
        record = _load_visible_submission(sid, user)
        task = ctx.tasks.load_task(record.task)
        proto = _resolve_protocol(task, protocol)
        return _sample_payload(record, image_id, proto.id)

    @app.get("/api/tasks/{tid}/compare")
    def compare(tid: str, ids: str = "", image: str = "", protocol: str | None = None,
                user: UserAccount | None = Depends(current_user)):
        task = ctx.tasks.load_task(tid)
        proto = _resolve_protocol(task, protocol)
        id_list = [s for s in ids.split(",") if s]
        results = []
        for sid in id_list:
            record = _load_visible_submission(sid, user)  # 403 on any invisible id
            results.append(_sample_payload(record, image, proto.id))
        return {"task": tid, "protocol": proto.id, "image": image, "methods": results}

    # -- collections / annotation workflow ----------------------------------------------

    @app.post("/api/collections", status_code=201)
    def create_collection(payload: dict, user: UserAccount = Depends(require_user)):
        if user.role not in ("organizer", "admin"):
            raise HttpError(403, "Forbidden", "creating collections needs the organizer role")
        coll = ctx.store.create_collection(payload["id"], payload.get("title", ""), user.id)
        return {"id": coll.id, "title": coll.title, "members": coll.members}

    @app.post("/api/collections/{cid}/members")
    def add_member(cid: str, payload: dict, user: UserAccount = Depends(require_user)):
        coll = ctx.store.collection(cid)
        updated = coll.add_member(payload["user"], payload["role"], actor=user.id)
        return {"id": updated.id, "members": updated.members}

    @app.post("/api/collections/{cid}/images", status_code=201)
    async def import_image(cid: str, image: UploadFile = File(...),
                           user: UserAccount = Depends(require_user)):
        engine = member_engine(cid, user)
        data = await image.read()
        result = engine.coll.import_image(data, image.filename or "upload", actor=user.id)
        return {"record": result.record.__dict__, "duplicate": result.duplicate}

    @app.get("/api/collections/{cid}/images/{iid}")
    def image_bytes(cid: str, iid: str, user: UserAccount | None = Depends(current_user)):
        coll = ctx.store.collection(cid)
        rec = coll.image_record(iid)
        is_member = user is not None and coll.role_of(user.id) is not None
        if rec.subset in ("sequestered-test", "unassigned") and not is_member:
            raise HttpError(403, "Forbidden", "image is not publicly visible")
        media = "image/png" if rec.ext == "png" else "image/jpeg"
        return Response(content=coll.image_path(iid).read_bytes(), media_type=media)

    @app.get("/api/collections/{cid}/images/{iid}/annotation")
    def get_annotation(cid: str, iid: str, revision: int | None = None,
                       user: UserAccount = Depends(require_user)):
        engine = member_engine(cid, user)
        version = engine.coll.load_annotation(iid, revision)
        return {
            "image": iid,
            "revision": version.revision,
            "author": version.author,
            "timestamp": version.timestamp,
            "change_note": version.change_note,
            "tree": ann.tree_to_json(version.tree),
        }

    @app.put("/api/collections/{cid}/images/{iid}/annotation")
    def save_annotation(cid: str, iid: str, payload: dict,
                        user: UserAccount = Depends(require_user)):
        engine = member_engine(cid, user)
        engine.check_active_reservation(iid, user.id)
        tree = ann.tree_from_json(payload["tree"])
        version = engine.coll.save_annotation(
            iid, tree, user.id,
            expected_head=int(payload["expected_head"]),
            change_note=payload.get("change_note", ""),
        )
        return {"image": iid, "revision": version.revision}

    @app.post("/api/collections/{cid}/images/{iid}/reserve")
    def reserve(cid: str, iid: str, payload: dict | None = None,
                user: UserAccount = Depends(require_user)):
        engine = member_engine(cid, user)
        hours = float((payload or {}).get("duration_hours", 24.0))
        item = engine.reserve(iid, user.id, timedelta(hours=hours))
        return item.__dict__

    @app.post("/api/collections/{cid}/images/{iid}/release")
    def release(cid: str, iid: str, user: UserAccount = Depends(require_user)):
        engine = member_engine(cid, user)
        return engine.release(iid, user.id).__dict__

    @app.post("/api/collections/{cid}/images/{iid}/submit")
    def submit_for_review(cid: str, iid: str, user: UserAccount = Depends(require_user)):
        engine = member_engine(cid, user)
        return engine.submit_for_review(iid, user.id).__dict__

    @app.post("/api/collections/{cid}/images/{iid}/review")
    def review(cid: str, iid: str, payload: dict, user: UserAccount = Depends(require_user)):
        engine = member_engine(cid, user)
        item = engine.review(
            iid, user.id, payload["action"],
            rating=payload.get("rating"), comment=payload.get("comment"),
        )
        return item.__dict__

    @app.get("/api/collections/{cid}/dashboard")
    def dashboard(cid: str, state: str | None = None, assignee: str | None = None,
                  rating: int | None = None, user: UserAccount = Depends(require_user)):
        engine = member_engine(cid, user)
        return {"collection": cid, "rows": engine.dashboard(state, assignee, rating)}

    @app.post("/api/collections/{cid}/subset-assignments")
    def assign_subset(cid: str, payload: dict, user: UserAccount = Depends(require_user)):
        coll = ctx.store.collection(cid)
        count = coll.assign_subset(payload["image_ids"], payload["subset"], actor=user.id)
        return {"updated": count}

    # -- verification -----------------------------------------------------------------

    @app.get("/api/collections/{cid}/images/{iid}/verification/in-context")
    def in_context_board(cid: str, iid: str, user: UserAccount = Depends(require_user)):
        engine = member_engine(cid, user)
        return engine.in_context_board(iid)

    @app.post("/api/collections/{cid}/images/{iid}/verification/in-context/complete")
    def mark_stage1(cid: str, iid: str, user: UserAccount = Depends(require_user)):
        engine = member_engine(cid, user)
        engine.mark_in_context_complete(iid, user.id)
        return {"image": iid, "stage1_complete": True}

    @app.get("/api/collections/{cid}/verification/out-of-context")
    def out_of_context(cid: str, seed: int = 0, user: UserAccount = Depends(require_user)):
        engine = member_engine(cid, user)
        return {"seed": seed, "queue": engine.out_of_context_queue(seed)}

    @app.post("/api/verification/verdicts")
    def record_verdict(payload: dict, user: UserAccount = Depends(require_user)):
        # single verdict object, or {"verdicts": [...]} batched per board apply
        batch = payload.get("verdicts")
        items = batch if batch is not None else [payload]
        results = []
        for item in items:
            engine = member_engine(item["collection"], user)
            care, revision = engine.record_verdict(
                workflow.VerificationVerdict(
                    image=item["image"],
                    node_id=item["node_id"],
                    stage=item["stage"],
                    verdict=item["verdict"],
                    verifier=user.id,
                )
            )
            results.append(
                {"node_id": item["node_id"], "care": care, "new_revision": revision}
            )
        if batch is None:
            return results[0]
        return {"results": results}

    # -- preview ---------------------------------------------------------------------

    @app.post("/api/preview/rectify")
    def preview_rectify(payload: dict, user: UserAccount = Depends(require_user)):
        engine = member_engine(payload["collection"], user)
        quad = canonicalize_quad([v for p in payload["points"] for v in p])
        crop, h, out_w, out_h = render_rectified(
            engine.coll.image_path(payload["image"]), quad
        )
        return {
            "homography": [list(row) for row in h.m],
            "width": out_w,
            "height": out_h,
            "crop_png_base64": base64.b64encode(crop).decode("ascii"),
        }

    return app


def render_rectified(image_path: Path, quad, out_h: int = 64) -> tuple[bytes, Homography, int, int]:
    """Nearest-neighbor warp of the quad region to a 64px-high rectangle."""
    out_w = max(1, round(out_h * quad_aspect(quad)))
    h = rectification_homography(quad, out_w, out_h)
    inv = np.array(h.inverse().m)
    with Image.open(image_path) as img:
        src = np.asarray(img.convert("RGB"))
    ys, xs = np.mgrid[0:out_h, 0:out_w]
    ones = np.ones_like(xs, dtype=float)
    pts = np.stack([xs + 0.5, ys + 0.5, ones], axis=0).reshape(3, -1)
    mapped = inv @ pts
    mapped /= mapped[2]
    sx = np.clip(np.floor(mapped[0]).astype(int), 0, src.shape[1] - 1)
    sy = np.clip(np.floor(mapped[1]).astype(int), 0, src.shape[0] - 1)
    out = src[sy, sx].reshape(out_h, out_w, 3)
    buf = io.BytesIO()
    Image.fromarray(out).save(buf, format="PNG")
    return buf.getvalue(), h, out_w, out_h
