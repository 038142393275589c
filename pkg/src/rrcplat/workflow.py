"""Annotation lifecycle: reservations, review, and don't-care verification.

Legal states: unannotated -> reserved -> submitted -> {approved,
revision_requested}; revision_requested -> reserved; reserved falls back
to its pre-reservation state on expiry or release.  Mutations are
serialized per image with an advisory file lock, so a reserve storm from
many processes elects exactly one holder.

Verification runs in two passes: an in-context board per image (drag
words between care and don't-care), then an out-of-context pass that
shows words of the whole dataset individually in seeded random order.
The latest verdict in (stage order, timestamp order) owns the care flag.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from pathlib import Path

from .annotations import iter_nodes, set_care
from .datastore import CollectionHandle, StaleHead, now_iso
from .fileio import locked, read_json, write_json_atomic
from .geometry import Quad, quad_aspect, rectification_homography

STATES = ("unannotated", "reserved", "submitted", "revision_requested", "approved")
DEFAULT_RESERVATION = timedelta(hours=24)
MAX_RESERVATION = timedelta(days=7)
STAGES = ("in_context", "out_of_context")
VERDICTS = ("care", "dont_care")


class WorkflowError(Exception):
    pass


class AlreadyReservedByOther(WorkflowError):
    def __init__(self, holder: str, expiry: str):
        self.holder = holder
        self.expiry = expiry
        super().__init__(f"reserved by {holder!r} until {expiry}")


class NotEligible(WorkflowError):
    def __init__(self, state: str):
        self.state = state
        super().__init__(f"cannot reserve from state {state!r}")


class NotReservedByYou(WorkflowError):
    pass


class NoAnnotationSaved(WorkflowError):
    pass


class CommentRequired(WorkflowError):
    pass


class WrongState(WorkflowError):
    pass


class NoWords(WorkflowError):
    pass


class NothingEligible(WorkflowError):
    pass


class StageOrderViolation(WorkflowError):
    pass


class StaleReservation(WorkflowError):
    pass


class UnknownNode(WorkflowError):
    pass


@dataclass
class WorkItem:
    image: str
    state: str = "unannotated"
    assignee: str | None = None
    reservation_expiry: str | None = None
    prior_state: str = "unannotated"
    rating: int | None = None


@dataclass(frozen=True)
class VerificationVerdict:
    image: str
    node_id: str
    stage: str
    verdict: str
    verifier: str
    timestamp: str = ""


def _now(now: datetime | None) -> datetime:
    return now.astimezone(timezone.utc) if now else datetime.now(timezone.utc)


def _iso(dt: datetime) -> str:
    return dt.strftime("%Y-%m-%dT%H:%M:%S.%fZ")


def _parse_iso(text: str) -> datetime:
    for fmt in ("%Y-%m-%dT%H:%M:%S.%fZ", "%Y-%m-%dT%H:%M:%SZ"):
        try:
            return datetime.strptime(text, fmt).replace(tzinfo=timezone.utc)
        except ValueError:
            continue
    raise ValueError(f"bad timestamp {text!r}")


class WorkflowEngine:
    def __init__(self, coll: CollectionHandle):
        self.coll = coll
        self.dir = coll.dir / "workflow"
        self.verification_dir = coll.dir / "verification"

    # -- state persistence -----------------------------------------------------

    def _path(self, iid: str) -> Path:
        return self.dir / f"{iid}.json"

    def _lock(self, iid: str):
        return locked(self.dir / f".{iid}.lock")

    def load(self, iid: str) -> WorkItem:
        self.coll.image_record(iid)
        path = self._path(iid)
        if not path.exists():
            return WorkItem(image=iid)
        return WorkItem(**read_json(path))

    def _save(self, item: WorkItem) -> None:
        write_json_atomic(self._path(item.image), item.__dict__)

    def _effective(self, item: WorkItem, now: datetime) -> WorkItem:
        """Expired reservations read as already released."""
        if (
            item.state == "reserved"
            and item.reservation_expiry
            and _parse_iso(item.reservation_expiry) < now
        ):
            return WorkItem(image=item.image, state=item.prior_state, rating=item.rating,
                            prior_state=item.prior_state)
        return item

    # -- lifecycle ---------------------------------------------------------------

    def reserve(
        self,
        iid: str,
        annotator: str,
        duration: timedelta = DEFAULT_RESERVATION,
        now: datetime | None = None,
    ) -> WorkItem:
        at = _now(now)
        duration = min(duration, MAX_RESERVATION)
        with self._lock(iid):
            item = self._effective(self.load(iid), at)
            if item.state == "reserved":
                if item.assignee != annotator:
                    raise AlreadyReservedByOther(item.assignee or "?", item.reservation_expiry or "?")
                item.reservation_expiry = _iso(at + duration)  # idempotent extend
            elif item.state in ("unannotated", "revision_requested"):
                item = WorkItem(
                    image=iid,
                    state="reserved",
                    assignee=annotator,
                    reservation_expiry=_iso(at + duration),
                    prior_state=item.state,
                    rating=item.rating,
                )
            else:
                raise NotEligible(item.state)
            self._save(item)
        self.coll.audit(annotator, "reserve", iid, {"expiry": item.reservation_expiry})
        return item

    def release(self, iid: str, annotator: str, now: datetime | None = None) -> WorkItem:
        at = _now(now)
        with self._lock(iid):
            item = self._effective(self.load(iid), at)
            if item.state != "reserved" or item.assignee != annotator:
                raise NotReservedByYou(f"{iid} is not reserved by {annotator!r}")
            item = WorkItem(image=iid, state=item.prior_state, rating=item.rating,
                            prior_state=item.prior_state)
            self._save(item)
        self.coll.audit(annotator, "release", iid, {})
        return item

    def check_active_reservation(self, iid: str, annotator: str, now: datetime | None = None) -> None:
        """Raise StaleReservation unless annotator holds an unexpired reservation."""
        item = self._effective(self.load(iid), _now(now))
        if item.state != "reserved" or item.assignee != annotator:
            raise StaleReservation(
                f"{annotator!r} does not hold an active reservation on {iid}"
            )

    def submit_for_review(self, iid: str, annotator: str, now: datetime | None = None) -> WorkItem:
        at = _now(now)
        with self._lock(iid):
            item = self._effective(self.load(iid), at)
            if item.state != "reserved" or item.assignee != annotator:
                raise NotReservedByYou(f"{iid} is not reserved by {annotator!r}")
            if self.coll.head_revision(iid) == 0:
                raise NoAnnotationSaved(f"{iid} has no saved annotation")
            item = WorkItem(image=iid, state="submitted", rating=item.rating,
                            prior_state="submitted")
            self._save(item)
        self.coll.audit(annotator, "submit_for_review", iid, {})
        return item

    def review(
        self,
        iid: str,
        reviewer: str,
        action: str,
        rating: int | None = None,
        comment: str | None = None,
        now: datetime | None = None,
    ) -> WorkItem:
        self.coll.require_role(reviewer, "admin", "owner")
        if action not in ("approve", "request_revision"):
            raise WorkflowError(f"unknown review action {action!r}")
        if rating is not None and not 1 <= rating <= 5:
            raise WorkflowError(f"rating must be 1..5, got {rating}")
        if action == "request_revision" and not comment:
            raise CommentRequired("request_revision requires a comment")
        with self._lock(iid):
            item = self._effective(self.load(iid), _now(now))
            if item.state != "submitted":
                raise WrongState(f"review requires submitted, found {item.state!r}")
            if action == "approve":
                item = WorkItem(image=iid, state="approved", rating=rating or item.rating,
                                prior_state="approved")
            else:
                item = WorkItem(image=iid, state="revision_requested", rating=item.rating,
                                prior_state="revision_requested")
            self._save(item)
        if rating is not None and action == "approve":
            self.coll.set_quality_rating(iid, rating, reviewer)
        if comment:
            self.coll.add_image_comment(iid, reviewer, comment)
        self.coll.audit(reviewer, "review", iid, {"action": action, "rating": rating})
        return item

    def expire_reservations(self, now: datetime | None = None) -> int:
        at = _now(now)
        released = 0
        if not self.dir.is_dir():
            return 0
        for path in sorted(self.dir.glob("img-*.json")):
            iid = path.stem
            with self._lock(iid):
                raw = WorkItem(**read_json(path))
                if (
                    raw.state == "reserved"
                    and raw.reservation_expiry
                    and _parse_iso(raw.reservation_expiry) < at
                ):
                    item = WorkItem(image=iid, state=raw.prior_state, rating=raw.rating,
                                    prior_state=raw.prior_state)
                    self._save(item)
                    self.coll.audit("system", "expire_reservation", iid,
                                    {"was_assignee": raw.assignee})
                    released += 1
        return released

    def dashboard(
        self,
        state: str | None = None,
        assignee: str | None = None,
        rating: int | None = None,
    ) -> list[dict]:
        rows = []
        for rec in self.coll.list_images():
            item = self._effective(self.load(rec.id), _now(None))
            row = {
                "image": rec.id,
                "state": item.state,
                "assignee": item.assignee,
                "revision_count": self.coll.head_revision(rec.id),
                "rating": item.rating if item.rating is not None else rec.quality_rating,
                "comments": len(rec.comments),
                "subset": rec.subset,
            }
            if state and row["state"] != state:
                continue
            if assignee and row["assignee"] != assignee:
                continue
            if rating is not None and row["rating"] != rating:
                continue
            rows.append(row)
        return rows

    # -- verification ------------------------------------------------------------

    def in_context_board(self, iid: str) -> dict:
        item = self._effective(self.load(iid), _now(None))
        if item.state not in ("approved", "submitted"):
            raise WrongState(f"board requires submitted/approved, found {item.state!r}")
        version = self.coll.load_annotation(iid)
        cards: dict[str, list[dict]] = {"care": [], "dont_care": []}
        found = False
        for node in iter_nodes(version.tree):
            if node.granularity != "word":
                continue
            found = True
            card: dict = {"node_id": node.id, "transcription": node.transcription}
            if isinstance(node.region, Quad):
                crop_h = 64
                crop_w = max(1, round(64 * quad_aspect(node.region)))
                h = rectification_homography(node.region, crop_w, crop_h)
                card.update(
                    points=[list(p) for p in node.region.corners],
                    crop_w=crop_w,
                    crop_h=crop_h,
                    homography=[list(r) for r in h.m],
                )
            else:
                card.update(mask=node.region.mask)
            cards["care" if node.care else "dont_care"].append(card)
        if not found:
            raise NoWords(f"{iid} has no word nodes")
        return {"image": iid, "revision": version.revision, **cards}

    def _stage1_marker(self, iid: str) -> Path:
        return self.verification_dir / "in_context_done" / f"{iid}.json"

    def mark_in_context_complete(self, iid: str, verifier: str) -> None:
        item = self._effective(self.load(iid), _now(None))
        if item.state not in ("approved", "submitted"):
            raise WrongState(f"stage 1 sign-off requires submitted/approved, found {item.state!r}")
        write_json_atomic(self._stage1_marker(iid), {"verifier": verifier, "ts": now_iso()})
        self.coll.audit(verifier, "in_context_complete", iid, {})

    def stage1_complete(self, iid: str) -> bool:
        return self._stage1_marker(iid).exists()

    def record_verdict(self, v: VerificationVerdict) -> tuple[bool, int | None]:
        """Apply a verdict; returns (final care flag, new revision or None)."""
        if v.stage not in STAGES:
            raise WorkflowError(f"unknown stage {v.stage!r}")
        if v.verdict not in VERDICTS:
            raise WorkflowError(f"unknown verdict {v.verdict!r}")
        item = self._effective(self.load(v.image), _now(None))
        if item.state not in ("approved", "submitted"):
            raise WrongState(f"verification requires submitted/approved, found {item.state!r}")
        if v.stage == "out_of_context" and not self.stage1_complete(v.image):
            raise StageOrderViolation(
                f"{v.image} has no completed in-context pass"
            )
        want_care = v.verdict == "care"
        timestamp = v.timestamp or now_iso()
        new_revision: int | None = None
        for _ in range(8):
            version = self.coll.load_annotation(v.image)
            node = next(
                (n for n in iter_nodes(version.tree)
                 if n.id == v.node_id and n.granularity == "word"),
                None,
            )
            if node is None:
                raise UnknownNode(f"no word node {v.node_id!r} in {v.image}")
            if node.care == want_care:
                break
            tree = set_care(version.tree, v.node_id, want_care)
            try:
                saved = self.coll.save_annotation(
                    v.image, tree, v.verifier, expected_head=version.revision,
                    change_note=f"verification:{v.stage}",
                )
                new_revision = saved.revision
                break
            except StaleHead:
                continue
        else:
            raise WorkflowError(f"could not apply verdict on {v.image}/{v.node_id}")
        write_json_atomic(
            self.verification_dir / v.stage / f"{v.image}__{v.node_id}.json",
            {
                "image": v.image,
                "node_id": v.node_id,
                "stage": v.stage,
                "verdict": v.verdict,
                "verifier": v.verifier,
                "timestamp": timestamp,
            },
        )
        self.coll.audit(
            v.verifier, "verdict", f"{v.image}/{v.node_id}",
            {"stage": v.stage, "verdict": v.verdict},
        )
        return want_care, new_revision

    def out_of_context_queue(self, seed: int) -> list[dict]:
        entries: list[dict] = []
        for rec in self.coll.list_images():
            if not self.stage1_complete(rec.id):
                continue
            version = self.coll.load_annotation(rec.id)
            for node in iter_nodes(version.tree):
                if node.granularity != "word":
                    continue
                entry: dict = {
                    "image": rec.id,
                    "node_id": node.id,
                    "care": node.care,
                    "transcription": node.transcription,
                }
                if isinstance(node.region, Quad):
                    crop_h = 64
                    crop_w = max(1, round(64 * quad_aspect(node.region)))
                    h = rectification_homography(node.region, crop_w, crop_h)
                    entry.update(
                        points=[list(p) for p in node.region.corners],
                        crop_w=crop_w,
                        crop_h=crop_h,
                        homography=[list(r) for r in h.m],
                    )
                entries.append(entry)
        if not entries:
            raise NothingEligible("no image has completed the in-context pass")
        rng = random.Random(seed)
        rng.shuffle(entries)
        _separate_same_image(entries)
        if _has_adjacent(entries):
            entries = _interleave_rebuild(entries)
        self.coll.audit("system", "out_of_context_queue", self.coll.id,
                        {"seed": seed, "size": len(entries)})
        return entries


def _has_adjacent(entries: list[dict]) -> bool:
    return any(entries[i]["image"] == entries[i - 1]["image"] for i in range(1, len(entries)))


def _interleave_rebuild(entries: list[dict]) -> list[dict]:
    """Rebuild from the shuffled order so no two same-image entries touch.

    The swap pass cannot fix every arrangement (a trailing run needs an
    earlier element moved), so when it leaves conflicts we fall back to
    most-remaining-first scheduling, which is conflict-free whenever the
    multiset allows it.  Still deterministic for a given seed.
    """
    remaining: dict[str, list[dict]] = {}
    for entry in entries:
        remaining.setdefault(entry["image"], []).append(entry)
    order = {id(e): i for i, e in enumerate(entries)}
    result: list[dict] = []
    prev = None
    while any(remaining.values()):
        candidates = [img for img, lst in remaining.items() if lst and img != prev]
        if not candidates:
            candidates = [img for img, lst in remaining.items() if lst]
        img = max(candidates, key=lambda im: (len(remaining[im]), -order[id(remaining[im][0])]))
        entry = remaining[img].pop(0)
        result.append(entry)
        prev = img
    return result


def _separate_same_image(entries: list[dict]) -> None:
    """One greedy pass keeping same-image words apart where a swap can fix it."""
    n = len(entries)
    for i in range(1, n):
        if entries[i]["image"] != entries[i - 1]["image"]:
            continue
        chosen = None
        for j in range(i + 1, n):
            if entries[j]["image"] == entries[i - 1]["image"]:
                continue
            if i + 1 < n and i + 1 != j and entries[j]["image"] == entries[i + 1]["image"]:
                if chosen is None:
                    chosen = j
                continue
            moved_breaks = (
                (j - 1 != i and entries[j - 1]["image"] == entries[i]["image"])
                or (j + 1 < n and entries[j + 1]["image"] == entries[i]["image"])
            )
            if not moved_breaks:
                chosen = j
                break
            if chosen is None:
                chosen = j
        if chosen is not None:
            entries[i], entries[chosen] = entries[chosen], entries[i]
