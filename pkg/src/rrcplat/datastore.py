"""File-backed store: collections, images, versioned annotations, masks.

Layout under the store root:

    collections/<cid>/collection.json
    collections/<cid>/images/<iid>.<ext>      image bytes
    collections/<cid>/images/<iid>.json       per-image record
    collections/<cid>/gt/<iid>/v<NNNNN>.xml   annotation revisions
    collections/<cid>/gt/<iid>/head           advisory head pointer
    collections/<cid>/masks/<iid>/<node>.png
    collections/<cid>/audit.log               JSON lines

Revision files are the source of truth for the head: they are created
with link-if-absent semantics, so concurrent saves race on the revision
file itself and the loser gets StaleHead.  The head pointer file is a
cache kept for inspectability.
"""

from __future__ import annotations

import hashlib
import io
import json
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Sequence

from PIL import Image, UnidentifiedImageError

from .annotations import (
    AnnotationNode,
    AnnotationVersion,
    InvalidTree,
    MaskRegion,
    iter_nodes,
    normalize_tree,
    parse_version,
    serialize_version,
    validate_tree,
)
from .fileio import append_line, create_exclusive, locked, read_json, write_atomic, write_json_atomic

SLUG_RE = re.compile(r"^[a-z0-9-]{1,64}$")
SUBSETS = ("unassigned", "training", "validation", "public-test", "sequestered-test")
ROLES = ("admin", "owner", "contributor")

# Test seam for crash-recovery checks; called between persistence steps.
_crash_point: Callable[[str], None] = lambda label: None


def now_iso() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


class DatastoreError(Exception):
    pass


class DuplicateId(DatastoreError):
    pass


class InvalidSlug(DatastoreError):
    pass


class UnknownCollection(DatastoreError):
    pass


class UnknownImage(DatastoreError):
    pass


class UndecodableImage(DatastoreError):
    pass


class StaleHead(DatastoreError):
    def __init__(self, head: int):
        self.head = head
        super().__init__(f"head moved; current head is {head}")


class NoSuchRevision(DatastoreError):
    pass


class Forbidden(DatastoreError):
    pass


class InvalidSubset(DatastoreError):
    pass


class MissingMask(DatastoreError):
    pass


@dataclass
class Collection:
    id: str
    title: str
    created_at: str
    members: list[tuple[str, str]]

    def role_of(self, user: str) -> str | None:
        for uid, role in self.members:
            if uid == user:
                return role
        return None


@dataclass
class ImageRecord:
    id: str
    filename: str
    width: int
    height: int
    subset: str = "unassigned"
    quality_rating: int | None = None
    comments: list[dict] = field(default_factory=list)
    checksum: str = ""
    ext: str = "png"


@dataclass(frozen=True)
class ImportResult:
    record: ImageRecord
    duplicate: bool


class Store:
    def __init__(self, root: Path | str):
        self.root = Path(root)

    @property
    def collections_dir(self) -> Path:
        return self.root / "collections"

    def create_collection(self, cid: str, title: str, creator: str) -> Collection:
        if not SLUG_RE.match(cid):
            raise InvalidSlug(f"collection id {cid!r} must match [a-z0-9-]{{1,64}}")
        cdir = self.collections_dir / cid
        coll = Collection(id=cid, title=title, created_at=now_iso(), members=[(creator, "admin")])
        payload = json.dumps(_collection_json(coll), ensure_ascii=False, indent=2).encode()
        if not create_exclusive(cdir / "collection.json", payload):
            raise DuplicateId(f"collection {cid!r} already exists")
        for sub in ("images", "gt", "masks", "workflow", "verification"):
            (cdir / sub).mkdir(parents=True, exist_ok=True)
        handle = self.collection(cid)
        handle.audit(creator, "create_collection", cid, {"title": title})
        return coll

    def collection(self, cid: str) -> "CollectionHandle":
        cdir = self.collections_dir / cid
        if not (cdir / "collection.json").exists():
            raise UnknownCollection(cid)
        return CollectionHandle(self, cid, cdir)

    def list_collections(self) -> list[str]:
        if not self.collections_dir.is_dir():
            return []
        return sorted(p.name for p in self.collections_dir.iterdir() if (p / "collection.json").exists())


def _collection_json(coll: Collection) -> dict:
    return {
        "id": coll.id,
        "title": coll.title,
        "created_at": coll.created_at,
        "members": [[u, r] for u, r in coll.members],
    }


class CollectionHandle:
    def __init__(self, store: Store, cid: str, cdir: Path):
        self.store = store
        self.id = cid
        self.dir = cdir

    # -- collection metadata -------------------------------------------------

    def meta(self) -> Collection:
        data = read_json(self.dir / "collection.json")
        return Collection(
            id=data["id"],
            title=data["title"],
            created_at=data["created_at"],
            members=[(u, r) for u, r in data["members"]],
        )

    def role_of(self, user: str) -> str | None:
        return self.meta().role_of(user)

    def require_role(self, user: str, *roles: str) -> None:
        if self.role_of(user) not in roles:
            raise Forbidden(f"{user!r} lacks any of roles {roles} on {self.id!r}")

    def add_member(self, user: str, role: str, actor: str) -> Collection:
        if role not in ROLES:
            raise DatastoreError(f"unknown role {role!r}")
        self.require_role(actor, "admin")
        with locked(self.dir / ".collection.lock"):
            coll = self.meta()
            coll.members = [(u, r) for u, r in coll.members if u != user] + [(user, role)]
            if not any(r == "admin" for _, r in coll.members):
                raise DatastoreError("collection must keep at least one admin")
            write_json_atomic(self.dir / "collection.json", _collection_json(coll))
        self.audit(actor, "add_member", user, {"role": role})
        return coll

    def audit(self, actor: str, action: str, target: str, detail: dict | None = None) -> None:
        entry = {
            "ts": now_iso(),
            "actor": actor,
            "action": action,
            "target": target,
            "detail": detail or {},
        }
        append_line(self.dir / "audit.log", json.dumps(entry, ensure_ascii=False))

    def audit_entries(self) -> list[dict]:
        path = self.dir / "audit.log"
        if not path.exists():
            return []
        return [json.loads(line) for line in path.read_text("utf-8").splitlines() if line]

    # -- images ---------------------------------------------------------------

    def import_image(self, data: bytes, filename: str, actor: str = "") -> ImportResult:
        if actor:
            self.require_role(actor, "admin", "owner", "contributor")
        checksum = hashlib.sha256(data).hexdigest()
        iid = "img-" + checksum[:12]
        existing = self.dir / "images" / f"{iid}.json"
        if existing.exists():
            return ImportResult(self.image_record(iid), duplicate=True)
        try:
            with Image.open(io.BytesIO(data)) as img:
                img.load()
                fmt = (img.format or "").lower()
                width, height = img.size
        except (UnidentifiedImageError, OSError) as exc:
            raise UndecodableImage(f"{filename}: {exc}") from exc
        if fmt not in ("png", "jpeg"):
            raise UndecodableImage(f"{filename}: unsupported format {fmt!r}")
        ext = "png" if fmt == "png" else "jpg"
        record = ImageRecord(
            id=iid, filename=filename, width=width, height=height,
            checksum=checksum, ext=ext,
        )
        write_atomic(self.dir / "images" / f"{iid}.{ext}", data)
        self._write_record(record)
        self.audit(actor or "system", "import_image", iid, {"filename": filename})
        return ImportResult(record, duplicate=False)

    def _write_record(self, rec: ImageRecord) -> None:
        write_json_atomic(self.dir / "images" / f"{rec.id}.json", rec.__dict__)

    def image_record(self, iid: str) -> ImageRecord:
        path = self.dir / "images" / f"{iid}.json"
        if not path.exists():
            raise UnknownImage(iid)
        return ImageRecord(**read_json(path))

    def image_path(self, iid: str) -> Path:
        rec = self.image_record(iid)
        return self.dir / "images" / f"{rec.id}.{rec.ext}"

    def list_images(self) -> list[ImageRecord]:
        images_dir = self.dir / "images"
        if not images_dir.is_dir():
            return []
        return [
            ImageRecord(**read_json(p))
            for p in sorted(images_dir.glob("img-*.json"))
        ]

    def add_image_comment(self, iid: str, author: str, text: str) -> ImageRecord:
        with locked(self.dir / ".images.lock"):
            rec = self.image_record(iid)
            rec.comments.append({"author": author, "ts": now_iso(), "text": text})
            self._write_record(rec)
        self.audit(author, "comment", iid, {"text": text})
        return rec

    def set_quality_rating(self, iid: str, rating: int, actor: str) -> ImageRecord:
        if not 1 <= rating <= 5:
            raise DatastoreError(f"rating must be 1..5, got {rating}")
        with locked(self.dir / ".images.lock"):
            rec = self.image_record(iid)
            rec.quality_rating = rating
            self._write_record(rec)
        self.audit(actor, "rate", iid, {"rating": rating})
        return rec

    def assign_subset(self, iids: Sequence[str], subset: str, actor: str) -> int:
        if subset not in SUBSETS:
            raise InvalidSubset(f"subset must be one of {SUBSETS}, got {subset!r}")
        self.require_role(actor, "admin", "owner")
        records = [self.image_record(iid) for iid in iids]  # fail before mutating
        count = 0
        with locked(self.dir / ".images.lock"):
            for rec in records:
                previous = rec.subset
                rec.subset = subset
                self._write_record(rec)
                self.audit(actor, "assign_subset", rec.id, {"from": previous, "to": subset})
                count += 1
        return count

    def images_in_subset(self, subset: str) -> list[ImageRecord]:
        if subset not in SUBSETS:
            raise InvalidSubset(subset)
        return [rec for rec in self.list_images() if rec.subset == subset]

    # -- masks ----------------------------------------------------------------

    def store_mask(self, iid: str, node_id: str, data: bytes) -> Path:
        rec = self.image_record(iid)
        try:
            with Image.open(io.BytesIO(data)) as img:
                img.load()
                if img.format != "PNG":
                    raise UndecodableImage("masks must be PNG label images")
                if img.size != (rec.width, rec.height):
                    raise MissingMask(
                        f"mask dimensions {img.size} differ from image {(rec.width, rec.height)}"
                    )
        except (UnidentifiedImageError, OSError) as exc:
            raise UndecodableImage(f"mask for {node_id}: {exc}") from exc
        path = self.dir / "masks" / iid / f"{node_id}.png"
        write_atomic(path, data)
        return path

    # -- annotations ------------------------------------------------------------

    def _gt_dir(self, iid: str) -> Path:
        return self.dir / "gt" / iid

    def head_revision(self, iid: str) -> int:
        gt = self._gt_dir(iid)
        if not gt.is_dir():
            return 0
        revs = [int(p.stem[1:]) for p in gt.glob("v*.xml")]
        return max(revs, default=0)

    def save_annotation(
        self,
        iid: str,
        tree: Sequence[AnnotationNode],
        author: str,
        expected_head: int,
        change_note: str = "",
    ) -> AnnotationVersion:
        self.image_record(iid)  # UnknownImage guard
        tree = normalize_tree(tree)
        validate_tree(tree)
        self._check_masks(iid, tree)
        head = self.head_revision(iid)
        if expected_head != head:
            raise StaleHead(head)
        version = AnnotationVersion(
            revision=head + 1,
            author=author,
            timestamp=now_iso(),
            tree=tree,
            change_note=change_note,
        )
        data = serialize_version(version)
        gt = self._gt_dir(iid)
        _crash_point("before-version-file")
        if not create_exclusive(gt / f"v{version.revision:05d}.xml", data):
            raise StaleHead(self.head_revision(iid))
        _crash_point("after-version-file")
        write_atomic(gt / "head", str(version.revision).encode())
        _crash_point("after-head-pointer")
        self.audit(author, "save_annotation", iid, {"revision": version.revision})
        return version

    def _check_masks(self, iid: str, tree: Sequence[AnnotationNode]) -> None:
        for node in iter_nodes(tree):
            if isinstance(node.region, MaskRegion):
                path = self.dir / "masks" / iid / node.region.mask
                if not path.exists():
                    raise MissingMask(f"{node.id}: mask file {node.region.mask} not stored")

    def load_annotation(self, iid: str, revision: int | None = None) -> AnnotationVersion:
        self.image_record(iid)
        head = self.head_revision(iid)
        rev = head if revision is None else revision
        if rev < 1 or rev > head:
            raise NoSuchRevision(f"{iid} has revisions 1..{head}, asked for {revision}")
        path = self._gt_dir(iid) / f"v{rev:05d}.xml"
        return parse_version(path.read_bytes())

    def revision_bytes(self, iid: str, revision: int) -> bytes:
        head = self.head_revision(iid)
        if revision < 1 or revision > head:
            raise NoSuchRevision(f"{iid} has revisions 1..{head}")
        return (self._gt_dir(iid) / f"v{revision:05d}.xml").read_bytes()
