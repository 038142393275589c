"""Hierarchical annotation trees and their canonical XML form.

Granularities order strictly: block > line > word > char > atom.  The XML
schema is a compatible reconstruction (the original platform's schema is
unpublished): UTF-8, 2-space indent, attributes in fixed order (id, care,
then alphabetical), coordinates with at most 2 fraction digits, and
control characters escaped as character references so serialize/parse
round-trips are byte-exact.
"""

from __future__ import annotations

import io
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field, replace
from typing import Iterator, Sequence

from .geometry import GeometryError, Quad, canonicalize_quad, format_coord, points_attr

GRANULARITY_RANK = {"block": 4, "line": 3, "word": 2, "char": 1, "atom": 0}


class InvalidTree(ValueError):
    """Tree violates a structural invariant; carries the offending node path."""

    def __init__(self, path: str, reason: str):
        self.path = path
        self.reason = reason
        super().__init__(f"{path}: {reason}")


class InvalidXML(ValueError):
    pass


@dataclass(frozen=True)
class MaskRegion:
    """Region given as a label-image file next to the ground truth."""

    mask: str  # filename under masks/<image-id>/


@dataclass(frozen=True)
class AnnotationNode:
    id: str
    granularity: str
    region: Quad | MaskRegion
    transcription: str = ""
    care: bool = True
    metadata: tuple[tuple[str, str], ...] = ()
    children: tuple["AnnotationNode", ...] = ()

    def with_care(self, care: bool) -> "AnnotationNode":
        return replace(self, care=care)


@dataclass(frozen=True)
class AnnotationVersion:
    revision: int
    author: str
    timestamp: str
    tree: tuple[AnnotationNode, ...]
    change_note: str = ""


def quantize_quad(q: Quad) -> Quad:
    """Snap corners to the canonical 2-decimal grid (re-validates)."""
    flat = [round(v, 2) + 0.0 for v in q.flat()]
    return canonicalize_quad(flat)


def normalize_tree(tree: Sequence[AnnotationNode]) -> tuple[AnnotationNode, ...]:
    """Quantize every quad region to storage precision."""

    def norm(node: AnnotationNode) -> AnnotationNode:
        region = node.region
        if isinstance(region, Quad):
            region = quantize_quad(region)
        return replace(
            node, region=region, children=tuple(norm(c) for c in node.children)
        )

    return tuple(norm(n) for n in tree)


def validate_tree(tree: Sequence[AnnotationNode]) -> None:
    """Raise InvalidTree at the first structural violation."""
    seen: set[str] = set()

    def walk(node: AnnotationNode, parent: AnnotationNode | None, path: str) -> None:
        here = f"{path}/{node.id}" if path else node.id
        if not node.id:
            raise InvalidTree(here, "empty node id")
        if node.granularity not in GRANULARITY_RANK:
            raise InvalidTree(here, f"unknown granularity {node.granularity!r}")
        if node.id in seen:
            raise InvalidTree(here, "duplicate node id")
        seen.add(node.id)
        if parent is not None:
            if GRANULARITY_RANK[node.granularity] >= GRANULARITY_RANK[parent.granularity]:
                raise InvalidTree(
                    here,
                    f"granularity {node.granularity} does not decrease under {parent.granularity}",
                )
            if not node.id.startswith(parent.id):
                raise InvalidTree(here, f"id not prefixed by parent id {parent.id!r}")
        if node.granularity == "word" and node.care and not node.transcription:
            raise InvalidTree(here, "care word without transcription")
        if not isinstance(node.region, (Quad, MaskRegion)):
            raise InvalidTree(here, "node has no region")
        for key, value in node.metadata:
            if not key:
                raise InvalidTree(here, "empty metadata key")
        for child in node.children:
            walk(child, node, here)

    for root in tree:
        walk(root, None, "")


def iter_nodes(tree: Sequence[AnnotationNode]) -> Iterator[AnnotationNode]:
    for node in tree:
        yield node
        yield from iter_nodes(node.children)


def find_node(tree: Sequence[AnnotationNode], node_id: str) -> AnnotationNode | None:
    for node in iter_nodes(tree):
        if node.id == node_id:
            return node
    return None


def set_care(
    tree: Sequence[AnnotationNode], node_id: str, care: bool
) -> tuple[AnnotationNode, ...]:
    """Return a tree with one node's care flag replaced."""

    def rec(node: AnnotationNode) -> AnnotationNode:
        if node.id == node_id:
            return node.with_care(care)
        return replace(node, children=tuple(rec(c) for c in node.children))

    return tuple(rec(n) for n in tree)


# --- JSON tree form (API wire format) ---------------------------------------


def node_to_dict(node: AnnotationNode) -> dict:
    data: dict = {
        "id": node.id,
        "granularity": node.granularity,
        "care": node.care,
        "transcription": node.transcription,
        "metadata": [[k, v] for k, v in node.metadata],
        "children": [node_to_dict(c) for c in node.children],
    }
    if isinstance(node.region, Quad):
        data["points"] = [list(p) for p in node.region.corners]
    else:
        data["mask"] = node.region.mask
    return data


def node_from_dict(data: dict) -> AnnotationNode:
    """Inverse of node_to_dict; accepts `rect` [x1,y1,x2,y2] as input sugar."""
    region: Quad | MaskRegion
    if "points" in data:
        region = canonicalize_quad([v for p in data["points"] for v in p])
    elif "rect" in data:
        x1, y1, x2, y2 = data["rect"]
        region = Quad.from_rect(x1, y1, x2, y2)
    elif "mask" in data:
        region = MaskRegion(data["mask"])
    else:
        raise InvalidTree(data.get("id", "?"), "node needs points, rect or mask")
    return AnnotationNode(
        id=data["id"],
        granularity=data["granularity"],
        region=region,
        transcription=data.get("transcription", ""),
        care=bool(data.get("care", True)),
        metadata=tuple((k, v) for k, v in data.get("metadata", [])),
        children=tuple(node_from_dict(c) for c in data.get("children", [])),
    )


def tree_to_json(tree: Sequence[AnnotationNode]) -> list[dict]:
    return [node_to_dict(n) for n in tree]


def tree_from_json(data: Sequence[dict]) -> tuple[AnnotationNode, ...]:
    return tuple(node_from_dict(d) for d in data)


# --- canonical XML ---------------------------------------------------------

_ESCAPES = {
    "&": "&amp;",
    "<": "&lt;",
    ">": "&gt;",
    '"': "&quot;",
    "\t": "&#9;",
    "\n": "&#10;",
    "\r": "&#13;",
}


def _attr_escape(value: str) -> str:
    return "".join(_ESCAPES.get(ch, ch) for ch in value)


def _node_attrs(node: AnnotationNode) -> list[tuple[str, str]]:
    attrs: list[tuple[str, str]] = [
        ("id", node.id),
        ("care", "true" if node.care else "false"),
    ]
    extra: list[tuple[str, str]] = []
    if isinstance(node.region, Quad):
        extra.append(("points", points_attr(node.region)))
    else:
        extra.append(("mask", node.region.mask))
    if node.transcription:
        extra.append(("transcription", node.transcription))
    attrs.extend(sorted(extra))
    return attrs


def _write_node(out: io.StringIO, node: AnnotationNode, depth: int) -> None:
    pad = "  " * depth
    attrs = " ".join(f'{k}="{_attr_escape(v)}"' for k, v in _node_attrs(node))
    has_body = bool(node.metadata or node.children)
    out.write(f"{pad}<{node.granularity} {attrs}")
    if not has_body:
        out.write("/>\n")
        return
    out.write(">\n")
    for key, value in node.metadata:
        out.write(
            f'{pad}  <meta key="{_attr_escape(key)}" value="{_attr_escape(value)}"/>\n'
        )
    for child in node.children:
        _write_node(out, child, depth + 1)
    out.write(f"{pad}</{node.granularity}>\n")


def serialize_version(version: AnnotationVersion) -> bytes:
    out = io.StringIO()
    out.write('<?xml version="1.0" encoding="UTF-8"?>\n')
    out.write(
        f'<annotation revision="{version.revision}"'
        f' author="{_attr_escape(version.author)}"'
        f' timestamp="{_attr_escape(version.timestamp)}"'
        f' note="{_attr_escape(version.change_note)}">\n'
    )
    for root in version.tree:
        _write_node(out, root, 1)
    out.write("</annotation>\n")
    return out.getvalue().encode("utf-8")


def _parse_node(el: ET.Element) -> AnnotationNode:
    if el.tag not in GRANULARITY_RANK:
        raise InvalidXML(f"unexpected element <{el.tag}>")
    attrib = dict(el.attrib)
    try:
        node_id = attrib.pop("id")
        care = attrib.pop("care") == "true"
    except KeyError as exc:
        raise InvalidXML(f"<{el.tag}> missing attribute {exc}") from exc
    region: Quad | MaskRegion
    if "points" in attrib:
        try:
            region = canonicalize_quad(
                [float(v) for pair in attrib.pop("points").split() for v in pair.split(",")]
            )
        except (ValueError, GeometryError) as exc:
            raise InvalidXML(f"bad points on {node_id}: {exc}") from exc
    elif "mask" in attrib:
        region = MaskRegion(attrib.pop("mask"))
    else:
        raise InvalidXML(f"{node_id}: neither points nor mask")
    transcription = attrib.pop("transcription", "")
    if attrib:
        raise InvalidXML(f"{node_id}: unknown attributes {sorted(attrib)}")
    metadata: list[tuple[str, str]] = []
    children: list[AnnotationNode] = []
    for child in el:
        if child.tag == "meta":
            metadata.append((child.attrib["key"], child.attrib["value"]))
        else:
            children.append(_parse_node(child))
    return AnnotationNode(
        id=node_id,
        granularity=el.tag,
        region=region,
        transcription=transcription,
        care=care,
        metadata=tuple(metadata),
        children=tuple(children),
    )


def parse_version(data: bytes) -> AnnotationVersion:
    try:
        root = ET.fromstring(data)
    except ET.ParseError as exc:
        raise InvalidXML(str(exc)) from exc
    if root.tag != "annotation":
        raise InvalidXML(f"expected <annotation>, got <{root.tag}>")
    return AnnotationVersion(
        revision=int(root.attrib["revision"]),
        author=root.attrib["author"],
        timestamp=root.attrib["timestamp"],
        tree=tuple(_parse_node(el) for el in root),
        change_note=root.attrib.get("note", ""),
    )
