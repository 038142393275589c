"""Shared fixture builders for the test suite."""

from __future__ import annotations

import io
import random

from PIL import Image

from rrcplat.annotations import AnnotationNode
from rrcplat.evalcore import GtRegion
from rrcplat.geometry import Quad, canonicalize_quad
from rrcplat.ingest import Detection


def png_bytes(width: int = 64, height: int = 48, color=(120, 30, 200)) -> bytes:
    buf = io.BytesIO()
    Image.new("RGB", (width, height), color).save(buf, format="PNG")
    return buf.getvalue()


def jpeg_bytes(width: int = 640, height: int = 480, color=(9, 99, 199)) -> bytes:
    buf = io.BytesIO()
    Image.new("RGB", (width, height), color).save(buf, format="JPEG")
    return buf.getvalue()


def word(node_id: str, rect: tuple[float, float, float, float], text: str, care: bool = True,
         metadata: tuple[tuple[str, str], ...] = ()) -> AnnotationNode:
    x1, y1, x2, y2 = rect
    return AnnotationNode(
        id=node_id,
        granularity="word",
        region=Quad.from_rect(x1, y1, x2, y2),
        transcription=text,
        care=care,
        metadata=metadata,
    )


def sample_tree() -> tuple[AnnotationNode, ...]:
    words = (
        word("b1_l1_w1", (2, 2, 20, 10), "Tiredness"),
        word("b1_l1_w2", (22, 2, 40, 10), "kills", metadata=(("script", "latin"),)),
        word("b1_l1_w3", (42, 2, 60, 10), "", care=False),
    )
    line = AnnotationNode(
        id="b1_l1",
        granularity="line",
        region=Quad.from_rect(2, 2, 60, 10),
        transcription="Tiredness kills",
        children=words,
    )
    block = AnnotationNode(
        id="b1",
        granularity="block",
        region=Quad.from_rect(0, 0, 62, 12),
        children=(line,),
    )
    return (block,)


def perturbed_quad(rng: random.Random, q: Quad, jitter: float) -> Quad:
    flat = [v + rng.uniform(-jitter, jitter) for v in q.flat()]
    try:
        return canonicalize_quad(flat)
    except Exception:
        return q


def shrunk_quad(q: Quad, factor: float = 0.4) -> Quad:
    cx = sum(p[0] for p in q.corners) / 4
    cy = sum(p[1] for p in q.corners) / 4
    flat = []
    for x, y in q.corners:
        flat.extend((cx + (x - cx) * factor, cy + (y - cy) * factor))
    return canonicalize_quad(flat)


def random_eval_scene(
    rng: random.Random,
    max_gt: int = 8,
    dontcare_prob: float = 0.25,
    with_transcriptions: bool = False,
) -> tuple[list[GtRegion], list[Detection]]:
    """GT words on a grid (never overlapping each other) plus noisy detections."""
    n_gt = rng.randrange(1, max_gt + 1)
    regions: list[GtRegion] = []
    for i in range(n_gt):
        cx = 10 + (i % 4) * 60
        cy = 10 + (i // 4) * 40
        w = rng.uniform(25, 50)
        h = rng.uniform(12, 25)
        care = rng.random() >= dontcare_prob
        regions.append(
            GtRegion(
                node_id=f"w{i + 1}",
                quad=Quad.from_rect(cx, cy, cx + w, cy + h),
                care=care,
                transcription=f"word{i + 1}" if care else "",
            )
        )
    dets: list[Detection] = []
    for region in regions:
        roll = rng.random()
        if roll < 0.65:  # found, roughly
            text = region.transcription if rng.random() < 0.8 else "wrong"
            dets.append(
                Detection(
                    quad=perturbed_quad(rng, region.quad, jitter=rng.uniform(0.0, 4.0)),
                    transcription=text if with_transcriptions else None,
                )
            )
        elif roll < 0.75 and not region.care:  # detector fires inside don't-care
            dets.append(
                Detection(
                    quad=shrunk_quad(region.quad, 0.5),
                    transcription="noise" if with_transcriptions else None,
                )
            )
    for _ in range(rng.randrange(0, 3)):  # spurious detections
        x = rng.uniform(250, 400)
        y = rng.uniform(150, 300)
        dets.append(
            Detection(
                quad=Quad.from_rect(x, y, x + rng.uniform(10, 30), y + rng.uniform(8, 20)),
                transcription="ghost" if with_transcriptions else None,
            )
        )
    return regions, dets


def random_word_scene(rng: random.Random, n_words: int, img_w: int = 200, img_h: int = 120,
                      dontcare_prob: float = 0.3) -> tuple[AnnotationNode, ...]:
    """A flat one-block scene of word quads that never overlap (grid placement)."""
    words = []
    cols = max(1, img_w // 46)
    for i in range(n_words):
        cx = 4 + (i % cols) * 46
        cy = 4 + (i // cols) * 26
        w = rng.uniform(18, 38)
        h = rng.uniform(8, 18)
        care = rng.random() >= dontcare_prob
        words.append(
            word(
                f"b1_l1_w{i + 1}",
                (cx, cy, cx + w, cy + h),
                text=f"word{i + 1}" if care else "",
                care=care,
            )
        )
    line = AnnotationNode(
        id="b1_l1", granularity="line", region=Quad.from_rect(0, 0, img_w, img_h),
        transcription="", care=True, children=tuple(words),
    )
    return (
        AnnotationNode(
            id="b1", granularity="block", region=Quad.from_rect(0, 0, img_w, img_h),
            children=(line,),
        ),
    )
