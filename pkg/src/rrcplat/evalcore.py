"""Scoring engines: don't-care filtering, matching, recognition, aggregation.

Matching is deterministic by construction: candidate pairs are sorted with
explicit tie-breaks and greedily accepted, so identical inputs always give
bit-identical result JSON.  Per-sample records carry every intermediate
pair value the portal needs for overlay rendering.

Text comparison is exact code points with optional case folding
(str.casefold); no Unicode normalization is applied, so NFC/NFD
differences count as errors.  This is deliberate and documented loudly in
the README.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

from .geometry import Quad, area, intersect, iou
from .ingest import Detection

DEFAULT_IOU_THRESHOLD = 0.5
DEFAULT_DONTCARE_OVERLAP = 0.5
DEFAULT_TR = 0.8  # area-recall threshold
DEFAULT_TP = 0.4  # area-precision threshold
DEFAULT_SCATTER_PENALTY = 0.8

PROTOCOL_KINDS = ("localization_iou", "localization_deteval", "recognition", "end_to_end")


class MissingTranscriptions(ValueError):
    pass


@dataclass(frozen=True)
class GtRegion:
    """One evaluation-level ground-truth region (word granularity)."""

    node_id: str
    quad: Quad
    care: bool
    transcription: str = ""


@dataclass
class SampleEval:
    image_id: str
    matches: list[dict] = field(default_factory=list)
    unmatched_gt: list[str] = field(default_factory=list)
    unmatched_det: list[int] = field(default_factory=list)
    ignored_det: list[int] = field(default_factory=list)
    gt_credit: float = 0.0
    det_credit: float = 0.0
    num_gt_care: int = 0
    num_det_considered: int = 0
    sample_precision: float = 1.0
    sample_recall: float = 1.0

    def finish(self) -> "SampleEval":
        self.sample_recall = (
            self.gt_credit / self.num_gt_care if self.num_gt_care else 1.0
        )
        self.sample_precision = (
            self.det_credit / self.num_det_considered if self.num_det_considered else 1.0
        )
        return self

    def as_dict(self) -> dict:
        return {
            "image_id": self.image_id,
            "num_gt_care": self.num_gt_care,
            "num_det_considered": self.num_det_considered,
            "gt_credit": float(self.gt_credit),
            "det_credit": float(self.det_credit),
            "sample_precision": float(self.sample_precision),
            "sample_recall": float(self.sample_recall),
            "matches": self.matches,
            "unmatched_gt": self.unmatched_gt,
            "unmatched_det": self.unmatched_det,
            "ignored_det": self.ignored_det,
        }


@dataclass
class OverallEval:
    protocol_id: str
    num_gt_care: int
    num_det_considered: int
    precision: float
    recall: float
    hmean: float
    num_samples: int
    empty_dataset: bool = False

    def as_dict(self) -> dict:
        return {
            "protocol_id": self.protocol_id,
            "num_samples": self.num_samples,
            "num_gt_care": self.num_gt_care,
            "num_det_considered": self.num_det_considered,
            "precision": float(self.precision),
            "recall": float(self.recall),
            "hmean": float(self.hmean),
            "empty_dataset": self.empty_dataset,
        }


def _overlap_ratio(det: Quad, gt: Quad) -> float:
    """area(det ∩ gt) / area(det)."""
    det_area = area(det)
    if det_area <= 0:
        return 0.0
    return area(intersect(det, gt)) / det_area


def filter_dontcare(
    dets: Sequence[Detection],
    gt_regions: Sequence[GtRegion],
    overlap_threshold: float = DEFAULT_DONTCARE_OVERLAP,
) -> tuple[list[int], list[int]]:
    """Split detection indices into (considered, ignored).

    A detection is ignored iff more than overlap_threshold of its own area
    lies inside some single don't-care region (strictly greater).
    """
    dontcare = [g.quad for g in gt_regions if not g.care]
    considered: list[int] = []
    ignored: list[int] = []
    for i, det in enumerate(dets):
        if det.quad is not None and any(
            _overlap_ratio(det.quad, dc) > overlap_threshold for dc in dontcare
        ):
            ignored.append(i)
        else:
            considered.append(i)
    return considered, ignored


def match_iou(
    image_id: str,
    gt_regions: Sequence[GtRegion],
    dets: Sequence[Detection],
    iou_threshold: float = DEFAULT_IOU_THRESHOLD,
    dontcare_overlap: float = DEFAULT_DONTCARE_OVERLAP,
) -> SampleEval:
    """One-to-one greedy matching by descending IoU.

    Candidates at or above the threshold are sorted by (IoU desc, gt
    order, det order) and accepted while both sides are free.
    """
    considered, ignored = filter_dontcare(dets, gt_regions, dontcare_overlap)
    care = [g for g in gt_regions if g.care]
    result = SampleEval(
        image_id=image_id,
        ignored_det=ignored,
        num_gt_care=len(care),
        num_det_considered=len(considered),
    )
    candidates: list[tuple[float, int, int]] = []
    for gi, gt in enumerate(care):
        for ci, di in enumerate(considered):
            det = dets[di]
            if det.quad is None:
                continue
            value = iou(gt.quad, det.quad)
            if value >= iou_threshold:
                candidates.append((value, gi, ci))
    candidates.sort(key=lambda c: (-c[0], c[1], c[2]))
    gt_taken: set[int] = set()
    det_taken: set[int] = set()
    for value, gi, ci in candidates:
        if gi in gt_taken or ci in det_taken:
            continue
        gt_taken.add(gi)
        det_taken.add(ci)
        result.matches.append(
            {
                "gt": care[gi].node_id,
                "det": considered[ci],
                "iou": float(value),
                "kind": "one_to_one",
            }
        )
    result.gt_credit = float(len(gt_taken))
    result.det_credit = float(len(det_taken))
    result.unmatched_gt = [g.node_id for gi, g in enumerate(care) if gi not in gt_taken]
    result.unmatched_det = [considered[ci] for ci in range(len(considered)) if ci not in det_taken]
    return result.finish()


def match_deteval(
    image_id: str,
    gt_regions: Sequence[GtRegion],
    dets: Sequence[Detection],
    tr: float = DEFAULT_TR,
    tp: float = DEFAULT_TP,
    scatter_penalty: float = DEFAULT_SCATTER_PENALTY,
    dontcare_overlap: float = DEFAULT_DONTCARE_OVERLAP,
) -> SampleEval:
    """Area-recall/area-precision matching with one-to-many both ways.

    R[i,j] = inter/area(gt), P[i,j] = inter/area(det).  Mutually unique
    pairs with R >= tr and P >= tp credit 1 on both sides.  A GT
    fragmented over several detections (each with P >= tp, jointly
    R >= tr) credits scatter_penalty to every participant; several GTs
    covered by one detection are handled symmetrically.  A group that
    degenerates to a single pair meeting both thresholds is a one-to-one
    match and keeps full credit, so credits always lie in
    {0, scatter_penalty, 1}.
    """
    considered, ignored = filter_dontcare(dets, gt_regions, dontcare_overlap)
    care = [g for g in gt_regions if g.care]
    result = SampleEval(
        image_id=image_id,
        ignored_det=ignored,
        num_gt_care=len(care),
        num_det_considered=len(considered),
    )
    n_gt, n_det = len(care), len(considered)
    recall_m = [[0.0] * n_det for _ in range(n_gt)]
    prec_m = [[0.0] * n_det for _ in range(n_gt)]
    for gi, gt in enumerate(care):
        gt_area = area(gt.quad)
        for ci, di in enumerate(considered):
            det = dets[di]
            if det.quad is None:
                continue
            inter = area(intersect(gt.quad, det.quad))
            recall_m[gi][ci] = inter / gt_area if gt_area > 0 else 0.0
            det_area = area(det.quad)
            prec_m[gi][ci] = inter / det_area if det_area > 0 else 0.0

    gt_credit = [0.0] * n_gt
    det_credit = [0.0] * n_det
    gt_free = set(range(n_gt))
    det_free = set(range(n_det))

    def emit(gi: int, ci: int, kind: str, credit: float) -> None:
        gt_free.discard(gi)
        det_free.discard(ci)
        gt_credit[gi] = credit
        det_credit[ci] = credit
        result.matches.append(
            {
                "gt": care[gi].node_id,
                "det": considered[ci],
                "area_recall": float(recall_m[gi][ci]),
                "area_precision": float(prec_m[gi][ci]),
                "kind": kind,
            }
        )

    # one-to-one needs uniqueness both ways, otherwise a detection spanning
    # two GTs would be consumed by the first of them instead of forming a
    # group match below
    for gi in range(n_gt):
        row_r = [ci for ci in range(n_det) if recall_m[gi][ci] >= tr]
        row_p = [ci for ci in range(n_det) if prec_m[gi][ci] >= tp]
        if len(row_r) != 1 or len(row_p) != 1 or row_r != row_p:
            continue
        ci = row_r[0]
        col_r = [g for g in range(n_gt) if recall_m[g][ci] >= tr]
        col_p = [g for g in range(n_gt) if prec_m[g][ci] >= tp]
        if col_r == [gi] and col_p == [gi]:
            emit(gi, ci, "one_to_one", 1.0)

    # one GT fragmented over several detections; a detection that also
    # recall-qualifies for another free GT is contested and left for the
    # symmetric pass
    for gi in range(n_gt):
        if gi not in gt_free:
            continue
        group = [
            ci
            for ci in sorted(det_free)
            if prec_m[gi][ci] >= tp
            and not any(
                recall_m[g][ci] >= tr for g in gt_free if g != gi
            )
        ]
        if group and sum(recall_m[gi][ci] for ci in group) >= tr:
            kind = "one_to_one" if len(group) == 1 else "one_gt_many_det"
            credit = 1.0 if len(group) == 1 else scatter_penalty
            for ci in group:
                emit(gi, ci, kind, credit)
            gt_credit[gi] = credit

    # one detection covering several GTs
    for ci in range(n_det):
        if ci not in det_free:
            continue
        group = [gi for gi in sorted(gt_free) if recall_m[gi][ci] >= tr]
        if group and sum(prec_m[gi][ci] for gi in group) >= tp:
            kind = "one_to_one" if len(group) == 1 else "many_gt_one_det"
            credit = 1.0 if len(group) == 1 else scatter_penalty
            for gi in group:
                emit(gi, ci, kind, credit)
            det_credit[ci] = credit

    result.gt_credit = float(sum(gt_credit))
    result.det_credit = float(sum(det_credit))
    result.unmatched_gt = [care[gi].node_id for gi in sorted(gt_free)]
    result.unmatched_det = [considered[ci] for ci in sorted(det_free)]
    return result.finish()


def fold_text(text: str, case_sensitive: bool) -> str:
    return text if case_sensitive else text.casefold()


def levenshtein(a: str, b: str) -> int:
    """Two-row dynamic-programming edit distance."""
    if a == b:
        return 0
    if not a:
        return len(b)
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def normalized_edit_similarity(gt: str, pred: str) -> float:
    """1 - levenshtein/max(len); 1.0 when both strings are empty."""
    longest = max(len(gt), len(pred))
    if longest == 0:
        return 1.0
    return 1.0 - levenshtein(gt, pred) / longest


def recognition_score(
    pairs: Sequence[tuple[str, str]], case_sensitive: bool = True
) -> dict:
    """Word accuracy and mean normalized edit similarity over aligned pairs."""
    if not pairs:
        return {"num_pairs": 0, "word_accuracy": 0.0, "mean_normalized_edit_similarity": 0.0}
    exact = 0
    nes_total = 0.0
    for gt, pred in pairs:
        g = fold_text(gt, case_sensitive)
        p = fold_text(pred, case_sensitive)
        if g == p:
            exact += 1
        nes_total += normalized_edit_similarity(g, p)
    return {
        "num_pairs": len(pairs),
        "word_accuracy": exact / len(pairs),
        "mean_normalized_edit_similarity": nes_total / len(pairs),
    }


def end_to_end_score(
    image_id: str,
    gt_regions: Sequence[GtRegion],
    dets: Sequence[Detection],
    iou_threshold: float = DEFAULT_IOU_THRESHOLD,
    case_sensitive: bool = False,
    dontcare_overlap: float = DEFAULT_DONTCARE_OVERLAP,
) -> SampleEval:
    """Localization matching as match_iou, then transcription equality.

    Geometric matches whose transcriptions differ (after folding) are
    demoted to unmatched on both sides.
    """
    if any(d.transcription is None for d in dets):
        raise MissingTranscriptions(
            "end-to-end scoring requires a grammar with transcriptions"
        )
    result = match_iou(image_id, gt_regions, dets, iou_threshold, dontcare_overlap)
    by_node = {g.node_id: g for g in gt_regions}
    care_order = {g.node_id: i for i, g in enumerate(gt_regions) if g.care}
    kept: list[dict] = []
    for m in result.matches:
        gt_text = fold_text(by_node[m["gt"]].transcription, case_sensitive)
        det_text = fold_text(dets[m["det"]].transcription or "", case_sensitive)
        if gt_text == det_text:
            m["transcription_correct"] = True
            kept.append(m)
        else:
            result.unmatched_gt.append(m["gt"])
            result.unmatched_det.append(m["det"])
    result.matches = kept
    result.unmatched_gt.sort(key=care_order.__getitem__)
    result.unmatched_det.sort()
    result.gt_credit = float(len(kept))
    result.det_credit = float(len(kept))
    return result.finish()


def aggregate(protocol_id: str, samples: Sequence[SampleEval]) -> OverallEval:
    """Micro-aggregation: sum credits and counts, then derive P/R/hmean."""
    gt_credit = sum(s.gt_credit for s in samples)
    det_credit = sum(s.det_credit for s in samples)
    num_gt = sum(s.num_gt_care for s in samples)
    num_det = sum(s.num_det_considered for s in samples)
    precision = det_credit / num_det if num_det else 0.0
    recall = gt_credit / num_gt if num_gt else 0.0
    hmean = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return OverallEval(
        protocol_id=protocol_id,
        num_gt_care=num_gt,
        num_det_considered=num_det,
        precision=precision,
        recall=recall,
        hmean=hmean,
        num_samples=len(samples),
        empty_dataset=num_gt == 0 and num_det == 0,
    )
