"""One evaluation engine shared by the CLI, the worker, and the bundle.

Running the same code path everywhere is what makes the parity guarantee
(byte-identical overall.json and per-sample JSON) hold by construction.

GT archives are ZIPs of ``gt_<image-id>.txt`` files with lines

    x1,y1,x2,y2,x3,y3,x4,y4,care,transcription

(care is 0 or 1, the transcription is last and may contain commas), plus
an optional ``snapshot.json`` index carrying image ids and sizes.
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass
from pathlib import Path

from . import evalcore
from .evalcore import Detection, GtRegion, OverallEval, SampleEval
from .fileio import canonical_json_bytes
from .geometry import GeometryError, canonicalize_quad, format_coord
from .ingest import ValidationReport, validate_archive

GT_ENTRY_PREFIX = "gt_"


class BadGtArchive(ValueError):
    pass


@dataclass(frozen=True)
class GtData:
    regions: dict[str, list[GtRegion]]  # image id -> regions
    images: list[dict]  # [{id, width, height}]

    @property
    def image_ids(self) -> list[str]:
        return [img["id"] for img in self.images]


def gt_line(region: GtRegion) -> str:
    coords = ",".join(format_coord(v) for v in region.quad.flat())
    return f"{coords},{1 if region.care else 0},{region.transcription}"


def parse_gt_line(line: str) -> GtRegion | None:
    parts = line.split(",", 9)
    if len(parts) != 10:
        raise BadGtArchive(f"gt line needs 10 fields, got {len(parts)}: {line!r}")
    try:
        quad = canonicalize_quad([float(v) for v in parts[:8]])
    except (ValueError, GeometryError) as exc:
        raise BadGtArchive(f"bad gt quad in {line!r}: {exc}") from exc
    if parts[8] not in ("0", "1"):
        raise BadGtArchive(f"care flag must be 0 or 1 in {line!r}")
    return GtRegion(node_id="", quad=quad, care=parts[8] == "1", transcription=parts[9])


def load_gt_archive(data: bytes) -> GtData:
    try:
        archive = zipfile.ZipFile(io.BytesIO(data))
    except (zipfile.BadZipFile, OSError) as exc:
        raise BadGtArchive(f"cannot read GT archive: {exc}") from exc
    regions: dict[str, list[GtRegion]] = {}
    meta: list[dict] | None = None
    for name in archive.namelist():
        if name == "snapshot.json":
            meta = json.loads(archive.read(name).decode("utf-8")).get("images")
            continue
        if not name.startswith(GT_ENTRY_PREFIX) or not name.endswith(".txt"):
            continue
        image_id = name[len(GT_ENTRY_PREFIX):-4]
        text = archive.read(name).decode("utf-8")
        rows: list[GtRegion] = []
        for lineno, raw in enumerate(text.split("\n"), start=1):
            line = raw[:-1] if raw.endswith("\r") else raw
            if not line:
                continue
            region = parse_gt_line(line)
            rows.append(
                GtRegion(
                    node_id=f"gt_{lineno}",
                    quad=region.quad,
                    care=region.care,
                    transcription=region.transcription,
                )
            )
        regions[image_id] = rows
    if meta is None:
        meta = [{"id": iid, "width": 0, "height": 0} for iid in sorted(regions)]
    for img in meta:
        regions.setdefault(img["id"], [])
    return GtData(regions=regions, images=meta)


# -- protocol execution --------------------------------------------------------

PROTOCOL_DEFAULTS: dict[str, dict] = {
    "localization_iou": {
        "iou_threshold": evalcore.DEFAULT_IOU_THRESHOLD,
        "dontcare_overlap": evalcore.DEFAULT_DONTCARE_OVERLAP,
    },
    "localization_deteval": {
        "tr": evalcore.DEFAULT_TR,
        "tp": evalcore.DEFAULT_TP,
        "scatter_penalty": evalcore.DEFAULT_SCATTER_PENALTY,
        "dontcare_overlap": evalcore.DEFAULT_DONTCARE_OVERLAP,
    },
    "recognition": {"case_sensitive": False},
    "end_to_end": {
        "iou_threshold": evalcore.DEFAULT_IOU_THRESHOLD,
        "case_sensitive": False,
        "dontcare_overlap": evalcore.DEFAULT_DONTCARE_OVERLAP,
    },
}

GRAMMAR_FOR_KIND = {
    "localization_iou": "quad",
    "localization_deteval": "quad",
    "recognition": "transcription-only",
    "end_to_end": "quad+transcription",
}


def _coerce(default, value):
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        text = str(value).strip().lower()
        if text in ("true", "1", "yes"):
            return True
        if text in ("false", "0", "no"):
            return False
        raise ValueError(f"expected a boolean, got {value!r}")
    return type(default)(value)


def resolve_params(kind: str, params: dict | None) -> dict:
    if kind not in PROTOCOL_DEFAULTS:
        raise ValueError(f"unknown protocol kind {kind!r}")
    merged = dict(PROTOCOL_DEFAULTS[kind])
    for key, value in (params or {}).items():
        if key not in merged:
            raise ValueError(f"unknown parameter {key!r} for {kind}")
        merged[key] = _coerce(merged[key], value)
    return merged


def _recognition_run(
    protocol_id: str,
    gt: GtData,
    dets_by_image: dict[str, list[Detection]],
    params: dict,
) -> tuple[dict, dict[str, dict]]:
    pairs: list[tuple[str, str]] = []
    per_sample: dict[str, dict] = {}
    for image_id in sorted(gt.regions):
        care = [r for r in gt.regions[image_id] if r.care]
        if not care:
            continue
        gt_text = care[0].transcription
        dets = dets_by_image.get(image_id, [])
        pred = dets[0].transcription or "" if dets else ""
        pairs.append((gt_text, pred))
        folded_equal = evalcore.fold_text(gt_text, params["case_sensitive"]) == \
            evalcore.fold_text(pred, params["case_sensitive"])
        per_sample[image_id] = {
            "image_id": image_id,
            "prediction": pred,
            "correct": folded_equal,
            "normalized_edit_similarity": evalcore.normalized_edit_similarity(
                evalcore.fold_text(gt_text, params["case_sensitive"]),
                evalcore.fold_text(pred, params["case_sensitive"]),
            ),
        }
    score = evalcore.recognition_score(pairs, case_sensitive=params["case_sensitive"])
    overall = {
        "protocol_id": protocol_id,
        "num_samples": len(pairs),
        "num_gt_care": len(pairs),
        "num_det_considered": len(pairs),
        "precision": float(score["word_accuracy"]),
        "recall": float(score["word_accuracy"]),
        "hmean": float(score["word_accuracy"]),
        "empty_dataset": not pairs,
        "word_accuracy": float(score["word_accuracy"]),
        "mean_normalized_edit_similarity": float(score["mean_normalized_edit_similarity"]),
    }
    return overall, per_sample


def run_protocol(
    protocol_id: str,
    kind: str,
    params: dict | None,
    gt: GtData,
    dets_by_image: dict[str, list[Detection]],
    per_sample: bool = True,
) -> tuple[dict, dict[str, dict]]:
    """Evaluate one protocol over the dataset.

    Returns the overall metrics dict and (optionally empty) per-sample
    dicts keyed by image id; both are ready for canonical serialization.
    """
    resolved = resolve_params(kind, params)
    if kind == "recognition":
        overall, samples = _recognition_run(protocol_id, gt, dets_by_image, resolved)
        return overall, samples if per_sample else {}

    samples: dict[str, dict] = {}
    evals: list[SampleEval] = []
    for image_id in sorted(gt.regions):
        regions = gt.regions[image_id]
        dets = dets_by_image.get(image_id, [])
        if kind == "localization_iou":
            sample = evalcore.match_iou(
                image_id, regions, dets,
                iou_threshold=resolved["iou_threshold"],
                dontcare_overlap=resolved["dontcare_overlap"],
            )
        elif kind == "localization_deteval":
            sample = evalcore.match_deteval(
                image_id, regions, dets,
                tr=resolved["tr"], tp=resolved["tp"],
                scatter_penalty=resolved["scatter_penalty"],
                dontcare_overlap=resolved["dontcare_overlap"],
            )
        elif kind == "end_to_end":
            sample = evalcore.end_to_end_score(
                image_id, regions, dets,
                iou_threshold=resolved["iou_threshold"],
                case_sensitive=resolved["case_sensitive"],
                dontcare_overlap=resolved["dontcare_overlap"],
            )
        else:
            raise ValueError(f"unknown protocol kind {kind!r}")
        evals.append(sample)
        samples[image_id] = sample.as_dict()
    overall = evalcore.aggregate(protocol_id, evals).as_dict()
    return overall, samples if per_sample else {}


def evaluate_archives(
    protocol_id: str,
    kind: str,
    params: dict | None,
    gt_zip: bytes,
    submission_zip: bytes,
    per_sample: bool = True,
    pattern: str = "res_{image_id}.txt",
) -> tuple[ValidationReport, dict | None, dict[str, dict]]:
    """Validate then evaluate; on validation failure no scores are produced."""
    gt = load_gt_archive(gt_zip)
    report, dets = validate_archive(
        submission_zip, gt.image_ids, GRAMMAR_FOR_KIND[kind], pattern
    )
    if not report.ok:
        return report, None, {}
    overall, samples = run_protocol(protocol_id, kind, params, gt, dets, per_sample)
    return report, overall, samples


def write_results(out_dir: Path, overall: dict, samples: dict[str, dict]) -> None:
    """Write overall.json and per_sample/<image>.json in canonical form."""
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "overall.json").write_bytes(canonical_json_bytes(overall))
    if samples:
        sample_dir = out_dir / "per_sample"
        sample_dir.mkdir(exist_ok=True)
        for image_id, record in samples.items():
            (sample_dir / f"{image_id}.json").write_bytes(canonical_json_bytes(record))
