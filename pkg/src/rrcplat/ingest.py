"""Submission parsing and validation with precise, user-facing errors.

Result archives are ZIPs of UTF-8 text files, one per sample, named by the
task's filename pattern (default ``res_<image-id>.txt``).  Each non-empty
line is one detection; the field layout is the task's line grammar, with
the transcription always the final field so it may contain commas.  The
grammar here reconstructs the de-facto convention for this family of
competitions; it is documented as such in the README.

Validation never stops at the first problem: the report aggregates every
error with file and 1-based line number so authors can fix a submission in
one pass.
"""

from __future__ import annotations

import io
import math
import re
import zipfile
from dataclasses import dataclass, field

from .geometry import GeometryError, Quad, canonicalize_quad, format_coord

GRAMMARS = (
    "quad",
    "quad+confidence",
    "quad+transcription",
    "quad+confidence+transcription",
    "transcription-only",
)

DEFAULT_PATTERN = "res_{image_id}.txt"

_SKIP_PREFIXES = ("__MACOSX/",)
_SKIP_NAMES = (".DS_Store",)


@dataclass(frozen=True)
class Detection:
    quad: Quad | None = None
    confidence: float | None = None
    transcription: str | None = None


@dataclass(frozen=True)
class LineError:
    line: int
    code: str
    message: str


@dataclass
class ValidationReport:
    ok: bool = True
    errors: list[dict] = field(default_factory=list)
    warnings: list[dict] = field(default_factory=list)
    per_sample_counts: dict[str, int] = field(default_factory=dict)

    def add_error(self, file: str, line: int, code: str, message: str) -> None:
        self.errors.append({"file": file, "line": line, "code": code, "message": message})
        self.ok = False

    def add_warning(self, file: str, line: int, code: str, message: str) -> None:
        self.warnings.append({"file": file, "line": line, "code": code, "message": message})

    def as_dict(self) -> dict:
        return {
            "ok": self.ok,
            "errors": self.errors,
            "warnings": self.warnings,
            "per_sample_counts": self.per_sample_counts,
        }


def _grammar_shape(grammar: str) -> tuple[bool, bool, bool]:
    """(has_quad, has_confidence, has_transcription) for a grammar name."""
    if grammar not in GRAMMARS:
        raise ValueError(f"unknown line grammar {grammar!r}")
    if grammar == "transcription-only":
        return False, False, True
    return (
        True,
        "confidence" in grammar,
        "transcription" in grammar,
    )


def _parse_float(text: str) -> float | None:
    try:
        value = float(text)
    except ValueError:
        return None
    if not math.isfinite(value):
        return None
    return value


def parse_line(line: str, grammar: str) -> tuple[Detection | None, LineError | None]:
    """Parse one pre-stripped line; exactly one of the results is set."""
    has_quad, has_conf, has_trans = _grammar_shape(grammar)
    if not has_quad:
        return Detection(transcription=line), None

    want = 8 + (1 if has_conf else 0) + (1 if has_trans else 0)
    if has_trans:
        parts = line.split(",", want - 1)
    else:
        parts = line.split(",")
    if len(parts) != want:
        return None, LineError(0, "WrongFieldCount", f"got {len(parts)} fields, want {want}")

    coords: list[float] = []
    for i, raw in enumerate(parts[:8]):
        value = _parse_float(raw)
        if value is None:
            return None, LineError(
                0, "NonNumericCoordinate", f"field {i + 1}: {raw!r} is not a finite number"
            )
        coords.append(value)

    confidence: float | None = None
    if has_conf:
        confidence = _parse_float(parts[8])
        if confidence is None or not 0.0 <= confidence <= 1.0:
            return None, LineError(
                0, "ConfidenceOutOfRange", f"confidence {parts[8]!r} not in [0, 1]"
            )

    transcription = parts[-1] if has_trans else None

    try:
        quad = canonicalize_quad(coords)
    except GeometryError as exc:
        return None, LineError(
            0, "InvalidQuad", f"{type(exc).__name__}: {exc}"
        )
    return Detection(quad=quad, confidence=confidence, transcription=transcription), None


def parse_result_file(text: str, grammar: str) -> tuple[list[Detection], list[LineError]]:
    """Parse a whole result file; errors carry 1-based line numbers."""
    detections: list[Detection] = []
    errors: list[LineError] = []
    for lineno, raw in enumerate(text.split("\n"), start=1):
        line = raw[:-1] if raw.endswith("\r") else raw
        if line == "":
            continue
        det, err = parse_line(line, grammar)
        if err is not None:
            errors.append(LineError(lineno, err.code, err.message))
        else:
            assert det is not None
            detections.append(det)
    return detections, errors


def serialize_detection(det: Detection, grammar: str) -> str:
    """Canonical line form: coordinates to 2 decimals, transcription verbatim."""
    has_quad, has_conf, has_trans = _grammar_shape(grammar)
    if not has_quad:
        return det.transcription or ""
    assert det.quad is not None
    fields = [format_coord(v) for v in det.quad.flat()]
    if has_conf:
        conf = det.confidence if det.confidence is not None else 0.0
        fields.append(f"{conf:.6f}".rstrip("0").rstrip(".") or "0")
    if has_trans:
        fields.append(det.transcription or "")
    return ",".join(fields)


def _pattern_regex(pattern: str) -> re.Pattern[str]:
    return re.compile(
        "^" + re.escape(pattern).replace(re.escape("{image_id}"), "([A-Za-z0-9_.-]+)") + "$"
    )


def validate_archive(
    data: bytes,
    expected_ids: list[str],
    grammar: str,
    pattern: str = DEFAULT_PATTERN,
) -> tuple[ValidationReport, dict[str, list[Detection]]]:
    """Validate a submission archive; returns the report and parsed detections.

    Unknown sample ids are hard errors (almost always a naming mistake);
    samples with no file are warnings and score as zero detections.
    """
    report = ValidationReport()
    detections: dict[str, list[Detection]] = {}
    try:
        archive = zipfile.ZipFile(io.BytesIO(data))
        names = archive.namelist()
    except (zipfile.BadZipFile, OSError) as exc:
        report.add_error("", 0, "CorruptArchive", f"cannot read archive: {exc}")
        return report, detections

    expected = set(expected_ids)
    seen: set[str] = set()
    rx = _pattern_regex(pattern)
    for name in names:
        if name.endswith("/") or name.startswith(_SKIP_PREFIXES) or name in _SKIP_NAMES:
            continue
        m = rx.match(name)
        if not m:
            report.add_error(name, 0, "BadFilename", f"does not match pattern {pattern!r}")
            continue
        image_id = m.group(1)
        if image_id not in expected:
            report.add_error(name, 0, "UnknownSample", f"no sample {image_id!r} in this task")
            continue
        if image_id in seen:
            report.add_error(name, 0, "DuplicateSample", f"second file for {image_id!r}")
            continue
        seen.add(image_id)
        try:
            text = archive.read(name).decode("utf-8")
        except UnicodeDecodeError as exc:
            report.add_error(name, 0, "NotUtf8", str(exc))
            continue
        except (zipfile.BadZipFile, OSError) as exc:
            report.add_error(name, 0, "CorruptArchive", f"cannot read entry: {exc}")
            continue
        dets, errors = parse_result_file(text, grammar)
        for err in errors:
            report.add_error(name, err.line, err.code, err.message)
        detections[image_id] = dets
        report.per_sample_counts[image_id] = len(dets)

    for image_id in sorted(expected - seen):
        report.add_warning(
            pattern.replace("{image_id}", image_id), 0, "MissingSample",
            f"no result file for {image_id!r}; scored as zero detections",
        )
    return report, detections
