"""
File formats: detection, tracklet and ledger JSONL, homography JSON and
MOT-style CSV.

Ingestion is an error-as-data pipeline: read -> parse -> validate ->
convert, collected into a ParseResult. The strict loaders raise FormatError
when a file does not parse cleanly.
"""

import csv
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple, Union

from .config import FORMAT_VERSION
from .errors import FormatError
from .models import (AssociationLedger, AugmentedFrame, BBox, Detection, GroundTruth, GtRecord,
                     Homography, LedgerEntry, ObjectClass, Point2, Polygon, Roi, TrackRecord, Tracklet)

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


@dataclass(frozen=True)
class ParseResult:
    """Immutable result of parsing a file - error as data."""
    success: bool
    data: Optional[List[Any]]
    errors: List[str]
    total_records: int
    valid_records: int
    warnings: List[str] = field(default_factory=list)

    def unwrap(self, path: PathLike) -> List[Any]:
        """The parsed records, or FormatError listing every problem."""
        if self.errors:
            raise FormatError(f"{path}: {self.errors[0]}", self.errors)
        return self.data or []


def read_jsonl(path: PathLike) -> Iterator[Tuple[int, Optional[dict], str]]:
    """Yield (line number, record, error) for every non-blank line."""
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                yield lineno, None, f"invalid JSON ({e.msg})"
                continue
            if not isinstance(rec, dict):
                yield lineno, None, "record must be a JSON object"
                continue
            yield lineno, rec, ""


def write_jsonl(path: PathLike, records: Iterable[dict]) -> int:
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
            count += 1
    return count


def file_digest(path: PathLike) -> str:
    """SHA-256 of the file contents."""
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _field(rec: dict, name: str, kind, optional: bool = False):
    """Fetch and coerce one field; ValueError names the field."""
    if name not in rec or rec[name] is None:
        if optional:
            return None
        raise ValueError(f"missing field '{name}'")
    value = rec[name]
    try:
        if kind is int:
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise TypeError
            return int(value)
        if kind is float:
            if isinstance(value, bool):
                raise TypeError
            return float(value)
        return kind(value)
    except (TypeError, ValueError):
        raise ValueError(f"field '{name}' has invalid value {value!r}") from None


def _check_version(rec: dict) -> None:
    version = rec.get("format_version", FORMAT_VERSION)
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported format_version {version!r}")


# --- detections ---------------------------------------------------------------

@dataclass(frozen=True)
class DetectionEntry:
    """Raw detection record before validation."""
    frame: int
    camera: str
    cls: str
    angle_index: Optional[int]
    n_angles: Optional[int]
    score: float
    x: float
    y: float
    w: float
    h: float
    footprint: Optional[List[Tuple[float, float]]]


def parse_detection_entry(rec: dict) -> Tuple[bool, Optional[DetectionEntry], str]:
    try:
        _check_version(rec)
        fp = rec.get("footprint")
        footprint = None
        if fp is not None:
            if not isinstance(fp, list) or not all(isinstance(p, list) and len(p) == 2 for p in fp):
                raise ValueError("field 'footprint' must be a list of [x, y] pairs")
            footprint = [(float(p[0]), float(p[1])) for p in fp]
        entry = DetectionEntry(
            frame=_field(rec, "frame", int),
            camera=_field(rec, "camera", str),
            cls=_field(rec, "cls", str),
            angle_index=_field(rec, "angle_index", int, optional=True),
            n_angles=_field(rec, "n_angles", int, optional=True),
            score=_field(rec, "score", float),
            x=_field(rec, "x", float),
            y=_field(rec, "y", float),
            w=_field(rec, "w", float),
            h=_field(rec, "h", float),
            footprint=footprint,
        )
        return True, entry, ""
    except ValueError as e:
        return False, None, str(e)


def validate_detection_entry(entry: DetectionEntry) -> Tuple[bool, str]:
    errors = []
    if entry.frame < 0:
        errors.append(f"field 'frame' must be >= 0, got {entry.frame}")
    if entry.cls not in {c.value for c in ObjectClass}:
        errors.append(f"field 'cls' has unknown class '{entry.cls}'")
    if not (0.0 <= entry.score <= 1.0):
        errors.append(f"field 'score' must be in [0, 1], got {entry.score}")
    if entry.w <= 0:
        errors.append(f"field 'w' must be > 0, got {entry.w}")
    if entry.h <= 0:
        errors.append(f"field 'h' must be > 0, got {entry.h}")
    if entry.n_angles is not None and entry.n_angles < 1:
        errors.append(f"field 'n_angles' must be >= 1, got {entry.n_angles}")
    if entry.angle_index is not None:
        if entry.angle_index < 0:
            errors.append(f"field 'angle_index' must be >= 0, got {entry.angle_index}")
        elif entry.n_angles is not None and entry.angle_index >= entry.n_angles:
            errors.append(f"field 'angle_index' {entry.angle_index} not below n_angles {entry.n_angles}")
    if entry.footprint is not None and len(entry.footprint) < 3:
        errors.append("field 'footprint' needs at least 3 vertices")
    if errors:
        return False, "; ".join(errors)
    return True, ""


def detection_entry_to_detection(entry: DetectionEntry) -> Detection:
    footprint = None
    if entry.footprint is not None:
        footprint = Polygon(tuple(Point2(x, y) for x, y in entry.footprint))
    return Detection(
        frame=entry.frame,
        camera=entry.camera,
        cls=ObjectClass(entry.cls),
        box=BBox.from_corners(entry.x, entry.y, entry.w, entry.h),
        score=entry.score,
        footprint=footprint,
        angle_index=entry.angle_index,
    )


def detection_to_record(det: Detection, n_angles: Optional[int] = None) -> dict:
    x, y, w, h = det.box.to_corners()
    return {
        "format_version": FORMAT_VERSION,
        "frame": det.frame,
        "camera": det.camera,
        "cls": det.cls.value,
        "angle_index": det.angle_index,
        "n_angles": n_angles if det.angle_index is not None else None,
        "score": det.score,
        "x": x,
        "y": y,
        "w": w,
        "h": h,
        "footprint": [[p.x, p.y] for p in det.footprint.vertices] if det.footprint else None,
    }


def process_detections(path: PathLike) -> ParseResult:
    """read -> parse -> validate -> convert for a detection JSONL file."""
    if not Path(path).exists():
        return ParseResult(False, None, [f"Detection file not found: {path}"], 0, 0)
    detections: List[Detection] = []
    n_angles: Dict[Tuple[str, int], int] = {}
    errors: List[str] = []
    total = 0
    for lineno, rec, err in read_jsonl(path):
        total += 1
        if rec is None:
            errors.append(f"line {lineno}: {err}")
            continue
        ok, entry, err = parse_detection_entry(rec)
        if not ok:
            errors.append(f"line {lineno}: {err}")
            continue
        ok, err = validate_detection_entry(entry)
        if not ok:
            errors.append(f"line {lineno}: {err}")
            continue
        try:
            det = detection_entry_to_detection(entry)
        except ValueError as e:
            errors.append(f"line {lineno}: {e}")
            continue
        if entry.n_angles is not None:
            key = (entry.camera, entry.frame)
            if n_angles.setdefault(key, entry.n_angles) != entry.n_angles:
                errors.append(f"line {lineno}: field 'n_angles' disagrees with earlier records of frame {entry.frame}")
                continue
        detections.append(det)
    return ParseResult(
        success=not errors,
        data=detections,
        errors=errors,
        total_records=total,
        valid_records=len(detections),
    )


def group_frames(detections: Sequence[Detection], roi: Roi, n_angles: Optional[int] = None,
                 camera: Optional[str] = None) -> Tuple[List[AugmentedFrame], List[str]]:
    """
    Group per-angle detections into AugmentedFrames (one per frame).

    Angle slots with no records are filled with empty sets; each filled slot
    adds a warning.
    """
    by_frame: Dict[int, List[Detection]] = {}
    for det in detections:
        if camera is not None and det.camera != camera:
            continue
        if det.angle_index is None:
            raise FormatError(f"Frame {det.frame}: detection without angle_index in a per-angle file")
        by_frame.setdefault(det.frame, []).append(det)
    if n_angles is None:
        n_angles = max((d.angle_index for ds in by_frame.values() for d in ds), default=-1) + 1
    frames = []
    warnings = []
    for f in sorted(by_frame):
        slots: List[List[Detection]] = [[] for _ in range(n_angles)]
        for det in by_frame[f]:
            if det.angle_index >= n_angles:
                raise FormatError(f"Frame {f}: angle_index {det.angle_index} not below n_angles {n_angles}")
            slots[det.angle_index].append(det)
        missing = [i for i, s in enumerate(slots) if not s]
        if missing:
            warnings.append(f"frame {f}: {len(missing)} empty angle slots")
        frames.append(AugmentedFrame(f, roi, tuple(tuple(s) for s in slots)))
    return frames, warnings


def parse_detections(path: PathLike, roi: Optional[Roi] = None,
                     camera: Optional[str] = None) -> List[AugmentedFrame]:
    """Strict loader for per-angle detection files."""
    result = process_detections(path)
    dets = result.unwrap(path)
    roi = roi or Roi(320.0, 240.0, 640.0, 480.0)
    declared = set(_declared_angles(path))
    n_angles = max(declared) if declared else None
    frames, warnings = group_frames(dets, roi, n_angles, camera)
    if warnings:
        logger.warning("%s: %d frames with empty angle slots", path, len(warnings))
    return frames


def _declared_angles(path: PathLike) -> Iterator[int]:
    for _, rec, _ in read_jsonl(path):
        if rec is not None and isinstance(rec.get("n_angles"), int):
            yield rec["n_angles"]


def load_detections(path: PathLike, camera: Optional[str] = None) -> List[Detection]:
    """Strict loader returning flat detections (used for fused files)."""
    dets = process_detections(path).unwrap(path)
    return [d for d in dets if camera is None or d.camera == camera]


def write_detections(path: PathLike, frames: Iterable[AugmentedFrame]) -> int:
    """Per-angle detections, one record per line."""
    return write_jsonl(path, (
        detection_to_record(det, af.n)
        for af in frames
        for slot in af.per_angle
        for det in slot
    ))


def write_fused(path: PathLike, detections: Iterable[Detection]) -> int:
    return write_jsonl(path, (detection_to_record(det) for det in detections))


# --- tracklets ----------------------------------------------------------------

def tracklet_to_record(t: Tracklet) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "label": t.label,
        "camera": t.camera,
        "cls": t.cls.value,
        "entries": [[f, *b.to_corners()] for f, b in t.entries],
    }


def parse_tracklet_record(rec: dict) -> Tracklet:
    _check_version(rec)
    entries = rec.get("entries")
    if not isinstance(entries, list) or not entries:
        raise ValueError("field 'entries' must be a non-empty list")
    parsed = []
    for i, e in enumerate(entries):
        if not isinstance(e, list) or len(e) != 5:
            raise ValueError(f"field 'entries'[{i}] must be [frame, x, y, w, h]")
        f, x, y, w, h = e
        if isinstance(f, bool) or not isinstance(f, int):
            raise ValueError(f"field 'entries'[{i}] frame must be an integer")
        parsed.append((f, BBox.from_corners(float(x), float(y), float(w), float(h))))
    return Tracklet(
        label=_field(rec, "label", int),
        camera=_field(rec, "camera", str),
        cls=ObjectClass.parse(_field(rec, "cls", str)),
        entries=tuple(parsed),
    )


def _load_records(path: PathLike, convert, what: str) -> ParseResult:
    if not Path(path).exists():
        return ParseResult(False, None, [f"{what} file not found: {path}"], 0, 0)
    out = []
    errors = []
    total = 0
    for lineno, rec, err in read_jsonl(path):
        total += 1
        if rec is None:
            errors.append(f"line {lineno}: {err}")
            continue
        try:
            out.append(convert(rec))
        except ValueError as e:
            errors.append(f"line {lineno}: {e}")
    return ParseResult(not errors, out, errors, total, len(out))


def load_tracklets(path: PathLike, camera: Optional[str] = None) -> List[Tracklet]:
    ts = _load_records(path, parse_tracklet_record, "Tracklet").unwrap(path)
    return [t for t in ts if camera is None or t.camera == camera]


def write_tracklets(path: PathLike, tracklets: Iterable[Tracklet]) -> int:
    return write_jsonl(path, (tracklet_to_record(t) for t in tracklets))


# --- ownership ledger ---------------------------------------------------------

def ledger_entry_to_record(e: LedgerEntry) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "camera": e.camera,
        "person_label": e.person_label,
        "bag_label": e.bag_label,
        "frame_created": e.frame_created,
        "distance": e.distance,
    }


def parse_ledger_record(rec: dict) -> LedgerEntry:
    _check_version(rec)
    return LedgerEntry(
        bag_label=_field(rec, "bag_label", int),
        person_label=_field(rec, "person_label", int, optional=True),
        frame_created=_field(rec, "frame_created", int),
        camera=rec.get("camera") or "",
        distance=_field(rec, "distance", float, optional=True),
    )


def load_ledger(path: PathLike) -> AssociationLedger:
    entries = _load_records(path, parse_ledger_record, "Ledger").unwrap(path)
    try:
        return AssociationLedger(tuple(entries))
    except ValueError as e:
        raise FormatError(f"{path}: {e}") from e


def write_ledger(path: PathLike, ledger: AssociationLedger) -> int:
    return write_jsonl(path, (ledger_entry_to_record(e) for e in ledger.entries))


# --- homography ---------------------------------------------------------------

def save_homography(path: PathLike, h: Homography, source: str = "", target: str = "") -> None:
    doc = {"format_version": FORMAT_VERSION, "source": source, "target": target,
           "matrix": [list(row) for row in h.m]}
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def load_homography(path: PathLike) -> Homography:
    """Normalized, invertibility-checked homography from a JSON document."""
    p = Path(path)
    if not p.exists():
        raise FormatError(f"Homography file not found: {path}")
    try:
        doc = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: invalid JSON at line {e.lineno}: {e.msg}") from e
    try:
        if not isinstance(doc, dict):
            raise ValueError("document must be a JSON object")
        _check_version(doc)
        matrix = doc.get("matrix")
        if not isinstance(matrix, list) or len(matrix) != 3 or any(
                not isinstance(r, list) or len(r) != 3 for r in matrix):
            raise ValueError("field 'matrix' must be a 3x3 list of numbers")
        return Homography(tuple(tuple(float(v) for v in row) for row in matrix))
    except (TypeError, ValueError) as e:
        raise FormatError(f"{path}: {e}") from e


# --- MOT-style CSV ------------------------------------------------------------

MOT_FIELDS = ("frame", "id", "x", "y", "w", "h", "score", "class", "camera")


def write_mot(path: PathLike, records: Iterable[Union[TrackRecord, GtRecord]]) -> int:
    """frame,id,x,y,w,h,score,class,camera rows, no header."""
    count = 0
    rows = sorted(records, key=lambda r: (r.frame, r.camera, r.cls.value, r.label))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for r in rows:
            x, y, w, h = r.box.to_corners()
            writer.writerow([r.frame, r.label, repr(x), repr(y), repr(w), repr(h),
                             repr(float(getattr(r, "score", 1.0))), r.cls.value, r.camera])
            count += 1
    return count


def parse_mot_row(row: List[str]) -> TrackRecord:
    if len(row) != len(MOT_FIELDS):
        raise ValueError(f"expected {len(MOT_FIELDS)} columns, got {len(row)}")
    values = dict(zip(MOT_FIELDS, (v.strip() for v in row)))
    try:
        frame, label = int(values["frame"]), int(values["id"])
    except ValueError:
        raise ValueError("columns 'frame' and 'id' must be integers") from None
    try:
        x, y, w, h, score = (float(values[k]) for k in ("x", "y", "w", "h", "score"))
    except ValueError:
        raise ValueError("columns x, y, w, h and score must be numbers") from None
    if w <= 0 or h <= 0:
        raise ValueError(f"column 'w'/'h' must be > 0, got {w}x{h}")
    return TrackRecord(frame, label, BBox.from_corners(x, y, w, h),
                       ObjectClass.parse(values["class"]), values["camera"], score)


def process_mot(path: PathLike) -> ParseResult:
    if not Path(path).exists():
        return ParseResult(False, None, [f"MOT file not found: {path}"], 0, 0)
    out = []
    errors = []
    total = 0
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or not any(c.strip() for c in row):
                continue
            total += 1
            try:
                out.append(parse_mot_row(row))
            except ValueError as e:
                errors.append(f"line {lineno}: {e}")
    return ParseResult(not errors, out, errors, total, len(out))


def load_track_records(path: PathLike) -> List[TrackRecord]:
    return process_mot(path).unwrap(path)


def load_ground_truth(path: PathLike, annotated_frames: Optional[Iterable[int]] = None) -> GroundTruth:
    """Ground truth from MOT CSV; annotated frames default to the frames present."""
    recs = load_track_records(path)
    gt = tuple(GtRecord(r.frame, r.label, r.box, r.cls, r.camera) for r in recs)
    try:
        return GroundTruth(gt, frozenset(annotated_frames or ()))
    except ValueError as e:
        raise FormatError(f"{path}: {e}") from e


def write_json(path: PathLike, doc: dict) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_json(path: PathLike) -> dict:
    p = Path(path)
    if not p.exists():
        raise FormatError(f"File not found: {path}")
    try:
        doc = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: invalid JSON at line {e.lineno}: {e.msg}") from e
    if not isinstance(doc, dict):
        raise FormatError(f"{path}: document must be a JSON object")
    return doc
