"""
Core data models for detections, tracks and camera geometry.
Immutable value types - every stage consumes and returns these.
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, FrozenSet, Iterator, List, Optional, Tuple

import numpy as np


class ObjectClass(str, Enum):
    """Target classes tracked at the checkpoint."""
    PERSON = "person"
    BAG = "bag"

    @classmethod
    def parse(cls, value: str) -> "ObjectClass":
        try:
            return cls(value)
        except ValueError:
            raise ValueError(f"Unknown class '{value}' (expected person or bag)") from None


@dataclass(frozen=True)
class Point2:
    """Image-plane point in pixels."""
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"Point coordinates must be finite, got ({self.x}, {self.y})")

    def as_tuple(self) -> Tuple[float, float]:
        return (self.x, self.y)


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in center format (cx, cy, w, h)."""
    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.cx, self.cy, self.w, self.h)):
            raise ValueError(f"Box values must be finite, got {self}")
        if self.w <= 0:
            raise ValueError(f"Box width must be > 0, got {self.w}")
        if self.h <= 0:
            raise ValueError(f"Box height must be > 0, got {self.h}")

    @classmethod
    def from_corners(cls, x: float, y: float, w: float, h: float) -> "BBox":
        """Build from top-left corner format used in files."""
        return cls(x + w / 2.0, y + h / 2.0, w, h)

    def to_corners(self) -> Tuple[float, float, float, float]:
        return (self.cx - self.w / 2.0, self.cy - self.h / 2.0, self.w, self.h)

    @property
    def x0(self) -> float:
        return self.cx - self.w / 2.0

    @property
    def y0(self) -> float:
        return self.cy - self.h / 2.0

    @property
    def x1(self) -> float:
        return self.cx + self.w / 2.0

    @property
    def y1(self) -> float:
        return self.cy + self.h / 2.0

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def center(self) -> Point2:
        return Point2(self.cx, self.cy)

    def as_vector(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.w, self.h], dtype=float)


@dataclass(frozen=True)
class Polygon:
    """Ordered footprint vertices (stand-in for a segmentation mask)."""
    vertices: Tuple[Point2, ...]

    def __post_init__(self):
        if len(self.vertices) < 3:
            raise ValueError(f"Polygon needs at least 3 vertices, got {len(self.vertices)}")
        if self.area <= 0:
            raise ValueError("Polygon is degenerate (zero area)")

    @classmethod
    def from_box(cls, box: BBox) -> "Polygon":
        return cls((
            Point2(box.x0, box.y0),
            Point2(box.x1, box.y0),
            Point2(box.x1, box.y1),
            Point2(box.x0, box.y1),
        ))

    @property
    def area(self) -> float:
        """Unsigned shoelace area."""
        xs = [p.x for p in self.vertices]
        ys = [p.y for p in self.vertices]
        n = len(xs)
        twice = sum(xs[i] * ys[(i + 1) % n] - xs[(i + 1) % n] * ys[i] for i in range(n))
        return abs(twice) / 2.0


@dataclass(frozen=True)
class Roi:
    """Region of interest, center format [rx, ry, rw, rh]."""
    rx: float
    ry: float
    rw: float
    rh: float

    def __post_init__(self):
        if self.rw <= 0 or self.rh <= 0:
            raise ValueError(f"ROI size must be > 0, got {self.rw}x{self.rh}")

    @property
    def center(self) -> Point2:
        return Point2(self.rx, self.ry)

    @property
    def origin(self) -> Point2:
        """Top-left corner in image coordinates."""
        return Point2(self.rx - self.rw / 2.0, self.ry - self.rh / 2.0)

    def within(self, width: float, height: float) -> bool:
        o = self.origin
        return o.x >= 0 and o.y >= 0 and o.x + self.rw <= width and o.y + self.rh <= height


@dataclass(frozen=True)
class Homography:
    """3x3 projective map between image planes, row-major."""
    m: Tuple[Tuple[float, float, float], ...]

    def __post_init__(self):
        arr = np.asarray(self.m, dtype=float)
        if arr.shape != (3, 3):
            raise ValueError(f"Homography must be 3x3, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("Homography entries must be finite")
        if abs(np.linalg.det(arr)) <= 1e-12:
            raise ValueError("Homography is singular (|det| <= 1e-12)")
        if arr[2, 2] != 0:
            arr = arr / arr[2, 2]
        object.__setattr__(self, "m", tuple(tuple(float(v) for v in row) for row in arr))

    @classmethod
    def from_array(cls, arr) -> "Homography":
        return cls(tuple(tuple(float(v) for v in row) for row in np.asarray(arr, dtype=float)))

    @classmethod
    def identity(cls) -> "Homography":
        return cls.from_array(np.eye(3))

    def as_array(self) -> np.ndarray:
        return np.array(self.m, dtype=float)

    def inverse(self) -> "Homography":
        return Homography.from_array(np.linalg.inv(self.as_array()))


@dataclass(frozen=True)
class Detection:
    """One detector output: box, confidence, class and provenance."""
    frame: int
    camera: str
    cls: ObjectClass
    box: BBox
    score: float
    footprint: Optional[Polygon] = None
    angle_index: Optional[int] = None

    def __post_init__(self):
        if self.frame < 0:
            raise ValueError(f"Frame index must be >= 0, got {self.frame}")
        if not (0.0 <= self.score <= 1.0):
            raise ValueError(f"Score must be in [0, 1], got {self.score}")
        if self.angle_index is not None and self.angle_index < 0:
            raise ValueError(f"Angle index must be >= 0, got {self.angle_index}")
        if self.footprint is not None:
            xs = [p.x for p in self.footprint.vertices]
            ys = [p.y for p in self.footprint.vertices]
            corners = (min(xs), min(ys), max(xs), max(ys))
            box_corners = (self.box.x0, self.box.y0, self.box.x1, self.box.y1)
            if max(abs(a - b) for a, b in zip(corners, box_corners)) > 0.5:
                raise ValueError("Footprint bounding box disagrees with box by more than 0.5 px")


@dataclass(frozen=True)
class AugmentedFrame:
    """Per-angle detection sets for one frame of one camera."""
    frame: int
    roi: Roi
    per_angle: Tuple[Tuple[Detection, ...], ...]

    def __post_init__(self):
        if len(self.per_angle) < 1:
            raise ValueError("AugmentedFrame needs at least one angle slot")
        for slot in self.per_angle:
            for det in slot:
                if det.frame != self.frame:
                    raise ValueError(
                        f"Detection frame {det.frame} does not match augmented frame {self.frame}"
                    )

    @property
    def n(self) -> int:
        return len(self.per_angle)

    def detections(self) -> Iterator[Detection]:
        for slot in self.per_angle:
            yield from slot


@dataclass(frozen=True)
class Cluster:
    """Mean-shift cluster of one class in one frame."""
    members: Tuple[Detection, ...]
    mode: Detection
    score_bar: float

    def __post_init__(self):
        if not self.members:
            raise ValueError("Cluster must have at least one member")
        if self.mode not in self.members:
            raise ValueError("Cluster mode must be one of its members")
        if self.score_bar < 0:
            raise ValueError(f"Cluster score must be >= 0, got {self.score_bar}")


@dataclass(frozen=True)
class TrackRecord:
    """One emitted track entry: (label, box, class) at a frame."""
    frame: int
    label: int
    box: BBox
    cls: ObjectClass
    camera: str = ""
    score: float = 1.0


TrackOutput = Tuple[TrackRecord, ...]


@dataclass(frozen=True)
class Tracklet:
    """Labeled time-ordered boxes of one target in one camera."""
    label: int
    camera: str
    cls: ObjectClass
    entries: Tuple[Tuple[int, BBox], ...]

    def __post_init__(self):
        if not self.entries:
            raise ValueError(f"Tracklet {self.label} has no entries")
        frames = [f for f, _ in self.entries]
        if any(b <= a for a, b in zip(frames, frames[1:])):
            raise ValueError(f"Tracklet {self.label} frames must be strictly increasing")

    @property
    def first_frame(self) -> int:
        return self.entries[0][0]

    @property
    def last_frame(self) -> int:
        return self.entries[-1][0]

    @property
    def first_box(self) -> BBox:
        return self.entries[0][1]

    @property
    def last_box(self) -> BBox:
        return self.entries[-1][1]

    def frames(self) -> List[int]:
        return [f for f, _ in self.entries]

    def by_frame(self) -> Dict[int, BBox]:
        return dict(self.entries)

    def relabel(self, label: int) -> "Tracklet":
        return Tracklet(label, self.camera, self.cls, self.entries)

    def to_records(self) -> List[TrackRecord]:
        return [TrackRecord(f, self.label, b, self.cls, self.camera) for f, b in self.entries]


@dataclass(frozen=True)
class LedgerEntry:
    """Ownership link between a person label and a bag label."""
    bag_label: int
    person_label: Optional[int]
    frame_created: int
    camera: str = ""
    distance: Optional[float] = None

    @property
    def associated(self) -> bool:
        return self.person_label is not None


@dataclass(frozen=True)
class AssociationLedger:
    """Ownership ledger, at most one entry per bag label."""
    entries: Tuple[LedgerEntry, ...] = ()

    def __post_init__(self):
        bags = [e.bag_label for e in self.entries]
        if len(bags) != len(set(bags)):
            raise ValueError("Ledger holds more than one entry for a bag label")

    def lookup(self, bag_label: int) -> Optional[LedgerEntry]:
        for entry in self.entries:
            if entry.bag_label == bag_label:
                return entry
        return None

    def owners(self) -> Dict[int, Optional[int]]:
        return {e.bag_label: e.person_label for e in self.entries}


@dataclass(frozen=True)
class ReentryEvent:
    """A target leaves a camera's view and comes back later."""
    label: int
    camera: str
    exit_frame: int
    return_frame: int

    def __post_init__(self):
        if self.return_frame <= self.exit_frame:
            raise ValueError(
                f"Re-entry of {self.label} returns at {self.return_frame}, not after exit {self.exit_frame}"
            )


@dataclass(frozen=True)
class GtRecord:
    """One annotated ground-truth box."""
    frame: int
    label: int
    box: BBox
    cls: ObjectClass
    camera: str = ""


@dataclass(frozen=True)
class GroundTruth:
    """Labeled boxes plus the list of annotated frames (may be sparse)."""
    records: Tuple[GtRecord, ...]
    annotated_frames: FrozenSet[int] = field(default_factory=frozenset)

    def __post_init__(self):
        keys = [(r.frame, r.label, r.cls, r.camera) for r in self.records]
        if len(keys) != len(set(keys)):
            raise ValueError("Ground truth holds more than one box per (frame, label)")
        if not self.annotated_frames:
            object.__setattr__(self, "annotated_frames", frozenset(r.frame for r in self.records))

    def select(self, cls: Optional[ObjectClass] = None, camera: Optional[str] = None) -> "GroundTruth":
        recs = tuple(
            r for r in self.records
            if (cls is None or r.cls == cls) and (camera is None or r.camera == camera)
        )
        return GroundTruth(recs, self.annotated_frames)

    def by_frame(self) -> Dict[int, List[GtRecord]]:
        out: Dict[int, List[GtRecord]] = {}
        for r in self.records:
            out.setdefault(r.frame, []).append(r)
        return out
