"""
Deterministic synthetic checkpoint scenes and a mock per-angle detector.

Passengers walk a fixed route (entry, divest table, metal detector,
retrieval, exit) one after another. Bags appear on the divest table next to
their owner, ride the conveyor to the retrieval spot and then follow the
owner out. Some passengers detour into the part of the hall only the
auxiliary camera sees and come back, which plants re-entry events in the
primary view.

The world frame is the primary camera's image plane.
"""

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..calculations.geometry import (image_to_roi, iou, polygon_bbox, project_box, rotate_polygon)
from .config import FORMAT_VERSION, CameraSpec, PipelineConfig
from .errors import FormatError
from .formats import read_json, save_homography, write_detections, write_json, write_ledger, write_mot
from .models import (AssociationLedger, AugmentedFrame, BBox, Detection, GroundTruth, GtRecord,
                     Homography, LedgerEntry, ObjectClass, Point2, Polygon, ReentryEvent)

logger = logging.getLogger(__name__)

BAG_APPEAR_DELAY = 5


@dataclass(frozen=True)
class Waypoint:
    """Route point; dwell frames spent there; frames optionally fixes the leg duration."""
    x: float
    y: float
    dwell: int = 0
    frames: Optional[int] = None

    def __post_init__(self):
        if self.dwell < 0:
            raise ValueError(f"Dwell must be >= 0, got {self.dwell}")
        if self.frames is not None and self.frames < 1:
            raise ValueError(f"Leg duration must be >= 1 frame, got {self.frames}")


def default_homography() -> Homography:
    """Auxiliary image -> primary image: shifted right by 400 px, slight perspective."""
    return Homography(((1.0, 0.0, 400.0), (0.0, 1.0, 0.0), (2e-5, 0.0, 1.0)))


@dataclass(frozen=True)
class NoiseModel:
    """
    Mock detector behaviour.

    Detection probability dips towards trough when the object's apparent
    orientation is near +-pi/2 and sits at peak when it is upright.
    """
    peak: float = 0.95
    trough: float = 0.2
    dip_width: float = math.pi / 8
    center_sigma: float = 1.0
    size_sigma: float = 0.0
    spurious_rate: float = 0.05
    score_mean: float = 0.92
    score_sigma: float = 0.03
    spurious_score: Tuple[float, float] = (0.5, 0.9)

    def __post_init__(self):
        if not (0.0 <= self.trough <= 1.0 and 0.0 <= self.peak <= 1.0):
            raise ValueError("peak and trough must be probabilities")
        if self.dip_width <= 0:
            raise ValueError(f"dip_width must be > 0, got {self.dip_width}")
        if min(self.center_sigma, self.size_sigma, self.spurious_rate, self.score_sigma) < 0:
            raise ValueError("Noise magnitudes must be >= 0")
        lo, hi = self.spurious_score
        if not (0.0 <= lo <= hi <= 1.0):
            raise ValueError(f"spurious_score must be an interval in [0, 1], got {self.spurious_score}")

    @classmethod
    def perfect(cls) -> "NoiseModel":
        return cls(peak=1.0, trough=1.0, center_sigma=0.0, size_sigma=0.0, spurious_rate=0.0,
                   score_mean=1.0, score_sigma=0.0)

    @classmethod
    def dropout(cls, rate: float, jitter: float = 0.0, spurious_rate: float = 0.0) -> "NoiseModel":
        """Orientation-independent detection with the given miss rate."""
        return cls(peak=1.0 - rate, trough=1.0 - rate, center_sigma=jitter, spurious_rate=spurious_rate)

    def detection_prob(self, delta: float) -> float:
        off = min(abs(_wrap(delta - math.pi / 2)), abs(_wrap(delta + math.pi / 2)))
        return self.peak - (self.peak - self.trough) * math.exp(-0.5 * (off / self.dip_width) ** 2)


def _wrap(a: float) -> float:
    """Wrap to (-pi, pi]."""
    w = math.atan2(math.sin(a), math.cos(a))
    return math.pi if w == -math.pi else w


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int = 42
    n_passengers: int = 8
    n_bags: int = 6
    ownership: Tuple[int, ...] = ()
    n_reentries: int = 4
    spacing: int = 60
    walk_speed: float = 4.0
    max_speed: float = 8.0
    lateral_jitter: float = 8.0
    person_size: Tuple[float, float] = (60.0, 60.0)
    bag_size: Tuple[float, float] = (40.0, 30.0)
    bag_offset: Tuple[float, float] = (0.0, 40.0)
    entry: Waypoint = Waypoint(20.0, 120.0)
    divest: Waypoint = Waypoint(200.0, 120.0, 25)
    detector: Waypoint = Waypoint(360.0, 240.0, 8)
    retrieval: Waypoint = Waypoint(560.0, 360.0, 30)
    exit: Waypoint = Waypoint(900.0, 400.0)
    detour: Tuple[Waypoint, ...] = (Waypoint(800.0, 300.0, 40), Waypoint(560.0, 440.0, 10))
    detour_exit: Waypoint = Waypoint(900.0, 440.0)
    primary: CameraSpec = CameraSpec("cam9")
    auxiliary: CameraSpec = CameraSpec("cam2")
    homography: Homography = field(default_factory=default_homography)
    noise: NoiseModel = field(default_factory=NoiseModel)
    annotate_every: int = 1

    def __post_init__(self):
        if self.n_passengers < 0 or self.n_bags < 0 or self.n_reentries < 0:
            raise ValueError("Counts must be >= 0")
        if self.n_reentries > self.n_passengers:
            raise ValueError(f"{self.n_reentries} re-entries need at least as many passengers")
        if self.n_bags and not self.n_passengers:
            raise ValueError("Bags need at least one passenger to own them")
        if self.ownership:
            if len(self.ownership) != self.n_bags:
                raise ValueError(f"ownership lists {len(self.ownership)} owners for {self.n_bags} bags")
            if any(not (0 <= o < self.n_passengers) for o in self.ownership):
                raise ValueError("ownership refers to a passenger that does not exist")
        if self.spacing < 1 or self.annotate_every < 1:
            raise ValueError("spacing and annotate_every must be >= 1")
        if self.walk_speed <= 0 or self.max_speed <= 0:
            raise ValueError("Speeds must be > 0")
        if self.primary.id == self.auxiliary.id:
            raise ValueError("Primary and auxiliary cameras must differ")

    @classmethod
    def from_pipeline(cls, cfg: PipelineConfig, **overrides) -> "ScenarioConfig":
        """Cameras and seed taken from a pipeline config's first handoff pair."""
        values = {"seed": cfg.seed}
        if cfg.handoff:
            pair = cfg.handoff[0]
            values["primary"] = cfg.camera(pair.primary)
            values["auxiliary"] = cfg.camera(pair.auxiliary)
        values.update(overrides)
        return cls(**values)

    def owner_of(self, bag: int) -> int:
        """Passenger index owning bag index `bag`."""
        if self.ownership:
            return self.ownership[bag]
        return bag % self.n_passengers

    def camera_ids(self) -> Tuple[str, str]:
        return self.primary.id, self.auxiliary.id


class _Trajectory:
    """Piecewise-linear path over (frame, x, y) keyframes, with an optional tail."""

    def __init__(self, keys: List[Tuple[int, float, float]], tail: Optional["_Trajectory"] = None,
                 tail_offset: Tuple[float, float] = (0.0, 0.0)):
        self.keys = keys
        self.tail = tail
        self.tail_offset = tail_offset
        self._t = np.array([k[0] for k in keys], dtype=float)
        self._x = np.array([k[1] for k in keys], dtype=float)
        self._y = np.array([k[2] for k in keys], dtype=float)

    @property
    def start(self) -> int:
        return self.keys[0][0]

    @property
    def end(self) -> int:
        return self.tail.end if self.tail is not None else self.keys[-1][0]

    def alive(self, t: int) -> bool:
        return self.start <= t <= self.end

    def position(self, t: int) -> Tuple[float, float]:
        if self.tail is not None and t > self.keys[-1][0]:
            x, y = self.tail.position(t)
            return x + self.tail_offset[0], y + self.tail_offset[1]
        return float(np.interp(t, self._t, self._x)), float(np.interp(t, self._t, self._y))

    def heading(self, t: int) -> float:
        """Direction of the latest moving leg at or before t."""
        if self.tail is not None and t > self.keys[-1][0]:
            return self.tail.heading(t)
        heading = None
        first = None
        for (t0, x0, y0), (t1, x1, y1) in zip(self.keys, self.keys[1:]):
            if (x1, y1) == (x0, y0):
                continue
            h = math.atan2(y1 - y0, x1 - x0)
            if first is None:
                first = h
            if t0 <= t:
                heading = h
        if heading is not None:
            return heading
        return first if first is not None else 0.0


def _keyframes(start: int, points: Sequence[Waypoint], cfg: ScenarioConfig) -> Tuple[List[Tuple[int, float, float]], List[Tuple[int, int]]]:
    """Keyframes plus (arrive, leave) frames per waypoint."""
    t = start
    p0 = points[0]
    keys = [(t, p0.x, p0.y)]
    stops = [(t, t + p0.dwell)]
    if p0.dwell:
        t += p0.dwell
        keys.append((t, p0.x, p0.y))
    for prev, wp in zip(points, points[1:]):
        dist = math.hypot(wp.x - prev.x, wp.y - prev.y)
        frames = wp.frames if wp.frames is not None else max(1, math.ceil(dist / cfg.walk_speed))
        if dist / frames > cfg.max_speed + 1e-9:
            raise ValueError(
                f"Leg ({prev.x}, {prev.y}) -> ({wp.x}, {wp.y}) needs {dist / frames:.2f} px/frame, "
                f"above max_speed {cfg.max_speed}"
            )
        t += frames
        keys.append((t, wp.x, wp.y))
        stops.append((t, t + wp.dwell))
        if wp.dwell:
            t += wp.dwell
            keys.append((t, wp.x, wp.y))
    return keys, stops


@dataclass(frozen=True)
class ObjectState:
    """One object at one frame, in world (primary image) coordinates."""
    label: int
    cls: ObjectClass
    cx: float
    cy: float
    w: float
    h: float
    heading: float

    @property
    def box(self) -> BBox:
        return BBox(self.cx, self.cy, self.w, self.h)


@dataclass(frozen=True)
class ScenarioTruth:
    """Everything the generator knows: object states, ground truth, ownership, re-entries."""
    config: ScenarioConfig
    n_frames: int
    states: Tuple[Tuple[ObjectState, ...], ...]
    ground_truth: GroundTruth
    ownership: AssociationLedger
    reentries: Tuple[ReentryEvent, ...]

    @property
    def homography(self) -> Homography:
        """Auxiliary -> primary."""
        return self.config.homography

    @cached_property
    def to_auxiliary(self) -> Homography:
        return self.config.homography.inverse()

    def camera(self, camera_id: str) -> CameraSpec:
        for cam in (self.config.primary, self.config.auxiliary):
            if cam.id == camera_id:
                return cam
        raise ValueError(f"Camera '{camera_id}' is not part of this scenario")

    def camera_index(self, camera_id: str) -> int:
        return 0 if camera_id == self.config.primary.id else 1

    def visible(self, frame: int, camera_id: str) -> List[Tuple[ObjectState, BBox]]:
        """Objects whose box center falls inside the camera image, with their box there."""
        if not (0 <= frame < self.n_frames):
            raise ValueError(f"Frame {frame} outside scenario span [0, {self.n_frames})")
        cam = self.camera(camera_id)
        to_aux = self.to_auxiliary if camera_id != self.config.primary.id else None
        out = []
        for s in self.states[frame]:
            box = s.box if to_aux is None else project_box(to_aux, s.box)
            if 0 <= box.cx < cam.width and 0 <= box.cy < cam.height:
                out.append((s, box))
        return out

    def gt_for(self, camera_id: str, cls: Optional[ObjectClass] = None) -> GroundTruth:
        return self.ground_truth.select(cls, camera_id)


def generate(cfg: ScenarioConfig) -> ScenarioTruth:
    """Build every trajectory, sample it per frame and derive the ground truth."""
    rng = np.random.default_rng(cfg.seed)
    people: List[_Trajectory] = []
    stops_of: List[List[Tuple[int, int]]] = []
    detouring = set(range(cfg.n_reentries))
    for i in range(cfg.n_passengers):
        dy = float(rng.uniform(-cfg.lateral_jitter, cfg.lateral_jitter)) if cfg.lateral_jitter else 0.0
        route = [cfg.entry, cfg.divest, cfg.detector, cfg.retrieval]
        route += list(cfg.detour) + [cfg.detour_exit] if i in detouring else [cfg.exit]
        route = [Waypoint(w.x, w.y + dy, w.dwell, w.frames) for w in route]
        keys, stops = _keyframes(i * cfg.spacing, route, cfg)
        people.append(_Trajectory(keys))
        stops_of.append(stops)

    bags: List[Tuple[int, _Trajectory]] = []
    ledger = []
    per_owner: Dict[int, int] = {}
    for j in range(cfg.n_bags):
        owner = cfg.owner_of(j)
        k = per_owner.get(owner, 0)
        per_owner[owner] = k + 1
        off = (cfg.bag_offset[0] + 40.0 * k, cfg.bag_offset[1])
        (div_in, div_out), (ret_in, ret_out) = stops_of[owner][1], stops_of[owner][3]
        dx, dy = people[owner].position(div_in)
        rx, ry = people[owner].position(ret_in)
        table = (dx + off[0], dy + off[1])
        pickup = (rx + off[0], ry + off[1])
        appear = min(div_in + BAG_APPEAR_DELAY, div_out)
        ride = ret_in - div_out
        dist = math.hypot(pickup[0] - table[0], pickup[1] - table[1])
        if ride < 1 or dist / ride > cfg.max_speed + 1e-9:
            raise ValueError(f"Bag {j + 1} cannot reach the retrieval spot in time ({dist:.0f} px in {ride} frames)")
        keys = [(appear, *table), (div_out, *table), (ret_in, *pickup), (ret_out, *pickup)]
        keys = [k_ for n_, k_ in enumerate(keys) if n_ == 0 or k_[0] > keys[n_ - 1][0]]
        bags.append((owner, _Trajectory(keys, tail=people[owner], tail_offset=off)))
        ledger.append(LedgerEntry(j + 1, owner + 1, appear, cfg.primary.id))

    n_frames = 0
    if people:
        n_frames = max(t.end for t in people) + 1
    states = []
    for f in range(n_frames):
        frame_states = []
        for i, traj in enumerate(people):
            if traj.alive(f):
                x, y = traj.position(f)
                frame_states.append(ObjectState(i + 1, ObjectClass.PERSON, x, y, *cfg.person_size, traj.heading(f)))
        for j, (_, traj) in enumerate(bags):
            if traj.alive(f):
                x, y = traj.position(f)
                frame_states.append(ObjectState(j + 1, ObjectClass.BAG, x, y, *cfg.bag_size, traj.heading(f)))
        states.append(tuple(frame_states))

    annotated = frozenset(range(0, n_frames, cfg.annotate_every))
    truth = ScenarioTruth(cfg, n_frames, tuple(states), GroundTruth((), annotated),
                          AssociationLedger(tuple(ledger)), ())
    records = []
    for f in sorted(annotated):
        for cam in (cfg.primary, cfg.auxiliary):
            for s, box in truth.visible(f, cam.id):
                records.append(GtRecord(f, s.label, box, s.cls, cam.id))
    reentries = _reentries(truth, sorted(detouring))
    truth = ScenarioTruth(cfg, n_frames, tuple(states), GroundTruth(tuple(records), annotated),
                          truth.ownership, reentries)
    logger.info("Scenario: %d passengers, %d bags, %d frames, %d re-entries",
                cfg.n_passengers, cfg.n_bags, n_frames, len(reentries))
    return truth


def _reentries(truth: ScenarioTruth, passengers: Sequence[int]) -> Tuple[ReentryEvent, ...]:
    """Gaps in primary visibility of the detouring passengers."""
    cam = truth.config.primary.id
    seen: Dict[int, List[int]] = {i + 1: [] for i in passengers}
    for f in range(truth.n_frames):
        for s, _ in truth.visible(f, cam):
            if s.cls == ObjectClass.PERSON and s.label in seen:
                seen[s.label].append(f)
    events = []
    for label, frames in seen.items():
        for a, b in zip(frames, frames[1:]):
            if b - a > 1:
                events.append(ReentryEvent(label, cam, a, b))
    return tuple(sorted(events, key=lambda e: (e.return_frame, e.label)))


def _rng_for(truth: ScenarioTruth, frame: int, theta: float, camera_id: str) -> np.random.Generator:
    seq = np.random.SeedSequence([truth.config.seed, frame, int(round(theta * 1e6)),
                                  truth.camera_index(camera_id)])
    return np.random.default_rng(seq)


def _footprint(box: BBox, dw: float, dh: float, dx: float, dy: float) -> Polygon:
    w = max(box.w + dw, 1.0)
    h = max(box.h + dh, 1.0)
    return Polygon.from_box(BBox(box.cx + dx, box.cy + dy, w, h))


def detect_objects(objects: Sequence[Tuple[ObjectState, BBox]], frame: int, theta: float,
                   camera: CameraSpec, noise: NoiseModel, rng: np.random.Generator,
                   eta_nms: float = 0.1, angle_index: Optional[int] = None) -> Tuple[Detection, ...]:
    """
    Detections for the ROI rotated by theta, in rotated-ROI pixel coordinates.

    Draws from rng in a fixed order per object, so outcomes depend only on
    the object list and the generator state.
    """
    roi = camera.roi_value
    out = []
    for state, box in objects:
        u, jx, jy, jw, jh, sc = rng.random(), *rng.standard_normal(5)
        p = noise.detection_prob(state.heading + theta)
        if u >= p:
            continue
        poly = _footprint(box, jw * noise.size_sigma, jh * noise.size_sigma, 0.0, 0.0)
        poly = image_to_roi(rotate_polygon(poly, theta, roi.center), roi)
        if noise.center_sigma:
            shift = (jx * noise.center_sigma, jy * noise.center_sigma)
            poly = Polygon(tuple(Point2(v.x + shift[0], v.y + shift[1]) for v in poly.vertices))
        score = float(np.clip(noise.score_mean + sc * noise.score_sigma, 0.0, 1.0))
        out.append(Detection(frame, camera.id, state.cls, polygon_bbox(poly), score, poly, angle_index))

    spurious: List[Detection] = []
    for _ in range(int(rng.poisson(noise.spurious_rate)) if noise.spurious_rate else 0):
        cls = ObjectClass.PERSON if rng.random() < 0.5 else ObjectClass.BAG
        w, h = (60.0, 60.0) if cls == ObjectClass.PERSON else (40.0, 30.0)
        box = BBox(float(rng.uniform(0, roi.rw)), float(rng.uniform(0, roi.rh)), w, h)
        score = float(rng.uniform(*noise.spurious_score))
        if any(iou(box, d.box) > eta_nms for d in spurious):
            continue
        spurious.append(Detection(frame, camera.id, cls, box, score, Polygon.from_box(box), angle_index))
    return tuple(out + spurious)


def mock_detect(truth: ScenarioTruth, frame: int, theta: float, camera: str,
                eta_nms: float = 0.1, angle_index: Optional[int] = None) -> Tuple[Detection, ...]:
    """Mock detector output for one rotated view; deterministic per (seed, frame, theta, camera)."""
    cam = truth.camera(camera)
    rng = _rng_for(truth, frame, theta, camera)
    return detect_objects(truth.visible(frame, camera), frame, theta, cam, truth.config.noise, rng,
                          eta_nms, angle_index)


def augmented_frame(truth: ScenarioTruth, frame: int, camera: str, n: int,
                    eta_nms: float = 0.1) -> AugmentedFrame:
    """Mock detections for all n rotations of one frame; same draws as mock_detect per angle."""
    cam = truth.camera(camera)
    objects = truth.visible(frame, camera)
    per_angle = []
    for i in range(n):
        theta = i * 2.0 * math.pi / n
        rng = _rng_for(truth, frame, theta, camera)
        per_angle.append(detect_objects(objects, frame, theta, cam, truth.config.noise, rng, eta_nms, i))
    return AugmentedFrame(frame, cam.roi_value, tuple(per_angle))


def augmented_stream(truth: ScenarioTruth, camera: str, n: int, eta_nms: float = 0.1) -> List[AugmentedFrame]:
    return [augmented_frame(truth, f, camera, n, eta_nms) for f in range(truth.n_frames)]


def truth_document(truth: ScenarioTruth) -> dict:
    cfg = truth.config
    return {
        "format_version": FORMAT_VERSION,
        "seed": cfg.seed,
        "n_frames": truth.n_frames,
        "annotate_every": cfg.annotate_every,
        "primary": cfg.primary.id,
        "auxiliary": cfg.auxiliary.id,
        "ownership": {str(e.bag_label): e.person_label for e in truth.ownership.entries},
        "reentries": [
            {"label": e.label, "camera": e.camera, "exit_frame": e.exit_frame, "return_frame": e.return_frame}
            for e in truth.reentries
        ],
    }


def load_truth_document(path) -> dict:
    """truth.json as written by export(), with re-entries rebuilt as events."""
    doc = read_json(path)
    try:
        doc["reentries"] = [ReentryEvent(**e) for e in doc.get("reentries", [])]
        doc["annotated_frames"] = frozenset(range(0, int(doc["n_frames"]), int(doc.get("annotate_every", 1))))
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"{path}: {e}") from e
    return doc


def export(truth: ScenarioTruth, out_dir, n: int, eta_nms: float = 0.1) -> Dict[str, List[str]]:
    """
    Write per-angle detections and ground truth per camera, the homography,
    the true ownership ledger and truth.json. Returns written paths by kind.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = truth.config
    written: Dict[str, List[str]] = {"detections": [], "ground_truth": [], "homography": [], "truth": []}
    for cam in (cfg.primary, cfg.auxiliary):
        det_path = out / f"detections_{cam.id}.jsonl"
        write_detections(det_path, augmented_stream(truth, cam.id, n, eta_nms))
        gt_path = out / f"gt_{cam.id}.csv"
        write_mot(gt_path, truth.gt_for(cam.id).records)
        written["detections"].append(str(det_path))
        written["ground_truth"].append(str(gt_path))
    h_path = out / homography_name(cfg.auxiliary.id, cfg.primary.id)
    save_homography(h_path, truth.homography, cfg.auxiliary.id, cfg.primary.id)
    written["homography"].append(str(h_path))
    ledger_path = out / "ledger_truth.jsonl"
    write_ledger(ledger_path, truth.ownership)
    truth_path = out / "truth.json"
    write_json(truth_path, truth_document(truth))
    written["truth"] += [str(ledger_path), str(truth_path)]
    logger.info("Exported scenario to %s (%d frames, n=%d)", out, truth.n_frames, n)
    return written


def homography_name(source: str, target: str) -> str:
    return f"homography_{source}_{target}.json"
