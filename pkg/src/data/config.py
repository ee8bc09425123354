"""
Configuration values for every stage, plus the JSON config loader.
All settings are immutable; omitted keys take the defaults below.
"""

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Type, TypeVar

from .errors import FormatError
from .models import Homography, ObjectClass, Roi

FORMAT_VERSION = 1

T = TypeVar("T")


@dataclass(frozen=True)
class FusionConfig:
    """Rotation augmentation and cluster filtering settings."""
    n: int = 20
    lam: float = 0.5
    bandwidth_floor: Tuple[float, float, float, float] = (4.0, 4.0, 4.0, 4.0)
    eta_det: float = 0.5
    eta_nms: float = 0.1
    convergence_eps: float = 1e-3
    max_iters: int = 100
    merge_radius: float = 1.0
    group_iou: float = 0.5

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"Rotation count n must be >= 1, got {self.n}")
        if self.lam < 0:
            raise ValueError(f"Cluster score threshold must be >= 0, got {self.lam}")
        if len(self.bandwidth_floor) != 4 or any(v <= 0 for v in self.bandwidth_floor):
            raise ValueError(f"bandwidth_floor must be 4 positive values, got {self.bandwidth_floor}")
        for name in ("eta_det", "eta_nms", "group_iou"):
            value = getattr(self, name)
            if not (0.0 <= value <= 1.0):
                raise ValueError(f"{name} must be in [0, 1], got {value}")
        if self.max_iters < 1 or self.convergence_eps <= 0 or self.merge_radius <= 0:
            raise ValueError("Mean-shift iteration settings must be positive")


@dataclass(frozen=True)
class TrackerParams:
    """Per-class multiple-hypothesis tracker parameters."""
    gate_chi2: float = 9.21
    process_noise: Tuple[float, float, float, float] = (2.0, 2.0, 0.5, 0.5)
    meas_noise: Tuple[float, float, float, float] = (4.0, 4.0, 4.0, 4.0)
    confirm_hits: int = 2
    delete_misses: int = 10
    nscan: int = 3
    max_hyp: int = 100
    score_decay: float = 1.0
    detection_prob: float = 0.9
    clutter_density: float = 1e-5
    init_velocity_var: float = 36.0

    def __post_init__(self):
        if self.gate_chi2 <= 0:
            raise ValueError(f"gate_chi2 must be > 0, got {self.gate_chi2}")
        if len(self.process_noise) != 4 or any(v < 0 for v in self.process_noise):
            raise ValueError("process_noise must be 4 non-negative variances")
        if len(self.meas_noise) != 4 or any(v <= 0 for v in self.meas_noise):
            raise ValueError("meas_noise must be 4 positive variances")
        if self.confirm_hits < 1 or self.delete_misses < 1:
            raise ValueError("confirm_hits and delete_misses must be >= 1")
        if self.nscan < 1 or self.max_hyp < 1:
            raise ValueError("nscan and max_hyp must be >= 1")
        if not (0.0 < self.score_decay <= 1.0):
            raise ValueError(f"score_decay must be in (0, 1], got {self.score_decay}")
        if not (0.0 < self.detection_prob < 1.0):
            raise ValueError(f"detection_prob must be in (0, 1), got {self.detection_prob}")
        if self.clutter_density <= 0 or self.init_velocity_var <= 0:
            raise ValueError("clutter_density and init_velocity_var must be > 0")

    @classmethod
    def for_class(cls, obj_cls: ObjectClass) -> "TrackerParams":
        """Class defaults: bags move slower and more smoothly than people."""
        if obj_cls == ObjectClass.BAG:
            return cls(process_noise=(1.0, 1.0, 0.25, 0.25), init_velocity_var=25.0)
        return cls()


@dataclass(frozen=True)
class StitchConfig:
    t_th: int = 30

    def __post_init__(self):
        if self.t_th <= 0:
            raise ValueError(f"t_th must be > 0, got {self.t_th}")


@dataclass(frozen=True)
class HandoffConfig:
    """Cross-camera association between one auxiliary and one primary camera."""
    d_max: float = 30.0
    homography: Homography = field(default_factory=Homography.identity)

    def __post_init__(self):
        if self.d_max <= 0:
            raise ValueError(f"d_max must be > 0, got {self.d_max}")


@dataclass(frozen=True)
class AssocConfig:
    alpha_d: float = 200.0

    def __post_init__(self):
        if self.alpha_d <= 0:
            raise ValueError(f"alpha_d must be > 0, got {self.alpha_d}")


@dataclass(frozen=True)
class EvaluationConfig:
    iou_thr: float = 0.4
    mt_ratio: float = 0.8
    ml_ratio: float = 0.2

    def __post_init__(self):
        if not (0.0 < self.iou_thr <= 1.0):
            raise ValueError(f"iou_thr must be in (0, 1], got {self.iou_thr}")
        if not (0.0 <= self.ml_ratio <= self.mt_ratio <= 1.0):
            raise ValueError("Require 0 <= ml_ratio <= mt_ratio <= 1")


@dataclass(frozen=True)
class CameraSpec:
    id: str
    width: int = 640
    height: int = 480
    roi: Tuple[float, float, float, float] = (320.0, 240.0, 640.0, 480.0)

    def __post_init__(self):
        if not self.id:
            raise ValueError("Camera id must be non-empty")
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"Camera {self.id}: image size must be > 0")
        if not self.roi_value.within(self.width, self.height):
            raise ValueError(f"Camera {self.id}: ROI {self.roi} lies outside the image")

    @property
    def roi_value(self) -> Roi:
        return Roi(*self.roi)


@dataclass(frozen=True)
class HandoffPair:
    """Primary/auxiliary camera pair; homography maps auxiliary -> primary."""
    primary: str
    auxiliary: str
    homography: str = ""
    d_max: float = 30.0

    def __post_init__(self):
        if self.primary == self.auxiliary:
            raise ValueError(f"Handoff pair needs two cameras, got {self.primary} twice")
        if self.d_max <= 0:
            raise ValueError(f"d_max must be > 0, got {self.d_max}")


@dataclass(frozen=True)
class PipelineConfig:
    """Everything a full run needs."""
    fusion: FusionConfig = field(default_factory=FusionConfig)
    tracker_person: TrackerParams = field(default_factory=lambda: TrackerParams.for_class(ObjectClass.PERSON))
    tracker_bag: TrackerParams = field(default_factory=lambda: TrackerParams.for_class(ObjectClass.BAG))
    stitch: StitchConfig = field(default_factory=StitchConfig)
    handoff: Tuple[HandoffPair, ...] = (HandoffPair("cam9", "cam2", "homography_cam2_cam9.json"),)
    assoc: AssocConfig = field(default_factory=AssocConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)
    cameras: Tuple[CameraSpec, ...] = (CameraSpec("cam9"), CameraSpec("cam2"))
    seed: int = 42

    def __post_init__(self):
        ids = [c.id for c in self.cameras]
        if len(ids) != len(set(ids)):
            raise ValueError("Camera ids must be unique")
        for pair in self.handoff:
            for cam in (pair.primary, pair.auxiliary):
                if cam not in ids:
                    raise ValueError(f"Handoff references undefined camera '{cam}'")

    def tracker_for(self, obj_cls: ObjectClass) -> TrackerParams:
        return self.tracker_person if obj_cls == ObjectClass.PERSON else self.tracker_bag

    def camera(self, camera_id: str) -> CameraSpec:
        for cam in self.cameras:
            if cam.id == camera_id:
                return cam
        raise ValueError(f"Unknown camera '{camera_id}'")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "format_version": FORMAT_VERSION,
            "fusion": asdict(self.fusion),
            "tracker": {"person": asdict(self.tracker_person), "bag": asdict(self.tracker_bag)},
            "stitch": asdict(self.stitch),
            "handoff": [asdict(p) for p in self.handoff],
            "assoc": asdict(self.assoc),
            "evaluation": asdict(self.evaluation),
            "cameras": [asdict(c) for c in self.cameras],
            "seed": self.seed,
        }

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()


def _build(kind: Type[T], data: Optional[Dict[str, Any]], section: str) -> T:
    """Construct a config dataclass from a dict, rejecting unknown keys."""
    if data is None:
        return kind()
    if not isinstance(data, dict):
        raise FormatError(f"Config section '{section}' must be an object")
    known = {f.name for f in fields(kind)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise FormatError(f"Config section '{section}': unknown keys {', '.join(unknown)}")
    values = {k: tuple(v) if isinstance(v, list) else v for k, v in data.items()}
    try:
        return kind(**values)
    except (TypeError, ValueError) as e:
        raise FormatError(f"Config section '{section}': {e}") from e


def config_from_dict(data: Dict[str, Any]) -> PipelineConfig:
    """Build a PipelineConfig from a parsed JSON document."""
    version = data.get("format_version", FORMAT_VERSION)
    if version != FORMAT_VERSION:
        raise FormatError(f"Unsupported config format_version {version}")
    tracker = data.get("tracker") or {}
    defaults = PipelineConfig()
    kwargs: Dict[str, Any] = {
        "fusion": _build(FusionConfig, data.get("fusion"), "fusion"),
        "tracker_person": _build(TrackerParams, tracker.get("person"), "tracker.person")
        if "person" in tracker else defaults.tracker_person,
        "tracker_bag": _build(TrackerParams, tracker.get("bag"), "tracker.bag")
        if "bag" in tracker else defaults.tracker_bag,
        "stitch": _build(StitchConfig, data.get("stitch"), "stitch"),
        "assoc": _build(AssocConfig, data.get("assoc"), "assoc"),
        "evaluation": _build(EvaluationConfig, data.get("evaluation"), "evaluation"),
        "seed": int(data.get("seed", defaults.seed)),
    }
    if "cameras" in data:
        kwargs["cameras"] = tuple(_build(CameraSpec, c, "cameras") for c in data["cameras"])
    if "handoff" in data:
        kwargs["handoff"] = tuple(_build(HandoffPair, p, "handoff") for p in data["handoff"])
    try:
        return PipelineConfig(**kwargs)
    except ValueError as e:
        raise FormatError(f"Invalid config: {e}") from e


def load_config(path: Optional[str]) -> PipelineConfig:
    """Load a JSON config document; None gives all defaults."""
    if path is None:
        return PipelineConfig()
    p = Path(path)
    if not p.exists():
        raise FormatError(f"Config file not found: {path}")
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise FormatError(f"Config {path}: invalid JSON at line {e.lineno}: {e.msg}") from e
    if not isinstance(data, dict):
        raise FormatError(f"Config {path}: document must be a JSON object")
    return config_from_dict(data)


def save_config(config: PipelineConfig, path: str) -> None:
    Path(path).write_text(json.dumps(config.to_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8")
