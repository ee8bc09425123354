"""
Stage runner: fuse -> track -> stitch -> handoff -> bags -> evaluate.

Every stage reads the previous stage's persisted output, so a full run is
the same as invoking the stages one by one on the intermediate files.
"""

import functools
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from ..calculations.bagassoc import OwnershipCheck, associate, verify_ownership
from ..calculations.fusion import fuse_frame, occupancy_records
from ..calculations.metrics import (EvalReport, evaluate, handoff_recall, identity_map,
                                    ownership_accuracy)
from ..calculations.tracker import run as run_tracker
from ..calculations.tracklets import LabelRegistry, associate_cameras, stitch
from ..data.config import FORMAT_VERSION, HandoffConfig, PipelineConfig
from ..data.errors import FormatError, StageError
from ..data.formats import (file_digest, load_detections, load_ground_truth, load_homography,
                            load_ledger, load_tracklets, parse_detections, write_fused, write_json,
                            write_jsonl, write_ledger, write_mot, write_tracklets)
from ..data.models import (AssociationLedger, AugmentedFrame, Detection, GroundTruth, Homography,
                           ObjectClass, TrackRecord, Tracklet)
from ..data.scenario import load_truth_document

logger = logging.getLogger(__name__)

ARTIFACT_VERSION = "1.0.0"
STAGES = ("fuse", "track", "stitch", "handoff", "bags", "evaluate")


def _stage(name: str):
    """Wrap a stage so any failure surfaces as StageError naming it."""
    def wrap(func):
        @functools.wraps(func)
        def run(*args, **kwargs):
            try:
                return func(*args, **kwargs)
            except StageError:
                raise
            except Exception as e:  # noqa: BLE001 - re-raised with the stage name
                raise StageError(name, str(e), e) from e
        return run
    return wrap


# --- standalone stages ----------------------------------------------------------

@_stage("fuse")
def fuse_stage(frames: Sequence[AugmentedFrame], cfg: PipelineConfig) -> List[Detection]:
    """Fused detections of both classes, frame by frame."""
    out: List[Detection] = []
    for af in frames:
        try:
            for cls in ObjectClass:
                out.extend(fuse_frame(af, cls, cfg.fusion))
        except ValueError as e:
            raise StageError("fuse", f"frame {af.frame}: {e}", e) from e
    return out


def occupancy_stage(frames: Sequence[AugmentedFrame], cfg: PipelineConfig,
                    only_frame: Optional[int] = None) -> List[dict]:
    records: List[dict] = []
    for af in frames:
        if only_frame is not None and af.frame != only_frame:
            continue
        for cls in ObjectClass:
            records.extend(occupancy_records(af, cls, cfg.fusion))
    return records


def frame_stream(dets: Sequence[Detection], cls: ObjectClass,
                 span: Tuple[int, int]) -> List[Tuple[int, List[Detection]]]:
    """(frame, detections of cls) for every frame of span, empty frames included."""
    by_frame: Dict[int, List[Detection]] = {}
    for d in dets:
        if d.cls == cls:
            by_frame.setdefault(d.frame, []).append(d)
    return [(f, by_frame.get(f, [])) for f in range(span[0], span[1] + 1)]


@_stage("track")
def track_stage(dets: Sequence[Detection], cfg: PipelineConfig, camera: str) -> List[Tracklet]:
    """One tracker per class over the fused stream of a camera."""
    if not dets:
        return []
    span = (min(d.frame for d in dets), max(d.frame for d in dets))
    out: List[Tracklet] = []
    for cls in ObjectClass:
        out.extend(run_tracker(frame_stream(dets, cls, span), cfg.tracker_for(cls), cls, camera))
    return out


@_stage("stitch")
def stitch_stage(tracklets: Sequence[Tracklet], cfg: PipelineConfig) -> List[Tracklet]:
    out: List[Tracklet] = []
    for cls in ObjectClass:
        out.extend(stitch([t for t in tracklets if t.cls == cls], cfg.stitch))
    return out


@_stage("handoff")
def handoff_stage(per_camera: Dict[str, List[Tracklet]], cfg: PipelineConfig,
                  homographies: Dict[Tuple[str, str], Homography]) -> Dict[str, List[Tracklet]]:
    """
    Map every camera's labels to global ones, then associate each configured
    (primary, auxiliary) pair class by class.
    """
    registry = LabelRegistry(t for ts in per_camera.values() for t in ts)
    current = {cam: registry.to_global(ts) for cam, ts in per_camera.items()}
    for pair in cfg.handoff:
        if pair.primary not in current or pair.auxiliary not in current \
                or (pair.primary, pair.auxiliary) not in homographies:
            logger.warning("Skipping handoff %s -> %s: missing tracklets or homography", pair.auxiliary, pair.primary)
            continue
        hcfg = HandoffConfig(pair.d_max, homographies[(pair.primary, pair.auxiliary)])
        new_primary: List[Tracklet] = []
        new_aux: List[Tracklet] = []
        for cls in ObjectClass:
            result = associate_cameras(
                [t for t in current[pair.primary] if t.cls == cls],
                [t for t in current[pair.auxiliary] if t.cls == cls],
                hcfg,
            )
            new_primary.extend(result.primary)
            new_aux.extend(result.auxiliary)
        current[pair.primary] = new_primary
        current[pair.auxiliary] = new_aux
    return current


def records_of(tracklets: Sequence[Tracklet], cls: Optional[ObjectClass] = None) -> List[TrackRecord]:
    return [r for t in tracklets if cls is None or t.cls == cls for r in t.to_records()]


@_stage("bags")
def bags_stage(tracklets: Sequence[Tracklet], cfg: PipelineConfig,
               camera: str) -> Tuple[AssociationLedger, List[OwnershipCheck]]:
    persons = records_of(tracklets, ObjectClass.PERSON)
    bags = records_of(tracklets, ObjectClass.BAG)
    ledger = associate(persons, bags, cfg.assoc, camera)
    return ledger, verify_ownership(ledger, persons, bags, cfg.assoc)


@_stage("evaluate")
def evaluate_stage(gt: GroundTruth, tracklets: Sequence[Tracklet],
                   cfg: PipelineConfig) -> Dict[str, EvalReport]:
    """Tracking and identity report per class."""
    return {
        cls.value: evaluate(gt.select(cls), records_of(tracklets, cls), cfg.evaluation)
        for cls in ObjectClass
    }


# --- full run ---------------------------------------------------------------------

@dataclass(frozen=True)
class PipelineInputs:
    """Input files of a run, usually the directory written by `simulate`."""
    root: Path
    detections: Dict[str, Path]
    homographies: Dict[Tuple[str, str], Path]
    ground_truth: Dict[str, Path] = field(default_factory=dict)
    truth: Optional[Path] = None
    ledger_truth: Optional[Path] = None

    @classmethod
    def from_directory(cls, root, cfg: PipelineConfig) -> "PipelineInputs":
        root = Path(root)
        detections = {c.id: root / f"detections_{c.id}.jsonl" for c in cfg.cameras
                      if (root / f"detections_{c.id}.jsonl").exists()}
        if not detections:
            raise FormatError(f"No detections_<camera>.jsonl files for {[c.id for c in cfg.cameras]} in {root}")
        homographies = {}
        for pair in cfg.handoff:
            if pair.primary not in detections or pair.auxiliary not in detections:
                continue
            name = pair.homography or f"homography_{pair.auxiliary}_{pair.primary}.json"
            homographies[(pair.primary, pair.auxiliary)] = root / name
        gt = {c.id: root / f"gt_{c.id}.csv" for c in cfg.cameras if (root / f"gt_{c.id}.csv").exists()}
        truth = root / "truth.json"
        ledger = root / "ledger_truth.jsonl"
        return cls(root, detections, homographies, gt,
                   truth if truth.exists() else None,
                   ledger if ledger.exists() else None)

    def files(self) -> List[Path]:
        paths = list(self.detections.values()) + list(self.homographies.values()) + list(self.ground_truth.values())
        paths += [p for p in (self.truth, self.ledger_truth) if p is not None]
        return sorted(set(paths))


@dataclass(frozen=True)
class RunManifest:
    config_hash: str
    seed: int
    inputs: Dict[str, str]
    outputs: Dict[str, List[str]]
    artifact_version: str = ARTIFACT_VERSION

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "artifact_version": self.artifact_version,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "inputs": dict(sorted(self.inputs.items())),
            "outputs": {stage: list(paths) for stage, paths in self.outputs.items()},
        }


@dataclass
class PipelineResult:
    manifest: RunManifest
    tracklets: Dict[str, List[Tracklet]]
    ledgers: Dict[str, AssociationLedger]
    ownership: Dict[str, List[OwnershipCheck]]
    reports: Dict[str, Dict[str, Dict[str, EvalReport]]]
    extras: Dict[str, float]


def run_pipeline(cfg: PipelineConfig, inputs: PipelineInputs, out_dir) -> PipelineResult:
    """Run every stage in order, persisting each output before the next stage reads it."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    outputs: Dict[str, List[str]] = {stage: [] for stage in STAGES}

    def persist(stage: str, name: str) -> Path:
        outputs[stage].append(name)
        return out / name

    for path in inputs.files():
        if not path.exists():
            raise StageError("inputs", f"missing input file {path}")
    homographies = {}
    for key, path in inputs.homographies.items():
        try:
            homographies[key] = load_homography(path)
        except FormatError as e:
            raise StageError("inputs", str(e), e) from e

    cameras = list(inputs.detections)
    stitched: Dict[str, List[Tracklet]] = {}
    for cam in cameras:
        spec = cfg.camera(cam)
        try:
            frames = parse_detections(inputs.detections[cam], spec.roi_value, cam)
        except FormatError as e:
            raise StageError("fuse", str(e), e) from e
        logger.info("Camera %s: %d frames of detections", cam, len(frames))

        fused_path = persist("fuse", f"fused_{cam}.jsonl")
        write_fused(fused_path, fuse_stage(frames, cfg))

        raw_path = persist("track", f"tracklets_{cam}.jsonl")
        write_tracklets(raw_path, track_stage(load_detections(fused_path, cam), cfg, cam))

        stitched_path = persist("stitch", f"stitched_{cam}.jsonl")
        write_tracklets(stitched_path, stitch_stage(load_tracklets(raw_path, cam), cfg))
        stitched[cam] = load_tracklets(stitched_path, cam)

    handed = handoff_stage(stitched, cfg, homographies)
    final: Dict[str, List[Tracklet]] = {}
    for cam in cameras:
        path = persist("handoff", f"handoff_{cam}.jsonl")
        write_tracklets(path, handed[cam])
        final[cam] = load_tracklets(path, cam)

    ledgers: Dict[str, AssociationLedger] = {}
    ownership: Dict[str, List[OwnershipCheck]] = {}
    for cam in cameras:
        ledger, checks = bags_stage(final[cam], cfg, cam)
        path = persist("bags", f"ledger_{cam}.jsonl")
        write_ledger(path, ledger)
        ledgers[cam] = load_ledger(path)
        ownership[cam] = checks
        own_path = persist("bags", f"ownership_{cam}.jsonl")
        write_jsonl(own_path, (ownership_record(c, cam) for c in checks))

    reports, extras = _evaluate_all(cfg, inputs, cameras, stitched, final, ledgers, persist)

    manifest = RunManifest(
        config_hash=cfg.config_hash(),
        seed=cfg.seed,
        inputs={p.name: file_digest(p) for p in inputs.files()},
        outputs=outputs,
    )
    write_json(out / "manifest.json", manifest.to_dict())
    logger.info("Pipeline finished: %d output files", sum(len(v) for v in outputs.values()))
    return PipelineResult(manifest, final, ledgers, ownership, reports, extras)


def ownership_record(check: OwnershipCheck, camera: str) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "camera": camera,
        "bag_label": check.bag_label,
        "owner": check.owner,
        "frame": check.frame,
        "status": check.status.value,
        "nearest": check.nearest,
        "distance": check.distance,
    }


def _evaluate_all(cfg, inputs, cameras, stitched, final, ledgers, persist):
    reports: Dict[str, Dict[str, Dict[str, EvalReport]]] = {}
    extras: Dict[str, float] = {}
    if not inputs.ground_truth:
        return reports, extras
    truth_doc = load_truth_document(inputs.truth) if inputs.truth is not None else None
    annotated = truth_doc["annotated_frames"] if truth_doc else None
    for cam in cameras:
        if cam not in inputs.ground_truth:
            continue
        gt = load_ground_truth(inputs.ground_truth[cam], annotated)
        before = evaluate_stage(gt, stitched[cam], cfg)
        after = evaluate_stage(gt, final[cam], cfg)
        reports[cam] = {cls: {"stitched": before[cls], "handoff": after[cls]} for cls in before}
        write_mot(persist("evaluate", f"tracks_{cam}.csv"), records_of(final[cam]))

        if truth_doc is None:
            continue
        events = [e for e in truth_doc["reentries"] if e.camera == cam]
        persons = gt.select(ObjectClass.PERSON)
        person_hyp = records_of(final[cam], ObjectClass.PERSON)
        if events:
            extras[f"{cam}.handoff_recall"] = handoff_recall(events, persons, person_hyp, cfg.evaluation.iou_thr)
        if cam == truth_doc.get("primary") and inputs.ledger_truth is not None:
            truth_ledger = load_ledger(inputs.ledger_truth)
            extras[f"{cam}.ownership_accuracy"] = ownership_accuracy(
                ledgers[cam], truth_ledger,
                identity_map(persons, person_hyp, cfg.evaluation.iou_thr),
                identity_map(gt.select(ObjectClass.BAG), records_of(final[cam], ObjectClass.BAG),
                             cfg.evaluation.iou_thr),
            )

    doc = {
        "format_version": FORMAT_VERSION,
        "cameras": {
            cam: {cls: {stage: rep.summary() for stage, rep in by_stage.items()}
                  for cls, by_stage in by_cls.items()}
            for cam, by_cls in reports.items()
        },
        "extras": extras,
    }
    write_json(persist("evaluate", "report.json"), doc)
    return reports, extras

