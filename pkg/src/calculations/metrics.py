"""
Detection, CLEAR-MOT and identity metrics over sparse ground truth.

Only annotated frames are scored; hypothesis entries on other frames are
ignored. Ratios are fractions in [0, 1] (MODA/MOTA may go negative) and
come back as 0.0 when their denominator is empty.
"""

import logging
from dataclasses import asdict, dataclass, replace
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from ..data.config import EvaluationConfig
from ..data.models import AssociationLedger, BBox, GroundTruth, GtRecord, ReentryEvent, TrackRecord
from .assignment import solve
from .geometry import iou_matrix

logger = logging.getLogger(__name__)


def _ratio(num: float, den: float) -> float:
    return float(num) / den if den else 0.0


@dataclass(frozen=True)
class EvalReport:
    """Raw counts plus every derived ratio reported in the tables."""
    tp: int = 0
    fp: int = 0
    fn: int = 0
    ids: int = 0
    gt_total: float = 0.0
    frames: int = 0
    iou_sum: float = 0.0
    gt_tracks: int = 0
    mt_count: int = 0
    ml_count: int = 0
    idtp: int = 0
    idfp: int = 0
    idfn: int = 0

    @property
    def rcll(self) -> float:
        return _ratio(self.tp, self.tp + self.fn)

    @property
    def prcn(self) -> float:
        return _ratio(self.tp, self.tp + self.fp)

    @property
    def moda(self) -> float:
        return 1.0 - _ratio(self.fp + self.fn, self.gt_total) if self.gt_total else 0.0

    @property
    def mota(self) -> float:
        return 1.0 - _ratio(self.fp + self.fn + self.ids, self.gt_total) if self.gt_total else 0.0

    @property
    def motp(self) -> float:
        return _ratio(self.iou_sum, self.tp)

    @property
    def far(self) -> float:
        return _ratio(self.fp, self.frames)

    @property
    def mt(self) -> float:
        return _ratio(self.mt_count, self.gt_tracks)

    @property
    def ml(self) -> float:
        return _ratio(self.ml_count, self.gt_tracks)

    @property
    def idp(self) -> float:
        return _ratio(self.idtp, self.idtp + self.idfp)

    @property
    def idr(self) -> float:
        return _ratio(self.idtp, self.idtp + self.idfn)

    @property
    def idf1(self) -> float:
        return _ratio(2 * self.idtp, 2 * self.idtp + self.idfp + self.idfn)

    def summary(self) -> Dict[str, float]:
        """Counts and ratios as one flat, JSON-ready dict."""
        out: Dict[str, float] = dict(asdict(self))
        for name in ("rcll", "prcn", "moda", "mota", "motp", "far", "mt", "ml", "idf1", "idp", "idr"):
            out[name] = getattr(self, name)
        return out


def report_from_counts(tp: int, fp: int, fn: int, ids: int = 0, frames: int = 0,
                       gt_total: Optional[float] = None) -> EvalReport:
    """Report from published counts; the gt total defaults to TP + FN."""
    if min(tp, fp, fn, ids, frames) < 0:
        raise ValueError("Counts must be non-negative")
    total = float(tp + fn) if gt_total is None else float(gt_total)
    return EvalReport(tp=tp, fp=fp, fn=fn, ids=ids, gt_total=total, frames=frames)


@dataclass(frozen=True)
class FrameMatch:
    """Matched (gt index, hyp index, IoU) triples plus leftover indices."""
    matches: Tuple[Tuple[int, int, float], ...]
    fp: Tuple[int, ...]
    fn: Tuple[int, ...]


def match_frame(gt: Sequence[BBox], hyp: Sequence[BBox], iou_thr: float) -> FrameMatch:
    """Maximum matching on 1 - IoU with pairs below iou_thr forbidden."""
    overlap = iou_matrix(list(gt), list(hyp))
    cost = np.where(overlap >= iou_thr, 1.0 - overlap, np.inf)
    result = solve(cost)
    matches = tuple((g, h, float(overlap[g, h])) for g, h in result.pairs)
    return FrameMatch(matches, tuple(result.unmatched_cols()), tuple(result.unmatched_rows()))


def _hyp_by_frame(hyp: Iterable, frames: Iterable[int]) -> Dict[int, list]:
    wanted = set(frames)
    out: Dict[int, list] = {f: [] for f in wanted}
    for h in hyp:
        if h.frame in wanted:
            out[h.frame].append(h)
    for recs in out.values():
        recs.sort(key=lambda r: (getattr(r, "label", 0), r.box.cx, r.box.cy, r.box.w, r.box.h))
    return out


def evaluate_detection(gt: GroundTruth, hyp: Iterable, iou_thr: float = 0.4) -> EvalReport:
    """Per-frame matching summed over annotated frames. hyp items need .frame and .box."""
    frames = sorted(gt.annotated_frames)
    gt_frames = gt.by_frame()
    hyp_frames = _hyp_by_frame(hyp, frames)
    tp = fp = fn = 0
    iou_sum = 0.0
    for f in frames:
        m = match_frame([r.box for r in gt_frames.get(f, [])], [h.box for h in hyp_frames[f]], iou_thr)
        tp += len(m.matches)
        fp += len(m.fp)
        fn += len(m.fn)
        iou_sum += sum(v for _, _, v in m.matches)
    return EvalReport(tp=tp, fp=fp, fn=fn, gt_total=float(tp + fn), frames=len(frames), iou_sum=iou_sum)


def _track_matches(gt: GroundTruth, hyp: Iterable[TrackRecord], iou_thr: float):
    """
    CLEAR-MOT correspondences per annotated frame.

    Yields (frame, gt records, hyp records, [(gt idx, hyp idx, iou)], fp, fn, switches).
    A gt identity keeps its previous hypothesis label while the overlap stays
    at or above iou_thr; a later change of label counts as a switch.
    """
    frames = sorted(gt.annotated_frames)
    gt_frames = gt.by_frame()
    hyp_frames = _hyp_by_frame(hyp, frames)
    previous: Dict[int, int] = {}
    for f in frames:
        gts = sorted(gt_frames.get(f, []), key=lambda r: r.label)
        hyps = hyp_frames[f]
        overlap = iou_matrix([r.box for r in gts], [h.box for h in hyps])
        pairs: List[Tuple[int, int, float]] = []
        free_g = set(range(len(gts)))
        free_h = set(range(len(hyps)))
        for gi, g in enumerate(gts):
            label = previous.get(g.label)
            if label is None:
                continue
            cands = [hi for hi in sorted(free_h) if hyps[hi].label == label and overlap[gi, hi] >= iou_thr]
            if cands:
                hi = max(cands, key=lambda j: overlap[gi, j])
                pairs.append((gi, hi, float(overlap[gi, hi])))
                free_g.discard(gi)
                free_h.discard(hi)
        rows = sorted(free_g)
        cols = sorted(free_h)
        switches = 0
        if rows and cols:
            sub = overlap[np.ix_(rows, cols)]
            result = solve(np.where(sub >= iou_thr, 1.0 - sub, np.inf))
            for r, c in result.pairs:
                gi, hi = rows[r], cols[c]
                prev = previous.get(gts[gi].label)
                if prev is not None and prev != hyps[hi].label:
                    switches += 1
                pairs.append((gi, hi, float(overlap[gi, hi])))
                free_g.discard(gi)
                free_h.discard(hi)
        for gi, hi, _ in pairs:
            previous[gts[gi].label] = hyps[hi].label
        yield f, gts, hyps, pairs, sorted(free_h), sorted(free_g), switches


def evaluate_tracking(gt: GroundTruth, hyp: Iterable[TrackRecord], iou_thr: float = 0.4,
                      mt_ratio: float = 0.8, ml_ratio: float = 0.2) -> EvalReport:
    """CLEAR-MOT accumulation: MOTA, MOTP, FAR, IDs, MT and ML."""
    tp = fp = fn = ids = 0
    iou_sum = 0.0
    present: Dict[int, int] = {}
    covered: Dict[int, int] = {}
    frames = 0
    for _, gts, _, pairs, fps, fns, switches in _track_matches(gt, hyp, iou_thr):
        frames += 1
        tp += len(pairs)
        fp += len(fps)
        fn += len(fns)
        ids += switches
        iou_sum += sum(v for _, _, v in pairs)
        for g in gts:
            present[g.label] = present.get(g.label, 0) + 1
        for gi, _, _ in pairs:
            covered[gts[gi].label] = covered.get(gts[gi].label, 0) + 1
    coverage = [covered.get(label, 0) / n for label, n in present.items()]
    report = EvalReport(
        tp=tp, fp=fp, fn=fn, ids=ids, gt_total=float(tp + fn), frames=frames, iou_sum=iou_sum,
        gt_tracks=len(present),
        mt_count=sum(1 for c in coverage if c >= mt_ratio),
        ml_count=sum(1 for c in coverage if c < ml_ratio),
    )
    logger.debug("Tracking: TP=%d FP=%d FN=%d IDs=%d over %d frames", tp, fp, fn, ids, frames)
    return report


def identity_counts(gt: GroundTruth, hyp: Iterable[TrackRecord], iou_thr: float = 0.4) -> Tuple[int, int, int]:
    """
    (IDTP, IDFP, IDFN) under the best one-to-one gt/hypothesis identity map.

    Co-occurrence of a pair is the number of annotated frames where both are
    present with IoU >= iou_thr.
    """
    frames = sorted(gt.annotated_frames)
    gt_frames = gt.by_frame()
    hyp_frames = _hyp_by_frame(hyp, frames)
    gt_ids = sorted({r.label for recs in gt_frames.values() for r in recs if r.frame in gt.annotated_frames})
    hyp_ids = sorted({h.label for recs in hyp_frames.values() for h in recs})
    gi_of = {label: i for i, label in enumerate(gt_ids)}
    hi_of = {label: i for i, label in enumerate(hyp_ids)}
    count = np.zeros((len(gt_ids), len(hyp_ids)), dtype=int)
    n_gt = n_hyp = 0
    for f in frames:
        gts = gt_frames.get(f, [])
        hyps = hyp_frames[f]
        n_gt += len(gts)
        n_hyp += len(hyps)
        if not gts or not hyps:
            continue
        overlap = iou_matrix([r.box for r in gts], [h.box for h in hyps])
        seen = set()
        for gi, g in enumerate(gts):
            for hi, h in enumerate(hyps):
                key = (gi_of[g.label], hi_of[h.label])
                if overlap[gi, hi] >= iou_thr and key not in seen:
                    seen.add(key)
                    count[key] += 1
    idtp = 0
    if count.size:
        g, h = count.shape
        big = float(count.max())
        cost = np.full((g, h + g), np.inf)
        cost[:, :h] = big - count
        cost[np.arange(g), h + np.arange(g)] = big
        result = solve(cost)
        idtp = int(sum(count[r, c] for r, c in result.pairs if c < h))
    return idtp, n_hyp - idtp, n_gt - idtp


def evaluate_identity(gt: GroundTruth, hyp: Iterable[TrackRecord], iou_thr: float = 0.4) -> EvalReport:
    """IDF1, IDP and IDR."""
    idtp, idfp, idfn = identity_counts(gt, hyp, iou_thr)
    return EvalReport(idtp=idtp, idfp=idfp, idfn=idfn, frames=len(gt.annotated_frames))


def evaluate(gt: GroundTruth, hyp: Sequence[TrackRecord], cfg: EvaluationConfig) -> EvalReport:
    """Tracking and identity metrics in one report."""
    hyp = list(hyp)
    tracking = evaluate_tracking(gt, hyp, cfg.iou_thr, cfg.mt_ratio, cfg.ml_ratio)
    identity = evaluate_identity(gt, hyp, cfg.iou_thr)
    return replace(tracking, idtp=identity.idtp, idfp=identity.idfp, idfn=identity.idfn)


def frame_assignments(gt: GroundTruth, hyp: Iterable[TrackRecord], iou_thr: float = 0.4) -> Dict[int, Dict[int, int]]:
    """gt label -> hypothesis label for every annotated frame."""
    out: Dict[int, Dict[int, int]] = {}
    for f, gts, hyps, pairs, _, _, _ in _track_matches(gt, hyp, iou_thr):
        out[f] = {gts[gi].label: hyps[hi].label for gi, hi, _ in pairs}
    return out


def handoff_recall(events: Sequence[ReentryEvent], gt: GroundTruth, hyp: Iterable[TrackRecord],
                   iou_thr: float = 0.4) -> float:
    """
    Share of re-entry events where the target carries the same hypothesis
    label just before leaving and just after coming back.
    """
    if not events:
        return 0.0
    assigned = frame_assignments(gt, hyp, iou_thr)
    frames = sorted(assigned)
    recovered = 0
    for ev in events:
        before = [assigned[f][ev.label] for f in frames if f <= ev.exit_frame and ev.label in assigned[f]]
        after = [assigned[f][ev.label] for f in frames if f >= ev.return_frame and ev.label in assigned[f]]
        if before and after and before[-1] == after[0]:
            recovered += 1
        else:
            logger.debug("Re-entry of %d at frame %d not recovered", ev.label, ev.return_frame)
    return recovered / len(events)


def gt_records_to_tracks(records: Iterable[GtRecord]) -> List[TrackRecord]:
    """Ground truth as a perfect hypothesis."""
    return [TrackRecord(r.frame, r.label, r.box, r.cls, r.camera) for r in records]


def identity_map(gt: GroundTruth, hyp: Iterable[TrackRecord], iou_thr: float = 0.4) -> Dict[int, int]:
    """hypothesis label -> the gt label it is matched to most often (ties: lower gt label)."""
    votes: Dict[int, Dict[int, int]] = {}
    for frame_map in frame_assignments(gt, hyp, iou_thr).values():
        for g, h in frame_map.items():
            votes.setdefault(h, {})
            votes[h][g] = votes[h].get(g, 0) + 1
    return {h: min(v, key=lambda g: (-v[g], g)) for h, v in votes.items()}


def ownership_accuracy(ledger: AssociationLedger, truth: AssociationLedger,
                       person_map: Dict[int, int], bag_map: Dict[int, int]) -> float:
    """
    Share of true bags for which some ledger entry links a track of that bag
    to a track of its true owner.
    """
    owners = {e.bag_label: e.person_label for e in truth.entries if e.associated}
    if not owners:
        return 0.0
    correct = set()
    for entry in ledger.entries:
        if not entry.associated:
            continue
        bag = bag_map.get(entry.bag_label)
        if bag in owners and person_map.get(entry.person_label) == owners[bag]:
            correct.add(bag)
    return len(correct) / len(owners)
