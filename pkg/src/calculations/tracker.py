"""
Track-oriented multiple-hypothesis tracker for one class in one camera.

Each target is a family of hypotheses (a tree over frames). Every frame the
leaves of each family are expanded with a miss child and one child per gated
detection, the best conflict-free combination of leaves is chosen with the
assignment solver, and each family is pruned back to the descendants of its
chosen leaf's ancestor nscan-1 frames ago.

Kinematics follow a constant-velocity Kalman filter over
(cx, cy, w, h, vx, vy); box size is a random walk.
"""

import logging
import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from ..data.config import TrackerParams
from ..data.models import BBox, Detection, ObjectClass, TrackOutput, TrackRecord, Tracklet
from .assignment import solve

logger = logging.getLogger(__name__)

STATE_DIM = 6
MEAS_DIM = 4
_MIN_SIZE = 1e-3


class TrackStatus(str, Enum):
    TENTATIVE = "tentative"
    CONFIRMED = "confirmed"
    TERMINATED = "terminated"


@dataclass(frozen=True, eq=False)
class TrackState:
    """Kinematic state of one track as seen from outside the tracker."""
    label: Optional[int]
    mean: np.ndarray
    cov: np.ndarray
    status: TrackStatus = TrackStatus.TENTATIVE
    history: Tuple[Tuple[int, BBox], ...] = ()

    def __post_init__(self):
        if np.shape(self.mean) != (STATE_DIM,):
            raise ValueError(f"State mean must have {STATE_DIM} entries, got shape {np.shape(self.mean)}")
        if np.shape(self.cov) != (STATE_DIM, STATE_DIM):
            raise ValueError(f"State covariance must be {STATE_DIM}x{STATE_DIM}")

    @property
    def box(self) -> BBox:
        return state_box(self.mean)

    @property
    def velocity(self) -> Tuple[float, float]:
        return float(self.mean[4]), float(self.mean[5])


def state_box(mean: np.ndarray) -> BBox:
    return BBox(float(mean[0]), float(mean[1]), max(float(mean[2]), _MIN_SIZE), max(float(mean[3]), _MIN_SIZE))


def transition(dt: float) -> np.ndarray:
    f = np.eye(STATE_DIM)
    f[0, 4] = dt
    f[1, 5] = dt
    return f


def process_cov(q: Sequence[float], dt: float) -> np.ndarray:
    """White-acceleration noise on position/velocity, random walk on size."""
    qx, qy, qw, qh = (float(v) for v in q)
    out = np.zeros((STATE_DIM, STATE_DIM))
    for pos, vel, qa in ((0, 4, qx), (1, 5, qy)):
        out[pos, pos] = qa * dt ** 4 / 4.0
        out[pos, vel] = out[vel, pos] = qa * dt ** 3 / 2.0
        out[vel, vel] = qa * dt ** 2
    out[2, 2] = qw * dt
    out[3, 3] = qh * dt
    return out


def _kf_predict(mean: np.ndarray, cov: np.ndarray, q: Sequence[float], dt: float):
    f = transition(dt)
    return f @ mean, f @ cov @ f.T + process_cov(q, dt)


def initial_state(box: BBox, params: TrackerParams, label: Optional[int] = None) -> TrackState:
    mean = np.array([box.cx, box.cy, box.w, box.h, 0.0, 0.0])
    cov = np.diag(list(params.meas_noise) + [params.init_velocity_var] * 2)
    return TrackState(label, mean, cov, TrackStatus.TENTATIVE)


def predict(state: TrackState, process_noise: Sequence[float] = (0.0, 0.0, 0.0, 0.0),
            dt: float = 1.0) -> TrackState:
    """Kalman time update."""
    if state.status == TrackStatus.TERMINATED:
        raise ValueError(f"Cannot predict terminated track {state.label}")
    mean, cov = _kf_predict(np.asarray(state.mean, dtype=float), np.asarray(state.cov, dtype=float),
                            process_noise, dt)
    return replace(state, mean=mean, cov=cov)


@dataclass(eq=False)
class _Hypothesis:
    frame: int
    det: Optional[Tuple[int, int]]
    mean: np.ndarray
    cov: np.ndarray
    cost: float
    parent: Optional["_Hypothesis"]
    streak: int
    misses: int


@dataclass(eq=False)
class _Family:
    fid: int
    leaves: List[_Hypothesis]
    label: Optional[int] = None
    best: Optional[_Hypothesis] = None
    score: float = 1.0  # of the latest hit


def _ancestry(leaf: _Hypothesis, depth: int) -> Iterable[_Hypothesis]:
    node: Optional[_Hypothesis] = leaf
    for _ in range(depth):
        if node is None:
            return
        yield node
        node = node.parent


def _ancestor(leaf: _Hypothesis, steps: int) -> _Hypothesis:
    node = leaf
    for _ in range(steps):
        if node.parent is None:
            break
        node = node.parent
    return node


class Tracker:
    """
    Multiple-hypothesis tracker over one fused detection stream.

    Labels are allocated from 1 upwards when a family is confirmed and are
    never reused.
    """

    def __init__(self, params: TrackerParams, cls: ObjectClass = ObjectClass.PERSON, camera: str = ""):
        self.params = params
        self.cls = cls
        self.camera = camera
        self._families: List[_Family] = []
        self._finished: List[_Family] = []
        self._next_family = 0
        self._next_label = 1
        self._last_frame: Optional[int] = None
        self._q = tuple(params.process_noise)
        self._r = np.diag(params.meas_noise)
        self._miss_cost = -math.log(1.0 - params.detection_prob)
        self._hit_offset = -math.log(params.detection_prob) + math.log(params.clutter_density)

    @property
    def last_frame(self) -> Optional[int]:
        return self._last_frame

    def _check(self, frame: int, dets: Sequence[Detection]) -> None:
        if self._last_frame is not None and frame <= self._last_frame:
            raise ValueError(f"Frame {frame} is not after frame {self._last_frame}")
        for det in dets:
            if det.frame != frame:
                raise ValueError(f"Detection from frame {det.frame} passed to step for frame {frame}")
            if det.cls != self.cls:
                raise ValueError(f"{det.cls.value} detection passed to {self.cls.value} tracker")

    def step(self, frame: int, dets: Sequence[Detection]) -> TrackOutput:
        """Consume one frame of fused detections; return confirmed hits."""
        self._check(frame, dets)
        dt = 1.0 if self._last_frame is None else float(frame - self._last_frame)
        self._last_frame = frame
        z = np.array([d.box.as_vector() for d in dets], dtype=float).reshape(-1, MEAS_DIM)

        for fam in self._families:
            fam.leaves = self._expand(fam, frame, z, dt)
        chosen = self._select(len(dets))

        used = set()
        for fam in list(self._families):
            leaf = chosen.get(fam)
            if leaf is None:
                logger.debug("Family %d lost all hypotheses at frame %d", fam.fid, frame)
                self._retire(fam)
                continue
            fam.best = leaf
            if leaf.det is not None:
                used.add(leaf.det[1])
                fam.score = dets[leaf.det[1]].score
            self._prune(fam, leaf)
            self._update_status(fam, frame)

        for j in range(len(dets)):
            if j not in used:
                self._spawn(frame, j, z[j], dets[j].score)

        out = [
            TrackRecord(frame, fam.label, state_box(fam.best.mean), self.cls, self.camera,
                        fam.score)
            for fam in self._families
            if fam.label is not None and fam.best is not None
            and fam.best.frame == frame and fam.best.det is not None
        ]
        out.sort(key=lambda r: r.label)
        logger.debug("Frame %d: %d detections, %d families, %d outputs",
                     frame, len(dets), len(self._families), len(out))
        return tuple(out)

    def _expand(self, fam: _Family, frame: int, z: np.ndarray, dt: float) -> List[_Hypothesis]:
        gate = self.params.gate_chi2
        children = []
        for leaf in fam.leaves:
            mean, cov = _kf_predict(leaf.mean, leaf.cov, self._q, dt)
            base = self.params.score_decay * leaf.cost
            children.append(_Hypothesis(frame, None, mean, cov, base + self._miss_cost,
                                        leaf, 0, leaf.misses + 1))
            if not len(z):
                continue
            s = cov[:MEAS_DIM, :MEAS_DIM] + self._r
            s_pos = s[:2, :2]
            resid = z[:, :2] - mean[:2]
            d2 = np.einsum("ij,jk,ik->i", resid, np.linalg.inv(s_pos), resid)
            norm = 0.5 * math.log(np.linalg.det(2.0 * math.pi * s_pos))
            gain = cov[:, :MEAS_DIM] @ np.linalg.inv(s)
            post_cov = cov - gain @ cov[:MEAS_DIM, :]
            post_cov = 0.5 * (post_cov + post_cov.T)
            for j in np.nonzero(d2 <= gate)[0]:
                post_mean = mean + gain @ (z[j] - mean[:MEAS_DIM])
                cost = base + 0.5 * float(d2[j]) + norm + self._hit_offset
                children.append(_Hypothesis(frame, (frame, int(j)), post_mean, post_cov, cost,
                                            leaf, leaf.streak + 1, 0))
        return children

    def _select(self, m: int) -> Dict[_Family, _Hypothesis]:
        """Best global hypothesis: one leaf per family, no shared detections."""
        while True:
            fams = [f for f in self._families if f.leaves]
            if not fams:
                return {}
            n = len(fams)
            cost = np.full((n, m + n), np.inf)
            pick: Dict[Tuple[int, int], _Hypothesis] = {}
            for r, fam in enumerate(fams):
                for leaf in fam.leaves:
                    col = m + r if leaf.det is None else leaf.det[1]
                    if leaf.cost < cost[r, col]:
                        cost[r, col] = leaf.cost
                        pick[(r, col)] = leaf
            cost -= cost.min(axis=1, keepdims=True)
            result = solve(cost)
            chosen = {fams[r]: pick[(r, c)] for r, c in result.pairs}
            conflict = self._find_conflict(chosen)
            if conflict is None:
                return chosen
            fam, leaf = conflict
            fam.leaves.remove(leaf)

    def _find_conflict(self, chosen: Dict[_Family, _Hypothesis]) -> Optional[Tuple[_Family, _Hypothesis]]:
        owner: Dict[Tuple[int, int], _Family] = {}
        for fam in sorted(chosen, key=lambda f: f.fid):
            for node in _ancestry(chosen[fam], self.params.nscan):
                if node.det is None:
                    continue
                other = owner.get(node.det)
                if other is not None and other is not fam:
                    return self._loser(other, chosen[other], fam, chosen[fam])
                owner[node.det] = fam
        return None

    @staticmethod
    def _loser(fa: _Family, la: _Hypothesis, fb: _Family, lb: _Hypothesis):
        """The leaf further above its family's cheapest leaf gives way; ties drop the younger family."""
        ra = la.cost - min(h.cost for h in fa.leaves)
        rb = lb.cost - min(h.cost for h in fb.leaves)
        if ra > rb:
            return fa, la
        if rb > ra:
            return fb, lb
        return (fb, lb) if fb.fid > fa.fid else (fa, la)

    def _prune(self, fam: _Family, leaf: _Hypothesis) -> None:
        steps = self.params.nscan - 1
        anchor = _ancestor(leaf, steps)
        keep = [h for h in fam.leaves if h is not leaf and _ancestor(h, steps) is anchor]
        keep.sort(key=lambda h: h.cost)
        fam.leaves = [leaf] + keep[: self.params.max_hyp - 1]

    def _update_status(self, fam: _Family, frame: int) -> None:
        leaf = fam.best
        if fam.label is None and leaf.streak >= self.params.confirm_hits:
            fam.label = self._next_label
            self._next_label += 1
            logger.debug("Confirmed %s track %d at frame %d", self.cls.value, fam.label, frame)
        if leaf.misses >= self.params.delete_misses:
            logger.debug("Terminated family %d (label %s) at frame %d", fam.fid, fam.label, frame)
            self._retire(fam)

    def _spawn(self, frame: int, j: int, z: np.ndarray, score: float) -> None:
        mean = np.concatenate([z, [0.0, 0.0]])
        cov = np.diag(list(self.params.meas_noise) + [self.params.init_velocity_var] * 2)
        root = _Hypothesis(frame, (frame, j), mean, cov, 0.0, None, 1, 0)
        fam = _Family(self._next_family, [root], best=root, score=score)
        self._next_family += 1
        self._families.append(fam)
        self._update_status(fam, frame)

    def _retire(self, fam: _Family) -> None:
        if fam in self._families:
            self._families.remove(fam)
        if fam.label is not None:
            self._finished.append(fam)

    @staticmethod
    def _history(fam: _Family) -> Tuple[Tuple[int, BBox], ...]:
        hits = []
        node = fam.best
        while node is not None:
            if node.det is not None:
                hits.append((node.frame, state_box(node.mean)))
            node = node.parent
        return tuple(reversed(hits))

    def tracks(self) -> List[TrackState]:
        """Live tracks, as seen through each family's chosen hypothesis."""
        out = []
        for fam in self._families:
            if fam.best is None:
                continue
            status = TrackStatus.CONFIRMED if fam.label is not None else TrackStatus.TENTATIVE
            out.append(TrackState(fam.label, fam.best.mean.copy(), fam.best.cov.copy(), status,
                                  self._history(fam)))
        return out

    def finish(self) -> List[Tracklet]:
        """Every confirmed track so far, ordered by label."""
        fams = self._finished + [f for f in self._families if f.label is not None]
        out = []
        for fam in sorted(fams, key=lambda f: f.label):
            history = self._history(fam)
            if history:
                out.append(Tracklet(fam.label, self.camera, self.cls, history))
        return out


def run(stream: Iterable[Tuple[int, Sequence[Detection]]], params: TrackerParams,
        cls: ObjectClass = ObjectClass.PERSON, camera: str = "") -> List[Tracklet]:
    """Fold the tracker over (frame, detections) pairs in increasing frame order."""
    tracker = Tracker(params, cls, camera)
    frames = 0
    for frame, dets in stream:
        tracker.step(frame, dets)
        frames += 1
    tracklets = tracker.finish()
    logger.info("Tracked %s in %s: %d frames, %d tracklets",
                cls.value, camera or "-", frames, len(tracklets))
    return tracklets
