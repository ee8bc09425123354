"""
Bag ownership: link each new bag label to the nearest person label, and
check at the end of each bag track whether its owner is still beside it.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Iterable, List, Optional, Tuple

from scipy.spatial.distance import cdist

from ..data.config import AssocConfig
from ..data.models import AssociationLedger, LedgerEntry, TrackRecord

logger = logging.getLogger(__name__)


def _by_frame(records: Iterable[TrackRecord]) -> Dict[int, List[TrackRecord]]:
    out: Dict[int, List[TrackRecord]] = {}
    for r in records:
        out.setdefault(r.frame, []).append(r)
    for recs in out.values():
        recs.sort(key=lambda r: r.label)
    return out


def nearest_person(bag: TrackRecord, persons: List[TrackRecord]) -> Optional[Tuple[int, float]]:
    """(person label, center distance) of the closest person; ties go to the lower label."""
    if not persons:
        return None
    d = cdist([[bag.box.cx, bag.box.cy]], [[p.box.cx, p.box.cy] for p in persons])[0]
    i = min(range(len(persons)), key=lambda k: (d[k], persons[k].label))
    return persons[i].label, float(d[i])


def associate(persons: Iterable[TrackRecord], bags: Iterable[TrackRecord],
              cfg: AssocConfig, camera: str = "") -> AssociationLedger:
    """
    Scan frames in order; when a bag label first appears, give it to the
    nearest person within alpha_d. Bags with nobody close enough are
    retried every frame they are seen until an owner is found.
    """
    person_frames = _by_frame(persons)
    bag_frames = _by_frame(bags)
    created: Dict[int, LedgerEntry] = {}
    first_seen: Dict[int, int] = {}

    for frame in sorted(bag_frames):
        for bag in bag_frames[frame]:
            first_seen.setdefault(bag.label, frame)
            if bag.label in created:
                continue
            hit = nearest_person(bag, person_frames.get(frame, []))
            if hit is not None and hit[1] <= cfg.alpha_d:
                created[bag.label] = LedgerEntry(bag.label, hit[0], frame, camera, hit[1])
                logger.debug("Bag %d -> person %d at frame %d (%.1f px)", bag.label, hit[0], frame, hit[1])

    entries = [
        created.get(label, LedgerEntry(label, None, first_seen[label], camera))
        for label in sorted(first_seen)
    ]
    unowned = sum(1 for e in entries if not e.associated)
    logger.info("Ledger: %d bags, %d without owner", len(entries), unowned)
    return AssociationLedger(tuple(entries))


class OwnershipStatus(str, Enum):
    MATCH = "match"
    MISMATCH = "mismatch"
    UNATTENDED = "unattended"
    UNOWNED = "unowned"


@dataclass(frozen=True)
class OwnershipCheck:
    """Where a bag ended up relative to its registered owner."""
    bag_label: int
    owner: Optional[int]
    frame: int
    status: OwnershipStatus
    nearest: Optional[int] = None
    distance: Optional[float] = None


def verify_ownership(ledger: AssociationLedger, persons: Iterable[TrackRecord],
                     bags: Iterable[TrackRecord], cfg: AssocConfig) -> List[OwnershipCheck]:
    """Compare each bag's last observed position with the people around it."""
    person_frames = _by_frame(persons)
    last: Dict[int, TrackRecord] = {}
    for bag in bags:
        if bag.label not in last or bag.frame > last[bag.label].frame:
            last[bag.label] = bag

    checks = []
    for entry in ledger.entries:
        bag = last.get(entry.bag_label)
        if bag is None:
            continue
        if not entry.associated:
            checks.append(OwnershipCheck(entry.bag_label, None, bag.frame, OwnershipStatus.UNOWNED))
            continue
        around = person_frames.get(bag.frame, [])
        owner = [p for p in around if p.label == entry.person_label]
        if owner:
            d_owner = nearest_person(bag, owner)[1]
            if d_owner <= cfg.alpha_d:
                checks.append(OwnershipCheck(entry.bag_label, entry.person_label, bag.frame,
                                             OwnershipStatus.MATCH, entry.person_label, d_owner))
                continue
        hit = nearest_person(bag, around)
        if hit is not None and hit[1] <= cfg.alpha_d:
            status = OwnershipStatus.MISMATCH
        else:
            status = OwnershipStatus.UNATTENDED
        checks.append(OwnershipCheck(entry.bag_label, entry.person_label, bag.frame, status,
                                     hit[0] if hit else None, hit[1] if hit else None))
    return checks
