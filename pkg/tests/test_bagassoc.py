import math

import numpy as np
import pytest

from src.calculations.bagassoc import OwnershipStatus, associate, nearest_person, verify_ownership
from src.data.config import AssocConfig
from src.data.models import AssociationLedger, BBox, LedgerEntry, ObjectClass, TrackRecord
from src.data.scenario import ScenarioConfig, generate


def person(frame, label, x, y):
    return TrackRecord(frame, label, BBox(x, y, 60.0, 60.0), ObjectClass.PERSON, "cam9")


def bag(frame, label, x, y):
    return TrackRecord(frame, label, BBox(x, y, 40.0, 30.0), ObjectClass.BAG, "cam9")


def brute_force_owners(persons, bags, alpha_d):
    owners = {}
    for b in sorted(bags, key=lambda r: (r.frame, r.label)):
        if owners.get(b.label) is not None:
            continue
        owners.setdefault(b.label, None)
        around = [p for p in persons if p.frame == b.frame]
        best = None
        for p in sorted(around, key=lambda r: r.label):
            d = math.hypot(p.box.cx - b.box.cx, p.box.cy - b.box.cy)
            if d <= alpha_d and (best is None or d < best[1]):
                best = (p.label, d)
        if best is not None:
            owners[b.label] = best[0]
    return owners


class TestAssociate:
    def test_single_person(self):
        ledger = associate([person(0, 1, 100, 100)], [bag(0, 4, 150, 100)], AssocConfig(alpha_d=200))
        (entry,) = ledger.entries
        assert (entry.bag_label, entry.person_label, entry.frame_created) == (4, 1, 0)
        assert entry.distance == pytest.approx(50.0)

    def test_nearest_of_two(self):
        persons = [person(0, 1, 220, 100), person(0, 2, 180, 100)]
        ledger = associate(persons, [bag(0, 1, 100, 100)], AssocConfig())
        assert ledger.owners() == {1: 2}

    def test_nobody_close_enough(self):
        persons = [person(f, 1, 600, 400) for f in range(5)]
        bags = [bag(f, 1, 50, 50) for f in range(5)]
        (entry,) = associate(persons, bags, AssocConfig()).entries
        assert not entry.associated
        assert entry.frame_created == 0

    def test_retry_until_owner_arrives(self):
        persons = [person(f, 3, 600 - 100 * f, 100) for f in range(5)]
        bags = [bag(f, 1, 100, 100) for f in range(5)]
        (entry,) = associate(persons, bags, AssocConfig(alpha_d=200)).entries
        assert entry.person_label == 3
        assert entry.frame_created == 3

    def test_entry_never_changes(self):
        persons = [person(0, 1, 120, 100), person(1, 1, 500, 100), person(1, 2, 105, 100)]
        bags = [bag(0, 1, 100, 100), bag(1, 1, 100, 100)]
        assert associate(persons, bags, AssocConfig()).owners() == {1: 1}

    def test_tie_goes_to_lower_label(self):
        persons = [person(0, 5, 150, 100), person(0, 2, 50, 100)]
        assert nearest_person(bag(0, 1, 100, 100), persons)[0] == 2

    def test_brute_force_oracle(self):
        rng = np.random.default_rng(19)
        cfg = AssocConfig(alpha_d=200)
        for _ in range(200):
            frames = int(rng.integers(1, 6))
            persons = [person(f, p, *rng.uniform(0, 640, 2)) for f in range(frames)
                       for p in range(1, int(rng.integers(0, 4)) + 1)]
            bags = [bag(f, b, *rng.uniform(0, 640, 2)) for f in range(frames)
                    for b in range(1, int(rng.integers(1, 4)) + 1)]
            ledger = associate(persons, bags, cfg)
            assert ledger.owners() == brute_force_owners(persons, bags, cfg.alpha_d)
            assert all(e.distance <= cfg.alpha_d for e in ledger.entries if e.associated)

    def test_synthetic_ownership_reproduced(self):
        truth = generate(ScenarioConfig(seed=3, n_passengers=4, n_bags=5, n_reentries=0))
        gt = truth.gt_for("cam9")
        records = [TrackRecord(r.frame, r.label, r.box, r.cls, r.camera) for r in gt.records]
        persons = [r for r in records if r.cls == ObjectClass.PERSON]
        bags = [r for r in records if r.cls == ObjectClass.BAG]
        ledger = associate(persons, bags, AssocConfig())
        assert ledger.owners() == truth.ownership.owners()
        checks = verify_ownership(ledger, persons, bags, AssocConfig())
        assert {c.status for c in checks} == {OwnershipStatus.MATCH}


class TestVerifyOwnership:
    def ledger(self, owner=1):
        return AssociationLedger((LedgerEntry(1, owner, 0, "cam9", 10.0),))

    def test_match(self):
        (check,) = verify_ownership(self.ledger(), [person(9, 1, 100, 100)], [bag(9, 1, 100, 140)],
                                    AssocConfig())
        assert check.status == OwnershipStatus.MATCH
        assert check.distance == pytest.approx(40.0)

    def test_mismatch(self):
        persons = [person(9, 1, 600, 400), person(9, 2, 100, 100)]
        (check,) = verify_ownership(self.ledger(), persons, [bag(9, 1, 100, 140)], AssocConfig())
        assert check.status == OwnershipStatus.MISMATCH
        assert check.nearest == 2

    def test_owner_close_wins_over_nearer_stranger(self):
        persons = [person(9, 1, 100, 250), person(9, 2, 100, 130)]
        (check,) = verify_ownership(self.ledger(), persons, [bag(9, 1, 100, 140)], AssocConfig())
        assert check.status == OwnershipStatus.MATCH

    def test_unattended(self):
        (check,) = verify_ownership(self.ledger(), [], [bag(9, 1, 100, 140)], AssocConfig())
        assert check.status == OwnershipStatus.UNATTENDED
        assert check.nearest is None

    def test_unowned(self):
        ledger = AssociationLedger((LedgerEntry(1, None, 0, "cam9"),))
        (check,) = verify_ownership(ledger, [person(2, 1, 100, 100)], [bag(2, 1, 100, 100)], AssocConfig())
        assert check.status == OwnershipStatus.UNOWNED

    def test_uses_last_bag_position(self):
        bags = [bag(9, 1, 100, 140), bag(3, 1, 500, 400)]
        persons = [person(3, 1, 500, 400), person(9, 1, 100, 100)]
        (check,) = verify_ownership(self.ledger(), persons, bags, AssocConfig())
        assert check.frame == 9
