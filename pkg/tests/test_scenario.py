import math

import pytest

from src.calculations.geometry import project_point
from src.data.formats import load_ground_truth, load_homography, load_ledger, parse_detections
from src.data.models import ObjectClass
from src.data.scenario import (NoiseModel, ScenarioConfig, Waypoint, augmented_frame, export, generate,
                               load_truth_document, mock_detect)


@pytest.fixture(scope="module")
def full_truth():
    return generate(ScenarioConfig(seed=42, n_passengers=8, n_bags=6, n_reentries=4))


@pytest.fixture(scope="module")
def small_truth():
    return generate(ScenarioConfig(seed=5, n_passengers=2, n_bags=1, n_reentries=1))


class TestGenerate:
    def test_counts_follow_config(self, full_truth):
        assert len(full_truth.reentries) == 4
        assert len(full_truth.ownership.entries) == 6
        persons = {s.label for frame in full_truth.states for s in frame if s.cls == ObjectClass.PERSON}
        assert persons == set(range(1, 9))

    def test_ownership_is_a_function(self, full_truth):
        owners = full_truth.ownership.owners()
        assert owners == {j + 1: j % 8 + 1 for j in range(6)}

    def test_deterministic(self):
        cfg = ScenarioConfig(seed=9, n_passengers=3, n_bags=2, n_reentries=1)
        a, b = generate(cfg), generate(cfg)
        assert a.states == b.states
        assert a.ground_truth == b.ground_truth
        assert a.reentries == b.reentries

    def test_seed_changes_paths(self):
        a = generate(ScenarioConfig(seed=1, n_passengers=2, n_bags=0, n_reentries=0))
        b = generate(ScenarioConfig(seed=2, n_passengers=2, n_bags=0, n_reentries=0))
        assert a.states != b.states

    def test_bounded_speed(self, full_truth):
        limit = full_truth.config.max_speed + 1e-6
        previous = {}
        for frame in full_truth.states:
            for s in frame:
                key = (s.cls, s.label)
                if key in previous:
                    px, py = previous[key]
                    assert math.hypot(s.cx - px, s.cy - py) <= limit
                previous[key] = (s.cx, s.cy)

    def test_reentry_gaps_in_primary(self, full_truth):
        gt = full_truth.gt_for("cam9", ObjectClass.PERSON)
        for event in full_truth.reentries:
            frames = {r.frame for r in gt.records if r.label == event.label}
            assert event.exit_frame in frames and event.return_frame in frames
            assert not frames & set(range(event.exit_frame + 1, event.return_frame))

    def test_homography_consistency(self, small_truth):
        primary = {(r.frame, r.cls, r.label): r.box for r in small_truth.gt_for("cam9").records}
        checked = 0
        for r in small_truth.gt_for("cam2").records:
            key = (r.frame, r.cls, r.label)
            if key not in primary:
                continue
            p = project_point(small_truth.homography, r.box.center)
            assert math.hypot(p.x - primary[key].cx, p.y - primary[key].cy) < 1e-6
            checked += 1
        assert checked > 0

    def test_sparse_annotation(self):
        truth = generate(ScenarioConfig(n_passengers=1, n_bags=0, n_reentries=0, annotate_every=10))
        assert all(f % 10 == 0 for f in truth.ground_truth.annotated_frames)
        assert {r.frame for r in truth.ground_truth.records} <= truth.ground_truth.annotated_frames

    def test_visible_frame_range(self, small_truth):
        with pytest.raises(ValueError):
            small_truth.visible(small_truth.n_frames, "cam9")

    @pytest.mark.parametrize("kwargs", [
        {"n_passengers": 1, "n_reentries": 2},
        {"n_passengers": 0, "n_bags": 1, "n_reentries": 0},
        {"n_bags": 2, "ownership": (0,)},
        {"walk_speed": 0.0},
    ])
    def test_invalid_config(self, kwargs):
        with pytest.raises(ValueError):
            ScenarioConfig(**kwargs)

    def test_too_fast_leg_rejected(self):
        cfg = ScenarioConfig(n_passengers=1, n_bags=0, n_reentries=0, divest=Waypoint(200.0, 120.0, 25, frames=2))
        with pytest.raises(ValueError):
            generate(cfg)


class TestMockDetector:
    def test_probability_dips_sideways(self):
        noise = NoiseModel()
        assert noise.detection_prob(0.0) == pytest.approx(noise.peak, abs=1e-3)
        assert noise.detection_prob(math.pi / 2) == pytest.approx(noise.trough)
        assert noise.detection_prob(-math.pi / 2) == pytest.approx(noise.trough)

    def test_dropout_is_orientation_free(self):
        noise = NoiseModel.dropout(0.1)
        assert noise.detection_prob(0.0) == pytest.approx(0.9)
        assert noise.detection_prob(math.pi / 2) == pytest.approx(0.9)

    def test_repeatable(self, small_truth):
        frame = small_truth.n_frames // 2
        assert mock_detect(small_truth, frame, 0.3, "cam9") == mock_detect(small_truth, frame, 0.3, "cam9")

    def test_augmented_frame_matches_single_views(self, small_truth):
        frame = small_truth.n_frames // 3
        af = augmented_frame(small_truth, frame, "cam9", 4)
        for i, slot in enumerate(af.per_angle):
            assert slot == mock_detect(small_truth, frame, i * 2 * math.pi / 4, "cam9", angle_index=i)


class TestExport:
    def test_files_reload(self, tmp_path, small_truth):
        written = export(small_truth, tmp_path, n=2)
        assert len(written["detections"]) == 2
        names = {p.name for p in tmp_path.iterdir()}
        assert {"detections_cam9.jsonl", "detections_cam2.jsonl", "gt_cam9.csv", "gt_cam2.csv",
                "homography_cam2_cam9.json", "ledger_truth.jsonl", "truth.json"} <= names
        assert load_homography(tmp_path / "homography_cam2_cam9.json") == small_truth.homography
        assert load_ledger(tmp_path / "ledger_truth.jsonl") == small_truth.ownership
        gt = load_ground_truth(tmp_path / "gt_cam9.csv")
        assert len(gt.records) == len(small_truth.gt_for("cam9").records)
        frames = parse_detections(tmp_path / "detections_cam9.jsonl")
        assert all(af.n == 2 for af in frames)
        doc = load_truth_document(tmp_path / "truth.json")
        assert doc["reentries"] == list(small_truth.reentries)
        assert doc["n_frames"] == small_truth.n_frames
