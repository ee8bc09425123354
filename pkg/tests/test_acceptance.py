"""End-to-end checks on seeded synthetic checkpoint scenes."""

import math
from dataclasses import replace

import numpy as np
import pytest

from src.calculations.fusion import angle_for, fuse_frame
from src.calculations.geometry import iou
from src.cli.pipeline import PipelineInputs, run_pipeline
from src.data.config import CameraSpec, FusionConfig, PipelineConfig
from src.data.models import AugmentedFrame, ObjectClass
from src.data.scenario import NoiseModel, ObjectState, ScenarioConfig, detect_objects, export, generate

pytestmark = pytest.mark.slow

CAMERA = CameraSpec("cam9")


def run_scenario(tmp_path_factory, scenario: ScenarioConfig, cfg: PipelineConfig, *configs: PipelineConfig):
    src = tmp_path_factory.mktemp("scenario")
    export(generate(scenario), src, n=cfg.fusion.n)
    results = []
    for c in (cfg,) + configs:
        results.append(run_pipeline(c, PipelineInputs.from_directory(src, c), tmp_path_factory.mktemp("run")))
    return results


class TestFusionLift:
    FRAMES = 1000

    def frames(self, objects, noise):
        for f in range(self.FRAMES):
            per_angle = []
            for i in range(20):
                rng = np.random.default_rng([17, f, i])
                per_angle.append(detect_objects(objects, f, angle_for(i, 20), CAMERA, noise, rng, 0.1, i))
            yield AugmentedFrame(f, CAMERA.roi_value, tuple(per_angle))

    def test_sideways_walkers_recovered(self):
        objects = []
        for label, (cx, heading) in enumerate([(160.0, math.pi / 2), (480.0, -math.pi / 2)], start=1):
            state = ObjectState(label, ObjectClass.PERSON, cx, 240.0, 60.0, 60.0, heading)
            objects.append((state, state.box))
        noise = NoiseModel(spurious_rate=0.0)
        cfg = FusionConfig(n=20, lam=0.5)
        single = found = 0
        for af in self.frames(objects, noise):
            single += len(af.per_angle[0])
            fused = fuse_frame(af, ObjectClass.PERSON, cfg)
            found += sum(1 for _, box in objects if any(iou(box, d.box) >= 0.4 for d in fused))
        total = len(objects) * self.FRAMES
        assert single / total <= 0.6
        assert found / total >= 0.95

    def test_spurious_rejected(self):
        noise = NoiseModel(spurious_rate=0.5)
        cfg = FusionConfig(n=20, lam=0.5)
        spurious = kept = 0
        for af in self.frames([], noise):
            spurious += sum(len(slot) for slot in af.per_angle)
            kept += sum(len(fuse_frame(af, cls, cfg)) for cls in ObjectClass)
        assert spurious > 0
        assert 1.0 - kept / spurious >= 0.99


class TestTracking:
    @pytest.fixture(scope="class")
    def runs(self, tmp_path_factory):
        cfg = PipelineConfig(fusion=FusionConfig(n=10))
        greedy = replace(
            cfg,
            tracker_person=replace(cfg.tracker_person, nscan=1, max_hyp=1),
            tracker_bag=replace(cfg.tracker_bag, nscan=1, max_hyp=1),
        )
        scenario = ScenarioConfig(seed=42, n_passengers=8, n_bags=6, n_reentries=0,
                                  noise=NoiseModel.dropout(0.1, 1.0))
        return run_scenario(tmp_path_factory, scenario, cfg, greedy)

    def test_mht_accuracy(self, runs):
        mht, _ = runs
        for cam, by_cls in mht.reports.items():
            for cls, by_stage in by_cls.items():
                report = by_stage["handoff"]
                assert report.mota >= 0.95, (cam, cls, report.summary())
                assert report.ids <= 2, (cam, cls, report.summary())

    def test_single_hypothesis_degrades_gracefully(self, runs):
        mht, greedy = runs
        for cam, by_cls in mht.reports.items():
            for cls, by_stage in by_cls.items():
                other = greedy.reports[cam][cls]["handoff"]
                assert abs(by_stage["handoff"].mota - other.mota) <= 0.05, (cam, cls)


class TestHandoffAndBags:
    # passengers far enough apart that detours never cross the next walker
    SCENE = dict(seed=7, n_passengers=12, n_bags=6, n_reentries=10, spacing=200)

    @pytest.fixture(scope="class")
    def clean(self, tmp_path_factory):
        scenario = ScenarioConfig(noise=NoiseModel.perfect(), **self.SCENE)
        (result,) = run_scenario(tmp_path_factory, scenario, PipelineConfig(fusion=FusionConfig(n=2)))
        return result

    def test_every_reentry_recovered(self, clean):
        assert clean.extras["cam9.handoff_recall"] == 1.0

    def test_ownership_ledger(self, clean):
        assert clean.extras["cam9.ownership_accuracy"] == 1.0
        ledger = clean.ledgers["cam9"]
        assert len(ledger.entries) == 6
        assert all(e.person_label is not None and e.distance <= 200.0 for e in ledger.entries)

    def test_centroid_noise(self, tmp_path_factory):
        scenario = ScenarioConfig(noise=NoiseModel.dropout(0.0, 2.0), **self.SCENE)
        (result,) = run_scenario(tmp_path_factory, scenario, PipelineConfig(fusion=FusionConfig(n=2)))
        assert result.extras["cam9.handoff_recall"] >= 0.9
