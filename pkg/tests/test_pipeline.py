import json

import pytest

from src.cli.pipeline import STAGES, PipelineInputs, fuse_stage, handoff_stage, run_pipeline
from src.data.config import FusionConfig, PipelineConfig
from src.data.errors import FormatError, StageError
from src.data.models import AugmentedFrame, BBox, ObjectClass, Roi, Tracklet
from src.data.scenario import NoiseModel, ScenarioConfig, export, generate

CFG = PipelineConfig(fusion=FusionConfig(n=4))


@pytest.fixture(scope="module")
def scenario_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("scenario")
    truth = generate(ScenarioConfig(seed=11, n_passengers=2, n_bags=1, n_reentries=0, noise=NoiseModel.perfect()))
    export(truth, out, n=CFG.fusion.n)
    return out


@pytest.fixture(scope="module")
def first_run(tmp_path_factory, scenario_dir):
    out = tmp_path_factory.mktemp("run")
    return out, run_pipeline(CFG, PipelineInputs.from_directory(scenario_dir, CFG), out)


class TestInputs:
    def test_from_directory(self, scenario_dir):
        inputs = PipelineInputs.from_directory(scenario_dir, CFG)
        assert set(inputs.detections) == {"cam9", "cam2"}
        assert inputs.homographies[("cam9", "cam2")].name == "homography_cam2_cam9.json"
        assert inputs.truth is not None and inputs.ledger_truth is not None

    def test_empty_directory(self, tmp_path):
        with pytest.raises(FormatError):
            PipelineInputs.from_directory(tmp_path, CFG)

    def test_missing_homography(self, tmp_path, scenario_dir):
        inputs = PipelineInputs(scenario_dir, {"cam9": scenario_dir / "detections_cam9.jsonl"},
                                {("cam9", "cam2"): scenario_dir / "absent.json"})
        with pytest.raises(StageError) as err:
            run_pipeline(CFG, inputs, tmp_path)
        assert err.value.stage == "inputs"


class TestStages:
    def test_fuse_failure_names_stage(self):
        roi = Roi(320, 240, 640, 480)
        frame = AugmentedFrame(0, roi, ((), ()))
        with pytest.raises(StageError) as err:
            fuse_stage([frame], CFG)
        assert err.value.stage == "fuse"
        assert isinstance(err.value.cause, ValueError)

    def test_wrapped_stage_keeps_identity(self):
        assert fuse_stage.__name__ == "fuse_stage"
        assert fuse_stage.__doc__ == fuse_stage.__wrapped__.__doc__
        assert "frame by frame" in fuse_stage.__doc__

    def test_handoff_skips_missing_homography(self):
        ts = [Tracklet(1, "cam9", ObjectClass.PERSON, ((0, BBox(100, 100, 60, 60)),))]
        result = handoff_stage({"cam9": ts, "cam2": []}, CFG, {})
        assert [t.label for t in result["cam9"]] == [1]
        assert result["cam2"] == []


@pytest.mark.slow
class TestFullRun:
    def test_noise_free_tracking(self, first_run):
        _, result = first_run
        for cam in ("cam9", "cam2"):
            for cls in ("person", "bag"):
                report = result.reports[cam][cls]["handoff"]
                assert report.mota >= 0.95, (cam, cls, report.summary())
                assert report.ids == 0

    def test_ownership_recovered(self, first_run):
        _, result = first_run
        assert result.extras["cam9.ownership_accuracy"] == 1.0
        assert len(result.ledgers["cam9"].entries) == 1

    def test_manifest(self, first_run, scenario_dir):
        out, result = first_run
        doc = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
        assert doc["config_hash"] == CFG.config_hash()
        assert tuple(doc["outputs"]) == STAGES
        assert "detections_cam9.jsonl" in doc["inputs"]
        assert all(len(digest) == 64 for digest in doc["inputs"].values())
        for names in doc["outputs"].values():
            assert all((out / name).exists() for name in names)

    def test_deterministic(self, tmp_path, first_run, scenario_dir):
        out, _ = first_run
        run_pipeline(CFG, PipelineInputs.from_directory(scenario_dir, CFG), tmp_path)
        first = sorted(p.name for p in out.iterdir())
        assert first == sorted(p.name for p in tmp_path.iterdir())
        for name in first:
            assert (out / name).read_bytes() == (tmp_path / name).read_bytes(), name
