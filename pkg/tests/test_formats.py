import json

import pytest

from src.data.errors import FormatError
from src.data.formats import (file_digest, load_detections, load_ground_truth, load_homography,
                              load_ledger, load_track_records, load_tracklets, parse_detections,
                              process_detections, process_mot, read_json, save_homography,
                              write_detections, write_fused, write_ledger, write_mot, write_tracklets)
from src.data.models import (AssociationLedger, AugmentedFrame, BBox, Detection, GtRecord, Homography,
                             LedgerEntry, ObjectClass, Polygon, Roi, TrackRecord, Tracklet)

ROI = Roi(320, 240, 640, 480)


def record(**overrides):
    rec = {"format_version": 1, "frame": 0, "camera": "cam9", "cls": "person", "angle_index": 0,
           "n_angles": 2, "score": 0.9, "x": 10.0, "y": 20.0, "w": 30.0, "h": 40.0}
    rec.update(overrides)
    return rec


def write_lines(path, lines):
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return path


class TestDetections:
    def test_round_trip(self, tmp_path):
        box = BBox(50, 60, 20, 30)
        d0 = Detection(3, "cam9", ObjectClass.PERSON, box, 0.8, Polygon.from_box(box), 0)
        d1 = Detection(3, "cam9", ObjectClass.BAG, BBox(200, 100, 40, 30), 0.6, None, 1)
        af = AugmentedFrame(3, ROI, ((d0,), (d1,), ()))
        path = tmp_path / "detections_cam9.jsonl"
        assert write_detections(path, [af]) == 2
        (back,) = parse_detections(path, ROI)
        assert back.n == 3
        assert back.per_angle[0][0].box == box
        assert back.per_angle[1][0].cls == ObjectClass.BAG
        assert back.per_angle[2] == ()

    def test_fused_round_trip(self, tmp_path):
        dets = [Detection(f, "cam2", ObjectClass.PERSON, BBox(10 + f, 20, 30, 40), 0.9) for f in range(4)]
        path = tmp_path / "fused.jsonl"
        write_fused(path, dets)
        assert load_detections(path) == dets
        assert load_detections(path, camera="cam9") == []

    def test_errors_carry_line_numbers(self, tmp_path):
        path = write_lines(tmp_path / "bad.jsonl", [
            json.dumps(record()),
            "{not json",
            "",
            json.dumps(record(score=1.5)),
            json.dumps(record(cls="dog")),
            json.dumps(record(w=None)),
            "[1, 2]",
        ])
        result = process_detections(path)
        assert not result.success
        assert result.total_records == 6
        assert result.valid_records == 1
        assert [e.split(":")[0] for e in result.errors] == ["line 2", "line 4", "line 5", "line 6", "line 7"]
        assert "score" in result.errors[1]
        assert "missing field 'w'" in result.errors[3]

    def test_strict_loader_raises(self, tmp_path):
        path = write_lines(tmp_path / "bad.jsonl", [json.dumps(record(frame=-1))])
        with pytest.raises(FormatError) as err:
            parse_detections(path)
        assert err.value.errors[0].startswith("line 1")

    def test_angle_outside_declared_count(self, tmp_path):
        path = write_lines(tmp_path / "bad.jsonl", [json.dumps(record(angle_index=2, n_angles=2))])
        assert "angle_index" in process_detections(path).errors[0]

    def test_unsupported_version(self, tmp_path):
        path = write_lines(tmp_path / "v2.jsonl", [json.dumps(record(format_version=2))])
        assert "format_version" in process_detections(path).errors[0]

    def test_missing_file(self, tmp_path):
        result = process_detections(tmp_path / "absent.jsonl")
        assert not result.success
        with pytest.raises(FormatError):
            load_detections(tmp_path / "absent.jsonl")

    def test_missing_slots_filled(self, tmp_path):
        path = write_lines(tmp_path / "d.jsonl", [json.dumps(record(angle_index=1, n_angles=4))])
        (af,) = parse_detections(path)
        assert af.n == 4
        assert [len(s) for s in af.per_angle] == [0, 1, 0, 0]


class TestTracklets:
    def test_round_trip(self, tmp_path):
        ts = [Tracklet(4, "cam9", ObjectClass.BAG, ((0, BBox(10, 10, 4, 4)), (2, BBox(12, 10, 4, 4)))),
              Tracklet(1, "cam2", ObjectClass.PERSON, ((5, BBox(100, 50, 60, 60)),))]
        path = tmp_path / "t.jsonl"
        write_tracklets(path, ts)
        assert load_tracklets(path) == ts
        assert load_tracklets(path, camera="cam2") == ts[1:]

    def test_unordered_frames_rejected(self, tmp_path):
        rec = {"label": 1, "camera": "cam9", "cls": "person", "entries": [[3, 0, 0, 1, 1], [1, 0, 0, 1, 1]]}
        path = write_lines(tmp_path / "t.jsonl", [json.dumps(rec)])
        with pytest.raises(FormatError) as err:
            load_tracklets(path)
        assert "strictly increasing" in str(err.value)


class TestLedger:
    def test_round_trip(self, tmp_path):
        ledger = AssociationLedger((LedgerEntry(1, 2, 10, "cam9", 40.0), LedgerEntry(2, None, 12, "cam9")))
        path = tmp_path / "ledger.jsonl"
        write_ledger(path, ledger)
        assert load_ledger(path) == ledger

    def test_duplicate_bag(self, tmp_path):
        rec = {"bag_label": 1, "person_label": 2, "frame_created": 0}
        path = write_lines(tmp_path / "ledger.jsonl", [json.dumps(rec), json.dumps(rec)])
        with pytest.raises(FormatError):
            load_ledger(path)


class TestHomography:
    def test_round_trip(self, tmp_path):
        h = Homography(((1.0, 0.0, 400.0), (0.0, 1.0, 0.0), (2e-5, 0.0, 1.0)))
        path = tmp_path / "h.json"
        save_homography(path, h, "cam2", "cam9")
        assert load_homography(path) == h

    @pytest.mark.parametrize("doc", [
        '{"matrix": [[1, 2, 3], [2, 4, 6], [0, 0, 1]]}',
        '{"matrix": [[1, 0], [0, 1]]}',
        '[1, 2, 3]',
        '{"matrix": ',
    ])
    def test_invalid(self, tmp_path, doc):
        path = tmp_path / "h.json"
        path.write_text(doc, encoding="utf-8")
        with pytest.raises(FormatError):
            load_homography(path)


class TestMot:
    def test_round_trip(self, tmp_path):
        recs = [TrackRecord(0, 1, BBox(50, 50, 20, 20), ObjectClass.PERSON, "cam9", 0.75),
                TrackRecord(1, 3, BBox(80, 40, 10, 6), ObjectClass.BAG, "cam9")]
        path = tmp_path / "tracks.csv"
        assert write_mot(path, recs) == 2
        assert load_track_records(path) == recs

    def test_ground_truth(self, tmp_path):
        recs = [GtRecord(f, 1, BBox(50 + f, 50, 20, 20), ObjectClass.PERSON, "cam9") for f in (0, 10)]
        path = tmp_path / "gt.csv"
        write_mot(path, recs)
        gt = load_ground_truth(path)
        assert gt.records == tuple(recs)
        assert gt.annotated_frames == frozenset({0, 10})
        assert load_ground_truth(path, range(0, 20, 5)).annotated_frames == frozenset({0, 5, 10, 15})

    def test_row_errors(self, tmp_path):
        path = write_lines(tmp_path / "bad.csv", [
            "0,1,10,10,5,5,1.0,person,cam9",
            "x,1,10,10,5,5,1.0,person,cam9",
            "0,1,10,10,0,5,1.0,person,cam9",
            "0,1,10,10,5,5,1.0,person",
            "0,2,10,10,5,5,1.0,cat,cam9",
        ])
        result = process_mot(path)
        assert result.valid_records == 1
        assert [e.split(":")[0] for e in result.errors] == ["line 2", "line 3", "line 4", "line 5"]


class TestJson:
    def test_digest_changes_with_content(self, tmp_path):
        a = tmp_path / "a.txt"
        a.write_text("one", encoding="utf-8")
        first = file_digest(a)
        a.write_text("two", encoding="utf-8")
        assert file_digest(a) != first
        assert len(first) == 64

    def test_read_json_errors(self, tmp_path):
        with pytest.raises(FormatError):
            read_json(tmp_path / "none.json")
        bad = tmp_path / "bad.json"
        bad.write_text("[]", encoding="utf-8")
        with pytest.raises(FormatError):
            read_json(bad)
