import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rest_mot import dataio
from rest_mot.dataio import (
    DetectionRecord,
    FormatError,
    MotRow,
    SchemaError,
    TrackRecord,
    WeightsError,
)
from rest_mot.geometry import Homography
from rest_mot.neural import ShapeError, init_model


def det(frame, cam, seed=0, gt=None):
    f = np.random.default_rng(seed).normal(size=512)
    return DetectionRecord(frame, cam, (1.5, 2.0, 10.0, 30.0), f, gt)


def test_detections_round_trip_exactly(tmp_path):
    recs = [det(1, 0, 1, 4), det(0, 1, 2), det(0, 0, 3, 5)]
    recs[1].confidence = 0.7
    p = tmp_path / "d.jsonl"
    dataio.write_detections(p, recs)
    stream = dataio.parse_detections(p)
    assert [f for f, _ in stream] == [0, 1]
    back = dataio.flatten(stream)
    assert back[0].same_as(recs[2]) and back[1].same_as(recs[1]) and back[2].same_as(recs[0])


def test_grouping_is_stable_within_camera():
    a, b = det(0, 1, 1), det(0, 1, 2)
    stream = dataio.group_by_frame([a, det(0, 0), b])
    assert stream[0][1][1] is a and stream[0][1][2] is b


@pytest.mark.parametrize("line,kind,fragment", [
    ("{not json", FormatError, "invalid JSON"),
    ('{"frame": 0, "camera_id": 0, "bbox": [0, 0, 1, 1]}', SchemaError, "feature"),
    ('{"frame": 0, "camera_id": 0, "bbox": [0, 0, 1, 1], "feature": [0.0, 1.0]}', SchemaError, "feature length 2"),
    ('{"frame": -1, "camera_id": 0, "bbox": [0, 0, 1, 1], "feature": []}', SchemaError, "non-negative"),
    ('[1, 2]', FormatError, "not an object"),
])
def test_malformed_detection_lines_name_the_line(tmp_path, line, kind, fragment):
    p = tmp_path / "d.jsonl"
    good = json.dumps(det(0, 0).to_json())
    p.write_text(good + "\n" + line + "\n")
    with pytest.raises(kind) as exc:
        dataio.parse_detections(p)
    assert exc.value.line == 2 and fragment in str(exc.value)


def test_zero_width_box_is_schema_error(tmp_path):
    rec = det(0, 0).to_json()
    rec["bbox"] = [0, 0, 0, 5]
    p = tmp_path / "d.jsonl"
    p.write_text(json.dumps(rec) + "\n")
    with pytest.raises(SchemaError):
        dataio.parse_detections(p)


def test_calibration_round_trip_and_errors(tmp_path):
    hs = [Homography(np.diag([2.0, 3.0, 1.0]), 0), Homography(np.eye(3) + 0.1, 3)]
    p = tmp_path / "c.json"
    dataio.write_calibration(p, hs, (640, 480))
    back = dataio.read_calibration(p)
    assert sorted(back) == [0, 3]
    np.testing.assert_array_equal(back[3].h, hs[1].h)
    p.write_text('{"cameras": [{"camera_id": 0, "H": [1, 0, 0, 0, 1, 0, 0, 0]}]}')
    with pytest.raises(SchemaError, match="8 values"):
        dataio.read_calibration(p)
    p.write_text('{"cameras": [{"camera_id": 0, "H": [1,0,0,0,1,0,0,0,1]}, {"camera_id": 0, "H": [1,0,0,0,1,0,0,0,1]}]}')
    with pytest.raises(SchemaError, match="duplicate"):
        dataio.read_calibration(p)


floats = st.floats(-1e6, 1e6, allow_nan=False)


@given(st.lists(st.tuples(st.integers(0, 99), st.integers(0, 5), st.integers(0, 50), floats, floats), max_size=20))
def test_track_csv_round_trip(tmp_path_factory, rows):
    p = tmp_path_factory.mktemp("t") / "t.csv"
    recs = [TrackRecord(f, c, i, (gx, gy, 1.0, 2.0), (gx / 3, gy / 7), 0.5) for f, c, i, gx, gy in rows]
    dataio.write_tracks(p, recs)
    assert dataio.read_tracks(p) == recs


def test_track_csv_errors(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("a,b,c\n")
    with pytest.raises(FormatError):
        dataio.read_tracks(p)
    p.write_text(",".join(dataio.TRACK_HEADER) + "\n1,2,3\n")
    with pytest.raises(FormatError) as exc:
        dataio.read_tracks(p)
    assert exc.value.line == 2


def test_mot_rows_are_one_based(tmp_path):
    rows = {2: [MotRow(0, 0, (1.0, 2.0, 3.0, 4.0), 0.25)]}
    paths = dataio.write_mot(rows, tmp_path, cameras=[0, 2])
    assert paths[0].read_text() == ""
    assert paths[2].read_text() == "1,1,1.0,2.0,3.0,4.0,0.25,-1,-1,-1\n"
    assert dataio.parse_mot(paths[2]) == rows[2]
    paths[0].write_text("0,1,1,1,1,1,1\n")
    with pytest.raises(FormatError, match="1-based"):
        dataio.parse_mot(paths[0])


def test_weights_round_trip_bitwise(tmp_path):
    ms = [init_model("spatial", 3), init_model("temporal", 4)]
    p = tmp_path / "w.bin"
    dataio.write_weights(p, ms)
    back = dataio.read_weights(p)
    for m in ms:
        for a, b in zip(m.parameters(), back[m.flavor].parameters()):
            assert a.tobytes() == b.tobytes()
    raw = p.read_bytes()
    (tmp_path / "short.bin").write_bytes(raw[:-8])
    with pytest.raises(WeightsError, match="truncated"):
        dataio.read_weights(tmp_path / "short.bin")
    (tmp_path / "long.bin").write_bytes(raw + b"\0" * 8)
    with pytest.raises(WeightsError, match="trailing"):
        dataio.read_weights(tmp_path / "long.bin")
    (tmp_path / "bad.bin").write_bytes(b"hello")
    with pytest.raises(WeightsError, match="magic"):
        dataio.read_weights(tmp_path / "bad.bin")


def test_shape_check_names_perceptron():
    with pytest.raises(ShapeError, match="node_feature_encoder"):
        dataio.check_model_shapes(init_model("spatial"), "temporal")
    target = init_model("temporal", 0)
    dataio.load_weights_into(target, init_model("temporal", 9))
    assert np.array_equal(target.flat, init_model("temporal", 9).flat)


def test_jsonl_append_and_read(tmp_path):
    p = tmp_path / "log.jsonl"
    dataio.append_jsonl(p, {"epoch": 1})
    dataio.append_jsonl(p, {"epoch": 2})
    assert dataio.read_jsonl(p) == [{"epoch": 1}, {"epoch": 2}]
    p.write_text('{"epoch": 1}\n{oops\n')
    with pytest.raises(FormatError) as exc:
        dataio.read_jsonl(p)
    assert exc.value.line == 2
