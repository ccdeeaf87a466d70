import json

import pandas as pd
import pytest

from errors import InputError
from report_handler import (ReportHandler, RunManifest, detections_frame, file_digest,
                            load_ground_truth, load_predictions)
from detector import Detection
from integral import Rect


@pytest.fixture
def manifest(tmp_path):
    source = tmp_path / "input.bin"
    source.write_bytes(b"trap")
    return RunManifest("detect", {"budget": "99600"}, seed=3).add_input("image", str(source))


@pytest.fixture
def frame():
    return detections_frame("img0", [Detection(Rect(4, 6, 20, 20), 0, 1.25),
                                     Detection(Rect(40, 12, 22, 22), 1, 0.5)])


def test_manifest_header(manifest):
    lines = manifest.header_lines()
    assert lines[0] == "# command: detect"
    assert "# seed: 3" in lines
    assert "# param budget: 99600" in lines
    assert any(line.startswith("# input image: sha256 ") for line in lines)


def test_detection_columns_put_level_before_score(frame):
    assert list(frame.columns) == ["image_id", "x", "y", "w", "h", "level", "score"]
    assert frame.iloc[1][["level", "score"]].tolist() == [1, 0.5]


def test_digest_is_stable(tmp_path):
    path = tmp_path / "a.txt"
    path.write_text("abc")
    assert file_digest(path) == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"


def test_csv_report(tmp_path, manifest, frame):
    path = str(tmp_path / "out" / "dets.csv")
    handler = ReportHandler()
    handler.save_table(frame, path, manifest)
    with open(path) as f:
        assert f.readline().startswith("# command: detect")
    loaded = handler.load_table(path)
    assert list(loaded.columns) == list(frame.columns)
    assert loaded["x"].tolist() == [4, 40]


def test_json_report(tmp_path, manifest, frame):
    path = str(tmp_path / "dets.json")
    ReportHandler().save_table(frame, path, manifest, summary={"detections": 2})
    with open(path) as f:
        data = json.load(f)
    assert data["manifest"]["seed"] == 3
    assert data["summary"] == {"detections": 2}
    assert data["rows"][1]["level"] == 1


def test_excel_report(tmp_path, manifest, frame):
    path = str(tmp_path / "dets.xlsx")
    handler = ReportHandler()
    handler.save_table(frame, path, manifest, summary={"detections": 2})
    sheets = pd.read_excel(path, sheet_name=None)
    assert set(sheets) == {"Data", "Summary", "Metadata"}
    assert handler.load_table(path)["score"].tolist() == [1.25, 0.5]


def test_text_report(tmp_path, manifest, frame):
    path = tmp_path / "dets.txt"
    ReportHandler().save_table(frame, str(path), manifest, summary={"detections": 2})
    text = path.read_text()
    assert "detections  2" in text
    with pytest.raises(InputError):
        ReportHandler().load_table(str(path))


def test_unsupported_format(tmp_path, manifest, frame):
    with pytest.raises(InputError, match="parquet"):
        ReportHandler().save_table(frame, str(tmp_path / "x.parquet"), manifest)


def test_box_files(tmp_path):
    gt = tmp_path / "gt.csv"
    gt.write_text("image_id,x,y,w,h\nb,1,1,20,20\na,0,0,20,20\na,50,50,20,20\n")
    truth = load_ground_truth(str(gt))
    assert [g.image_id for g in truth] == ["a", "b"]
    assert len(truth[0].boxes) == 2

    preds = tmp_path / "pred.csv"
    preds.write_text("# from detect\nimage_id,x,y,w,h\n007,1,2,20,20\n")
    loaded = load_predictions(str(preds))
    assert loaded[0].image_id == "007"
    assert loaded[0].score == 0.0


def test_box_file_errors(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("image_id,x,y\na,1,2\n")
    with pytest.raises(InputError, match="missing columns"):
        load_ground_truth(str(bad))
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    with pytest.raises(InputError):
        load_predictions(str(empty))
    with pytest.raises(InputError):
        load_predictions(str(tmp_path / "nope.csv"))
