import json

import numpy as np
import pytest
from numpy.testing import assert_allclose

from conftest import make_record
from oracles import pixel_iou
from proprank import (
    Box,
    Candidate,
    DataError,
    Dataset,
    GroundTruthObject,
    ImageRecord,
    dataset_digest,
    dataset_from_lines,
    dataset_to_lines,
    iou,
    label_candidates,
    label_dataset,
    rank_by_label,
)
from proprank.core import record_from_dict, record_to_dict


def test_box_area_and_validation():
    b = Box(1.0, 2.0, 4.0, 7.0)
    assert b.area == 15.0
    assert b.as_list() == [1.0, 2.0, 4.0, 7.0]
    with pytest.raises(DataError):
        Box(0, 0, 0, 1)
    with pytest.raises(DataError):
        Box(0, 0, 1, -1)
    with pytest.raises(DataError):
        Box(0, 0, float("nan"), 1)
    with pytest.raises(DataError):
        Box(0, 0, float("inf"), 1)


def test_iou_hand_examples():
    # Two unit squares sharing half their area: inter 0.5, union 1.5.
    assert_allclose(iou(Box(0, 0, 1, 1), Box(0.5, 0, 1.5, 1)), 1.0 / 3.0)
    # Contained box: 1x1 inside 2x2.
    assert_allclose(iou(Box(0, 0, 2, 2), Box(0, 0, 1, 1)), 0.25)
    # Disjoint and edge-touching boxes have zero overlap.
    assert iou(Box(0, 0, 1, 1), Box(2, 2, 3, 3)) == 0.0
    assert iou(Box(0, 0, 1, 1), Box(1, 0, 2, 1)) == 0.0


def test_iou_degenerate_cases():
    b = Box(3.0, 5.0, 10.5, 9.25)
    assert iou(b, b) == 1.0
    assert iou(Box(0, 0, 5, 5), Box(0, 0, 5, 5)) == 1.0


def test_iou_symmetry_random():
    rng = np.random.default_rng(7)
    for _ in range(200):
        x0, y0 = rng.uniform(0, 50, size=2)
        a = Box(x0, y0, x0 + rng.uniform(1, 30), y0 + rng.uniform(1, 30))
        x0, y0 = rng.uniform(0, 50, size=2)
        b = Box(x0, y0, x0 + rng.uniform(1, 30), y0 + rng.uniform(1, 30))
        assert iou(a, b) == iou(b, a)
        assert 0.0 <= iou(a, b) <= 1.0


def test_iou_matches_pixel_enumeration_on_integer_boxes():
    rng = np.random.default_rng(11)
    for _ in range(100):
        x0, y0 = rng.integers(0, 20, size=2)
        a = [int(x0), int(y0), int(x0 + rng.integers(1, 15)), int(y0 + rng.integers(1, 15))]
        x0, y0 = rng.integers(0, 20, size=2)
        b = [int(x0), int(y0), int(x0 + rng.integers(1, 15)), int(y0 + rng.integers(1, 15))]
        assert_allclose(iou(Box(*a), Box(*b)), pixel_iou(a, b), atol=1e-12)


def test_iou_matches_pixel_enumeration_on_fractional_grid():
    rng = np.random.default_rng(13)
    for _ in range(50):
        a = rng.integers(0, 40, size=2)
        b = rng.integers(1, 30, size=2)
        box_a = [a[0] / 8, a[1] / 8, (a[0] + b[0]) / 8, (a[1] + b[1]) / 8]
        c = rng.integers(0, 40, size=2)
        d = rng.integers(1, 30, size=2)
        box_b = [c[0] / 8, c[1] / 8, (c[0] + d[0]) / 8, (c[1] + d[1]) / 8]
        assert_allclose(iou(Box(*box_a), Box(*box_b)), pixel_iou(box_a, box_b, scale=8), atol=1e-12)


def test_candidate_validation():
    with pytest.raises(DataError):
        Candidate(Box(0, 0, 1, 1), iou_label=1.5)
    with pytest.raises(DataError):
        Candidate(Box(0, 0, 1, 1), iou_label=-0.1)
    with pytest.raises(DataError):
        Candidate(Box(0, 0, 1, 1), features=np.array([[1.0, 2.0]]))
    with pytest.raises(DataError):
        Candidate(Box(0, 0, 1, 1), features=np.array([1.0, np.nan]))
    with pytest.raises(DataError):
        Candidate(Box(0, 0, 1, 1), source_index=-1)
    c = Candidate(Box(0, 0, 1, 1), iou_label=np.float64(0.5))
    assert isinstance(c.iou_label, float)


def test_record_rejects_out_of_bounds_boxes():
    with pytest.raises(DataError, match="im-1"):
        ImageRecord("im-1", 10, 10, (), (Candidate(Box(5, 5, 11, 9)),))
    with pytest.raises(DataError):
        ImageRecord("im-2", 10, 10, (GroundTruthObject("cat", Box(-1, 0, 5, 5)),), ())
    # Boxes touching the image border are fine.
    ImageRecord("im-3", 10, 10, (), (Candidate(Box(0, 0, 10, 10)),))


def test_record_label_and_feature_accessors():
    rec = make_record("r", labels=[0.2, 0.9], feats=[[1.0, 2.0], [3.0, 4.0]])
    assert rec.iou_labels() == [0.2, 0.9]
    assert rec.features_matrix().shape == (2, 2)
    partial = ImageRecord("r2", 5, 5, (), (Candidate(Box(0, 0, 1, 1)),))
    with pytest.raises(DataError, match="r2: candidate 0"):
        partial.iou_labels()
    with pytest.raises(DataError, match="has no features"):
        partial.features_matrix()
    empty = ImageRecord("r3", 5, 5)
    assert empty.features_matrix().shape == (0, 0)


def test_dataset_duplicate_ids_and_dim_inference():
    rec = make_record("same", labels=[0.1], feats=[[1.0, 2.0]])
    rec2 = make_record("same", labels=[0.1], feats=[[1.0, 2.0]])
    with pytest.raises(DataError, match="duplicate"):
        Dataset((rec, rec2))
    ds = Dataset((rec,))
    assert ds.feature_dim == 2
    bad = make_record("other", labels=[0.5], feats=[[1.0, 2.0, 3.0]])
    with pytest.raises(DataError, match="dimension"):
        Dataset((rec, bad))
    assert ds.get("same") is rec
    with pytest.raises(KeyError):
        ds.get("missing")


def test_label_candidates_max_over_groundtruth():
    rec = make_record(
        "lab",
        labels=None,
        feats=None,
        gts=[("cat", [0, 0, 10, 10]), ("dog", [20, 20, 40, 40])],
        cand_boxes=[[0, 0, 10, 10], [0, 0, 20, 20], [20, 20, 40, 40], [60, 60, 70, 70]],
    )
    labeled = label_candidates(rec)
    labels = labeled.iou_labels()
    assert labels[0] == 1.0
    assert_allclose(labels[1], 0.25)  # covers cat entirely at 4x the area
    assert labels[2] == 1.0
    assert labels[3] == 0.0
    # Existing labels are recomputed, not trusted.
    stale = make_record("stale", labels=[0.77], gts=[], cand_boxes=[[0, 0, 5, 5]])
    assert label_candidates(stale).iou_labels() == [0.0]


def test_label_dataset_preserves_order_and_dim():
    rec = make_record("a", labels=None, feats=[[1.0], [2.0]], gts=[("cat", [0, 0, 4, 4])],
                      cand_boxes=[[0, 0, 4, 4], [4, 4, 8, 8]])
    ds = label_dataset(Dataset((rec,)))
    assert ds.feature_dim == 1
    assert ds.records[0].iou_labels() == [1.0, 0.0]
    assert_allclose(ds.records[0].features_matrix(), [[1.0], [2.0]])


def test_rank_by_label_descending_and_stable():
    rec = make_record("rk", labels=[0.3, 0.9, 0.3, 1.0, 0.0])
    assert rank_by_label(rec) == [3, 1, 0, 2, 4]
    ties = make_record("tie", labels=[0.5, 0.5, 0.5])
    assert rank_by_label(ties) == [0, 1, 2]


def test_jsonl_round_trip_is_exact():
    rec = make_record(
        "rt-1",
        labels=[0.12345678901234567, 1.0],
        feats=[[1.5, -2.25], [0.1, 0.3]],
        gts=[("cat", [0.5, 1.5, 20.25, 30.75])],
        cand_boxes=[[0, 0, 10, 10], [5, 5, 15, 15]],
    )
    rec2 = ImageRecord("rt-2", 100, 100, (), (Candidate(Box(1, 1, 2, 2), source_index=4),))
    ds = Dataset((rec, rec2))
    lines = dataset_to_lines(ds)
    back = dataset_from_lines(lines)
    assert dataset_to_lines(back) == lines
    assert back.records[0].iou_labels() == [0.12345678901234567, 1.0]
    assert back.records[1].candidates[0].source_index == 4
    assert back.feature_dim == 2
    assert dataset_digest(back) == dataset_digest(ds)


def test_jsonl_reader_ignores_unknown_fields_and_blank_lines():
    line = json.dumps(
        {
            "image_id": "x",
            "width": 10,
            "height": 10,
            "score": 0.9,
            "groundtruth": [{"class": "cat", "box": [0, 0, 5, 5], "difficult": True}],
            "candidates": [{"box": [1, 1, 3, 3], "junk": [1, 2]}],
        }
    )
    ds = dataset_from_lines(["", line, "   "])
    assert len(ds) == 1
    assert ds.records[0].groundtruth[0].class_label == "cat"
    assert ds.records[0].candidates[0].iou_label is None


def test_jsonl_errors_carry_line_numbers():
    good = json.dumps({"image_id": "ok", "width": 4, "height": 4})
    with pytest.raises(DataError, match="line 2: invalid JSON"):
        dataset_from_lines([good, "{not json"])
    with pytest.raises(DataError, match="line 3: .*missing required field"):
        dataset_from_lines([good, "", json.dumps({"image_id": "bad", "width": 4})])
    with pytest.raises(DataError, match="line 1: .*width"):
        dataset_from_lines([json.dumps({"image_id": "f", "width": 4.5, "height": 4})])


def test_record_dict_rejects_malformed_pieces():
    base = {"image_id": "m", "width": 8, "height": 8}
    with pytest.raises(DataError, match="groundtruth 0"):
        record_from_dict({**base, "groundtruth": [{"class": "cat"}]})
    with pytest.raises(DataError, match="candidate 0"):
        record_from_dict({**base, "candidates": [{"iou_label": 0.5}]})
    with pytest.raises(DataError, match="4-element"):
        record_from_dict({**base, "candidates": [{"box": [1, 2, 3]}]})
    with pytest.raises(DataError, match="non-numeric"):
        record_from_dict({**base, "candidates": [{"box": [1, 2, 3, "x"]}]})
    with pytest.raises(DataError, match="width"):
        record_from_dict({"image_id": "m", "width": True, "height": 8})
    rec = record_from_dict({**base, "width": 8.0})
    assert rec.width == 8


def test_record_to_dict_field_layout():
    rec = make_record("layout", labels=[0.5], feats=[[1.0]], gts=[("cat", [0, 0, 2, 2])],
                      cand_boxes=[[1, 1, 3, 3]])
    obj = record_to_dict(rec)
    assert list(obj) == ["image_id", "width", "height", "groundtruth", "candidates"]
    assert obj["groundtruth"][0] == {"class": "cat", "box": [0.0, 0.0, 2.0, 2.0]}
    assert obj["candidates"][0]["iou_label"] == 0.5
    assert "source_index" not in obj["candidates"][0]
