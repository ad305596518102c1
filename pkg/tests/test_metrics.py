"""Metrics against hand-computed fixtures (exact arithmetic, frozen here)."""

import numpy as np
import pytest

from pagnet.metrics import compute_metrics, confusion_matrix


def test_perfect_prediction_is_all_ones():
    gt = [np.array([0, 1, 1, 0]), np.array([1, 1, 0, 0])]
    report = compute_metrics([g.copy() for g in gt], gt, task="part_seg")
    assert report.overall_accuracy == 1.0
    assert report.instance_iou == 1.0
    assert report.mean_category_iou == 1.0
    assert np.all(report.per_class_iou == 1.0)


def test_two_part_instance_half_and_full():
    # part0: pred {0} vs gt {0,1} -> 1/2; part1: pred {2,3} vs gt {2,3} -> 1
    gt = [np.array([0, 0, 1, 1])]
    pred = [np.array([0, 2, 1, 1])]
    report = compute_metrics(pred, gt, task="part_seg", num_classes=3,
                             category_map=[0], category_parts={0: [0, 1]})
    assert report.instance_iou == pytest.approx(0.75, abs=1e-12)


def test_absent_part_counts_as_one():
    # category parts include part 2, absent from both pred and gt
    gt = [np.array([0, 0, 1, 1])]
    pred = [np.array([0, 0, 1, 1])]
    report = compute_metrics(pred, gt, task="part_seg", num_classes=3,
                             category_map=[0], category_parts={0: [0, 1, 2]})
    assert report.instance_iou == 1.0


def test_three_instance_hand_computed_fixture():
    # categories: instances 0,1 are category A (parts 0,1); instance 2 is B (parts 2,3)
    gt = [np.array([0, 0, 1, 1]), np.array([0, 1, 1, 1]), np.array([2, 2, 3, 3])]
    pred = [np.array([0, 2, 1, 1]), np.array([0, 1, 1, 1]), np.array([3, 2, 3, 3])]
    report = compute_metrics(pred, gt, task="part_seg", num_classes=4,
                             category_map=["A", "A", "B"],
                             category_parts={"A": [0, 1], "B": [2, 3]})
    # instance IoUs: 3/4, 1, (1/2 + 2/3)/2 = 7/12 -> mean 7/9
    assert report.instance_iou == pytest.approx(7 / 9, abs=1e-12)
    # category means: A = 7/8, B = 7/12 -> mpIoU 35/48
    assert report.mean_category_iou == pytest.approx(35 / 48, abs=1e-12)
    assert report.overall_accuracy == pytest.approx(10 / 12, abs=1e-12)
    want_confusion = np.array([
        [2, 0, 1, 0],
        [0, 5, 0, 0],
        [0, 0, 1, 1],
        [0, 0, 0, 2],
    ])
    assert np.array_equal(report.confusion, want_confusion)
    assert report.per_class_iou == pytest.approx([2 / 3, 1.0, 1 / 3, 2 / 3], abs=1e-12)
    assert report.mean_iou == pytest.approx(2 / 3, abs=1e-12)


def test_five_instance_classification_fixture():
    pred = [0, 1, 2, 1, 0]
    gt = [0, 1, 2, 2, 0]
    report = compute_metrics(pred, gt, task="classification")
    assert report.n_instances == 5
    assert report.overall_accuracy == pytest.approx(4 / 5, abs=1e-12)
    assert np.array_equal(report.confusion, [[2, 0, 0], [0, 1, 0], [0, 1, 1]])
    assert report.per_class_iou == pytest.approx([1.0, 0.5, 0.5], abs=1e-12)
    assert report.mean_iou == pytest.approx(2 / 3, abs=1e-12)
    assert report.instance_iou is None and report.mean_category_iou is None


def test_sem_seg_accepts_flat_and_per_instance():
    flat = compute_metrics(np.array([0, 1, 1, 0]), np.array([0, 1, 0, 0]), task="sem_seg")
    split = compute_metrics([np.array([0, 1]), np.array([1, 0])],
                            [np.array([0, 1]), np.array([0, 0])], task="sem_seg")
    assert flat.overall_accuracy == split.overall_accuracy == pytest.approx(0.75)
    assert np.array_equal(flat.confusion, split.confusion)


def test_class_absent_from_everything_reports_iou_one():
    report = compute_metrics([0, 1, 0], [0, 1, 1], task="classification", num_classes=3)
    assert report.per_class_iou[2] == 1.0


def test_length_mismatch_raises():
    with pytest.raises(ValueError, match="length mismatch"):
        compute_metrics([0, 1], [0], task="classification")
    with pytest.raises(ValueError, match="length mismatch"):
        compute_metrics([np.array([0, 1])], [np.array([0])], task="part_seg")
    with pytest.raises(ValueError, match="unknown task"):
        compute_metrics([0], [0], task="detection")
    with pytest.raises(ValueError, match="out of range"):
        confusion_matrix(np.array([3]), np.array([0]), num_classes=2)


def test_csv_and_text_formats():
    report = compute_metrics([0, 1], [0, 1], task="classification")
    csv = report.to_csv()
    lines = csv.splitlines()
    assert lines[0] == "metric,value"
    assert lines[1] == "overall_accuracy,1"
    assert f"iou_class_0,1" in lines
    assert any(line.startswith("confusion_0_0,") for line in lines)
    text = report.to_text()
    assert text.startswith("task = classification\n")
    assert "overall_accuracy = 1" in text
    # identical inputs serialize identically
    assert compute_metrics([0, 1], [0, 1], task="classification").to_csv() == csv
