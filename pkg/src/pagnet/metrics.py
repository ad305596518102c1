"""Evaluation metrics: overall accuracy, per-class/mean IoU, and the two
segmentation summaries (instance-averaged and category-averaged part IoU).

Conventions: the confusion matrix is indexed [truth, prediction]. Within one
instance, a part type absent from both the prediction and the ground truth
counts as IoU 1 for that instance; a class absent from the whole evaluation
likewise reports IoU 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TASKS = ("classification", "part_seg", "sem_seg")


@dataclass
class MetricsReport:
    task: str
    n_instances: int
    overall_accuracy: float
    confusion: np.ndarray                 # [C, C] counts, rows = ground truth
    per_class_iou: np.ndarray             # [C]
    mean_iou: float
    instance_iou: float | None = None     # pIoU: mean over instances (part_seg)
    mean_category_iou: float | None = None  # mpIoU: mean over categories (part_seg)

    def rows(self) -> list[tuple[str, float]]:
        out = [
            ("overall_accuracy", self.overall_accuracy),
            ("mean_iou", self.mean_iou),
        ]
        if self.instance_iou is not None:
            out.append(("instance_iou", self.instance_iou))
        if self.mean_category_iou is not None:
            out.append(("mean_category_iou", self.mean_category_iou))
        for c, iou in enumerate(self.per_class_iou):
            out.append((f"iou_class_{c}", float(iou)))
        n = self.confusion.shape[0]
        for i in range(n):
            for j in range(n):
                out.append((f"confusion_{i}_{j}", float(self.confusion[i, j])))
        return out

    def to_csv(self) -> str:
        lines = ["metric,value"]
        lines += [f"{name},{format(value, '.9g')}" for name, value in self.rows()]
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        lines = [f"task = {self.task}", f"n_instances = {self.n_instances}"]
        lines += [f"{name} = {format(value, '.9g')}" for name, value in self.rows()]
        return "\n".join(lines) + "\n"


def confusion_matrix(pred: np.ndarray, gt: np.ndarray, num_classes: int) -> np.ndarray:
    pred = np.asarray(pred, dtype=np.int64).reshape(-1)
    gt = np.asarray(gt, dtype=np.int64).reshape(-1)
    if pred.shape != gt.shape:
        raise ValueError(f"length mismatch: {pred.shape} predictions vs {gt.shape} labels")
    if pred.size and (min(pred.min(), gt.min()) < 0 or max(pred.max(), gt.max()) >= num_classes):
        raise ValueError(f"labels out of range for {num_classes} classes")
    counts = np.bincount(gt * num_classes + pred, minlength=num_classes * num_classes)
    return counts.reshape(num_classes, num_classes)


def _iou_from_confusion(confusion: np.ndarray) -> np.ndarray:
    tp = np.diag(confusion).astype(np.float64)
    fp = confusion.sum(axis=0) - tp
    fn = confusion.sum(axis=1) - tp
    denom = tp + fp + fn
    out = np.ones_like(tp)  # absent everywhere counts as 1
    present = denom > 0
    out[present] = tp[present] / denom[present]
    return out


def _instance_iou(pred: np.ndarray, gt: np.ndarray, parts) -> float:
    ious = []
    for part in parts:
        p = pred == part
        g = gt == part
        union = np.logical_or(p, g).sum()
        if union == 0:
            ious.append(1.0)  # part absent from both in this instance
        else:
            ious.append(np.logical_and(p, g).sum() / union)
    return float(np.mean(ious))


def _infer_classes(arrays, num_classes) -> int:
    if num_classes is not None:
        return int(num_classes)
    peak = 0
    for arr in arrays:
        arr = np.asarray(arr)
        if arr.size:
            peak = max(peak, int(arr.max()))
    return peak + 1


def compute_metrics(pred, gt, task: str, category_map=None,
                    num_classes: int | None = None,
                    category_parts: dict | None = None) -> MetricsReport:
    """Score predictions against ground truth.

    classification: ``pred``/``gt`` are per-instance class ids.
    part_seg: per-instance arrays of point labels; ``category_map`` gives each
        instance's object category (one category by default) and
        ``category_parts`` the part ids belonging to each category (all
        classes by default).
    sem_seg: flat point-label arrays.
    """
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r} (want one of {TASKS})")

    if task == "classification":
        pred = np.asarray(pred, dtype=np.int64).reshape(-1)
        gt = np.asarray(gt, dtype=np.int64).reshape(-1)
        c = _infer_classes([pred, gt], num_classes)
        confusion = confusion_matrix(pred, gt, c)
        per_class = _iou_from_confusion(confusion)
        oa = float(np.trace(confusion) / max(confusion.sum(), 1))
        return MetricsReport(task=task, n_instances=int(pred.size),
                             overall_accuracy=oa, confusion=confusion,
                             per_class_iou=per_class,
                             mean_iou=float(per_class.mean()))

    if task == "sem_seg":
        pred = [np.asarray(pred).reshape(-1)] if np.ndim(pred[0]) == 0 else list(pred)
        gt = [np.asarray(gt).reshape(-1)] if np.ndim(gt[0]) == 0 else list(gt)
        flat_pred = np.concatenate([np.asarray(p).reshape(-1) for p in pred])
        flat_gt = np.concatenate([np.asarray(g).reshape(-1) for g in gt])
        c = _infer_classes([flat_pred, flat_gt], num_classes)
        confusion = confusion_matrix(flat_pred, flat_gt, c)
        per_class = _iou_from_confusion(confusion)
        oa = float(np.trace(confusion) / max(confusion.sum(), 1))
        return MetricsReport(task=task, n_instances=len(pred),
                             overall_accuracy=oa, confusion=confusion,
                             per_class_iou=per_class,
                             mean_iou=float(per_class.mean()))

    # part_seg
    pred = [np.asarray(p, dtype=np.int64).reshape(-1) for p in pred]
    gt = [np.asarray(g, dtype=np.int64).reshape(-1) for g in gt]
    if len(pred) != len(gt):
        raise ValueError(f"length mismatch: {len(pred)} predictions vs {len(gt)} instances")
    for i, (p, g) in enumerate(zip(pred, gt)):
        if p.shape != g.shape:
            raise ValueError(f"instance {i}: length mismatch {p.shape} vs {g.shape}")
    c = _infer_classes(pred + gt, num_classes)
    if category_map is None:
        category_map = [0] * len(pred)
    if len(category_map) != len(pred):
        raise ValueError("category_map length does not match instances")
    if category_parts is None:
        category_parts = {cat: list(range(c)) for cat in set(category_map)}

    confusion = np.zeros((c, c), dtype=np.int64)
    instance_ious = []
    per_category: dict = {}
    for p, g, cat in zip(pred, gt, category_map):
        confusion += confusion_matrix(p, g, c)
        iou = _instance_iou(p, g, category_parts[cat])
        instance_ious.append(iou)
        per_category.setdefault(cat, []).append(iou)
    per_class = _iou_from_confusion(confusion)
    oa = float(np.trace(confusion) / max(confusion.sum(), 1))
    piou = float(np.mean(instance_ious))
    mpiou = float(np.mean([np.mean(v) for v in per_category.values()]))
    return MetricsReport(task=task, n_instances=len(pred), overall_accuracy=oa,
                         confusion=confusion, per_class_iou=per_class,
                         mean_iou=float(per_class.mean()),
                         instance_iou=piou, mean_category_iou=mpiou)
