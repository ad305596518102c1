"""Epoch-level training loop and prediction helpers.

Static geometry is prepared once per cloud up front; epochs then only pay
for forward/backward. Shuffling is a pure function of (seed, epoch), so a
rerun with the same seed replays the exact same batch order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import PointCloud
from .models import (
    ClassifierModel,
    PreparedCloud,
    SegmenterModel,
    TrainState,
    prepare_cloud,
    train_step,
)
from .runconfig import RunConfig


@dataclass
class EpochRecord:
    epoch: int
    total: float
    master: float
    mmd: float
    ds: float
    accuracy: float


def prepare_classification(model, pairs) -> list[tuple[PreparedCloud, int]]:
    """pairs: iterable of (cloud, class_id)."""
    return [(prepare_cloud(model, cloud), int(label)) for cloud, label in pairs]


def prepare_segmentation(model, clouds) -> list[PreparedCloud]:
    return [prepare_cloud(model, cloud) for cloud in clouds]


def _epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence(entropy=int(seed), spawn_key=(0xE, int(epoch)))
    )


def run_training(state: TrainState, run_cfg: RunConfig, train_items,
                 stop_fn=None, log=None) -> list[EpochRecord]:
    """Train for run_cfg.epochs (or until a stop condition fires).

    ``train_items``: prepared (cloud, label) pairs for classification, or
    prepared labeled clouds for segmentation. ``stop_fn(state, record)`` may
    end training after any epoch; ``target_accuracy`` in the config does the
    same once the epoch's running train accuracy reaches it.
    """
    history: list[EpochRecord] = []
    items = list(train_items)
    if not items:
        raise ValueError("no training items")
    bs = run_cfg.batch_size
    for epoch in range(run_cfg.epochs):
        order = _epoch_rng(run_cfg.seed, epoch).permutation(len(items))
        sums = {"total": 0.0, "master": 0.0, "mmd": 0.0, "ds": 0.0}
        hits = 0
        count = 0
        for start in range(0, len(items), bs):
            batch = [items[i] for i in order[start:start + bs]]
            state, rec = train_step(state, batch)
            for key in sums:
                sums[key] += getattr(rec, key) * len(batch)
            hits += rec.accuracy * rec.count
            count += rec.count
        n = len(items)
        record = EpochRecord(
            epoch=epoch,
            total=sums["total"] / n,
            master=sums["master"] / n,
            mmd=sums["mmd"] / n,
            ds=sums["ds"] / n,
            accuracy=hits / max(count, 1),
        )
        history.append(record)
        if log is not None:
            log(f"epoch {epoch:3d}  loss {record.total:.4f}  acc {record.accuracy:.4f}")
        if run_cfg.target_accuracy > 0 and record.accuracy >= run_cfg.target_accuracy:
            break
        if stop_fn is not None and stop_fn(state, record):
            break
    return history


def predict_class(model: ClassifierModel, item) -> int:
    prep = item if isinstance(item, PreparedCloud) else prepare_cloud(model, item)
    logits = model.forward(prep.cloud, plan=prep.plan)
    return int(np.argmax(logits.data))


def predict_point_labels(model: SegmenterModel, item) -> np.ndarray:
    prep = item if isinstance(item, PreparedCloud) else prepare_cloud(model, item)
    out = model.forward(prep.cloud, plan=prep.plan)
    return np.argmax(out.logits.data, axis=1).astype(np.int64)


def classification_accuracy(model: ClassifierModel, pairs) -> float:
    """pairs: (cloud-or-prepared, label)."""
    pairs = list(pairs)
    hits = sum(predict_class(model, cloud) == int(label) for cloud, label in pairs)
    return hits / len(pairs)
