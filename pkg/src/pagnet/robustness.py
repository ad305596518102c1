"""Point-dropout robustness sweep, with and without bounded neighbor radii.

Each cell of the sweep drops the same seeded subset of points from every
cloud (so the bounded and unbounded columns see identical inputs) and
measures accuracy: per cloud for classifiers, per point for segmenters.
Bounded cells re-run the convolution neighbor searches restricted to a
radius band, the degradation-control mode for sparse inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import PointCloud, random_dropout
from .models import ClassifierModel, SegmenterModel


@dataclass
class SweepCell:
    keep_ratio: float
    bounds: tuple[float, float] | None
    accuracy: float
    n_instances: int

    @property
    def bounds_text(self) -> str:
        if self.bounds is None:
            return "none"
        return f"{format(self.bounds[0], '.9g')}:{format(self.bounds[1], '.9g')}"


def _dropout_rng(seed: int, ratio_index: int, cloud_index: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence(entropy=int(seed), spawn_key=(0xD0, ratio_index, cloud_index))
    )


def _accuracy(model, items, bounds) -> tuple[float, int]:
    if isinstance(model, ClassifierModel):
        hits = 0
        for cloud, label in items:
            logits = model.forward(cloud, pac_bounds=bounds)
            hits += int(np.argmax(logits.data)) == int(label)
        return hits / len(items), len(items)
    hits = 0
    total = 0
    for cloud in items:
        out = model.forward(cloud, pac_bounds=bounds)
        pred = np.argmax(out.logits.data, axis=1)
        hits += int(np.sum(pred == cloud.labels))
        total += cloud.n
    return hits / total, len(items)


def run_robustness_sweep(model, dataset, keep_ratios, radii_options,
                         seed: int = 0) -> list[SweepCell]:
    """dataset: (cloud, label) pairs for a classifier, labeled clouds for a
    segmenter. ``radii_options``: None for unbounded, or (r_min, r_max).
    Returns one cell per (keep_ratio, option), ratios outermost."""
    if isinstance(model, SegmenterModel):
        items = list(dataset)
        classification = False
    else:
        items = list(dataset)
        classification = True
    if not items:
        raise ValueError("empty dataset")
    cells = []
    for ri, ratio in enumerate(keep_ratios):
        dropped = []
        for ci, item in enumerate(items):
            cloud = item[0] if classification else item
            kept = random_dropout(cloud, ratio, _dropout_rng(seed, ri, ci))
            dropped.append((kept, item[1]) if classification else kept)
        for bounds in radii_options:
            accuracy, n = _accuracy(model, dropped, bounds)
            cells.append(SweepCell(keep_ratio=float(ratio), bounds=bounds,
                                   accuracy=accuracy, n_instances=n))
    return cells


def sweep_to_csv(cells: list[SweepCell]) -> str:
    lines = ["keep_ratio,neighbor_bounds,accuracy"]
    for cell in cells:
        lines.append(
            f"{format(cell.keep_ratio, '.9g')},{cell.bounds_text},"
            f"{format(cell.accuracy, '.9g')}"
        )
    return "\n".join(lines) + "\n"
