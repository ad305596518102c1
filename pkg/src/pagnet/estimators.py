"""scikit-learn style wrappers around the classifier and segmenter.

``X`` is a sequence of point clouds — ``PointCloud`` objects or [N, 3]
position arrays (N may vary per cloud) — rather than a feature matrix, so
these estimators skip sklearn's array validation but keep its conventions:
constructor args are stored verbatim, ``fit`` returns ``self``, and fitted
state lives in trailing-underscore attributes.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .geometry import PointCloud
from .metrics import compute_metrics
from .models import TrainState, build_classifier, build_segmenter, make_optimizer
from .netconfig import NetworkConfig
from .runconfig import RunConfig
from .training import (
    predict_class,
    predict_point_labels,
    prepare_classification,
    prepare_segmentation,
    run_training,
)


def _as_cloud(x, labels=None) -> PointCloud:
    if isinstance(x, PointCloud):
        if labels is not None:
            return PointCloud(x.positions, normals=x.normals,
                              labels=np.asarray(labels, dtype=np.int64))
        return x
    return PointCloud(np.asarray(x, dtype=np.float32),
                      labels=None if labels is None else np.asarray(labels, dtype=np.int64))


class PagClassifier(BaseEstimator):
    """Point-cloud shape classifier.

    Defaults are desk-scale (small hierarchies, few epochs) so that fitting a
    few hundred small clouds takes seconds to minutes on a CPU.
    """

    def __init__(self, encoder="[32, 1], [32, 2]; [64, 1], [64, 2]", k=8,
                 subsample_rate=4, proj_channels=128, fc_sizes=(128, 64),
                 ep_mode="both", use_pac=True, use_css=True, dynamic_fps=False,
                 optimizer="adam", lr=1e-3, epochs=30, batch_size=16,
                 target_accuracy=0.0, seed=0):
        self.encoder = encoder
        self.k = k
        self.subsample_rate = subsample_rate
        self.proj_channels = proj_channels
        self.fc_sizes = fc_sizes
        self.ep_mode = ep_mode
        self.use_pac = use_pac
        self.use_css = use_css
        self.dynamic_fps = dynamic_fps
        self.optimizer = optimizer
        self.lr = lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.target_accuracy = target_accuracy
        self.seed = seed

    def _network(self, num_classes: int) -> NetworkConfig:
        return NetworkConfig(
            encoder=self.encoder, num_classes=num_classes, k=self.k,
            subsample_rate=self.subsample_rate, proj_channels=self.proj_channels,
            fc_sizes=tuple(self.fc_sizes), ep_mode=self.ep_mode,
            use_pac=self.use_pac, use_css=self.use_css, dynamic_fps=self.dynamic_fps,
        )

    def fit(self, X, y):
        y = np.asarray(y, dtype=np.int64)
        if len(X) != y.size:
            raise ValueError(f"{len(X)} clouds but {y.size} labels")
        if y.size == 0:
            raise ValueError("need at least one cloud")
        classes = np.unique(y)
        if classes.min() < 0:
            raise ValueError("class ids must be >= 0")
        num_classes = int(classes.max()) + 1
        if num_classes < 2:
            raise ValueError("need at least two classes")

        model = build_classifier(self._network(num_classes), seed=self.seed)
        opt = make_optimizer(self.optimizer, lr=self.lr)
        state = TrainState(model=model, opt=opt, seed=self.seed)
        run_cfg = RunConfig(
            task="classification", num_classes=num_classes,
            optimizer=self.optimizer, lr=self.lr, epochs=self.epochs,
            batch_size=self.batch_size, seed=self.seed,
            target_accuracy=self.target_accuracy,
        )
        items = prepare_classification(model, [(_as_cloud(x), label)
                                               for x, label in zip(X, y)])
        self.history_ = run_training(state, run_cfg, items)
        self.model_ = model
        self.classes_ = classes
        self.n_classes_ = num_classes
        return self

    def predict(self, X):
        self._check_fitted()
        return np.asarray([predict_class(self.model_, _as_cloud(x)) for x in X],
                          dtype=np.int64)

    def predict_proba(self, X):
        self._check_fitted()
        rows = []
        for x in X:
            logits = self.model_.forward(_as_cloud(x)).data.astype(np.float64)[0]
            shifted = np.exp(logits - logits.max())
            rows.append(shifted / shifted.sum())
        return np.asarray(rows)

    def score(self, X, y):
        """Overall accuracy."""
        y = np.asarray(y, dtype=np.int64)
        return float(np.mean(self.predict(X) == y))

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise RuntimeError("this PagClassifier has not been fitted yet")


class PagSegmenter(BaseEstimator):
    """Per-point part segmenter. ``y`` is a sequence of per-point label
    arrays aligned with the clouds in ``X``."""

    def __init__(self, encoder="[32, 1], [32, 2]; [64, 1], [64, 2]", k=8,
                 subsample_rate=4, global_fc_sizes=(64, 64), seg_head_hidden=32,
                 ep_mode="both", use_pac=True, use_csu=True, use_global_feature=True,
                 use_aux_losses=True, w_mmd=0.1, w_ds=0.4, dynamic_fps=False,
                 optimizer="adam", lr=1e-3, epochs=30, batch_size=8,
                 target_accuracy=0.0, seed=0):
        self.encoder = encoder
        self.k = k
        self.subsample_rate = subsample_rate
        self.global_fc_sizes = global_fc_sizes
        self.seg_head_hidden = seg_head_hidden
        self.ep_mode = ep_mode
        self.use_pac = use_pac
        self.use_csu = use_csu
        self.use_global_feature = use_global_feature
        self.use_aux_losses = use_aux_losses
        self.w_mmd = w_mmd
        self.w_ds = w_ds
        self.dynamic_fps = dynamic_fps
        self.optimizer = optimizer
        self.lr = lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.target_accuracy = target_accuracy
        self.seed = seed

    def _network(self, num_parts: int) -> NetworkConfig:
        from .losses import LossWeights  # local import keeps constructor light

        return NetworkConfig(
            encoder=self.encoder, num_classes=num_parts, k=self.k,
            subsample_rate=self.subsample_rate,
            global_fc_sizes=tuple(self.global_fc_sizes),
            seg_head_hidden=self.seg_head_hidden, ep_mode=self.ep_mode,
            use_pac=self.use_pac, use_csu=self.use_csu,
            use_global_feature=self.use_global_feature,
            use_aux_losses=self.use_aux_losses,
            loss_weights=LossWeights(w_mmd=self.w_mmd, w_ds=self.w_ds),
            dynamic_fps=self.dynamic_fps,
        )

    def fit(self, X, y):
        if len(X) != len(y):
            raise ValueError(f"{len(X)} clouds but {len(y)} label arrays")
        if not len(X):
            raise ValueError("need at least one cloud")
        clouds = [_as_cloud(x, labels=labels) for x, labels in zip(X, y)]
        num_parts = int(max(c.labels.max() for c in clouds)) + 1
        num_parts = max(num_parts, 2)

        model = build_segmenter(self._network(num_parts), seed=self.seed)
        opt = make_optimizer(self.optimizer, lr=self.lr)
        state = TrainState(model=model, opt=opt, seed=self.seed)
        run_cfg = RunConfig(
            task="segmentation", dataset="synthetic-segmentation",
            num_classes=num_parts, optimizer=self.optimizer, lr=self.lr,
            epochs=self.epochs, batch_size=self.batch_size, seed=self.seed,
            target_accuracy=self.target_accuracy,
        )
        items = prepare_segmentation(model, clouds)
        self.history_ = run_training(state, run_cfg, items)
        self.model_ = model
        self.n_parts_ = num_parts
        return self

    def predict(self, X):
        self._check_fitted()
        return [predict_point_labels(self.model_, _as_cloud(x)) for x in X]

    def score(self, X, y):
        """Instance-averaged part IoU (pIoU)."""
        self._check_fitted()
        preds = self.predict(X)
        report = compute_metrics(preds, [np.asarray(g) for g in y], task="part_seg",
                                 num_classes=self.n_parts_)
        return float(report.instance_iou)

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise RuntimeError("this PagSegmenter has not been fitted yet")
