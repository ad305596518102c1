"""Training losses: master cross-entropy lives in autodiff; this module adds
the latent-alignment MMD penalty, the deeply-supervised coarse loss, and
their weighted combination.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass
class MmdConfig:
    """Gaussian-kernel maximum mean discrepancy against a N(0, 1) prior.

    kernel k(z, z') = exp(-||z - z'||^2 / (2 * bandwidth^2)). The number of
    prior samples always matches the batch of embedded vectors.
    """

    bandwidth: float = 1.0

    def __post_init__(self):
        if self.bandwidth <= 0:
            raise ValueError(f"bandwidth must be positive, got {self.bandwidth}")


@dataclass
class LossWeights:
    w_mmd: float = 0.1
    w_ds: float = 0.4

    def __post_init__(self):
        if self.w_mmd < 0 or self.w_ds < 0:
            raise ValueError(f"loss weights must be >= 0, got {self.w_mmd}, {self.w_ds}")


def _kernel_mean(a: Tensor, b: Tensor, bandwidth: float) -> Tensor:
    d2 = ad.pairwise_sq_dists(a, b)
    k = ad.exp(ad.scale(d2, -0.5 / (bandwidth * bandwidth)))
    return ad.mean(k)


def mmd_loss(embedded: Tensor, cfg: MmdConfig, rng: np.random.Generator,
             prior: np.ndarray | None = None) -> Tensor:
    """Squared MMD between the embedded batch [B, D] and B prior samples.

    The V-statistic (diagonal terms included) keeps the estimate an exact
    squared RKHS norm, so it is 0 when the two sample sets coincide and
    never negative; a final clamp at 0 absorbs float rounding. ``prior``
    overrides the N(0, 1) draw (used by tests and by deterministic
    training steps).
    """
    if embedded.ndim != 2:
        raise ValueError(f"embedded batch must be [B, D], got {embedded.shape}")
    b, d = embedded.shape
    if prior is None:
        prior = rng.standard_normal((b, d))
    prior = np.asarray(prior, dtype=embedded.dtype)
    if prior.ndim != 2 or prior.shape[1] != d or prior.shape[0] < 1:
        raise ValueError(f"prior samples must be [B', {d}], got {prior.shape}")
    p = ad.constant(prior)
    m_qq = _kernel_mean(embedded, embedded, cfg.bandwidth)
    m_pp = _kernel_mean(p, p, cfg.bandwidth)
    m_qp = _kernel_mean(embedded, p, cfg.bandwidth)
    raw = ad.add(ad.add(m_qq, m_pp), ad.scale(m_qp, -2.0))
    return ad.relu(ad.reshape(raw, (1,)))


def mmd_squared(x: np.ndarray, y: np.ndarray, bandwidth: float = 1.0,
                block: int = 2048) -> float:
    """Plain-numpy V-statistic MMD^2 for large sample sets, evaluated in
    blocks so the full pairwise matrix is never materialized. Same kernel
    and estimator as ``mmd_loss``."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 2 or x.shape[1] != y.shape[1]:
        raise ValueError(f"sample sets must be [*, D] with equal D: {x.shape} vs {y.shape}")
    scale = -0.5 / (bandwidth * bandwidth)

    def kernel_sum(a, b):
        total = 0.0
        bb = np.einsum("ij,ij->i", b, b)
        for start in range(0, a.shape[0], block):
            chunk = a[start:start + block]
            d2 = (
                np.einsum("ij,ij->i", chunk, chunk)[:, None]
                + bb[None, :]
                - 2.0 * (chunk @ b.T)
            )
            total += float(np.exp(np.maximum(d2, 0.0) * scale).sum())
        return total

    m_xx = kernel_sum(x, x) / (x.shape[0] * x.shape[0])
    m_yy = kernel_sum(y, y) / (y.shape[0] * y.shape[0])
    m_xy = kernel_sum(x, y) / (x.shape[0] * y.shape[0])
    return max(m_xx + m_yy - 2.0 * m_xy, 0.0)


def deeply_supervised_loss(coarse_logits: Tensor, centroid_ids: np.ndarray,
                           full_labels: np.ndarray) -> Tensor:
    """Cross-entropy of coarse logits [M, C] against the labels of the
    points the coarse stage sits on (gathered at the centroid indices)."""
    centroid_ids = np.asarray(centroid_ids)
    full_labels = np.asarray(full_labels)
    if centroid_ids.shape[0] != coarse_logits.shape[0]:
        raise ValueError(
            f"{coarse_logits.shape[0]} coarse rows vs {centroid_ids.shape[0]} centroid ids"
        )
    if centroid_ids.min() < 0 or centroid_ids.max() >= full_labels.shape[0]:
        raise IndexError("centroid id out of range of the label array")
    return ad.softmax_cross_entropy(coarse_logits, full_labels[centroid_ids])


def joint_loss(l_master: Tensor, l_mmd: Tensor, l_ds: Tensor,
               weights: LossWeights) -> Tensor:
    """l_master + w_mmd * l_mmd + w_ds * l_ds (all scalars)."""
    for name, t in (("l_master", l_master), ("l_mmd", l_mmd), ("l_ds", l_ds)):
        if t.data.size != 1:
            raise ValueError(f"{name} must be scalar, got shape {t.shape}")
    flat = lambda t: ad.reshape(t, (1,))
    out = ad.add(flat(l_master),
                 ad.add(ad.scale(flat(l_mmd), weights.w_mmd),
                        ad.scale(flat(l_ds), weights.w_ds)))
    return ad.reshape(out, ())
