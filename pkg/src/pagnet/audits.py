"""Self-contained numerical audits behind the ``gradcheck`` and ``invariance``
CLI subcommands.

Gradient audits rebuild each layer and loss in 64-bit on small random inputs
and compare reverse-mode gradients against central finite differences; the
network audits do the same end to end through micro classifier and segmenter
builds. The invariance audit measures the worst logit deviation under random
input permutations of a trained (or fresh) model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .geometry import PointCloud
from .gradcheck import GradcheckReport, check_gradients
from .layers import (
    EpLayer,
    EuLayer,
    PacLayer,
    css_forward,
    ep_forward,
    ep_graph,
    eu_forward,
    global_max_pool,
    interpolation_graph,
    interpolate,
    pac_forward,
    select_centroids,
)
from .losses import deeply_supervised_loss, joint_loss, mmd_loss
from .models import ClassifierModel, SegmenterModel, build_classifier, build_segmenter, build_static_plan
from .netconfig import NetworkConfig

AUDIT_MODULES = ("layers", "losses", "network")


@dataclass
class AuditResult:
    name: str
    worst: float
    passed: bool

    def format(self) -> str:
        state = "pass" if self.passed else "FAIL"
        return f"{self.name}: worst rel err {self.worst:.3e} [{state}]"


def _params64(rng: np.random.Generator, c_in: int, c_out: int) -> ad.LinearParams:
    return ad.LinearParams.create(c_in, c_out, rng, dtype=np.float64)


def _run(name: str, build_loss, params: dict, tol: float) -> AuditResult:
    report: GradcheckReport = check_gradients(build_loss, params, tol=tol)
    return AuditResult(name=name, worst=report.worst, passed=report.passed)


def _layer_audits(tol: float) -> list[AuditResult]:
    rng = np.random.default_rng(0)
    positions = rng.standard_normal((12, 3))
    feats = rng.standard_normal((12, 4))
    out = []

    pac = PacLayer(_params64(rng, 8, 6), k=3, rate=2)

    def pac_loss():
        x = ad.constant(feats)
        return ad.reduce_sum(pac_forward(x, pac, positions=positions), axis=None)

    out.append(_run("pac", pac_loss, {"w": pac.params.weight, "b": pac.params.bias}, tol))

    ep = EpLayer(k=3, subsample_rate=2)
    cids = select_centroids(positions, ep)
    graph = ep_graph(positions, cids, ep.k)
    eu_graph, eu_weights = interpolation_graph(positions[cids], positions, 3)
    lift = _params64(rng, 4, 4)

    def ep_eu_loss():
        x = ad.relu(ad.apply_linear(ad.constant(feats), lift))
        pooled, _ = ep_forward(x, positions, ep, centroid_ids=cids, graph=graph)
        back = eu_forward(pooled, positions[cids], positions, x, EuLayer(3),
                          graph=eu_graph, weights=eu_weights)
        return ad.reduce_sum(back, axis=None)

    out.append(_run("ep_eu", ep_eu_loss, {"w": lift.weight, "b": lift.bias}, tol))

    css_lin = _params64(rng, 4, 5)

    def css_loss():
        s = css_forward(ad.apply_linear(ad.constant(feats), css_lin), positions, cids,
                        3, graph=graph)
        return ad.reduce_sum(interpolate(s, eu_graph, eu_weights), axis=None)

    out.append(_run("css_csu", css_loss, {"w": css_lin.weight, "b": css_lin.bias}, tol))

    pool_lin = _params64(rng, 4, 5)

    def pool_loss():
        y = ad.apply_linear(ad.constant(feats), pool_lin)
        return ad.reduce_sum(global_max_pool(y), axis=None)

    out.append(_run("global_pool", pool_loss, {"w": pool_lin.weight, "b": pool_lin.bias}, tol))
    return out


def _loss_audits(tol: float) -> list[AuditResult]:
    rng = np.random.default_rng(1)
    out = []
    embed_lin = _params64(rng, 3, 4)
    base = rng.standard_normal((3, 3))
    prior = rng.standard_normal((5, 4))
    from .losses import MmdConfig, LossWeights

    def mmd_build():
        z = ad.apply_linear(ad.constant(base), embed_lin)
        return mmd_loss(z, MmdConfig(bandwidth=1.0), None, prior=prior)

    out.append(_run("mmd", mmd_build, {"w": embed_lin.weight, "b": embed_lin.bias}, tol))

    ds_lin = _params64(rng, 3, 4)
    coarse = rng.standard_normal((6, 3))
    cids = np.asarray([0, 2, 4, 5, 7, 9])
    labels = rng.integers(0, 4, size=10)

    def ds_build():
        logits = ad.apply_linear(ad.constant(coarse), ds_lin)
        return deeply_supervised_loss(logits, cids, labels)

    out.append(_run("deeply_supervised", ds_build, {"w": ds_lin.weight, "b": ds_lin.bias}, tol))

    joint_lin = _params64(rng, 3, 4)

    def joint_build():
        logits = ad.apply_linear(ad.constant(coarse), joint_lin)
        master = ad.softmax_cross_entropy(logits, labels[cids])
        z = ad.apply_linear(ad.constant(base), embed_lin)
        mmd = mmd_loss(z, MmdConfig(bandwidth=1.0), None, prior=prior)
        ds = deeply_supervised_loss(logits, cids, labels)
        return joint_loss(master, mmd, ds, LossWeights())

    out.append(_run(
        "joint", joint_build,
        {"w": joint_lin.weight, "b": joint_lin.bias,
         "ew": embed_lin.weight, "eb": embed_lin.bias}, tol))
    return out


def _network_audits(tol: float) -> list[AuditResult]:
    rng = np.random.default_rng(2)
    out = []
    cls_cfg = NetworkConfig(encoder="[5, 1], [5, 2]; [7, 1]", num_classes=3, k=3,
                            subsample_rate=2, proj_channels=8, fc_sizes=(6, 5))
    cls = build_classifier(cls_cfg, seed=3, dtype=np.float64)
    cloud = PointCloud(rng.standard_normal((16, 3)).astype(np.float32))
    plan = build_static_plan(cls_cfg, cloud.positions)
    label = np.asarray([1], dtype=np.int64)

    def cls_loss():
        return ad.softmax_cross_entropy(cls.forward(cloud, plan=plan), label)

    out.append(_run("classifier", cls_loss, cls.named_parameters(), tol))

    seg_cfg = NetworkConfig(encoder="[5, 1]; [6, 1]", num_classes=2, k=3,
                            subsample_rate=2, global_fc_sizes=(6, 4),
                            seg_head_hidden=5, use_aux_losses=True)
    seg = build_segmenter(seg_cfg, seed=3, dtype=np.float64)
    seg_labels = rng.integers(0, 2, size=12)
    seg_cloud = PointCloud(rng.standard_normal((12, 3)).astype(np.float32), labels=seg_labels)
    seg_plan = build_static_plan(seg.cfg, seg_cloud.positions, with_decoder=True)
    prior = rng.standard_normal((1, 4))

    def seg_loss():
        o = seg.forward(seg_cloud, plan=seg_plan)
        master = ad.softmax_cross_entropy(o.logits, seg_labels)
        mmd = mmd_loss(o.embedding, seg.cfg.mmd, None, prior=prior)
        ds = ad.softmax_cross_entropy(o.ds_logits, seg_labels[o.ds_ids])
        return joint_loss(master, mmd, ds, seg.cfg.loss_weights)

    out.append(_run("segmenter", seg_loss, seg.named_parameters(), tol))
    return out


def run_gradient_audit(module: str = "all", tol: float = 1e-5,
                       network_tol: float = 1e-4) -> list[AuditResult]:
    """Gradient checks for one module group or all of them."""
    if module not in AUDIT_MODULES + ("all",):
        raise ValueError(f"unknown audit module {module!r} (want {AUDIT_MODULES} or all)")
    results = []
    if module in ("layers", "all"):
        results += _layer_audits(tol)
    if module in ("losses", "all"):
        results += _loss_audits(tol)
    if module in ("network", "all"):
        results += _network_audits(network_tol)
    return results


def run_invariance_audit(model, n_clouds: int = 10, n_perms: int = 20,
                         n_points: int = 96, seed: int = 0) -> float:
    """Worst absolute logit deviation under random permutations.

    Classifier logits are compared directly; segmenter point logits are
    inverse-permuted first.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_clouds):
        positions = rng.standard_normal((n_points, 3)).astype(np.float32)
        if isinstance(model, SegmenterModel):
            cloud = PointCloud(positions, labels=np.zeros(n_points, dtype=np.int64))
            base = model.forward(cloud).logits.data
        else:
            cloud = PointCloud(positions)
            base = model.forward(cloud).data
        for _ in range(n_perms):
            perm = rng.permutation(n_points)
            permuted = PointCloud(
                positions[perm],
                labels=cloud.labels[perm] if cloud.labels is not None else None,
            )
            if isinstance(model, SegmenterModel):
                out = model.forward(permuted).logits.data
                inv = np.empty_like(perm)
                inv[perm] = np.arange(perm.size)
                dev = float(np.max(np.abs(out[inv] - base)))
            else:
                dev = float(np.max(np.abs(model.forward(permuted).data - base)))
            worst = max(worst, dev)
    return worst
