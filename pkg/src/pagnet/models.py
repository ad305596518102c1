"""Classifier and segmenter assembly, forward passes, and training steps.

Both networks share the encoder: hierarchies of atrous convolutions with
subsampling pooling between them, plus a chained skip branch that carries
each hierarchy's features to the coarsest stage. Static geometry (farthest
point selections, pooling and interpolation graphs) depends only on point
positions, so it is precomputed once per cloud in a ``StaticPlan`` and
reused across epochs; feature-space convolution graphs are rebuilt every
forward pass by design.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import LinearParams, Tape, Tensor, backward
from .geometry import NeighborGraph, PointCloud, canonical_seed, farthest_point_sample
from .layers import (
    EpLayer,
    EuLayer,
    PacLayer,
    css_forward,
    ep_graph,
    ep_forward,
    eu_forward,
    global_max_pool,
    interpolation_graph,
    interpolate,
    pac_forward,
)
from .losses import deeply_supervised_loss, joint_loss, mmd_loss
from .netconfig import NetworkConfig


class TrainingDiverged(RuntimeError):
    """Raised when a training step produces a non-finite loss."""


# --- width bookkeeping -----------------------------------------------------

def encoder_widths(cfg: NetworkConfig) -> dict:
    """Channel widths through the encoder and its chained skip branch."""
    w = cfg.input_width
    pac_in, h_out, ep_out = [], [], []
    for hierarchy in cfg.encoder:
        per = []
        for c, _ in hierarchy:
            per.append((w, c))
            w = c
        pac_in.append(per)
        h_out.append(w)
        w = 2 * w if cfg.ep_mode == "both" else w
        ep_out.append(w)
    css_in, css_out = [], []
    if cfg.use_css:
        for i in range(len(cfg.encoder)):
            prev = h_out[0] if i == 0 else css_out[i - 1] + h_out[i]
            css_in.append(prev)
            css_out.append(ep_out[i])
    pool_in = cfg.proj_channels + (css_out[-1] if cfg.use_css else 0)
    return {
        "pac_in": pac_in,
        "h_out": h_out,
        "ep_out": ep_out,
        "enc_out": ep_out[-1],
        "css_in": css_in,
        "css_out": css_out,
        "pool_in": pool_in,
    }


def segmenter_widths(cfg: NetworkConfig) -> dict:
    """Channel widths through the decoder, its chained skip branch, and heads."""
    cfg = cfg.with_decoder()
    enc = encoder_widths(cfg)
    h = len(cfg.encoder)
    embed = cfg.global_fc_sizes[-1]
    entry = enc["enc_out"] + (embed if cfg.use_global_feature else 0)
    w = entry
    eu_out, dec_pac_in, dec_out = [], [], []
    for i, hierarchy in enumerate(cfg.decoder):
        w = enc["h_out"][h - 1 - i] + w  # skip (+) interpolated previous
        eu_out.append(w)
        per = []
        for c, _ in hierarchy:
            per.append((w, c))
            w = c
        dec_pac_in.append(per)
        dec_out.append(w)
    csu_in, csu_out = [], []
    if cfg.use_csu:
        for i in range(h):
            prev = entry if i == 0 else csu_out[i - 1] + dec_out[i - 1]
            csu_in.append(prev)
            csu_out.append(dec_out[i])
    final = dec_out[-1] + (csu_out[-1] if cfg.use_csu else 0)
    return {
        **enc,
        "embed": embed,
        "entry": entry,
        "eu_out": eu_out,
        "dec_pac_in": dec_pac_in,
        "dec_out": dec_out,
        "ds_in": dec_out[0],
        "csu_in": csu_in,
        "csu_out": csu_out,
        "final": final,
    }


def hierarchy_point_counts(cfg: NetworkConfig, n_points: int) -> list[int]:
    """Points alive at each level: [N, N//r, N//r^2, ...] through the encoder."""
    counts = [n_points]
    for _ in cfg.encoder:
        counts.append(counts[-1] // cfg.subsample_rate)
    return counts


# --- static per-cloud geometry ----------------------------------------------

@dataclass
class StaticPlan:
    """Position-derived geometry of one cloud: hierarchy levels, pooling
    centroids/graphs per stage, and interpolation graphs for the decoder."""

    levels: list[np.ndarray]
    global_ids: list[np.ndarray]
    centroids: list[np.ndarray] = field(default_factory=list)
    ep_graphs: list[NeighborGraph] = field(default_factory=list)
    eu: list[tuple[NeighborGraph, np.ndarray]] = field(default_factory=list)

    @staticmethod
    def fresh(positions: np.ndarray) -> "StaticPlan":
        return StaticPlan(
            levels=[positions],
            global_ids=[np.arange(positions.shape[0], dtype=np.int64)],
        )


def _extend_plan_pooling(plan: StaticPlan, stage: int, cfg: NetworkConfig,
                         selection_rows: np.ndarray) -> None:
    positions = plan.levels[stage]
    m = positions.shape[0] // cfg.subsample_rate
    if m < 1:
        raise ValueError(
            f"stage {stage}: subsample rate {cfg.subsample_rate} leaves no points "
            f"from {positions.shape[0]}"
        )
    seed = canonical_seed(selection_rows)
    cids = farthest_point_sample(selection_rows, m, seed_index=seed)
    plan.centroids.append(cids)
    plan.ep_graphs.append(ep_graph(positions, cids, cfg.k))
    plan.levels.append(positions[cids])
    plan.global_ids.append(plan.global_ids[stage][cids])


def build_static_plan(cfg: NetworkConfig, positions: np.ndarray,
                      with_decoder: bool = False) -> StaticPlan:
    """Precompute all metric-space geometry (static FPS only; dynamic FPS
    depends on features and must be recomputed per forward)."""
    if cfg.dynamic_fps:
        raise ValueError("dynamic FPS cannot be precomputed; pass plan=None")
    plan = StaticPlan.fresh(np.asarray(positions, dtype=np.float64))
    h = len(cfg.encoder)
    for i in range(h):
        _extend_plan_pooling(plan, i, cfg, plan.levels[i])
    if with_decoder:
        for i in range(h):
            plan.eu.append(
                interpolation_graph(plan.levels[h - i], plan.levels[h - 1 - i], cfg.interp_k)
            )
    return plan


# --- models ------------------------------------------------------------------

class _ModelBase:
    def __init__(self, cfg: NetworkConfig, seed: int = 0, dtype=np.float32):
        self.cfg = cfg
        self.dtype = np.dtype(dtype).type
        self.seed = int(seed)
        self.linears: dict[str, LinearParams] = {}
        self._rng = np.random.default_rng(seed)

    def _lin(self, name: str, c_in: int, c_out: int) -> LinearParams:
        if name in self.linears:
            raise ValueError(f"duplicate parameter group {name!r}")
        params = LinearParams.create(c_in, c_out, self._rng, dtype=self.dtype)
        self.linears[name] = params
        return params

    def named_parameters(self) -> dict[str, Tensor]:
        out = {}
        for name, lp in self.linears.items():
            out[f"{name}.w"] = lp.weight
            out[f"{name}.b"] = lp.bias
        return out

    def parameter_count(self) -> int:
        return sum(lp.size for lp in self.linears.values())

    def input_features(self, cloud: PointCloud) -> np.ndarray:
        if self.cfg.input_normals:
            if cloud.normals is None:
                raise ValueError("config expects normals but the cloud has none")
            return np.concatenate([cloud.positions, cloud.normals], axis=1)
        return cloud.positions

    def _build_encoder(self, with_css: bool = True):
        cfg = self.cfg
        widths = encoder_widths(cfg)
        self.enc_pacs: list[list[PacLayer]] = []
        for i, hierarchy in enumerate(cfg.encoder):
            stack = []
            for j, ((c_in, c_out), (_, rate)) in enumerate(
                zip(widths["pac_in"][i], cfg.effective_rates(hierarchy))
            ):
                params = self._lin(f"enc.h{i}.pac{j}", 2 * c_in, c_out)
                stack.append(PacLayer(params, k=cfg.k, rate=rate))
            self.enc_pacs.append(stack)
        self.ep_layer = EpLayer(k=cfg.k, subsample_rate=cfg.subsample_rate, mode=cfg.ep_mode)
        if with_css and cfg.use_css:
            for i, (c_in, c_out) in enumerate(zip(widths["css_in"], widths["css_out"])):
                self._lin(f"css.{i}", c_in, c_out)
        return widths

    def _encode(self, x: Tensor, plan: StaticPlan, trace: list | None = None,
                pac_bounds: tuple[float, float] | None = None):
        """Run the encoder, extending the plan in place where incomplete."""
        cfg = self.cfg
        h_outs = []
        for i, stack in enumerate(self.enc_pacs):
            positions = plan.levels[i]
            if trace is not None:
                trace.append((f"hierarchy_{i}", positions.shape[0]))
            for layer in stack:
                x = pac_forward(x, layer, positions=positions, bounds=pac_bounds)
            h_outs.append(x)
            if len(plan.centroids) <= i:
                rows = x.data.astype(np.float64) if cfg.dynamic_fps else positions
                _extend_plan_pooling(plan, i, cfg, rows)
            x, _ = ep_forward(
                x, positions, self.ep_layer,
                centroid_ids=plan.centroids[i], graph=plan.ep_graphs[i],
            )
        if trace is not None:
            trace.append(("encoder_out", plan.levels[-1].shape[0]))
        return x, h_outs

    def _chained_skip_down(self, h_outs: list[Tensor], plan: StaticPlan) -> Tensor:
        cfg = self.cfg
        s = h_outs[0]
        for i in range(len(self.enc_pacs)):
            if i > 0:
                s = ad.concat([s, h_outs[i]])
            s = css_forward(s, plan.levels[i], plan.centroids[i], cfg.k,
                            graph=plan.ep_graphs[i])
            s = ad.relu(ad.apply_linear(s, self.linears[f"css.{i}"]))
        return s


class ClassifierModel(_ModelBase):
    """Shape classifier: encoder -> projection (+) chained skips -> global
    max pool -> fully connected head."""

    def __init__(self, cfg: NetworkConfig, seed: int = 0, dtype=np.float32):
        super().__init__(cfg, seed=seed, dtype=dtype)
        widths = self._build_encoder()
        self._lin("proj", widths["enc_out"], cfg.proj_channels)
        w = widths["pool_in"]
        for i, c in enumerate(cfg.fc_sizes):
            self._lin(f"fc.{i}", w, c)
            w = c
        self._lin("fc.out", w, cfg.num_classes)

    def forward(self, cloud: PointCloud, plan: StaticPlan | None = None,
                trace: list | None = None,
                pac_bounds: tuple[float, float] | None = None) -> Tensor:
        if plan is None:
            plan = StaticPlan.fresh(cloud.positions.astype(np.float64))
        x = ad.constant(self.input_features(cloud), dtype=self.dtype)
        x, h_outs = self._encode(x, plan, trace=trace, pac_bounds=pac_bounds)
        main = ad.relu(ad.apply_linear(x, self.linears["proj"]))
        if self.cfg.use_css:
            merged = ad.concat([main, self._chained_skip_down(h_outs, plan)])
        else:
            merged = main
        y = global_max_pool(merged)
        for i in range(len(self.cfg.fc_sizes)):
            y = ad.relu(ad.apply_linear(y, self.linears[f"fc.{i}"]))
        return ad.apply_linear(y, self.linears["fc.out"])


@dataclass
class SegOutput:
    logits: Tensor                  # [N, num_classes]
    ds_logits: Tensor | None        # [M, num_classes] at the first decoder
    ds_ids: np.ndarray | None       # ids of those M points in the input cloud
    embedding: Tensor               # [1, G] global feature (MMD input)


class SegmenterModel(_ModelBase):
    """Per-point segmenter: shared encoder, global-feature regressor,
    mirrored decoder with interpolation unpooling, chained skip upsampling,
    and a deeply-supervised coarse head."""

    def __init__(self, cfg: NetworkConfig, seed: int = 0, dtype=np.float32):
        cfg = cfg.with_decoder()
        super().__init__(cfg, seed=seed, dtype=dtype)
        # the down-chain (use_css) is a classifier branch; segmenters use the
        # up-chain (use_csu) instead
        widths = self._build_encoder(with_css=False)
        self.widths = segmenter_widths(cfg)
        w = widths["enc_out"]
        for i, c in enumerate(cfg.global_fc_sizes):
            self._lin(f"gfc.{i}", w, c)
            w = c
        self.dec_pacs: list[list[PacLayer]] = []
        for i, hierarchy in enumerate(self.cfg.decoder):
            stack = []
            for j, ((c_in, c_out), (_, rate)) in enumerate(
                zip(self.widths["dec_pac_in"][i], self.cfg.effective_rates(hierarchy))
            ):
                params = self._lin(f"dec.h{i}.pac{j}", 2 * c_in, c_out)
                stack.append(PacLayer(params, k=self.cfg.k, rate=rate))
            self.dec_pacs.append(stack)
        if self.cfg.use_aux_losses:
            self._lin("ds", self.widths["ds_in"], self.cfg.num_classes)
        if self.cfg.use_csu:
            for i, (c_in, c_out) in enumerate(zip(self.widths["csu_in"], self.widths["csu_out"])):
                self._lin(f"csu.{i}", c_in, c_out)
        self._lin("head.hidden", self.widths["final"], self.cfg.seg_head_hidden)
        self._lin("head.out", self.cfg.seg_head_hidden, self.cfg.num_classes)

    def forward(self, cloud: PointCloud, plan: StaticPlan | None = None,
                trace: list | None = None,
                pac_bounds: tuple[float, float] | None = None) -> SegOutput:
        cfg = self.cfg
        if plan is None:
            plan = StaticPlan.fresh(cloud.positions.astype(np.float64))
        x = ad.constant(self.input_features(cloud), dtype=self.dtype)
        x, h_outs = self._encode(x, plan, trace=trace, pac_bounds=pac_bounds)
        h = len(self.enc_pacs)

        e = global_max_pool(x)
        for i in range(len(cfg.global_fc_sizes) - 1):
            e = ad.relu(ad.apply_linear(e, self.linears[f"gfc.{i}"]))
        # final layer linear: the embedding must be able to match an N(0,1) prior
        embedding = ad.apply_linear(e, self.linears[f"gfc.{len(cfg.global_fc_sizes) - 1}"])

        if cfg.use_global_feature:
            entry = ad.concat([x, ad.broadcast_rows(embedding, x.shape[0])])
        else:
            entry = x

        while len(plan.eu) < h:
            i = len(plan.eu)
            plan.eu.append(
                interpolation_graph(plan.levels[h - i], plan.levels[h - 1 - i], cfg.interp_k)
            )

        x = entry
        dec_outs = []
        for i, stack in enumerate(self.dec_pacs):
            graph, weights = plan.eu[i]
            target_pos = plan.levels[h - 1 - i]
            x = eu_forward(x, plan.levels[h - i], target_pos, h_outs[h - 1 - i],
                           EuLayer(k_interp=cfg.interp_k), graph=graph, weights=weights)
            if trace is not None:
                trace.append((f"decoder_{i}", target_pos.shape[0]))
            for layer in stack:
                x = pac_forward(x, layer, positions=target_pos, bounds=pac_bounds)
            dec_outs.append(x)

        if cfg.use_aux_losses:
            ds_logits = ad.apply_linear(dec_outs[0], self.linears["ds"])
            ds_ids = plan.global_ids[h - 1]
        else:
            ds_logits, ds_ids = None, None

        if cfg.use_csu:
            s = entry
            for i in range(h):
                if i > 0:
                    s = ad.concat([s, dec_outs[i - 1]])
                graph, weights = plan.eu[i]
                s = interpolate(s, graph, weights)
                s = ad.relu(ad.apply_linear(s, self.linears[f"csu.{i}"]))
            final = ad.concat([dec_outs[-1], s])
        else:
            final = dec_outs[-1]

        y = ad.relu(ad.apply_linear(final, self.linears["head.hidden"]))
        logits = ad.apply_linear(y, self.linears["head.out"])
        return SegOutput(logits=logits, ds_logits=ds_logits, ds_ids=ds_ids,
                         embedding=embedding)


def build_classifier(cfg: NetworkConfig, seed: int = 0, dtype=np.float32) -> ClassifierModel:
    return ClassifierModel(cfg, seed=seed, dtype=dtype)


def build_segmenter(cfg: NetworkConfig, seed: int = 0, dtype=np.float32) -> SegmenterModel:
    return SegmenterModel(cfg, seed=seed, dtype=dtype)


def classify_forward(model: ClassifierModel, cloud: PointCloud,
                     plan: StaticPlan | None = None) -> Tensor:
    return model.forward(cloud, plan=plan)


def segment_forward(model: SegmenterModel, cloud: PointCloud,
                    plan: StaticPlan | None = None) -> SegOutput:
    return model.forward(cloud, plan=plan)


# --- optimizers ----------------------------------------------------------------

@dataclass
class Adam:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def update(self, params: dict[str, Tensor], t: int) -> None:
        for name, p in params.items():
            g = p.grad
            m = self.m.setdefault(name, np.zeros_like(p.data))
            v = self.v.setdefault(name, np.zeros_like(p.data))
            m += (1.0 - self.beta1) * (g - m)
            v += (1.0 - self.beta2) * (g * g - v)
            m_hat = m / (1.0 - self.beta1 ** t)
            v_hat = v / (1.0 - self.beta2 ** t)
            p.data -= (self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(p.data.dtype)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for name, arr in self.m.items():
            out[f"opt.m.{name}"] = arr
        for name, arr in self.v.items():
            out[f"opt.v.{name}"] = arr
        return out


@dataclass
class Sgd:
    lr: float = 1e-3
    momentum: float = 0.9
    v: dict = field(default_factory=dict)

    def update(self, params: dict[str, Tensor], t: int) -> None:
        for name, p in params.items():
            v = self.v.setdefault(name, np.zeros_like(p.data))
            v *= self.momentum
            v += p.grad
            p.data -= (self.lr * v).astype(p.data.dtype)

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {f"opt.v.{name}": arr for name, arr in self.v.items()}


def make_optimizer(kind: str, lr: float = 1e-3, momentum: float = 0.9):
    if kind == "adam":
        return Adam(lr=lr)
    if kind == "sgd":
        return Sgd(lr=lr, momentum=momentum)
    raise ValueError(f"unknown optimizer {kind!r} (want adam or sgd)")


# --- training ------------------------------------------------------------------

@dataclass
class PreparedCloud:
    """A cloud with its precomputed static geometry."""

    cloud: PointCloud
    plan: StaticPlan | None

    def plan_copy(self) -> StaticPlan | None:
        return self.plan


def prepare_cloud(model: _ModelBase, cloud: PointCloud) -> PreparedCloud:
    if model.cfg.dynamic_fps:
        return PreparedCloud(cloud=cloud, plan=None)
    plan = build_static_plan(
        model.cfg, cloud.positions,
        with_decoder=isinstance(model, SegmenterModel),
    )
    return PreparedCloud(cloud=cloud, plan=plan)


@dataclass
class TrainState:
    model: _ModelBase
    opt: Adam | Sgd
    step: int = 0
    seed: int = 0


@dataclass
class LossRecord:
    master: float
    mmd: float
    ds: float
    total: float
    accuracy: float = 0.0   # batch accuracy: per cloud (classification) or per point
    count: int = 0          # clouds (classification) or points (segmentation)


def step_rng(seed: int, step: int) -> np.random.Generator:
    """Deterministic per-step stream: a pure function of (seed, step), so a
    reloaded checkpoint continues with identical draws."""
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(int(step),)))


def _as_prepared(model: _ModelBase, item) -> PreparedCloud:
    if isinstance(item, PreparedCloud):
        return item
    return prepare_cloud(model, item)


def train_step(state: TrainState, batch) -> tuple[TrainState, LossRecord]:
    """One optimizer step over a batch.

    Classification batches are sequences of (cloud, label); segmentation
    batches are sequences of labeled clouds. Raises TrainingDiverged on a
    non-finite loss.
    """
    model = state.model
    cfg = model.cfg
    if not batch:
        raise ValueError("empty batch")
    for p in model.named_parameters().values():
        p.zero_grad()
    rng = step_rng(state.seed, state.step)
    zero = ad.constant(np.zeros((), dtype=model.dtype))
    try:
        with Tape() as tape:
            if isinstance(model, ClassifierModel):
                preps, labels = [], []
                for cloud, label in batch:
                    preps.append(_as_prepared(model, cloud))
                    labels.append(int(label))
                labels = np.asarray(labels, dtype=np.int64)
                logits = ad.stack_rows([model.forward(p.cloud, plan=p.plan_copy())
                                        for p in preps])
                master = ad.softmax_cross_entropy(logits, labels)
                l_mmd, l_ds = zero, zero
                total = master
                hits = int(np.sum(np.argmax(logits.data, axis=1) == labels))
                count = len(labels)
            else:
                outs, label_arrays, ds_pairs = [], [], []
                for item in batch:
                    prep = _as_prepared(model, item)
                    if prep.cloud.labels is None:
                        raise ValueError("segmentation batches need per-point labels")
                    out = model.forward(prep.cloud, plan=prep.plan_copy())
                    outs.append(out)
                    label_arrays.append(prep.cloud.labels)
                    ds_pairs.append((out.ds_logits, prep.cloud.labels[out.ds_ids]))
                all_labels = np.concatenate(label_arrays)
                point_logits = ad.stack_rows([o.logits for o in outs])
                master = ad.softmax_cross_entropy(point_logits, all_labels)
                hits = int(np.sum(np.argmax(point_logits.data, axis=1) == all_labels))
                count = all_labels.size
                if cfg.use_aux_losses:
                    embeddings = ad.stack_rows([o.embedding for o in outs])
                    prior = rng.standard_normal(embeddings.shape).astype(model.dtype)
                    l_mmd = mmd_loss(embeddings, cfg.mmd, rng, prior=prior)
                    l_ds = ad.softmax_cross_entropy(
                        ad.stack_rows([logits for logits, _ in ds_pairs]),
                        np.concatenate([lbl for _, lbl in ds_pairs]),
                    )
                    total = joint_loss(master, l_mmd, l_ds, cfg.loss_weights)
                else:
                    l_mmd, l_ds = zero, zero
                    total = master
        backward(tape, total)
    except ad.NonFiniteValues as e:
        raise TrainingDiverged(
            f"non-finite loss at step {state.step} (seed {state.seed}): {e}"
        ) from e
    state.opt.update(model.named_parameters(), state.step + 1)
    state.step += 1
    record = LossRecord(master=master.item(), mmd=l_mmd.item(),
                        ds=l_ds.item(), total=total.item(),
                        accuracy=hits / count, count=count)
    return state, record
