"""Flat ``key = value`` run configuration files.

One file drives a whole run: network shape, loss weights, optimizer, and
dataset settings. ``RunConfig.to_text`` writes keys in a fixed order so two
configs with equal values serialize byte-identically (checkpoints embed this
text).
"""

from __future__ import annotations

from dataclasses import dataclass, fields

from .losses import LossWeights, MmdConfig
from .netconfig import CANONICAL_ENCODER, NetworkConfig


def _parse_bool(text: str) -> bool:
    if text == "true":
        return True
    if text == "false":
        return False
    raise ValueError(f"expected true or false, got {text!r}")


def _parse_ints(text: str) -> tuple[int, ...]:
    parts = [p.strip() for p in text.split(",")]
    if not all(parts):
        raise ValueError(f"expected comma-separated integers, got {text!r}")
    return tuple(int(p) for p in parts)


@dataclass
class RunConfig:
    # task and network
    task: str = "classification"          # classification | segmentation
    encoder: str = CANONICAL_ENCODER
    decoder: str = ""                     # empty = mirror the encoder
    num_classes: int = 4
    k: int = 10
    k_interp: int = 0                     # 0 = same as k
    subsample_rate: int = 4
    proj_channels: int = 1024
    fc_sizes: tuple[int, ...] = (512, 256)
    global_fc_sizes: tuple[int, ...] = (512, 1024)
    seg_head_hidden: int = 128
    ep_mode: str = "both"
    use_pac: bool = True
    use_css: bool = True
    use_csu: bool = True
    use_global_feature: bool = True
    use_aux_losses: bool = False
    dynamic_fps: bool = False
    input_normals: bool = False
    w_mmd: float = 0.1
    w_ds: float = 0.4
    mmd_bandwidth: float = 1.0
    # optimization
    optimizer: str = "adam"               # adam | sgd
    lr: float = 1e-3
    momentum: float = 0.9
    epochs: int = 60
    batch_size: int = 16
    seed: int = 0
    target_accuracy: float = 0.0          # > 0 stops once train accuracy reaches it
    # data
    dataset: str = "synthetic-classification"
    manifest: str = ""                    # cloud list for dataset = manifest
    n_train: int = 400
    n_eval: int = 100
    n_points: int = 256
    noise_std: float = 0.0

    def __post_init__(self):
        if self.task not in ("classification", "segmentation"):
            raise ValueError(f"task must be classification or segmentation, got {self.task!r}")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"optimizer must be adam or sgd, got {self.optimizer!r}")
        if self.dataset not in ("synthetic-classification", "synthetic-segmentation", "manifest"):
            raise ValueError(f"unknown dataset {self.dataset!r}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if not 0.0 <= self.target_accuracy <= 1.0:
            raise ValueError("target_accuracy must be in [0, 1]")

    def network(self) -> NetworkConfig:
        return NetworkConfig(
            encoder=self.encoder,
            decoder=self.decoder or None,
            num_classes=self.num_classes,
            k=self.k,
            k_interp=self.k_interp or None,
            subsample_rate=self.subsample_rate,
            proj_channels=self.proj_channels,
            fc_sizes=tuple(self.fc_sizes),
            global_fc_sizes=tuple(self.global_fc_sizes),
            seg_head_hidden=self.seg_head_hidden,
            ep_mode=self.ep_mode,
            use_pac=self.use_pac,
            use_css=self.use_css,
            use_csu=self.use_csu,
            use_global_feature=self.use_global_feature,
            use_aux_losses=self.use_aux_losses,
            dynamic_fps=self.dynamic_fps,
            input_normals=self.input_normals,
            loss_weights=LossWeights(w_mmd=self.w_mmd, w_ds=self.w_ds),
            mmd=MmdConfig(bandwidth=self.mmd_bandwidth),
        )

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, bool):
                text = "true" if value else "false"
            elif isinstance(value, tuple):
                text = ", ".join(str(v) for v in value)
            elif isinstance(value, float):
                text = repr(value)
            else:
                text = str(value)
            lines.append(f"{f.name} = {text}")
        return "\n".join(lines) + "\n"


_CONVERTERS = {
    bool: _parse_bool,
    int: int,
    float: float,
    str: lambda s: s,
}


def _field_converters() -> dict:
    out = {}
    for f in fields(RunConfig):
        if f.type in ("tuple[int, ...]",):
            out[f.name] = _parse_ints
        elif f.type == "bool":
            out[f.name] = _parse_bool
        elif f.type == "int":
            out[f.name] = int
        elif f.type == "float":
            out[f.name] = float
        else:
            out[f.name] = lambda s: s
    return out


_FIELD_CONVERTERS = _field_converters()


def parse_run_config(text: str) -> RunConfig:
    """Parse ``key = value`` lines; ``#`` lines and blank lines are skipped.

    Unknown keys, duplicates, and malformed lines raise ValueError with the
    offending line number.
    """
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in _FIELD_CONVERTERS:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ValueError(f"line {lineno}: duplicate key {key!r}")
        try:
            values[key] = _FIELD_CONVERTERS[key](value)
        except ValueError as e:
            raise ValueError(f"line {lineno}: bad value for {key!r}: {e}") from e
    return RunConfig(**values)


def load_run_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_run_config(fh.read())
