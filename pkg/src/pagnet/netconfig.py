"""Network architecture configuration.

Encoder/decoder stacks are written in the bracket form used throughout the
docs: ``Encoder([64, 1], [64, 2]; [128, 1], [128, 2]; [256, 1], [256, 2])``
— semicolons separate hierarchies, each ``[channels, rate]`` pair is one
atrous convolution layer.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace

from .losses import LossWeights, MmdConfig

CANONICAL_ENCODER = "Encoder([64, 1], [64, 2]; [128, 1], [128, 2]; [256, 1], [256, 2])"
CANONICAL_DECODER = "Decoder([256, 2], [256, 1]; [128, 2], [128, 1]; [64, 2], [64, 1])"

_PAIR_RE = re.compile(r"\[\s*(\d+)\s*,\s*(\d+)\s*\]")


def parse_layer_spec(text: str) -> list[list[tuple[int, int]]]:
    """Parse a bracket string into hierarchies of (channels, rate) pairs.

    Accepts the bare pair list or the ``Encoder(...)``/``Decoder(...)``
    wrapped form.
    """
    body = text.strip()
    m = re.fullmatch(r"(?:Encoder|Decoder)\s*\((.*)\)", body, flags=re.DOTALL)
    if m:
        body = m.group(1)
    if not body.strip():
        raise ValueError("empty layer specification")
    hierarchies = []
    for part in body.split(";"):
        pairs = _PAIR_RE.findall(part)
        skeleton = re.sub(r"\s+", "", _PAIR_RE.sub("@", part))
        if not pairs or not re.fullmatch(r"@(,@)*", skeleton):
            raise ValueError(f"cannot parse layer group {part.strip()!r}")
        hierarchy = []
        for c, r in pairs:
            c, r = int(c), int(r)
            if c < 1 or r < 1:
                raise ValueError(f"channels and rate must be >= 1, got [{c}, {r}]")
            hierarchy.append((c, r))
        hierarchies.append(hierarchy)
    return hierarchies


def format_layer_spec(hierarchies: list[list[tuple[int, int]]], kind: str) -> str:
    if kind not in ("Encoder", "Decoder"):
        raise ValueError(f"kind must be Encoder or Decoder, got {kind!r}")
    body = "; ".join(
        ", ".join(f"[{c}, {r}]" for c, r in hierarchy) for hierarchy in hierarchies
    )
    return f"{kind}({body})"


@dataclass
class NetworkConfig:
    """Everything needed to build a classifier or segmenter deterministically."""

    encoder: list[list[tuple[int, int]]]
    decoder: list[list[tuple[int, int]]] | None = None
    num_classes: int = 2
    k: int = 10
    subsample_rate: int = 4
    proj_channels: int = 1024          # width of the pre-pool projection
    fc_sizes: tuple[int, ...] = (512, 256)
    global_fc_sizes: tuple[int, ...] = (512, 1024)
    seg_head_hidden: int = 128
    k_interp: int | None = None        # None -> use k
    ep_mode: str = "both"
    use_pac: bool = True               # False forces every atrous rate to 1
    use_css: bool = True
    use_csu: bool = True
    use_global_feature: bool = True
    use_aux_losses: bool = False
    dynamic_fps: bool = False
    input_normals: bool = False
    loss_weights: LossWeights = field(default_factory=LossWeights)
    mmd: MmdConfig = field(default_factory=MmdConfig)

    def __post_init__(self):
        if isinstance(self.encoder, str):
            self.encoder = parse_layer_spec(self.encoder)
        if isinstance(self.decoder, str):
            self.decoder = parse_layer_spec(self.decoder)
        if not self.encoder or any(not h for h in self.encoder):
            raise ValueError("encoder needs at least one hierarchy of layers")
        if self.decoder is not None and len(self.decoder) != len(self.encoder):
            raise ValueError(
                f"decoder has {len(self.decoder)} hierarchies, encoder {len(self.encoder)}"
            )
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.subsample_rate < 2:
            raise ValueError(f"subsample_rate must be >= 2, got {self.subsample_rate}")
        if self.ep_mode not in ("both", "centroid", "neighbors"):
            raise ValueError(f"ep_mode must be both|centroid|neighbors, got {self.ep_mode!r}")
        if self.k_interp is not None and self.k_interp < 1:
            raise ValueError("k_interp must be >= 1")
        if any(w < 1 for w in self.fc_sizes):
            raise ValueError(f"fc_sizes must be positive, got {self.fc_sizes}")
        if not self.global_fc_sizes or any(w < 1 for w in self.global_fc_sizes):
            raise ValueError(
                f"global_fc_sizes needs at least one positive width, got {self.global_fc_sizes}"
            )

    @property
    def interp_k(self) -> int:
        return self.k if self.k_interp is None else self.k_interp

    @property
    def input_width(self) -> int:
        return 6 if self.input_normals else 3

    def encoder_string(self) -> str:
        return format_layer_spec(self.encoder, "Encoder")

    def decoder_string(self) -> str | None:
        if self.decoder is None:
            return None
        return format_layer_spec(self.decoder, "Decoder")

    def effective_rates(self, hierarchy: list[tuple[int, int]]) -> list[tuple[int, int]]:
        """Apply the use_pac ablation: without PAC every rate collapses to 1."""
        if self.use_pac:
            return list(hierarchy)
        return [(c, 1) for c, _ in hierarchy]

    def mirrored_decoder(self) -> list[list[tuple[int, int]]]:
        """Default decoder: encoder hierarchies reversed, layers reversed
        within each hierarchy."""
        return [list(reversed(h)) for h in reversed(self.encoder)]

    def with_decoder(self) -> "NetworkConfig":
        if self.decoder is not None:
            return self
        return replace(self, decoder=self.mirrored_decoder())


def canonical_classification(num_classes: int, **overrides) -> NetworkConfig:
    return NetworkConfig(encoder=CANONICAL_ENCODER, num_classes=num_classes, **overrides)


def canonical_segmentation(num_parts: int, **overrides) -> NetworkConfig:
    overrides.setdefault("use_aux_losses", True)
    return NetworkConfig(
        encoder=CANONICAL_ENCODER,
        decoder=CANONICAL_DECODER,
        num_classes=num_parts,
        **overrides,
    )
