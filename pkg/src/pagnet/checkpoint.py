"""Binary checkpoints: model parameters, optimizer state, and the run config.

Layout (all integers little-endian, arrays float32 little-endian, C order):

    magic     8 bytes   b"PAGCKPT1"
    u32       length of the embedded run-config text
    bytes     run-config text, UTF-8
    u64       training step
    u64       training seed
    u32       number of arrays
    per array:
        u16   name length
        bytes name, UTF-8
        u32   ndim
        u32 x ndim  dims
        f32 x prod(dims)  data

Saving the same state twice produces byte-identical files, and a load/save
round trip is exact: parameters are stored and restored bit for bit.
"""

from __future__ import annotations

import struct

import numpy as np

from .models import (
    ClassifierModel,
    SegmenterModel,
    TrainState,
    build_classifier,
    build_segmenter,
    make_optimizer,
)
from .runconfig import RunConfig, parse_run_config

MAGIC = b"PAGCKPT1"


class CheckpointError(ValueError):
    """Raised for files that are not valid checkpoints."""


def _pack_array(name: str, arr: np.ndarray) -> bytes:
    data = np.ascontiguousarray(arr, dtype="<f4")
    name_bytes = name.encode("utf-8")
    head = struct.pack("<H", len(name_bytes)) + name_bytes
    head += struct.pack("<I", data.ndim) + struct.pack(f"<{data.ndim}I", *data.shape)
    return head + data.tobytes()


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointError("truncated checkpoint")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def state_arrays(state: TrainState) -> dict[str, np.ndarray]:
    """All persisted arrays: parameters first, optimizer moments after."""
    out = {name: t.data for name, t in state.model.named_parameters().items()}
    out.update(state.opt.state_arrays())
    return out


def save_checkpoint(path, state: TrainState, run_cfg: RunConfig) -> None:
    config_text = run_cfg.to_text().encode("utf-8")
    arrays = state_arrays(state)
    parts = [
        MAGIC,
        struct.pack("<I", len(config_text)),
        config_text,
        struct.pack("<Q", state.step),
        struct.pack("<Q", state.seed),
        struct.pack("<I", len(arrays)),
    ]
    for name, arr in arrays.items():
        parts.append(_pack_array(name, arr))
    blob = b"".join(parts)
    with open(path, "wb") as fh:
        fh.write(blob)


def load_checkpoint(path) -> tuple[TrainState, RunConfig]:
    """Rebuild the model and optimizer exactly as saved."""
    with open(path, "rb") as fh:
        blob = fh.read()
    r = _Reader(blob)
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint")
    (cfg_len,) = r.unpack("<I")
    config_text = r.take(cfg_len).decode("utf-8")
    (step,) = r.unpack("<Q")
    (seed,) = r.unpack("<Q")
    (n_arrays,) = r.unpack("<I")
    arrays: dict[str, np.ndarray] = {}
    for _ in range(n_arrays):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        (ndim,) = r.unpack("<I")
        dims = r.unpack(f"<{ndim}I")
        count = int(np.prod(dims)) if dims else 1
        data = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(dims).copy()
        if name in arrays:
            raise CheckpointError(f"duplicate array {name!r}")
        arrays[name] = data
    if r.pos != len(blob):
        raise CheckpointError(f"{len(blob) - r.pos} trailing bytes after arrays")

    run_cfg = parse_run_config(config_text)
    net = run_cfg.network()
    if run_cfg.task == "classification":
        model: ClassifierModel | SegmenterModel = build_classifier(net, seed=run_cfg.seed)
    else:
        model = build_segmenter(net, seed=run_cfg.seed)
    opt = make_optimizer(run_cfg.optimizer, lr=run_cfg.lr, momentum=run_cfg.momentum)

    params = model.named_parameters()
    for name, tensor in params.items():
        if name not in arrays:
            raise CheckpointError(f"checkpoint is missing parameter {name!r}")
        stored = arrays.pop(name)
        if stored.shape != tensor.data.shape:
            raise CheckpointError(
                f"parameter {name!r} has shape {stored.shape}, model wants {tensor.data.shape}"
            )
        tensor.data[...] = stored
    for name, arr in arrays.items():
        if name.startswith("opt.m.") and hasattr(opt, "m"):
            opt.m[name[len("opt.m."):]] = arr
        elif name.startswith("opt.v."):
            opt.v[name[len("opt.v."):]] = arr
        else:
            raise CheckpointError(f"unexpected array {name!r} in checkpoint")
    for moment in getattr(opt, "m", {}), opt.v:
        for name, arr in moment.items():
            if name not in params or arr.shape != params[name].data.shape:
                raise CheckpointError(f"optimizer state {name!r} does not match the model")

    state = TrainState(model=model, opt=opt, step=int(step), seed=int(seed))
    return state, run_cfg
