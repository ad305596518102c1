"""Checkpoint format: bitwise round trips, resume equivalence, corruption."""

import numpy as np
import pytest

from pagnet.checkpoint import CheckpointError, load_checkpoint, save_checkpoint, state_arrays
from pagnet.geometry import PointCloud
from pagnet.models import TrainState, build_classifier, make_optimizer, prepare_cloud, train_step
from pagnet.runconfig import RunConfig


def _run_cfg():
    return RunConfig(
        task="classification",
        encoder="[5, 1], [5, 2]; [7, 1]",
        num_classes=3,
        k=3,
        subsample_rate=2,
        proj_channels=8,
        fc_sizes=(6, 5),
        lr=1e-2,
        seed=9,
    )


def _fresh_state(run_cfg):
    model = build_classifier(run_cfg.network(), seed=run_cfg.seed)
    opt = make_optimizer(run_cfg.optimizer, lr=run_cfg.lr, momentum=run_cfg.momentum)
    return TrainState(model=model, opt=opt, step=0, seed=run_cfg.seed)


def _batch(model, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(4):
        cloud = PointCloud(rng.standard_normal((12, 3)).astype(np.float32))
        out.append((prepare_cloud(model, cloud), i % 3))
    return out


def test_round_trip_is_bitwise(tmp_path):
    run_cfg = _run_cfg()
    state = _fresh_state(run_cfg)
    batch = _batch(state.model)
    for _ in range(3):
        state, _ = train_step(state, batch)

    path = tmp_path / "model.ckpt"
    save_checkpoint(path, state, run_cfg)
    first = path.read_bytes()

    loaded, loaded_cfg = load_checkpoint(path)
    assert loaded_cfg == run_cfg
    assert loaded.step == 3 and loaded.seed == 9
    for name, arr in state_arrays(state).items():
        assert np.array_equal(state_arrays(loaded)[name], arr), name

    again = tmp_path / "again.ckpt"
    save_checkpoint(again, loaded, loaded_cfg)
    assert again.read_bytes() == first


def test_resume_training_matches_uninterrupted(tmp_path):
    run_cfg = _run_cfg()

    straight = _fresh_state(run_cfg)
    batch = _batch(straight.model)
    for _ in range(5):
        straight, _ = train_step(straight, batch)

    broken = _fresh_state(run_cfg)
    batch_b = _batch(broken.model)
    for _ in range(2):
        broken, _ = train_step(broken, batch_b)
    path = tmp_path / "mid.ckpt"
    save_checkpoint(path, broken, run_cfg)
    resumed, _ = load_checkpoint(path)
    batch_r = _batch(resumed.model)
    for _ in range(3):
        resumed, _ = train_step(resumed, batch_r)

    for name, arr in state_arrays(straight).items():
        assert np.array_equal(state_arrays(resumed)[name], arr), name


def test_loaded_model_predicts_identically(tmp_path):
    run_cfg = _run_cfg()
    state = _fresh_state(run_cfg)
    state, _ = train_step(state, _batch(state.model))
    cloud = PointCloud(np.random.default_rng(3).standard_normal((12, 3)).astype(np.float32))
    want = state.model.forward(cloud).data

    path = tmp_path / "m.ckpt"
    save_checkpoint(path, state, run_cfg)
    loaded, _ = load_checkpoint(path)
    assert np.array_equal(loaded.model.forward(cloud).data, want)


def test_optimizer_state_is_persisted(tmp_path):
    run_cfg = _run_cfg()
    state = _fresh_state(run_cfg)
    state, _ = train_step(state, _batch(state.model))
    arrays = state_arrays(state)
    m_names = [n for n in arrays if n.startswith("opt.m.")]
    v_names = [n for n in arrays if n.startswith("opt.v.")]
    assert len(m_names) == len(v_names) == len(state.model.named_parameters())
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, state, run_cfg)
    loaded, _ = load_checkpoint(path)
    for name in m_names:
        assert np.array_equal(state_arrays(loaded)[name], arrays[name])


def test_rejects_bad_magic_and_truncation(tmp_path):
    run_cfg = _run_cfg()
    state = _fresh_state(run_cfg)
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, state, run_cfg)
    blob = path.read_bytes()

    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"NOTACKPT" + blob[8:])
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(bad)

    cut = tmp_path / "cut.ckpt"
    cut.write_bytes(blob[: len(blob) // 2])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(cut)

    padded = tmp_path / "padded.ckpt"
    padded.write_bytes(blob + b"\x00\x00")
    with pytest.raises(CheckpointError, match="trailing"):
        load_checkpoint(padded)
