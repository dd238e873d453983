import csv
import math
import os

import numpy as np
import pytest

import specmotion as sm
from specmotion.training import (
    OptimizerState,
    TrainConfig,
    adam_update,
    init_optimizer,
    save_history,
    train_loop,
    train_step,
)


def test_adam_first_step_is_signed_lr():
    params = {"w": np.array([1.0, -2.0, 0.5])}
    grads = {"w": np.array([0.3, -0.7, 2.0])}
    opt = init_optimizer(params)
    new, opt = adam_update(params, grads, opt, lr=1e-3)
    # bias correction makes the very first update -lr * g / (|g| + eps)
    want = params["w"] - 1e-3 * np.sign(grads["w"])
    assert np.abs(new["w"] - want).max() < 1e-6
    assert opt.step == 1
    # functional: originals untouched
    assert params["w"][0] == 1.0


def test_adam_matches_scalar_reference_loop():
    b1, b2, eps = 0.9, 0.999, 1e-8
    lr = 0.01
    w = 0.7
    m = v = 0.0
    rng = np.random.default_rng(0)
    gs = rng.standard_normal(12)

    params = {"w": np.array([0.7])}
    opt = init_optimizer(params)
    for i, g in enumerate(gs, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1 ** i)
        vhat = v / (1 - b2 ** i)
        w = w - lr * mhat / (math.sqrt(vhat) + eps)
        params, opt = adam_update(params, {"w": np.array([g])}, opt, lr)
        assert abs(params["w"][0] - w) < 1e-12


def test_adam_validates_keys_and_shapes():
    params = {"w": np.zeros(3)}
    opt = init_optimizer(params)
    with pytest.raises(ValueError):
        adam_update(params, {"v": np.zeros(3)}, opt, 1e-3)
    with pytest.raises(ValueError):
        adam_update(params, {"w": np.zeros(4)}, opt, 1e-3)


def test_lr_schedule_decays_after_milestone_epoch():
    # milestone at epoch 1 means epoch 2 already runs at gamma * base
    cfg = TrainConfig(epochs=10, lr_milestones=(1,), learning_rate=3e-4,
                      lr_decay_gamma=0.9)
    assert cfg.lr_at_epoch(1) == pytest.approx(3e-4)
    assert cfg.lr_at_epoch(2) == pytest.approx(2.7e-4)

    cfg = TrainConfig(epochs=10, lr_milestones=(2, 5), learning_rate=3e-4,
                      lr_decay_gamma=0.9)
    assert cfg.lr_at_epoch(2) == pytest.approx(3e-4)
    assert cfg.lr_at_epoch(3) == pytest.approx(2.7e-4)
    assert cfg.lr_at_epoch(5) == pytest.approx(2.7e-4)
    assert cfg.lr_at_epoch(6) == pytest.approx(2.43e-4)
    assert cfg.lr_at_epoch(10) == pytest.approx(2.43e-4)


def test_lr_schedule_default_milestones():
    cfg = TrainConfig(epochs=500)
    assert cfg.milestones() == (375, 440, 475)
    assert cfg.lr_at_epoch(375) == pytest.approx(3e-4)
    assert cfg.lr_at_epoch(376) == pytest.approx(3e-4 * 0.9)
    assert cfg.lr_at_epoch(500) == pytest.approx(3e-4 * 0.9 ** 3)
    tiny = TrainConfig(epochs=2)
    assert tiny.milestones() == (1,)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(epochs=10, lr_milestones=(5, 5))
    with pytest.raises(ValueError):
        TrainConfig(epochs=10, lr_milestones=(0, 5))
    with pytest.raises(ValueError):
        TrainConfig(epochs=10, lr_milestones=(5, 12))


def small_setup():
    net_cfg = sm.NetworkConfig(spectrum_rows=5, coord_dim=6, latent_dim=8,
                               num_heads=2, num_blocks=1, dropout_rate=0.0)
    cfg = TrainConfig(epochs=3, batch_size=4, diffusion_steps=20, seed=5)
    rng = np.random.default_rng(0)
    windows = [rng.standard_normal((15, 6)) for _ in range(10)]
    return net_cfg, cfg, windows


def test_train_step_is_functional_and_finite():
    net_cfg, cfg, windows = small_setup()
    schedule = sm.build_schedule(cfg.schedule_kind, cfg.diffusion_steps)
    basis = sm.build_dct_basis(15, net_cfg.spectrum_rows)
    params = sm.init_params(net_cfg, np.random.default_rng(1))
    before = {k: v.copy() for k, v in params.items()}
    opt = init_optimizer(params)
    batch = np.stack(windows[:4])
    new_params, new_opt, loss = train_step(params, opt, batch, cfg, net_cfg, 5,
                                           schedule, basis,
                                           np.random.default_rng(2))
    assert math.isfinite(loss) and loss > 0
    assert new_opt.step == 1
    for k in params:
        assert np.array_equal(params[k], before[k]), k
    assert any(not np.array_equal(new_params[k], params[k]) for k in params)


def test_train_loop_step_count_and_history():
    net_cfg, cfg, windows = small_setup()
    params, history = train_loop(cfg, windows, net_cfg, 5)
    # 10 windows, batch 4, partial batch kept: 3 batches/epoch * 3 epochs
    assert len(history) == 9
    steps = [row[0] for row in history]
    assert steps == list(range(1, 10))
    assert [row[1] for row in history] == [1, 1, 1, 2, 2, 2, 3, 3, 3]
    for row in history:
        assert row[2] == pytest.approx(cfg.lr_at_epoch(row[1]))
        assert math.isfinite(row[3])

    no_partial = TrainConfig(epochs=3, batch_size=4, diffusion_steps=20,
                             seed=5, keep_partial_batch=False)
    _, history2 = train_loop(no_partial, windows, net_cfg, 5)
    assert len(history2) == 6


def test_train_loop_deterministic_given_seed():
    net_cfg, cfg, windows = small_setup()
    p1, h1 = train_loop(cfg, windows, net_cfg, 5)
    p2, h2 = train_loop(cfg, windows, net_cfg, 5)
    assert h1 == h2
    for k in p1:
        assert np.array_equal(p1[k], p2[k]), k
    p3, h3 = train_loop(TrainConfig(epochs=3, batch_size=4, diffusion_steps=20,
                                    seed=6), windows, net_cfg, 5)
    assert h1 != h3


def test_train_loop_validates_dataset():
    net_cfg, cfg, windows = small_setup()
    with pytest.raises(ValueError):
        train_loop(cfg, [], net_cfg, 5)
    with pytest.raises(ValueError):
        train_loop(cfg, windows + [np.zeros((14, 6))], net_cfg, 5)
    with pytest.raises(ValueError):
        train_loop(cfg, windows, net_cfg, 15)  # no future frames left
    with pytest.raises(ValueError):
        train_loop(cfg, windows, net_cfg, 0)


def test_train_loop_writes_checkpoints(tmp_path):
    net_cfg, _, windows = small_setup()
    cfg = TrainConfig(epochs=4, batch_size=8, diffusion_steps=20, seed=1,
                      checkpoint_interval=2)
    params, _ = train_loop(cfg, windows, net_cfg, 5, checkpoint_dir=str(tmp_path))
    names = sorted(os.listdir(tmp_path))
    assert names == ["checkpoint_epoch00002.ckpt", "checkpoint_epoch00004.ckpt",
                     "checkpoint_final.ckpt"]
    loaded, loaded_cfg, extra = sm.load_checkpoint(
        os.path.join(tmp_path, "checkpoint_final.ckpt"))
    assert loaded_cfg == net_cfg
    assert extra["h_frames"] == 5
    assert extra["f_frames"] == 10
    assert extra["diffusion_steps"] == 20
    assert extra["schedule_kind"] == "cosine"
    for k in params:
        assert np.array_equal(loaded[k], params[k])


def test_save_history_schema(tmp_path):
    history = [(1, 1, 3e-4, 0.5), (2, 1, 3e-4, 0.25)]
    path = os.path.join(tmp_path, "h.csv")
    save_history(path, history)
    with open(path) as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["step", "epoch", "lr", "loss"]
    assert len(rows) == 3
    assert float(rows[1][3]) == 0.5
    assert int(rows[2][0]) == 2


def test_dropout_training_is_reproducible():
    net_cfg = sm.NetworkConfig(spectrum_rows=5, coord_dim=6, latent_dim=8,
                               num_heads=2, num_blocks=1, dropout_rate=0.3)
    cfg = TrainConfig(epochs=2, batch_size=4, diffusion_steps=20, seed=9)
    rng = np.random.default_rng(3)
    windows = [rng.standard_normal((15, 6)) for _ in range(8)]
    p1, h1 = train_loop(cfg, windows, net_cfg, 5)
    p2, h2 = train_loop(cfg, windows, net_cfg, 5)
    assert h1 == h2
    for k in p1:
        assert np.array_equal(p1[k], p2[k])
