import numpy as np
import pytest

from lsnet import autodiff as ad
from lsnet.autodiff import Tensor, grad_check, init_mlp
from lsnet.cloud_io import PointBlock, PointCloud
from lsnet.network import LevelConfig, NetworkConfig, center_block, forward, init_params
from lsnet.synth import synth_scene
from lsnet.training import (
    AdamState,
    METRICS_FILE,
    MODEL_FILE,
    TrainConfig,
    adam_step,
    class_weights,
    predict,
    train,
    weighted_cross_entropy,
)

import reference

SMALL_LEVELS = (LevelConfig(8, 6, 4), LevelConfig(16, 6, 4))


def small_net(**kw):
    kw.setdefault("block_size", 512)
    return NetworkConfig(num_classes=4, levels=SMALL_LEVELS, head_width=16, **kw)


def test_lr_schedule():
    cfg = TrainConfig()
    assert cfg.epochs == 100
    for e in range(5):
        assert cfg.lr(e) == pytest.approx(0.01 * 0.95**e, rel=1e-15)


def test_adam_matches_scalar_reference():
    # constant gradient g: the bias-corrected moments are g and g^2 at every step
    g, lr, eps = 0.3, 0.05, 1e-8
    p = {"w": ad.MlpParams(np.array([[1.0]]), np.array([0.0]))}
    state = AdamState.zeros_like([np.zeros((1, 1)), np.zeros(1)])
    for t in range(1, 11):
        p, state = adam_step(p, [np.array([[g]]), np.array([0.0])], state, lr, eps=eps)
        assert p["w"].weight[0, 0] == pytest.approx(1.0 - t * lr * g / (g + eps), abs=1e-12)
    assert p["w"].bias[0] == 0.0


def test_adam_zero_lr_leaves_params(rng):
    p = {"a": init_mlp(rng, 3, 2, dtype=np.float64)}
    grads = [rng.normal(size=(3, 2)), rng.normal(size=2)]
    new, _ = adam_step(p, grads, AdamState.zeros_like(grads), 0.0)
    assert np.array_equal(new["a"].weight, p["a"].weight) and np.array_equal(new["a"].bias, p["a"].bias)


def test_class_weights():
    w = class_weights([50, 30, 20, 0])
    raw = 1 / (np.array([0.5, 0.3, 0.2, 0.0]) + 0.02)
    np.testing.assert_allclose(w, raw / raw.mean())
    assert w.mean() == pytest.approx(1.0)
    assert np.all(np.diff(w) > 0)


def test_weighted_cross_entropy_oracle(rng):
    z = rng.normal(size=(6, 3))
    y = rng.integers(0, 3, 6)
    w = np.array([0.5, 1.0, 1.5])
    want = np.mean([w[y[i]] * -np.log(np.exp(z[i, y[i]]) / np.exp(z[i]).sum()) for i in range(6)])
    assert float(weighted_cross_entropy(z, y, w).value) == pytest.approx(want, rel=1e-12)
    assert grad_check(lambda t: weighted_cross_entropy(t, y, w), z) < 1e-6


def test_forward_shape_and_checks():
    cfg = small_net(block_size=256)
    params = init_params(cfg, 0)
    scene = synth_scene(0, 256)
    block = PointBlock(scene.cloud, np.arange(256), 256)
    assert forward(block, cfg, params).shape == (256, 4)
    with pytest.raises(ValueError):
        forward(PointBlock(scene.cloud.subset(np.arange(100)), np.arange(100), 100), cfg, params)


def test_center_block(rng):
    pos = rng.normal(size=(50, 3)) * 30 + 100
    out = center_block(pos)
    np.testing.assert_allclose(out[:, :2].mean(axis=0), 0, atol=1e-12)
    assert out[:, 2].min() == 0.0
    np.testing.assert_allclose(out - out[0], pos - pos[0], atol=1e-12)


def test_permutation_equivariance():
    # ratio 1 keeps every point, so no random subset depends on input order
    levels = (LevelConfig(8, 6, 1), LevelConfig(8, 6, 1))
    cfg = NetworkConfig(num_classes=3, levels=levels, head_width=8, block_size=200)
    params = reference.randomized(init_params(cfg, 1, np.float64), np.random.default_rng(1), 0.3)
    rng = np.random.default_rng(0)
    pos = rng.uniform(size=(200, 3))
    perm = rng.permutation(200)
    a = forward(PointBlock(PointCloud(pos), np.arange(200), 200), cfg, params).value
    b = forward(PointBlock(PointCloud(pos[perm]), perm, 200), cfg, params).value
    assert np.max(np.abs(a[perm] - b)) <= 1e-5


def test_smoke_loss_decreases_on_most_seeds():
    decreased = 0
    for seed in range(5):
        scene = synth_scene(seed, 512)
        res = train(scene.cloud, small_net(), TrainConfig(epochs=2, seed=seed))
        decreased += res.history[1]["loss"] < res.history[0]["loss"]
    assert decreased >= 3


def test_metrics_csv_and_checkpoint(tmp_path):
    scene = synth_scene(0, 512)
    cfg = small_net(class_names=("ground", "building", "tree", "pole"))
    train(scene.cloud, cfg, TrainConfig(epochs=2), out_dir=tmp_path)
    lines = (tmp_path / METRICS_FILE).read_text().splitlines()
    assert lines[0] == "epoch,lr,loss,oa,miou,iou_ground,iou_building,iou_tree,iou_pole"
    assert [ln.split(",")[0] for ln in lines[1:]] == ["0", "1"]
    assert (tmp_path / MODEL_FILE).read_bytes()[:4] == b"LSWT"


def test_resume_reproduces_uninterrupted_run(tmp_path):
    scene = synth_scene(2, 512)
    cfg = small_net()
    full = train(scene.cloud, cfg, TrainConfig(epochs=3, seed=4), out_dir=tmp_path / "a")
    train(scene.cloud, cfg, TrainConfig(epochs=2, seed=4), out_dir=tmp_path / "b")
    resumed = train(scene.cloud, cfg, TrainConfig(epochs=3, seed=4), out_dir=tmp_path / "b", resume=True)
    assert resumed.history[0]["loss"] == full.history[2]["loss"]
    assert (tmp_path / "a" / MODEL_FILE).read_bytes() == (tmp_path / "b" / MODEL_FILE).read_bytes()
    assert (tmp_path / "a" / METRICS_FILE).read_bytes() == (tmp_path / "b" / METRICS_FILE).read_bytes()


def test_train_rejects_bad_labels():
    cloud = PointCloud(np.random.default_rng(0).normal(size=(600, 3)), labels=np.full(600, 7))
    with pytest.raises(ValueError):
        train(cloud, small_net(), TrainConfig(epochs=1))


def test_predict_covers_every_point():
    scene = synth_scene(0, 1200)
    cfg = small_net()
    preds = predict(scene.cloud, cfg, init_params(cfg))
    assert preds.shape == (1200,) and preds.min() >= 0 and preds.max() < 4
