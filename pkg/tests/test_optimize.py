import math

import numpy as np
import pandas as pd
import pytest
import torch

from sdfwarp.errors import ConfigError
from sdfwarp.optimize import (
    AdamState,
    Dataset,
    OptimConfig,
    View,
    adam_step,
    downsample,
    fibonacci_cameras,
    fit,
    load_dataset,
    loss_and_grad,
    save_dataset,
    synthetic_dataset,
)
from sdfwarp.optimize.fit import HISTORY_COLUMNS
from sdfwarp.render import Camera
from sdfwarp.scene import Material, scene_from_dict, sphere_scene

DTYPE = torch.float64


@pytest.fixture
def white_sphere():
    """白色无光照单位球"""
    return sphere_scene(1.0, material=Material.flat((1.0, 1.0, 1.0)))


@pytest.fixture
def small_dataset(white_sphere):
    """两个视角的 8×8 合成数据集"""
    return synthetic_dataset(white_sphere, views=2, width=8, height=8, spp=4, levels=2, quiet=True)


def test_downsample():
    """测试 2×2 盒式降采样"""
    image = np.arange(16, dtype=np.float64).reshape(4, 4)
    assert downsample(image).tolist() == [[2.5, 4.5], [10.5, 12.5]]
    assert downsample(np.ones((5, 3, 3))).shape == (2, 1, 3)
    with pytest.raises(ConfigError):
        downsample(np.ones((1, 4)))


def test_dataset_validation():
    """测试数据集参数检查"""
    cam = Camera(width=4, height=4)
    with pytest.raises(ConfigError):
        Dataset([])
    with pytest.raises(ConfigError):
        Dataset([View(camera=cam, target=np.zeros((3, 4, 3)))])
    with pytest.raises(ConfigError):
        Dataset([View(camera=cam, target=np.zeros((4, 4, 3)))], levels=4)
    with pytest.raises(ConfigError):
        Dataset([View(camera=cam, target=np.zeros((4, 4, 3))), View(camera=Camera(width=8, height=8), target=np.zeros((8, 8, 3)))])


def test_dataset_pyramid(small_dataset):
    """测试数据集金字塔"""
    assert len(small_dataset) == 2
    assert small_dataset.target(0, 1).shape == (4, 4, 3)
    cam = small_dataset.camera(1, 1)
    assert (cam.width, cam.height) == (4, 4)
    assert cam.extent == small_dataset.camera(1).extent
    assert small_dataset.target(0).max() > 0


def test_sample_batch(small_dataset):
    """测试像素批次采样"""
    batch = small_dataset.sample_batch(0, 20, seed=0, iteration=1)
    assert len(batch) == len(set(batch)) == 20
    assert all(v < 2 and 0 <= r < 8 and 0 <= c < 8 for v, r, c in batch)
    assert batch == small_dataset.sample_batch(0, 20, seed=0, iteration=1)
    assert batch != small_dataset.sample_batch(0, 20, seed=0, iteration=2)
    assert len(small_dataset.sample_batch(1, 100, seed=0, iteration=0)) == 2 * 4 * 4


def test_fibonacci_cameras():
    """测试球面均匀分布的相机"""
    cameras = fibonacci_cameras(5, distance=2.5, width=8, height=8)
    assert len(cameras) == 5
    for cam in cameras:
        assert math.dist(cam.eye, (0.0, 0.0, 0.0)) == pytest.approx(2.5)
        assert cam.target == (0.0, 0.0, 0.0)
    assert len({cam.eye for cam in cameras}) == 5
    with pytest.raises(ConfigError):
        fibonacci_cameras(0)


def test_dataset_round_trip(small_dataset, tmp_path):
    """测试数据集保存与读取"""
    path = save_dataset(small_dataset, tmp_path / "data")
    assert path.name == "dataset.json"
    again = load_dataset(path)
    assert again.levels == 2
    assert [v.camera for v in again.views] == [v.camera for v in small_dataset.views]
    assert np.allclose(again.target(1), small_dataset.target(1), atol=1e-6)
    with pytest.raises(ConfigError):
        load_dataset(tmp_path / "missing.json")


def test_adam_step():
    """测试 Adam 单步更新"""
    state = AdamState(3, lr=0.1)
    theta = adam_step(torch.zeros(3, dtype=DTYPE), [1.0, -1.0, 0.0], state)
    assert theta.tolist() == pytest.approx([-0.1, 0.1, 0.0])
    assert state.steps == 1
    with pytest.raises(ConfigError):
        adam_step(torch.zeros(2, dtype=DTYPE), [1.0, 1.0], state)
    with pytest.raises(ConfigError):
        AdamState(3, lr=0.0)


def test_adam_matches_reference_recurrence():
    """测试 Adam 十步轨迹与手写的偏差修正递推一致"""
    lr, (b1, b2), eps = 0.05, (0.9, 0.999), 1e-8
    state = AdamState(2, lr=lr, betas=(b1, b2), eps=eps)
    theta = torch.tensor([0.5, -0.25], dtype=DTYPE)
    expected = theta.clone()
    m = torch.zeros(2, dtype=DTYPE)
    v = torch.zeros(2, dtype=DTYPE)
    for step in range(1, 11):
        grad = torch.tensor([math.sin(step), 0.1 * step - 0.5], dtype=DTYPE)
        theta = adam_step(theta, grad, state)
        m = b1 * m + (1 - b1) * grad
        v = b2 * v + (1 - b2) * grad**2
        m_hat = m / (1 - b1**step)
        v_hat = v / (1 - b2**step)
        expected = expected - lr * m_hat / (v_hat.sqrt() + eps)
        assert torch.allclose(theta, expected, rtol=1e-12, atol=1e-14)
    assert state.steps == 10


def test_adam_constant_gradient_moves_lr_per_step():
    """测试恒定梯度下每步移动一个学习率"""
    state = AdamState(3, lr=0.01)
    theta = torch.zeros(3, dtype=DTYPE)
    for step in range(1, 11):
        theta = adam_step(theta, [2.0, -3.0, 0.0], state)
        assert theta.tolist() == pytest.approx([-0.01 * step, 0.01 * step, 0.0], abs=1e-9)


def test_optim_config():
    """测试优化参数与多分辨率调度"""
    cfg = OptimConfig(iterations=9, levels=3)
    assert [cfg.level_at(i) for i in range(9)] == [2, 2, 2, 1, 1, 1, 0, 0, 0]
    assert [cfg.level_at(i, levels=2) for i in range(9)] == [1] * 5 + [0] * 4
    assert cfg.learning_rate(sphere_scene(1.0)) == 5e-2
    assert OptimConfig(lr=1e-3).learning_rate(sphere_scene(1.0)) == 1e-3
    assert cfg.estimator().mode == "warped"
    with pytest.raises(ConfigError):
        OptimConfig(iterations=0)
    with pytest.raises(ConfigError):
        OptimConfig(eikonal_weight=-1.0)


def test_loss_vanishes_at_ground_truth(white_sphere, small_dataset):
    """测试真值参数处损失与梯度为零"""
    with pytest.raises(ConfigError):
        loss_and_grad(white_sphere, white_sphere.theta, small_dataset, 0, [])
    cfg = OptimConfig(interior_spp=4, boundary_spp=4, eikonal_samples=32)
    batch = small_dataset.sample_batch(0, 16, seed=0, iteration=0)
    step = loss_and_grad(white_sphere, white_sphere.theta, small_dataset, 0, batch, cfg, iteration=0)
    assert step.image_loss < 1e-20
    assert step.eikonal < 1e-20
    assert float(torch.linalg.norm(step.grad)) < 1e-8
    assert step.counters["samples"] > 0


def test_loss_gradient_points_to_target(small_dataset):
    """测试半径偏小时梯度指向增大半径"""
    start = sphere_scene(0.8, material=Material.flat((1.0, 1.0, 1.0)))
    cfg = OptimConfig(interior_spp=4, boundary_spp=8, eikonal_weight=0.0)
    batch = small_dataset.sample_batch(0, 128, seed=0, iteration=0)
    step = loss_and_grad(start, start.theta, small_dataset, 0, batch, cfg)
    assert step.image_loss > 0
    assert float(step.grad[3]) < 0


def test_fit_writes_history_and_checkpoints(white_sphere, small_dataset, tmp_path):
    """测试短时优化的历史记录与检查点"""
    start = sphere_scene(0.9, material=Material.flat((1.0, 1.0, 1.0)))
    cfg = OptimConfig(
        iterations=4,
        pixels_per_iter=8,
        levels=2,
        eikonal_samples=16,
        checkpoint_every=2,
        checkpoint_dir=str(tmp_path / "ckpt"),
    )
    result = fit(start, small_dataset, cfg, quiet=True)
    assert list(result.history.columns) == HISTORY_COLUMNS
    assert result.history["level"].tolist() == [1, 1, 0, 0]
    assert result.best_iteration in (2, 3)
    assert [p.name for p in result.checkpoints] == ["checkpoint_00002.json", "checkpoint_00004.json", "best.json"]
    assert all(p.exists() for p in result.checkpoints)
    assert torch.equal(result.scene.theta.values, result.theta)


def test_fit_is_deterministic(small_dataset):
    """测试相同配置的两次优化结果一致"""
    start = sphere_scene(0.9, material=Material.flat((1.0, 1.0, 1.0)))
    cfg = OptimConfig(iterations=3, pixels_per_iter=8, levels=2, eikonal_samples=16, seed=7)
    first = fit(start, small_dataset, cfg, quiet=True)
    second = fit(start, small_dataset, cfg, quiet=True)
    columns = [c for c in HISTORY_COLUMNS if c != "elapsed_s"]
    pd.testing.assert_frame_equal(first.history[columns], second.history[columns])
    assert torch.equal(first.theta, second.theta)
    assert first.best_iteration == second.best_iteration


@pytest.mark.slow
def test_fit_recovers_sphere_radius(white_sphere):
    """测试从偏小半径恢复单位球"""
    dataset = synthetic_dataset(white_sphere, views=4, width=32, height=32, spp=16, levels=2, quiet=True)
    start = sphere_scene(0.8, material=Material.flat((1.0, 1.0, 1.0)))
    cfg = OptimConfig(iterations=150, pixels_per_iter=128, levels=2, eikonal_weight=0.0)
    result = fit(start, dataset, cfg, quiet=True)
    assert float(result.theta[3]) == pytest.approx(1.0, abs=0.05)
    assert result.best_loss < result.history["loss"].iloc[0]


@pytest.fixture(scope="module")
def eight_views():
    """单位球的 8 视角 64×64 合成数据集"""
    truth = sphere_scene(1.0, material=Material.flat((1.0, 1.0, 1.0)))
    return synthetic_dataset(truth, views=8, width=64, height=64, spp=16, levels=3, quiet=True)


@pytest.mark.slow
def test_fit_recovers_center_and_radius(eight_views):
    """测试从偏移的球同时恢复球心与半径"""
    start = sphere_scene(0.85, center=(0.1, -0.08, 0.06), material=Material.flat((1.0, 1.0, 1.0)))
    cfg = OptimConfig(iterations=300, pixels_per_iter=512, lr=1e-2, levels=3, eikonal_weight=0.0)
    result = fit(start, eight_views, cfg, quiet=True)
    assert result.theta.tolist() == pytest.approx([0.0, 0.0, 0.0, 1.0], abs=1e-2)


@pytest.mark.slow
def test_naive_fit_cannot_move_flat_silhouette(eight_views):
    """测试无光照材质下朴素梯度无法恢复参数"""
    start = sphere_scene(0.85, center=(0.1, -0.08, 0.06), material=Material.flat((1.0, 1.0, 1.0)))
    cfg = OptimConfig(iterations=30, pixels_per_iter=512, lr=1e-2, levels=3, eikonal_weight=0.0, mode="naive")
    result = fit(start, eight_views, cfg, quiet=True)
    assert (result.history["grad_norm"] == 0).all()
    assert abs(float(result.theta[3]) - 1.0) > 0.1


@pytest.mark.slow
def test_fit_shrinks_mlp_image_loss():
    """测试 MLP 场景的优化降低图像损失"""
    material = {"albedo": [0.0, 0.0, 0.0], "ambient": [1.0, 1.0, 1.0]}
    start = scene_from_dict(
        {
            "parameters": {"net": {"init": "geometric", "r0": 0.5, "seed": 0}},
            "sdf": {"type": "mlp", "params": "net", "hidden": [64, 64], "pe_levels": 0, "skips": []},
            "material": material,
        }
    )
    truth = sphere_scene(0.6, material=Material.flat((1.0, 1.0, 1.0)))
    dataset = synthetic_dataset(truth, views=4, width=32, height=32, spp=16, levels=1, quiet=True)
    cfg = OptimConfig(iterations=150, pixels_per_iter=256, lr=2e-3, levels=1, eikonal_weight=0.1, eikonal_samples=256)
    result = fit(start, dataset, cfg, quiet=True)
    first = float(result.history["image_loss"].iloc[0])
    assert result.history["image_loss"].iloc[-20:].mean() < 0.5 * first
    assert torch.isfinite(result.theta).all()
