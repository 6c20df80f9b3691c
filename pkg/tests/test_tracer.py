import pytest
import torch

from sdfwarp.errors import ConfigError, GrazingHit, InsideStart
from sdfwarp.render import Camera, generate_ray
from sdfwarp.scene import scene_from_dict, sphere_scene
from sdfwarp.scene.scene import expr_of, sdf_and_spatial_grad
from sdfwarp.tracer import (
    Ray,
    Termination,
    TracerOptions,
    attach_hit_distance,
    hit_constants,
    intersection_t_derivative,
    replay_trajectory,
    sphere_trace,
)

DTYPE = torch.float64


@pytest.fixture
def unit_sphere():
    """单位球场景"""
    return sphere_scene(1.0)


@pytest.fixture
def camera():
    """默认正交相机"""
    return Camera()


def test_head_on_ray_hits_in_one_step(unit_sphere):
    """测试正对球心的光线一步命中"""
    ray = Ray(torch.tensor([0.0, 0.0, -3.0]), torch.tensor([0.0, 0.0, 1.0]))
    traj = sphere_trace(unit_sphere, unit_sphere.theta, ray)
    assert bool(traj.hit[0])
    assert float(traj.t_star[0]) == pytest.approx(2.0)
    assert traj.times(0).tolist() == [0.0, 2.0]
    assert traj.values(0).tolist() == [2.0, 0.0]
    assert int(traj.termination[0]) == Termination.CONVERGED
    record = traj.record(0)
    assert record[1][1] == pytest.approx((0.0, 0.0, -1.0))


def test_miss_ray_escapes(unit_sphere, camera):
    """测试偏离球的光线逃逸"""
    traj = sphere_trace(unit_sphere, unit_sphere.theta, generate_ray(camera, torch.tensor([[1.2, 0.0]], dtype=DTYPE)))
    assert not bool(traj.hit[0])
    assert int(traj.termination[0]) == Termination.ESCAPED
    assert torch.isnan(traj.t_star[0])
    # every recorded point stays outside the sphere
    assert (traj.values(0) > 0).all()


def test_trajectory_padding(unit_sphere, camera):
    """测试批量轨迹的填充"""
    u = torch.tensor([[0.0, 0.0], [0.9, 0.0], [1.3, 0.0]], dtype=DTYPE)
    traj = sphere_trace(unit_sphere, unit_sphere.theta, generate_ray(camera, u))
    assert traj.t.shape == traj.f.shape == (3, traj.width)
    assert traj.points.shape == (3, traj.width, 3)
    assert traj.valid.sum(-1).tolist() == traj.count.tolist()
    summary = traj.summary()
    assert summary["rays"] == 3
    assert summary["hits"] == 2
    assert summary["escaped"] == 1


def test_max_steps_termination(unit_sphere, camera):
    """测试步数上限"""
    opts = TracerOptions(max_steps=2)
    traj = sphere_trace(unit_sphere, unit_sphere.theta, generate_ray(camera, torch.tensor([[0.99, 0.0]], dtype=DTYPE)), opts)
    assert int(traj.termination[0]) == Termination.MAX_STEPS
    assert int(traj.count[0]) == 2


def test_inside_start_raises(camera):
    """测试光线起点在几何体内部"""
    big = sphere_scene(5.0)
    with pytest.raises(InsideStart):
        sphere_trace(big, big.theta, generate_ray(camera, torch.zeros(1, 2, dtype=DTYPE)))


def test_tracer_options_validation():
    """测试追踪参数检查"""
    with pytest.raises(ConfigError):
        TracerOptions(tau_hit=0.0)
    with pytest.raises(ConfigError):
        TracerOptions(step_scale=1.5)
    with pytest.raises(ConfigError):
        TracerOptions(max_steps=0)


def test_replay_reproduces_trace(unit_sphere, camera):
    """测试可微重放与追踪结果一致"""
    u = torch.tensor([[0.3, -0.2], [1.1, 0.4]], dtype=DTYPE)
    ray = generate_ray(camera, u)
    traj = sphere_trace(unit_sphere, unit_sphere.theta, ray)
    t, x, f = replay_trajectory(expr_of(unit_sphere), unit_sphere.theta.values, ray.origin, ray.direction, traj)
    assert torch.allclose(t, traj.t)
    assert torch.allclose(f, traj.f)
    assert torch.allclose(x, traj.points)


def test_hit_distance_derivatives(unit_sphere, camera):
    """测试命中距离对半径与屏幕坐标的导数"""
    u = torch.tensor([[0.6, 0.0]], dtype=DTYPE)
    ray = generate_ray(camera, u)
    traj = sphere_trace(unit_sphere, unit_sphere.theta, ray)
    expr = expr_of(unit_sphere)
    theta = unit_sphere.theta.values
    t0, f0, gd0, grazing = hit_constants(expr, theta, traj, 1e-4)
    assert not bool(grazing[0])

    def t_of(th):
        return attach_hit_distance(expr, th, ray.origin, ray.direction, t0, f0, gd0)

    assert float(t_of(theta)[0]) == pytest.approx(float(t0[0]))
    # t* = 3 − √(r² − u₁²): ∂t*/∂r = −r/√(r² − u₁²) = −1.25
    grad = torch.func.jacrev(t_of)(theta)[0]
    assert float(grad[3]) == pytest.approx(-1.25, rel=1e-4)

    def t_of_u(uu):
        origin, direction = camera.ray_tensors(uu)
        return attach_hit_distance(expr, theta, origin, direction, t0, f0, gd0)

    _, dt = torch.func.jvp(t_of_u, (u,), (torch.tensor([[1.0, 0.0]], dtype=DTYPE),))
    # ∂t*/∂u₁ = u₁/√(r² − u₁²) = 0.75
    assert float(dt[0]) == pytest.approx(0.75, rel=1e-4)


def test_intersection_t_derivative(unit_sphere):
    """测试单点命中距离的参数导数"""
    x = torch.tensor([0.0, 0.0, -1.0], dtype=DTYPE)
    d = torch.tensor([0.0, 0.0, 1.0], dtype=DTYPE)
    factor, grad = intersection_t_derivative(unit_sphere, unit_sphere.theta, x, d, seed=2.0)
    assert factor == pytest.approx(1.0)
    assert grad.tolist() == pytest.approx([0.0, 0.0, 2.0, -2.0])


def _polished_hit_distance(scene, theta, ray):
    traj = sphere_trace(scene, theta, ray, TracerOptions(tau_hit=1e-10, max_steps=1000))
    assert bool(traj.hit[0])
    origin, direction = traj.ray.origin[0], traj.ray.direction[0]
    t = traj.t_star[0]
    expr = expr_of(scene)
    for _ in range(8):
        f, g = sdf_and_spatial_grad(expr, (origin + t * direction)[None], theta)
        t = t - f[0] / (g[0] @ direction)
    return float(t), origin + t * direction, direction


def test_mlp_intersection_t_derivative_matches_retrace():
    """测试 MLP 命中距离的参数导数与重新追踪的有限差分一致"""
    scene = scene_from_dict(
        {
            "parameters": {"net": {"init": "geometric", "r0": 0.5, "seed": 0}},
            "sdf": {"type": "mlp", "params": "net", "hidden": [64, 64], "pe_levels": 0, "skips": []},
        }
    )
    theta = scene.theta.values
    ray = generate_ray(Camera(), [[0.1, 0.05]])
    t_star, x_star, d = _polished_hit_distance(scene, theta, ray)
    assert t_star == pytest.approx(2.51, abs=0.15)
    _, grad = intersection_t_derivative(scene, theta, x_star, d)

    gen = torch.Generator().manual_seed(4)
    random = torch.randn(theta.shape, generator=gen, dtype=DTYPE)
    h = 1e-5
    for direction in (grad / torch.linalg.norm(grad), random / torch.linalg.norm(random)):
        plus, _, _ = _polished_hit_distance(scene, theta + h * direction, ray)
        minus, _, _ = _polished_hit_distance(scene, theta - h * direction, ray)
        fd = (plus - minus) / (2.0 * h)
        assert float(grad @ direction) == pytest.approx(fd, rel=1e-4, abs=1e-8)


def test_grazing_intersection_raises(unit_sphere):
    """测试掠射命中报错"""
    x = torch.tensor([1.0, 0.0, 0.0], dtype=DTYPE)
    d = torch.tensor([0.0, 0.0, 1.0], dtype=DTYPE)
    with pytest.raises(GrazingHit):
        intersection_t_derivative(unit_sphere, unit_sphere.theta, x, d)
