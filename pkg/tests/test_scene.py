import math

import pytest
import torch

from sdfwarp.diff import AdjointBuffer
from sdfwarp.errors import ConfigError, DegenerateNormal, NumericalError
from sdfwarp.render import shade
from sdfwarp.scene import (
    Box,
    Complement,
    Intersection,
    Light,
    Material,
    MlpSdf,
    ParamLayout,
    ParamVector,
    Plane,
    SmoothUnion,
    Sphere,
    Transform,
    Union,
    accumulate_param_adjoint,
    eikonal_loss,
    eval_sdf,
    eval_sdf_spatial_grad,
    load_scene,
    load_theta,
    sample_bounding_ball,
    save_scene,
    scene_from_dict,
    scene_to_dict,
    sphere_scene,
    torus_scene,
)
from sdfwarp.scene.params import blob_bytes, blob_values


@pytest.fixture
def unit_sphere():
    """单位球场景"""
    return sphere_scene(1.0)


@pytest.fixture
def mlp_scene_dict():
    """小型 MLP 场景描述"""
    return {
        "parameters": {"net": {"init": "geometric", "r0": 0.5, "seed": 0}},
        "sdf": {"type": "mlp", "params": "net", "hidden": [64, 64], "pe_levels": 0, "skips": []},
    }


def test_layout_resolves_selectors(unit_sphere):
    """测试参数选择器解析"""
    layout = unit_sphere.layout
    assert layout.resolve(0) == 0
    assert layout.resolve("3") == 3
    assert layout.resolve("radius") == 3
    assert layout.resolve("center[2]") == 2
    assert layout.name_of(1) == "center[1]"


def test_layout_rejects_bad_selectors(unit_sphere):
    """测试无效选择器"""
    layout = unit_sphere.layout
    with pytest.raises(ConfigError):
        layout.resolve(4)
    with pytest.raises(ConfigError):
        layout.resolve("center")
    with pytest.raises(ConfigError):
        layout.resolve("center[3]")
    with pytest.raises(ConfigError):
        layout.resolve("missing")


def test_param_vector_validation():
    """测试参数向量长度与有限性检查"""
    layout = ParamLayout()
    layout.allocate("radius")
    with pytest.raises(ConfigError):
        ParamVector(torch.zeros(2), layout)
    with pytest.raises(NumericalError):
        ParamVector(torch.tensor([float("nan")]), layout)
    with pytest.raises(ConfigError):
        layout.allocate("radius")


def test_sphere_distance(unit_sphere):
    """测试球的符号距离"""
    points = torch.tensor([[0.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0, 0.0, -3.0]], dtype=torch.float64)
    values = eval_sdf(unit_sphere, points, unit_sphere.theta)
    assert torch.allclose(values, torch.tensor([-1.0, 1.0, 2.0], dtype=torch.float64))


def test_sphere_gradient_is_unit_normal(unit_sphere):
    """测试球的空间梯度为单位法向"""
    grad = eval_sdf_spatial_grad(unit_sphere, torch.tensor([0.0, 3.0, 4.0], dtype=torch.float64), unit_sphere.theta)
    assert torch.allclose(grad, torch.tensor([0.0, 0.6, 0.8], dtype=torch.float64))


def test_degenerate_normal_at_center(unit_sphere):
    """测试球心处法向退化"""
    with pytest.raises(DegenerateNormal):
        eval_sdf_spatial_grad(unit_sphere, torch.zeros(3, dtype=torch.float64), unit_sphere.theta)


def test_torus_distance():
    """测试圆环的符号距离"""
    scene = torus_scene(0.8, 0.3)
    points = torch.tensor([[0.8, 0.0, 0.0], [1.5, 0.0, 0.0], [0.0, 0.0, 0.0]], dtype=torch.float64)
    values = eval_sdf(scene, points, scene.theta)
    expected = torch.tensor([-0.3, 0.4, 0.5], dtype=torch.float64)
    assert torch.allclose(values, expected)
    assert scene.layout.resolve("minor_radius") == 4


def test_union_takes_minimum_and_reports_ties(unit_sphere):
    """测试并集取最小值并标记分支相等点"""
    layout = unit_sphere.layout
    left = Sphere(center=(-1.0, 0.0, 0.0), radius=layout["radius"].slots()[0])
    right = Sphere(center=(1.0, 0.0, 0.0), radius=layout["radius"].slots()[0])
    union = Union((left, right))
    points = torch.tensor([[0.0, 0.0, 0.0], [-1.0, 0.0, 0.0]], dtype=torch.float64)
    values = union.evaluate(points, unit_sphere.theta.values)
    assert torch.allclose(values, torch.tensor([0.0, -1.0], dtype=torch.float64))
    assert union.ties(points, unit_sphere.theta.values).tolist() == [True, False]


def test_smooth_union_below_minimum():
    """测试平滑并集不大于硬并集"""
    a = Sphere(center=(-0.5, 0.0, 0.0), radius=0.6)
    b = Box(center=(0.5, 0.0, 0.0), half_size=(0.4, 0.4, 0.4))
    blend = SmoothUnion(a, b, 0.2)
    x = torch.tensor([[0.0, 0.0, 0.0], [0.0, 0.5, 0.0]], dtype=torch.float64)
    theta = torch.zeros(0, dtype=torch.float64)
    hard = torch.minimum(a.evaluate(x, theta), b.evaluate(x, theta))
    assert (blend.evaluate(x, theta) <= hard + 1e-12).all()


def test_geometric_init_is_sphere_like():
    """测试默认网络结构（4×64，6 级位置编码）的几何初始化近似半径 0.5 的球"""
    scene = scene_from_dict(
        {"parameters": {"net": {"init": "geometric", "r0": 0.5, "seed": 0}}, "sdf": {"type": "mlp", "params": "net"}}
    )
    assert scene.has_mlp
    node = scene.sdf
    assert isinstance(node, MlpSdf)
    assert (node.hidden, node.pe_levels, node.skips) == ((64, 64, 64, 64), 6, (2,))
    pe = node.pe_weight_indices()
    assert len(pe) > 0
    assert not scene.theta.values[pe].any()

    generator = torch.Generator().manual_seed(1)
    directions = torch.randn(100, 3, generator=generator, dtype=torch.float64)
    directions = directions / torch.linalg.norm(directions, dim=-1, keepdim=True)
    far = eval_sdf(scene, 2.0 * directions, scene.theta)
    assert float(far.min()) >= 1.0
    assert float(far.max()) <= 2.0
    assert float(eval_sdf(scene, torch.zeros(3, dtype=torch.float64), scene.theta)) < 0


def test_geometric_init_small_network(mlp_scene_dict):
    """测试无位置编码的小网络初始化"""
    scene = scene_from_dict(mlp_scene_dict)
    assert scene.sdf.pe_weight_indices() == []
    inside = eval_sdf(scene, torch.zeros(3, dtype=torch.float64), scene.theta)
    outside = eval_sdf(scene, torch.tensor([3.0, 0.0, 0.0], dtype=torch.float64), scene.theta)
    assert float(inside) < 0 < float(outside)
    again = scene_from_dict(mlp_scene_dict)
    assert torch.equal(again.theta.values, scene.theta.values)


def test_scene_round_trip(tmp_path, unit_sphere):
    """测试场景文件保存与读取"""
    scene = unit_sphere.with_theta(torch.tensor([0.1, -0.2, 0.3, 0.9], dtype=torch.float64))
    path = save_scene(scene, tmp_path / "sphere.json", with_theta=True)
    assert (tmp_path / "sphere.theta").exists()
    loaded = load_scene(path)
    assert torch.equal(loaded.theta.values, scene.theta.values)
    assert scene_to_dict(loaded)["sdf"] == {"type": "sphere", "center": "center", "radius": "radius"}


def test_union_scene_round_trip(tmp_path):
    """测试并集场景经字符串路径保存与读取"""
    data = {
        "parameters": {"radius": 0.5, "offset": [0.6, 0.0, 0.0]},
        "sdf": {
            "type": "union",
            "children": [
                {"type": "sphere", "center": [0.0, 0.0, 0.0], "radius": "radius"},
                {"type": "sphere", "center": "offset", "radius": "radius"},
            ],
        },
    }
    scene = scene_from_dict(data)
    assert isinstance(scene.sdf, Union)
    path = save_scene(scene, str(tmp_path / "pair.json"))
    loaded = load_scene(str(path))
    assert isinstance(loaded.sdf, Union)
    x = torch.tensor([[1.1, 0.0, 0.0], [-0.8, 0.0, 0.0]], dtype=torch.float64)
    assert torch.allclose(eval_sdf(loaded, x, loaded.theta), torch.tensor([0.0, 0.3], dtype=torch.float64), atol=1e-12)


def test_scene_rejects_unknown_keys():
    """测试场景文件中的未知字段"""
    with pytest.raises(ConfigError):
        scene_from_dict({"parameters": {"radius": 1.0}, "sdf": {"type": "sphere", "radius": "radius", "colour": 1}})
    with pytest.raises(ConfigError):
        scene_from_dict({"sdf": {"type": "sphere", "center": [0, 0, 0], "radius": 1.0}, "lights": []})


def test_missing_scene_file(tmp_path):
    """测试场景文件不存在"""
    with pytest.raises(ConfigError):
        load_scene(tmp_path / "none.json")


def test_theta_blob_layout(tmp_path):
    """测试参数二进制文件格式"""
    values = torch.tensor([1.0, 2.5, -3.0], dtype=torch.float64)
    data = blob_bytes(values)
    assert len(data) == 8 + 3 * 8
    assert int.from_bytes(data[:8], "little") == 3
    assert torch.equal(blob_values(data), values)
    with pytest.raises(ConfigError):
        blob_values(data, expected=4)
    with pytest.raises(ConfigError):
        blob_values(data[:-1])
    path = tmp_path / "theta.bin"
    path.write_bytes(data)
    assert torch.equal(load_theta(path), values)


def test_flat_material():
    """测试无光照材质"""
    material = Material.flat((1.0, 0.5, 0.0))
    assert material.is_flat
    assert material.ambient == (1.0, 0.5, 0.0)
    with pytest.raises(ConfigError):
        Material(albedo=(1.5, 0.0, 0.0))


def test_eikonal_vanishes_for_exact_sdf(unit_sphere):
    """测试精确 SDF 的 Eikonal 损失为零"""
    points = sample_bounding_ball(unit_sphere.bounding_radius, 256, seed=0)
    result = eikonal_loss(unit_sphere, unit_sphere.theta, points)
    assert result.loss == pytest.approx(0.0, abs=1e-20)
    assert torch.allclose(result.grad, torch.zeros(4, dtype=torch.float64))
    assert result.used + result.skipped == 256


def test_eikonal_of_scaled_sphere():
    """测试缩放 SDF 的 Eikonal 损失"""
    layout = ParamLayout()
    block = layout.allocate("s")
    theta = ParamVector(torch.tensor([2.0], dtype=torch.float64), layout)

    class Scaled(Sphere):
        def evaluate(self, x, th):
            return th[0] * super().evaluate(x, th)

    node = Scaled(center=(0.0, 0.0, 0.0), radius=1.0)
    points = sample_bounding_ball(1.5, 64, seed=1)
    loss, grad = eikonal_loss(node, theta, points)
    # |∂x f| = s everywhere: loss (s-1)², gradient 2(s-1)
    assert loss == pytest.approx(1.0)
    assert float(grad[block.offset]) == pytest.approx(2.0)


def test_bounding_ball_samples_inside():
    """测试包围球采样"""
    points = sample_bounding_ball(2.0, 500, seed=3, iteration=7)
    assert points.shape == (500, 3)
    assert (torch.linalg.norm(points, dim=-1) <= 2.0 + 1e-12).all()
    again = sample_bounding_ball(2.0, 500, seed=3, iteration=7)
    assert torch.equal(points, again)
    assert not math.isclose(float(points[0, 0]), float(sample_bounding_ball(2.0, 500, seed=3, iteration=8)[0, 0]))


def test_csg_and_transform_nodes():
    """测试平面、交集、补集与相似变换"""
    theta = torch.zeros(0, dtype=torch.float64)
    ball = Sphere(center=(0.0, 0.0, 0.0), radius=1.0)
    floor = Plane(normal=(0.0, 0.0, 2.0), offset=0.5)
    x = torch.tensor([[0.0, 0.0, 2.0], [0.0, 0.0, 0.0], [4.0, 0.0, 0.0]], dtype=torch.float64)
    assert floor.normal == (0.0, 0.0, 1.0)
    assert floor.evaluate(x, theta).tolist() == pytest.approx([1.5, -0.5, -0.5])
    assert Intersection((ball, floor)).evaluate(x, theta).tolist() == pytest.approx([1.5, -0.5, 3.0])
    assert Complement(ball).evaluate(x, theta).tolist() == pytest.approx([-1.0, 1.0, -3.0])
    moved = Transform(ball, translation=(1.0, 0.0, 0.0), scale=2.0)
    assert moved.evaluate(x, theta).tolist() == pytest.approx([math.sqrt(5.0) - 2.0, -1.0, 1.0])
    with pytest.raises(ConfigError):
        Plane(normal=(0.0, 0.0, 0.0), offset=0.0)


def test_param_adjoint_of_sphere(unit_sphere):
    """测试球面点的参数伴随"""
    x = torch.tensor([0.0, 0.6, 0.8], dtype=torch.float64)
    buffer = AdjointBuffer(4)
    accumulate_param_adjoint(unit_sphere, x, unit_sphere.theta, 1.0, buffer)
    assert buffer.values.tolist() == pytest.approx([0.0, -0.6, -0.8, -1.0])
    out = torch.zeros(4, dtype=torch.float64)
    accumulate_param_adjoint(unit_sphere, x, unit_sphere.theta, 2.0, out)
    accumulate_param_adjoint(unit_sphere, x, unit_sphere.theta, 2.0, out)
    assert out.tolist() == pytest.approx([0.0, -2.4, -3.2, -4.0])
    with pytest.raises(ConfigError):
        accumulate_param_adjoint(unit_sphere, x, unit_sphere.theta, 1.0, torch.zeros(3, dtype=torch.float64))


def test_lambert_shading():
    """测试朗伯着色的亮面与背光面"""
    material = Material(albedo=(0.5, 0.5, 0.5), ambient=(0.0, 0.0, 0.0), light=Light(direction=(0.0, 0.0, -1.0)))
    x = torch.zeros(2, 3, dtype=torch.float64)
    d = torch.tensor([0.0, 0.0, 1.0], dtype=torch.float64).expand(2, 3)
    grad = torch.tensor([[0.0, 0.0, -1.0], [0.0, 0.0, 1.0]], dtype=torch.float64)
    rgb = shade(x, grad, d, material)
    assert rgb[0].tolist() == pytest.approx([0.5] * 3, abs=1e-6)
    assert rgb[1].tolist() == pytest.approx([0.0] * 3, abs=1e-6)
    with pytest.raises(DegenerateNormal):
        shade(x, torch.zeros(2, 3, dtype=torch.float64), d, material)


def _fd_along(objective, theta, direction, h=1e-5):
    return (objective(theta + h * direction) - objective(theta - h * direction)) / (2.0 * h)


def test_mlp_adjoint_matches_finite_differences(mlp_scene_dict):
    """测试 MLP 参数伴随与有限差分一致"""
    scene = scene_from_dict(mlp_scene_dict)
    theta = scene.theta.values
    gen = torch.Generator().manual_seed(2)
    x = torch.rand(8, 3, generator=gen, dtype=torch.float64) - 0.5
    seeds = torch.linspace(-1.0, 1.0, 8, dtype=torch.float64)
    out = torch.zeros_like(theta)
    accumulate_param_adjoint(scene, x, theta, seeds, out)
    # the output bias shifts every value by one
    assert float(out[-1]) == pytest.approx(float(seeds.sum()), abs=1e-12)

    def objective(th):
        return float((seeds * eval_sdf(scene, x, th)).sum())

    random = torch.randn(theta.shape, generator=gen, dtype=torch.float64)
    for direction in (out / torch.linalg.norm(out), random / torch.linalg.norm(random)):
        fd = _fd_along(objective, theta, direction)
        assert float(out @ direction) == pytest.approx(fd, rel=1e-4, abs=1e-8)


def test_mlp_eikonal_gradient_matches_finite_differences(mlp_scene_dict):
    """测试 MLP 上 Eikonal 梯度与有限差分一致"""
    scene = scene_from_dict(mlp_scene_dict)
    theta = scene.theta.values
    points = sample_bounding_ball(scene.bounding_radius, 64, seed=3)
    result = eikonal_loss(scene, theta, points)
    assert result.used == 64
    assert result.loss > 0

    def objective(th):
        return eikonal_loss(scene, th, points).loss

    gen = torch.Generator().manual_seed(5)
    random = torch.randn(theta.shape, generator=gen, dtype=torch.float64)
    for direction in (result.grad / torch.linalg.norm(result.grad), random / torch.linalg.norm(random)):
        fd = _fd_along(objective, theta, direction)
        assert float(result.grad @ direction) == pytest.approx(fd, rel=1e-4, abs=1e-9)
