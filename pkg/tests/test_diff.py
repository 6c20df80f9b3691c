import warnings

import pytest
import torch

from sdfwarp.diff import (
    AdjointBuffer,
    ScreenDual,
    dense_forward,
    dense_reverse,
    directional,
    nested_adjoint,
    warn_branch_ties,
    with_screen_tangents,
)
from sdfwarp.errors import BranchTangent, ConfigError, NumericalError


@pytest.fixture
def theta():
    """测试用参数向量"""
    return torch.tensor([0.5, -1.0, 2.0], dtype=torch.float64)


def cubic(th):
    return torch.stack([th[0] ** 3, th[0] * th[1], torch.sin(th[2])])


def test_adjoint_buffer_accumulates():
    """测试梯度缓冲区累加与合并"""
    a = AdjointBuffer(3)
    a.add(torch.ones(3, dtype=torch.float64), seed=2.0)
    b = AdjointBuffer(3)
    b.add(torch.tensor([1.0, 0.0, -1.0], dtype=torch.float64))
    total = AdjointBuffer.merged(3, [a, b])
    assert total.values.tolist() == [3.0, 2.0, 1.0]
    with pytest.raises(ConfigError):
        a.add(torch.ones(2, dtype=torch.float64))


def test_nested_adjoint_matches_analytic(theta):
    """测试反向模式梯度"""
    grad = nested_adjoint(lambda th: cubic(th).sum(), theta)
    expected = torch.tensor([3 * 0.25 - 1.0, 0.5, torch.cos(torch.tensor(2.0)).item()], dtype=torch.float64)
    assert torch.allclose(grad, expected)


def test_nested_adjoint_requires_scalar(theta):
    """测试非标量表达式报错"""
    with pytest.raises(ConfigError):
        nested_adjoint(cubic, theta)


def test_nested_adjoint_rejects_non_finite(theta):
    """测试非有限梯度报错"""
    with pytest.raises(NumericalError):
        nested_adjoint(lambda th: torch.sqrt(th[0] * 0.0), theta)


def test_forward_and_reverse_jacobians_agree(theta):
    """测试前向与反向雅可比一致"""
    assert torch.allclose(dense_forward(cubic, theta), dense_reverse(cubic, theta))


def test_directional_derivative(theta):
    """测试方向导数等于雅可比乘方向"""
    v = torch.tensor([1.0, 2.0, -1.0], dtype=torch.float64)
    value, tangent = directional(cubic, theta, v)
    assert torch.allclose(value, cubic(theta))
    assert torch.allclose(tangent, dense_reverse(cubic, theta) @ v)


def test_screen_tangents_of_quadratic():
    """测试屏幕坐标切向量"""
    u = torch.tensor([[1.0, 2.0], [-0.5, 0.25]], dtype=torch.float64)
    dual = with_screen_tangents(lambda uu: uu[..., 0] ** 2 * uu[..., 1], u)
    assert torch.allclose(dual.value, torch.tensor([2.0, 0.0625], dtype=torch.float64))
    assert torch.allclose(dual.d1, 2 * u[:, 0] * u[:, 1])
    assert torch.allclose(dual.d2, u[:, 0] ** 2)


def test_screen_tangents_of_tuple():
    """测试返回元组的函数"""
    u = torch.tensor([[1.0, 2.0]], dtype=torch.float64)
    first, second = with_screen_tangents(lambda uu: (uu.sum(-1), 3.0 * uu[..., 1]), u)
    assert torch.allclose(first.tangents, torch.tensor([[1.0, 1.0]], dtype=torch.float64))
    assert torch.allclose(second.tangents, torch.tensor([[0.0, 3.0]], dtype=torch.float64))


def test_screen_dual_constructors():
    """测试常量与恒等对偶数"""
    const = ScreenDual.constant([1.0, 2.0])
    assert const.tangents.shape == (2, 2)
    assert not const.tangents.any()
    lifted = ScreenDual.lift(torch.zeros(4, 2, dtype=torch.float64))
    assert torch.equal(lifted.tangents[0], torch.eye(2, dtype=torch.float64))


def test_branch_ties_warn():
    """测试分支相等点警告"""
    with pytest.warns(BranchTangent):
        warn_branch_ties(2, "interior")
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        warn_branch_ties(0, "interior")
