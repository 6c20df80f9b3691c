import json

import pytest

from sdfwarp.cli import build_parser
from sdfwarp.config import RunConfig, apply_overrides, load_config, run_config_from_dict
from sdfwarp.errors import ConfigError
from sdfwarp.warp.weights import ALL


@pytest.fixture
def config_file(tmp_path):
    """写入一个运行配置文件"""
    path = tmp_path / "run.json"
    path.write_text(
        json.dumps(
            {
                "seed": 3,
                "camera": {"width": 8, "height": 8},
                "warp": {"gamma": 5.0, "k": 4},
                "gradcheck": {"param": "radius", "fd_spp": 64},
            }
        ),
        encoding="utf-8",
    )
    return path


def test_default_config():
    """测试默认配置"""
    cfg = load_config(None)
    assert cfg == RunConfig()
    assert cfg.out_dir.name == "out"
    assert cfg.lemma_check.kronecker_threshold == 0.99


def test_load_config(config_file):
    """测试从文件读取配置"""
    cfg = load_config(config_file)
    assert cfg.seed == 3
    assert cfg.warp.gamma == 5.0
    assert cfg.warp.k == 4
    assert cfg.gradcheck.param == "radius"
    assert cfg.gradcheck.fd_spp == 64
    assert cfg.render.spp == 16


def test_config_errors(tmp_path):
    """测试配置错误"""
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(bad)
    with pytest.raises(ConfigError):
        run_config_from_dict({"colour": "red"})
    with pytest.raises(ConfigError):
        run_config_from_dict({"render": {"spp": 4, "filter": "box"}})
    with pytest.raises(ConfigError):
        run_config_from_dict({"warp": {"gamma": 2.0}})
    with pytest.raises(ConfigError):
        run_config_from_dict({"threads": 0})


def test_command_line_overrides(config_file):
    """测试命令行参数覆盖配置文件"""
    args = build_parser().parse_args(
        ["gradcheck", "--gamma", "3", "--k", "all", "--spp", "32", "--level", "1", "--mode", "naive", "--param", "2", "--seed", "9"]
    )
    cfg = apply_overrides(load_config(config_file), args)
    assert cfg.seed == 9
    assert cfg.warp.gamma == 3.0
    assert cfg.warp.k == ALL
    assert cfg.render.spp == cfg.gradcheck.interior_spp == 32
    assert cfg.render.level == cfg.gradcheck.level == 1
    assert cfg.gradcheck.mode == cfg.fit.mode == "naive"
    assert cfg.gradcheck.param == 2
    assert cfg.gradcheck.fd_spp == 64


def test_integer_k_override():
    """测试整数 k 的覆盖"""
    args = build_parser().parse_args(["render", "--k", "6", "--param", "center[0]"])
    cfg = apply_overrides(RunConfig(), args)
    assert cfg.warp.k == 6
    assert cfg.gradcheck.param == "center[0]"
    untouched = apply_overrides(RunConfig(), build_parser().parse_args(["render"]))
    assert untouched == RunConfig()
