import json

import pytest

from sdfwarp.cli import EXIT_CONFIG, EXIT_OK, main, run
from sdfwarp.scene import Material, save_scene, sphere_scene


@pytest.fixture
def scene_file(tmp_path):
    """保存白色单位球场景"""
    return save_scene(sphere_scene(1.0, material=Material.flat((1.0, 1.0, 1.0))), tmp_path / "sphere.json")


@pytest.fixture
def small_config(tmp_path):
    """8×8 相机的运行配置"""
    path = tmp_path / "run.json"
    path.write_text(
        json.dumps(
            {
                "camera": {"width": 8, "height": 8},
                "gradcheck": {"param": "radius", "interior_spp": 16, "boundary_spp": 8, "fd_spp": 64, "fd_h": 1e-2},
                "lemma_check": {"scan_samples": 200},
            }
        ),
        encoding="utf-8",
    )
    return path


def summary(out):
    return json.loads((out / "summary.json").read_text(encoding="utf-8"))


def test_version(capsys):
    """测试版本号输出"""
    with pytest.raises(SystemExit) as e:
        main(["--version"])
    assert e.value.code == 0
    assert "sdfwarp" in capsys.readouterr().out


def test_missing_scene_is_config_error(tmp_path):
    """测试缺少场景时返回配置错误"""
    out = tmp_path / "out"
    assert main(["render", "--out", str(out), "--quiet"]) == EXIT_CONFIG
    assert "No scene" in summary(out)["error_message"]


def test_bad_config_file(tmp_path, scene_file):
    """测试配置文件中的未知字段"""
    config = tmp_path / "bad.json"
    config.write_text(json.dumps({"render": {"samples": 4}}), encoding="utf-8")
    out = tmp_path / "out"
    assert main(["render", "--scene", str(scene_file), "--config", str(config), "--out", str(out), "--quiet"]) == EXIT_CONFIG


def test_render_command(tmp_path, scene_file, small_config):
    """测试渲染命令"""
    out = tmp_path / "render"
    argv = ["render", "--scene", str(scene_file), "--config", str(small_config), "--out", str(out), "--spp", "2", "--quiet"]
    assert main(argv) == EXIT_OK
    assert (out / "image.pfm").exists()
    assert (out / "image.ppm").exists()
    result = summary(out)
    assert result["success"]
    assert result["metrics"]["width"] == 8
    assert result["metrics"]["spp"] == 2


def test_weights_dump_command(tmp_path, scene_file, small_config):
    """测试权重导出命令"""
    out = tmp_path / "weights"
    argv = ["weights-dump", "--scene", str(scene_file), "--config", str(small_config), "--out", str(out), "--quiet"]
    result = run(argv)
    assert result.exit_code == EXIT_OK
    assert result.metrics["rays"] == 8
    header = (out / "weights.csv").read_text(encoding="utf-8").splitlines()[0]
    assert header.startswith("ray_id,i,t_i,f_i,S_i")


def test_gradcheck_command(tmp_path, scene_file, small_config):
    """测试梯度校验命令的输出文件"""
    out = tmp_path / "gradcheck"
    argv = ["gradcheck", "--scene", str(scene_file), "--config", str(small_config), "--out", str(out), "--quiet"]
    result = run(argv)
    assert result.exit_code in (0, 1)
    for name in ("gradcheck.csv", "gradcheck_pixels.csv", "gradient_fd.pfm", "gradient_warped.pfm", "gradient_naive.pfm"):
        assert (out / name).exists()
    assert {row["class"] for row in result.metrics["classes"]} >= {"empty", "silhouette"}
    assert result.metrics["naive_ratio_ok"] in (True, False)


def test_lemma_check_without_scan(tmp_path):
    """测试不做 top-k 扫描的引理检查"""
    out = tmp_path / "lemma"
    assert main(["lemma-check", "--k", "all", "--out", str(out), "--quiet"]) == EXIT_OK
    metrics = summary(out)["metrics"]
    assert metrics["checks"] == {
        "bound_diverges_gamma_4": True,
        "bound_converges_gamma_2": True,
        "kronecker_gamma_4_above_gamma_2": True,
    }
    assert set(metrics["kronecker"]) == {"4", "2"}
    for entry in metrics["kronecker"].values():
        assert isinstance(entry["monotonic"], bool)
        assert len(entry["max_weight"]) == 4
    assert metrics["kronecker"]["4"]["max_weight"][-1] > metrics["kronecker"]["2"]["max_weight"][-1]
    assert "skipped" in metrics["topk_scan"]
    assert (out / "lemma_bounds.csv").exists()
    assert not (out / "topk_events.csv").exists()


@pytest.mark.slow
def test_lemma_check_with_scan(tmp_path, small_config):
    """测试带 top-k 扫描的引理检查"""
    out = tmp_path / "lemma"
    result = run(["lemma-check", "--config", str(small_config), "--out", str(out), "--quiet"])
    assert (out / "topk_events.csv").exists()
    assert "topk_swaps_zero_weight" in result.metrics["checks"]
    assert "topk_continuous" in result.metrics["checks"]
    scan = result.metrics["topk_scan"]
    assert {"events", "step_change_events", "max_jump_ratio", "max_step_change_jump_ratio"} <= set(scan)


def test_fit_command(tmp_path, scene_file):
    """测试优化命令"""
    start = save_scene(sphere_scene(0.9, material=Material.flat((1.0, 1.0, 1.0))), tmp_path / "start.json")
    config = tmp_path / "fit.json"
    config.write_text(
        json.dumps(
            {
                "fit": {
                    "ground_truth": str(scene_file),
                    "views": 2,
                    "width": 8,
                    "height": 8,
                    "target_spp": 2,
                    "levels": 1,
                    "iterations": 2,
                    "pixels_per_iter": 8,
                    "eikonal_samples": 8,
                }
            }
        ),
        encoding="utf-8",
    )
    out = tmp_path / "fit"
    assert main(["fit", "--scene", str(start), "--config", str(config), "--out", str(out), "--quiet"]) == EXIT_OK
    assert (out / "history.csv").exists()
    assert (out / "fitted.json").exists()
    assert (out / "checkpoints" / "best.json").exists()
    assert summary(out)["metrics"]["iterations"] == 2
