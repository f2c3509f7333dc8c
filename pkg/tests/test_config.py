import json

import pytest

from src.config import MANIFEST_SCHEMA, ConfigManager, ConfigValidator, RunConfig, defaults
from src.errors import ConfigError


@pytest.mark.asyncio
async def test_load_config_defaults():
    """测试未指定配置文件时使用默认值"""
    config = await ConfigManager.load_config()
    assert config.values == defaults()
    assert config.seed == 0
    assert config.source is None


@pytest.mark.asyncio
async def test_load_config_ini(tmp_path):
    """测试成功加载 INI 配置文件"""
    path = tmp_path / "config.ini"
    path.write_text(
        "[net]\nwidths = 2, 4, 3\nactivation = relu\n\n"
        "[train]\nepochs = 5\ntrack_curvature = yes\n\n"
        "[experiment]\nseed = 42\nepsilons = 0.01 0.1\n",
        encoding="utf-8",
    )
    config = await ConfigManager.load_config(path)
    assert config["net"]["widths"] == [2, 4, 3]
    assert config["net"]["activation"] == "relu"
    assert config["train"]["epochs"] == 5
    assert config["train"]["track_curvature"] is True
    assert config["experiment"]["epsilons"] == [0.01, 0.1]
    assert config.seed == 42
    assert config["output"]["dir"] == "results"


@pytest.mark.asyncio
async def test_unknown_key_reports_line(tmp_path):
    """测试未知配置项报告所在行号"""
    path = tmp_path / "config.ini"
    path.write_text("[net]\nwidths = 2, 3\nwidht = 4\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="第3行") as exc_info:
        await ConfigManager.load_config(path)
    assert len(exc_info.value.errors) == 1


@pytest.mark.asyncio
async def test_unknown_section_rejected(tmp_path):
    """测试未知分节"""
    path = tmp_path / "config.ini"
    path.write_text("[proxy]\nhost = 127.0.0.1\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="未知分节"):
        await ConfigManager.load_config(path)


@pytest.mark.asyncio
async def test_type_and_range_errors(tmp_path):
    """测试类型错误与取值范围错误"""
    path = tmp_path / "config.ini"
    path.write_text("[train]\nepochs = many\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="类型错误"):
        await ConfigManager.load_config(path)
    path.write_text("[train]\nlearning_rate = -0.1\n[net]\nactivation = sigmoid\n", encoding="utf-8")
    with pytest.raises(ConfigError) as exc_info:
        await ConfigManager.load_config(path)
    assert len(exc_info.value.errors) == 2


@pytest.mark.asyncio
async def test_malformed_ini(tmp_path):
    """测试 INI 格式错误"""
    path = tmp_path / "config.ini"
    path.write_text("epochs = 3\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        await ConfigManager.load_config(path)


@pytest.mark.asyncio
async def test_load_config_json(tmp_path):
    """测试加载 JSON 配置文件"""
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"experiment": {"n_mc": 500, "gains": [1.0, 2.0]}}), encoding="utf-8")
    config = await ConfigManager.load_config(path)
    assert config["experiment"]["n_mc"] == 500
    assert config["experiment"]["gains"] == [1.0, 2.0]
    assert config.subcommand is None


@pytest.mark.asyncio
async def test_manifest_reuses_config_and_subcommand(tmp_path):
    """测试运行清单可直接作为配置"""
    values = defaults()
    values["experiment"]["seed"] = 9
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps({"schema": MANIFEST_SCHEMA, "subcommand": "serr", "config": values}),
                    encoding="utf-8")
    config = await ConfigManager.load_config(path)
    assert config.subcommand == "serr"
    assert config.values == values
    assert config.digest() == RunConfig(values=values).digest()


@pytest.mark.asyncio
async def test_load_config_file_not_found(tmp_path):
    """测试配置文件不存在的情况"""
    with pytest.raises(FileNotFoundError):
        await ConfigManager.load_config(tmp_path / "missing.ini")


@pytest.mark.asyncio
async def test_load_config_invalid_json(tmp_path):
    """测试配置文件JSON格式无效的情况"""
    path = tmp_path / "config.json"
    path.write_text("invalid json", encoding="utf-8")
    with pytest.raises(json.JSONDecodeError):
        await ConfigManager.load_config(path)


@pytest.mark.asyncio
async def test_data_source_requirements():
    """测试 idx / npz 数据源需要对应路径"""
    config = defaults()
    config["experiment"]["data"] = "idx"
    errors = await ConfigValidator.validate_experiment_settings(config)
    assert any("idx_images" in e for e in errors)
    config["experiment"].update(idx_images="a", idx_labels="b")
    assert await ConfigValidator.validate_experiment_settings(config) == []


def test_override_and_digest(mock_config):
    """测试命令行覆盖与配置摘要"""
    before = mock_config.digest()
    mock_config.override("experiment", "seed", 3)
    assert mock_config.seed == 3
    assert mock_config.digest() != before
    with pytest.raises(ConfigError):
        mock_config.override("experiment", "api_id", 1)
