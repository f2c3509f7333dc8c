import numpy as np
import pytest
from unittest.mock import AsyncMock

from src.config import ConfigManager, RunConfig, defaults
from src.data import gen_data
from src.net import Layer, Mlp, init_mlp


@pytest.fixture
def rng():
    """固定种子的随机数生成器"""
    return np.random.default_rng(1234)


@pytest.fixture
def tanh_net():
    """2-8-8-3 的 tanh 网络"""
    return init_mlp([2, 8, 8, 3], "tanh", 1.0, seed=7)


@pytest.fixture
def linear_net():
    """无偏置的标量线性网络 f(x) = w·x"""
    return Mlp([Layer(np.array([[0.5, -2.0, 1.5]]), None, "identity")])


@pytest.fixture
def blobs():
    """三类高斯簇数据"""
    return gen_data("blobs", 60, 2, seed=3)


@pytest.fixture
def mock_config(tmp_path):
    """小规模运行配置，输出写到临时目录"""
    values = defaults()
    values["net"].update(widths=[2, 6, 3])
    values["train"].update(epochs=3, batch_size=16)
    values["experiment"].update(n=40, samples=6, n_mc=200, pairs=20, n_inits=3, depth=3, width=4,
                                sweep_widths=[4], epsilons=[0.01, 0.1], times=4, gains=[0.5, 4.0])
    values["output"].update(dir=str(tmp_path / "out"))
    return RunConfig(values=values)


@pytest.fixture
def mock_config_manager(mock_config):
    """模拟配置管理器"""
    with pytest.MonkeyPatch.context() as mp:
        mp.setattr(ConfigManager, "load_config", AsyncMock(return_value=mock_config))
        yield ConfigManager
