import math

import numpy as np
import pytest

from src.errors import StepSizeError, TrainingDivergedError
from src.net import Layer, Loss, Mlp, init_mlp
from src.train import (
    PenaltyKind, TrainConfig, entropy_penalty_gradient, make_pair, power_iteration, top_sv_penalty_gradient,
    train, train_pair,
)


def _entropy(w: np.ndarray) -> float:
    s = np.linalg.svd(w, compute_uv=False)
    p = s / s.sum()
    return float(-np.sum(p * np.log(p)))


@pytest.fixture
def generic_matrix(rng):
    """奇异值为 (3, 1, 0.5) 的 4×3 矩阵"""
    u, _ = np.linalg.qr(rng.standard_normal((4, 3)))
    v, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    return u @ np.diag([3.0, 1.0, 0.5]) @ v.T


def test_config_validation():
    """测试训练配置的参数检查"""
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(ValueError):
        TrainConfig(spectral_penalty_weight=-1.0)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    cfg = TrainConfig(penalty_kind="top_sv", spectral_penalty_weight=0.1)
    assert cfg.penalty_kind is PenaltyKind.TOP_SV
    assert cfg.penalized
    assert cfg.differs_only_in_penalty(TrainConfig())
    assert not cfg.differs_only_in_penalty(TrainConfig(epochs=3))


def test_power_iteration_finds_top_singular_value(generic_matrix):
    """测试幂迭代得到最大奇异值"""
    sigma, u, v = power_iteration(generic_matrix, iterations=100, tol=0.0)
    assert sigma == pytest.approx(3.0, rel=1e-12)
    assert np.allclose(generic_matrix @ v, sigma * u, atol=1e-10)


def test_top_sv_gradient_matches_finite_differences(generic_matrix):
    """测试 σ_max² 的解析梯度与中心差分一致"""
    grad, _ = top_sv_penalty_gradient(generic_matrix, iterations=100, tol=0.0)
    h = 1e-6
    fd = np.zeros_like(generic_matrix)
    for idx in np.ndindex(*generic_matrix.shape):
        step = np.zeros_like(generic_matrix)
        step[idx] = h
        plus = np.linalg.norm(generic_matrix + step, 2) ** 2
        minus = np.linalg.norm(generic_matrix - step, 2) ** 2
        fd[idx] = (plus - minus) / (2 * h)
    assert np.max(np.abs(grad - fd)) <= 1e-4 * np.max(np.abs(fd))


def test_top_sv_gradient_skips_degenerate_top():
    """测试最大奇异值重复时不给出梯度"""
    grad, _ = top_sv_penalty_gradient(np.eye(3))
    assert grad is None


def test_entropy_gradient_matches_finite_differences(rng):
    """测试谱熵梯度与中心差分一致"""
    w = rng.standard_normal((3, 4))
    grad = entropy_penalty_gradient(w)
    h = 1e-6
    fd = np.zeros_like(w)
    for idx in np.ndindex(*w.shape):
        step = np.zeros_like(w)
        step[idx] = h
        fd[idx] = (_entropy(w + step) - _entropy(w - step)) / (2 * h)
    assert np.allclose(grad, fd, atol=1e-6)


def test_linear_least_squares_converges():
    """测试无惩罚的线性模型收敛到最小二乘解"""
    data_rng = np.random.default_rng(0)
    xs = data_rng.standard_normal((64, 3))
    w_star = np.array([1.0, -2.0, 0.5])
    ys = (xs @ w_star + 0.3)[:, None]
    net = init_mlp([3, 1], "identity", 1.0, seed=0)
    trained, log = train(net, (xs, ys), Loss.SQUARED_ERROR,
                         TrainConfig(epochs=400, batch_size=64, learning_rate=0.2))
    assert np.allclose(trained.layers[0].weight[0], w_star, atol=1e-4)
    assert trained.layers[0].bias[0] == pytest.approx(0.3, abs=1e-4)
    assert log.epochs == 400
    assert math.isnan(log.accuracy[-1])


def test_zero_epochs_returns_input(tanh_net, blobs):
    """测试 0 轮训练原样返回输入网络"""
    trained, log = train(tanh_net, blobs, Loss.CROSS_ENTROPY, TrainConfig(epochs=0))
    assert trained is tanh_net
    assert log.epochs == 0


def test_training_is_deterministic(tanh_net, blobs):
    """测试相同种子与配置得到逐位相同的参数"""
    cfg = TrainConfig(epochs=3, seed=5)
    first, _ = train(tanh_net, blobs, Loss.CROSS_ENTROPY, cfg)
    second, _ = train(tanh_net, blobs, Loss.CROSS_ENTROPY, cfg)
    assert first == second
    assert first != tanh_net


def test_identical_pair_configs_give_identical_models(tanh_net, blobs):
    """测试成对配置相同时两个模型逐位相同"""
    cfg = TrainConfig(epochs=2)
    unstable, stable = make_pair(tanh_net, blobs, Loss.CROSS_ENTROPY, cfg, cfg)
    assert unstable == stable


def test_log_rows_have_per_layer_columns(tanh_net, blobs):
    """测试训练日志的逐层列"""
    _, log = train(tanh_net, blobs, Loss.CROSS_ENTROPY, TrainConfig(epochs=2))
    rows = log.to_rows()
    assert len(rows) == 2
    assert {"sigma_max_1", "sigma_max_3", "entropy_3", "loss", "accuracy"} <= set(rows[0])
    assert rows[0]["hessian_top"] is None


def test_strong_top_sv_penalty_shrinks_sigma_max(tanh_net, blobs):
    """测试强 top_sv 惩罚下各层 σ_max 逐轮下降"""
    cfg = TrainConfig(epochs=30, learning_rate=0.05, penalty_kind="top_sv", spectral_penalty_weight=1.0)
    _, log = train(tanh_net, blobs, Loss.CROSS_ENTROPY, cfg)
    history = np.array(log.sigma_max)[[0, 10, 20, 29]]
    assert np.all(np.diff(history, axis=0) < 0.0)


def test_pair_on_blobs(tanh_net, blobs):
    """测试稳定模型各层 σ_max 不超过不稳定模型，且两者都能拟合数据"""
    base = TrainConfig(epochs=40, batch_size=8, learning_rate=0.1, seed=2)
    stable_cfg = TrainConfig(epochs=40, batch_size=8, learning_rate=0.1, seed=2,
                             penalty_kind="top_sv", spectral_penalty_weight=0.05)
    (_, unstable_log), (_, stable_log) = train_pair(tanh_net, blobs, Loss.CROSS_ENTROPY, base, stable_cfg)
    assert all(s <= u for s, u in zip(stable_log.sigma_max[-1], unstable_log.sigma_max[-1]))
    assert unstable_log.accuracy[-1] >= 0.9
    assert stable_log.accuracy[-1] >= 0.9


def test_curvature_guard_rejects_large_step():
    """测试首轮学习率超过 2/λ_max(H) 时被拒绝"""
    net = Mlp([Layer(np.array([[0.0]]), None, "identity")])
    data = (np.array([[2.0]]), np.array([[1.0]]))
    with pytest.raises(StepSizeError):
        train(net, data, Loss.SQUARED_ERROR, TrainConfig(epochs=5, learning_rate=1.0, track_curvature=True))


def test_divergence_aborts_with_log():
    """测试损失超过 1e6 时中止并附带日志"""
    net = Mlp([Layer(np.array([[0.0]]), None, "identity")])
    data = (np.array([[2.0]]), np.array([[1.0]]))
    with pytest.raises(TrainingDivergedError) as exc_info:
        train(net, data, Loss.SQUARED_ERROR, TrainConfig(epochs=50, learning_rate=1.0))
    assert exc_info.value.log.diverged
    assert exc_info.value.log.loss[-1] > 1e6


def test_curvature_is_logged_when_tracked():
    """测试开启曲率跟踪时记录 Hessian 最大特征值"""
    net = Mlp([Layer(np.array([[0.0]]), None, "identity")])
    data = (np.array([[2.0]]), np.array([[1.0]]))
    _, log = train(net, data, Loss.SQUARED_ERROR, TrainConfig(epochs=3, learning_rate=0.1, track_curvature=True))
    assert log.hessian_top == pytest.approx([4.0] * 3, rel=1e-6)
    assert all(b <= a for a, b in zip(log.probe_loss, log.probe_loss[1:]))
