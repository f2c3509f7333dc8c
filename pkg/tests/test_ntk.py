import math

import numpy as np
import pytest

from src.errors import AsymmetricMatrixError, DimensionError, StepSizeError
from src.linalg import singular_values
from src.ntk import (
    GramMatrix, amplification_sum, closed_form_flow, conditioning, default_times, euler_flow_difference,
    flow_difference, gram, in_convex_regime, lambda_max_bound, simulate_discrete_flow, stacked_jacobian,
    width_sweep, worst_case_amplification,
)
from src.spectra import random_majorization_pair
from src.selftest import NTK_RANK_CUTOFF, euler_gap_ratio, squared_singular_gap


def test_gram_eigenvalues_are_squared_singular_values(tanh_net, rng):
    """测试 Gram 特征值等于堆叠参数 Jacobian 奇异值的平方"""
    xs = rng.standard_normal((10, 2))
    g = gram(tanh_net, xs)
    sv = singular_values(stacked_jacobian(tanh_net, xs))
    kept = sv > NTK_RANK_CUTOFF * sv[0]
    assert kept.sum() >= 5
    relative = np.abs(g.eigenvalues[:kept.sum()] - sv[kept] ** 2) / sv[kept] ** 2
    assert np.all(relative <= 1e-8)
    assert squared_singular_gap(g.eigenvalues, sv) <= 1e-8


def test_squared_singular_gap_is_per_eigenvalue():
    """测试小特征值的相对误差不会被最大特征值掩盖，低于截断的部分不参与比较"""
    sigma = np.array([100.0, 1.0, 1e-5])
    lam = np.array([1e4, 1.5, 0.0])
    assert squared_singular_gap(lam, sigma) == pytest.approx(0.5)
    assert np.max(np.abs(lam - sigma ** 2)) / sigma[0] ** 2 < 1e-4
    assert squared_singular_gap([1e4, 1.0, 0.0], sigma) == 0.0
    assert squared_singular_gap([0.0], [0.0]) == 0.0


def test_gram_is_psd_and_symmetric(tanh_net, rng):
    """测试 Gram 矩阵对称半正定"""
    g = gram(tanh_net, rng.standard_normal((6, 2)))
    assert np.array_equal(g.k, g.k.T)
    assert g.eig.eigenvalues[-1] >= -1e-10 * g.eig.eigenvalues[0]
    assert g.sample_ids == list(range(6))


def test_gram_from_asymmetric_matrix_rejected():
    """测试不对称矩阵不能构造 Gram"""
    with pytest.raises(AsymmetricMatrixError):
        GramMatrix.from_matrix([[1.0, 0.5], [0.0, 1.0]])


def test_lambda_max_bound(tanh_net, rng):
    """测试 λ_max ≤ N·max K_ii"""
    g = gram(tanh_net, rng.standard_normal((8, 2)))
    assert conditioning(g).lambda_max <= lambda_max_bound(g) * (1 + 1e-12)


def test_conditioning_of_zero_gram():
    """测试全零 Gram 的条件数为 +∞"""
    cond = conditioning(GramMatrix.from_matrix(np.zeros((3, 3))))
    assert cond.lambda_max == 0.0
    assert math.isinf(cond.kappa)


def test_flow_difference_diagonal():
    """测试对角 Gram 上的闭式解"""
    g = GramMatrix.from_matrix(np.diag([1.0, 2.0]))
    report = flow_difference(g, [1.0, 1.0], [0.0, 1.0])
    expected = (1 - math.exp(-1.0)) ** 2 + (1 - math.exp(-2.0)) ** 2
    assert report.diff_norm_sq[0] == 0.0
    assert report.diff_norm_sq[1] == pytest.approx(expected, rel=1e-12)
    assert report.worst_case[1] == pytest.approx(2 * (1 - math.exp(-2.0)) ** 2, rel=1e-12)
    assert report.diff_norm_sq[1] <= report.worst_case[1]


def test_flow_difference_is_monotone_in_time(tanh_net, rng):
    """测试差值随时间单调不减"""
    g = gram(tanh_net, rng.standard_normal((5, 2)))
    report = flow_difference(g, rng.standard_normal(5), default_times(g, 16))
    assert np.all(np.diff(report.diff_norm_sq) >= -1e-12)
    assert len(report.to_rows()) == 16


def test_zero_gram_has_no_amplification():
    """测试 K = 0 时标签扰动不会传播"""
    g = GramMatrix.from_matrix(np.zeros((3, 3)))
    report = flow_difference(g, [1.0, -1.0, 2.0], [0.0, 5.0, 50.0])
    assert np.all(report.diff_norm_sq == 0.0)


def test_flow_rejects_bad_inputs():
    """测试时间为负或 δy 长度错误"""
    g = GramMatrix.from_matrix(np.eye(2))
    with pytest.raises(ValueError):
        flow_difference(g, [1.0, 1.0], [-1.0])
    with pytest.raises(DimensionError):
        flow_difference(g, [1.0, 1.0, 1.0], [1.0])


def test_closed_form_flow_converges_to_labels():
    """测试正定 Gram 上 f_t → y"""
    g = GramMatrix.from_matrix(np.diag([1.0, 3.0]))
    y = np.array([1.0, -2.0])
    assert np.allclose(closed_form_flow(g, y, np.zeros(2), 50.0), y, atol=1e-12)
    assert np.allclose(closed_form_flow(g, y, np.zeros(2), 0.0), np.zeros(2), atol=1e-15)


def test_euler_is_first_order():
    """测试 Euler 误差随步长减半而减半"""
    ratio, consistency = euler_gap_ratio(seed=5)
    assert 1.6 <= ratio <= 2.4
    assert consistency <= 1e-9


def test_euler_diagonal_case():
    """测试 K = diag(1, 2)、t = 10 时的一阶误差比"""
    g = GramMatrix.from_matrix(np.diag([1.0, 2.0]))
    delta = np.array([1.0, 1.0])
    closed = flow_difference(g, delta, [10.0]).diff_norm_sq[0]
    gap1 = abs(euler_flow_difference(g, delta, 1e-2, 1000) - closed)
    gap2 = abs(euler_flow_difference(g, delta, 5e-3, 2000) - closed)
    assert 1.6 <= gap1 / gap2 <= 2.4


def test_step_size_guard():
    """测试 η ≥ 2/λ_max 被拒绝"""
    g = GramMatrix.from_matrix(np.diag([4.0, 1.0]))
    with pytest.raises(StepSizeError):
        simulate_discrete_flow(g, np.zeros(2), np.zeros(2), 0.5, 10)
    trajectory = simulate_discrete_flow(g, np.ones(2), np.zeros(2), 0.1, 10)
    assert trajectory.shape == (11, 2)


def test_schur_convexity_in_convex_regime(rng):
    """测试凸区间内放大和与最坏放大都保持优超顺序"""
    for t in (0.1, 1.0, 10.0):
        for _ in range(300):
            a, b = random_majorization_pair(rng, int(rng.integers(2, 8)), total=math.log(2.0) / t)
            assert in_convex_regime(a.sigma, t)
            assert amplification_sum(a.sigma, t) >= amplification_sum(b.sigma, t) - 1e-12
            assert worst_case_amplification(a.sigma, t) >= worst_case_amplification(b.sigma, t) - 1e-12


def test_sum_ordering_fails_outside_convex_regime():
    """测试凸区间外放大和可以违反优超顺序"""
    assert not in_convex_regime([2.0, 0.0], 10.0)
    assert amplification_sum([2.0, 0.0], 10.0) < amplification_sum([1.0, 1.0], 10.0)
    assert worst_case_amplification([2.0, 0.0], 10.0) >= worst_case_amplification([1.0, 1.0], 10.0)


def test_width_sweep_rows(rng):
    """测试宽度扫描的输出行"""
    xs = rng.standard_normal((4, 2))
    rows = width_sweep([3, 6], xs, rng.standard_normal(4), [0.1, 1.0], seed=1)
    assert len(rows) == 4
    assert {row["width"] for row in rows} == {3, 6}
    assert all(row["diff_norm_sq"] <= row["worst_case"] + 1e-12 for row in rows)
