import numpy as np
import pytest

from src.errors import AsymmetricMatrixError, DimensionError, NonFiniteError, NotPositiveSemidefiniteError
from src.linalg import as_matrix, psd_exp, psd_sqrt, singular_values, spectral_norm, svd, sym_eig


@pytest.mark.parametrize("shape", [(5, 3), (3, 5), (4, 4), (1, 6), (6, 1)])
def test_svd_reconstructs_and_is_orthonormal(rng, shape):
    """测试 SVD 重构误差与奇异向量正交性"""
    a = rng.standard_normal(shape)
    dec = svd(a)
    k = min(shape)
    assert dec.sigma.shape == (k,)
    assert np.all(np.diff(dec.sigma) <= 0.0)
    assert np.max(np.abs(dec.reconstruct() - a)) <= 1e-10 * (1.0 + np.max(np.abs(a)))
    assert np.allclose(dec.u.T @ dec.u, np.eye(k), atol=1e-10)
    assert np.allclose(dec.vt @ dec.vt.T, np.eye(k), atol=1e-10)


def test_svd_matches_numpy_oracle(rng):
    """测试奇异值与 numpy 结果一致"""
    a = rng.standard_normal((7, 4))
    assert np.allclose(svd(a).sigma, np.linalg.svd(a, compute_uv=False), rtol=1e-10)


def test_svd_zero_matrix():
    """测试零矩阵的奇异值全为 0 且 U 仍正交"""
    dec = svd(np.zeros((3, 2)))
    assert np.all(dec.sigma == 0.0)
    assert dec.rank() == 0
    assert np.allclose(dec.u.T @ dec.u, np.eye(2), atol=1e-12)


def test_svd_identity():
    """测试单位矩阵的奇异值"""
    assert np.allclose(svd(np.eye(4)).sigma, np.ones(4), atol=1e-14)


def test_svd_rank_one():
    """测试秩一矩阵只有一个非零奇异值"""
    u = np.array([1.0, 2.0, 2.0])
    v = np.array([3.0, 4.0])
    dec = svd(np.outer(u, v))
    assert dec.sigma[0] == pytest.approx(15.0, rel=1e-12)
    assert dec.rank() == 1


def test_svd_rejects_nan():
    """测试包含 NaN 的输入被拒绝"""
    with pytest.raises(NonFiniteError):
        svd(np.array([[1.0, np.nan], [0.0, 1.0]]))


def test_as_matrix_rejects_vector():
    """测试一维输入被拒绝"""
    with pytest.raises(DimensionError):
        as_matrix(np.ones(3))


def test_batched_singular_values(rng):
    """测试批量奇异值与逐个计算一致"""
    stack = rng.standard_normal((6, 3, 5))
    batched = singular_values(stack)
    assert batched.shape == (6, 3)
    for a, s in zip(stack, batched):
        assert np.allclose(s, np.linalg.svd(a, compute_uv=False), rtol=1e-10)


def test_spectral_norm(rng):
    """测试谱范数"""
    a = rng.standard_normal((4, 6))
    assert spectral_norm(a) == pytest.approx(np.linalg.norm(a, 2), rel=1e-10)


def test_sym_eig_reconstructs(rng):
    """测试对称特征分解的重构与降序"""
    a = rng.standard_normal((6, 6))
    s = a + a.T
    eig = sym_eig(s)
    assert np.all(np.diff(eig.eigenvalues) <= 0.0)
    assert np.max(np.abs(eig.reconstruct() - s)) <= 1e-10 * np.max(np.abs(s))
    q = eig.eigenvectors
    assert np.allclose(q.T @ q, np.eye(6), atol=1e-10)
    assert np.allclose(eig.eigenvalues, np.sort(np.linalg.eigvalsh(s))[::-1], atol=1e-10)


def test_sym_eig_diagonal():
    """测试对角矩阵的特征值就是对角元"""
    eig = sym_eig(np.diag([1.0, 3.0, 2.0]))
    assert np.array_equal(eig.eigenvalues, np.array([3.0, 2.0, 1.0]))


def test_sym_eig_rejects_asymmetric():
    """测试明显不对称的矩阵被拒绝"""
    with pytest.raises(AsymmetricMatrixError):
        sym_eig(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_sym_eig_rejects_non_square():
    """测试非方阵被拒绝"""
    with pytest.raises(DimensionError):
        sym_eig(np.ones((2, 3)))


def test_psd_exp_diagonal():
    """测试 e^{−tA} 在对角矩阵上的取值"""
    out = psd_exp(np.diag([0.0, 1.0, 2.0]), 0.5)
    assert np.allclose(np.diag(out), np.exp([0.0, -0.5, -1.0]), atol=1e-14)


def test_psd_exp_at_zero_is_identity(rng):
    """测试 t = 0 时为单位矩阵"""
    a = rng.standard_normal((4, 4))
    assert np.allclose(psd_exp(a @ a.T, 0.0), np.eye(4), atol=1e-12)


def test_psd_sqrt_squares_back(rng):
    """测试平方根再平方还原原矩阵"""
    a = rng.standard_normal((5, 3))
    k = a @ a.T
    root = psd_sqrt(k)
    assert np.allclose(root @ root, k, atol=1e-10)


def test_psd_function_rejects_indefinite():
    """测试不定矩阵被拒绝"""
    with pytest.raises(NotPositiveSemidefiniteError):
        psd_sqrt(np.diag([1.0, -1.0]))
