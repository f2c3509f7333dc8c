"""稠密线性代数内核

提供单边 Jacobi 奇异值分解、循环 Jacobi 对称特征分解、半正定矩阵函数
以及矩阵范数。所有运算均为 64 位浮点的纯函数，结果矩阵只读。

Jacobi 旋转按轮转（round-robin）顺序执行：每一轮同时旋转 n/2 个互不
相交的列对，顺序固定，因此结果完全确定。
"""
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, List, Tuple

import numpy as np
from loguru import logger

from .errors import (
    AsymmetricMatrixError,
    DimensionError,
    NonFiniteError,
    NotPositiveSemidefiniteError,
)

# 行优先的实数稠密矩阵，统一用二维 float64 ndarray 表示
Matrix = np.ndarray

JACOBI_TOL = 1e-12
JACOBI_FLOOR = 1e-14
SYM_TOL = 1e-14
MAX_SWEEPS = 60
RANK_TOL = 1e-12
SYMMETRY_TOL = 1e-9
PSD_TOL = 1e-10


@dataclass(frozen=True)
class Svd:
    """奇异值分解 A = U·diag(sigma)·Vᵀ"""
    u: Matrix
    sigma: np.ndarray
    vt: Matrix

    def reconstruct(self) -> Matrix:
        return (self.u * self.sigma) @ self.vt

    def rank(self, tol: float = RANK_TOL) -> int:
        if self.sigma.size == 0 or self.sigma[0] == 0.0:
            return 0
        return int(np.count_nonzero(self.sigma > tol * self.sigma[0]))


@dataclass(frozen=True)
class SymEig:
    """对称特征分解 A = Q·diag(λ)·Qᵀ，特征值降序"""
    eigenvalues: np.ndarray
    eigenvectors: Matrix

    def reconstruct(self) -> Matrix:
        q = self.eigenvectors
        return (q * self.eigenvalues) @ q.T


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def as_matrix(a) -> Matrix:
    """构造矩阵：转换为 float64 二维数组并校验有限性，返回只读副本"""
    m = np.array(a, dtype=np.float64)
    if m.ndim != 2:
        raise DimensionError(f"矩阵必须是二维的，实际维数: {m.ndim}")
    if not np.all(np.isfinite(m)):
        raise NonFiniteError("矩阵包含 NaN 或 Inf")
    return _readonly(m)


def max_norm(a) -> float:
    """‖a‖_max，空矩阵返回 0"""
    a = np.asarray(a, dtype=np.float64)
    return float(np.max(np.abs(a))) if a.size else 0.0


@lru_cache(maxsize=None)
def _round_robin(n: int) -> Tuple[Tuple[np.ndarray, np.ndarray], ...]:
    """生成 n 个下标的轮转配对，每轮的配对互不相交"""
    m = n + (n % 2)
    players = list(range(m))
    rounds: List[Tuple[np.ndarray, np.ndarray]] = []
    for _ in range(m - 1):
        pairs = [(players[i], players[m - 1 - i]) for i in range(m // 2)]
        pairs = [(min(p, q), max(p, q)) for p, q in pairs if p < n and q < n]
        if pairs:
            ps = np.array([p for p, _ in pairs], dtype=np.intp)
            qs = np.array([q for _, q in pairs], dtype=np.intp)
            rounds.append((ps, qs))
        players = [players[0], players[-1]] + players[1:-1]
    return tuple(rounds)


def _rotation(app: np.ndarray, aqq: np.ndarray, apq: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """计算消去 a_pq 的 Jacobi 旋转 (c, s)，a_pq 为 0 时返回单位旋转"""
    active = apq != 0.0
    safe_apq = np.where(active, apq, 1.0)
    zeta = (aqq - app) / (2.0 * safe_apq)
    sign = np.where(zeta >= 0.0, 1.0, -1.0)
    t = sign / (np.abs(zeta) + np.hypot(1.0, zeta))
    t = np.where(active, t, 0.0)
    c = 1.0 / np.sqrt(1.0 + t * t)
    return c, c * t


def _columns_orthogonal(a: np.ndarray) -> bool:
    g = np.swapaxes(a, -1, -2) @ a
    d = np.diagonal(g, axis1=-2, axis2=-1)
    trace = np.sum(d, axis=-1)[..., None, None]
    off = np.abs(g)
    n = g.shape[-1]
    off[..., np.arange(n), np.arange(n)] = 0.0
    thresh = np.maximum(JACOBI_TOL * np.sqrt(np.abs(d[..., :, None] * d[..., None, :])), JACOBI_FLOOR * trace)
    return bool(np.all(off <= thresh))


def _one_sided_jacobi(a: np.ndarray, accumulate_v: bool = True) -> Tuple[np.ndarray, np.ndarray]:
    """对 (..., m, n) 数组（m >= n）做单边 Jacobi，返回列正交的 A·V 与 V"""
    work = np.array(a, dtype=np.float64, copy=True)
    n = work.shape[-1]
    v = np.broadcast_to(np.eye(n), work.shape[:-2] + (n, n)).copy() if accumulate_v else np.empty(0)
    rounds = _round_robin(n)
    for sweep in range(MAX_SWEEPS):
        if _columns_orthogonal(work):
            break
        for ps, qs in rounds:
            p_cols = work[..., :, ps]
            q_cols = work[..., :, qs]
            alpha = np.sum(p_cols * p_cols, axis=-2)
            beta = np.sum(q_cols * q_cols, axis=-2)
            gamma = np.sum(p_cols * q_cols, axis=-2)
            c, s = _rotation(alpha, beta, gamma)
            c = c[..., None, :]
            s = s[..., None, :]
            work[..., :, ps] = c * p_cols - s * q_cols
            work[..., :, qs] = s * p_cols + c * q_cols
            if accumulate_v:
                vp = v[..., :, ps]
                vq = v[..., :, qs]
                v[..., :, ps] = c * vp - s * vq
                v[..., :, qs] = s * vp + c * vq
    else:
        logger.warning(f"单边 Jacobi 在 {MAX_SWEEPS} 次扫描内未完全收敛，形状 {work.shape}")
    return work, v


def _complete_orthonormal(u_r: np.ndarray, k: int) -> np.ndarray:
    """把 m×r 的正交列扩充为 m×k"""
    m, r = u_r.shape
    if r:
        q, rr = np.linalg.qr(u_r)
        u_r = q * np.where(np.diag(rr) < 0.0, -1.0, 1.0)
    if r >= k:
        return u_r
    q, _ = np.linalg.qr(np.hstack([u_r, np.eye(m)]))
    return np.hstack([u_r, q[:, r:k]])


def svd(a) -> Svd:
    """单边 Jacobi 奇异值分解，奇异值个数为 min(rows, cols)"""
    a = as_matrix(a)
    m, n = a.shape
    transposed = n > m
    work = a.T if transposed else a
    b, v = _one_sided_jacobi(work)
    sigma = np.linalg.norm(b, axis=0)
    order = np.argsort(-sigma, kind="stable")
    sigma = sigma[order]
    b = b[:, order]
    v = v[:, order]

    k = sigma.size
    cutoff = RANK_TOL * sigma[0] if k and sigma[0] > 0.0 else 0.0
    r = int(np.count_nonzero(sigma > cutoff)) if k and sigma[0] > 0.0 else 0
    u = _complete_orthonormal(b[:, :r] / sigma[:r], k)

    if transposed:
        u, v = v, u
    return Svd(u=_readonly(u), sigma=_readonly(sigma), vt=_readonly(np.ascontiguousarray(v.T)))


def singular_values(a) -> np.ndarray:
    """只计算奇异值；支持 (B, m, n) 批量输入，返回 (B, min(m, n))"""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim < 2:
        raise DimensionError(f"至少需要二维输入，实际维数: {a.ndim}")
    if not np.all(np.isfinite(a)):
        raise NonFiniteError("矩阵包含 NaN 或 Inf")
    if a.shape[-1] > a.shape[-2]:
        a = np.swapaxes(a, -1, -2)
    b, _ = _one_sided_jacobi(a, accumulate_v=False)
    sigma = np.linalg.norm(b, axis=-2)
    return -np.sort(-sigma, axis=-1)


def spectral_norm(a) -> float:
    """谱范数 ‖a‖₂ = σ₁"""
    s = singular_values(as_matrix(a))
    return float(s[0]) if s.size else 0.0


def check_symmetric(a: Matrix, tol: float = SYMMETRY_TOL) -> None:
    if a.shape[0] != a.shape[1]:
        raise DimensionError(f"需要方阵，实际形状: {a.shape}")
    gap = max_norm(a - a.T)
    if gap > tol * max(1.0, max_norm(a)):
        raise AsymmetricMatrixError(f"矩阵不对称: ‖A − Aᵀ‖_max = {gap:.3e}")


def sym_eig(a) -> SymEig:
    """循环 Jacobi 对称特征分解，输入先对称化，特征值降序"""
    a = as_matrix(a)
    check_symmetric(a)
    work = 0.5 * (a + a.T)
    n = work.shape[0]
    q = np.eye(n)
    rounds = _round_robin(n)
    for sweep in range(MAX_SWEEPS):
        off = work - np.diag(np.diag(work))
        scale = np.linalg.norm(work)
        if scale == 0.0 or max_norm(off) <= SYM_TOL * scale:
            break
        for ps, qs in rounds:
            c, s = _rotation(work[ps, ps], work[qs, qs], work[ps, qs])
            rp = work[ps, :]
            rq = work[qs, :]
            work[ps, :] = c[:, None] * rp - s[:, None] * rq
            work[qs, :] = s[:, None] * rp + c[:, None] * rq
            cp = work[:, ps]
            cq = work[:, qs]
            work[:, ps] = c * cp - s * cq
            work[:, qs] = s * cp + c * cq
            vp = q[:, ps]
            vq = q[:, qs]
            q[:, ps] = c * vp - s * vq
            q[:, qs] = s * vp + c * vq
        work = 0.5 * (work + work.T)
    else:
        logger.warning(f"对称 Jacobi 在 {MAX_SWEEPS} 次扫描内未完全收敛，n = {n}")
    lam = np.diag(work).copy()
    order = np.argsort(-lam, kind="stable")
    return SymEig(eigenvalues=_readonly(lam[order]), eigenvectors=_readonly(q[:, order]))


def _clamped_psd_eigenvalues(eig: SymEig) -> np.ndarray:
    lam = eig.eigenvalues
    if lam.size == 0:
        return lam
    floor = -PSD_TOL * max(1.0, abs(float(lam[0])))
    if lam[-1] < floor:
        raise NotPositiveSemidefiniteError(f"最小特征值 {lam[-1]:.3e} 低于容差 {floor:.3e}")
    return np.maximum(lam, 0.0)


def psd_function(a, fn: Callable[[np.ndarray], np.ndarray], eig: SymEig = None) -> Matrix:
    """对半正定矩阵施加谱函数 Q·diag(fn(λ))·Qᵀ"""
    eig = eig if eig is not None else sym_eig(a)
    lam = _clamped_psd_eigenvalues(eig)
    q = eig.eigenvectors
    out = (q * fn(lam)) @ q.T
    return _readonly(0.5 * (out + out.T))


def psd_exp(a, t: float, eig: SymEig = None) -> Matrix:
    """计算 e^{−tA}"""
    return psd_function(a, lambda lam: np.exp(-t * lam), eig)


def psd_sqrt(a, eig: SymEig = None) -> Matrix:
    """半正定矩阵平方根，负特征值截断为 0"""
    return psd_function(a, np.sqrt, eig)
