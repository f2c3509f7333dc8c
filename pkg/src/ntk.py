"""经验 NTK Gram 矩阵与核梯度流

闭式核梯度流 f_t = y + e^{−tK}(f_0 − y)、标签扰动放大、显式 Euler 交叉
验证以及 Gram 条件数诊断。
"""
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Dict, List, NamedTuple, Optional, Sequence

import numpy as np
from loguru import logger

from .errors import DegenerateSpectrumError, DimensionError, StepSizeError
from .linalg import RANK_TOL, SymEig, as_matrix, check_symmetric, psd_exp, sym_eig
from .net import Mlp, init_mlp

GRAM_SYMMETRY_TOL = 1e-10
GRAM_PSD_TOL = 1e-9
LN2 = math.log(2.0)


@dataclass(frozen=True)
class GramMatrix:
    """对称半正定 Gram 矩阵及其样本编号"""
    k: np.ndarray
    sample_ids: List[int] = field(default_factory=list)

    @classmethod
    def from_matrix(cls, k, sample_ids: Optional[Sequence[int]] = None) -> "GramMatrix":
        k = np.array(as_matrix(k))
        check_symmetric(k, GRAM_SYMMETRY_TOL)
        k = 0.5 * (k + k.T)
        k.setflags(write=False)
        ids = list(sample_ids) if sample_ids is not None else list(range(k.shape[0]))
        return cls(k=k, sample_ids=ids)

    @property
    def size(self) -> int:
        return int(self.k.shape[0])

    @cached_property
    def eig(self) -> SymEig:
        eig = sym_eig(self.k)
        lam = eig.eigenvalues
        if lam.size and lam[-1] < -GRAM_PSD_TOL * max(1.0, abs(float(lam[0]))):
            logger.warning(f"Gram 矩阵最小特征值 {lam[-1]:.3e} 为负，超出容差")
        return eig

    @property
    def eigenvalues(self) -> np.ndarray:
        """截断到非负的特征值（降序）"""
        return np.maximum(self.eig.eigenvalues, 0.0)


class Conditioning(NamedTuple):
    lambda_max: float
    lambda_min_nonzero: float
    kappa: float


@dataclass(frozen=True)
class FlowReport:
    eig: SymEig
    times: np.ndarray
    diff_norm_sq: np.ndarray
    worst_case: np.ndarray
    delta_norm_sq: float

    def to_rows(self) -> List[Dict[str, float]]:
        return [
            {"t": float(t), "diff_norm_sq": float(d), "worst_case": float(w)}
            for t, d, w in zip(self.times, self.diff_norm_sq, self.worst_case)
        ]

    def sidecar(self) -> Dict[str, Any]:
        return {
            "eigenvalues": [float(v) for v in self.eig.eigenvalues],
            "delta_norm_sq": self.delta_norm_sq,
            "points": int(self.times.size),
        }


def stacked_jacobian(net: Mlp, xs) -> np.ndarray:
    """把参数 Jacobian 按行堆叠为 G ∈ R^{N × (C·p)}"""
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    if xs.shape[0] == 0:
        raise DimensionError("样本为空，无法构造 Gram 矩阵")
    jac = net.parameter_jacobians(xs)
    return jac.reshape(jac.shape[0], -1)


def gram(net: Mlp, xs, sample_ids: Optional[Sequence[int]] = None) -> GramMatrix:
    """经验 NTK：K_ij = tr(∇_θf(x_i)·∇_θf(x_j)ᵀ)"""
    g = stacked_jacobian(net, xs)
    k = g @ g.T
    return GramMatrix.from_matrix(0.5 * (k + k.T), sample_ids)


def lambda_max_bound(g: GramMatrix) -> float:
    """λ_max(K) ≤ N·max_i ‖∇_θ f(x_i)‖² = N·max_i K_ii"""
    return float(g.size * np.max(np.diag(g.k)))


def conditioning(g: GramMatrix) -> Conditioning:
    """κ = λ_max / λ_min，只统计高于秩容差的特征值；全零 Gram 返回 κ = +∞"""
    lam = g.eigenvalues
    if lam.size == 0 or lam[0] <= 0.0:
        logger.warning("Gram 矩阵全零，条件数退化")
        return Conditioning(0.0, 0.0, math.inf)
    nonzero = lam[lam > RANK_TOL * lam[0]]
    lam_min = float(nonzero[-1])
    return Conditioning(float(lam[0]), lam_min, float(lam[0] / lam_min))


def default_times(g: GramMatrix, n: int = 32) -> np.ndarray:
    """[1e-3/λ_max, 10/λ_min] 上的对数网格"""
    cond = conditioning(g)
    if not math.isfinite(cond.kappa):
        raise DegenerateSpectrumError("Gram 矩阵全零，无法构造默认时间网格")
    return np.geomspace(1e-3 / cond.lambda_max, 10.0 / cond.lambda_min_nonzero, n)


def _check_times(times) -> np.ndarray:
    times = np.atleast_1d(np.asarray(times, dtype=np.float64))
    if np.any(times < 0.0):
        raise ValueError(f"时间必须非负，最小值 {times.min()}")
    if np.any(np.diff(times) < 0.0):
        raise ValueError("时间网格必须递增")
    return times


def amplification_factors(lambdas, t: float) -> np.ndarray:
    """(1 − e^{−λt})²"""
    return np.expm1(-np.maximum(np.asarray(lambdas, dtype=np.float64), 0.0) * t) ** 2


def amplification_sum(lambdas, t: float) -> float:
    return float(np.sum(amplification_factors(lambdas, t)))


def worst_case_amplification(lambdas, t: float, delta_norm_sq: float = 1.0) -> float:
    """sup_{‖δy‖² = delta_norm_sq} ‖f_t − f̃_t‖²，在最大因子对应的特征方向取到"""
    return float(np.max(amplification_factors(lambdas, t)) * delta_norm_sq)


def in_convex_regime(lambdas, t: float) -> bool:
    """(1 − e^{−λt})² 在 λt ≤ ln 2 时为凸函数，此时放大和是 Schur 凸的"""
    return bool(np.max(lambdas) * t <= LN2)


def flow_difference(g: GramMatrix, delta_y, times) -> FlowReport:
    """标签扰动 δy 下两条核梯度流的差：Σ_k (1 − e^{−λ_k t})² ⟨u_k, δy⟩²"""
    delta_y = np.asarray(delta_y, dtype=np.float64).reshape(-1)
    if delta_y.shape[0] != g.size:
        raise DimensionError(f"δy 长度应为 {g.size}，实际 {delta_y.shape[0]}")
    times = _check_times(times)
    lam = g.eigenvalues
    coeff = (g.eig.eigenvectors.T @ delta_y) ** 2
    norm_sq = float(delta_y @ delta_y)
    factors = np.expm1(-np.outer(times, lam)) ** 2
    return FlowReport(
        eig=g.eig,
        times=times,
        diff_norm_sq=factors @ coeff,
        worst_case=np.max(factors, axis=1) * norm_sq,
        delta_norm_sq=norm_sq,
    )


def closed_form_flow(g: GramMatrix, y, f0, t: float) -> np.ndarray:
    """f_t = y + e^{−tK}(f_0 − y)"""
    y = np.asarray(y, dtype=np.float64)
    f0 = np.asarray(f0, dtype=np.float64)
    return y + psd_exp(g.k, t, g.eig) @ (f0 - y)


def check_step_size(g: GramMatrix, eta: float) -> None:
    lam_max = float(g.eigenvalues[0]) if g.size else 0.0
    if eta <= 0.0:
        raise StepSizeError(f"步长必须为正: {eta}")
    if lam_max > 0.0 and eta >= 2.0 / lam_max:
        raise StepSizeError(
            f"步长 η = {eta:.6g} ≥ 2/λ_max = {2.0 / lam_max:.6g}，违反曲率步长界，梯度下降不稳定"
        )


def simulate_discrete_flow(g: GramMatrix, y, f0, eta: float, steps: int) -> np.ndarray:
    """显式 Euler：f ← f − η·K·(f − y)，返回 (steps + 1, N) 轨迹"""
    check_step_size(g, eta)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    f = np.array(f0, dtype=np.float64).reshape(-1)
    if y.shape[0] != g.size or f.shape[0] != g.size:
        raise DimensionError(f"y 与 f0 长度应为 {g.size}")
    trajectory = np.empty((steps + 1, g.size))
    trajectory[0] = f
    for step in range(steps):
        f = f - eta * (g.k @ (f - y))
        trajectory[step + 1] = f
    return trajectory


def euler_flow_difference(g: GramMatrix, delta_y, eta: float, steps: int) -> float:
    """Euler 离散流下标签扰动引起的差 ‖f_n − f̃_n‖²（f_0 相同）"""
    delta_y = np.asarray(delta_y, dtype=np.float64)
    zeros = np.zeros(g.size)
    base = simulate_discrete_flow(g, zeros, zeros, eta, steps)[-1]
    perturbed = simulate_discrete_flow(g, delta_y, zeros, eta, steps)[-1]
    d = base - perturbed
    return float(d @ d)


def width_sweep(widths: Sequence[int], xs, delta_y, times, seed: int = 0, depth: int = 2,
                activation: str = "tanh", gain: float = 1.0) -> List[Dict[str, float]]:
    """不同宽度的标量输出网络在同一样本上的标签扰动放大"""
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    rows = []
    for width in widths:
        net = init_mlp([xs.shape[1]] + [int(width)] * depth + [1], activation, gain, seed)
        g = gram(net, xs)
        report = flow_difference(g, delta_y, times)
        cond = conditioning(g)
        for row in report.to_rows():
            rows.append({"width": int(width), "kappa": cond.kappa, **row})
        logger.info(f"宽度 {width}: λ_max = {cond.lambda_max:.4g}, κ = {cond.kappa:.4g}, "
                    f"最终最坏放大 {report.worst_case[-1]:.4g}")
    return rows
