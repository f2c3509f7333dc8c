"""奇异值向量上的谱泛函

谱熵（自然对数）、谱集中度、归因条件数以及优超关系工具。
"""
import math
from dataclasses import dataclass
from typing import Any, Dict, Sequence, Tuple

import numpy as np
from loguru import logger

from .errors import DegenerateSpectrumError, MajorizationInputError
from .linalg import RANK_TOL, singular_values

ACN_SENTINEL = math.inf
MAJORIZATION_TOL = 1e-9


@dataclass(frozen=True)
class Spectrum:
    """降序非负奇异值；低于 rank_tol·σ₁ 的值按精确零处理"""
    sigma: np.ndarray
    rank_tol: float = RANK_TOL

    @classmethod
    def of(cls, values: Sequence[float], rank_tol: float = RANK_TOL) -> "Spectrum":
        sigma = np.sort(np.asarray(values, dtype=np.float64).reshape(-1))[::-1].copy()
        if sigma.size == 0:
            raise DegenerateSpectrumError("谱不能为空")
        if not np.all(np.isfinite(sigma)):
            raise DegenerateSpectrumError("谱包含 NaN 或 Inf")
        if sigma[-1] < 0.0:
            raise DegenerateSpectrumError(f"奇异值必须非负，最小值 {sigma[-1]}")
        if sigma[0] > 0.0:
            sigma[sigma <= rank_tol * sigma[0]] = 0.0
        sigma.setflags(write=False)
        return cls(sigma=sigma, rank_tol=rank_tol)

    @classmethod
    def from_matrix(cls, a, rank_tol: float = RANK_TOL) -> "Spectrum":
        return cls.of(singular_values(a), rank_tol)

    def __len__(self) -> int:
        return int(self.sigma.size)

    @property
    def total(self) -> float:
        return float(np.sum(self.sigma))

    @property
    def rank(self) -> int:
        return int(np.count_nonzero(self.sigma))

    def weights(self) -> np.ndarray:
        """归一化谱权重 p_k = σ_k / Σσ_j；零谱返回全零"""
        total = self.total
        return self.sigma / total if total > 0.0 else np.zeros_like(self.sigma)


@dataclass(frozen=True)
class SpectralSummary:
    sigma: Spectrum
    entropy_nats: float
    sc_quarter: float
    sc_half: float
    acn: float
    top: float
    trace_sum: float

    def to_dict(self, include_sigma: bool = True) -> Dict[str, Any]:
        out: Dict[str, Any] = {
            "entropy_nats": self.entropy_nats,
            "sc_quarter": self.sc_quarter,
            "sc_half": self.sc_half,
            "acn": self.acn,
            "top": self.top,
            "trace_sum": self.trace_sum,
        }
        if include_sigma:
            out["sigma"] = [float(v) for v in self.sigma.sigma]
        return out


def spectral_entropy(s: Spectrum) -> float:
    """H_S = −Σ p_k ln p_k；零谱约定为 0"""
    p = s.weights()
    p = p[p > 0.0]
    if p.size == 0:
        return 0.0
    return max(0.0, float(-np.sum(p * np.log(p))))


def spectral_concentration(s: Spectrum, alpha: float) -> float:
    """前 ⌈αr⌉ 个奇异值占总质量的比例"""
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha 必须在 (0, 1] 内: {alpha}")
    total = s.total
    if total <= 0.0:
        raise DegenerateSpectrumError("零谱的谱集中度无定义")
    k = max(1, math.ceil(alpha * len(s) - 1e-9))
    return float(np.sum(s.sigma[:k]) / total)


def attribution_condition_number(s: Spectrum) -> float:
    """κ_attr = σ₁ / median(σ)；偶数长度取中间两个的均值"""
    median = float(np.median(s.sigma))
    if median <= 0.0:
        raise DegenerateSpectrumError("谱中位数为 0，归因条件数无定义")
    return float(s.sigma[0] / median)


def majorizes(a: Spectrum, b: Spectrum) -> bool:
    """a 是否优超 b（等长、等和，部分和逐项占优）"""
    if len(a) != len(b):
        raise MajorizationInputError(f"长度不一致: {len(a)} vs {len(b)}")
    ta, tb = a.total, b.total
    scale = max(abs(ta), abs(tb), 1e-300)
    if abs(ta - tb) > MAJORIZATION_TOL * scale:
        raise MajorizationInputError(f"总和不一致: {ta} vs {tb}")
    gap = np.cumsum(a.sigma) - np.cumsum(b.sigma)
    return bool(np.all(gap >= -MAJORIZATION_TOL * scale))


def renyi2_bound_holds(s: Spectrum, tol: float = 1e-12) -> bool:
    """Σp_k² ≥ exp(−H_S)"""
    p = s.weights()
    if s.total <= 0.0:
        return True
    return bool(np.sum(p * p) >= math.exp(-spectral_entropy(s)) - tol)


def summarize(s: Spectrum) -> SpectralSummary:
    """汇总单个算子的谱诊断；中位数为 0 时 acn 取 +∞ 哨兵值"""
    if s.total > 0.0:
        sc_quarter = spectral_concentration(s, 0.25)
        sc_half = spectral_concentration(s, 0.5)
    else:
        sc_quarter = sc_half = 0.0
    try:
        acn = attribution_condition_number(s)
    except DegenerateSpectrumError:
        logger.debug(f"谱退化（中位数为 0），acn 使用哨兵值，秩 {s.rank}/{len(s)}")
        acn = ACN_SENTINEL
    return SpectralSummary(
        sigma=s,
        entropy_nats=spectral_entropy(s),
        sc_quarter=sc_quarter,
        sc_half=sc_half,
        acn=acn,
        top=float(s.sigma[0]),
        trace_sum=s.total,
    )


def summarize_matrix(a) -> SpectralSummary:
    return summarize(Spectrum.from_matrix(a))


# ---------------------------------------------------------------------- 优超构造


def robin_hood_transfer(v: Sequence[float], i: int, j: int, amount: float) -> np.ndarray:
    """把 amount 从 v[i] 转移到 v[j]，要求 0 ≤ amount ≤ (v[i] − v[j]) / 2"""
    v = np.array(v, dtype=np.float64)
    if not 0.0 <= amount <= 0.5 * (v[i] - v[j]) + 1e-15:
        raise ValueError(f"转移量 {amount} 超出 [0, (v_i − v_j)/2]")
    v[i] -= amount
    v[j] += amount
    return v


def random_majorization_pair(rng: np.random.Generator, r: int, total: float = 1.0,
                             transfers: int = 3) -> Tuple[Spectrum, Spectrum]:
    """生成等和向量对 (a, b)，b 由 a 经若干次 Robin-Hood 转移得到，因此 a 优超 b"""
    a = rng.exponential(size=r)
    a = total * a / np.sum(a)
    b = a.copy()
    for _ in range(transfers):
        i, j = rng.choice(r, size=2, replace=False)
        if b[i] < b[j]:
            i, j = j, i
        b = robin_hood_transfer(b, i, j, rng.uniform() * 0.5 * (b[i] - b[j]))
    return Spectrum.of(a, rank_tol=0.0), Spectrum.of(b, rank_tol=0.0)


def anisotropy_family(r: int, a: float) -> Spectrum:
    """单参数等和谱族 (1+a, 1, …, 1, 1−a)，a ∈ [0, 1)"""
    if r < 3:
        raise ValueError("谱族长度至少为 3")
    if not 0.0 <= a < 1.0:
        raise ValueError(f"a 必须在 [0, 1) 内: {a}")
    values = np.ones(r)
    values[0] += a
    values[-1] -= a
    return Spectrum.of(values, rank_tol=0.0)
