"""带谱正则的小规模 SGD 训练

逐层权重谱惩罚：top_sv 为 λ_s·Σσ_max(W_i)²，entropy 为 −λ_s·ΣH_S(W_i)。
用于生成“不稳定 / 稳定”成对模型。
"""
import math
from dataclasses import dataclass, field, fields, replace
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np
from loguru import logger
from tqdm import tqdm

from .errors import StepSizeError, TrainingDivergedError
from .linalg import singular_values, svd, sym_eig
from .net import DEFAULT_HESSIAN_CAP, Loss, Mlp, Params
from .spectra import Spectrum, spectral_entropy

POWER_ITERATIONS = 20
POWER_TOL = 1e-8
GAP_TOL = 1e-8
ENTROPY_FD_STEP = 1e-6
SMOOTH_EPS = 1e-12
DIVERGENCE_LOSS = 1e6


class PenaltyKind(str, Enum):
    NONE = "none"
    TOP_SV = "top_sv"
    ENTROPY = "entropy"


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 32
    learning_rate: float = 0.05
    seed: int = 0
    spectral_penalty_weight: float = 0.0
    penalty_kind: PenaltyKind = PenaltyKind.NONE
    track_curvature: bool = False
    probe_size: int = 64
    hessian_cap: int = DEFAULT_HESSIAN_CAP

    def __post_init__(self):
        object.__setattr__(self, "penalty_kind", PenaltyKind(self.penalty_kind))
        if not self.learning_rate > 0.0:
            raise ValueError(f"learning_rate 必须为正: {self.learning_rate}")
        if self.spectral_penalty_weight < 0.0:
            raise ValueError(f"spectral_penalty_weight 不能为负: {self.spectral_penalty_weight}")
        if self.epochs < 0:
            raise ValueError(f"epochs 不能为负: {self.epochs}")
        if self.batch_size < 1 or self.probe_size < 1:
            raise ValueError("batch_size 与 probe_size 至少为 1")

    @property
    def penalized(self) -> bool:
        return self.penalty_kind is not PenaltyKind.NONE and self.spectral_penalty_weight > 0.0

    def differs_only_in_penalty(self, other: "TrainConfig") -> bool:
        neutral = {"spectral_penalty_weight": 0.0, "penalty_kind": PenaltyKind.NONE}
        return replace(self, **neutral) == replace(other, **neutral)


@dataclass
class TrainLog:
    loss: List[float] = field(default_factory=list)
    accuracy: List[float] = field(default_factory=list)
    sigma_max: List[List[float]] = field(default_factory=list)
    weight_entropy: List[List[float]] = field(default_factory=list)
    probe_loss: List[float] = field(default_factory=list)
    learning_rate: List[float] = field(default_factory=list)
    hessian_top: List[Optional[float]] = field(default_factory=list)
    diverged: bool = False

    @property
    def epochs(self) -> int:
        return len(self.loss)

    def to_rows(self) -> List[Dict[str, float]]:
        rows = []
        for e in range(self.epochs):
            row: Dict[str, float] = {
                "epoch": e + 1,
                "loss": self.loss[e],
                "accuracy": self.accuracy[e],
                "probe_loss": self.probe_loss[e],
                "learning_rate": self.learning_rate[e],
                "hessian_top": self.hessian_top[e],
            }
            for i, (s, h) in enumerate(zip(self.sigma_max[e], self.weight_entropy[e])):
                row[f"sigma_max_{i + 1}"] = s
                row[f"entropy_{i + 1}"] = h
            rows.append(row)
        return rows


# ---------------------------------------------------------------------- 惩罚梯度


def power_iteration(w: np.ndarray, v0: Optional[np.ndarray] = None, iterations: int = POWER_ITERATIONS,
                    tol: float = POWER_TOL) -> Tuple[float, np.ndarray, np.ndarray]:
    """最大奇异三元组 (σ, u, v)，v0 为热启动向量"""
    n = w.shape[1]
    if v0 is None or not np.any(v0):
        v0 = np.random.default_rng(n).standard_normal(n)
    v = v0 / np.linalg.norm(v0)
    sigma = 0.0
    for _ in range(iterations):
        u = w @ v
        norm_u = np.linalg.norm(u)
        if norm_u == 0.0:
            return 0.0, np.zeros(w.shape[0]), v
        v_new = w.T @ (u / norm_u)
        sigma_new = float(np.linalg.norm(v_new))
        v_new = v_new / sigma_new
        converged = abs(sigma_new - sigma) <= tol * sigma_new
        v, sigma = v_new, sigma_new
        if converged:
            break
    return sigma, w @ v / sigma, v


def _second_singular_value(w: np.ndarray, sigma: float, v: np.ndarray, iterations: int) -> float:
    """在 WᵀW − σ²vvᵀ 上做幂迭代估计 σ₂"""
    if min(w.shape) < 2:
        return 0.0
    gram = w.T @ w - sigma * sigma * np.outer(v, v)
    x = np.random.default_rng(w.shape[1] + 1).standard_normal(w.shape[1])
    x -= (x @ v) * v
    lam = 0.0
    for _ in range(iterations):
        y = gram @ x
        norm = np.linalg.norm(y)
        if norm == 0.0:
            return 0.0
        x = y / norm
        lam = float(x @ gram @ x)
    return math.sqrt(max(lam, 0.0))


def top_sv_penalty_gradient(w: np.ndarray, v0: Optional[np.ndarray] = None, iterations: int = POWER_ITERATIONS,
                            tol: float = POWER_TOL) -> Tuple[Optional[np.ndarray], np.ndarray]:
    """∂σ_max(W)²/∂W = 2σ·u·vᵀ

    Returns:
        (梯度, 更新后的热启动向量)；最大奇异值退化（与 σ₂ 间隔 < 1e-8）时梯度为 None
    """
    sigma, u, v = power_iteration(w, v0, iterations, tol)
    if sigma == 0.0:
        return None, v
    if sigma - _second_singular_value(w, sigma, v, iterations) < GAP_TOL * max(sigma, 1.0):
        logger.debug(f"最大奇异值退化 (σ = {sigma:.6g})，本步跳过该层惩罚梯度")
        return None, v
    return 2.0 * sigma * np.outer(u, v), v


def _smooth_entropy(sigma: np.ndarray) -> float:
    total = float(np.sum(sigma))
    if total <= 0.0:
        return 0.0
    p = sigma / total
    return float(-np.sum(p * np.log(p + SMOOTH_EPS)))


def entropy_penalty_gradient(w: np.ndarray, h: float = ENTROPY_FD_STEP) -> np.ndarray:
    """∂H_S(W)/∂W = Σ_k (∂H/∂σ_k)·u_k·v_kᵀ，∂H/∂σ_k 用中心差分"""
    dec = svd(w)
    sigma = dec.sigma
    step = h * max(float(sigma[0]) if sigma.size else 0.0, 1.0)
    dh = np.empty_like(sigma)
    for k in range(sigma.size):
        plus, minus = sigma.copy(), sigma.copy()
        plus[k] += step
        minus[k] = max(minus[k] - step, 0.0)
        dh[k] = (_smooth_entropy(plus) - _smooth_entropy(minus)) / (plus[k] - minus[k])
    r = sigma.size
    return (dec.u[:, :r] * dh) @ dec.vt[:r]


# ---------------------------------------------------------------------- 训练器


def _as_arrays(data) -> Tuple[np.ndarray, np.ndarray]:
    if hasattr(data, "arrays"):
        return data.arrays()
    xs, ys = data
    return np.atleast_2d(np.asarray(xs, dtype=np.float64)), np.atleast_2d(np.asarray(ys, dtype=np.float64))


def _accuracy(outputs: np.ndarray, ys: np.ndarray) -> float:
    if outputs.shape[1] < 2:
        return math.nan
    return float(np.mean(np.argmax(outputs, axis=1) == np.argmax(ys, axis=1)))


class Trainer:
    """小批量 SGD，洗牌顺序只由种子决定"""

    def __init__(self, net: Mlp, loss: Loss, cfg: TrainConfig):
        self.net = net
        self.loss = Loss(loss)
        self.cfg = cfg
        self.theta = net.parameters()
        self.log = TrainLog()
        self._power_vectors: List[Optional[np.ndarray]] = [None] * len(net.layers)
        self._weight_slices = self._layout(net)

    @staticmethod
    def _layout(net: Mlp) -> List[slice]:
        slices, pos = [], 0
        for layer in net.layers:
            slices.append(slice(pos, pos + layer.weight.size))
            pos += layer.parameter_count
        return slices

    @property
    def params(self) -> Params:
        return self.net.unflatten(self.theta)

    def penalty_gradient(self, params: Params) -> np.ndarray:
        grad = np.zeros_like(self.theta)
        if not self.cfg.penalized:
            return grad
        weight = self.cfg.spectral_penalty_weight
        for i, ((w, _), sl) in enumerate(zip(params, self._weight_slices)):
            if self.cfg.penalty_kind is PenaltyKind.TOP_SV:
                g, self._power_vectors[i] = top_sv_penalty_gradient(w, self._power_vectors[i])
                if g is None:
                    continue
                grad[sl] = weight * g.reshape(-1)
            else:
                grad[sl] = -weight * entropy_penalty_gradient(w).reshape(-1)
        return grad

    def _probe(self, xs: np.ndarray, ys: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        rng = np.random.default_rng([self.cfg.seed, 1])
        idx = np.sort(rng.permutation(xs.shape[0])[:self.cfg.probe_size])
        return xs[idx], ys[idx]

    def _curvature(self, probe_x: np.ndarray, probe_y: np.ndarray, epoch: int) -> Optional[float]:
        if not self.cfg.track_curvature:
            return None
        net = self.net.with_parameters(self.theta)
        top = float(sym_eig(net.batch_loss_hessian(probe_x, probe_y, self.loss, cap=self.cfg.hessian_cap)).eigenvalues[0])
        if top > 0.0 and self.cfg.learning_rate >= 2.0 / top:
            message = (f"学习率 {self.cfg.learning_rate:.6g} ≥ 2/λ_max(H) = {2.0 / top:.6g}"
                       f"（第{epoch + 1}轮开始时测得）")
            if epoch == 0:
                raise StepSizeError(message)
            logger.warning(message)
        return top

    def _record_epoch(self, xs: np.ndarray, ys: np.ndarray, probe_loss: float, top: Optional[float]) -> None:
        params = self.params
        outputs = self.net.with_weights(params).forward_batch(xs)
        loss = float(np.mean(self.loss.value(outputs, ys)))
        self.log.loss.append(loss)
        self.log.accuracy.append(_accuracy(outputs, ys))
        self.log.probe_loss.append(probe_loss)
        self.log.learning_rate.append(self.cfg.learning_rate)
        self.log.hessian_top.append(top)
        spectra = [Spectrum.of(singular_values(w)) for w, _ in params]
        self.log.sigma_max.append([float(s.sigma[0]) for s in spectra])
        self.log.weight_entropy.append([spectral_entropy(s) for s in spectra])
        if not math.isfinite(loss) or loss > DIVERGENCE_LOSS:
            self.log.diverged = True
            raise TrainingDivergedError(f"训练发散: 第{self.log.epochs}轮损失 {loss:.6g}", self.log)

    def run(self, data) -> Tuple[Mlp, TrainLog]:
        cfg = self.cfg
        if cfg.epochs == 0:
            return self.net, self.log
        xs, ys = _as_arrays(data)
        if xs.shape[0] == 0:
            raise ValueError("训练数据为空")
        if ys.shape[0] != xs.shape[0]:
            raise ValueError(f"输入 {xs.shape[0]} 条与标签 {ys.shape[0]} 条数量不一致")
        rng = np.random.default_rng(cfg.seed)
        probe_x, probe_y = self._probe(xs, ys)
        n = xs.shape[0]
        for epoch in tqdm(range(cfg.epochs), desc="训练", leave=False):
            top = self._curvature(probe_x, probe_y, epoch)
            probe_loss = self.net.batch_loss(probe_x, probe_y, self.loss, self.params)
            order = rng.permutation(n)
            for start in range(0, n, cfg.batch_size):
                batch = order[start:start + cfg.batch_size]
                params = self.params
                grad = self.net.batch_loss_gradient(xs[batch], ys[batch], self.loss, params)
                self.theta = self.theta - cfg.learning_rate * (grad + self.penalty_gradient(params))
                if not np.all(np.isfinite(self.theta)):
                    self.log.diverged = True
                    raise TrainingDivergedError(f"训练发散: 第{epoch + 1}轮参数出现 NaN/Inf", self.log)
            self._record_epoch(xs, ys, probe_loss, top)
            logger.debug(f"第{epoch + 1}/{cfg.epochs}轮: loss = {self.log.loss[-1]:.6g}, "
                         f"σ_max = {[round(s, 4) for s in self.log.sigma_max[-1]]}")
        logger.info(f"训练完成: {cfg.epochs} 轮，最终损失 {self.log.loss[-1]:.6g}")
        return self.net.with_parameters(self.theta), self.log


def train(net: Mlp, data, loss: Loss, cfg: TrainConfig) -> Tuple[Mlp, TrainLog]:
    return Trainer(net, loss, cfg).run(data)


def train_pair(arch: Mlp, data, loss: Loss, cfg_unstable: TrainConfig,
               cfg_stable: TrainConfig) -> Tuple[Tuple[Mlp, TrainLog], Tuple[Mlp, TrainLog]]:
    """从同一初始化训练一对模型，返回两组 (模型, 日志)"""
    if not cfg_unstable.differs_only_in_penalty(cfg_stable):
        different = [f.name for f in fields(TrainConfig)
                     if getattr(cfg_unstable, f.name) != getattr(cfg_stable, f.name)]
        logger.warning(f"成对训练配置除惩罚项外还有差异: {different}")
    logger.info(f"训练不稳定模型（惩罚 {cfg_unstable.penalty_kind.value}, λ_s = {cfg_unstable.spectral_penalty_weight}）")
    unstable = train(arch, data, loss, cfg_unstable)
    logger.info(f"训练稳定模型（惩罚 {cfg_stable.penalty_kind.value}, λ_s = {cfg_stable.spectral_penalty_weight}）")
    stable = train(arch, data, loss, cfg_stable)
    return unstable, stable


def make_pair(arch: Mlp, data, loss: Loss, cfg_unstable: TrainConfig, cfg_stable: TrainConfig) -> Tuple[Mlp, Mlp]:
    (unstable, _), (stable, _) = train_pair(arch, data, loss, cfg_unstable, cfg_stable)
    return unstable, stable
