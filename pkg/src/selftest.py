"""端到端不变量自检

每项检查是一个同步函数，返回 (是否通过, 说明)。StabilityApp 在线程中逐项运行，
并对每项施加超时。
"""
import math
from dataclasses import dataclass, replace
from typing import Callable, Dict, List, Tuple

import numpy as np
from loguru import logger

from .data import gen_data
from .diagnostics import build_profile, monte_carlo_sensitivity, sample_pairs, verify_forward_stability
from .errors import StepSizeError, TrainingDivergedError
from .linalg import singular_values, sym_eig
from .net import Loss, init_mlp
from .ntk import (
    GramMatrix, LN2, amplification_sum, closed_form_flow, euler_flow_difference, flow_difference,
    gram, stacked_jacobian, worst_case_amplification,
)
from .spectra import Spectrum, majorizes, random_majorization_pair, spectral_entropy
from .train import TrainConfig, train
from .utils import unit_rng

CheckResult = Tuple[bool, str]
NTK_RANK_CUTOFF = 1e-4


@dataclass
class SelftestOutcome:
    key: str
    title: str
    passed: bool
    detail: str
    seconds: float

    @property
    def status(self) -> str:
        return "PASS" if self.passed else "FAIL"

    def to_dict(self) -> Dict[str, object]:
        return dict(self.__dict__, status=self.status)


def check_jacobian_identification(seed: int = 0, nets: int = 100) -> CheckResult:
    worst = 0.0
    for i in range(nets):
        rng = unit_rng(seed, i)
        depth = 1 + i % 5
        widths = [int(w) for w in rng.integers(2, 33, size=depth + 1)]
        net = init_mlp(widths, "tanh", 1.0, rng)
        x = rng.standard_normal(widths[0])
        product = net.input_jacobian_product(net.forward(x))
        fd = net.finite_difference_jacobian(x)
        ratio = float(np.max(np.abs(product - fd))) / (1.0 + float(np.max(np.abs(product))))
        worst = max(worst, ratio)
    return worst <= 1e-6, f"{nets} 个网络，最大相对差 {worst:.2e}（阈值 1e-6）"


def squared_singular_gap(eigenvalues, sigma, cutoff: float = NTK_RANK_CUTOFF) -> float:
    """逐个比较 λ_k 与 σ_k²，返回 σ_k > cutoff·σ_1 范围内的最大相对差 |λ_k − σ_k²| / σ_k²

    形成 G·Gᵀ 使条件数平方，低于截断的特征值只剩舍入噪声，不参与比较。
    """
    lam = np.asarray(eigenvalues, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if sigma.size == 0 or sigma[0] <= 0.0:
        return 0.0
    kept = sigma > cutoff * sigma[0]
    sq = sigma[kept] ** 2
    return float(np.max(np.abs(lam[:sq.size] - sq) / sq))


def check_ntk_spectrum(seed: int = 0, instances: int = 20) -> CheckResult:
    worst = 0.0
    for i in range(instances):
        rng = unit_rng(seed, i)
        n = int(rng.integers(4, 65))
        net = init_mlp([3, 8, 2], "tanh", 1.0, rng)
        xs = rng.standard_normal((n, 3))
        sv = singular_values(stacked_jacobian(net, xs))
        lam = gram(net, xs).eigenvalues
        worst = max(worst, squared_singular_gap(lam, sv))
    return worst <= 1e-8, (f"{instances} 个实例，σ_k > {NTK_RANK_CUTOFF:g}·σ_1 范围内"
                           f"逐个特征值最大相对差 {worst:.2e}（阈值 1e-8）")


def euler_gap_ratio(seed: int = 0, n: int = 12, t: float = 1.0, etas=(1e-2, 5e-3)) -> Tuple[float, float]:
    """λ_max 归一化为 1 的随机 Gram 上，两种步长的 Euler 误差之比"""
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((n, n))
    k = a @ a.T
    k = k / float(sym_eig(k).eigenvalues[0])
    g = GramMatrix.from_matrix(k)
    delta_y = rng.standard_normal(n)
    closed = float(flow_difference(g, delta_y, [t]).diff_norm_sq[0])
    direct = closed_form_flow(g, delta_y, np.zeros(n), t) - closed_form_flow(g, np.zeros(n), np.zeros(n), t)
    closed_direct = float(direct @ direct)
    gaps = []
    for eta in etas:
        steps = int(round(t / eta))
        gaps.append(abs(euler_flow_difference(g, delta_y, eta, steps) - closed))
    return gaps[0] / gaps[1], abs(closed - closed_direct) / max(closed, 1e-300)


def check_flow_euler(seed: int = 0) -> CheckResult:
    ratio, consistency = euler_gap_ratio(seed)
    passed = 1.6 <= ratio <= 2.4 and consistency <= 1e-9
    return passed, f"步长减半后误差比 {ratio:.3f}（期望 2 ± 20%），闭式两种算法相对差 {consistency:.1e}"


def check_entropy_sensitivity(seed: int = 0, nets: int = 20, n_mc: int = 100_000,
                              epsilon: float = 1e-3) -> CheckResult:
    agree, bound_ok = 0, 0
    for i in range(nets):
        rng = unit_rng(seed, i)
        d = int(rng.integers(2, 9))
        net = init_mlp([d, 16, int(rng.integers(1, 5))], "tanh", 1.0, rng)
        x = rng.standard_normal(d)
        report = monte_carlo_sensitivity(net, x, epsilon, n_mc, seed=seed * 1000 + i)
        agree += int(report.agrees)
        bound_ok += int(report.holds)
    passed = bound_ok == nets and agree >= nets - 1
    return passed, f"上界成立 {bound_ok}/{nets}，3 倍标准误内吻合 {agree}/{nets}"


def check_flow_schur_convexity(seed: int = 0, pairs: int = 10_000, times=(0.1, 1.0, 10.0)) -> CheckResult:
    rng = np.random.default_rng(seed)
    violations = 0
    for t in times:
        total = LN2 / t
        for _ in range(pairs):
            r = int(rng.integers(2, 9))
            a, b = random_majorization_pair(rng, r, total)
            if amplification_sum(a.sigma, t) < amplification_sum(b.sigma, t) - 1e-12:
                violations += 1
            if worst_case_amplification(a.sigma, t) < worst_case_amplification(b.sigma, t) - 1e-12:
                violations += 1
    return violations == 0, f"{len(times)} 个时刻 × {pairs} 对，违例 {violations}"


def check_entropy_schur_concavity(seed: int = 0, pairs: int = 10_000) -> CheckResult:
    rng = np.random.default_rng(seed)
    violations = 0
    for _ in range(pairs):
        r = int(rng.integers(2, 17))
        a, b = random_majorization_pair(rng, r)
        if majorizes(a, b) and spectral_entropy(a) > spectral_entropy(b) + 1e-12:
            violations += 1
    rank_one = spectral_entropy(Spectrum.of([3.0, 0.0, 0.0]))
    uniform_gap = max(abs(spectral_entropy(Spectrum.of(np.ones(r))) - math.log(r)) for r in range(1, 33))
    passed = violations == 0 and rank_one == 0.0 and uniform_gap <= 1e-12
    return passed, f"{pairs} 对违例 {violations}，秩一熵 {rank_one}，均匀谱误差 {uniform_gap:.1e}"


def check_forward_stability(seed: int = 0, nets: int = 3, pairs: int = 1000) -> CheckResult:
    violations, dominance = 0, True
    for i in range(nets):
        rng = unit_rng(seed, i)
        data = gen_data("blobs", 24, 2, seed=seed + i)
        net = init_mlp([2, 8, 8, 3], "tanh", 1.0, rng)
        xs, ys = data.arrays()
        profile = build_profile(net, xs[:8], ys[:8], Loss.CROSS_ENTROPY)
        dominance &= all(profile.gmsi >= v for v in profile.component_breakdown.values())
        report = verify_forward_stability(net, sample_pairs(rng, xs, pairs), profile=profile)
        violations += len(report.violations)
    return violations == 0 and dominance, f"{nets} 个网络 × {pairs} 对，违例 {violations}，GMSI 占优 {dominance}"


def check_step_size_guard(seed: int = 0, runs: int = 5, epochs: int = 20) -> CheckResult:
    monotone = []
    for i in range(runs):
        data = gen_data("blobs", 48, 2, seed=seed + i)
        xs, ys = data.arrays()
        net = init_mlp([2, 8, 3], "tanh", 1.0, unit_rng(seed, i))
        top = float(sym_eig(net.batch_loss_hessian(xs, ys, Loss.CROSS_ENTROPY)).eigenvalues[0])
        cfg = TrainConfig(epochs=epochs, batch_size=xs.shape[0], learning_rate=0.5 / top, seed=seed + i,
                          track_curvature=True, probe_size=xs.shape[0])
        _, log = train(net, (xs, ys), Loss.CROSS_ENTROPY, cfg)
        steps = np.diff(log.probe_loss)
        monotone.append(float(np.mean(steps <= 1e-12)))

    rng = np.random.default_rng(seed)
    xs = rng.standard_normal((32, 3))
    ys = xs @ np.array([[1.0], [-2.0], [0.5]])
    linear = init_mlp([3, 1], "identity", 1.0, rng)
    top = float(sym_eig(linear.batch_loss_hessian(xs, ys, Loss.SQUARED_ERROR)).eigenvalues[0])
    too_big = TrainConfig(epochs=80, batch_size=32, learning_rate=2.5 / top, seed=seed, probe_size=32)
    rejected = diverged = False
    try:
        train(linear, (xs, ys), Loss.SQUARED_ERROR, replace(too_big, track_curvature=True))
    except StepSizeError:
        rejected = True
    try:
        train(linear, (xs, ys), Loss.SQUARED_ERROR, too_big)
    except TrainingDivergedError:
        diverged = True
    passed = all(m >= 0.9 for m in monotone) and rejected and diverged
    return passed, (f"单调轮次比例 {[round(m, 2) for m in monotone]}，"
                    f"超界步长被拒绝 {rejected}，无保护时发散 {diverged}")


CHECKS: List[Tuple[str, str, Callable[..., CheckResult]]] = [
    ("jacobian", "product-form Jacobian vs finite differences", check_jacobian_identification),
    ("ntk_spectrum", "NTK eigenvalues vs squared singular values", check_ntk_spectrum),
    ("flow_euler", "closed-form kernel flow vs Euler", check_flow_euler),
    ("entropy_bound", "entropy sensitivity identity and bound", check_entropy_sensitivity),
    ("flow_schur", "label-noise amplification Schur-convexity", check_flow_schur_convexity),
    ("entropy_schur", "spectral entropy Schur-concavity", check_entropy_schur_concavity),
    ("forward", "forward stability and GMSI dominance", check_forward_stability),
    ("step_size", "curvature step-size guard", check_step_size_guard),
]


def format_table(outcomes: List[SelftestOutcome]) -> str:
    """每行以检查键开头，最后一行为通过数汇总"""
    key_width = max(len(o.key) for o in outcomes)
    width = max(len(o.title) for o in outcomes)
    lines = [f"{o.key.ljust(key_width)}  {o.title.ljust(width)} : {o.status}  {o.detail}" for o in outcomes]
    failed = sum(not o.passed for o in outcomes)
    lines.append(f"{'total'.ljust(key_width + 2 + width)} : {len(outcomes) - failed}/{len(outcomes)} PASS")
    return "\n".join(lines)


def log_outcome(outcome: SelftestOutcome) -> None:
    message = f"[{outcome.key}] {outcome.title}: {outcome.status} ({outcome.detail})"
    if outcome.passed:
        logger.info(message)
    else:
        logger.error(message)
