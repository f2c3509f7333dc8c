"""统一算子族、矩阵稳定性剖面与验证实验

包括全局矩阵稳定性指数（经验 GMSI）、前向/归因稳定性检查、
Monte-Carlo 敏感度与谱熵上界、SERR、归因不稳定性 Δ_grad 以及
归因分布的 Fréchet 距离。
"""
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from scipy.stats import spearmanr
from tqdm import tqdm

from .errors import DimensionError
from .linalg import psd_sqrt, singular_values, sym_eig
from .net import DEFAULT_HESSIAN_CAP, Loss, Mlp, init_mlp
from .ntk import Conditioning, GramMatrix, conditioning, gram, lambda_max_bound
from .spectra import Spectrum, SpectralSummary, spectral_entropy, summarize
from .utils import unit_rng

MC_SIGMAS = 3.0
MC_CHUNK = 20000
FORWARD_TOL = 1e-9


# ---------------------------------------------------------------------- 扰动


def sample_perturbations(rng: np.random.Generator, n: int, d: int, epsilon: float,
                         law: str = "gaussian") -> np.ndarray:
    """各向同性扰动，E‖δ‖² = ε²

    gaussian：各分量独立 N(0, ε²/d)；sphere：半径 ε 的球面均匀分布。
    """
    if law == "gaussian":
        return rng.standard_normal((n, d)) * (epsilon / math.sqrt(d))
    if law == "sphere":
        v = rng.standard_normal((n, d))
        return epsilon * v / np.linalg.norm(v, axis=1, keepdims=True)
    raise ValueError(f"未知的扰动分布: {law}")


def sample_pairs(rng: np.random.Generator, xs: np.ndarray, n_pairs: int) -> List[Tuple[np.ndarray, np.ndarray]]:
    """在数据凸包内抽取点对：两端各为两个数据点的随机凸组合"""
    xs = np.atleast_2d(xs)
    idx = rng.integers(0, xs.shape[0], size=(n_pairs, 4))
    lam = rng.uniform(size=(n_pairs, 2, 1))
    first = lam[:, 0] * xs[idx[:, 0]] + (1.0 - lam[:, 0]) * xs[idx[:, 1]]
    second = lam[:, 1] * xs[idx[:, 2]] + (1.0 - lam[:, 1]) * xs[idx[:, 3]]
    return list(zip(first, second))


def _spectral_norms(stack: np.ndarray) -> np.ndarray:
    return singular_values(stack)[..., 0]


# ---------------------------------------------------------------------- 算子族与剖面


@dataclass(frozen=True)
class SampleOperators:
    x: np.ndarray
    y: np.ndarray
    input_jacobian: np.ndarray
    product_operator: np.ndarray
    param_jacobian: np.ndarray
    hessian: Optional[np.ndarray]
    hessian_top: Optional[float]


@dataclass(frozen=True)
class OperatorFamily:
    """同一组冻结参数下的 (J_f, ∇_θf, K, H)"""
    samples: List[SampleOperators]
    shared: GramMatrix


def build_operator_family(net: Mlp, xs, ys, loss: Loss, hessian_cap: int = DEFAULT_HESSIAN_CAP,
                          h: float = 1e-5) -> OperatorFamily:
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    ys = np.atleast_2d(np.asarray(ys, dtype=np.float64))
    if xs.shape[0] == 0 or xs.size == 0:
        raise DimensionError("数据为空，无法构建稳定性剖面")
    if ys.shape[0] != xs.shape[0]:
        raise DimensionError(f"输入 {xs.shape[0]} 条与标签 {ys.shape[0]} 条数量不一致")
    products = net.input_jacobians(xs)
    with_hessian = net.parameter_count <= hessian_cap
    if not with_hessian:
        logger.warning(f"参数数量 {net.parameter_count} 超过 Hessian 上限 {hessian_cap}，跳过 Hessian")
    samples = []
    for i in tqdm(range(xs.shape[0]), desc="算子族", leave=False):
        hess, top = None, None
        if with_hessian:
            hess = net.loss_hessian(xs[i], ys[i], loss, h=h, cap=hessian_cap)
            top = float(sym_eig(hess).eigenvalues[0])
        samples.append(SampleOperators(
            x=xs[i],
            y=ys[i],
            input_jacobian=net.finite_difference_jacobian(xs[i], h),
            product_operator=products[i],
            param_jacobian=net.parameter_jacobian(xs[i]),
            hessian=hess,
            hessian_top=top,
        ))
    return OperatorFamily(samples=samples, shared=gram(net, xs))


@dataclass
class StabilityProfile:
    jacobian: List[SpectralSummary]
    product: List[SpectralSummary]
    param_norms: List[float]
    gram: SpectralSummary
    hessian_top: List[Optional[float]]
    hessian: List[Optional[SpectralSummary]]
    gmsi: float
    component_breakdown: Dict[str, float]
    per_sample_index: List[float]
    gmsi_median: float
    gmsi_q90: float
    conditioning: Conditioning
    lambda_max_bound: float
    jacobian_gap: float
    hessian_skipped: bool

    def to_dict(self) -> Dict[str, Any]:
        return {
            "label": "empirical GMSI",
            "gmsi": self.gmsi,
            "gmsi_median": self.gmsi_median,
            "gmsi_q90": self.gmsi_q90,
            "component_breakdown": dict(self.component_breakdown),
            "ntk": {
                "summary": self.gram.to_dict(),
                "lambda_max": self.conditioning.lambda_max,
                "lambda_min_nonzero": self.conditioning.lambda_min_nonzero,
                "kappa": self.conditioning.kappa,
                "lambda_max_bound": self.lambda_max_bound,
            },
            "jacobian_gap": self.jacobian_gap,
            "hessian_skipped": self.hessian_skipped,
            "samples": self.to_rows(),
        }

    def to_rows(self) -> List[Dict[str, Any]]:
        rows = []
        for i, (jac, prod) in enumerate(zip(self.jacobian, self.product)):
            hess = self.hessian[i]
            rows.append({
                "sample": i,
                "jacobian_norm": jac.top,
                "jacobian_entropy": jac.entropy_nats,
                "jacobian_acn": jac.acn,
                "jacobian_sc_half": jac.sc_half,
                "product_norm": prod.top,
                "product_entropy": prod.entropy_nats,
                "param_jacobian_norm": self.param_norms[i],
                "hessian_top": self.hessian_top[i],
                "hessian_entropy": hess.entropy_nats if hess is not None else None,
                "index": self.per_sample_index[i],
            })
        return rows


def profile_family(family: OperatorFamily) -> StabilityProfile:
    jac_summaries, prod_summaries, param_norms = [], [], []
    hess_tops, hess_summaries = [], []
    gap = 0.0
    for s in family.samples:
        jac_summaries.append(summarize(Spectrum.from_matrix(s.input_jacobian)))
        prod_summaries.append(summarize(Spectrum.from_matrix(s.product_operator)))
        param_norms.append(float(singular_values(s.param_jacobian)[0]))
        hess_tops.append(s.hessian_top)
        hess_summaries.append(
            summarize(Spectrum.of(np.abs(sym_eig(s.hessian).eigenvalues))) if s.hessian is not None else None
        )
        gap = max(gap, float(np.max(np.abs(s.input_jacobian - s.product_operator))))

    cond = conditioning(family.shared)
    ntk_scale = math.sqrt(max(cond.lambda_max, 0.0))
    jac_norms = [max(j.top, p.top) for j, p in zip(jac_summaries, prod_summaries)]
    hess_scales = [math.sqrt(max(t, 0.0)) if t is not None else 0.0 for t in hess_tops]
    per_sample = [max(a, b, ntk_scale, c) for a, b, c in zip(jac_norms, param_norms, hess_scales)]
    breakdown = {
        "jacobian": max(jac_norms),
        "param_jacobian": max(param_norms),
        "ntk": ntk_scale,
        "hessian": max(hess_scales),
    }
    return StabilityProfile(
        jacobian=jac_summaries,
        product=prod_summaries,
        param_norms=param_norms,
        gram=summarize(Spectrum.of(family.shared.eigenvalues)),
        hessian_top=hess_tops,
        hessian=hess_summaries,
        gmsi=max(breakdown.values()),
        component_breakdown=breakdown,
        per_sample_index=per_sample,
        gmsi_median=float(np.median(per_sample)),
        gmsi_q90=float(np.quantile(per_sample, 0.9)),
        conditioning=cond,
        lambda_max_bound=lambda_max_bound(family.shared),
        jacobian_gap=gap,
        hessian_skipped=any(t is None for t in hess_tops),
    )


def build_profile(net: Mlp, xs, ys, loss: Loss, hessian_cap: int = DEFAULT_HESSIAN_CAP,
                  h: float = 1e-5) -> StabilityProfile:
    """矩阵稳定性剖面；GMSI 的上确界用给定样本上的最大值近似"""
    profile = profile_family(build_operator_family(net, xs, ys, loss, hessian_cap, h))
    logger.info(f"经验 GMSI = {profile.gmsi:.6g}，分量 {profile.component_breakdown}")
    return profile


# ---------------------------------------------------------------------- 前向与归因稳定性


@dataclass
class StabilityCheckReport:
    kind: str
    pairs: int
    violations: List[Dict[str, Any]] = field(default_factory=list)
    max_ratio: float = 0.0
    constant: float = 0.0
    empirical_c1: Optional[float] = None

    @property
    def passed(self) -> bool:
        return not self.violations

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": self.kind,
            "pairs": self.pairs,
            "violations": len(self.violations),
            "witnesses": self.violations[:10],
            "max_ratio": self.max_ratio,
            "constant": self.constant,
            "empirical_c1": self.empirical_c1,
            "passed": self.passed,
        }


def _segment_points(pairs: Sequence[Tuple[np.ndarray, np.ndarray]], grid: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    first = np.array([p[0] for p in pairs], dtype=np.float64)
    second = np.array([p[1] for p in pairs], dtype=np.float64)
    s = np.linspace(0.0, 1.0, grid)
    points = first[:, None, :] + s[None, :, None] * (second - first)[:, None, :]
    return first, second, points


def verify_forward_stability(net: Mlp, pairs: Sequence[Tuple[np.ndarray, np.ndarray]], grid: int = 17,
                             profile: Optional[StabilityProfile] = None) -> StabilityCheckReport:
    """‖f(x) − f(x′)‖ ≤ S_grid·‖x − x′‖，S_grid 为线段网格上 ‖J_f‖₂ 的最大值"""
    report = StabilityCheckReport(kind="forward", pairs=len(pairs))
    if not pairs:
        return report
    first, second, points = _segment_points(pairs, grid)
    n, _, d = points.shape
    norms = _spectral_norms(net.input_jacobians(points.reshape(-1, d))).reshape(n, grid)
    s_grid = norms.max(axis=1)
    lhs = np.linalg.norm(net.forward_batch(first) - net.forward_batch(second), axis=1)
    dist = np.linalg.norm(first - second, axis=1)
    rhs = s_grid * dist
    for i in np.nonzero(lhs > rhs * (1.0 + FORWARD_TOL) + 1e-12)[0]:
        report.violations.append({"pair": int(i), "lhs": float(lhs[i]), "rhs": float(rhs[i])})
        logger.warning(f"前向稳定性违例: 第{i}对 {lhs[i]:.6g} > {rhs[i]:.6g}")
    nonzero = dist > 0.0
    if np.any(nonzero):
        report.max_ratio = float(np.max(lhs[nonzero] / rhs[nonzero].clip(min=1e-300)))
        report.constant = float(np.max(s_grid))
        if profile is not None and profile.gmsi > 0.0:
            report.empirical_c1 = float(np.max(lhs[nonzero] / dist[nonzero]) / profile.gmsi)
    return report


def attribution_stability_check(net: Mlp, pairs: Sequence[Tuple[np.ndarray, np.ndarray]],
                                psi_lipschitz: float = 1.0, grid: int = 17, margin: float = 1.05,
                                profile: Optional[StabilityProfile] = None) -> StabilityCheckReport:
    """‖A(x) − A(x′)‖ ≤ Lip(Ψ)·L_J·‖x − x′‖，A(x) = J_f(x)ᵀ·v_c，v_c 为 x 处预测类的 one-hot

    L_J 为 x ↦ J_f(x) 在所有线段网格相邻点之间的最大差商。
    """
    report = StabilityCheckReport(kind="attribution", pairs=len(pairs))
    if not pairs:
        return report
    first, second, points = _segment_points(pairs, grid)
    n, _, d = points.shape
    jac = net.input_jacobians(points.reshape(-1, d)).reshape(n, grid, net.output_dim, d)
    diffs = (jac[:, 1:] - jac[:, :-1]).reshape(-1, net.output_dim, d)
    step = np.linalg.norm(points[:, 1] - points[:, 0], axis=1)
    diff_norms = _spectral_norms(diffs).reshape(n, grid - 1)
    valid = step > 0.0
    ratios = diff_norms[valid] / step[valid, None]
    lip_j = float(np.max(ratios)) if ratios.size else 0.0
    report.constant = lip_j

    classes = net.predict_class(first)
    rows = np.arange(n)
    attr_first = jac[rows, 0, classes, :]
    attr_second = jac[rows, -1, classes, :]
    lhs = np.linalg.norm(attr_first - attr_second, axis=1)
    dist = np.linalg.norm(first - second, axis=1)
    rhs = psi_lipschitz * lip_j * dist * margin
    for i in np.nonzero(lhs > rhs + 1e-12)[0]:
        report.violations.append({"pair": int(i), "lhs": float(lhs[i]), "rhs": float(rhs[i])})
        logger.warning(f"归因稳定性违例: 第{i}对 {lhs[i]:.6g} > {rhs[i]:.6g}")
    if lip_j > 0.0 and np.any(valid):
        report.max_ratio = float(np.max(lhs[valid] / (lip_j * dist[valid])))
    if profile is not None and profile.gmsi > 0.0:
        report.empirical_c1 = lip_j / profile.gmsi
    return report


# ---------------------------------------------------------------------- 谱熵与期望敏感度


@dataclass
class SensitivityReport:
    epsilon: float
    n_mc: int
    empirical_mean_sq: float
    analytic_mean_sq: float
    bound_rhs: float
    holds: bool
    stderr: float
    mc_tolerance: float
    entropy_nats: float
    k_constant: float
    identity_gap: float
    agrees: bool
    mean_norm: float
    worst_case_bound: float

    def to_dict(self) -> Dict[str, Any]:
        return dict(self.__dict__)


def monte_carlo_sensitivity(net: Mlp, x, epsilon: float, n_mc: int, seed: int = 0,
                            law: str = "gaussian", progress: bool = False) -> SensitivityReport:
    """E‖f(x+δ) − f(x)‖² 的 Monte-Carlo 估计，与 ε²Σσ²/d 和 K·ε²·e^{H_S} 比较"""
    x = np.asarray(x, dtype=np.float64)
    d = x.shape[0]
    rng = np.random.default_rng(seed)
    fx = net.forward_batch(x)[0]
    sq = np.empty(n_mc)
    norms = np.empty(n_mc)
    done = 0
    with tqdm(total=n_mc, desc=f"MC ε={epsilon:.2g}", leave=False, disable=not progress) as bar:
        while done < n_mc:
            size = min(MC_CHUNK, n_mc - done)
            delta = sample_perturbations(rng, size, d, epsilon, law)
            diff = net.forward_batch(x[None, :] + delta) - fx
            sq[done:done + size] = np.sum(diff * diff, axis=1)
            norms[done:done + size] = np.sqrt(sq[done:done + size])
            done += size
            bar.update(size)

    spectrum = Spectrum.from_matrix(net.input_jacobian_product(net.forward(x)))
    sigma = spectrum.sigma
    total = float(np.sum(sigma))
    entropy = spectral_entropy(spectrum)
    analytic = epsilon ** 2 * float(np.sum(sigma ** 2)) / d
    p = spectrum.weights()
    via_weights = total ** 2 * float(np.sum(p * p)) * epsilon ** 2 / d
    k_constant = total ** 2 / d
    bound = k_constant * epsilon ** 2 * math.exp(entropy)

    empirical = float(np.mean(sq))
    stderr = float(np.std(sq, ddof=1) / math.sqrt(n_mc)) if n_mc > 1 else 0.0
    mc_tolerance = MC_SIGMAS * stderr / bound if bound > 0.0 else 0.0
    return SensitivityReport(
        epsilon=float(epsilon),
        n_mc=int(n_mc),
        empirical_mean_sq=empirical,
        analytic_mean_sq=analytic,
        bound_rhs=bound,
        holds=bool(empirical <= bound * (1.0 + mc_tolerance)),
        stderr=stderr,
        mc_tolerance=mc_tolerance,
        entropy_nats=entropy,
        k_constant=k_constant,
        identity_gap=abs(analytic - via_weights) / max(analytic, 1e-300),
        agrees=bool(abs(empirical - analytic) <= MC_SIGMAS * stderr + 1e-15 * max(analytic, 1.0)),
        mean_norm=float(np.mean(norms)),
        worst_case_bound=float(sigma[0] ** 2 * epsilon ** 2),
    )


def epsilon_sweep(net: Mlp, x, epsilons: Sequence[float], n_mc: int, seed: int = 0,
                  law: str = "gaussian") -> List[SensitivityReport]:
    """不同扰动幅度下的敏感度；小 ε 时 E‖f(x+δ) − f(x)‖/ε 近似为常数"""
    reports = []
    for i, eps in enumerate(epsilons):
        report = monte_carlo_sensitivity(net, x, eps, n_mc, seed + i, law)
        logger.info(f"ε = {eps:.3g}: E‖Δf‖/ε = {report.mean_norm / eps:.6g}，"
                    f"经验/上界 = {report.empirical_mean_sq / max(report.bound_rhs, 1e-300):.4f}")
        reports.append(report)
    return reports


# ---------------------------------------------------------------------- SERR


@dataclass
class SerrReport:
    gain: float
    n_inits: int
    mean: float
    stderr: float
    values: List[float]

    def to_dict(self) -> Dict[str, Any]:
        return dict(self.__dict__)


def serr(arch: Mlp, gain: float, n_inits: int, x, seed: int = 0, init: str = "gaussian") -> SerrReport:
    """随机初始化下 Jacobian 谱熵的期望 E[H_S(J_f(x))]"""
    if n_inits < 1:
        raise ValueError("n_inits 至少为 1")
    x = np.asarray(x, dtype=np.float64)
    activation = arch.layers[0].activation
    bias = arch.layers[0].bias is not None
    values = []
    for i in tqdm(range(n_inits), desc=f"SERR g={gain:g}", leave=False):
        net = init_mlp(arch.widths, activation, gain, unit_rng(seed, i), init=init, bias=bias)
        jac = net.input_jacobian_product(net.forward(x))
        values.append(spectral_entropy(Spectrum.from_matrix(jac)))
    mean = float(np.mean(values))
    stderr = float(np.std(values, ddof=1) / math.sqrt(n_inits)) if n_inits > 1 else 0.0
    return SerrReport(gain=float(gain), n_inits=n_inits, mean=mean, stderr=stderr, values=values)


def serr_trend(reports: Sequence[SerrReport]) -> bool:
    """有序区（g ≤ 1）的 SERR 是否全部高于混沌区（g ≥ 4），只作为观察结论报告"""
    ordered = [r.mean for r in reports if r.gain <= 1.0]
    chaotic = [r.mean for r in reports if r.gain >= 4.0]
    return bool(ordered and chaotic and min(ordered) > max(chaotic))


def serr_sweep(arch: Mlp, gains: Sequence[float], n_inits: int, x, seed: int = 0) -> Tuple[List[SerrReport], bool]:
    """增益扫描，返回各增益结果及 serr_trend 的结论"""
    reports = [serr(arch, g, n_inits, x, seed) for g in gains]
    trend = serr_trend(reports)
    for r in reports:
        logger.info(f"SERR(g={r.gain:g}) = {r.mean:.6f} ± {r.stderr:.6f}")
    logger.info(f"有序区 SERR 高于混沌区: {trend}")
    return reports, trend


# ---------------------------------------------------------------------- 归因


def attribution_instability(net: Mlp, x, epsilon: float, n_mc: int, seed: int = 0,
                            law: str = "gaussian") -> float:
    """Δ_grad(x) = E_δ ‖∇_x s_c(x+δ) − ∇_x s_c(x)‖₁，c 为 x 处预测类"""
    x = np.asarray(x, dtype=np.float64)
    if epsilon == 0.0 or n_mc == 0:
        return 0.0
    rng = np.random.default_rng(seed)
    c = int(net.predict_class(x)[0])
    delta = sample_perturbations(rng, n_mc, x.shape[0], epsilon, law)
    jac = net.input_jacobians(np.vstack([x[None, :], x[None, :] + delta]))
    grads = jac[:, c, :]
    return float(np.mean(np.sum(np.abs(grads[1:] - grads[0]), axis=1)))


def frechet_attr_distance(attr_a, attr_b, sample_space: Optional[bool] = None) -> float:
    """拟合高斯矩后的 Fréchet 距离 ‖μ_A − μ_B‖² + tr(Σ_A + Σ_B − 2(Σ_A^{1/2}Σ_BΣ_A^{1/2})^{1/2})

    维度不超过样本数时在协方差空间计算；否则在样本空间计算，
    迹项等于 X_A·X_Bᵀ 的奇异值之和（X 为中心化并除以 √(n−1) 的样本）。
    sample_space 为 None 时按维度自动选择。
    """
    a = np.asarray(attr_a, dtype=np.float64)
    b = np.asarray(attr_b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise DimensionError(f"归因维度不一致: {a.shape} vs {b.shape}")
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise DimensionError("每组至少需要 2 个样本")
    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    xa = (a - mu_a) / math.sqrt(a.shape[0] - 1)
    xb = (b - mu_b) / math.sqrt(b.shape[0] - 1)
    trace_a = float(np.sum(xa * xa))
    trace_b = float(np.sum(xb * xb))
    if sample_space is None:
        sample_space = a.shape[1] > max(a.shape[0], b.shape[0])
    if not sample_space:
        cov_a = xa.T @ xa
        cov_b = xb.T @ xb
        root_a = psd_sqrt(0.5 * (cov_a + cov_a.T))
        middle = root_a @ cov_b @ root_a
        lam = sym_eig(0.5 * (middle + middle.T)).eigenvalues
        cross = float(np.sum(np.sqrt(np.maximum(lam, 0.0))))
    else:
        cross = float(np.sum(singular_values(xa @ xb.T)))
    diff = mu_a - mu_b
    return max(0.0, float(diff @ diff) + trace_a + trace_b - 2.0 * cross)


@dataclass
class PairDiagnostics:
    """一个模型的 SE / ACN / FD 诊断，对应对比表中的一行"""
    se: float
    acn: float
    fd: float
    delta_grad: float

    def to_dict(self) -> Dict[str, float]:
        return dict(self.__dict__)


def _jacobian_spectra(jac: np.ndarray) -> List[Spectrum]:
    return [Spectrum.of(s) for s in singular_values(jac)]


def pair_diagnostics(net: Mlp, xs, epsilon: float, seed: int = 0, law: str = "gaussian") -> PairDiagnostics:
    """平均谱熵、平均有限 ACN、干净/扰动归因分布间的 FD 以及平均 Δ_grad（单次扰动）"""
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    rng = np.random.default_rng(seed)
    delta = sample_perturbations(rng, xs.shape[0], xs.shape[1], epsilon, law)
    classes = net.predict_class(xs)
    rows = np.arange(xs.shape[0])
    clean = net.input_jacobians(xs)
    perturbed = net.input_jacobians(xs + delta)
    spectra = _jacobian_spectra(clean)
    summaries = [summarize(s) for s in spectra]
    acns = [s.acn for s in summaries if math.isfinite(s.acn)]
    attr_clean = clean[rows, classes, :]
    attr_pert = perturbed[rows, classes, :]
    return PairDiagnostics(
        se=float(np.mean([s.entropy_nats for s in summaries])),
        acn=float(np.mean(acns)) if acns else math.inf,
        fd=frechet_attr_distance(attr_clean, attr_pert),
        delta_grad=float(np.mean(np.sum(np.abs(attr_pert - attr_clean), axis=1))),
    )


def attribution_scatter(net: Mlp, xs, epsilon: float, n_mc: int, seed: int = 0) -> Tuple[List[Dict[str, float]], Dict[str, float]]:
    """逐样本 (H_S, ACN, Δ_grad) 及其 Spearman 相关系数"""
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    summaries = [summarize(s) for s in _jacobian_spectra(net.input_jacobians(xs))]
    rows = []
    for i, x in enumerate(tqdm(xs, desc="Δ_grad", leave=False)):
        rows.append({
            "sample": i,
            "entropy": summaries[i].entropy_nats,
            "acn": summaries[i].acn,
            "delta_grad": attribution_instability(net, x, epsilon, n_mc, seed + i),
        })
    corr: Dict[str, float] = {}
    if len(rows) > 2:
        ent = [r["entropy"] for r in rows]
        dg = [r["delta_grad"] for r in rows]
        acn = [r["acn"] if math.isfinite(r["acn"]) else np.nan for r in rows]
        corr["entropy_vs_delta_grad"] = float(spearmanr(ent, dg)[0])
        corr["acn_vs_delta_grad"] = float(spearmanr(acn, dg, nan_policy="omit")[0])
    return rows, corr
