import asyncio
import math
import time
from dataclasses import replace
from pathlib import Path
from typing import Any, Awaitable, Callable, Dict, List, Optional, Tuple

import async_timeout
import numpy as np
from loguru import logger
from tqdm import tqdm

from . import report
from .config import RunConfig
from .data import Dataset, gen_data, load_idx
from .diagnostics import (
    attribution_scatter, attribution_stability_check, build_profile, epsilon_sweep, pair_diagnostics,
    sample_pairs, serr, serr_trend, verify_forward_stability,
)
from .errors import DimensionError, StepSizeError, TrainingDivergedError
from .net import Loss, Mlp, init_mlp
from .ntk import (
    conditioning, default_times, euler_flow_difference, flow_difference, gram, in_convex_regime, width_sweep,
)
from .selftest import CHECKS, SelftestOutcome, format_table, log_outcome
from .train import PenaltyKind, TrainConfig, train, train_pair
from .utils import Stopwatch, format_duration, unit_rng, unit_seed

SELFTEST_CHECK_TIMEOUT = 600.0


class StabilityApp:
    """谱稳定性实验应用类，负责加载数据、构建网络并调度各子命令"""

    SUBCOMMANDS = ("gen-data", "train", "profile", "sensitivity", "ntk-flow", "serr",
                   "attr-stability", "compare-pair", "selftest")

    def __init__(self, config: RunConfig):
        self.config = config
        self.out_dir = Path(config["output"]["dir"])
        self.semaphore: Optional[asyncio.Semaphore] = None
        self.artifacts: List[Path] = []
        self.stopwatch: Optional[Stopwatch] = None

    async def initialize(self) -> None:
        """初始化应用"""
        try:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            self.semaphore = asyncio.Semaphore(self.config["experiment"]["threads"])
            self.stopwatch = Stopwatch()
            logger.info(f"应用初始化完成: 输出目录 {self.out_dir}，种子 {self.config.seed}，"
                        f"并发数 {self.config['experiment']['threads']}")
        except Exception as e:
            logger.error(f"应用初始化失败: {e}")
            raise

    # ------------------------------------------------------------------ 调度

    async def _offload(self, fn: Callable[..., Any], *args, **kwargs) -> Any:
        """在工作线程中运行同步计算，并发数受信号量限制"""
        async with self.semaphore:
            return await asyncio.to_thread(fn, *args, **kwargs)

    async def _gather(self, calls: List[Awaitable[Any]], desc: str) -> List[Any]:
        """并发执行并按提交顺序返回结果"""
        with tqdm(total=len(calls), desc=desc, leave=False) as bar:
            async def tracked(call: Awaitable[Any]) -> Any:
                result = await call
                bar.update(1)
                return result

            return list(await asyncio.gather(*(tracked(c) for c in calls)))

    def _emit_json(self, name: str, payload: Dict[str, Any]) -> None:
        self.artifacts.append(report.write_json(self.out_dir / name, payload))

    def _emit_csv(self, name: str, rows: List[Dict[str, Any]]) -> None:
        if self.config["output"]["csv"]:
            self.artifacts.append(report.write_csv(self.out_dir / name, rows))

    # ------------------------------------------------------------------ 数据与网络

    def _load_dataset(self) -> Dataset:
        exp = self.config["experiment"]
        kind = exp["data"]
        if kind == "idx":
            return load_idx(exp["idx_images"], exp["idx_labels"], exp["limit"] or None)
        if kind == "npz":
            return Dataset.load(exp["data_path"])
        outputs = self.config["net"]["widths"][-1]
        return gen_data(kind, exp["n"], exp["d"], self.config.seed, classes=exp["classes"],
                        noise=exp["noise"], outputs=outputs)

    def _build_net(self, data: Dataset) -> Mlp:
        net_cfg = self.config["net"]
        if net_cfg["model"]:
            net = Mlp.load(net_cfg["model"])
            logger.info(f"已加载网络 {net_cfg['model']}: {net}")
        else:
            widths = list(net_cfg["widths"])
            if widths[0] != data.d or widths[-1] != data.num_classes:
                logger.warning(f"网络宽度 {widths} 的输入/输出维度与数据 (d = {data.d}, C = {data.num_classes}) 不符，按数据调整")
                widths[0], widths[-1] = data.d, data.num_classes
            net = init_mlp(widths, net_cfg["activation"], net_cfg["gain"], self.config.seed,
                           init=net_cfg["init"], bias=net_cfg["bias"])
        if net.input_dim != data.d:
            raise DimensionError(f"网络输入维度 {net.input_dim} 与数据维度 {data.d} 不符")
        return net

    @property
    def loss(self) -> Loss:
        return Loss(self.config["net"]["loss"])

    def _train_config(self) -> TrainConfig:
        t = self.config["train"]
        return TrainConfig(
            epochs=t["epochs"],
            batch_size=t["batch_size"],
            learning_rate=t["learning_rate"],
            seed=self.config.seed,
            spectral_penalty_weight=t["spectral_penalty_weight"],
            penalty_kind=PenaltyKind(t["penalty_kind"]),
            track_curvature=t["track_curvature"],
            probe_size=t["probe_size"],
            hessian_cap=self.config["experiment"]["hessian_cap"],
        )

    def _samples(self, data: Dataset) -> Tuple[np.ndarray, np.ndarray]:
        xs, ys = data.arrays()
        count = min(self.config["experiment"]["samples"], data.n)
        if count == 0:
            raise DimensionError("数据集为空")
        return xs[:count], ys[:count]

    # ------------------------------------------------------------------ 子命令

    async def _gen_data(self) -> int:
        data = self._load_dataset()
        path = self.out_dir / "dataset.npz"
        data.save(path)
        self.artifacts.append(path)
        rows = [{**{f"x{j}": float(v) for j, v in enumerate(x)}, "label": y if data.is_classification else None}
                for x, y in zip(data.inputs, data.labels.tolist())]
        self._emit_csv("dataset.csv", rows)
        self._emit_json("dataset.json", {"meta": data.meta, "teacher": data.teacher})
        return 0

    async def _train(self) -> int:
        data = self._load_dataset()
        net = self._build_net(data)
        cfg = self._train_config()
        try:
            model, log = await self._offload(train, net, data, self.loss, cfg)
        except TrainingDivergedError as e:
            if e.log is not None:
                self._emit_csv("train_log.csv", e.log.to_rows())
            raise
        path = self.out_dir / "model.txt"
        model.save(path)
        self.artifacts.append(path)
        self._emit_csv("train_log.csv", log.to_rows())
        self._emit_json("train.json", {
            "config": cfg.__dict__,
            "epochs": log.epochs,
            "final_loss": log.loss[-1] if log.loss else None,
            "final_accuracy": log.accuracy[-1] if log.accuracy else None,
            "sigma_max": log.sigma_max[-1] if log.sigma_max else None,
            "diverged": log.diverged,
        })
        return 0

    async def _profile(self) -> int:
        data = self._load_dataset()
        net = self._build_net(data)
        xs, ys = self._samples(data)
        exp = self.config["experiment"]
        profile = await self._offload(build_profile, net, xs, ys, self.loss, exp["hessian_cap"])
        pairs = sample_pairs(unit_rng(self.config.seed, 0), data.inputs, exp["pairs"])
        forward = await self._offload(verify_forward_stability, net, pairs, exp["grid"], profile)
        self._emit_json("profile.json", {"profile": profile, "forward_stability": forward})
        self._emit_csv("profile.csv", profile.to_rows())
        return 0

    async def _sensitivity(self) -> int:
        data = self._load_dataset()
        net = self._build_net(data)
        xs, _ = self._samples(data)
        exp = self.config["experiment"]
        calls = [
            self._offload(epsilon_sweep, net, x, exp["epsilons"], exp["n_mc"], unit_seed(self.config.seed, i), exp["law"])
            for i, x in enumerate(xs)
        ]
        sweeps = await self._gather(calls, "敏感度")
        rows = [{"sample": i, **r.to_dict()} for i, sweep in enumerate(sweeps) for r in sweep]
        holds = sum(r["holds"] for r in rows)
        agrees = sum(r["agrees"] for r in rows)
        logger.info(f"谱熵上界成立 {holds}/{len(rows)}，与解析值吻合 {agrees}/{len(rows)}")
        self._emit_csv("sensitivity.csv", rows)
        self._emit_json("sensitivity.json", {"rows": rows, "holds": holds, "agrees": agrees})
        return 0

    def _euler_checks(self, g, delta_y: np.ndarray) -> List[Dict[str, Any]]:
        exp = self.config["experiment"]
        t = exp["flow_time"]
        closed = float(flow_difference(g, delta_y, [t]).diff_norm_sq[0])
        results = []
        for eta in exp["etas"]:
            steps = max(1, int(round(t / eta)))
            try:
                euler = euler_flow_difference(g, delta_y, eta, steps)
            except StepSizeError as e:
                logger.warning(f"跳过 Euler 校验 η = {eta}: {e}")
                results.append({"eta": eta, "skipped": True})
                continue
            results.append({"eta": eta, "steps": steps, "euler": euler, "closed_form": closed,
                            "gap": abs(euler - closed), "skipped": False})
        return results

    async def _ntk_flow(self) -> int:
        data = self._load_dataset()
        net = self._build_net(data)
        xs, _ = self._samples(data)
        exp = self.config["experiment"]
        g = await self._offload(gram, net, xs)
        cond = conditioning(g)
        delta_y = np.random.default_rng(self.config.seed).standard_normal(g.size)
        times = default_times(g, exp["times"])
        flow = flow_difference(g, delta_y, times)
        euler = await self._offload(self._euler_checks, g, delta_y)
        calls = [self._offload(width_sweep, [w], xs, delta_y, times, self.config.seed)
                 for w in exp["sweep_widths"]]
        sweep_rows = [row for rows in await self._gather(calls, "宽度扫描") for row in rows]
        self._emit_csv("ntk_flow.csv", flow.to_rows())
        self._emit_csv("ntk_width.csv", sweep_rows)
        self._emit_json("ntk_flow.json", {
            **flow.sidecar(),
            "lambda_max": cond.lambda_max,
            "lambda_min_nonzero": cond.lambda_min_nonzero,
            "kappa": cond.kappa,
            "convex_regime_until": math.log(2.0) / cond.lambda_max if cond.lambda_max > 0 else None,
            "flow_time_in_convex_regime": in_convex_regime(g.eigenvalues, exp["flow_time"]),
            "euler": euler,
        })
        return 0

    async def _serr(self) -> int:
        exp = self.config["experiment"]
        widths = [exp["width"]] * (exp["depth"] + 1)
        template = init_mlp(widths, self.config["net"]["activation"], 1.0, self.config.seed)
        x = np.random.default_rng(self.config.seed).standard_normal(exp["width"])
        x /= np.linalg.norm(x)
        calls = [self._offload(serr, template, gain, exp["n_inits"], x, unit_seed(self.config.seed, i))
                 for i, gain in enumerate(exp["gains"])]
        reports = await self._gather(calls, "SERR")
        control_arch = init_mlp(widths, "identity", 1.0, self.config.seed, bias=False)
        control = await self._offload(serr, control_arch, 1.0, 1, x, self.config.seed, "orthogonal")
        trend = serr_trend(reports)
        for r in reports:
            logger.info(f"SERR(g = {r.gain:g}) = {r.mean:.6f} ± {r.stderr:.6f}")
        logger.info(f"正交线性对照: {control.mean:.12f}（ln {exp['width']} = {math.log(exp['width']):.12f}）")
        self._emit_csv("serr.csv", [{"gain": r.gain, "serr": r.mean, "stderr": r.stderr, "n_inits": r.n_inits}
                                    for r in reports])
        self._emit_json("serr.json", {
            "reports": reports,
            "ordered_above_chaotic": trend,
            "orthogonal_control": control.mean,
            "log_width": math.log(exp["width"]),
        })
        return 0

    async def _attr_stability(self) -> int:
        data = self._load_dataset()
        net = self._build_net(data)
        xs, ys = self._samples(data)
        exp = self.config["experiment"]
        pairs = sample_pairs(unit_rng(self.config.seed, 0), data.inputs, exp["pairs"])
        profile = await self._offload(build_profile, net, xs, ys, self.loss, exp["hessian_cap"])
        attribution, forward, (rows, corr) = await asyncio.gather(
            self._offload(attribution_stability_check, net, pairs, 1.0, exp["grid"], 1.05, profile),
            self._offload(verify_forward_stability, net, pairs, exp["grid"], profile),
            self._offload(attribution_scatter, net, xs, exp["epsilon"], exp["n_mc"], self.config.seed),
        )
        self._emit_csv("attr_scatter.csv", rows)
        self._emit_json("attr_stability.json", {
            "attribution": attribution,
            "forward": forward,
            "gmsi": profile.gmsi,
            "spearman": corr,
        })
        return 0

    async def _compare_pair(self) -> int:
        data = self._load_dataset()
        arch = self._build_net(data)
        t = self.config["train"]
        exp = self.config["experiment"]
        unstable_cfg = self._train_config()
        stable_cfg = replace(unstable_cfg, penalty_kind=PenaltyKind(t["stable_penalty_kind"]),
                             spectral_penalty_weight=t["stable_penalty_weight"])
        (unstable, unstable_log), (stable, stable_log) = await self._offload(
            train_pair, arch, data, self.loss, unstable_cfg, stable_cfg)
        xs, _ = self._samples(data)
        diagnostics = await self._gather([
            self._offload(pair_diagnostics, unstable, xs, exp["epsilon"], self.config.seed, exp["law"]),
            self._offload(pair_diagnostics, stable, xs, exp["epsilon"], self.config.seed, exp["law"]),
        ], "成对诊断")
        for name, model in (("unstable", unstable), ("stable", stable)):
            path = self.out_dir / f"model_{name}.txt"
            model.save(path)
            self.artifacts.append(path)
        rows = []
        dataset_name = data.meta.get("name", "unknown")
        for name, diag, log in (("Unstable", diagnostics[0], unstable_log), ("Stable", diagnostics[1], stable_log)):
            rows.append({"Dataset": dataset_name, "Model": name, "SE": diag.se, "ACN": diag.acn, "FD": diag.fd,
                         "delta_grad": diag.delta_grad,
                         "train_accuracy": log.accuracy[-1] if log.accuracy else None,
                         "sigma_max": max(log.sigma_max[-1]) if log.sigma_max else None})
        fd_down = diagnostics[1].fd < diagnostics[0].fd
        acn_down = diagnostics[1].acn <= diagnostics[0].acn
        logger.info(f"稳定模型 FD 更低: {fd_down}，ACN 不高于不稳定模型: {acn_down}，"
                    f"SE 差 {abs(diagnostics[1].se - diagnostics[0].se):.4f}")
        self._emit_csv("compare_pair.csv", rows)
        self._emit_json("compare_pair.json", {"rows": rows, "fd_decreased": fd_down, "acn_not_increased": acn_down})
        return 0

    async def _selftest(self) -> int:
        limit = self.config["experiment"]["timeout"] or SELFTEST_CHECK_TIMEOUT
        outcomes: List[SelftestOutcome] = []
        for key, title, check in tqdm(CHECKS, desc="自检"):
            start = time.perf_counter()
            try:
                async with async_timeout.timeout(limit):
                    passed, detail = await self._offload(check, self.config.seed)
            except asyncio.TimeoutError:
                passed, detail = False, f"超时（{format_duration(limit)}）"
            except Exception as e:
                passed, detail = False, f"异常: {e}"
            outcome = SelftestOutcome(key, title, passed, detail, time.perf_counter() - start)
            log_outcome(outcome)
            outcomes.append(outcome)
        print(format_table(outcomes))
        self._emit_json("selftest.json", {"checks": outcomes, "passed": all(o.passed for o in outcomes)})
        return 0 if all(o.passed for o in outcomes) else 1

    # ------------------------------------------------------------------ 入口

    async def run(self, subcommand: str) -> int:
        """运行子命令，返回退出码"""
        handlers: Dict[str, Callable[[], Awaitable[int]]] = {
            "gen-data": self._gen_data,
            "train": self._train,
            "profile": self._profile,
            "sensitivity": self._sensitivity,
            "ntk-flow": self._ntk_flow,
            "serr": self._serr,
            "attr-stability": self._attr_stability,
            "compare-pair": self._compare_pair,
            "selftest": self._selftest,
        }
        handler = handlers.get(subcommand)
        if handler is None:
            raise ValueError(f"未知的子命令: {subcommand}，可选 {', '.join(self.SUBCOMMANDS)}")
        timeout = self.config["experiment"]["timeout"] if subcommand != "selftest" else 0.0
        try:
            logger.info(f"开始执行 {subcommand}")
            async with async_timeout.timeout(timeout or None):
                code = await handler()
        except Exception as e:
            logger.error(f"运行 {subcommand} 失败: {e}")
            raise
        elapsed = self.stopwatch.elapsed if self.stopwatch else None
        self.artifacts.append(report.write_manifest(self.out_dir, subcommand, self.config, self.artifacts, elapsed))
        return code

    async def close(self) -> None:
        """关闭应用"""
        if self.stopwatch is not None:
            logger.info(f"运行结束，共写出 {len(self.artifacts)} 个文件，耗时 {self.stopwatch}")
