"""前馈网络引擎

前向传播（记录预激活）、乘积形式输入 Jacobian、参数 Jacobian、损失梯度
与损失 Hessian。

参数展平顺序固定：逐层，先权重（行优先）后偏置。parameter_jacobian、
loss_gradient 与 loss_hessian 使用同一顺序。
"""
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from loguru import logger
from scipy.special import logsumexp, softmax
from scipy.stats import ortho_group

from .errors import DimensionError, HessianCapError, NonFiniteError

DEFAULT_HESSIAN_CAP = 5000
FORMAT_HEADER = "mlp v1"


class Activation(str, Enum):
    """逐坐标激活函数；relu 在 0 处导数取 0"""
    IDENTITY = "identity"
    RELU = "relu"
    TANH = "tanh"

    def apply(self, z: np.ndarray) -> np.ndarray:
        if self is Activation.TANH:
            return np.tanh(z)
        if self is Activation.RELU:
            return np.maximum(z, 0.0)
        return z

    def derivative(self, z: np.ndarray) -> np.ndarray:
        if self is Activation.TANH:
            t = np.tanh(z)
            return 1.0 - t * t
        if self is Activation.RELU:
            return (z > 0.0).astype(np.float64)
        return np.ones_like(z)


class Loss(str, Enum):
    """损失函数种类"""
    SQUARED_ERROR = "squared_error"
    CROSS_ENTROPY = "cross_entropy_with_softmax"

    def value(self, yhat: np.ndarray, y: np.ndarray) -> np.ndarray:
        """逐样本损失，输入形状 (..., C)"""
        if self is Loss.SQUARED_ERROR:
            r = yhat - y
            return 0.5 * np.sum(r * r, axis=-1)
        return np.sum(y, axis=-1) * logsumexp(yhat, axis=-1) - np.sum(y * yhat, axis=-1)

    def grad(self, yhat: np.ndarray, y: np.ndarray) -> np.ndarray:
        """∂ℓ/∂ŷ"""
        if self is Loss.SQUARED_ERROR:
            return yhat - y
        return softmax(yhat, axis=-1) * np.sum(y, axis=-1, keepdims=True) - y


@dataclass(frozen=True)
class Layer:
    weight: np.ndarray
    bias: Optional[np.ndarray]
    activation: Activation

    @property
    def fan_in(self) -> int:
        return self.weight.shape[1]

    @property
    def fan_out(self) -> int:
        return self.weight.shape[0]

    @property
    def parameter_count(self) -> int:
        return self.weight.size + (self.bias.size if self.bias is not None else 0)


@dataclass(frozen=True)
class ForwardTrace:
    """一次前向传播的记录：输入、各层预激活、各层输出"""
    input: np.ndarray
    pre_activations: Tuple[np.ndarray, ...]
    activations: Tuple[np.ndarray, ...]

    @property
    def output(self) -> np.ndarray:
        return self.activations[-1]


Params = List[Tuple[np.ndarray, Optional[np.ndarray]]]


class Mlp:
    """前馈网络，诊断期间不可变"""

    def __init__(self, layers: Sequence[Layer]):
        if not layers:
            raise DimensionError("网络至少需要一层")
        frozen = []
        for i, layer in enumerate(layers):
            w = np.array(layer.weight, dtype=np.float64)
            b = None if layer.bias is None else np.array(layer.bias, dtype=np.float64).reshape(-1)
            if w.ndim != 2:
                raise DimensionError(f"第{i + 1}层权重必须是二维矩阵")
            if b is not None and b.shape[0] != w.shape[0]:
                raise DimensionError(f"第{i + 1}层偏置长度 {b.shape[0]} 与输出维度 {w.shape[0]} 不符")
            if i > 0 and w.shape[1] != frozen[-1].fan_out:
                raise DimensionError(f"第{i + 1}层输入维度 {w.shape[1]} 与上一层输出 {frozen[-1].fan_out} 不符")
            if not np.all(np.isfinite(w)) or (b is not None and not np.all(np.isfinite(b))):
                raise NonFiniteError(f"第{i + 1}层参数包含 NaN 或 Inf")
            w.setflags(write=False)
            if b is not None:
                b.setflags(write=False)
            frozen.append(Layer(w, b, Activation(layer.activation)))
        if frozen[-1].activation is not Activation.IDENTITY:
            raise DimensionError("最后一层激活必须是 identity")
        self.layers: Tuple[Layer, ...] = tuple(frozen)

    # ------------------------------------------------------------------ 结构

    @property
    def widths(self) -> List[int]:
        return [self.layers[0].fan_in] + [layer.fan_out for layer in self.layers]

    @property
    def input_dim(self) -> int:
        return self.layers[0].fan_in

    @property
    def output_dim(self) -> int:
        return self.layers[-1].fan_out

    @property
    def parameter_count(self) -> int:
        return sum(layer.parameter_count for layer in self.layers)

    def params(self) -> Params:
        return [(layer.weight, layer.bias) for layer in self.layers]

    def parameters(self) -> np.ndarray:
        """按固定顺序展平的参数向量"""
        parts = []
        for w, b in self.params():
            parts.append(w.reshape(-1))
            if b is not None:
                parts.append(b)
        return np.concatenate(parts)

    def unflatten(self, theta: np.ndarray) -> Params:
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.parameter_count,):
            raise DimensionError(f"参数向量长度应为 {self.parameter_count}，实际 {theta.shape}")
        out: Params = []
        pos = 0
        for layer in self.layers:
            w = theta[pos:pos + layer.weight.size].reshape(layer.weight.shape)
            pos += layer.weight.size
            b = None
            if layer.bias is not None:
                b = theta[pos:pos + layer.bias.size]
                pos += layer.bias.size
            out.append((w, b))
        return out

    def with_parameters(self, theta: np.ndarray) -> "Mlp":
        params = self.unflatten(theta)
        return Mlp([Layer(w, b, layer.activation) for (w, b), layer in zip(params, self.layers)])

    def with_weights(self, params: Params) -> "Mlp":
        return Mlp([Layer(w, b, layer.activation) for (w, b), layer in zip(params, self.layers)])

    # ------------------------------------------------------------------ 前向

    def _check_inputs(self, xs: np.ndarray) -> np.ndarray:
        xs = np.asarray(xs, dtype=np.float64)
        if xs.shape[-1] != self.input_dim:
            raise DimensionError(f"输入维度应为 {self.input_dim}，实际 {xs.shape[-1]}")
        return xs

    def _propagate(self, xs: np.ndarray, params: Optional[Params] = None) -> Tuple[List[np.ndarray], List[np.ndarray]]:
        """批量前向，xs 形状 (B, n_0)；返回各层预激活与输出"""
        params = params if params is not None else self.params()
        pre: List[np.ndarray] = []
        acts: List[np.ndarray] = [xs]
        a = xs
        for (w, b), layer in zip(params, self.layers):
            z = a @ w.T
            if b is not None:
                z = z + b
            a = layer.activation.apply(z)
            pre.append(z)
            acts.append(a)
        return pre, acts

    def forward(self, x) -> ForwardTrace:
        x = self._check_inputs(x)
        if x.ndim != 1:
            raise DimensionError("forward 只接受单个输入向量，批量请使用 forward_batch")
        pre, acts = self._propagate(x[None, :])
        return ForwardTrace(
            input=x,
            pre_activations=tuple(z[0] for z in pre),
            activations=tuple(a[0] for a in acts[1:]),
        )

    def forward_batch(self, xs) -> np.ndarray:
        xs = self._check_inputs(xs)
        _, acts = self._propagate(np.atleast_2d(xs))
        return acts[-1]

    def predict_class(self, xs) -> np.ndarray:
        return np.argmax(self.forward_batch(xs), axis=-1)

    # ------------------------------------------------------------------ 输入 Jacobian

    def _product(self, pre: List[np.ndarray]) -> np.ndarray:
        """W_L·D_{L−1}·…·D_1·W_1，pre 中每项形状 (B, n_i)"""
        batch = pre[0].shape[0]
        m = np.broadcast_to(self.layers[0].weight, (batch,) + self.layers[0].weight.shape)
        for i in range(1, len(self.layers)):
            d = self.layers[i - 1].activation.derivative(pre[i - 1])
            m = self.layers[i].weight @ (d[:, :, None] * m)
        return np.array(m)

    def input_jacobian_product(self, trace: ForwardTrace) -> np.ndarray:
        """乘积形式输入 Jacobian，形状 C × n_0"""
        if len(trace.pre_activations) != len(self.layers):
            raise DimensionError("ForwardTrace 与网络层数不一致")
        return self._product([z[None, :] for z in trace.pre_activations])[0]

    def input_jacobians(self, xs) -> np.ndarray:
        """批量乘积形式 Jacobian，形状 (B, C, n_0)"""
        xs = np.atleast_2d(self._check_inputs(xs))
        pre, _ = self._propagate(xs)
        return self._product(pre)

    def finite_difference_jacobian(self, x, h: float = 1e-5) -> np.ndarray:
        """中心差分 Jacobian (f(x+h·e_j) − f(x−h·e_j)) / 2h"""
        if h <= 0.0:
            raise ValueError(f"差分步长必须为正: {h}")
        x = self._check_inputs(x)
        steps = h * np.eye(self.input_dim)
        plus = self.forward_batch(x[None, :] + steps)
        minus = self.forward_batch(x[None, :] - steps)
        return ((plus - minus) / (2.0 * h)).T

    # ------------------------------------------------------------------ 反向

    def _backprop(self, pre: List[np.ndarray], acts: List[np.ndarray], delta: np.ndarray,
                  params: Optional[Params] = None, reduce: bool = True) -> np.ndarray:
        """从输出端误差 delta 反向累积参数梯度

        reduce=True 时对批量求和，返回 (p,)；否则返回每个批量元素的梯度 (B, p)。
        """
        params = params if params is not None else self.params()
        blocks: List[np.ndarray] = []
        for i in range(len(self.layers) - 1, -1, -1):
            w, b = params[i]
            a_prev = acts[i]
            if reduce:
                gw = (delta.T @ a_prev).reshape(-1)
                gb = np.sum(delta, axis=0) if b is not None else None
            else:
                gw = (delta[:, :, None] * a_prev[:, None, :]).reshape(delta.shape[0], -1)
                gb = delta if b is not None else None
            blocks.append(gb)
            blocks.append(gw)
            if i > 0:
                delta = (delta @ w) * self.layers[i - 1].activation.derivative(pre[i - 1])
        parts = [blk for blk in reversed(blocks) if blk is not None]
        return np.concatenate(parts, axis=-1)

    def parameter_jacobian(self, x) -> np.ndarray:
        """∇_θ f(x)，形状 C × p，第 c 行是输出坐标 c 的参数梯度"""
        x = self._check_inputs(x)
        pre, acts = self._propagate(x[None, :])
        c = self.output_dim
        pre_rep = [np.repeat(z, c, axis=0) for z in pre]
        acts_rep = [np.repeat(a, c, axis=0) for a in acts]
        return self._backprop(pre_rep, acts_rep, np.eye(c), reduce=False)

    def parameter_jacobians(self, xs) -> np.ndarray:
        """批量参数 Jacobian，形状 (N, C, p)"""
        xs = np.atleast_2d(self._check_inputs(xs))
        return np.stack([self.parameter_jacobian(x) for x in xs])

    def loss_value(self, x, y, loss: Loss) -> float:
        yhat = self.forward_batch(x)[0]
        return float(Loss(loss).value(yhat, np.asarray(y, dtype=np.float64)))

    def batch_loss(self, xs, ys, loss: Loss, params: Optional[Params] = None) -> float:
        xs = np.atleast_2d(self._check_inputs(xs))
        _, acts = self._propagate(xs, params)
        return float(np.mean(Loss(loss).value(acts[-1], np.atleast_2d(ys))))

    def _mean_gradient(self, xs: np.ndarray, ys: np.ndarray, loss: Loss, params: Optional[Params] = None) -> np.ndarray:
        pre, acts = self._propagate(xs, params)
        if ys.shape != acts[-1].shape:
            raise DimensionError(f"标签形状 {ys.shape} 与输出形状 {acts[-1].shape} 不符")
        delta = Loss(loss).grad(acts[-1], ys) / xs.shape[0]
        return self._backprop(pre, acts, delta, params)

    def loss_gradient(self, x, y, loss: Loss) -> np.ndarray:
        """单样本损失对展平参数的梯度（反向累积）"""
        x = self._check_inputs(x)
        y = np.atleast_1d(np.asarray(y, dtype=np.float64))
        return self._mean_gradient(x[None, :], y[None, :], loss)

    def batch_loss_gradient(self, xs, ys, loss: Loss, params: Optional[Params] = None) -> np.ndarray:
        """批量平均损失的梯度"""
        xs = np.atleast_2d(self._check_inputs(xs))
        ys = np.atleast_2d(np.asarray(ys, dtype=np.float64))
        return self._mean_gradient(xs, ys, loss, params)

    def batch_loss_hessian(self, xs, ys, loss: Loss, h: float = 1e-5,
                           cap: int = DEFAULT_HESSIAN_CAP) -> np.ndarray:
        """批量平均损失的 Hessian：对解析梯度做中心差分后对称化"""
        p = self.parameter_count
        if p > cap:
            raise HessianCapError(f"参数数量 {p} 超过 Hessian 上限 {cap}")
        xs = np.atleast_2d(self._check_inputs(xs))
        ys = np.atleast_2d(np.asarray(ys, dtype=np.float64))
        theta = self.parameters()
        hess = np.empty((p, p))
        for j in range(p):
            step = np.zeros(p)
            step[j] = h
            g_plus = self._mean_gradient(xs, ys, loss, self.unflatten(theta + step))
            g_minus = self._mean_gradient(xs, ys, loss, self.unflatten(theta - step))
            hess[:, j] = (g_plus - g_minus) / (2.0 * h)
        logger.debug(f"Hessian 计算完成: p = {p}")
        return 0.5 * (hess + hess.T)

    def loss_hessian(self, x, y, loss: Loss, h: float = 1e-5, cap: int = DEFAULT_HESSIAN_CAP) -> np.ndarray:
        """单样本损失 Hessian，p × p 对称矩阵"""
        x = self._check_inputs(x)
        y = np.atleast_1d(np.asarray(y, dtype=np.float64))
        return self.batch_loss_hessian(x[None, :], y[None, :], loss, h, cap)

    # ------------------------------------------------------------------ 序列化

    def to_text(self) -> str:
        lines = [f"{FORMAT_HEADER} L={len(self.layers)}"]
        for layer in self.layers:
            flag = "bias" if layer.bias is not None else "nobias"
            lines.append(f"layer {layer.fan_in} {layer.fan_out} {layer.activation.value} {flag}")
            for row in layer.weight:
                lines.append(" ".join(repr(float(v)) for v in row))
            if layer.bias is not None:
                lines.append(" ".join(repr(float(v)) for v in layer.bias))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Mlp":
        header, _, body = text.partition("\n")
        parts = header.split()
        if len(parts) != 3 or " ".join(parts[:2]) != FORMAT_HEADER or not parts[2].startswith("L="):
            raise ValueError(f"无法识别的网络文件头: {header!r}")
        count = int(parts[2][2:])
        tokens = body.split()
        pos = 0
        layers = []
        for i in range(count):
            if pos + 5 > len(tokens):
                raise ValueError(f"网络文件被截断：缺少第{i + 1}层")
            if tokens[pos] != "layer":
                raise ValueError(f"第{i + 1}层缺少 layer 标记")
            n_in, n_out = int(tokens[pos + 1]), int(tokens[pos + 2])
            act, flag = tokens[pos + 3], tokens[pos + 4]
            pos += 5
            if pos + n_in * n_out + (n_out if flag == "bias" else 0) > len(tokens):
                raise ValueError(f"网络文件被截断：第{i + 1}层参数不完整")
            w = np.array([float(t) for t in tokens[pos:pos + n_in * n_out]]).reshape(n_out, n_in)
            pos += n_in * n_out
            b = None
            if flag == "bias":
                b = np.array([float(t) for t in tokens[pos:pos + n_out]])
                pos += n_out
            layers.append(Layer(w, b, Activation(act)))
        if pos != len(tokens):
            raise ValueError(f"网络文件末尾有 {len(tokens) - pos} 个多余数据")
        return cls(layers)

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Mlp":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Mlp) or len(self.layers) != len(other.layers):
            return False
        for a, b in zip(self.layers, other.layers):
            if a.activation is not b.activation or not np.array_equal(a.weight, b.weight):
                return False
            if (a.bias is None) != (b.bias is None):
                return False
            if a.bias is not None and not np.array_equal(a.bias, b.bias):
                return False
        return True

    def __repr__(self) -> str:
        acts = ",".join(layer.activation.value for layer in self.layers)
        return f"Mlp(widths={self.widths}, activations={acts})"


def _orthogonal(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    """Haar 分布正交矩阵的前 rows 行、前 cols 列"""
    size = max(rows, cols)
    if size == 1:
        return np.ones((1, 1))
    return ortho_group.rvs(size, random_state=rng)[:rows, :cols]


def init_mlp(widths: Sequence[int], activation: Union[str, Activation] = Activation.TANH,
             gain: float = 1.0, seed: Union[int, np.random.Generator, None] = 0,
             init: str = "gaussian", bias: bool = True) -> Mlp:
    """按宽度列表初始化网络

    gaussian：权重服从 N(0, (gain/√fan_in)²)，偏置为 0；
    orthogonal：权重为 gain 倍的（半）正交矩阵。最后一层激活固定为 identity。
    """
    if len(widths) < 2:
        raise DimensionError("宽度列表至少包含输入与输出两个维度")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    act = Activation(activation)
    layers = []
    for i in range(1, len(widths)):
        n_in, n_out = int(widths[i - 1]), int(widths[i])
        if init == "orthogonal":
            w = gain * _orthogonal(rng, n_out, n_in)
        elif init == "gaussian":
            w = rng.standard_normal((n_out, n_in)) * (gain / np.sqrt(n_in))
        else:
            raise ValueError(f"未知的初始化方式: {init}")
        layer_act = act if i < len(widths) - 1 else Activation.IDENTITY
        layers.append(Layer(w, np.zeros(n_out) if bias else None, layer_act))
    return Mlp(layers)
