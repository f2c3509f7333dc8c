"""数据集：合成数据生成与 IDX（MNIST）文件解析"""
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
from loguru import logger

from .errors import DimensionError, IdxFormatError

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
KINDS = ("blobs", "two_moons", "linear_teacher")


@dataclass
class Dataset:
    """输入 (n, d)；标签为类别编号 (n,) 或回归目标 (n, C)"""
    inputs: np.ndarray
    labels: np.ndarray
    meta: Dict[str, Any] = field(default_factory=dict)
    teacher: Optional[np.ndarray] = None

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=np.float64))
        self.labels = np.asarray(self.labels)
        if self.labels.shape[0] != self.inputs.shape[0]:
            raise DimensionError(f"输入 {self.inputs.shape[0]} 条与标签 {self.labels.shape[0]} 条数量不一致")
        if self.labels.ndim == 1 and not np.issubdtype(self.labels.dtype, np.integer):
            raise DimensionError("一维标签必须是整数类别编号")
        self.meta.setdefault("name", "custom")
        self.meta.update(n=self.n, d=self.d, C=self.num_classes)

    def __len__(self) -> int:
        return self.n

    @property
    def n(self) -> int:
        return int(self.inputs.shape[0])

    @property
    def d(self) -> int:
        return int(self.inputs.shape[1])

    @property
    def is_classification(self) -> bool:
        return self.labels.ndim == 1

    @property
    def num_classes(self) -> int:
        if not self.is_classification:
            return int(self.labels.shape[1])
        known = int(self.meta.get("C", 0) or 0)
        top = int(self.labels.max()) + 1 if self.labels.size else 0
        return max(known, top)

    def targets(self) -> np.ndarray:
        """训练目标：分类标签转为 one-hot，回归标签原样返回"""
        if not self.is_classification:
            return self.labels.astype(np.float64)
        out = np.zeros((self.n, self.num_classes))
        out[np.arange(self.n), self.labels] = 1.0
        return out

    def arrays(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.inputs, self.targets()

    def head(self, limit: int) -> "Dataset":
        meta = dict(self.meta)
        return Dataset(self.inputs[:limit], self.labels[:limit], meta, self.teacher)

    def save(self, path: Union[str, Path]) -> None:
        arrays = {"inputs": self.inputs, "labels": self.labels}
        if self.teacher is not None:
            arrays["teacher"] = self.teacher
        np.savez(path, meta=np.array(json.dumps(self.meta, sort_keys=True)), **arrays)
        logger.info(f"数据集已保存: {path} (n = {self.n}, d = {self.d})")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Dataset":
        with np.load(path, allow_pickle=False) as archive:
            meta = json.loads(str(archive["meta"]))
            teacher = archive["teacher"] if "teacher" in archive.files else None
            return cls(archive["inputs"], archive["labels"], meta, teacher)


def _check_sizes(n: int, d: int) -> None:
    if n < 1:
        raise ValueError(f"样本数 n 必须 ≥ 1: {n}")
    if d < 1:
        raise ValueError(f"维度 d 必须 ≥ 1: {d}")


def _blob_centers(classes: int, d: int, separation: float) -> np.ndarray:
    centers = np.zeros((classes, d))
    if d == 1:
        centers[:, 0] = separation * np.arange(classes)
        return centers
    angles = 2.0 * math.pi * np.arange(classes) / classes
    centers[:, 0] = separation * np.cos(angles)
    centers[:, 1] = separation * np.sin(angles)
    return centers


def gen_data(kind: str, n: int, d: int, seed: int = 0, classes: int = 3, noise: float = 0.1,
             separation: float = 5.0, cluster_std: float = 0.5, outputs: int = 1) -> Dataset:
    """生成合成数据集

    Args:
        kind: blobs（高斯簇）、two_moons（双月牙）或 linear_teacher（y = W*x + 噪声）
        n: 样本数
        d: 输入维度
        seed: 随机种子，相同种子得到相同数据
        classes: blobs 的类别数
        noise: two_moons 与 linear_teacher 的噪声标准差
        separation: blobs 簇中心到原点的距离
        cluster_std: blobs 簇内标准差
        outputs: linear_teacher 的输出维度

    Returns:
        Dataset
    """
    _check_sizes(n, d)
    rng = np.random.default_rng(seed)
    meta = {"name": kind, "seed": seed}
    if kind == "blobs":
        if classes < 2:
            raise ValueError(f"blobs 至少需要 2 类: {classes}")
        labels = rng.permutation(np.arange(n) % classes)
        centers = _blob_centers(classes, d, separation)
        inputs = centers[labels] + cluster_std * rng.standard_normal((n, d))
        meta["C"] = classes
        return Dataset(inputs, labels, meta)
    if kind == "two_moons":
        if d < 2:
            raise ValueError("two_moons 需要 d ≥ 2")
        labels = rng.permutation(np.arange(n) % 2)
        angle = rng.uniform(0.0, math.pi, size=n)
        inputs = np.zeros((n, d))
        inputs[:, 0] = np.where(labels == 0, np.cos(angle), 1.0 - np.cos(angle))
        inputs[:, 1] = np.where(labels == 0, np.sin(angle), 0.5 - np.sin(angle))
        inputs += noise * rng.standard_normal((n, d))
        meta["C"] = 2
        return Dataset(inputs, labels, meta)
    if kind == "linear_teacher":
        if outputs < 1:
            raise ValueError(f"输出维度必须 ≥ 1: {outputs}")
        teacher = rng.standard_normal((outputs, d)) / math.sqrt(d)
        inputs = rng.standard_normal((n, d))
        labels = inputs @ teacher.T + noise * rng.standard_normal((n, outputs))
        return Dataset(inputs, labels, meta, teacher)
    raise ValueError(f"未知的数据类型: {kind}，可选 {', '.join(KINDS)}")


def _read_header(blob: bytes, fmt: str, expected_magic: int, path: Path) -> Tuple[int, ...]:
    size = struct.calcsize(fmt)
    if len(blob) < size:
        raise IdxFormatError(f"{path} 文件被截断: 头部需要 {size} 字节，实际 {len(blob)} 字节")
    header = struct.unpack(fmt, blob[:size])
    if header[0] != expected_magic:
        raise IdxFormatError(f"{path} 魔数错误: 期望 0x{expected_magic:08x}，实际 0x{header[0]:08x}")
    return header


def load_idx(images_path: Union[str, Path], labels_path: Union[str, Path], limit: Optional[int] = None) -> Dataset:
    """解析 IDX 格式的图像与标签文件（大端序），像素除以 255 缩放到 [0, 1]

    Args:
        images_path: 图像文件（魔数 0x00000803）
        labels_path: 标签文件（魔数 0x00000801）
        limit: 只取文件中前 limit 个样本

    Returns:
        Dataset，标签为类别编号
    """
    images_path, labels_path = Path(images_path), Path(labels_path)
    image_blob = images_path.read_bytes()
    label_blob = labels_path.read_bytes()

    _, count, rows, cols = _read_header(image_blob, ">IIII", IMAGE_MAGIC, images_path)
    _, label_count = _read_header(label_blob, ">II", LABEL_MAGIC, labels_path)
    if count != label_count:
        raise IdxFormatError(f"图像数量 {count} 与标签数量 {label_count} 不一致")

    pixels = rows * cols
    if len(image_blob) < 16 + count * pixels:
        raise IdxFormatError(f"{images_path} 文件被截断: 需要 {16 + count * pixels} 字节，实际 {len(image_blob)} 字节")
    if len(label_blob) < 8 + count:
        raise IdxFormatError(f"{labels_path} 文件被截断: 需要 {8 + count} 字节，实际 {len(label_blob)} 字节")

    take = count if limit is None else min(count, int(limit))
    images = np.frombuffer(image_blob, dtype=np.uint8, count=take * pixels, offset=16)
    labels = np.frombuffer(label_blob, dtype=np.uint8, count=take, offset=8)
    logger.info(f"已读取 IDX 数据: {take}/{count} 个样本，{rows}×{cols} 像素")
    meta = {"name": images_path.stem, "C": 10, "rows": rows, "cols": cols}
    return Dataset(images.reshape(take, pixels).astype(np.float64) / 255.0, labels.astype(np.int64), meta)
