from typing import List, Sequence, Union
import re
import time

import humanize
import numpy as np
from loguru import logger


def spawn_rngs(seed: Union[int, Sequence[int]], count: int) -> List[np.random.Generator]:
    """
    从主种子派生 count 个相互独立的随机数流

    第 i 个流只取决于 (seed, i)，与调度顺序无关，因此并行执行的结果与串行一致。

    Args:
        seed: 主种子
        count: 需要的随机流数量

    Returns:
        随机数生成器列表
    """
    children = np.random.SeedSequence(seed).spawn(count)
    return [np.random.default_rng(child) for child in children]


def unit_rng(seed: int, index: int) -> np.random.Generator:
    """第 index 个工作单元的随机流，等价于 spawn_rngs(seed, index + 1)[index]"""
    return np.random.default_rng(np.random.SeedSequence(seed).spawn(index + 1)[index])


def unit_seed(seed: int, index: int) -> int:
    """第 index 个工作单元的整数种子，供只接受 int 种子的接口使用"""
    return int(np.random.SeedSequence(seed).spawn(index + 1)[index].generate_state(1)[0])


def parse_number_list(value: Union[str, Sequence[float]], kind=float) -> List:
    """
    解析逗号或空白分隔的数值列表

    Args:
        value: 形如 "0.5, 1.0, 2.0" 的字符串，或已经是序列
        kind: 元素类型（int 或 float）

    Returns:
        数值列表
    """
    if isinstance(value, (list, tuple)):
        return [kind(v) for v in value]
    tokens = [t for t in re.split(r"[,\s]+", str(value).strip()) if t]
    try:
        return [kind(t) for t in tokens]
    except ValueError as e:
        logger.error(f"无法解析数值列表 {value!r}: {e}")
        raise


def format_duration(seconds: float) -> str:
    """把耗时格式化为易读文本"""
    if seconds < 1.0:
        return f"{seconds * 1000:.0f} 毫秒"
    return humanize.precisedelta(seconds, minimum_unit="milliseconds", format="%0.1f")


class Stopwatch:
    """记录一段计算的耗时"""

    def __init__(self):
        self.start = time.perf_counter()

    @property
    def elapsed(self) -> float:
        return time.perf_counter() - self.start

    def __str__(self) -> str:
        return format_duration(self.elapsed)
