"""领域异常定义

所有异常都继承自 ValueError，调用方可以像处理配置错误一样统一捕获。
"""
from typing import Any, List, Optional


class StabilityError(ValueError):
    """谱稳定性工具包的基础异常"""


class NonFiniteError(StabilityError):
    """矩阵或向量中包含 NaN/Inf"""


class DimensionError(StabilityError):
    """维度不匹配"""


class AsymmetricMatrixError(StabilityError):
    """输入矩阵明显不对称"""


class NotPositiveSemidefiniteError(StabilityError):
    """输入矩阵存在超出容差的负特征值"""


class DegenerateSpectrumError(StabilityError):
    """谱退化（全零谱或中位数为零）"""


class MajorizationInputError(StabilityError):
    """优超比较的两个向量长度或总和不一致"""


class StepSizeError(StabilityError):
    """步长超过 2/λ_max 稳定性上界"""


class HessianCapError(StabilityError):
    """参数数量超过 Hessian 计算上限"""


class TrainingDivergedError(StabilityError):
    """训练发散，携带截至发散时的训练日志"""

    def __init__(self, message: str, log: Optional[Any] = None):
        super().__init__(message)
        self.log = log


class IdxFormatError(StabilityError):
    """IDX 文件格式错误"""


class ConfigError(StabilityError):
    """配置文件验证失败，errors 保存全部错误信息"""

    def __init__(self, errors: List[str]):
        self.errors = list(errors)
        super().__init__("配置文件验证失败:\n" + "\n".join(self.errors))
