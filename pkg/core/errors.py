"""异常层级

所有领域异常都继承自 MoranError，并携带命令行的退出码：
配置错误 1，模型校验失败 2，验收测试失败 3，数值失败 4。
"""
from typing import Any, Dict, List, Optional


class MoranError(Exception):
    """moran-lab 的基础异常"""

    exit_code: int = 4

    def __init__(self, message: str, **details: Any):
        super().__init__(message)
        self.message = message
        self.details: Dict[str, Any] = details

    def to_dict(self) -> Dict[str, Any]:
        return {
            "error": type(self).__name__,
            "message": self.message,
            "exit_code": self.exit_code,
            "details": {k: _plain(v) for k, v in self.details.items()},
        }


class ConfigError(MoranError):
    """配置文件无法解析或不符合 schema"""

    exit_code = 1

    def __init__(self, message: str, line: Optional[int] = None, column: Optional[int] = None, **details: Any):
        if line is not None:
            message = f"{message} (line {line}, column {column})"
        super().__init__(message, line=line, column=column, **details)
        self.line = line
        self.column = column


class ModelValidationError(MoranError):
    """模型不满足可接受性条件"""

    exit_code = 2

    def __init__(self, message: str, violations: Optional[List[str]] = None, **details: Any):
        super().__init__(message, violations=violations or [], **details)
        self.violations = violations or []


class NotAdditiveError(ModelValidationError):
    """需要加性选择核，但模型是一般形式"""


class MuDependentLambdaError(ModelValidationError):
    """加性核的 Λ = Vb − Vd 随 μ 变化"""


class SizeMismatchError(ModelValidationError, ValueError):
    """两个向量/测度的维度不一致"""


class AcceptanceError(MoranError):
    """统计验收条件未通过"""

    exit_code = 3


class NumericalError(MoranError):
    """数值计算失败"""

    exit_code = 4


class EventCapExceededError(NumericalError):
    """模拟事件数超过安全上限"""


class SimplexTooLargeError(NumericalError):
    """|𝓔_N| 超过主方程枚举上限"""


class FlowRangeError(NumericalError):
    """请求的时间区间不在流的覆盖范围内"""


class UnderflowError(NumericalError):
    """归一化分母下溢"""


class SpectralGapError(NumericalError):
    """主特征值不是单重的"""


class QuadratureError(NumericalError):
    """积分无法收敛，或被积函数不衰减"""


class InvariantBreachError(NumericalError):
    """理论上必须成立的恒等式在数值上被破坏"""


def _plain(value: Any) -> Any:
    # numpy 标量和数组转成 JSON 友好的类型
    if hasattr(value, "tolist"):
        return value.tolist()
    return value
