"""实验计划：模型引用、测试函数、N 网格、副本数、时刻与验收区间"""
from typing import Dict, List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator

from core.errors import ConfigError
from core.model.spec import ModelSpec, lambda_of

CheckName = Literal["poc_rate", "uniform_in_time", "clt_check", "bias_check", "reduction_compare"]
PhiSource = Union[List[float], str]


class AcceptanceBlock(BaseModel):
    """双侧验收区间；enforce=False 时只报告不判失败"""

    slope_range: Tuple[float, float] = (-0.62, -0.38)
    uniformity_ratio: float = Field(default=2.0, gt=1.0)
    variance_ratio: Tuple[float, float] = (0.85, 1.15)
    ks_max: float = Field(default=0.05, gt=0.0)
    bias_slope: Tuple[float, float] = (-1.3, -0.7)
    enforce: bool = True

    @field_validator("slope_range", "variance_ratio", "bias_slope")
    @classmethod
    def check_interval(cls, value):
        if value[0] > value[1]:
            raise ValueError(f"interval {value} is empty")
        return value


class ExperimentPlan(BaseModel):
    check: CheckName
    model: str = "model"
    phi: Dict[str, PhiSource] = Field(default_factory=lambda: {"indicator:0": "indicator:0"})
    n_grid: List[int]
    replicates: int = Field(ge=2)
    horizon: float = Field(ge=0.0)
    sample_points: int = Field(default=20, ge=2)
    t_eval: Optional[List[float]] = None
    relaxation_multiples: List[float] = Field(default_factory=lambda: [1.0, 5.0, 10.0, 20.0])
    p_norms: List[float] = Field(default_factory=lambda: [1.0, 2.0, 4.0])
    seed: int = 0
    mu0: Union[str, List[float]] = "uniform"
    bootstrap_resamples: int = Field(default=1000, ge=10)
    confidence: float = Field(default=0.95, gt=0.0, lt=1.0)
    acceptance: AcceptanceBlock = Field(default_factory=AcceptanceBlock)
    grid_refine: bool = False
    workers: Optional[int] = None

    @field_validator("n_grid")
    @classmethod
    def check_n_grid(cls, value: List[int]) -> List[int]:
        if not value:
            raise ValueError("n_grid must not be empty")
        if any(n < 1 for n in value):
            raise ValueError("particle numbers must be positive")
        if list(value) != sorted(value) or len(set(value)) != len(value):
            raise ValueError(f"n_grid must be strictly ascending, got {value}")
        return value

    @field_validator("p_norms")
    @classmethod
    def check_p(cls, value: List[float]) -> List[float]:
        if not value or any(p < 1 for p in value):
            raise ValueError("p-norms must be >= 1")
        return value

    @model_validator(mode="after")
    def check_times(self):
        if self.t_eval is not None:
            if any(t < 0 or t > self.horizon for t in self.t_eval):
                raise ValueError(f"t_eval {self.t_eval} must lie within [0, horizon={self.horizon}]")
            if self.t_eval != sorted(self.t_eval):
                raise ValueError("t_eval must be sorted")
        return self

    def sample_times(self, refine: bool = False) -> np.ndarray:
        """sup 的采样网格；refine 时节点数翻倍且包含原网格"""
        points = 2 * self.sample_points - 1 if refine else self.sample_points
        return np.linspace(0.0, self.horizon, points)

    def eval_times(self) -> List[float]:
        return list(self.t_eval) if self.t_eval else [self.horizon]


def resolve_phi(source: PhiSource, spec: ModelSpec) -> np.ndarray:
    """测试函数：向量，或 'indicator:k'（0 起始）、'constant:c'、'lambda'"""
    if isinstance(source, str):
        kind, _, arg = source.partition(":")
        if kind == "indicator":
            k = int(arg)
            if not 0 <= k < spec.size:
                raise ConfigError(f"indicator index {k} outside state space of size {spec.size}")
            values = np.zeros(spec.size)
            values[k] = 1.0
            return values
        if kind == "constant":
            return np.full(spec.size, float(arg or 1.0))
        if kind == "lambda":
            return lambda_of(spec).values.copy()
        raise ConfigError(f"unknown test function '{source}' (use indicator:k, constant:c, lambda or a vector)")
    values = np.asarray(source, dtype=float)
    if values.size != spec.size:
        raise ConfigError(f"test function has {values.size} entries, state space has {spec.size}")
    return values
