# config/run_config.py
"""运行配置文档（YAML）

一个文档描述一个模型和恰好一个任务。load_run_config 把 YAML 语法错误和 schema 错误
都转成带行列号的 ConfigError。
"""
import hashlib
import json
import re
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from config.settings import TOLERANCE_PROFILES, ToleranceProfile
from core.errors import ConfigError
from core.experiments.plan import ExperimentPlan, PhiSource

BASIC_TASKS = ("validate", "simulate", "flow", "eigen", "variance")
EXPERIMENTS = ("poc_rate", "uniform_in_time", "clt_check", "bias_check", "reduction_compare")
ZOO_CHECKS = ("qsd_series", "rate_criterion", "spectral_criterion", "counterexample", "truncation")

VectorSource = Union[None, float, List[float], str]
MatrixSource = Union[None, float, List[List[float]], str]


class _Block(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SelectionBlock(_Block):
    """选择核：加性 (death, birth, symmetric) 或一般形式 (components 或 matrix)"""

    variant: Literal["additive", "general"] = "additive"
    death: VectorSource = None
    birth: VectorSource = None
    symmetric: MatrixSource = None
    components: Optional[List[Tuple[VectorSource, VectorSource]]] = None
    matrix: Optional[List[List[float]]] = None
    params: Dict[str, Any] = Field(default_factory=dict)

    @model_validator(mode="after")
    def check_variant(self):
        if self.variant == "additive" and (self.components is not None or self.matrix is not None):
            raise ValueError("components/matrix belong to the general variant")
        if self.variant == "general" and (self.death is not None or self.birth is not None):
            raise ValueError("death/birth belong to the additive variant; use components")
        if self.variant == "general" and self.components is None and self.matrix is None:
            raise ValueError("general selection needs components or matrix")
        return self


class ModelBlock(_Block):
    """具名构造器 + 参数，或内联的 size/mutation/selection"""

    builder: Optional[str] = None
    params: Dict[str, Any] = Field(default_factory=dict)
    name: Optional[str] = None
    size: Optional[int] = Field(default=None, ge=1)
    labels: Optional[List[str]] = None
    mutation: Optional[List[List[float]]] = None
    selection: SelectionBlock = Field(default_factory=SelectionBlock)

    @model_validator(mode="after")
    def check_source(self):
        if (self.builder is None) == (self.mutation is None):
            raise ValueError("model needs exactly one of 'builder' or 'mutation'")
        if self.mutation is not None:
            rows = len(self.mutation)
            if any(len(row) != rows for row in self.mutation):
                raise ValueError("mutation must be a square matrix")
            if self.size is not None and self.size != rows:
                raise ValueError(f"size {self.size} does not match the {rows}x{rows} mutation matrix")
        return self

    @property
    def label(self) -> str:
        return self.name or self.builder or "inline"


class SimulateBlock(_Block):
    N: int = Field(ge=1)
    horizon: float = Field(gt=0)
    sample_points: int = Field(default=21, ge=2)
    mu0: Union[str, List[float]] = "uniform"
    replicates: int = Field(default=1, ge=1)
    record_events: bool = False


class FlowBlock(_Block):
    horizon: float = Field(default=5.0, gt=0)
    points: int = Field(default=51, ge=2)
    times: Optional[List[float]] = None
    method: Literal["semigroup", "ode", "both"] = "both"
    mu0: Union[str, List[float]] = "uniform"
    step: Optional[float] = Field(default=None, gt=0)


class VarianceBlock(_Block):
    phi: Dict[str, PhiSource] = Field(default_factory=lambda: {"indicator:0": "indicator:0"})
    T: Optional[float] = Field(default=None, ge=0)
    mu0: Union[str, List[float]] = "uniform"
    compare: bool = False
    fleming_viot: bool = False


class ZooCheckBlock(_Block):
    K_terms: int = Field(default=200, ge=10)
    series: Optional[Dict[str, Any]] = None
    subset: List[int] = Field(default_factory=lambda: [0])
    epsilon: float = Field(default=0.1, gt=0)
    factor: int = Field(default=2, ge=2)


class RunConfig(_Block):
    task: str
    model: ModelBlock
    seed: int = 0
    output_dir: Optional[str] = None
    tolerance_profile: Optional[str] = None
    tolerances: Dict[str, float] = Field(default_factory=dict)
    simulate: Optional[SimulateBlock] = None
    flow: FlowBlock = Field(default_factory=FlowBlock)
    variance: VarianceBlock = Field(default_factory=VarianceBlock)
    experiment: Optional[ExperimentPlan] = None
    zoo_check: ZooCheckBlock = Field(default_factory=ZooCheckBlock)

    @model_validator(mode="before")
    @classmethod
    def inject_check(cls, data):
        # 实验块的 check、seed 与 model 标签来自任务与顶层字段
        if isinstance(data, dict):
            task = data.get("task")
            block = data.get("experiment")
            if isinstance(task, str) and task.startswith("experiment:") and isinstance(block, dict):
                block = dict(block)
                block.setdefault("check", task.split(":", 1)[1])
                block.setdefault("seed", data.get("seed", 0))
                data = dict(data)
                data["experiment"] = block
        return data

    @field_validator("task")
    @classmethod
    def check_task(cls, value: str) -> str:
        kind, _, name = value.partition(":")
        if value in BASIC_TASKS:
            return value
        if kind == "experiment" and name in EXPERIMENTS:
            return value
        if kind == "zoo-check" and name in ZOO_CHECKS:
            return value
        raise ValueError(
            f"unknown task '{value}'; expected one of {', '.join(BASIC_TASKS)}, "
            f"experiment:<{'|'.join(EXPERIMENTS)}>, zoo-check:<{'|'.join(ZOO_CHECKS)}>"
        )

    @field_validator("tolerance_profile")
    @classmethod
    def check_profile(cls, value: Optional[str]) -> Optional[str]:
        if value is not None and value not in TOLERANCE_PROFILES:
            raise ValueError(f"unknown tolerance profile '{value}'")
        return value

    @field_validator("tolerances")
    @classmethod
    def check_tolerances(cls, value: Dict[str, float]) -> Dict[str, float]:
        unknown = set(value) - set(ToleranceProfile.model_fields)
        if unknown:
            raise ValueError(f"unknown tolerances {sorted(unknown)}")
        return value

    @model_validator(mode="after")
    def check_blocks(self):
        if self.task == "simulate" and self.simulate is None:
            raise ValueError("task 'simulate' needs a 'simulate' block")
        if self.task.startswith("experiment:"):
            if self.experiment is None:
                raise ValueError(f"task '{self.task}' needs an 'experiment' block")
            if self.experiment.check != self.task.split(":", 1)[1]:
                raise ValueError(f"experiment.check '{self.experiment.check}' contradicts task '{self.task}'")
        return self

    @property
    def task_kind(self) -> str:
        return self.task.split(":", 1)[0]

    @property
    def task_name(self) -> str:
        return self.task.split(":", 1)[1] if ":" in self.task else self.task

    def experiment_plan(self) -> ExperimentPlan:
        plan = self.experiment
        return plan.model_copy(update={"model": self.model.label, "seed": self.seed})

    def config_hash(self) -> str:
        """规范 JSON（键排序，不含输出目录）的 sha256"""
        payload = self.model_dump(mode="json", exclude={"output_dir"})
        canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _node_at(root: Optional[yaml.Node], path: Tuple[Any, ...]) -> Optional[yaml.Node]:
    """沿路径走到最近的已存在节点"""
    node = root
    for key in path:
        if isinstance(node, yaml.MappingNode):
            child = next((v for k, v in node.value if k.value == str(key)), None)
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
            child = node.value[key]
        else:
            child = None
        if child is None:
            break
        node = child
    return node


def _describe(error: Dict[str, Any]) -> str:
    location = ".".join(str(part) for part in error["loc"])
    if error["type"] == "missing":
        return f"missing key '{location}'"
    if error["type"] == "extra_forbidden":
        return f"unknown key '{location}'"
    message = re.sub(r"^Value error, ", "", error["msg"])
    return f"{location or '<root>'}: {message}"


def parse_run_config(text: str, source: str = "<string>") -> RunConfig:
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        raise ConfigError(
            f"{source}: YAML syntax error: {exc.problem}",
            line=mark.line + 1 if mark else None,
            column=mark.column + 1 if mark else None,
        ) from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"{source}: YAML error: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: the run document must be a mapping", line=1, column=1)
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        first = exc.errors()[0]
        node = _node_at(root, tuple(first["loc"]))
        mark = node.start_mark if node is not None else None
        raise ConfigError(
            f"{source}: {_describe(first)}",
            line=mark.line + 1 if mark else None,
            column=mark.column + 1 if mark else None,
            errors=len(exc.errors()),
        ) from exc


def load_run_config(path: Union[str, Path]) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config '{path}': {exc}") from exc
    return parse_run_config(text, str(path))
