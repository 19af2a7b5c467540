"""ModelSpec 及其派生量：漂移 D、势函数 Λ、Σ_μ 约化、非线性生成元"""
import logging
from dataclasses import dataclass, field, replace
from typing import Any, Dict, Optional

import numpy as np

from config.settings import get_tolerances
from core.errors import MuDependentLambdaError, NotAdditiveError
from core.model.kernels import (
    MATRIX,
    AdditiveKernel,
    ConstantField,
    PositiveDifferenceField,
    SelectionKernel,
)
from core.model.types import BoundaryPolicy, Measure, RateMatrix, StateSpace, TestFunction, as_weights

logger = logging.getLogger(__name__)

# 检查 Λ 与 μ 无关时使用的固定随机流
_LAMBDA_CHECK_SEED = 20240601
_LAMBDA_CHECK_SAMPLES = 3


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """模型的唯一事实来源：状态空间、突变生成元 Q、选择核 V"""

    space: StateSpace
    mutation: RateMatrix
    kernel: SelectionKernel
    name: str = "model"
    provenance: Dict[str, Any] = field(default_factory=dict)

    @property
    def size(self) -> int:
        return self.space.size

    @property
    def is_additive(self) -> bool:
        return self.kernel.is_additive

    def with_kernel(self, kernel: SelectionKernel, name: Optional[str] = None, **provenance: Any) -> "ModelSpec":
        merged = dict(self.provenance)
        merged.update(provenance)
        return replace(self, kernel=kernel, name=name or self.name, provenance=merged)


def require_additive(spec: ModelSpec) -> AdditiveKernel:
    if not isinstance(spec.kernel, AdditiveKernel):
        raise NotAdditiveError(f"model '{spec.name}' has a {spec.kernel.variant} kernel; an additive kernel is required")
    return spec.kernel


def kernel_matrix(spec: ModelSpec, mu=None) -> np.ndarray:
    """V_μ"""
    return spec.kernel.matrix(None if mu is None else as_weights(mu))


def reduced_kernel(spec: ModelSpec, mu=None) -> np.ndarray:
    """Ṽ_μ = V_μ − Vs_μ"""
    return spec.kernel.reduced_matrix(None if mu is None else as_weights(mu))


def effective_drift(spec: ModelSpec, mu) -> np.ndarray:
    """D(x,y) = V_μ(x,y) − V_μ(y,x)

    对称分量在减法前就被去掉，因此它对 D 的贡献严格为零。
    """
    v = reduced_kernel(spec, mu)
    return v - v.T


def generator_at(spec: ModelSpec, mu, reduced: bool = False) -> RateMatrix:
    """Q_μ = Q + Π_μ，reduced=True 时用 Ṽ_μ 得到 Q̃_μ

    Π_μ φ(x) = Σ_y μ(y) V_μ(x,y) (φ(y) − φ(x))
    """
    weights = as_weights(mu)
    v = reduced_kernel(spec, weights) if reduced else kernel_matrix(spec, weights)
    selection = v * weights[None, :]
    return RateMatrix.from_off_diagonal(spec.mutation.off_diagonal() + selection)


def lambda_of(spec: ModelSpec) -> TestFunction:
    """Λ = Vb − Vd，在均匀测度处求值

    在 3 个随机测度上重新求值核对。μ 只通过加性常数影响 Λ 时视为无关
    （归一化流对 Λ 的平移不变）。此时返回的 Λ 固定取均匀测度处的值，
    eigen_triplet 的 λ、log_mass 等未归一化量都以这个参考测度为准，换参考测度只差一个常数。
    """
    kernel = require_additive(spec)
    size = spec.size
    reference = kernel.potential(np.full(size, 1.0 / size))
    if not kernel.mu_dependent:
        return TestFunction(reference)
    tol = get_tolerances().exact
    rng = np.random.default_rng(_LAMBDA_CHECK_SEED)
    scale = max(1.0, float(np.abs(reference).max(initial=0.0)))
    for _ in range(_LAMBDA_CHECK_SAMPLES):
        mu = rng.dirichlet(np.ones(size))
        delta = kernel.potential(mu) - reference
        spread = float(delta.max() - delta.min())
        if spread > tol * scale:
            raise MuDependentLambdaError(
                f"Λ of model '{spec.name}' depends on mu (spread {spread:.3e})",
                violations=["Λ depends on μ"],
            )
    return TestFunction(reference)


def shifted_potential(spec: ModelSpec) -> np.ndarray:
    """Λ − sup Λ（≤ 0），长时间流的默认形式"""
    lam = lambda_of(spec).values
    return lam - lam.max()


def killing_rates(spec: ModelSpec) -> TestFunction:
    """吸收链的杀死速率 κ = sup Λ − Λ"""
    return TestFunction(-shifted_potential(spec))


def sigma_reduce(spec: ModelSpec) -> ModelSpec:
    """V − Σ_μ：Vd′ = (Vd − Vb)⁺, Vb′ = (Vb − Vd)⁺, Vs′ = 0"""
    kernel = require_additive(spec)
    if _already_reduced(kernel):
        return spec
    death = PositiveDifferenceField(kernel.death, kernel.birth)
    birth = PositiveDifferenceField(kernel.birth, kernel.death)
    reduced = AdditiveKernel(death, birth, ConstantField.zeros(spec.size, MATRIX))
    logger.debug(f"DEBUG - sigma_reduce: model '{spec.name}' reduced")
    return spec.with_kernel(reduced, name=f"{spec.name}:reduced", reduced_from=spec.name)


def _already_reduced(kernel: AdditiveKernel) -> bool:
    # 已经是正部差且对称部分为零时，再约化得到同一个核
    symmetric_zero = isinstance(kernel.symmetric, ConstantField) and kernel.symmetric.is_zero
    return (
        symmetric_zero
        and isinstance(kernel.death, PositiveDifferenceField)
        and isinstance(kernel.birth, PositiveDifferenceField)
        and kernel.death.first is kernel.birth.second
        and kernel.death.second is kernel.birth.first
    )


def truncate_generator(inner: np.ndarray, leak: np.ndarray, policy: BoundaryPolicy, inward: Optional[np.ndarray] = None) -> RateMatrix:
    """把离开截断区域的速率按边界策略处理

    Args:
        inner: 截断区域内的非对角速率
        leak: 每个状态离开截断区域的总速率
        policy: absorb-forbid 丢弃，reflect 把这部分速率转向 inward 指定的内部状态
        inward: 每个状态的反射目标，默认是前一个状态

    Returns:
        截断后的保守生成元
    """
    rates = np.array(inner, dtype=float)
    np.fill_diagonal(rates, 0.0)
    leak = np.asarray(leak, dtype=float)
    if BoundaryPolicy(policy) is BoundaryPolicy.REFLECT:
        size = rates.shape[0]
        targets = np.maximum(np.arange(size) - 1, 0) if inward is None else np.asarray(inward, dtype=int)
        for x in np.nonzero(leak > 0)[0]:
            if targets[x] != x:
                rates[x, targets[x]] += leak[x]
    return RateMatrix.from_off_diagonal(rates)


def model_to_dict(spec: ModelSpec) -> Dict[str, Any]:
    """规范化序列化，用于报告"""
    info: Dict[str, Any] = {
        "name": spec.name,
        "size": spec.size,
        "labels": list(spec.space.display_labels),
        "mutation": spec.mutation.entries.tolist(),
        "kernel": spec.kernel.describe(),
        "mu_dependent": spec.kernel.mu_dependent,
    }
    if spec.space.truncation_info is not None:
        info["truncation"] = spec.space.truncation_info.to_dict()
    builder = spec.provenance.get("builder")
    if builder is not None:
        info["builder"] = builder
        info["params"] = spec.provenance.get("params", {})
    return info


def initial_measure(spec: ModelSpec, source: Any = None) -> Measure:
    """解析初始分布：None/'uniform'、'dirac:k'、或权重列表"""
    if source is None or source == "uniform":
        return Measure.uniform(spec.size)
    if isinstance(source, Measure):
        return source
    if isinstance(source, str) and source.startswith("dirac:"):
        return Measure.dirac(spec.size, int(source.split(":", 1)[1]))
    return Measure(source)
