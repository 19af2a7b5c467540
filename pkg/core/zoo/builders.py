"""示例模型的构造器

每个构造器返回的 ModelSpec 在 provenance 中记下 builder 名称与参数，截断类模型可以据此按新的 K 重建。
"""
import logging
import math
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, Field, field_validator

from core.errors import ModelValidationError
from core.model.expression import Expression
from core.model.kernels import AdditiveKernel, ConstantField, ExpressionField, VECTOR
from core.model.spec import ModelSpec, truncate_generator
from core.model.types import BoundaryPolicy, RateMatrix, StateSpace, TruncationInfo, as_values

logger = logging.getLogger(__name__)

RateSequence = Union[float, List[float], str]

E = math.e


def _additive(death, birth) -> AdditiveKernel:
    return AdditiveKernel(ConstantField(np.asarray(death, dtype=float)), ConstantField(np.asarray(birth, dtype=float)))


def two_allelic(a: float, b: float, p: float, q: float) -> ModelSpec:
    """E = {1, 2}，Q = [[−a, a], [b, −b]]，V(1,2) = p，V(2,1) = q

    加性分解 Vd = (0, q), Vb = (0, p)，Λ = (0, p − q)。
    """
    if a <= 0 or b <= 0:
        raise ModelValidationError(f"mutation rates must be positive, got a={a}, b={b}", violations=["negative off-diagonal"])
    if p < 0 or q < 0:
        raise ModelValidationError(f"selection rates must be nonnegative, got p={p}, q={q}", violations=["negative kernel"])
    mutation = RateMatrix([[-a, a], [b, -b]])
    params = {"a": a, "b": b, "p": p, "q": q}
    return ModelSpec(
        space=StateSpace(2),
        mutation=mutation,
        kernel=_additive([0.0, q], [0.0, p]),
        name=f"two_allelic(a={a:g},b={b:g},p={p:g},q={q:g})",
        provenance={
            "builder": "two_allelic",
            "params": params,
            "absorbed_generator": two_allelic_absorbed_generator(a, b, p, q).tolist(),
        },
    )


def two_allelic_absorbed_generator(a: float, b: float, p: float, q: float) -> np.ndarray:
    """E ∪ {∂} 上的吸收链生成元，∂ 放在最后"""
    return np.array(
        [
            [-(a + p), a, p],
            [b, -(b + q), q],
            [0.0, 0.0, 0.0],
        ]
    )


class BDParams(BaseModel):
    """生灭链参数；速率序列可以是常数、列表或以 x（1 起始）为变量的表达式"""

    b: RateSequence
    d: RateSequence
    K: int = Field(ge=3)
    boundary_policy: BoundaryPolicy = BoundaryPolicy.ABSORB_FORBID

    @field_validator("b", "d")
    @classmethod
    def check_sequence(cls, value):
        if isinstance(value, str):
            Expression(value)
        return value

    def rates(self, which: str, length: Optional[int] = None) -> np.ndarray:
        """前 length 项速率 (x = 1..length)，默认 length = K"""
        length = self.K if length is None else length
        source = getattr(self, which)
        if isinstance(source, str):
            values = Expression(source).evaluate(length)
        elif isinstance(source, (list, tuple)):
            if len(source) < length:
                raise ModelValidationError(f"rate list '{which}' has {len(source)} entries, {length} needed")
            values = np.asarray(source[:length], dtype=float)
        else:
            values = np.full(length, float(source))
        values = np.asarray(values, dtype=float)
        if not np.all(np.isfinite(values)) or np.any(values <= 0):
            raise ModelValidationError(f"rates '{which}' must be strictly positive and finite", violations=["negative off-diagonal"])
        return values

    def birth_rates(self, length: Optional[int] = None) -> np.ndarray:
        return self.rates("b", length)

    def death_rates(self, length: Optional[int] = None) -> np.ndarray:
        return self.rates("d", length)


def _bd_mutation(births: np.ndarray, deaths: np.ndarray, policy: BoundaryPolicy) -> RateMatrix:
    """{1..K} 上的三对角生成元；K 处 b_K 的外流按边界策略处理"""
    size = births.size
    rates = np.zeros((size, size))
    idx = np.arange(size - 1)
    rates[idx, idx + 1] = births[:-1]
    rates[idx + 1, idx] = deaths[1:]
    leak = np.zeros(size)
    leak[-1] = births[-1]
    # 反射时把 b_K 转给 K−1
    return truncate_generator(rates, leak, policy)


def birth_death(params: Union[BDParams, Dict[str, Any]]) -> ModelSpec:
    """生灭链 Q_{x,x+1} = b_x, Q_{x,x−1} = d_x (x ≥ 2)，杀死速率 Vd(1) = d_1

    Λ = −d_1 𝟙_{x=1}，与 d_1 𝟙_{x=1} 只差一个常数平移，归一化流相同。
    """
    params = params if isinstance(params, BDParams) else BDParams(**params)
    births, deaths = params.birth_rates(), params.death_rates()
    death_kernel = np.zeros(params.K)
    death_kernel[0] = deaths[0]
    return ModelSpec(
        space=StateSpace(params.K, truncation_info=TruncationInfo(params.K, params.boundary_policy, "birth-death chain on N")),
        mutation=_bd_mutation(births, deaths, params.boundary_policy),
        kernel=_additive(death_kernel, np.zeros(params.K)),
        name=f"birth_death(K={params.K})",
        provenance={"builder": "birth_death", "params": params.model_dump(mode="json")},
    )


def counterexample_lambda(b: float, d: float) -> float:
    """λ = b(e^{−1} − 1) + d(e − 1)"""
    return b * (1.0 / E - 1.0) + d * (E - 1.0)


def counterexample_d1(b: float, d: float, b1: float, b1_mode: str) -> float:
    if b1_mode == "paper":
        return d * (E - 1.0)
    if b1_mode == "consistent":
        return d * (E - 1.0) + (b1 - b) * (1.0 - 1.0 / E)
    raise ModelValidationError(f"unknown b1_mode '{b1_mode}' (expected 'paper' or 'consistent')")


def counterexample_bd(b: float, d: float, b1_mode: str = "paper", K: int = 20, b1: Optional[float] = None) -> ModelSpec:
    """h(n) = e^{−n} 为 Q+Λ 特征函数的生灭链

    b_1 = b1（默认 2b），其余 b_i = b, d_i = d；Λ = d_1 𝟙_{x=1}，由 Vb(1) = d_1 承载。
    b1_mode='paper' 取 d_1 = d(e−1)，第一行残差为 (b1−b)(e^{−1}−1)e^{−1}；
    b1_mode='consistent' 取 d_1 = d(e−1) + (b1−b)(1−e^{−1})，第一行恒等式精确成立。
    """
    if not b < d:
        raise ModelValidationError(f"counterexample needs b < d, got b={b}, d={d}")
    if K < 10:
        raise ModelValidationError(f"counterexample needs K >= 10, got {K}")
    b1 = 2.0 * b if b1 is None else float(b1)
    d1 = counterexample_d1(b, d, b1, b1_mode)
    births = np.full(K, float(b))
    births[0] = b1
    deaths = np.full(K, float(d))
    potential = np.zeros(K)
    potential[0] = d1
    lam = counterexample_lambda(b, d)
    return ModelSpec(
        space=StateSpace(K, truncation_info=TruncationInfo(K, BoundaryPolicy.ABSORB_FORBID, "birth-death chain on N")),
        mutation=_bd_mutation(births, deaths, BoundaryPolicy.ABSORB_FORBID),
        kernel=_additive(np.zeros(K), potential),
        name=f"counterexample(b={b:g},d={d:g},{b1_mode},K={K})",
        provenance={
            "builder": "counterexample",
            "params": {"b": b, "d": d, "b1_mode": b1_mode, "K": K, "b1": b1},
            "d1": d1,
            "analytic": {"lambda": lam, "h": np.exp(-np.arange(1, K + 1)).tolist()},
        },
    )


def counterexample_residuals(spec: ModelSpec) -> np.ndarray:
    """((Q+Λ)h − λh)(n)，h 与 λ 取解析值"""
    analytic = spec.provenance.get("analytic")
    if analytic is None:
        raise ModelValidationError(f"model '{spec.name}' carries no analytic eigenpair")
    h = np.asarray(analytic["h"], dtype=float)
    lam = float(analytic["lambda"])
    potential = spec.kernel.potential(None)
    return spec.mutation.entries @ h + potential * h - lam * h


def counterexample_row1_closed_form(b: float, b1: float, b1_mode: str) -> float:
    if b1_mode == "consistent":
        return 0.0
    return (b1 - b) * (1.0 / E - 1.0) / E


def cloning(mutation, potential, c: float = 0.0) -> ModelSpec:
    """常数阈值的克隆选择：Vb = (Λ − c)⁺, Vd = (Λ − c)⁻"""
    Q = mutation if isinstance(mutation, RateMatrix) else RateMatrix.from_off_diagonal(np.asarray(mutation, dtype=float))
    lam = as_values(potential)
    shifted = lam - c
    return ModelSpec(
        space=StateSpace(Q.size),
        mutation=Q,
        kernel=_additive(np.maximum(-shifted, 0.0), np.maximum(shifted, 0.0)),
        name=f"cloning(c={c:g})",
        provenance={"builder": "cloning", "params": {"mutation": Q.entries.tolist(), "potential": lam.tolist(), "c": c}},
    )


def centred_cloning(mutation, potential) -> ModelSpec:
    """随 μ 变化的阈值：Vb_μ = (Λ − μ(Λ))⁺, Vd_μ = (Λ − μ(Λ))⁻"""
    Q = mutation if isinstance(mutation, RateMatrix) else RateMatrix.from_off_diagonal(np.asarray(mutation, dtype=float))
    lam = as_values(potential)
    params = {"lam": lam.tolist()}
    birth = ExpressionField(Expression("pos(lam[x] - avg(lam))", params), Q.size, VECTOR)
    death = ExpressionField(Expression("neg(lam[x] - avg(lam))", params), Q.size, VECTOR)
    return ModelSpec(
        space=StateSpace(Q.size),
        mutation=Q,
        kernel=AdditiveKernel(death, birth),
        name="centred_cloning",
        provenance={"builder": "centred_cloning", "params": {"mutation": Q.entries.tolist(), "potential": lam.tolist()}},
    )


def absorbed_chain(sub_generator, killing: Optional[Sequence[float]] = None) -> ModelSpec:
    """次马氏链的 Fleming–Viot 近似：Vd = κ, Vb = 0

    killing 缺省时取 −(行和)。
    """
    sub = np.asarray(sub_generator, dtype=float)
    off = sub.copy()
    np.fill_diagonal(off, 0.0)
    if np.any(off < 0):
        raise ModelValidationError("sub-generator has negative off-diagonal rates", violations=["negative off-diagonal"])
    kappa = -sub.sum(axis=1) if killing is None else as_values(killing)
    if np.any(kappa < -1e-12):
        raise ModelValidationError("killing rates must be nonnegative", violations=["negative kernel"])
    kappa = np.clip(kappa, 0.0, None)
    size = sub.shape[0]
    return ModelSpec(
        space=StateSpace(size),
        mutation=RateMatrix.from_off_diagonal(off),
        kernel=_additive(kappa, np.zeros(size)),
        name="absorbed_chain",
        provenance={"builder": "absorbed_chain", "params": {"sub_generator": sub.tolist(), "killing": kappa.tolist()}},
    )
