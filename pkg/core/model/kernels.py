"""选择核 V_μ 的两种形式

- AdditiveKernel:  V_μ(x,y) = Vd_μ(x) + Vb_μ(y) + Vs_μ(x,y)
- GeneralKernel:   V_μ(x,y) = Σ_i Vd_i(x) Vb_i(y) + Vs_μ(x,y)

各分量都是 Field：常量数组、表达式、回调或正部差。依赖 μ 的核按 μ 的哈希做有界缓存，
缓存只影响速度，不改变结果。
"""
import logging
from abc import ABC, abstractmethod
from collections import OrderedDict
from typing import Callable, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from core.model.expression import Expression

logger = logging.getLogger(__name__)

VECTOR = "vector"
MATRIX = "matrix"


class Field(ABC):
    """E 或 E×E 上、可能依赖 μ 的函数"""

    kind: str = VECTOR
    mu_dependent: bool = False

    def __init__(self, size: int, kind: str):
        self.size = size
        self.kind = kind

    @abstractmethod
    def __call__(self, mu: Optional[np.ndarray]) -> np.ndarray:
        ...

    @property
    def shape(self) -> Tuple[int, ...]:
        return (self.size,) if self.kind == VECTOR else (self.size, self.size)

    def describe(self):
        return type(self).__name__


class ConstantField(Field):
    def __init__(self, values):
        array = np.array(values, dtype=float)
        if array.ndim not in (1, 2):
            raise ValueError(f"field values must be a vector or a matrix, got ndim={array.ndim}")
        super().__init__(array.shape[0], VECTOR if array.ndim == 1 else MATRIX)
        array.setflags(write=False)
        self.values = array

    @classmethod
    def zeros(cls, size: int, kind: str = VECTOR) -> "ConstantField":
        return cls(np.zeros(size if kind == VECTOR else (size, size)))

    def __call__(self, mu=None) -> np.ndarray:
        return self.values

    @property
    def is_zero(self) -> bool:
        return not np.any(self.values)

    def describe(self):
        return self.values.tolist()


class ExpressionField(Field):
    def __init__(self, expression: Expression, size: int, kind: str):
        super().__init__(size, kind)
        self.expression = expression
        self.mu_dependent = expression.mu_dependent
        self._constant = None if expression.mu_dependent else expression.evaluate(size, None, kind == MATRIX)

    def __call__(self, mu=None) -> np.ndarray:
        if self._constant is not None:
            return self._constant
        return self.expression.evaluate(self.size, mu, self.kind == MATRIX)

    def describe(self):
        return self.expression.text


class CallbackField(Field):
    """编程接口：fn(mu) -> 数组；跨进程使用时 fn 需可 pickle"""

    def __init__(self, fn: Callable[[Optional[np.ndarray]], np.ndarray], size: int, kind: str, mu_dependent: bool = True):
        super().__init__(size, kind)
        self.fn = fn
        self.mu_dependent = mu_dependent

    def __call__(self, mu=None) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.fn(mu), dtype=float), self.shape)

    def describe(self):
        return getattr(self.fn, "__name__", "callback")


class PositiveDifferenceField(Field):
    """(a − b)⁺，用于 Σ_μ 约化"""

    def __init__(self, first: Field, second: Field):
        super().__init__(first.size, first.kind)
        self.first = first
        self.second = second
        self.mu_dependent = first.mu_dependent or second.mu_dependent

    def __call__(self, mu=None) -> np.ndarray:
        return np.maximum(self.first(mu) - self.second(mu), 0.0)

    def describe(self):
        return {"positive_part_of": [self.first.describe(), self.second.describe()]}


def _measure_key(mu: Optional[np.ndarray]) -> Optional[bytes]:
    return None if mu is None else np.ascontiguousarray(mu, dtype=float).tobytes()


class SelectionKernel(ABC):
    """V_μ 的公共部分：对称分量、按 μ 缓存、观测到的 sup 范数"""

    variant: str = ""
    cache_size: int = 256

    def __init__(self, size: int, symmetric: Optional[Field] = None):
        self.size = size
        self.symmetric = symmetric if symmetric is not None else ConstantField.zeros(size, MATRIX)
        if self.symmetric.kind != MATRIX or self.symmetric.size != size:
            raise ValueError("symmetric part must be a size×size matrix field")
        self._cache: "OrderedDict[Optional[bytes], np.ndarray]" = OrderedDict()
        self.observed_sup = 0.0
        self.evaluations = 0

    def __getstate__(self):
        state = self.__dict__.copy()
        state["_cache"] = OrderedDict()
        return state

    @property
    @abstractmethod
    def fields(self) -> List[Field]:
        ...

    @property
    def mu_dependent(self) -> bool:
        return any(f.mu_dependent for f in self.fields) or self.symmetric.mu_dependent

    @property
    def is_additive(self) -> bool:
        return self.variant == "additive"

    @abstractmethod
    def _assemble(self, mu: Optional[np.ndarray]) -> np.ndarray:
        ...

    def matrix(self, mu: Optional[np.ndarray] = None) -> np.ndarray:
        """V_μ（只读数组）"""
        key = _measure_key(mu) if self.mu_dependent else None
        cached = self._cache.get(key)
        if cached is not None:
            self._cache.move_to_end(key)
            return cached
        value = np.array(self._assemble(mu), dtype=float)
        value.setflags(write=False)
        self._cache[key] = value
        if len(self._cache) > self.cache_size:
            self._cache.popitem(last=False)
        self.evaluations += 1
        off = value.copy()
        np.fill_diagonal(off, 0.0)
        self.observed_sup = max(self.observed_sup, float(np.abs(off).max(initial=0.0)))
        return value

    def symmetric_matrix(self, mu: Optional[np.ndarray] = None) -> np.ndarray:
        return np.asarray(self.symmetric(mu), dtype=float)

    def reduced_matrix(self, mu: Optional[np.ndarray] = None) -> np.ndarray:
        """Ṽ_μ = V_μ − Vs_μ"""
        return self.matrix(mu) - self.symmetric_matrix(mu)

    def describe(self) -> dict:
        return {"variant": self.variant, "symmetric": self.symmetric.describe()}


class AdditiveKernel(SelectionKernel):
    variant = "additive"

    def __init__(self, death: Field, birth: Field, symmetric: Optional[Field] = None):
        super().__init__(death.size, symmetric)
        for name, f in (("death", death), ("birth", birth)):
            if f.kind != VECTOR or f.size != self.size:
                raise ValueError(f"{name} rates must be a vector field of size {self.size}")
        self.death = death
        self.birth = birth

    @property
    def fields(self) -> List[Field]:
        return [self.death, self.birth]

    def death_rates(self, mu: Optional[np.ndarray] = None) -> np.ndarray:
        return np.asarray(self.death(mu), dtype=float)

    def birth_rates(self, mu: Optional[np.ndarray] = None) -> np.ndarray:
        return np.asarray(self.birth(mu), dtype=float)

    def potential(self, mu: Optional[np.ndarray] = None) -> np.ndarray:
        """Λ_μ = Vb_μ − Vd_μ"""
        return self.birth_rates(mu) - self.death_rates(mu)

    def _assemble(self, mu):
        return self.death_rates(mu)[:, None] + self.birth_rates(mu)[None, :] + self.symmetric_matrix(mu)

    def describe(self) -> dict:
        info = super().describe()
        info.update(death=self.death.describe(), birth=self.birth.describe())
        return info


class GeneralKernel(SelectionKernel):
    variant = "general"

    def __init__(self, components: Iterable[Tuple[Field, Field]], symmetric: Optional[Field] = None, size: Optional[int] = None):
        pairs = list(components)
        if size is None:
            if not pairs:
                raise ValueError("size is required when there are no components")
            size = pairs[0][0].size
        super().__init__(size, symmetric)
        for vd, vb in pairs:
            if vd.mu_dependent or vb.mu_dependent:
                raise ValueError("product components of a general kernel cannot depend on mu")
            if vd.kind != VECTOR or vb.kind != VECTOR or vd.size != size or vb.size != size:
                raise ValueError(f"components must be vector fields of size {size}")
        self.components: List[Tuple[Field, Field]] = pairs

    @property
    def fields(self) -> List[Field]:
        return [f for pair in self.components for f in pair]

    def component_arrays(self) -> Tuple[np.ndarray, np.ndarray]:
        if not self.components:
            empty = np.zeros((0, self.size))
            return empty, empty
        vd = np.vstack([np.asarray(d(None), dtype=float) for d, _ in self.components])
        vb = np.vstack([np.asarray(b(None), dtype=float) for _, b in self.components])
        return vd, vb

    def bounds(self) -> dict:
        """三个有界性函数的 sup：Σ_i|Vd_i − Vb_i|, sup_i Vd_i, sup_i Vb_i"""
        vd, vb = self.component_arrays()
        if vd.shape[0] == 0:
            return {"sum_abs_difference": 0.0, "sup_death": 0.0, "sup_birth": 0.0}
        return {
            "sum_abs_difference": float(np.abs(vd - vb).sum(axis=0).max()),
            "sup_death": float(vd.max()),
            "sup_birth": float(vb.max()),
        }

    def _assemble(self, mu):
        vd, vb = self.component_arrays()
        return vd.T @ vb + self.symmetric_matrix(mu)

    def describe(self) -> dict:
        info = super().describe()
        info["components"] = [[d.describe(), b.describe()] for d, b in self.components]
        return info


def vector_field(source, size: int, params=None) -> Field:
    """从配置值构造向量场：None/数字/列表/表达式字符串"""
    return _field(source, size, VECTOR, params)


def matrix_field(source, size: int, params=None) -> Field:
    return _field(source, size, MATRIX, params)


def _field(source, size: int, kind: str, params) -> Field:
    if isinstance(source, Field):
        return source
    if source is None:
        return ConstantField.zeros(size, kind)
    if isinstance(source, str):
        return ExpressionField(Expression(source, params), size, kind)
    if callable(source):
        return CallbackField(source, size, kind)
    array = np.asarray(source, dtype=float)
    shape = (size,) if kind == VECTOR else (size, size)
    return ConstantField(np.array(np.broadcast_to(array, shape)))


def zero_kernel(size: int) -> AdditiveKernel:
    zero = ConstantField.zeros(size)
    return AdditiveKernel(zero, zero)


def general_from_matrix(matrix: Sequence[Sequence[float]]) -> GeneralKernel:
    """任意有限矩阵的一般分解 V(x,y) = Σ_z 1_{z}(x) V(z,y)"""
    values = np.asarray(matrix, dtype=float)
    size = values.shape[0]
    components = []
    for z in range(size):
        indicator = np.zeros(size)
        indicator[z] = 1.0
        components.append((ConstantField(indicator), ConstantField(values[z])))
    return GeneralKernel(components, size=size)
