"""基础领域类型：状态空间、速率矩阵、测度、测试函数"""
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from config.settings import get_tolerances
from core.errors import ModelValidationError, SizeMismatchError


class BoundaryPolicy(str, Enum):
    REFLECT = "reflect"
    ABSORB_FORBID = "absorb-forbid"


@dataclass(frozen=True)
class TruncationInfo:
    retained: int
    boundary_policy: BoundaryPolicy = BoundaryPolicy.ABSORB_FORBID
    original: str = "countable"

    def to_dict(self) -> dict:
        return {
            "original": self.original,
            "retained": self.retained,
            "boundary_policy": self.boundary_policy.value,
        }


@dataclass(frozen=True)
class StateSpace:
    """有限（或截断后的可数）状态空间 E"""

    size: int
    labels: Optional[Tuple[str, ...]] = None
    truncation_info: Optional[TruncationInfo] = None

    def __post_init__(self):
        if self.size < 1:
            raise ModelValidationError(f"state space size must be >= 1, got {self.size}")
        if self.labels is not None:
            labels = tuple(str(label) for label in self.labels)
            object.__setattr__(self, "labels", labels)
            if len(labels) != self.size:
                raise ModelValidationError(f"expected {self.size} labels, got {len(labels)}")
            if len(set(labels)) != len(labels):
                raise ModelValidationError("state labels must be distinct")

    @property
    def display_labels(self) -> Tuple[str, ...]:
        return self.labels if self.labels is not None else tuple(str(i + 1) for i in range(self.size))

    @property
    def is_truncated(self) -> bool:
        return self.truncation_info is not None


class RateMatrix:
    """连续时间马氏链的生成元（保守）"""

    def __init__(self, entries: Union[np.ndarray, Sequence[Sequence[float]]]):
        matrix = np.array(entries, dtype=float)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise ModelValidationError(f"rate matrix must be square, got shape {matrix.shape}")
        matrix.setflags(write=False)
        self.entries = matrix

    @classmethod
    def from_off_diagonal(cls, rates: np.ndarray) -> "RateMatrix":
        """由非对角速率构造，对角元取负行和"""
        matrix = np.array(rates, dtype=float)
        np.fill_diagonal(matrix, 0.0)
        np.fill_diagonal(matrix, -matrix.sum(axis=1))
        return cls(matrix)

    @property
    def size(self) -> int:
        return self.entries.shape[0]

    def off_diagonal(self) -> np.ndarray:
        matrix = self.entries.copy()
        np.fill_diagonal(matrix, 0.0)
        return matrix

    def negative_entries(self) -> list:
        off = self.off_diagonal()
        rows, cols = np.nonzero(off < 0)
        return [(int(i), int(j), float(off[i, j])) for i, j in zip(rows, cols)]

    def row_sums(self) -> np.ndarray:
        return self.entries.sum(axis=1)

    def is_conservative(self, tol: Optional[float] = None) -> bool:
        tol = get_tolerances().exact if tol is None else tol
        scale = max(1.0, float(np.abs(self.entries).max(initial=0.0)))
        return bool(np.all(np.abs(self.row_sums()) <= tol * scale))

    def is_irreducible(self) -> bool:
        """正速率有向图是否强连通"""
        if self.size == 1:
            return True
        graph = csr_matrix(self.off_diagonal() > 0)
        n_components, _ = connected_components(graph, directed=True, connection="strong")
        return n_components == 1

    def apply(self, phi) -> np.ndarray:
        return self.entries @ as_values(phi)

    def __array__(self, dtype=None, copy=None):
        return self.entries if dtype is None else self.entries.astype(dtype)

    def __repr__(self) -> str:
        return f"RateMatrix(size={self.size})"


class Measure:
    """状态空间上的（概率或带符号）测度"""

    def __init__(self, weights, signed: bool = False, tol: Optional[float] = None):
        values = np.array(weights, dtype=float).ravel()
        if not signed:
            tol = get_tolerances().exact if tol is None else tol
            if np.any(values < -tol):
                raise ModelValidationError(f"probability measure has negative weight {values.min():.3e}")
            if abs(values.sum() - 1.0) > max(tol, values.size * 1e-15):
                raise ModelValidationError(f"probability measure has mass {values.sum():.15g}")
            values = np.clip(values, 0.0, None)
        values.setflags(write=False)
        self.weights = values
        self.signed = signed

    @classmethod
    def uniform(cls, size: int) -> "Measure":
        return cls(np.full(size, 1.0 / size))

    @classmethod
    def dirac(cls, size: int, index: int) -> "Measure":
        weights = np.zeros(size)
        weights[index] = 1.0
        return cls(weights)

    @classmethod
    def random(cls, size: int, rng: np.random.Generator) -> "Measure":
        return cls(rng.dirichlet(np.ones(size)))

    @classmethod
    def normalised(cls, weights) -> "Measure":
        values = np.clip(np.asarray(weights, dtype=float), 0.0, None)
        return cls(values / values.sum())

    @property
    def size(self) -> int:
        return self.weights.size

    @property
    def mass(self) -> float:
        return float(self.weights.sum())

    def expect(self, phi) -> float:
        return float(self.weights @ as_values(phi))

    def variance(self, phi) -> float:
        values = as_values(phi)
        centred = values - self.expect(values)
        return float(self.weights @ (centred * centred))

    def __sub__(self, other: "Measure") -> "Measure":
        a, b = as_weights(self), as_weights(other)
        check_same_size(a, b)
        return Measure(a - b, signed=True)

    def __array__(self, dtype=None, copy=None):
        return self.weights if dtype is None else self.weights.astype(dtype)

    def __repr__(self) -> str:
        kind = "signed" if self.signed else "probability"
        return f"Measure({kind}, {np.array2string(self.weights, precision=6)})"


class TestFunction:
    """有界函数 φ: E → ℝ"""

    __test__ = False  # 防止 pytest 收集

    def __init__(self, values):
        array = np.array(values, dtype=float).ravel()
        array.setflags(write=False)
        self.values = array
        self.sup_norm = float(np.abs(array).max(initial=0.0))

    @classmethod
    def constant(cls, size: int, value: float = 1.0) -> "TestFunction":
        return cls(np.full(size, float(value)))

    @classmethod
    def indicator(cls, size: int, index: int) -> "TestFunction":
        values = np.zeros(size)
        values[index] = 1.0
        return cls(values)

    @property
    def size(self) -> int:
        return self.values.size

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    def __repr__(self) -> str:
        return f"TestFunction({np.array2string(self.values, precision=6)})"


def as_weights(measure) -> np.ndarray:
    if isinstance(measure, Measure):
        return measure.weights
    return np.asarray(measure, dtype=float).ravel()


def as_values(phi) -> np.ndarray:
    if isinstance(phi, TestFunction):
        return phi.values
    return np.asarray(phi, dtype=float).ravel()


def check_same_size(*arrays: np.ndarray) -> None:
    sizes = {np.asarray(a).shape[-1] for a in arrays}
    if len(sizes) > 1:
        raise SizeMismatchError(f"size mismatch: {sorted(sizes)}")
