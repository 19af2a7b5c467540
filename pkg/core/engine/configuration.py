"""粒子构型 η、模拟状态与轨迹记录"""
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd

from core.model.types import Measure


@dataclass(frozen=True)
class Configuration:
    """η ∈ 𝓔_N：每个类型的粒子数，总和为 N"""

    counts: np.ndarray
    N: int

    def __post_init__(self):
        counts = np.array(self.counts, dtype=np.int64)
        if counts.ndim != 1 or np.any(counts < 0):
            raise ValueError(f"counts must be a nonnegative vector, got {counts}")
        if int(counts.sum()) != self.N:
            raise ValueError(f"counts sum to {int(counts.sum())}, expected N={self.N}")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)

    @property
    def size(self) -> int:
        return self.counts.size

    def empirical(self) -> Measure:
        """m(η) = Σ η(x)/N δ_x"""
        return Measure(self.counts / self.N)

    def moved(self, source: int, target: int) -> "Configuration":
        counts = self.counts.copy()
        counts[source] -= 1
        counts[target] += 1
        return Configuration(counts, self.N)


@dataclass
class SimState:
    config: Configuration
    time: float
    rng: np.random.Generator
    event_count: int = 0

    @property
    def frozen(self) -> bool:
        return self.time == np.inf


@dataclass
class TrajectoryRecord:
    """采样时刻上的经验测度 m(η_t)，可附带事件日志"""

    sample_times: np.ndarray
    weights: np.ndarray
    N: int
    events: Optional[List[Tuple[float, int, int]]] = None
    event_count: int = 0
    final_time: float = 0.0
    labels: Tuple[str, ...] = field(default_factory=tuple)

    @property
    def measures(self) -> List[Measure]:
        return [Measure(row) for row in self.weights]

    def to_frame(self) -> pd.DataFrame:
        columns = [f"x_{i + 1}" for i in range(self.weights.shape[1])]
        frame = pd.DataFrame(self.weights, columns=columns)
        frame.insert(0, "time", self.sample_times)
        return frame

    def events_frame(self) -> pd.DataFrame:
        rows = self.events or []
        return pd.DataFrame(rows, columns=["time", "from", "to"])
