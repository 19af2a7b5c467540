"""N 粒子 Moran 过程的精确事件驱动模拟

η → η − e_x + e_y 的速率为 η(x) (Q_{x,y} + η(y)/N · V_{m(η)}(x,y))。
每个事件都重新计算完整速率表；μ 无关的核可以走缓存 V 的快速路径，
两条路径使用相同的随机数，结果逐位一致。
"""
import logging
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from config.settings import settings
from core.engine.configuration import Configuration, SimState, TrajectoryRecord
from core.engine.rng import SeedLike, make_rng
from core.errors import EventCapExceededError, ModelValidationError
from core.model.kernels import AdditiveKernel, ConstantField
from core.model.spec import ModelSpec, require_additive
from core.model.types import as_weights

logger = logging.getLogger(__name__)

HoldCallback = Callable[[np.ndarray, float, float], None]


class MoranProcess:
    """给定模型和 N 的跳过程"""

    def __init__(self, spec: ModelSpec, N: int, fast_path: bool = True, event_cap: Optional[int] = None):
        if N <= 0:
            raise ModelValidationError(f"population size must be positive, got N={N}")
        self.spec = spec
        self.N = int(N)
        self.size = spec.size
        self.event_cap = settings.EVENT_CAP if event_cap is None else int(event_cap)
        self._q_off = spec.mutation.off_diagonal()
        self.fast_path = bool(fast_path) and not spec.kernel.mu_dependent
        self._v_fixed = self._selection_matrix(None) if self.fast_path else None

    def _selection_matrix(self, mu: Optional[np.ndarray]) -> np.ndarray:
        v = np.array(self.spec.kernel.matrix(mu), dtype=float)
        np.fill_diagonal(v, 0.0)
        return v

    def rate_matrix(self, counts: np.ndarray) -> np.ndarray:
        """R[x,y] = η→η−e_x+e_y 的速率"""
        counts = np.asarray(counts, dtype=float)
        v = self._v_fixed if self.fast_path else self._selection_matrix(counts / self.N)
        return counts[:, None] * (self._q_off + (counts[None, :] / self.N) * v)

    def enumerate_rates(self, counts: np.ndarray) -> List[Tuple[int, int, float]]:
        rates = self.rate_matrix(counts)
        xs, ys = np.nonzero(rates > 0)
        return [(int(x), int(y), float(rates[x, y])) for x, y in zip(xs, ys)]

    def total_rate(self, counts: np.ndarray) -> float:
        return float(self.rate_matrix(counts).sum())

    def draw(self, counts: np.ndarray, rng: np.random.Generator) -> Tuple[float, int, int]:
        """抽取下一个事件：(持续时间, x, y)；冻结状态返回 (inf, -1, -1)"""
        flat = self.rate_matrix(counts).ravel()
        cumulative = np.cumsum(flat)
        total = cumulative[-1]
        if not total > 0:
            return np.inf, -1, -1
        holding = rng.exponential(1.0 / total)
        k = int(np.searchsorted(cumulative, rng.random() * total, side="right"))
        return holding, k // self.size, k % self.size

    def step(self, state: SimState) -> SimState:
        if state.frozen:
            return state
        holding, x, y = self.draw(state.config.counts, state.rng)
        if x < 0:
            return SimState(state.config, np.inf, state.rng, state.event_count)
        return SimState(state.config.moved(x, y), state.time + holding, state.rng, state.event_count + 1)

    def run(
        self,
        counts: np.ndarray,
        rng: np.random.Generator,
        horizon: float,
        sample_times: Sequence[float],
        record_events: bool = False,
        on_hold: Optional[HoldCallback] = None,
    ) -> TrajectoryRecord:
        """从 0 时刻模拟到 horizon，记录每个采样时刻的 m(η_t)

        采样时刻 t 记录的是 t 时刻生效的构型（所有时间 ≤ t 的事件已发生）。
        on_hold(counts, t0, t1) 在每段保持区间上被调用，用于逐事件精确积分。
        """
        times = np.asarray(sample_times, dtype=float)
        if times.size and (np.any(np.diff(times) < 0) or times[0] < 0 or times[-1] > horizon):
            raise ValueError("sample_times must be sorted and lie within [0, horizon]")
        state = np.array(counts, dtype=np.int64)
        out = np.empty((times.size, self.size))
        events: Optional[List[Tuple[float, int, int]]] = [] if record_events else None
        t = 0.0
        i = 0
        n_events = 0
        while True:
            holding, x, y = self.draw(state, rng)
            t_next = t + holding
            if on_hold is not None:
                on_hold(state, t, min(t_next, horizon))
            while i < times.size and times[i] < t_next:
                out[i] = state / self.N
                i += 1
            if t_next > horizon:
                break
            state[x] -= 1
            state[y] += 1
            t = t_next
            n_events += 1
            assert state.sum() == self.N
            if events is not None:
                events.append((t, x + 1, y + 1))
            if n_events > self.event_cap:
                raise EventCapExceededError(
                    f"event cap {self.event_cap} exceeded at t={t:.6g} (N={self.N}, horizon={horizon})",
                    event_cap=self.event_cap,
                )
        return TrajectoryRecord(
            sample_times=times,
            weights=out,
            N=self.N,
            events=events,
            event_count=n_events,
            final_time=t,
            labels=self.spec.space.display_labels,
        )


def init_iid(spec: ModelSpec, N: int, mu0, seed: SeedLike) -> SimState:
    """N 个粒子独立按 μ0 抽样：counts ~ Multinomial(N, μ0)"""
    if N <= 0:
        raise ModelValidationError(f"population size must be positive, got N={N}")
    rng = make_rng(seed)
    weights = as_weights(mu0)
    counts = rng.multinomial(int(N), weights / weights.sum())
    return SimState(Configuration(counts, int(N)), 0.0, rng, 0)


def enumerate_rates(spec: ModelSpec, config: Configuration) -> List[Tuple[int, int, float]]:
    return MoranProcess(spec, config.N).enumerate_rates(config.counts)


def step(spec: ModelSpec, state: SimState) -> SimState:
    return MoranProcess(spec, state.config.N).step(state)


def simulate(
    spec: ModelSpec,
    N: int,
    mu0,
    horizon: float,
    sample_times: Sequence[float],
    seed: SeedLike,
    record_events: bool = False,
    fast_path: bool = True,
    event_cap: Optional[int] = None,
) -> TrajectoryRecord:
    """对 (spec, N, μ0, seed) 确定的轨迹"""
    state = init_iid(spec, N, mu0, seed)
    process = MoranProcess(spec, N, fast_path=fast_path, event_cap=event_cap)
    record = process.run(state.config.counts, state.rng, horizon, sample_times, record_events=record_events)
    logger.debug(f"DEBUG - simulate: {spec.name} N={N} events={record.event_count} horizon={horizon}")
    return record


def fleming_viot_mode(spec: ModelSpec) -> ModelSpec:
    """强制 Vb ≡ 0，Vd 与对称部分不变，于是 Λ = −Vd"""
    kernel = require_additive(spec)
    if isinstance(kernel.birth, ConstantField) and kernel.birth.is_zero:
        return spec
    fv = AdditiveKernel(kernel.death, ConstantField.zeros(spec.size), kernel.symmetric)
    return spec.with_kernel(fv, name=f"{spec.name}:fleming-viot", fleming_viot_from=spec.name)
