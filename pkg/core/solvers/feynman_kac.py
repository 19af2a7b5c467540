"""Feynman–Kac 半群 P_t^Λ = e^{t(Q+Λ)}、归一化流 μ_t 与 W_{t,T} 算子

归一化量对 Λ 的平移不变，默认用 Λ − sup Λ 计算以避免 e^{λt} 溢出。
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.integrate import simpson

from core.errors import FlowRangeError, UnderflowError
from core.model.spec import ModelSpec, lambda_of
from core.model.types import Measure, TestFunction, as_values, as_weights
from core.solvers.expm import expm

logger = logging.getLogger(__name__)

_TINY = 1e-300
# 单步内 (sup Λ − inf Λ)·Δt 的上限，保证增量归一化不会下溢
_MAX_LOG_DECAY = 50.0


@dataclass
class FlowTrajectory:
    times: np.ndarray
    weights: np.ndarray
    method: str
    log_mass: Optional[np.ndarray] = None
    diagnostics: Dict[str, float] = field(default_factory=dict)

    @property
    def measures(self) -> List[Measure]:
        return [Measure(row) for row in self.weights]

    def measure(self, i: int) -> Measure:
        return Measure(self.weights[i])

    def index_of(self, t: float) -> Optional[int]:
        hits = np.nonzero(np.abs(self.times - t) <= 1e-12 * max(1.0, abs(t)))[0]
        return int(hits[0]) if hits.size else None

    def covers(self, s: float, t: float) -> bool:
        eps = 1e-12 * max(1.0, abs(t))
        return self.times.size > 0 and s >= self.times[0] - eps and t <= self.times[-1] + eps

    def sup_tv(self, other: "FlowTrajectory") -> float:
        if self.weights.shape != other.weights.shape or not np.allclose(self.times, other.times, rtol=0, atol=1e-12):
            raise FlowRangeError("flows are sampled on different grids")
        return float(np.max(0.5 * np.abs(self.weights - other.weights).sum(axis=1)))

    def to_frame(self) -> pd.DataFrame:
        columns = [f"x_{i + 1}" for i in range(self.weights.shape[1])]
        frame = pd.DataFrame(self.weights, columns=columns)
        frame.insert(0, "time", self.times)
        return frame


def fk_generator(spec: ModelSpec, shift: float = 0.0) -> np.ndarray:
    """Q + diag(Λ − shift)"""
    lam = lambda_of(spec).values
    return spec.mutation.entries + np.diag(lam - shift)


def fk_semigroup(spec: ModelSpec, t: float, phi, shift: float = 0.0) -> TestFunction:
    """P_t^{Λ−shift}(φ) = e^{t(Q+Λ−shift)} φ"""
    if t < 0:
        raise ValueError(f"t must be nonnegative, got {t}")
    return TestFunction(expm(fk_generator(spec, shift), t) @ as_values(phi))


def _shift(spec: ModelSpec) -> float:
    return float(lambda_of(spec).values.max())


def _substeps(spec: ModelSpec, dt: float) -> int:
    lam = lambda_of(spec).values
    spread = float(lam.max() - lam.min())
    return max(1, int(np.ceil(spread * dt / _MAX_LOG_DECAY)))


def _advance(weights: np.ndarray, step_matrix: np.ndarray, substeps: int):
    """ν ← ν E，每个子步归一化；返回 (归一化测度, Σ log 质量)"""
    log_mass = 0.0
    for _ in range(substeps):
        weights = weights @ step_matrix
        mass = weights.sum()
        if not mass > _TINY:
            raise UnderflowError(
                f"normalising mass underflowed ({mass:.3e}); rescale Λ by a constant shift",
            )
        log_mass += np.log(mass)
        weights = np.clip(weights / mass, 0.0, None)
        weights /= weights.sum()
    return weights, log_mass


def propagate(spec: ModelSpec, nu, dt: float) -> Measure:
    """非线性传播子 Φ_{t,t+dt}(ν) = ν P_dt^Λ / ν P_dt^Λ(𝟙)"""
    if dt < 0:
        raise ValueError(f"dt must be nonnegative, got {dt}")
    if dt == 0:
        return Measure(as_weights(nu))
    shift = _shift(spec)
    n = _substeps(spec, dt)
    step_matrix = expm(fk_generator(spec, shift), dt / n)
    weights, _ = _advance(as_weights(nu).astype(float), step_matrix, n)
    return Measure(weights)


def normalized_flow(spec: ModelSpec, mu0, times: Sequence[float]) -> FlowTrajectory:
    """μ_t(φ) = μ0 P_t^Λ(φ) / μ0 P_t^Λ(𝟙)，逐段增量归一化

    同时记录 log μ0 P_t^Λ(𝟙)（未平移的 Λ）。
    """
    grid = np.asarray(times, dtype=float)
    if grid.size == 0 or np.any(grid < 0) or np.any(np.diff(grid) < 0):
        raise ValueError("times must be a nonempty sorted list of nonnegative reals")
    shift = _shift(spec)
    generator = fk_generator(spec, shift)
    cache: Dict[float, tuple] = {}
    weights = as_weights(mu0).astype(float)
    out = np.empty((grid.size, spec.size))
    log_mass = np.empty(grid.size)
    current_t = 0.0
    current_log = 0.0
    for i, t in enumerate(grid):
        dt = t - current_t
        if dt > 0:
            key = round(dt, 14)
            if key not in cache:
                n = _substeps(spec, dt)
                cache[key] = (expm(generator, dt / n), n)
            step_matrix, n = cache[key]
            weights, increment = _advance(weights, step_matrix, n)
            current_log += increment + shift * dt
            current_t = t
        out[i] = weights
        log_mass[i] = current_log
    logger.debug(f"DEBUG - normalized_flow: {spec.name} points={grid.size} horizon={grid[-1]:.6g}")
    return FlowTrajectory(times=grid, weights=out, method="semigroup", log_mass=log_mass)


def measure_at(spec: ModelSpec, flow: FlowTrajectory, t: float) -> Measure:
    """流在 t 处的测度；t 不是采样点时从前一个采样点用半群推进"""
    if not flow.covers(t, t):
        raise FlowRangeError(f"time {t} outside flow range [{flow.times[0]}, {flow.times[-1]}]")
    exact = flow.index_of(t)
    if exact is not None:
        return flow.measure(exact)
    k = int(np.searchsorted(flow.times, t, side="right") - 1)
    k = max(k, 0)
    return propagate(spec, flow.weights[k], t - flow.times[k])


def w_operator(spec: ModelSpec, flow: FlowTrajectory, t: float, T: float, phi) -> TestFunction:
    """W_{t,T}(φ) = P_{T−t}^Λ(φ) / μ_t(P_{T−t}^Λ(𝟙))"""
    if t > T:
        raise ValueError(f"need t <= T, got t={t}, T={T}")
    values = as_values(phi)
    if t == T:
        return TestFunction(values)
    mu_t = measure_at(spec, flow, t).weights
    propagator = expm(fk_generator(spec, _shift(spec)), T - t)
    denominator = float(mu_t @ propagator.sum(axis=1))
    if not denominator > _TINY:
        raise UnderflowError(f"W_{{t,T}} denominator underflowed ({denominator:.3e}); rescale Λ by a constant shift")
    return TestFunction(propagator @ values / denominator)


def log_normaliser(spec: ModelSpec, flow: FlowTrajectory, t: float, T: float) -> float:
    """log μ_t(P_{T−t}^Λ(𝟙))，未平移的 Λ"""
    shift = _shift(spec)
    mu_t = measure_at(spec, flow, t).weights
    propagator = expm(fk_generator(spec, shift), T - t)
    return float(np.log(mu_t @ propagator.sum(axis=1)) + shift * (T - t))


def potential_integral(spec: ModelSpec, flow: FlowTrajectory, t: float, T: float, nodes: int = 2049) -> float:
    """∫_t^T μ_s(Λ) ds，Simpson 求积"""
    mu_t = measure_at(spec, flow, t)
    grid = np.linspace(0.0, T - t, nodes)
    sub = normalized_flow(spec, mu_t, grid)
    lam = lambda_of(spec).values
    return float(simpson(sub.weights @ lam, x=grid))
