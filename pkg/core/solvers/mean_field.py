"""平均场 ODE 与非齐次传播子

∂_t γ(x) = (γQ)(x) − γ(x) Σ_y D_γ(x,y) γ(y)，D_γ = V_γ − V_γᵀ。
定步长 RK4，每步重新归一化并记录质量漂移与负值截断；Richardson 半步估计误差。
"""
import logging
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np

from config.settings import get_tolerances
from core.errors import FlowRangeError, NumericalError
from core.model.spec import ModelSpec, effective_drift, generator_at
from core.model.types import Measure, as_weights
from core.solvers.feynman_kac import FlowTrajectory

logger = logging.getLogger(__name__)


def mean_field_drift(spec: ModelSpec, gamma: np.ndarray) -> np.ndarray:
    d = effective_drift(spec, gamma)
    return gamma @ spec.mutation.entries - gamma * (d @ gamma)


def default_step(spec: ModelSpec, mu0=None) -> float:
    """1e-3 · min(1, 1/maxrate)"""
    q_rate = float(np.abs(np.diag(spec.mutation.entries)).max(initial=0.0))
    sample = as_weights(mu0) if mu0 is not None else np.full(spec.size, 1.0 / spec.size)
    v = np.array(spec.kernel.matrix(sample))
    np.fill_diagonal(v, 0.0)
    max_rate = max(q_rate, float(np.abs(v).max(initial=0.0)), spec.kernel.observed_sup)
    return 1e-3 * min(1.0, 1.0 / max_rate) if max_rate > 0 else 1e-3


def _rk4(f: Callable[[np.ndarray], np.ndarray], y: np.ndarray, h: float) -> np.ndarray:
    k1 = f(y)
    k2 = f(y + 0.5 * h * k1)
    k3 = f(y + 0.5 * h * k2)
    k4 = f(y + h * k3)
    return y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


class _Normaliser:
    """每步重新归一化，累计漂移与负值截断"""

    def __init__(self):
        tol = get_tolerances()
        self.drift_tol = tol.mass_drift
        self.negativity_tol = tol.negativity
        self.cumulative_drift = 0.0
        self.max_step_drift = 0.0
        self.drift_exceedances = 0
        self.clips = 0
        self.most_negative = 0.0

    def __call__(self, y: np.ndarray) -> np.ndarray:
        low = float(y.min())
        if low < -self.negativity_tol:
            self.clips += 1
            self.most_negative = min(self.most_negative, low)
        y = np.clip(y, 0.0, None)
        mass = float(y.sum())
        drift = abs(mass - 1.0)
        self.cumulative_drift += drift
        self.max_step_drift = max(self.max_step_drift, drift)
        if drift > self.drift_tol:
            self.drift_exceedances += 1
        return y / mass

    def report(self) -> Dict[str, float]:
        return {
            "cumulative_mass_drift": self.cumulative_drift,
            "max_step_mass_drift": self.max_step_drift,
            "mass_drift_exceedances": float(self.drift_exceedances),
            "negativity_clips": float(self.clips),
            "most_negative": self.most_negative,
        }


def _integrate(spec: ModelSpec, mu0: np.ndarray, grid: np.ndarray, h: float, normalise: _Normaliser) -> np.ndarray:
    f = lambda y: mean_field_drift(spec, y)
    out = np.empty((grid.size, spec.size))
    y = mu0.astype(float)
    t = 0.0
    for i, target in enumerate(grid):
        span = target - t
        if span > 0:
            n = int(np.ceil(span / h - 1e-9))
            dt = span / n
            for _ in range(n):
                y = normalise(_rk4(f, y, dt))
            t = target
        out[i] = y
    return out


def mean_field_ode(
    spec: ModelSpec,
    mu0,
    times: Sequence[float],
    step: Optional[float] = None,
    richardson: bool = True,
) -> FlowTrajectory:
    """经典 RK4 积分平均场方程

    Args:
        spec: 一般或加性模型
        mu0: 初始概率测度
        times: 排序后的非负输出时刻
        step: 步长，默认 1e-3·min(1, 1/maxrate)
        richardson: 是否用半步长再积一次估计误差

    Returns:
        method='ode' 的 FlowTrajectory，diagnostics 中有质量漂移、负值截断和误差估计
    """
    grid = np.asarray(times, dtype=float)
    if grid.size == 0 or np.any(grid < 0) or np.any(np.diff(grid) < 0):
        raise ValueError("times must be a nonempty sorted list of nonnegative reals")
    start = as_weights(mu0).astype(float)
    h = default_step(spec, start) if step is None else float(step)
    if not h > 1e-14 * max(1.0, float(grid[-1])):
        raise NumericalError(f"ODE step size underflow (h={h:.3e})")
    normalise = _Normaliser()
    weights = _integrate(spec, start, grid, h, normalise)
    diagnostics = normalise.report()
    diagnostics["step"] = h
    if richardson:
        fine = _integrate(spec, start, grid, h / 2.0, _Normaliser())
        # RK4 的半步误差比为 1/16
        diagnostics["richardson_error"] = float(0.5 * np.abs(weights - fine).sum(axis=1).max() * 16.0 / 15.0)
    if normalise.clips:
        logger.warning(
            f"mean_field_ode: {normalise.clips} steps clipped negativity down to {normalise.most_negative:.3e} ({spec.name})"
        )
    logger.debug(f"DEBUG - mean_field_ode: {spec.name} h={h:.3e} drift={normalise.cumulative_drift:.3e}")
    return FlowTrajectory(times=grid, weights=weights, method="ode", diagnostics=diagnostics)


def ode_measure_at(spec: ModelSpec, flow: FlowTrajectory, t: float, step: Optional[float] = None) -> Measure:
    """ODE 流在任意覆盖时刻的测度"""
    if not flow.covers(t, t):
        raise FlowRangeError(f"time {t} outside flow range [{flow.times[0]}, {flow.times[-1]}]")
    exact = flow.index_of(t)
    if exact is not None:
        return flow.measure(exact)
    k = max(int(np.searchsorted(flow.times, t, side="right") - 1), 0)
    h = default_step(spec, flow.weights[k]) if step is None else step
    weights = _integrate(spec, flow.weights[k], np.array([t - flow.times[k]]), h, _Normaliser())
    return Measure(weights[-1])


def inhomogeneous_propagator(spec: ModelSpec, s: float, t: float, flow: FlowTrajectory, step: Optional[float] = None) -> np.ndarray:
    """P(s,t)，由 Q̃_{μ_r}（Ṽ = V − Vs）驱动的前向 Kolmogorov 方程

    (μ, P) 联合用 RK4 积分，μ 从流在 s 处的值出发。
    """
    if s > t:
        raise ValueError(f"need s <= t, got s={s}, t={t}")
    if not flow.covers(s, t):
        raise FlowRangeError(f"flow covers [{flow.times[0]}, {flow.times[-1]}], requested [{s}, {t}]")
    size = spec.size
    if t == s:
        return np.eye(size)
    mu = ode_measure_at(spec, flow, s, step).weights
    h = default_step(spec, mu) if step is None else float(step)
    n = int(np.ceil((t - s) / h - 1e-9))
    dt = (t - s) / n

    def f(state: np.ndarray) -> np.ndarray:
        m = state[:size]
        p = state[size:].reshape(size, size)
        g = generator_at(spec, np.clip(m, 0.0, None), reduced=True).entries
        return np.concatenate([m @ g, (p @ g).ravel()])

    state = np.concatenate([mu, np.eye(size).ravel()])
    for _ in range(n):
        state = _rk4(f, state, dt)
        m = np.clip(state[:size], 0.0, None)
        state[:size] = m / m.sum()
    return state[size:].reshape(size, size)


def flows_agree(first: FlowTrajectory, second: FlowTrajectory) -> Tuple[bool, float]:
    gap = first.sup_tv(second)
    return gap <= get_tolerances().flow, gap
