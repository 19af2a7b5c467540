"""中心极限定理的方差泛函

σ²_T(φ) = Var_{μ_T}(φ) + ∫₀^T S_{μ_s}(W_{s,T}φ̄_T) ds + 2∫₀^T μ_s(W_{s,T}(φ̄_T)² (Vb_{μ_s} + μ_s(Vd_{μ_s}))) ds

σ²_∞ 同形，把 W_{s,T} 换成 e^{−λs}P_s^Λ、μ_s 换成 μ∞。积分都用复合 Simpson，节点数倍增直到相对变化
小于 quadrature_rel。
"""
import logging
from typing import Callable, Dict, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field, model_validator
from scipy.integrate import quad, simpson
from scipy.linalg import eig, solve

from config.settings import get_tolerances
from core.errors import InvariantBreachError, ModelValidationError, QuadratureError
from core.model.spec import ModelSpec, lambda_of, require_additive, sigma_reduce
from core.model.types import Measure, as_values, as_weights, check_same_size
from core.solvers.eigen import EigenTriplet, eigen_triplet
from core.solvers.ergodicity import fit_exponential_rate
from core.solvers.expm import expm
from core.solvers.feynman_kac import fk_generator, normalized_flow
from core.solvers.mean_field import flows_agree, mean_field_ode

logger = logging.getLogger(__name__)

_FIRST_NODES = 16
_MAX_NODES = 2 ** 16
_MAX_HORIZON_DOUBLINGS = 24
_SUM_TOL = 1e-10


def carre_du_champ(L, phi) -> np.ndarray:
    """Γ_L(φ) = L(φ²) − 2φ Lφ"""
    matrix = np.asarray(L, dtype=float)
    values = as_values(phi)
    check_same_size(matrix, values)
    return matrix @ (values * values) - 2.0 * values * (matrix @ values)


def carre_du_champ_jump(L, phi) -> np.ndarray:
    """Σ_y L(x,y)(φ(y) − φ(x))²，对角项不贡献"""
    matrix = np.array(L, dtype=float)
    values = as_values(phi)
    check_same_size(matrix, values)
    np.fill_diagonal(matrix, 0.0)
    jumps = values[None, :] - values[:, None]
    return (matrix * jumps * jumps).sum(axis=1)


def _symmetric_term(vs: np.ndarray, mu: np.ndarray, values: np.ndarray) -> float:
    if not np.any(vs):
        return 0.0
    diff = values[:, None] - values[None, :]
    return float((diff * diff * vs * np.outer(mu, mu)).sum())


def s_mu(spec: ModelSpec, mu, phi) -> float:
    """S_μ(φ) = Σ_{x,y} (φ(x) − φ(y))² Vs_μ(x,y) μ(x) μ(y)"""
    weights = as_weights(mu)
    values = as_values(phi)
    check_same_size(weights, values)
    return _symmetric_term(spec.kernel.symmetric_matrix(weights), weights, values)


def _selection_term(spec: ModelSpec, mu: np.ndarray, values: np.ndarray) -> float:
    """2 μ(φ² (Vb_μ + μ(Vd_μ)))"""
    kernel = spec.kernel
    weight = kernel.birth_rates(mu) + float(mu @ kernel.death_rates(mu))
    return 2.0 * float(mu @ (values * values * weight))


class VarianceReport(BaseModel):
    model: str
    horizon: Optional[float] = None
    var_term: float = Field(ge=0.0)
    symmetric_integral: float = Field(ge=0.0)
    selection_integral: float = Field(ge=0.0)
    sigma2: float = Field(ge=0.0)
    quadrature_error_estimate: float = 0.0
    nodes: int = 0
    diagnostics: Dict[str, float] = Field(default_factory=dict)

    @model_validator(mode="after")
    def check_sum(self):
        total = self.var_term + self.symmetric_integral + self.selection_integral
        if abs(self.sigma2 - total) > _SUM_TOL * max(1.0, abs(total)):
            raise ValueError(f"sigma2 {self.sigma2} differs from the sum of its components {total}")
        return self

    @classmethod
    def assemble(cls, model: str, var_term: float, symmetric: float, selection: float, **kwargs) -> "VarianceReport":
        return cls(
            model=model,
            var_term=var_term,
            symmetric_integral=symmetric,
            selection_integral=selection,
            sigma2=var_term + symmetric + selection,
            **kwargs,
        )

    @property
    def decomposition(self) -> Dict[str, float]:
        return {
            "var_term": self.var_term,
            "symmetric_integral": self.symmetric_integral,
            "selection_integral": self.selection_integral,
        }

    def to_dict(self) -> dict:
        flat = self.model_dump(exclude={"diagnostics"})
        flat.update(self.diagnostics)
        return flat


def clip_negative_components(components, label: str) -> Tuple[np.ndarray, Dict[str, float]]:
    """求积分量必须非负：−negativity·scale 以内的负值截为 0 并记录，超出则报错"""
    values = np.asarray(components, dtype=float)
    scale = max(1.0, float(np.abs(values).sum()))
    floor = -get_tolerances().negativity * scale
    low = float(values.min(initial=0.0))
    if low < floor:
        raise InvariantBreachError(
            f"{label}: quadrature component {low:.3e} is below the negativity floor {floor:.3e}",
            components=values,
        )
    clipped = values < 0.0
    return np.where(clipped, 0.0, values), {"negativity_clips": float(clipped.sum()), "most_negative": min(low, 0.0)}


def _refine(evaluate: Callable[[int], Tuple[np.ndarray, dict]], label: str):
    """Simpson 节点数从 16 开始倍增，直到两分量之和的相对变化 < quadrature_rel

    Returns:
        (分量, 附加信息, 节点数, 误差估计)
    """
    rel = get_tolerances().quadrature_rel
    n = _FIRST_NODES
    previous, _ = evaluate(n)
    while True:
        n *= 2
        if n > _MAX_NODES:
            raise QuadratureError(f"{label}: quadrature did not converge with {_MAX_NODES} intervals", nodes=_MAX_NODES)
        current, extra = evaluate(n)
        change = abs(float(current.sum() - previous.sum()))
        if change <= rel * abs(float(current.sum())):
            # Simpson 误差 O(h⁴)，Richardson 给出 /15
            return current, extra, n, change / 15.0
        previous = current


def sigma2_T(spec: ModelSpec, mu0, T: float, phi) -> VarianceReport:
    """有限时刻的渐近方差 σ²_T(φ)，初值 μ0"""
    kernel = require_additive(spec)
    if T < 0:
        raise ValueError(f"T must be nonnegative, got {T}")
    values = as_values(phi)
    check_same_size(values, as_weights(mu0))
    if T == 0:
        start = Measure(as_weights(mu0))
        return VarianceReport.assemble(spec.name, start.variance(values), 0.0, 0.0, horizon=0.0)

    generator = fk_generator(spec, shift=float(lambda_of(spec).values.max()))
    symmetric_zero = not kernel.symmetric.mu_dependent and not np.any(kernel.symmetric_matrix(None))

    def evaluate(n: int):
        grid = np.linspace(0.0, T, n + 1)
        flow = normalized_flow(spec, mu0, grid)
        mu_T = flow.weights[-1]
        centred = values - float(mu_T @ values)
        step_matrix = expm(generator, T / n)
        u, w = centred.copy(), np.ones(spec.size)
        sym = np.zeros(n + 1)
        sel = np.zeros(n + 1)
        for j in range(n, -1, -1):
            if j < n:
                u = step_matrix @ u
                w = step_matrix @ w
                scale = float(np.abs(w).max())
                u, w = u / scale, w / scale
            mu_j = flow.weights[j]
            W = u / float(mu_j @ w)
            if not symmetric_zero:
                sym[j] = _symmetric_term(kernel.symmetric_matrix(mu_j), mu_j, W)
            sel[j] = _selection_term(spec, mu_j, W)
        components = np.array([simpson(sym, x=grid), simpson(sel, x=grid)])
        return components, {"var_term": Measure(mu_T).variance(values)}

    components, extra, n, error = _refine(evaluate, f"sigma2_T({spec.name}, T={T})")
    components, clips = clip_negative_components(components, f"sigma2_T({spec.name}, T={T})")
    logger.debug(f"DEBUG - sigma2_T: {spec.name} T={T} nodes={n} components={components}")
    return VarianceReport.assemble(
        spec.name,
        extra["var_term"],
        float(components[0]),
        float(components[1]),
        horizon=float(T),
        quadrature_error_estimate=error,
        nodes=n,
        diagnostics=clips,
    )


def _tilted_path(B: np.ndarray, start: np.ndarray, triplet: EigenTriplet, horizon: float, n: int) -> np.ndarray:
    """g_s = e^{sB} φ̄ 在 [0, horizon] 的 n+1 个等距节点上，逐步去掉 h 方向的数值残余"""
    step_matrix = expm(B, horizon / n)
    mu = triplet.mu_inf.weights
    h = triplet.h.values
    path = np.empty((n + 1, start.size))
    g = start.copy()
    for j in range(n + 1):
        if j:
            g = step_matrix @ g
            g = g - h * float(mu @ g)
        path[j] = g
    return path


def sigma2_inf(spec: ModelSpec, phi, triplet: Optional[EigenTriplet] = None) -> VarianceReport:
    """平稳渐近方差 σ²_∞(φ)

    积分上限 H 从 max(1, 4/gap) 开始倍增，直到被积函数 < integrand_cutoff·累计值，
    且末尾十分之一节点上的指数拟合确认衰减；尾部界为 f(H)/rate。
    """
    require_additive(spec)
    tol = get_tolerances()
    triplet = triplet or eigen_triplet(spec)
    values = as_values(phi)
    check_same_size(values, triplet.mu_inf.weights)
    mu = triplet.mu_inf.weights
    centred = values - float(mu @ values)
    var_term = triplet.mu_inf.variance(values)
    vs = spec.kernel.symmetric_matrix(mu)
    selection_weight = spec.kernel.birth_rates(mu) + float(mu @ spec.kernel.death_rates(mu))
    B = fk_generator(spec, shift=triplet.lam)
    gap = triplet.gap if np.isfinite(triplet.gap) and triplet.gap > 0 else 1.0

    def integrands(path: np.ndarray) -> np.ndarray:
        sym = np.array([_symmetric_term(vs, mu, g) for g in path]) if np.any(vs) else np.zeros(len(path))
        sel = 2.0 * (path * path * selection_weight[None, :]) @ mu
        return np.vstack([sym, sel])

    horizon = max(1.0, 4.0 / gap)
    for _ in range(_MAX_HORIZON_DOUBLINGS):

        def evaluate(n: int, horizon=horizon):
            grid = np.linspace(0.0, horizon, n + 1)
            f = integrands(_tilted_path(B, centred, triplet, horizon, n))
            return simpson(f, x=grid, axis=1), {"grid": grid, "f": f.sum(axis=0)}

        components, extra, n, error = _refine(evaluate, f"sigma2_inf({spec.name}, H={horizon:.4g})")
        components, clips = clip_negative_components(components, f"sigma2_inf({spec.name}, H={horizon:.4g})")
        total = float(components.sum())
        f = extra["f"]
        if total == 0.0 and not np.any(f):
            return VarianceReport.assemble(spec.name, var_term, 0.0, 0.0, nodes=n, diagnostics={"horizon": horizon, **clips})
        tail_start = int(0.9 * n)
        rate, _ = fit_exponential_rate(extra["grid"][tail_start:], f[tail_start:], floor=1e-300)
        if f[-1] < tol.integrand_cutoff * total and rate is not None and rate > 0:
            tail_bound = float(f[-1] / rate)
            logger.debug(f"DEBUG - sigma2_inf: {spec.name} H={horizon:.4g} rate={rate:.6g} 2gap={2 * gap:.6g}")
            return VarianceReport.assemble(
                spec.name,
                var_term,
                float(components[0]),
                float(components[1]),
                quadrature_error_estimate=error + tail_bound,
                nodes=n,
                diagnostics={
                    "horizon": horizon,
                    "fitted_rate": rate,
                    "twice_spectral_gap": 2.0 * gap,
                    "tail_bound": tail_bound,
                    **clips,
                },
            )
        horizon *= 2.0
    raise QuadratureError(
        f"sigma2_inf({spec.name}): integrand does not decay; exponential ergodicity fails on this truncation",
        horizon=horizon,
    )


def sigma2_inf_fleming_viot(spec: ModelSpec, phi, triplet: Optional[EigenTriplet] = None) -> float:
    """Fleming–Viot 情形 (Vb ≡ 0, Vs ≡ 0) 的闭式：Var_{μ∞}(φ) − 2λ ∫₀^∞ Var_{μ∞}(e^{−λs}P_s^Λ φ̄) ds

    g_s 由 Q+Λ−λ 的特征分解给出，半无穷积分交给 scipy.integrate.quad。
    """
    kernel = require_additive(spec)
    triplet = triplet or eigen_triplet(spec)
    mu = triplet.mu_inf.weights
    tol = get_tolerances().exact
    if np.abs(kernel.birth_rates(mu)).max() > tol or np.abs(kernel.symmetric_matrix(mu)).max() > tol:
        raise ModelValidationError(f"model '{spec.name}' is not a Fleming–Viot model (needs Vb ≡ 0 and Vs ≡ 0)")
    values = as_values(phi)
    centred = values - float(mu @ values)
    B = fk_generator(spec, shift=triplet.lam)
    w, V = eig(B)
    coefficients = solve(V, centred.astype(complex))
    # 主模态对应 h，φ̄ 在该方向上的分量为零
    coefficients[int(np.argmax(w.real))] = 0.0

    def variance_at(s: float) -> float:
        g = np.real(V @ (np.exp(w * s) * coefficients))
        mean = float(mu @ g)
        return float(mu @ (g * g)) - mean * mean

    integral, _ = quad(variance_at, 0.0, np.inf, epsabs=1e-13, epsrel=1e-11, limit=500)
    return triplet.mu_inf.variance(values) - 2.0 * triplet.lam * integral


class VarianceComparison(BaseModel):
    original: VarianceReport
    reduced: VarianceReport
    reduction: float = Field(ge=0.0)
    flow_gap: float


def variance_compare(spec: ModelSpec, phi, T: Optional[float] = None, mu0=None, gate_horizon: float = 5.0) -> VarianceComparison:
    """比较原模型与 Σ_μ 约化模型的渐近方差

    先核对两者的平均场流一致（约化不能改变极限），再断言 σ²(约化) ≤ σ²(原) + 1e-10。
    T 为 None 时比较 σ²_∞，否则比较以 mu0 为初值的 σ²_T。
    """
    require_additive(spec)
    reduced = sigma_reduce(spec)
    start = Measure.uniform(spec.size) if mu0 is None else Measure(as_weights(mu0))
    horizon = gate_horizon if T is None else max(float(T), 1e-12)
    grid = np.linspace(0.0, horizon, 11)
    agree, gap = flows_agree(
        mean_field_ode(spec, start, grid, richardson=False),
        mean_field_ode(reduced, start, grid, richardson=False),
    )
    if not agree:
        raise InvariantBreachError(
            f"reduced model '{reduced.name}' changes the mean-field flow (sup-TV {gap:.3e})", flow_gap=gap
        )
    if T is None:
        original_report, reduced_report = sigma2_inf(spec, phi), sigma2_inf(reduced, phi)
    else:
        original_report, reduced_report = sigma2_T(spec, start, T, phi), sigma2_T(reduced, start, T, phi)
    difference = original_report.sigma2 - reduced_report.sigma2
    if difference < -_SUM_TOL:
        raise InvariantBreachError(
            f"reduced variance {reduced_report.sigma2:.12g} exceeds original {original_report.sigma2:.12g}",
            difference=difference,
        )
    return VarianceComparison(
        original=original_report,
        reduced=reduced_report,
        reduction=max(difference, 0.0),
        flow_gap=gap,
    )
