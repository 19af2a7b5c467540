"""遍历性判据的数值检查

这些检查返回报告而不抛出领域结论；级数判据只能给出启发式结论，"inconclusive" 是正常输出。
"""
import logging
import math
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel

from core.errors import ModelValidationError, NumericalError
from core.model.distances import tv_distance
from core.model.spec import ModelSpec, lambda_of
from core.solvers.eigen import eigen_triplet
from core.zoo.builders import BDParams
from core.zoo.registry import TRUNCATED, rebuild

logger = logging.getLogger(__name__)

# 比值检验与 Raabe 检验的阈值
_RATIO_CONVERGING = 0.95
_RATIO_DIVERGING = 1.05
_RAABE_CONVERGING = 1.2
_RAABE_DIVERGING = 0.8
_GROWTH_TOL = 1e-3
_TRUNCATION_TV = 1e-6


class SeriesVerdict(str, Enum):
    CONVERGING = "converging"
    DIVERGING = "diverging"
    INCONCLUSIVE = "inconclusive"


class SeriesReport(BaseModel):
    K_terms: int
    terms: List[float]
    partial_sums: List[float]
    log_partial_sums: List[float]
    verdict: SeriesVerdict
    ratio_mean: Optional[float] = None
    raabe_min: Optional[float] = None
    raabe_max: Optional[float] = None
    note: str = ""


def _log_alpha(births: np.ndarray, deaths: np.ndarray) -> np.ndarray:
    """log α_r, r = 1..R：Σ_{i<r} log b_i − Σ_{2≤i≤r} log d_i"""
    lb, ld = np.log(births), np.log(deaths)
    up = np.concatenate([[0.0], np.cumsum(lb[:-1])])
    down = np.cumsum(ld) - ld[0]
    return up - down


def bd_qsd_uniqueness_check(params: Union[BDParams, Dict[str, Any]], K_terms: int = 200) -> SeriesReport:
    """Σ_{k≥2} (1/(d_k α_k)) Σ_{r≥k} α_r 的部分和与收敛性判断

    内层后缀和算到 R = 2·K_terms + 50 项，再按末端比值 q = α_R/α_{R−1} 补几何尾项；全部在对数空间计算。
    判断只看最后一个数量级 k ∈ [K_terms/10, K_terms)：平均比值 < 0.95 或 Raabe 统计量全部 > 1.2 判为收敛，
    Raabe 全部 < 0.8 或平均比值 > 1.05 判为发散，其余为 inconclusive。
    """
    if K_terms < 10:
        raise ValueError(f"K_terms must be >= 10, got {K_terms}")
    params = params if isinstance(params, BDParams) else BDParams(**params)
    R = 2 * K_terms + 50
    births, deaths = params.birth_rates(R), params.death_rates(R)
    log_alpha = _log_alpha(births, deaths)
    suffix = np.logaddexp.accumulate(log_alpha[::-1])[::-1]
    note = ""
    q = math.exp(log_alpha[-1] - log_alpha[-2])
    if q < 1.0:
        suffix = np.logaddexp(suffix, log_alpha[-1] + math.log(q / (1.0 - q)))
    else:
        note = f"alpha_r does not decay at r={R} (ratio {q:.4g}); inner sums diverge"

    ks = np.arange(2, K_terms + 1)
    log_terms = -np.log(deaths[ks - 1]) - log_alpha[ks - 1] + suffix[ks - 1]
    log_partial = np.logaddexp.accumulate(log_terms)

    window = np.arange(max(2, math.ceil(K_terms / 10)), K_terms)
    steps = log_terms[window - 1] - log_terms[window - 2]
    ratio_mean = float(np.exp(steps).mean())
    raabe = window * (np.exp(-steps) - 1.0)

    if note:
        verdict = SeriesVerdict.DIVERGING
    elif ratio_mean < _RATIO_CONVERGING or np.all(raabe > _RAABE_CONVERGING):
        verdict = SeriesVerdict.CONVERGING
    elif np.all(raabe < _RAABE_DIVERGING) or ratio_mean > _RATIO_DIVERGING:
        verdict = SeriesVerdict.DIVERGING
    else:
        verdict = SeriesVerdict.INCONCLUSIVE
    logger.debug(f"DEBUG - bd_qsd_uniqueness_check: K_terms={K_terms} verdict={verdict.value} ratio={ratio_mean:.6g}")
    return SeriesReport(
        K_terms=K_terms,
        terms=np.exp(log_terms).tolist(),
        partial_sums=np.exp(log_partial).tolist(),
        log_partial_sums=log_partial.tolist(),
        verdict=verdict,
        ratio_mean=ratio_mean,
        raabe_min=float(raabe.min()),
        raabe_max=float(raabe.max()),
        note=note,
    )


class RateCriterionReport(BaseModel):
    subset: List[int]
    lhs: float
    rhs: float
    holds: bool


def rate_criterion_check(spec: ModelSpec, subset: Sequence[int]) -> RateCriterionReport:
    """inf_{y∉K} (Λ(y) + Σ_{x∈K} Q(y,x)) > sup Λ，K 用 0 起始下标"""
    members = sorted({int(x) for x in subset})
    if not members:
        raise ModelValidationError("rate criterion needs a nonempty subset K")
    if members[0] < 0 or members[-1] >= spec.size:
        raise ModelValidationError(f"subset {members} is outside the state space of size {spec.size}")
    outside = np.setdiff1d(np.arange(spec.size), members)
    if outside.size == 0:
        raise ModelValidationError("subset K covers the whole truncation; the criterion is vacuous")
    lam = lambda_of(spec).values
    inflow = spec.mutation.entries[np.ix_(outside, members)].sum(axis=1)
    lhs = float((lam[outside] + inflow).min())
    rhs = float(lam.max())
    return RateCriterionReport(subset=members, lhs=lhs, rhs=rhs, holds=lhs > rhs)


class SpectralCriterionReport(BaseModel):
    epsilon: float
    lam: float
    K_eps: List[int]
    h_inv_norm: float
    source: str
    doubling: Optional[Dict[str, Any]] = None
    holds: bool


def _spectral_elements(spec: ModelSpec):
    analytic = spec.provenance.get("analytic")
    if analytic is not None:
        return float(analytic["lambda"]), np.asarray(analytic["h"], dtype=float), "analytic"
    triplet = eigen_triplet(spec)
    return triplet.lam, triplet.h.values, "eigen"


def _spectral_summary(spec: ModelSpec, epsilon: float):
    lam, h, source = _spectral_elements(spec)
    potential = lambda_of(spec).values
    K_eps = [int(x) for x in np.nonzero(potential >= lam - epsilon)[0]]
    h_inv_norm = float(np.max(1.0 / h)) if np.all(h > 0) else math.inf
    return lam, K_eps, h_inv_norm, source


def spectral_criterion_check(spec: ModelSpec, epsilon: float = 0.1) -> SpectralCriterionReport:
    """K_ε = {Λ ≥ λ − ε} 有限且 ‖1/h‖ < ∞

    有限状态空间上总成立；截断模型用 K → 2K 的重建判断 K_ε 与 ‖1/h‖ 是否随截断增长。
    """
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    try:
        lam, K_eps, h_inv_norm, source = _spectral_summary(spec, epsilon)
    except NumericalError as exc:
        raise NumericalError(f"spectral criterion: eigen-triplet unavailable for '{spec.name}': {exc.message}") from exc

    doubling = None
    holds = math.isfinite(h_inv_norm)
    if spec.space.is_truncated and spec.provenance.get("builder") in TRUNCATED:
        wider = rebuild(spec, 2 * spec.size)
        _, wide_K_eps, wide_h_inv, _ = _spectral_summary(wider, epsilon)
        growth = (wide_h_inv - h_inv_norm) / h_inv_norm if math.isfinite(wide_h_inv) else math.inf
        K_eps_grows = len(wide_K_eps) > len(K_eps)
        h_grows = growth > _GROWTH_TOL
        doubling = {
            "K": spec.size,
            "K_doubled": wider.size,
            "K_eps_size": len(K_eps),
            "K_eps_size_doubled": len(wide_K_eps),
            "h_inv_norm_doubled": wide_h_inv,
            "h_inv_growth": growth,
            "K_eps_grows": K_eps_grows,
            "h_inv_grows": h_grows,
        }
        holds = holds and not K_eps_grows and not h_grows
    return SpectralCriterionReport(
        epsilon=epsilon,
        lam=lam,
        K_eps=K_eps,
        h_inv_norm=h_inv_norm,
        source=source,
        doubling=doubling,
        holds=holds,
    )


class TruncationReport(BaseModel):
    K: int
    K_doubled: int
    tv: float
    holds: bool


def truncation_stability(spec: ModelSpec, factor: int = 2) -> TruncationReport:
    """K 与 factor·K 截断下 μ∞ 的 TV 距离（较小截断补零）"""
    wider = rebuild(spec, factor * spec.size)
    narrow = eigen_triplet(spec).mu_inf.weights
    wide = eigen_triplet(wider).mu_inf.weights
    padded = np.zeros(wide.size)
    padded[: narrow.size] = narrow
    tv = tv_distance(padded, wide)
    return TruncationReport(K=spec.size, K_doubled=wider.size, tv=tv, holds=tv < _TRUNCATION_TV)
