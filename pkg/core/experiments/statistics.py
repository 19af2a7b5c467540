"""蒙特卡洛估计量：L^p 误差、百分位 bootstrap 区间、对数回归、高斯 KS 距离"""
import logging
from typing import Callable, Dict, Optional, Tuple

import numpy as np
from scipy import stats

from core.engine.rng import run_id_of, stream

logger = logging.getLogger(__name__)


def lp_estimate(errors: np.ndarray, p: float) -> float:
    """E[|e|^p]^{1/p} 的经验矩估计"""
    values = np.abs(np.asarray(errors, dtype=float))
    return float(np.mean(values ** p) ** (1.0 / p))


def bootstrap_ci(
    samples: np.ndarray,
    statistic: Callable[[np.ndarray], float],
    resamples: int,
    confidence: float,
    rng: np.random.Generator,
) -> Tuple[float, float, float]:
    """百分位 bootstrap，按第一维（副本）重抽样

    Returns:
        (点估计, 下界, 上界)；区间总是包含点估计
    """
    data = np.asarray(samples)
    estimate = float(statistic(data))
    n = data.shape[0]
    boot = np.empty(resamples)
    for i in range(resamples):
        boot[i] = statistic(data[rng.integers(0, n, n)])
    alpha = 0.5 * (1.0 - confidence)
    lo, hi = np.quantile(boot, [alpha, 1.0 - alpha])
    return estimate, float(min(lo, estimate)), float(max(hi, estimate))


def paired_bootstrap_ci(
    first: np.ndarray,
    second: np.ndarray,
    statistic: Callable[[np.ndarray], float],
    resamples: int,
    confidence: float,
    rng: np.random.Generator,
) -> Dict[str, Tuple[float, float, float]]:
    """两组按副本配对的样本共用同一组重抽样下标"""
    a, b = np.asarray(first), np.asarray(second)
    n = a.shape[0]
    boot = np.empty((resamples, 3))
    for i in range(resamples):
        idx = rng.integers(0, n, n)
        sa, sb = statistic(a[idx]), statistic(b[idx])
        boot[i] = (sa, sb, sa - sb)
    alpha = 0.5 * (1.0 - confidence)
    point = (statistic(a), statistic(b), statistic(a) - statistic(b))
    out = {}
    for k, name in enumerate(("first", "second", "difference")):
        lo, hi = np.quantile(boot[:, k], [alpha, 1.0 - alpha])
        out[name] = (float(point[k]), float(min(lo, point[k])), float(max(hi, point[k])))
    return out


def loglog_fit(x, y) -> Optional[Dict[str, float]]:
    """log y = a + s log x 的最小二乘；y 有非正值或点数不足时返回 None"""
    xs = np.asarray(x, dtype=float)
    ys = np.asarray(y, dtype=float)
    if xs.size < 2 or np.any(ys <= 0) or not np.all(np.isfinite(ys)):
        return None
    fit = stats.linregress(np.log(xs), np.log(ys))
    stderr = float(fit.stderr) if xs.size > 2 else 0.0
    return {"slope": float(fit.slope), "stderr": stderr, "intercept": float(fit.intercept), "rvalue": float(fit.rvalue)}


def ks_gaussian(samples: np.ndarray, variance: float) -> Tuple[float, float]:
    """与 N(0, variance) 的 Kolmogorov–Smirnov 距离及 p 值"""
    result = stats.kstest(np.asarray(samples, dtype=float), "norm", args=(0.0, float(np.sqrt(variance))))
    return float(result.statistic), float(result.pvalue)


def shape_diagnostics(samples: np.ndarray) -> Dict[str, float]:
    values = np.asarray(samples, dtype=float)
    return {
        "skewness": float(stats.skew(values)),
        "excess_kurtosis": float(stats.kurtosis(values)),
    }


def bootstrap_coverage_selftest(
    trials: int = 200,
    size: int = 100,
    resamples: int = 400,
    confidence: float = 0.9,
    seed: int = 0,
) -> float:
    """合成高斯数据上均值 bootstrap 区间的覆盖率"""
    hits = 0
    for trial in range(trials):
        rng = stream(seed, run_id_of("bootstrap-selftest"), trial)
        data = rng.normal(0.0, 1.0, size)
        _, lo, hi = bootstrap_ci(data, np.mean, resamples, confidence, rng)
        hits += lo <= 0.0 <= hi
    coverage = hits / trials
    logger.debug(f"DEBUG - bootstrap_coverage_selftest: coverage={coverage:.3f} nominal={confidence}")
    return coverage
