import numpy as np

from core.model.types import as_weights, check_same_size


def tv_distance(mu1, mu2) -> float:
    """½ Σ|μ1(x) − μ2(x)|"""
    a, b = as_weights(mu1), as_weights(mu2)
    check_same_size(a, b)
    return 0.5 * float(np.abs(a - b).sum())


def weighted_distance(mu1, mu2) -> float:
    """Σ_k 2^{-k} |μ1(x_k) − μ2(x_k)|，按状态下标枚举，k 从 1 开始"""
    a, b = as_weights(mu1), as_weights(mu2)
    check_same_size(a, b)
    weights = 0.5 ** np.arange(1, a.size + 1)
    return float(weights @ np.abs(a - b))


def tv_rows(rows: np.ndarray, target) -> np.ndarray:
    """逐行 TV 距离，rows 形如 (..., K)"""
    target = as_weights(target)
    check_same_size(rows, target)
    return 0.5 * np.abs(np.asarray(rows) - target).sum(axis=-1)


def weighted_rows(rows: np.ndarray, target) -> np.ndarray:
    target = as_weights(target)
    check_same_size(rows, target)
    weights = 0.5 ** np.arange(1, target.size + 1)
    return np.abs(np.asarray(rows) - target) @ weights
