"""矩阵指数：scipy 的 Padé 缩放平方法为主，特征分解为备用"""
import logging

import numpy as np
import scipy.linalg

from core.errors import NumericalError

logger = logging.getLogger(__name__)


def expm_eig(A: np.ndarray, t: float = 1.0) -> np.ndarray:
    """V diag(e^{tw}) V⁻¹，仅对可对角化矩阵可靠"""
    w, V = scipy.linalg.eig(np.asarray(A, dtype=float))
    result = V @ np.diag(np.exp(t * w)) @ scipy.linalg.inv(V)
    return np.real(result)


def expm(A: np.ndarray, t: float = 1.0) -> np.ndarray:
    """e^{tA}；Padé 结果非有限时退回特征分解"""
    matrix = t * np.asarray(A, dtype=float)
    try:
        result = scipy.linalg.expm(matrix)
    except (ValueError, np.linalg.LinAlgError) as exc:
        logger.warning(f"Pade expm failed ({exc}); falling back to eigendecomposition")
        result = None
    if result is None or not np.all(np.isfinite(result)):
        result = expm_eig(A, t)
    if not np.all(np.isfinite(result)):
        raise NumericalError(f"matrix exponential has non-finite entries (t={t:g}); shift the potential", t=t)
    return result


def expm_crosscheck(A: np.ndarray, t: float = 1.0) -> float:
    """两种算法的相对差异 ‖Padé − eig‖ / max(1, ‖Padé‖)"""
    pade = scipy.linalg.expm(t * np.asarray(A, dtype=float))
    eig = expm_eig(A, t)
    return float(np.abs(pade - eig).max() / max(1.0, np.abs(pade).max()))
