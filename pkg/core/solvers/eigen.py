"""Q+Λ 的主特征三元组 (μ∞, h, λ) 与 Doob h-变换"""
import logging
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np
import scipy.linalg

from config.settings import get_tolerances
from core.errors import NumericalError, SpectralGapError
from core.model.spec import ModelSpec
from core.model.types import Measure, RateMatrix, TestFunction
from core.solvers.expm import expm
from core.solvers.feynman_kac import fk_generator

logger = logging.getLogger(__name__)

_POWER_MAX_ITER = 200


@dataclass(frozen=True)
class EigenTriplet:
    mu_inf: Measure
    h: TestFunction
    lam: float
    second: float
    residual_left: float
    residual_right: float
    diagnostics: Dict[str, float] = field(default_factory=dict)

    @property
    def gap(self) -> float:
        """谱隙 λ − Re λ₂"""
        return self.lam - self.second

    def to_dict(self) -> dict:
        return {
            "lambda": self.lam,
            "second_eigenvalue": self.second,
            "spectral_gap": self.gap,
            "mu_inf": self.mu_inf.weights.tolist(),
            "h": self.h.values.tolist(),
            "residual_left_l1": self.residual_left,
            "residual_right_sup": self.residual_right,
            **self.diagnostics,
        }


def _perron_vector(vector: np.ndarray, what: str) -> np.ndarray:
    """固定符号为非负；混合符号超出容差说明不可约性被破坏"""
    v = np.real(vector)
    if v.sum() < 0:
        v = -v
    scale = float(np.abs(v).max())
    if v.min() < -1e-10 * scale:
        raise NumericalError(
            f"{what} eigenvector has mixed signs (min {v.min() / scale:.3e}); reducible chain or truncation artefact"
        )
    return np.clip(v, 0.0, None)


def triplet_residuals(A: np.ndarray, mu: np.ndarray, h: np.ndarray, lam: float):
    """‖μ(Q+Λ) − λμ‖₁ 与 ‖(Q+Λ)h − λh‖∞"""
    return float(np.abs(mu @ A - lam * mu).sum()), float(np.abs(A @ h - lam * h).max())


def eigen_triplet(spec: ModelSpec, power_check: bool = True) -> EigenTriplet:
    """稠密特征分解求主特征值，并用 e^{τ(A−λ)} 幂迭代交叉检验 μ∞"""
    tol = get_tolerances()
    A = fk_generator(spec)
    size = spec.size
    eigenvalues, left, right = scipy.linalg.eig(A, left=True, right=True)
    order = np.argsort(-eigenvalues.real)
    lead = order[0]
    lam = float(eigenvalues[lead].real)
    scale = max(1.0, abs(lam))
    if abs(eigenvalues[lead].imag) > tol.eigen * scale:
        raise SpectralGapError(f"dominant eigenvalue is not real ({eigenvalues[lead]})")
    second = float(eigenvalues[order[1]].real) if size > 1 else -np.inf
    gap = lam - second
    if size > 1 and gap <= tol.eigen * scale:
        raise SpectralGapError(f"dominant eigenvalue is not simple (gap estimate {gap:.3e})", gap=gap)

    mu = _perron_vector(left[:, lead], "left")
    mu = mu / mu.sum()
    h = _perron_vector(right[:, lead], "right")
    h = h / float(mu @ h)
    if np.any(h <= 0):
        raise NumericalError("right eigenvector is not strictly positive on the truncation")

    residual_left, residual_right = triplet_residuals(A, mu, h, lam)
    diagnostics: Dict[str, float] = {}
    if power_check and size > 1:
        diagnostics["power_iteration_tv"] = _power_crosscheck(A, lam, gap, mu)
        if diagnostics["power_iteration_tv"] > tol.flow:
            logger.warning(f"eigen_triplet: power iteration disagrees by {diagnostics['power_iteration_tv']:.3e} ({spec.name})")
    logger.debug(f"DEBUG - eigen_triplet: {spec.name} λ={lam:.12g} gap={gap:.6g}")
    return EigenTriplet(
        mu_inf=Measure(mu),
        h=TestFunction(h),
        lam=lam,
        second=second,
        residual_left=residual_left,
        residual_right=residual_right,
        diagnostics=diagnostics,
    )


def _power_crosscheck(A: np.ndarray, lam: float, gap: float, mu: np.ndarray) -> float:
    tau = min(10.0, 5.0 / gap) if np.isfinite(gap) and gap > 0 else 10.0
    step_matrix = expm(A - lam * np.eye(A.shape[0]), tau)
    nu = np.full(A.shape[0], 1.0 / A.shape[0])
    for _ in range(_POWER_MAX_ITER):
        nxt = nu @ step_matrix
        nxt = nxt / nxt.sum()
        if 0.5 * np.abs(nxt - nu).sum() < 1e-15:
            nu = nxt
            break
        nu = nxt
    return float(0.5 * np.abs(nu - mu).sum())


def doob_transform(spec: ModelSpec, triplet: EigenTriplet) -> RateMatrix:
    """Q^h φ = (1/h)(Q + Λ − λ)(hφ)"""
    h = triplet.h.values
    if np.any(h <= 0):
        raise NumericalError("Doob transform needs a strictly positive h")
    A = fk_generator(spec) - triplet.lam * np.eye(spec.size)
    return RateMatrix((A * h[None, :]) / h[:, None])


def stationary_distribution(generator) -> Measure:
    """解 πQ = 0, Σπ = 1"""
    Q = np.asarray(generator, dtype=float)
    size = Q.shape[0]
    system = np.vstack([Q.T, np.ones(size)])
    rhs = np.zeros(size + 1)
    rhs[-1] = 1.0
    pi, *_ = np.linalg.lstsq(system, rhs, rcond=None)
    return Measure.normalised(pi)
