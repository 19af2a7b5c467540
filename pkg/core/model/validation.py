"""模型可接受性检查"""
import logging
from typing import Dict, List, Optional

import numpy as np
from pydantic import BaseModel, Field

from config.settings import get_tolerances, settings
from core.errors import ModelValidationError, MuDependentLambdaError
from core.model.kernels import GeneralKernel
from core.model.spec import ModelSpec, lambda_of

logger = logging.getLogger(__name__)

NEGATIVE_OFF_DIAGONAL = "negative off-diagonal"
NONZERO_ROW_SUM = "nonzero row sum"
ASYMMETRIC_SYMMETRIC_PART = "asymmetric symmetric part"
LAMBDA_DEPENDS_ON_MU = "Λ depends on μ"
NEGATIVE_KERNEL = "negative kernel"
NON_FINITE_KERNEL = "non-finite kernel"
UNBOUNDED_COMPONENTS = "unbounded general components"
SIZE_MISMATCH = "size mismatch"

_NORM_SEED = 7


class Violation(BaseModel):
    code: str
    message: str


class ValidationReport(BaseModel):
    model: str
    variant: str
    admissible: bool
    violations: List[Violation] = Field(default_factory=list)
    warnings: List[str] = Field(default_factory=list)
    norm_V: float = 0.0
    norm_samples: int = 0
    visited_measures: int = 0
    mu_dependent: bool = False
    irreducible: bool = True
    bounds: Dict[str, float] = Field(default_factory=dict)

    @property
    def codes(self) -> List[str]:
        return [v.code for v in self.violations]

    def raise_if_invalid(self) -> None:
        if not self.admissible:
            raise ModelValidationError(
                f"model '{self.model}' is not admissible: " + "; ".join(v.message for v in self.violations),
                violations=self.codes,
            )


def _sample_measures(size: int, count: int) -> List[np.ndarray]:
    rng = np.random.default_rng(_NORM_SEED)
    samples = [np.full(size, 1.0 / size)]
    samples.extend(np.eye(size)[i] for i in range(min(size, count)))
    samples.extend(rng.dirichlet(np.ones(size)) for _ in range(count))
    return samples


def _negative_component(kernel, mu: np.ndarray, tol: float) -> Optional[str]:
    """Vd、Vb（一般核逐个 Vd_i、Vb_i）必须非负；和非负不代表分量非负"""
    if kernel.is_additive:
        parts = [("Vd", kernel.death_rates(mu)), ("Vb", kernel.birth_rates(mu))]
    elif isinstance(kernel, GeneralKernel):
        vd, vb = kernel.component_arrays()
        parts = [(f"Vd_{i}", row) for i, row in enumerate(vd)] + [(f"Vb_{i}", row) for i, row in enumerate(vb)]
    else:
        return None
    for name, values in parts:
        low = float(np.min(values, initial=0.0))
        if low < -tol:
            x = int(np.argmin(values))
            return f"{name}({x}) = {low:.3e} < 0"
    return None


def validate_model(spec: ModelSpec, norm_samples: Optional[int] = None) -> ValidationReport:
    """列出所有违反的不变量，或确认模型可接受

    ‖V‖ 只在采样测度和实际访问过的测度上认证，两者数量都写入报告。
    """
    tol = get_tolerances()
    count = settings.NORM_SAMPLES if norm_samples is None else norm_samples
    violations: List[Violation] = []
    warnings: List[str] = []
    size = spec.size
    kernel = spec.kernel

    if spec.mutation.size != size or kernel.size != size:
        violations.append(Violation(code=SIZE_MISMATCH, message=f"mutation {spec.mutation.size}, kernel {kernel.size}, space {size}"))
        return ValidationReport(model=spec.name, variant=kernel.variant, admissible=False, violations=violations)

    for i, j, value in spec.mutation.negative_entries():
        violations.append(Violation(code=NEGATIVE_OFF_DIAGONAL, message=f"Q[{i},{j}] = {value:g} < 0"))

    scale = max(1.0, float(np.abs(spec.mutation.entries).max(initial=0.0)))
    row_sums = spec.mutation.row_sums()
    for i in np.nonzero(np.abs(row_sums) > tol.exact * scale)[0]:
        violations.append(Violation(code=NONZERO_ROW_SUM, message=f"row {int(i)} of Q sums to {row_sums[i]:.3e}"))

    irreducible = spec.mutation.is_irreducible()
    if not irreducible:
        warnings.append("mutation generator is not irreducible on the retained states")

    norm = 0.0
    samples = _sample_measures(size, count)
    for mu in samples:
        v = kernel.matrix(mu)
        off = v.copy()
        np.fill_diagonal(off, 0.0)
        if not np.all(np.isfinite(off)):
            violations.append(Violation(code=NON_FINITE_KERNEL, message="V_μ has non-finite entries"))
            break
        if off.min(initial=0.0) < -tol.exact:
            violations.append(Violation(code=NEGATIVE_KERNEL, message=f"V_μ has entry {off.min():.3e} < 0"))
            break
        negative = _negative_component(kernel, mu, tol.exact)
        if negative:
            violations.append(Violation(code=NEGATIVE_KERNEL, message=negative))
            break
        sym = kernel.symmetric_matrix(mu)
        if not np.array_equal(sym, sym.T):
            violations.append(Violation(code=ASYMMETRIC_SYMMETRIC_PART, message="symmetric part is not symmetric"))
            break
        if sym.min(initial=0.0) < 0:
            violations.append(Violation(code=NEGATIVE_KERNEL, message="symmetric part has negative entries"))
            break
        norm = max(norm, float(np.abs(off).max(initial=0.0)))
        if not kernel.mu_dependent:
            break
    norm = max(norm, kernel.observed_sup)

    bounds: Dict[str, float] = {}
    if kernel.is_additive:
        try:
            lambda_of(spec)
        except MuDependentLambdaError as exc:
            violations.append(Violation(code=LAMBDA_DEPENDS_ON_MU, message=exc.message))
    elif isinstance(kernel, GeneralKernel):
        bounds = kernel.bounds()
        if not all(np.isfinite(v) for v in bounds.values()):
            violations.append(Violation(code=UNBOUNDED_COMPONENTS, message=f"component bounds {bounds}"))

    report = ValidationReport(
        model=spec.name,
        variant=kernel.variant,
        admissible=not violations,
        violations=violations,
        warnings=warnings,
        norm_V=norm,
        norm_samples=len(samples) if kernel.mu_dependent else 1,
        visited_measures=kernel.evaluations,
        mu_dependent=kernel.mu_dependent,
        irreducible=irreducible,
        bounds=bounds,
    )
    logger.debug(f"DEBUG - validate_model: {spec.name} admissible={report.admissible} ‖V‖={norm:.6g}")
    return report
