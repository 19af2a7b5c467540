"""极限定理的蒙特卡洛验证

每个检查都返回 ExperimentReport，验收结论写在报告里；是否因失败退出由调用方决定
（见 ExperimentReport.raise_if_failed）。副本 r 总是使用 stream(seed, run_id, r)，
run_id 由检查名和 N 决定，原模型与约化模型共用同一个 run_id 从而按副本配对。
"""
import logging
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from config.settings import get_tolerances
from core.engine.replicates import run_replicates
from core.engine.rng import run_id_of, stream
from core.errors import MoranError, MuDependentLambdaError, NotAdditiveError
from core.experiments.plan import ExperimentPlan, resolve_phi
from core.experiments.report import AcceptanceResult, ExperimentReport, FitResult, Provenance, ReportRow
from core.experiments.statistics import (
    bootstrap_ci,
    ks_gaussian,
    loglog_fit,
    lp_estimate,
    paired_bootstrap_ci,
    shape_diagnostics,
)
from core.model.distances import tv_distance, tv_rows
from core.model.spec import ModelSpec, initial_measure, lambda_of, require_additive, sigma_reduce
from core.model.types import as_weights
from core.solvers.ergodicity import flow_ergodicity
from core.solvers.feynman_kac import FlowTrajectory, normalized_flow
from core.solvers.mean_field import mean_field_ode
from core.variance.toolkit import sigma2_T, variance_compare

logger = logging.getLogger(__name__)

_DEGENERATE = 1e-14
W_DIST = "w-dist"


def _exact_flow(spec: ModelSpec, mu0, times: Sequence[float]) -> FlowTrajectory:
    """加性模型用半群，其余用平均场 ODE"""
    if spec.is_additive:
        try:
            lambda_of(spec)
            return normalized_flow(spec, mu0, times)
        except MuDependentLambdaError:
            pass
    return mean_field_ode(spec, mu0, times, richardson=False)


def _new_report(plan: ExperimentPlan, spec: ModelSpec, config_hash: str) -> ExperimentReport:
    return ExperimentReport(
        check=plan.check,
        model=spec.name,
        provenance=Provenance(seed=plan.seed, config_hash=config_hash),
    )


def _rng(plan: ExperimentPlan, *labels) -> np.random.Generator:
    """bootstrap 用的随机流，只依赖标签，与计算顺序无关"""
    key = ":".join(str(label) for label in (plan.check, "bootstrap") + labels)
    return stream(plan.seed, run_id_of(key), 0)


def _interval(name: str, value: Optional[float], bounds: Tuple[float, float], enforced: bool, detail: str = "") -> AcceptanceResult:
    """双侧区间检验；effect 为到区间的有符号距离（区间内为 0）"""
    if value is None or not np.isfinite(value):
        return AcceptanceResult(name=name, passed=False, value=value, range=bounds, enforced=enforced, detail=detail or "undefined")
    lo, hi = bounds
    effect = 0.0 if lo <= value <= hi else (value - lo if value < lo else value - hi)
    return AcceptanceResult(
        name=name, passed=effect == 0.0, value=float(value), range=bounds, effect=effect, enforced=enforced, detail=detail
    )


def _fit_row(name: str, statistic: str, ns: Sequence[int], values: Sequence[float]) -> FitResult:
    if all(v <= _DEGENERATE for v in values):
        return FitResult(phi=name, statistic=statistic, degenerate=True)
    fit = loglog_fit(ns, values)
    if fit is None:
        return FitResult(phi=name, statistic=statistic)
    return FitResult(phi=name, statistic=statistic, slope=fit["slope"], stderr=fit["stderr"], intercept=fit["intercept"])


def _lp_rows(plan, report, name, statistic, N, t, errors) -> Dict[float, float]:
    estimates = {}
    for p in plan.p_norms:
        est, lo, hi = bootstrap_ci(
            errors,
            lambda e, p=p: lp_estimate(e, p),
            plan.bootstrap_resamples,
            plan.confidence,
            _rng(plan, name, statistic, N, t, p),
        )
        report.rows.append(ReportRow(N=N, t=t, phi=name, p=p, estimate=est, ci_lo=lo, ci_hi=hi, statistic=statistic))
        estimates[p] = est
    return estimates


def _reference_p(plan: ExperimentPlan) -> float:
    return 2.0 if 2.0 in plan.p_norms else plan.p_norms[0]


def poc_rate(plan: ExperimentPlan, spec: ModelSpec, config_hash: str = "") -> ExperimentReport:
    """E[sup_t |m(η_t)(φ) − μ_t(φ)|^p]^{1/p} 随 N 的衰减阶

    sup 取采样网格上的最大值；额外报告 sup_t ‖m(η_t) − μ_t‖_w（伪测试函数 w-dist）。
    """
    mu0 = initial_measure(spec, plan.mu0)
    times = plan.sample_times(refine=plan.grid_refine)
    flow = _exact_flow(spec, mu0, times).weights
    phis = {name: resolve_phi(source, spec) for name, source in plan.phi.items()}
    coarse = slice(None, None, 2) if plan.grid_refine else slice(None)
    report = _new_report(plan, spec, config_hash)
    p_ref = _reference_p(plan)
    curves: Dict[Tuple[str, str], List[float]] = {}

    for N in plan.n_grid:
        samples = run_replicates(
            spec, N, mu0, times, plan.seed, run_id_of(f"poc_rate:N={N}"), plan.replicates, plan.workers
        )
        errors: Dict[Tuple[str, str], np.ndarray] = {}
        for name, values in phis.items():
            deviation = np.abs(samples @ values - flow @ values)
            errors[(name, "sup-lp")] = deviation[:, coarse].max(axis=1)
            if plan.grid_refine:
                errors[(name, "sup-lp-refined")] = deviation.max(axis=1)
        distance = np.abs(samples - flow[None, :, :]) @ (0.5 ** np.arange(1, spec.size + 1))
        errors[(W_DIST, "sup-lp")] = distance[:, coarse].max(axis=1)
        for (name, statistic), err in errors.items():
            estimates = _lp_rows(plan, report, name, statistic, N, plan.horizon, err)
            curves.setdefault((name, statistic), []).append(estimates[p_ref])

    enforce = plan.acceptance.enforce
    for (name, statistic), values in curves.items():
        fit = _fit_row(name, statistic, plan.n_grid, values)
        report.fits.append(fit)
        if fit.degenerate:
            report.notes.append(f"{name}: all errors vanish (constant test function); slope undefined")
            continue
        if name != W_DIST and statistic == "sup-lp":
            report.acceptance.append(
                _interval(f"slope[{name}, p={p_ref:g}]", fit.slope, plan.acceptance.slope_range, enforce)
            )
    logger.info(f"poc_rate: {spec.name} fits={[(f.phi, f.slope) for f in report.fits]}")
    return report


def uniform_in_time(plan: ExperimentPlan, spec: ModelSpec, config_hash: str = "") -> ExperimentReport:
    """在 {1,5,10,20}·弛豫时间（或 t_eval 给出的绝对时刻）处比较 L^p 误差，max/min 比值不超过 uniformity_ratio

    流的指数遍历性未被确认时（非加性模型或拟合速率不为正）只报告，不做一致性断言。
    """
    mu0 = initial_measure(spec, plan.mu0)
    report = _new_report(plan, spec, config_hash)
    confirmed = False
    relaxation = 1.0
    try:
        if spec.is_additive:
            ergodicity = flow_ergodicity(spec, seed=plan.seed)
            report.extras["ergodicity"] = {"rate": ergodicity.rate, "spectral_gap": ergodicity.spectral_gap}
            if ergodicity.confirmed:
                confirmed = True
                relaxation = ergodicity.relaxation_time
    except MoranError as exc:
        report.notes.append(f"ergodicity diagnostics unavailable: {exc.message}")
    if not confirmed:
        report.notes.append("exponential flow ergodicity not confirmed; uniformity reported without assertion")
    report.extras["relaxation_time"] = relaxation

    if plan.t_eval:
        times = np.array(plan.t_eval, dtype=float)
        report.extras["time_basis"] = "absolute"
    else:
        times = np.array(sorted(m * relaxation for m in plan.relaxation_multiples))
        report.extras["time_basis"] = "relaxation_multiples"
    flow = _exact_flow(spec, mu0, times).weights
    phis = {name: resolve_phi(source, spec) for name, source in plan.phi.items()}
    p_ref = _reference_p(plan)
    for N in plan.n_grid:
        samples = run_replicates(
            spec, N, mu0, times, plan.seed, run_id_of(f"uniform_in_time:N={N}"), plan.replicates, plan.workers
        )
        for name, values in phis.items():
            deviation = np.abs(samples @ values - flow @ values)
            by_time = [
                _lp_rows(plan, report, name, "lp", N, float(t), deviation[:, j])[p_ref] for j, t in enumerate(times)
            ]
            low, high = min(by_time), max(by_time)
            if high <= _DEGENERATE:
                report.notes.append(f"{name}: errors vanish at N={N}; uniformity ratio undefined")
                continue
            ratio = high / low if low > 0 else float("inf")
            report.rows.append(ReportRow(N=N, phi=name, p=p_ref, estimate=ratio, statistic="max/min ratio"))
            report.acceptance.append(
                _interval(
                    f"uniformity[{name}, N={N}]",
                    ratio,
                    (1.0, plan.acceptance.uniformity_ratio),
                    plan.acceptance.enforce and confirmed,
                )
            )
    return report


def _final_samples(spec: ModelSpec, plan: ExperimentPlan, N: int, mu0, T: float, label: str) -> np.ndarray:
    """各副本在 T 时刻的经验测度，形如 (M, K)"""
    return run_replicates(spec, N, mu0, [T], plan.seed, run_id_of(f"{label}:N={N}"), plan.replicates, plan.workers)[:, -1, :]


def clt_check(plan: ExperimentPlan, spec: ModelSpec, config_hash: str = "") -> ExperimentReport:
    """√N(m(η_T)(φ) − μ_T(φ)) 与 N(0, σ²_T(φ)) 的比较"""
    require_additive(spec)
    mu0 = initial_measure(spec, plan.mu0)
    T = plan.horizon
    mu_T = _exact_flow(spec, mu0, [T]).weights[-1]
    phis = {name: resolve_phi(source, spec) for name, source in plan.phi.items()}
    sigmas = {name: sigma2_T(spec, mu0, T, values) for name, values in phis.items()}
    report = _new_report(plan, spec, config_hash)
    enforce = plan.acceptance.enforce
    for name, variance in sigmas.items():
        report.extras[f"sigma2[{name}]"] = variance.to_dict()

    for N in plan.n_grid:
        samples = _final_samples(spec, plan, N, mu0, T, "clt_check")
        for name, values in phis.items():
            sigma2 = sigmas[name].sigma2
            z = np.sqrt(N) * (samples @ values - float(mu_T @ values))
            report.rows.append(ReportRow(N=N, t=T, phi=name, estimate=sigma2, statistic="sigma2_T"))
            if sigma2 <= _DEGENERATE and np.var(z) <= _DEGENERATE:
                report.notes.append(f"{name}: degenerate (zero variance) at N={N}; no test run")
                continue
            est, lo, hi = bootstrap_ci(
                z, lambda s: np.var(s, ddof=1), plan.bootstrap_resamples, plan.confidence, _rng(plan, name, N, "var")
            )
            report.rows.append(ReportRow(N=N, t=T, phi=name, estimate=est, ci_lo=lo, ci_hi=hi, statistic="variance"))
            ratio = est / sigma2
            report.rows.append(
                ReportRow(N=N, t=T, phi=name, estimate=ratio, ci_lo=lo / sigma2, ci_hi=hi / sigma2, statistic="variance ratio")
            )
            ks, pvalue = ks_gaussian(z, sigma2)
            report.rows.append(ReportRow(N=N, t=T, phi=name, estimate=ks, statistic="ks"))
            report.rows.append(ReportRow(N=N, t=T, phi=name, estimate=pvalue, statistic="ks p-value"))
            for key, value in shape_diagnostics(z).items():
                report.rows.append(ReportRow(N=N, t=T, phi=name, estimate=value, statistic=key))
            report.acceptance.append(_interval(f"variance ratio[{name}, N={N}]", ratio, plan.acceptance.variance_ratio, enforce))
            report.acceptance.append(_interval(f"ks[{name}, N={N}]", ks, (0.0, plan.acceptance.ks_max), enforce))
    return report


def bias_check(plan: ExperimentPlan, spec: ModelSpec, config_hash: str = "") -> ExperimentReport:
    """‖m̄(η_t) − μ_t‖_TV 随 N 的阶（预期 −1），并与 TV 的均方根误差比较"""
    mu0 = initial_measure(spec, plan.mu0)
    times = plan.eval_times()
    flow = _exact_flow(spec, mu0, times).weights
    report = _new_report(plan, spec, config_hash)
    enforce = plan.acceptance.enforce
    bias_curves: Dict[float, List[float]] = {t: [] for t in times}
    for N in plan.n_grid:
        samples = run_replicates(
            spec, N, mu0, times, plan.seed, run_id_of(f"bias_check:N={N}"), plan.replicates, plan.workers
        )
        for j, t in enumerate(times):
            block = samples[:, j, :]
            target = flow[j]
            bias, lo, hi = bootstrap_ci(
                block,
                lambda s, target=target: tv_distance(s.mean(axis=0), target),
                plan.bootstrap_resamples,
                plan.confidence,
                _rng(plan, N, t, "bias"),
            )
            report.rows.append(ReportRow(N=N, t=t, phi="tv", estimate=bias, ci_lo=lo, ci_hi=hi, statistic="bias"))
            distances = tv_rows(block, target)
            rmse, rlo, rhi = bootstrap_ci(
                distances,
                lambda d: float(np.sqrt(np.mean(d * d))),
                plan.bootstrap_resamples,
                plan.confidence,
                _rng(plan, N, t, "rmse"),
            )
            report.rows.append(ReportRow(N=N, t=t, phi="tv", estimate=rmse, ci_lo=rlo, ci_hi=rhi, statistic="rmse"))
            bias_curves[t].append(bias)
            report.acceptance.append(
                AcceptanceResult(
                    name=f"bias<rmse[N={N}, t={t:g}]",
                    passed=bias < rmse,
                    value=bias / rmse if rmse > 0 else None,
                    enforced=enforce,
                    detail="bias/rmse",
                )
            )
    for t, values in bias_curves.items():
        fit = _fit_row("tv", f"bias@t={t:g}", plan.n_grid, values)
        report.fits.append(fit)
        if fit.degenerate:
            report.notes.append(f"bias vanishes at t={t:g}; slope undefined")
            continue
        report.acceptance.append(_interval(f"bias slope[t={t:g}]", fit.slope, plan.acceptance.bias_slope, enforce))
    return report


def _sigma_vanishes(spec: ModelSpec, measures: Sequence[np.ndarray], tol: float) -> bool:
    """Σ_μ = min(Vd,Vb)(x) + min(Vd,Vb)(y) + Vs(x,y) 在给定测度上恒为 0"""
    kernel = require_additive(spec)
    for mu in measures:
        overlap = np.minimum(kernel.death_rates(mu), kernel.birth_rates(mu))
        if overlap.max(initial=0.0) > tol or np.abs(kernel.symmetric_matrix(mu)).max(initial=0.0) > tol:
            return False
    return True


def reduction_compare(plan: ExperimentPlan, spec: ModelSpec, config_hash: str = "") -> ExperimentReport:
    """原模型与 Σ_μ 约化模型：先核对平均场流一致，再比较 σ²_T 与配对副本的经验方差"""
    require_additive(spec)
    reduced = sigma_reduce(spec)
    mu0 = initial_measure(spec, plan.mu0)
    T = plan.horizon
    phis = {name: resolve_phi(source, spec) for name, source in plan.phi.items()}
    report = _new_report(plan, spec, config_hash)
    enforce = plan.acceptance.enforce
    mu_T = _exact_flow(spec, mu0, [T]).weights[-1]
    tol = get_tolerances()
    sigma_zero = _sigma_vanishes(spec, [as_weights(mu0), mu_T], tol.exact)

    for name, values in phis.items():
        comparison = variance_compare(spec, values, T=T, mu0=mu0)
        report.extras[f"variance_compare[{name}]"] = comparison.model_dump()
        report.rows.append(ReportRow(N=0, t=T, phi=name, estimate=comparison.flow_gap, statistic="flow gap"))
        report.rows.append(ReportRow(N=0, t=T, phi=name, estimate=comparison.original.sigma2, statistic="sigma2 original"))
        report.rows.append(ReportRow(N=0, t=T, phi=name, estimate=comparison.reduced.sigma2, statistic="sigma2 reduced"))
        # Σ_μ ≡ 0 或 φ 为常数时两边相等，否则要求严格下降
        strict_expected = not sigma_zero and np.ptp(values) > 0
        threshold = tol.quadrature_rel * max(1.0, comparison.original.sigma2)
        strict = comparison.reduction > threshold
        report.acceptance.append(
            AcceptanceResult(
                name=f"quadrature ordering[{name}]",
                passed=strict or not strict_expected,
                value=comparison.reduction,
                enforced=enforce,
                detail=("strict" if strict else "equal") + (" (Σ_μ ≡ 0)" if sigma_zero else ""),
            )
        )

    for N in plan.n_grid:
        # 同一个 run_id：副本 r 的随机流在两个模型间配对
        original = _final_samples(spec, plan, N, mu0, T, "reduction_compare")
        smaller = _final_samples(reduced, plan, N, mu0, T, "reduction_compare")
        for name, values in phis.items():
            centre = float(mu_T @ values)
            z_original = np.sqrt(N) * (original @ values - centre)
            z_reduced = np.sqrt(N) * (smaller @ values - centre)
            paired = paired_bootstrap_ci(
                z_original,
                z_reduced,
                lambda s: float(np.var(s, ddof=1)),
                plan.bootstrap_resamples,
                plan.confidence,
                _rng(plan, name, N, "paired"),
            )
            for key, statistic in (("first", "variance original"), ("second", "variance reduced"), ("difference", "variance difference")):
                est, lo, hi = paired[key]
                report.rows.append(ReportRow(N=N, t=T, phi=name, estimate=est, ci_lo=lo, ci_hi=hi, statistic=statistic))
            difference, _, upper = paired["difference"]
            report.acceptance.append(
                AcceptanceResult(
                    name=f"empirical ordering[{name}, N={N}]",
                    passed=upper >= 0.0,
                    value=difference,
                    effect=min(upper, 0.0),
                    enforced=enforce,
                    detail="original − reduced variance; passes unless the CI lies below 0",
                )
            )
    return report


CHECKS: Dict[str, Callable[..., ExperimentReport]] = {
    "poc_rate": poc_rate,
    "uniform_in_time": uniform_in_time,
    "clt_check": clt_check,
    "bias_check": bias_check,
    "reduction_compare": reduction_compare,
}


def run_experiment(plan: ExperimentPlan, spec: ModelSpec, config_hash: str = "") -> ExperimentReport:
    if plan.check in ("clt_check", "reduction_compare") and not spec.is_additive:
        raise NotAdditiveError(f"{plan.check} needs an additive model, '{spec.name}' is {spec.kernel.variant}")
    logger.info(f"run_experiment: {plan.check} on {spec.name} N={plan.n_grid} M={plan.replicates}")
    return CHECKS[plan.check](plan, spec, config_hash)
