import json

import numpy as np
import pytest
from pydantic import ValidationError

from core.engine.rng import stream
from core.errors import AcceptanceError, ConfigError, NotAdditiveError
from core.experiments.checks import W_DIST, run_experiment
from core.experiments.plan import ExperimentPlan, resolve_phi
from core.experiments.report import AcceptanceResult, ExperimentReport, Provenance, ReportRow
from core.experiments.statistics import (
    bootstrap_ci,
    bootstrap_coverage_selftest,
    ks_gaussian,
    loglog_fit,
    lp_estimate,
    paired_bootstrap_ci,
)
from core.model.spec import sigma_reduce
from core.zoo.builders import two_allelic
from tests.mock_models import neutral, random_additive, random_general, two_allelic_default


def small_plan(check: str, **overrides) -> ExperimentPlan:
    values = dict(
        check=check,
        n_grid=[4, 8],
        replicates=20,
        horizon=0.5,
        sample_points=5,
        bootstrap_resamples=20,
        seed=7,
        acceptance={"enforce": False},
    )
    values.update(overrides)
    return ExperimentPlan(**values)


def test_lp_estimate():
    """测试 L^p 矩估计"""
    assert lp_estimate([3.0, -4.0], 2.0) == pytest.approx(np.sqrt(12.5))
    assert lp_estimate([1.0, 3.0], 1.0) == pytest.approx(2.0)


def test_bootstrap_ci_contains_estimate_and_is_reproducible():
    """测试 bootstrap 区间包含点估计且按随机流复现"""
    data = stream(0).normal(size=50)
    first = bootstrap_ci(data, np.mean, 200, 0.9, stream(1))
    second = bootstrap_ci(data, np.mean, 200, 0.9, stream(1))
    assert first == second
    est, lo, hi = first
    assert lo <= est <= hi
    assert est == pytest.approx(data.mean())


def test_paired_bootstrap_difference():
    """测试配对 bootstrap 的差值区间"""
    a = stream(2).normal(0.0, 2.0, 200)
    b = a * 0.5
    out = paired_bootstrap_ci(a, b, lambda s: float(np.var(s, ddof=1)), 100, 0.9, stream(3))
    est, lo, hi = out["difference"]
    assert est == pytest.approx(0.75 * np.var(a, ddof=1))
    assert lo > 0.0
    assert lo <= est <= hi


def test_loglog_fit():
    """测试双对数回归斜率"""
    ns = np.array([10, 20, 40, 80])
    fit = loglog_fit(ns, 3.0 * ns ** -0.5)
    assert fit["slope"] == pytest.approx(-0.5)
    assert fit["stderr"] == pytest.approx(0.0, abs=1e-10)
    assert loglog_fit(ns, [1.0, 0.0, 1.0, 1.0]) is None
    assert loglog_fit([10], [1.0]) is None


def test_ks_gaussian():
    """测试与高斯分布的 KS 距离"""
    samples = stream(4).normal(0.0, 2.0, 2000)
    statistic, pvalue = ks_gaussian(samples, 4.0)
    assert statistic < 0.05
    assert pvalue > 1e-3
    far, _ = ks_gaussian(samples + 5.0, 4.0)
    assert far > 0.5


def test_bootstrap_coverage_selftest():
    """测试合成数据上 bootstrap 区间的覆盖率接近名义水平"""
    coverage = bootstrap_coverage_selftest(trials=100, size=100, resamples=200, confidence=0.9, seed=1)
    assert 0.75 <= coverage <= 0.99


def test_report_row_requires_containing_interval():
    """测试置信区间必须包含点估计"""
    with pytest.raises(ValidationError):
        ReportRow(N=4, phi="x", estimate=2.0, ci_lo=0.0, ci_hi=1.0, statistic="lp")


def test_report_acceptance_and_serialisation():
    """测试报告的验收汇总、表格与 JSON"""
    report = ExperimentReport(check="poc_rate", model="m", provenance=Provenance(seed=3, config_hash="abc"))
    report.rows.append(ReportRow(N=4, t=1.0, phi="x", p=2.0, estimate=0.5, ci_lo=0.4, ci_hi=0.6, statistic="sup-lp"))
    report.acceptance.append(AcceptanceResult(name="soft", passed=False, enforced=False))
    assert report.passed
    report.raise_if_failed()
    report.acceptance.append(AcceptanceResult(name="slope", passed=False, value=-0.1, range=(-0.62, -0.38)))
    assert not report.passed
    with pytest.raises(AcceptanceError):
        report.raise_if_failed()
    frame = report.to_frame()
    assert list(frame.columns) == ["N", "t", "phi", "p", "estimate", "ci_lo", "ci_hi", "statistic"]
    payload = json.loads(report.to_json())
    assert payload["provenance"]["config_hash"] == "abc"
    assert payload["provenance"]["seed"] == 3


def test_plan_validation():
    """测试实验计划的字段校验"""
    with pytest.raises(ValidationError):
        small_plan("poc_rate", n_grid=[8, 4])
    with pytest.raises(ValidationError):
        small_plan("poc_rate", n_grid=[])
    with pytest.raises(ValidationError):
        small_plan("poc_rate", t_eval=[0.1, 2.0])
    with pytest.raises(ValidationError):
        small_plan("poc_rate", acceptance={"slope_range": [-0.3, -0.6]})
    with pytest.raises(ValidationError):
        small_plan("unknown_check")
    plan = small_plan("poc_rate", grid_refine=True)
    coarse, fine = plan.sample_times(), plan.sample_times(refine=True)
    assert np.allclose(fine[::2], coarse)
    assert plan.eval_times() == [0.5]


def test_resolve_phi():
    """测试测试函数的几种写法"""
    spec = two_allelic_default()
    assert resolve_phi("indicator:1", spec).tolist() == [0.0, 1.0]
    assert resolve_phi("constant:2", spec).tolist() == [2.0, 2.0]
    assert resolve_phi("lambda", spec).tolist() == [0.0, -1.0]
    assert resolve_phi([1.0, 3.0], spec).tolist() == [1.0, 3.0]
    for bad in ("indicator:5", "sine", [1.0, 2.0, 3.0]):
        with pytest.raises(ConfigError):
            resolve_phi(bad, spec)


def test_poc_rate_small_run():
    """测试 poc_rate 的报告结构与常数测试函数的退化处理"""
    plan = small_plan("poc_rate", phi={"indicator:0": "indicator:0", "const": "constant:1"})
    report = run_experiment(plan, two_allelic_default(), "hash")
    assert len(report.rows) == 3 * 2 * 3
    names = {(fit.phi, fit.degenerate) for fit in report.fits}
    assert ("const", True) in names
    assert any(fit.phi == W_DIST for fit in report.fits)
    assert [a.name for a in report.acceptance] == ["slope[indicator:0, p=2]"]
    assert report.passed
    assert report.provenance.config_hash == "hash"


def test_poc_rate_is_reproducible():
    """测试同一计划两次运行结果一致"""
    plan = small_plan("poc_rate")
    first = run_experiment(plan, two_allelic_default()).to_frame()
    second = run_experiment(plan, two_allelic_default()).to_frame()
    assert first["estimate"].tolist() == second["estimate"].tolist()


def test_uniform_in_time_small_run():
    """测试 uniform_in_time 在弛豫时间倍数处给出比值"""
    plan = small_plan("uniform_in_time", relaxation_multiples=[1.0, 2.0], p_norms=[2.0])
    report = run_experiment(plan, two_allelic_default())
    assert report.extras["relaxation_time"] > 0
    ratios = [row for row in report.rows if row.statistic == "max/min ratio"]
    assert all(row.estimate >= 1.0 for row in ratios)


def test_clt_check_small_run():
    """测试 clt_check 记录 σ²_T 与方差比"""
    report = run_experiment(small_plan("clt_check"), two_allelic_default())
    assert "sigma2[indicator:0]" in report.extras
    statistics = {row.statistic for row in report.rows}
    assert {"sigma2_T", "variance", "variance ratio", "ks", "ks p-value", "skewness"} <= statistics


def test_bias_check_small_run():
    """测试 bias_check 同时报告偏差与均方根误差"""
    report = run_experiment(small_plan("bias_check", t_eval=[0.25, 0.5]), two_allelic_default())
    biases = [row for row in report.rows if row.statistic == "bias"]
    assert len(biases) == 4
    assert len(report.fits) == 2


def test_reduction_compare_small_run():
    """测试约化比较先核对流再给出配对方差"""
    report = run_experiment(small_plan("reduction_compare"), random_additive(3, seed=5, symmetric=True))
    assert any(a.name.startswith("quadrature ordering") and a.passed for a in report.acceptance)
    gap = [row.estimate for row in report.rows if row.statistic == "flow gap"]
    assert gap and gap[0] < 1e-8


def test_uniform_in_time_uses_absolute_t_eval():
    """测试给出 t_eval 时 uniform_in_time 在这些绝对时刻上评估"""
    plan = small_plan("uniform_in_time", t_eval=[0.25, 0.5], p_norms=[2.0])
    report = run_experiment(plan, two_allelic_default())
    assert report.extras["time_basis"] == "absolute"
    assert {row.t for row in report.rows if row.statistic == "lp"} == {0.25, 0.5}
    default = run_experiment(small_plan("uniform_in_time", relaxation_multiples=[1.0], p_norms=[2.0]), two_allelic_default())
    assert default.extras["time_basis"] == "relaxation_multiples"


def test_uniform_in_time_without_ergodicity_is_not_enforced():
    """测试遍历性未确认时只报告比值、不做断言"""
    plan = small_plan("uniform_in_time", relaxation_multiples=[1.0, 2.0], p_norms=[2.0], acceptance={"enforce": True})
    report = run_experiment(plan, random_general(3))
    assert any("not confirmed" in note for note in report.notes)
    assert all(not result.enforced for result in report.acceptance)
    assert report.passed


def test_clt_check_at_time_zero_is_initial_variance():
    """测试 T = 0 时 σ²_0 = Var_{μ0}(φ)，独立同分布初值的经验方差与之一致"""
    plan = small_plan("clt_check", n_grid=[50], replicates=400, horizon=0.0, bootstrap_resamples=50)
    report = run_experiment(plan, two_allelic_default())
    assert report.extras["sigma2[indicator:0]"]["sigma2"] == pytest.approx(0.25)
    ratio = next(row.estimate for row in report.rows if row.statistic == "variance ratio")
    assert 0.7 <= ratio <= 1.3


def test_bias_check_neutral_model_has_negligible_bias():
    """测试 V ≡ 0 时粒子相互独立，偏差只剩蒙特卡洛噪声，远小于均方根误差"""
    plan = small_plan("bias_check", replicates=200, t_eval=[0.5])
    report = run_experiment(plan, neutral(3, seed=2))
    bias = {row.N: row.estimate for row in report.rows if row.statistic == "bias"}
    rmse = {row.N: row.estimate for row in report.rows if row.statistic == "rmse"}
    for N in plan.n_grid:
        assert bias[N] < 0.5 * rmse[N]


def test_bootstrap_width_shrinks_with_replicates():
    """测试副本数加倍时 bootstrap 区间宽度约缩小为 1/√2"""
    data = stream(12).normal(size=800)
    _, lo_half, hi_half = bootstrap_ci(data[:400], np.mean, 2000, 0.9, stream(13))
    _, lo_full, hi_full = bootstrap_ci(data, np.mean, 2000, 0.9, stream(13))
    ratio = (hi_full - lo_full) / (hi_half - lo_half)
    assert 0.6 <= ratio <= 0.82


def test_reduction_compare_strict_ordering():
    """测试 Vd、Vb 重叠时 σ²_T 的下降是严格的"""
    report = run_experiment(small_plan("reduction_compare"), two_allelic(a=1.0, b=1.0, p=1.0, q=2.0))
    ordering = next(a for a in report.acceptance if a.name.startswith("quadrature ordering"))
    assert ordering.passed
    assert ordering.detail == "strict"
    assert ordering.value > 0.0


def test_reduction_compare_on_reduced_model():
    """测试已约化的模型与自身配对，两组副本完全相同"""
    reduced = sigma_reduce(two_allelic_default())
    report = run_experiment(small_plan("reduction_compare"), reduced)
    ordering = next(a for a in report.acceptance if a.name.startswith("quadrature ordering"))
    assert ordering.passed
    assert "Σ_μ ≡ 0" in ordering.detail
    differences = [row for row in report.rows if row.statistic == "variance difference"]
    assert differences
    assert all(row.estimate == 0.0 and row.ci_lo == 0.0 and row.ci_hi == 0.0 for row in differences)


def test_clt_check_rejects_general_kernel():
    """测试一般核不能做 CLT 检查"""
    with pytest.raises(NotAdditiveError):
        run_experiment(small_plan("clt_check"), random_general(3))


@pytest.mark.slow
def test_poc_rate_slope_acceptance():
    """测试经验误差按 N^{-1/2} 衰减"""
    plan = ExperimentPlan(
        check="poc_rate",
        n_grid=[10, 20, 40, 80],
        replicates=400,
        horizon=1.0,
        sample_points=11,
        bootstrap_resamples=200,
        seed=11,
    )
    report = run_experiment(plan, two_allelic_default())
    report.raise_if_failed()


@pytest.mark.slow
def test_clt_variance_ratio():
    """测试 N 较大时经验方差与 σ²_T 一致"""
    plan = ExperimentPlan(
        check="clt_check",
        n_grid=[100],
        replicates=1000,
        horizon=1.0,
        bootstrap_resamples=200,
        seed=5,
        acceptance={"enforce": False},
    )
    report = run_experiment(plan, two_allelic_default())
    ratio = next(row.estimate for row in report.rows if row.statistic == "variance ratio")
    assert 0.8 <= ratio <= 1.2
