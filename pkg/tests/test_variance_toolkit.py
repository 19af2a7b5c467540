import numpy as np
import pytest
from pydantic import ValidationError

from core.engine.moran import fleming_viot_mode
from core.errors import InvariantBreachError, ModelValidationError, NotAdditiveError, SizeMismatchError
from core.model.types import Measure
from core.solvers.eigen import eigen_triplet
from core.variance.toolkit import (
    VarianceReport,
    carre_du_champ,
    carre_du_champ_jump,
    clip_negative_components,
    s_mu,
    sigma2_T,
    sigma2_inf,
    sigma2_inf_fleming_viot,
    variance_compare,
)
from tests.mock_models import neutral, random_additive, random_general, two_allelic_default


def test_carre_du_champ_jump_form():
    """测试保守生成元的 Γ_L 等于跳跃形式"""
    spec = random_additive(4, seed=2)
    phi = np.array([0.5, -1.0, 2.0, 0.0])
    Q = spec.mutation.entries
    assert np.allclose(carre_du_champ(Q, phi), carre_du_champ_jump(Q, phi))
    assert np.all(carre_du_champ_jump(Q, phi) >= 0)
    with pytest.raises(SizeMismatchError):
        carre_du_champ(Q, [1.0, 2.0])


def test_s_mu_zero_without_symmetric_part():
    """测试无对称核时 S_μ 为零，有对称核时非负"""
    mu = np.full(3, 1.0 / 3.0)
    phi = [1.0, 2.0, 4.0]
    assert s_mu(random_additive(3, seed=1), mu, phi) == 0.0
    assert s_mu(random_additive(3, seed=1, symmetric=True), mu, phi) > 0.0


def test_report_rejects_inconsistent_sum():
    """测试 σ² 必须等于三项之和"""
    report = VarianceReport.assemble("m", 1.0, 0.25, 0.5)
    assert report.sigma2 == pytest.approx(1.75)
    assert set(report.decomposition) == {"var_term", "symmetric_integral", "selection_integral"}
    with pytest.raises(ValidationError):
        VarianceReport(model="m", var_term=1.0, symmetric_integral=0.0, selection_integral=0.0, sigma2=2.0)


def test_sigma2_T_at_zero_is_variance():
    """测试 T = 0 时 σ²_0(φ) = Var_{μ0}(φ)"""
    mu0 = [0.25, 0.75]
    report = sigma2_T(two_allelic_default(), mu0, 0.0, [1.0, 0.0])
    assert report.sigma2 == pytest.approx(0.1875)
    assert report.selection_integral == 0.0
    with pytest.raises(ValueError):
        sigma2_T(two_allelic_default(), mu0, -1.0, [1.0, 0.0])


def test_sigma2_T_neutral_model():
    """测试 V ≡ 0 时只剩方差项"""
    spec = neutral(3, seed=4)
    mu0 = [0.5, 0.3, 0.2]
    phi = [1.0, 0.0, -1.0]
    report = sigma2_T(spec, mu0, 1.0, phi)
    assert report.symmetric_integral == 0.0
    assert report.selection_integral == 0.0
    assert report.sigma2 == pytest.approx(report.var_term)


def test_sigma2_T_positive_selection_integral():
    """测试有选择时积分项为正且数值收敛"""
    report = sigma2_T(two_allelic_default(), [0.5, 0.5], 1.0, [1.0, 0.0])
    assert report.selection_integral > 0.0
    assert report.sigma2 > report.var_term
    assert report.nodes >= 32
    assert report.horizon == 1.0


def test_negative_component_within_tolerance_is_clipped():
    """测试容差内的负求积值截为 0 并记录"""
    components, clips = clip_negative_components([-1e-12, 0.5], "test")
    assert components.tolist() == [0.0, 0.5]
    assert clips["negativity_clips"] == 1.0
    assert clips["most_negative"] == pytest.approx(-1e-12)
    _, clean = clip_negative_components([0.0, 0.5], "test")
    assert clean["negativity_clips"] == 0.0


def test_negative_component_beyond_tolerance_raises():
    """测试明显为负的求积值破坏分量非负性"""
    with pytest.raises(InvariantBreachError):
        clip_negative_components([-1e-3, 0.5], "test")


def test_sigma2_T_records_clip_diagnostics():
    """测试 σ²_T 报告里带有截断计数"""
    report = sigma2_T(two_allelic_default(), [0.5, 0.5], 1.0, [1.0, 0.0])
    assert report.diagnostics["negativity_clips"] == 0.0


def test_variance_requires_additive_kernel():
    """测试一般核不能计算方差"""
    with pytest.raises(NotAdditiveError):
        sigma2_T(random_general(3), [0.2, 0.3, 0.5], 1.0, [1.0, 0.0, 0.0])


def test_fleming_viot_closed_form_matches_general():
    """测试 Fleming–Viot 闭式与一般公式一致"""
    spec = fleming_viot_mode(random_additive(3, seed=6))
    phi = np.array([1.0, 0.0, -0.5])
    triplet = eigen_triplet(spec)
    general = sigma2_inf(spec, phi, triplet)
    closed = sigma2_inf_fleming_viot(spec, phi, triplet)
    assert closed == pytest.approx(general.sigma2, rel=1e-6)
    assert general.symmetric_integral == 0.0


def test_fleming_viot_closed_form_rejects_birth():
    """测试有出生项的模型不适用闭式"""
    with pytest.raises(ModelValidationError):
        sigma2_inf_fleming_viot(random_additive(3, seed=6), [1.0, 0.0, 0.0])


def test_sigma2_inf_reports_decay_diagnostics():
    """测试平稳方差的积分截断诊断"""
    report = sigma2_inf(two_allelic_default(), [1.0, 0.0])
    assert report.sigma2 >= report.var_term
    assert report.diagnostics["fitted_rate"] > 0
    assert report.diagnostics["tail_bound"] >= 0
    assert report.var_term == pytest.approx(eigen_triplet(two_allelic_default()).mu_inf.variance([1.0, 0.0]))


def test_reduction_never_increases_variance():
    """测试 Σ_μ 约化不增大渐近方差"""
    spec = random_additive(3, seed=5, symmetric=True)
    phi = [1.0, -1.0, 0.5]
    finite = variance_compare(spec, phi, T=1.0, mu0=Measure.uniform(3))
    assert finite.reduction >= 0.0
    assert finite.reduced.symmetric_integral == 0.0
    assert finite.flow_gap < 1e-8
    stationary = variance_compare(two_allelic_default(), [1.0, 0.0])
    assert stationary.reduced.sigma2 <= stationary.original.sigma2 + 1e-10
