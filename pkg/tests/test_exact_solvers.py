import numpy as np
import pytest
import scipy.linalg

from core.errors import FlowRangeError
from core.model.spec import lambda_of
from core.solvers.eigen import doob_transform, eigen_triplet, stationary_distribution
from core.solvers.ergodicity import fit_exponential_rate, flow_ergodicity, unnormalised_ergodicity
from core.solvers.expm import expm, expm_crosscheck
from core.solvers.feynman_kac import (
    fk_generator,
    fk_semigroup,
    log_normaliser,
    measure_at,
    normalized_flow,
    potential_integral,
    w_operator,
)
from core.solvers.mean_field import inhomogeneous_propagator, mean_field_ode, ode_measure_at
from tests.mock_models import measure_on, neutral, random_additive, two_allelic_default


def test_expm_matches_scipy_and_eigendecomposition():
    """测试矩阵指数两种算法一致"""
    spec = random_additive(4, seed=3)
    A = fk_generator(spec)
    assert np.allclose(expm(A, 0.7), scipy.linalg.expm(0.7 * A))
    assert expm_crosscheck(A, 0.7) < 1e-10
    assert np.allclose(expm(A, 0.0), np.eye(4))


def test_neutral_flow_is_forward_equation():
    """测试 V ≡ 0 时 μ_t = μ0 e^{tQ}"""
    spec = neutral(3, seed=2)
    mu0 = measure_on(3, seed=1)
    flow = normalized_flow(spec, mu0, [0.0, 0.5, 1.5])
    for t, row in zip(flow.times, flow.weights):
        assert np.allclose(row, mu0 @ scipy.linalg.expm(t * spec.mutation.entries), atol=1e-12)
    assert potential_integral(spec, flow, 0.0, 1.5) == pytest.approx(0.0, abs=1e-12)


def test_normalized_flow_matches_direct_semigroup():
    """测试增量归一化与直接计算 μ0 e^{t(Q+Λ)} 一致"""
    spec = two_allelic_default()
    mu0 = np.array([0.9, 0.1])
    flow = normalized_flow(spec, mu0, np.linspace(0.0, 3.0, 7))
    direct = mu0 @ scipy.linalg.expm(3.0 * fk_generator(spec))
    assert np.allclose(flow.weights[-1], direct / direct.sum(), atol=1e-12)
    assert flow.log_mass[-1] == pytest.approx(np.log(direct.sum()), abs=1e-10)
    assert np.allclose(flow.weights.sum(axis=1), 1.0)


def test_log_normaliser_agrees_with_flow():
    """测试 log μ0 P_T(𝟙) 两种算法一致"""
    spec = random_additive(3, seed=7)
    flow = normalized_flow(spec, [0.2, 0.3, 0.5], np.linspace(0.0, 2.0, 5))
    assert log_normaliser(spec, flow, 0.0, 2.0) == pytest.approx(flow.log_mass[-1], abs=1e-10)


def test_semigroup_rejects_negative_time():
    """测试负时间被拒绝"""
    with pytest.raises(ValueError):
        fk_semigroup(two_allelic_default(), -1.0, [1.0, 0.0])


def test_measure_at_between_samples_and_outside_range():
    """测试流在非采样点处推进、越界时报错"""
    spec = two_allelic_default()
    mu0 = [0.5, 0.5]
    coarse = normalized_flow(spec, mu0, [0.0, 1.0])
    fine = normalized_flow(spec, mu0, [0.0, 0.4, 1.0])
    assert np.allclose(measure_at(spec, coarse, 0.4).weights, fine.weights[1], atol=1e-12)
    with pytest.raises(FlowRangeError):
        measure_at(spec, coarse, 1.5)


def test_w_operator_normalisation():
    """测试 μ_t(W_{t,T} 𝟙) = 1 且 W_{T,T} 为恒等"""
    spec = random_additive(3, seed=2)
    flow = normalized_flow(spec, [0.1, 0.6, 0.3], np.linspace(0.0, 1.0, 5))
    ones = np.ones(3)
    w = w_operator(spec, flow, 0.5, 1.0, ones).values
    assert float(flow.weights[2] @ w) == pytest.approx(1.0)
    phi = np.array([1.0, -2.0, 0.5])
    assert np.allclose(w_operator(spec, flow, 1.0, 1.0, phi).values, phi)
    with pytest.raises(ValueError):
        w_operator(spec, flow, 1.0, 0.5, phi)


def test_mean_field_ode_agrees_with_semigroup():
    """测试平均场 ODE 与 Feynman–Kac 归一化流一致"""
    spec = random_additive(3, seed=5, symmetric=True)
    mu0 = [0.6, 0.3, 0.1]
    times = np.linspace(0.0, 1.0, 6)
    exact = normalized_flow(spec, mu0, times)
    ode = mean_field_ode(spec, mu0, times)
    assert ode.sup_tv(exact) < 1e-8
    assert ode.diagnostics["richardson_error"] < 1e-8
    assert ode.diagnostics["negativity_clips"] == 0.0
    assert ode.method == "ode"


def test_ode_measure_at_non_grid_time():
    """测试 ODE 流在非采样点处的测度"""
    spec = two_allelic_default()
    times = np.linspace(0.0, 1.0, 3)
    ode = mean_field_ode(spec, [0.5, 0.5], times, richardson=False)
    exact = normalized_flow(spec, [0.5, 0.5], [0.0, 0.3])
    assert np.allclose(ode_measure_at(spec, ode, 0.3).weights, exact.weights[-1], atol=1e-8)


def test_inhomogeneous_propagator_transports_flow():
    """测试 μ_s P(s,t) = μ_t 且 P(s,t) 为随机矩阵"""
    spec = random_additive(3, seed=4)
    times = np.linspace(0.0, 1.0, 5)
    flow = mean_field_ode(spec, [0.2, 0.2, 0.6], times, richardson=False)
    P = inhomogeneous_propagator(spec, 0.25, 1.0, flow)
    assert np.allclose(P.sum(axis=1), 1.0, atol=1e-9)
    assert np.all(P >= -1e-12)
    assert np.allclose(flow.weights[1] @ P, flow.weights[-1], atol=1e-7)
    assert np.allclose(inhomogeneous_propagator(spec, 0.5, 0.5, flow), np.eye(3))
    with pytest.raises(ValueError):
        inhomogeneous_propagator(spec, 1.0, 0.5, flow)


def test_eigen_triplet_residuals_and_normalisation():
    """测试主特征三元组的残差与归一化 μ∞(h) = 1"""
    spec = random_additive(4, seed=1)
    triplet = eigen_triplet(spec)
    assert triplet.residual_left < 1e-10
    assert triplet.residual_right < 1e-10
    assert triplet.mu_inf.weights.sum() == pytest.approx(1.0)
    assert float(triplet.mu_inf.weights @ triplet.h.values) == pytest.approx(1.0)
    assert triplet.gap > 0
    assert triplet.diagnostics["power_iteration_tv"] < 1e-8
    lam = lambda_of(spec).values
    assert lam.min() - 1e-12 <= triplet.lam <= lam.max() + 1e-12


def test_flow_converges_to_mu_inf():
    """测试长时间后归一化流收敛到 μ∞"""
    spec = two_allelic_default()
    triplet = eigen_triplet(spec)
    flow = normalized_flow(spec, [1.0, 0.0], [0.0, 40.0 / triplet.gap])
    assert np.allclose(flow.weights[-1], triplet.mu_inf.weights, atol=1e-10)


def test_doob_transform_is_conservative_with_stationary_law():
    """测试 Doob 变换是保守生成元，平稳分布为 h·μ∞"""
    spec = random_additive(3, seed=9)
    triplet = eigen_triplet(spec)
    Qh = doob_transform(spec, triplet)
    assert Qh.is_conservative(tol=1e-9)
    assert not Qh.negative_entries()
    pi = stationary_distribution(Qh.entries).weights
    expected = triplet.h.values * triplet.mu_inf.weights
    assert np.allclose(pi, expected / expected.sum(), atol=1e-9)


def test_fit_exponential_rate():
    """测试指数衰减速率拟合"""
    t = np.linspace(0.0, 5.0, 11)
    rate, stderr = fit_exponential_rate(t, 3.0 * np.exp(-0.8 * t))
    assert rate == pytest.approx(0.8)
    assert stderr == pytest.approx(0.0, abs=1e-10)
    assert fit_exponential_rate([0.0, 1.0], [1.0, 0.5]) == (None, None)


def test_ergodicity_reports():
    """测试归一化与非归一化遍历性诊断"""
    spec = two_allelic_default()
    normalised = flow_ergodicity(spec, initials=5, points=21)
    assert normalised.confirmed
    assert normalised.rate > 0
    assert normalised.sup_tv[-1] < normalised.sup_tv[0]
    unnormalised = unnormalised_ergodicity(spec, initials=5, points=21)
    assert unnormalised.kind == "unnormalised"
    assert unnormalised.confirmed
    assert unnormalised.relaxation_time == pytest.approx(1.0 / unnormalised.rate)
