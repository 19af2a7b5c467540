import numpy as np
import pytest

from core.engine.master import master_generator
from core.engine.moran import MoranProcess
from core.engine.rng import run_id_of, stream
from core.model.types import TestFunction
from core.solvers.eigen import eigen_triplet
from core.solvers.ergodicity import unnormalised_ergodicity
from core.solvers.feynman_kac import log_normaliser, normalized_flow, potential_integral
from core.solvers.mean_field import mean_field_ode
from core.variance.toolkit import variance_compare
from core.zoo.builders import birth_death, two_allelic
from core.zoo.checks import SeriesVerdict, bd_qsd_uniqueness_check
from tests.mock_models import random_additive, two_allelic_default


def test_semigroup_and_ode_agree_on_long_horizon():
    """测试 t ∈ [0, 5] 上半群归一化与平均场 ODE 的 sup-TV ≤ 1e-6"""
    spec = two_allelic_default()
    times = np.linspace(0.0, 5.0, 51)
    exact = normalized_flow(spec, [1.0, 0.0], times)
    ode = mean_field_ode(spec, [1.0, 0.0], times, richardson=False)
    assert ode.sup_tv(exact) <= 1e-6


@pytest.mark.parametrize("t, T", [(0.0, 1.0), (0.5, 2.0)])
def test_log_normaliser_equals_potential_integral(t, T):
    """测试 log μ_t(P_{T−t}(𝟙)) = ∫_t^T μ_s(Λ) ds"""
    spec = random_additive(3, seed=4)
    flow = normalized_flow(spec, [0.2, 0.3, 0.5], np.linspace(0.0, 2.0, 21))
    assert abs(log_normaliser(spec, flow, t, T) - potential_integral(spec, flow, t, T)) <= 1e-8


@pytest.mark.parametrize(
    "params, verdict",
    [
        ({"b": 1.0, "d": 2.0, "K": 10}, SeriesVerdict.DIVERGING),
        ({"b": "x", "d": "x * x", "K": 10}, SeriesVerdict.CONVERGING),
    ],
)
def test_series_verdict_is_stable_under_doubling(params, verdict):
    """测试项数加倍后级数判断不变"""
    assert bd_qsd_uniqueness_check(params, K_terms=200).verdict == verdict
    assert bd_qsd_uniqueness_check(params, K_terms=400).verdict == verdict


def test_sigma_reduction_lowers_variance():
    """测试 Vd、Vb 同时为正时约化严格降低 σ²_∞ 而流不变"""
    spec = two_allelic(a=1.0, b=1.0, p=1.0, q=2.0)
    comparison = variance_compare(spec, TestFunction.indicator(2, 0))
    assert comparison.flow_gap <= 1e-8
    assert comparison.reduced.sigma2 < comparison.original.sigma2
    assert comparison.reduction > 0.0


def test_birth_death_eigen_and_unnormalised_ergodicity():
    """测试截断生灭链上三元组残差与非归一化遍历性"""
    spec = birth_death({"b": 1.0, "d": "2 * x", "K": 8})
    triplet = eigen_triplet(spec)
    assert triplet.residual_left <= 1e-10
    assert triplet.residual_right <= 1e-10
    report = unnormalised_ergodicity(spec, initials=10, points=21, triplet=triplet)
    assert report.sup_tv[-1] < report.sup_tv[0]


@pytest.mark.slow
def test_empirical_law_matches_master_equation():
    """测试 N=3 时 η_T 的经验分布与主方程精确解的 TV ≤ 0.01"""
    spec = two_allelic(a=1.0, b=1.0, p=0.0, q=1.0)
    N, T, start = 3, 1.0, np.array([2, 1])
    master = master_generator(spec, N)
    exact = master.law_at(T, start)
    process = MoranProcess(spec, N)
    run_id = run_id_of("master-law")
    counts = np.zeros(master.size)
    replicates = 40000
    for r in range(replicates):
        final = process.run(start.copy(), stream(1, run_id, r), T, [T]).weights[-1]
        counts[master.index_of(np.rint(final * N).astype(int))] += 1
    assert 0.5 * np.abs(counts / replicates - exact).sum() <= 0.01
