import numpy as np
import pytest

from core.engine.master import enumerate_simplex, master_generator, simplex_size
from core.engine.moran import MoranProcess
from core.engine.rng import run_id_of, stream
from core.errors import SimplexTooLargeError
from tests.mock_models import random_additive, two_allelic_default


def test_simplex_enumeration():
    """测试 𝓔_N 的枚举与计数"""
    states = enumerate_simplex(3, 2)
    assert len(states) == simplex_size(3, 2) == 6
    assert np.all(states.sum(axis=1) == 2)
    assert len({tuple(s) for s in states}) == 6


def test_simplex_cap():
    """测试状态数超过上限时报错"""
    with pytest.raises(SimplexTooLargeError):
        enumerate_simplex(5, 20, cap=100)


def test_master_generator_is_conservative():
    """测试 N 粒子生成元行和为零且速率非负"""
    master = master_generator(random_additive(3, seed=2), 4)
    assert master.is_conservative()
    assert not master.negative_entries()
    assert np.allclose(master.empirical().sum(axis=1), 1.0)


def test_master_generator_two_allelic_entries():
    """测试两等位基因 N=2 的生成元逐项"""
    master = master_generator(two_allelic_default(), 2)
    i = master.index_of([1, 1])
    j = master.index_of([0, 2])
    k = master.index_of([2, 0])
    assert master.entries[i, j] == pytest.approx(1.0 * (1.0 + 0.5 * 0.5))
    assert master.entries[i, k] == pytest.approx(1.0 * (2.0 + 0.5 * 1.5))
    assert master.entries[j, i] == pytest.approx(2.0 * 2.0)


def test_law_at_is_probability():
    """测试 δ_η e^{t𝒬} 是概率分布"""
    master = master_generator(two_allelic_default(), 5)
    law = master.law_at(0.7, [2, 3])
    assert law.sum() == pytest.approx(1.0)
    assert np.all(law >= 0)
    assert np.allclose(master.law_at(0.0, [2, 3]), np.eye(master.size)[master.index_of([2, 3])])


@pytest.mark.slow
def test_simulation_matches_master_equation():
    """测试模拟的 E[m(η_T)] 与主方程的精确值一致"""
    spec = two_allelic_default()
    N, T = 4, 0.8
    master = master_generator(spec, N)
    exact = master.law_at(T, [2, 2]) @ master.empirical()
    process = MoranProcess(spec, N)
    finals = np.array(
        [process.run(np.array([2, 2]), stream(0, run_id_of("master-test"), r), T, [T]).weights[-1] for r in range(4000)]
    )
    stderr = finals.std(axis=0, ddof=1) / np.sqrt(len(finals))
    assert np.all(np.abs(finals.mean(axis=0) - exact) <= 4.0 * stderr + 1e-12)
