import pickle

import numpy as np
import pytest

from core.model.expression import Expression, ExpressionError
from core.model.kernels import MATRIX, ExpressionField, matrix_field, vector_field


def test_vector_expression_uses_one_based_states():
    """测试向量表达式的状态从 1 开始"""
    values = Expression("2 * x + 1").evaluate(4)
    assert np.allclose(values, [3.0, 5.0, 7.0, 9.0])


def test_matrix_expression_broadcasts_rows_and_columns():
    """测试矩阵表达式 x 为行、y 为列"""
    values = Expression("x - y").evaluate(3, matrix=True)
    assert values.shape == (3, 3)
    assert values[2, 0] == pytest.approx(2.0)
    assert np.allclose(np.diag(values), 0.0)


def test_functions_and_params():
    """测试内置函数与具名参数"""
    params = {"c": 2.0, "lam": [1.0, -1.0, 3.0]}
    assert np.allclose(Expression("pos(lam[x] - c)", params).evaluate(3), [0.0, 0.0, 1.0])
    assert np.allclose(Expression("neg(lam[x])", params).evaluate(3), [0.0, 1.0, 0.0])
    assert np.allclose(Expression("max(x, 2, c)", params).evaluate(3), [2.0, 2.0, 3.0])
    assert np.allclose(Expression("delta(x, y)").evaluate(2, matrix=True), np.eye(2))
    assert Expression("lam[3] + exp(0)", params).evaluate(2)[0] == pytest.approx(4.0)


def test_mu_dependence_detection():
    """测试引用 mu 或 avg 的表达式被识别为依赖 μ"""
    assert Expression("mu[x]").mu_dependent
    assert Expression("avg(x)").mu_dependent
    assert not Expression("x * 2").mu_dependent
    mu = np.array([0.2, 0.8])
    assert np.allclose(Expression("avg(x)").evaluate(2, mu), [1.8, 1.8])
    with pytest.raises(ExpressionError):
        Expression("mu[x]").evaluate(2)


@pytest.mark.parametrize(
    "text",
    ["__import__('os')", "x.real", "z + 1", "mu", "lambda: 1", "x if x else y", "open(x)", "1 +"],
)
def test_rejects_unsafe_or_unknown_syntax(text):
    """测试非白名单语法被拒绝"""
    with pytest.raises(ExpressionError):
        Expression(text)


def test_vector_expression_cannot_use_y():
    """测试向量场里不能出现 y"""
    with pytest.raises(ExpressionError):
        Expression("x + y").evaluate(3)


def test_expression_pickles_by_text():
    """测试表达式可以跨进程传递"""
    expr = Expression("c * x", {"c": 3.0})
    restored = pickle.loads(pickle.dumps(expr))
    assert np.allclose(restored.evaluate(2), [3.0, 6.0])


def test_fields_from_config_values():
    """测试配置值到场的转换"""
    assert np.allclose(vector_field(None, 3)(), np.zeros(3))
    assert np.allclose(vector_field(1.5, 3)(), np.full(3, 1.5))
    field = matrix_field("min(x, y)", 3)
    assert isinstance(field, ExpressionField)
    assert field.kind == MATRIX
    assert field()[2, 1] == pytest.approx(2.0)
