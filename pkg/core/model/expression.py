"""选择核表达式的小型语法

表达式只允许下列成分，通过 AST 白名单求值，不使用 eval：

- 数字常量、具名标量参数；
- x, y：状态值（1 起始），在矩阵场中按行/列广播；
- mu[x], mu[y]：当前测度在该状态的权重；向量参数同样可以用 [x]/[y] 或整数常量下标；
- 运算符 + - * / ** 以及一元负号；
- 函数 min, max, pos, neg, abs, exp, delta(a, b), avg(v)（即 μ(v)）。

引用 mu 或 avg 的表达式视为依赖 μ。
"""
import ast
from typing import Any, Dict, Mapping, Optional

import numpy as np

from core.errors import ConfigError


class ExpressionError(ConfigError):
    """表达式语法或求值错误"""


_BINARY = {
    ast.Add: np.add,
    ast.Sub: np.subtract,
    ast.Mult: np.multiply,
    ast.Div: np.divide,
    ast.Pow: np.power,
}

_UNARY = {
    ast.USub: np.negative,
    ast.UAdd: np.positive,
}


def _pos(a):
    return np.maximum(a, 0.0)


def _neg(a):
    return np.maximum(-np.asarray(a, dtype=float), 0.0)


def _delta(a, b):
    return (np.asarray(a) == np.asarray(b)).astype(float)


def _reduce(op):
    def apply(*args):
        if len(args) < 2:
            raise ExpressionError(f"{op.__name__} needs at least two arguments")
        result = args[0]
        for arg in args[1:]:
            result = op(result, arg)
        return result

    return apply


_FUNCTIONS = {
    "min": _reduce(np.minimum),
    "max": _reduce(np.maximum),
    "pos": _pos,
    "neg": _neg,
    "abs": np.abs,
    "exp": np.exp,
    "delta": _delta,
}

_AXES = ("x", "y")


class Expression:
    """编译后的表达式，可 pickle（按源文本重建）"""

    def __init__(self, text: str, params: Optional[Mapping[str, Any]] = None):
        self.text = str(text)
        self.params: Dict[str, Any] = {}
        for name, value in (params or {}).items():
            array = np.asarray(value, dtype=float)
            self.params[name] = float(array) if array.ndim == 0 else array
        try:
            tree = ast.parse(self.text, mode="eval")
        except SyntaxError as exc:
            raise ExpressionError(f"cannot parse expression '{self.text}': {exc.msg}") from exc
        self._tree = tree
        self.names = set()
        self.mu_dependent = False
        self._check(tree.body)

    def __reduce__(self):
        return (Expression, (self.text, self.params))

    def __repr__(self) -> str:
        return f"Expression({self.text!r})"

    @property
    def uses_y(self) -> bool:
        return "y" in self.names

    def _check(self, node: ast.AST) -> None:
        if isinstance(node, ast.Constant):
            if not isinstance(node.value, (int, float)) or isinstance(node.value, bool):
                raise ExpressionError(f"unsupported constant {node.value!r} in '{self.text}'")
        elif isinstance(node, ast.Name):
            if node.id == "mu":
                raise ExpressionError(f"'mu' must be indexed as mu[x] or mu[y] in '{self.text}'")
            if node.id not in _AXES and node.id not in self.params:
                raise ExpressionError(f"unknown identifier '{node.id}' in '{self.text}'")
            if node.id in self.params and np.ndim(self.params[node.id]) != 0:
                raise ExpressionError(f"vector parameter '{node.id}' must be indexed in '{self.text}'")
            self.names.add(node.id)
        elif isinstance(node, ast.Subscript):
            if not isinstance(node.value, ast.Name):
                raise ExpressionError(f"only names can be indexed in '{self.text}'")
            base = node.value.id
            if base == "mu":
                self.mu_dependent = True
            elif base not in self.params or np.ndim(self.params[base]) != 1:
                raise ExpressionError(f"'{base}' is not an indexable vector in '{self.text}'")
            index = node.slice
            if isinstance(index, ast.Name) and index.id in _AXES:
                self.names.add(index.id)
            elif isinstance(index, ast.Constant) and isinstance(index.value, int):
                pass
            else:
                raise ExpressionError(f"index of '{base}' must be x, y or an integer in '{self.text}'")
        elif isinstance(node, ast.BinOp):
            if type(node.op) not in _BINARY:
                raise ExpressionError(f"operator {type(node.op).__name__} not allowed in '{self.text}'")
            self._check(node.left)
            self._check(node.right)
        elif isinstance(node, ast.UnaryOp):
            if type(node.op) not in _UNARY:
                raise ExpressionError(f"operator {type(node.op).__name__} not allowed in '{self.text}'")
            self._check(node.operand)
        elif isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.keywords:
                raise ExpressionError(f"unsupported call in '{self.text}'")
            name = node.func.id
            if name == "avg":
                if len(node.args) != 1:
                    raise ExpressionError(f"avg takes one argument in '{self.text}'")
                self.mu_dependent = True
            elif name not in _FUNCTIONS:
                raise ExpressionError(f"unknown function '{name}' in '{self.text}'")
            for arg in node.args:
                self._check(arg)
        else:
            raise ExpressionError(f"unsupported syntax {type(node).__name__} in '{self.text}'")

    def evaluate(self, size: int, mu: Optional[np.ndarray] = None, matrix: bool = False) -> np.ndarray:
        """在截断空间上求值

        Args:
            size: 状态数 K
            mu: 当前测度权重（依赖 μ 的表达式必需）
            matrix: True 返回 K×K 矩阵（x 为行，y 为列），否则返回长度 K 的向量

        Returns:
            广播到目标形状的数组
        """
        if self.mu_dependent and mu is None:
            raise ExpressionError(f"expression '{self.text}' depends on mu but no measure was given")
        if not matrix and self.uses_y:
            raise ExpressionError(f"vector expression '{self.text}' cannot use y")
        states = np.arange(1, size + 1, dtype=float)
        index = np.arange(size)
        if matrix:
            env = {"x": (states[:, None], index[:, None]), "y": (states[None, :], index[None, :])}
            shape = (size, size)
        else:
            env = {"x": (states, index)}
            shape = (size,)
        context = {"size": size, "mu": mu, "env": env}
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            value = self._eval(self._tree.body, context)
        return np.array(np.broadcast_to(np.asarray(value, dtype=float), shape))

    def _eval(self, node: ast.AST, context: Dict[str, Any]):
        if isinstance(node, ast.Constant):
            return float(node.value)
        if isinstance(node, ast.Name):
            if node.id in _AXES:
                return self._axis(node.id, context)[0]
            return self.params[node.id]
        if isinstance(node, ast.Subscript):
            base = node.value.id
            vector = context["mu"] if base == "mu" else self.params[base]
            index = node.slice
            if isinstance(index, ast.Constant):
                position = int(index.value) - 1
                if not 0 <= position < len(vector):
                    raise ExpressionError(f"index {index.value} out of range in '{self.text}'")
                return float(vector[position])
            positions = self._axis(index.id, context)[1]
            return np.asarray(vector, dtype=float)[positions]
        if isinstance(node, ast.BinOp):
            return _BINARY[type(node.op)](self._eval(node.left, context), self._eval(node.right, context))
        if isinstance(node, ast.UnaryOp):
            return _UNARY[type(node.op)](self._eval(node.operand, context))
        if isinstance(node, ast.Call):
            name = node.func.id
            if name == "avg":
                return self._average(node.args[0], context)
            return _FUNCTIONS[name](*(self._eval(arg, context) for arg in node.args))
        raise ExpressionError(f"unsupported syntax in '{self.text}'")

    def _axis(self, name: str, context: Dict[str, Any]):
        if name not in context["env"]:
            raise ExpressionError(f"'{name}' is not available here in '{self.text}'")
        return context["env"][name]

    def _average(self, node: ast.AST, context: Dict[str, Any]) -> float:
        # avg(v) = Σ_z μ(z) v(z)，内部只在 x 轴上求值
        size = context["size"]
        inner = {
            "size": size,
            "mu": context["mu"],
            "env": {"x": (np.arange(1, size + 1, dtype=float), np.arange(size))},
        }
        values = np.broadcast_to(np.asarray(self._eval(node, inner), dtype=float), (size,))
        return float(np.asarray(context["mu"], dtype=float) @ values)


def compile_expression(text: str, params: Optional[Mapping[str, Any]] = None) -> Expression:
    return Expression(text, params)
