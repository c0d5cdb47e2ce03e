"""Tiny expression language for data formulas in configuration files.

Formulas are ordinary arithmetic over the names below, parsed with :mod:`ast`
and evaluated by walking a whitelisted tree (nothing is ever passed to
``eval``).

Names:
    ``x`` (1D only), ``x1``, ``x2``: node coordinates.
    ``r`` or ``|x|``: Euclidean norm of the node.
    ``delta`` or ``δ``: distance to the boundary.
    ``t``: time.
    ``pi``, ``e``: constants.

Functions: ``exp log sqrt sin cos tan tanh abs min max``.  Operators: ``+ - *
/ **`` (``^`` is accepted as a power).
"""

from __future__ import annotations

import ast
import operator
import re

import numpy as np

from .errors import ConfigInvalid

_BINOPS = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
    ast.Pow: operator.pow,
}
_UNARY = {ast.UAdd: operator.pos, ast.USub: operator.neg}
_FUNCS = {
    "exp": np.exp,
    "log": np.log,
    "sqrt": np.sqrt,
    "sin": np.sin,
    "cos": np.cos,
    "tan": np.tan,
    "tanh": np.tanh,
    "abs": np.abs,
    "min": np.minimum,
    "max": np.maximum,
}
_CONSTANTS = {"pi": np.pi, "e": np.e}
_VARIABLES = {"x", "x1", "x2", "r", "delta", "t"}


def _normalize(source: str) -> str:
    text = source.replace("δ", "delta").replace("^", "**")
    return re.sub(r"\|\s*x\s*\|", "r", text)


class Expression:
    """A parsed formula, callable as ``f(nodes, delta=..., t=...)``.

    Args:
        source: formula text.
        key: configuration key, used in error messages.

    Raises:
        ConfigInvalid: on syntax errors or disallowed constructs.
    """

    uses_grid = True

    def __init__(self, source: str, key: str = "formula"):
        self.source = source
        self.key = key
        try:
            tree = ast.parse(_normalize(source), mode="eval")
        except SyntaxError as exc:
            raise ConfigInvalid(key, f"cannot parse formula {source!r}: {exc.msg}") from None
        self._names: set[str] = set()
        self._check(tree.body)
        self._tree = tree.body

    def __repr__(self) -> str:
        return f"Expression({self.source!r})"

    @property
    def depends_on_time(self) -> bool:
        return "t" in self._names

    def _check(self, node: ast.AST) -> None:
        if isinstance(node, ast.Constant):
            if not isinstance(node.value, (int, float)) or isinstance(node.value, bool):
                raise ConfigInvalid(self.key, f"only numeric literals are allowed in {self.source!r}")
        elif isinstance(node, ast.Name):
            if node.id not in _VARIABLES and node.id not in _CONSTANTS:
                raise ConfigInvalid(self.key, f"unknown name {node.id!r} in {self.source!r}")
            self._names.add(node.id)
        elif isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            self._check(node.left)
            self._check(node.right)
        elif isinstance(node, ast.UnaryOp) and type(node.op) in _UNARY:
            self._check(node.operand)
        elif isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCS:
                raise ConfigInvalid(self.key, f"unknown function in {self.source!r}")
            if node.keywords or not node.args:
                raise ConfigInvalid(self.key, f"bad call of {node.func.id} in {self.source!r}")
            for arg in node.args:
                self._check(arg)
        else:
            raise ConfigInvalid(self.key, f"construct {type(node).__name__} not allowed in {self.source!r}")

    def _env(self, nodes: np.ndarray, delta: np.ndarray | None, t: float) -> dict:
        nodes = np.atleast_2d(np.asarray(nodes, dtype=float))
        N = nodes.shape[1]
        if "x" in self._names and N != 1:
            raise ConfigInvalid(self.key, "bare x is only defined in 1D; use x1, x2 or |x|")
        if "x2" in self._names and N < 2:
            raise ConfigInvalid(self.key, "x2 used on a 1D grid")
        if "delta" in self._names and delta is None:
            raise ConfigInvalid(self.key, "delta requested but no distance supplied")
        env = dict(_CONSTANTS)
        env.update(x=nodes[:, 0], x1=nodes[:, 0], r=np.linalg.norm(nodes, axis=1), t=float(t))
        if N >= 2:
            env["x2"] = nodes[:, 1]
        if delta is not None:
            env["delta"] = np.asarray(delta, dtype=float)
        return env

    def _eval(self, node: ast.AST, env: dict):
        if isinstance(node, ast.Constant):
            return float(node.value)
        if isinstance(node, ast.Name):
            return env[node.id]
        if isinstance(node, ast.BinOp):
            return _BINOPS[type(node.op)](self._eval(node.left, env), self._eval(node.right, env))
        if isinstance(node, ast.UnaryOp):
            return _UNARY[type(node.op)](self._eval(node.operand, env))
        fn = _FUNCS[node.func.id]
        args = [self._eval(a, env) for a in node.args]
        if fn in (np.minimum, np.maximum):
            out = args[0]
            for a in args[1:]:
                out = fn(out, a)
            return out
        if len(args) != 1:
            raise ConfigInvalid(self.key, f"{node.func.id} takes one argument")
        return fn(args[0])

    def __call__(self, nodes: np.ndarray, delta: np.ndarray | None = None, t: float = 0.0) -> np.ndarray:
        env = self._env(nodes, delta, t)
        with np.errstate(all="ignore"):
            out = self._eval(self._tree, env)
        return np.broadcast_to(np.asarray(out, dtype=float), (env["x1"].shape[0],)).copy()


def parse_formula(value, key: str = "formula") -> float | Expression:
    """Constant or :class:`Expression` from a configuration value."""
    if isinstance(value, bool):
        raise ConfigInvalid(key, "expected a number or a formula string")
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        return Expression(value, key)
    raise ConfigInvalid(key, "expected a number or a formula string")
