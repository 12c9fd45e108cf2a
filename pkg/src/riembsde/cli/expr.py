"""A small arithmetic grammar for user drifts.

One expression per component of f(b, x, z). Allowed: numbers, ``pi``,
the entries ``b1 .. bd``, ``x1 .. xn``, ``z11 .. znd`` (1-based), the
operators + - * / and ``**`` with a numeric exponent, and the functions
sin, cos, exp and norm. ``norm`` takes one of the whole vectors ``b``,
``x`` or ``z`` (Frobenius for z). Everything is evaluated elementwise on
numpy arrays, so drifts built here are vectorized over leading axes.
"""

from __future__ import annotations

import ast
import re

import numpy as np

FUNCS = {"sin": np.sin, "cos": np.cos, "exp": np.exp}
BINOPS = {ast.Add: np.add, ast.Sub: np.subtract, ast.Mult: np.multiply, ast.Div: np.divide}
_B = re.compile(r"^b([1-9][0-9]*)$")
_X = re.compile(r"^x([1-9][0-9]*)$")
_Z = re.compile(r"^z([1-9])([1-9])$")


class ExpressionError(ValueError):
    pass


def _fail(node, msg):
    col = getattr(node, "col_offset", None)
    where = f" at column {col + 1}" if col is not None else ""
    raise ExpressionError(f"{msg}{where}")


def _check(node, d, n, d_w):
    """Validate the tree against the whitelist and the dimensions."""
    if isinstance(node, ast.Expression):
        return _check(node.body, d, n, d_w)
    if isinstance(node, ast.Constant):
        if isinstance(node.value, bool) or not isinstance(node.value, (int, float)):
            _fail(node, "only numeric constants are allowed")
        return
    if isinstance(node, ast.Name):
        name = node.id
        if name == "pi":
            return
        m = _B.match(name)
        if m and int(m.group(1)) <= d:
            return
        m = _X.match(name)
        if m and int(m.group(1)) <= n:
            return
        m = _Z.match(name)
        if m and int(m.group(1)) <= n and int(m.group(2)) <= d_w:
            return
        _fail(node, f"unknown or out-of-range variable '{name}'")
    if isinstance(node, ast.UnaryOp):
        if not isinstance(node.op, (ast.UAdd, ast.USub)):
            _fail(node, "only unary + and - are allowed")
        return _check(node.operand, d, n, d_w)
    if isinstance(node, ast.BinOp):
        if isinstance(node.op, ast.Pow):
            e = node.right
            if isinstance(e, ast.UnaryOp) and isinstance(e.op, ast.USub):
                e = e.operand
            if not (isinstance(e, ast.Constant) and isinstance(e.value, (int, float))):
                _fail(node, "exponents must be numeric constants")
        elif type(node.op) not in BINOPS:
            _fail(node, "operator not allowed")
        _check(node.left, d, n, d_w)
        _check(node.right, d, n, d_w)
        return
    if isinstance(node, ast.Call):
        if not isinstance(node.func, ast.Name) or node.keywords or len(node.args) != 1:
            _fail(node, "calls take exactly one positional argument")
        fname = node.func.id
        if fname == "norm":
            a = node.args[0]
            if not (isinstance(a, ast.Name) and a.id in ("b", "x", "z")):
                _fail(node, "norm takes one of b, x, z")
            return
        if fname not in FUNCS:
            _fail(node, f"unknown function '{fname}'")
        return _check(node.args[0], d, n, d_w)
    _fail(node, f"syntax element {type(node).__name__} not allowed")


def _eval(node, env):
    if isinstance(node, ast.Expression):
        return _eval(node.body, env)
    if isinstance(node, ast.Constant):
        return float(node.value)
    if isinstance(node, ast.Name):
        return env[node.id]
    if isinstance(node, ast.UnaryOp):
        v = _eval(node.operand, env)
        return -v if isinstance(node.op, ast.USub) else v
    if isinstance(node, ast.BinOp):
        if isinstance(node.op, ast.Pow):
            return np.power(_eval(node.left, env), _eval(node.right, env))
        return BINOPS[type(node.op)](_eval(node.left, env), _eval(node.right, env))
    fname = node.func.id
    if fname == "norm":
        return env["norm_" + node.args[0].id]
    return FUNCS[fname](_eval(node.args[0], env))


def parse(text: str, d: int, n: int, d_w: int) -> ast.Expression:
    try:
        tree = ast.parse(text.strip(), mode="eval")
    except SyntaxError as exc:
        raise ExpressionError(f"cannot parse '{text}': {exc.msg} at column {exc.offset}") from None
    _check(tree, d, n, d_w)
    return tree


def _env(b, x, z):
    env = {"pi": np.pi, "norm_b": np.linalg.norm(b, axis=-1), "norm_x": np.linalg.norm(x, axis=-1),
           "norm_z": np.sqrt(np.sum(z * z, axis=(-2, -1)))}
    for i in range(b.shape[-1]):
        env[f"b{i + 1}"] = b[..., i]
    for i in range(x.shape[-1]):
        env[f"x{i + 1}"] = x[..., i]
        for j in range(z.shape[-1]):
            env[f"z{i + 1}{j + 1}"] = z[..., i, j]
    return env


def compile_drift(components, d: int, n: int, d_w: int):
    """Return ``fn(b, x, z) -> (..., n)`` from ``n`` component expressions, and
    whether any component reads z."""
    if len(components) != n:
        raise ExpressionError(f"expected {n} component expressions, got {len(components)}")
    trees = [parse(c, d, n, d_w) for c in components]
    uses_z = any(isinstance(node, ast.Name) and (node.id == "z" or _Z.match(node.id))
                 for t in trees for node in ast.walk(t))

    def fn(b, x, z):
        env = _env(b, x, z)
        shape = np.broadcast_shapes(b.shape[:-1], x.shape[:-1], z.shape[:-2])
        return np.stack([np.broadcast_to(np.asarray(_eval(t, env), float), shape) for t in trees], -1)

    return fn, uses_z
