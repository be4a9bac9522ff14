"""Small expression language for output channels and time-varying bounds.

Expressions are strings such as ``"c1*(x1 - o1)^2 + x2"`` built from the
state components ``x1 .. xn`` (of the first state block), the time ``t``,
numeric literals, ``pi``, the functions ``sin``, ``cos`` and ``exp`` and named
parameters. A parameter is itself an expression of ``t`` only. Parameters
are substituted before differentiation so every derivative is exact.
"""
from __future__ import annotations

import re
from typing import Dict, Mapping, Optional, Union

import numpy as np
import sympy as sp
from sympy.parsing.sympy_parser import (convert_xor, parse_expr,
                                        standard_transformations)

from .bounds import TimeFunction
from .constraints import OutputChannel

_FUNCS = {"sin": sp.sin, "cos": sp.cos, "exp": sp.exp}
_TRANSFORMS = standard_transformations + (convert_xor,)
_NAME = re.compile(r"[A-Za-z_][A-Za-z_0-9]*")
_ALLOWED_CHARS = re.compile(r"^[\sA-Za-z_0-9+\-*/^().,]*$")
T = sp.Symbol("t", real=True)

Expr = Union[str, int, float]


class ExpressionError(ValueError):
    """Raised for malformed or out-of-grammar expressions."""


def state_symbols(n: int):
    return [sp.Symbol(f"x{k + 1}", real=True) for k in range(n)]


def _parse(text: Expr, allowed: Mapping[str, sp.Basic], what: str) -> sp.Expr:
    if isinstance(text, bool):
        raise ExpressionError(f"{what}: expected an expression, got a boolean")
    if isinstance(text, (int, float)):
        return sp.Float(text) if isinstance(text, float) else sp.Integer(text)
    if not isinstance(text, str) or not text.strip():
        raise ExpressionError(f"{what}: expected a non-empty expression string")
    if not _ALLOWED_CHARS.match(text):
        raise ExpressionError(f"{what}: illegal character in {text!r}")
    for name in _NAME.findall(text):
        if name not in allowed and name not in _FUNCS and name != "pi":
            raise ExpressionError(f"{what}: unknown name {name!r} in {text!r}")
    local = dict(allowed)
    local.update(_FUNCS)
    local["pi"] = sp.pi
    try:
        expr = parse_expr(text, local_dict=local, global_dict={"Integer": sp.Integer,
                          "Float": sp.Float, "Rational": sp.Rational, "Symbol": sp.Symbol},
                          transformations=_TRANSFORMS, evaluate=True)
    except Exception as exc:  # sympy raises a variety of types
        raise ExpressionError(f"{what}: cannot parse {text!r}: {exc}") from None
    if not isinstance(expr, sp.Expr):
        raise ExpressionError(f"{what}: {text!r} is not a scalar expression")
    return expr


def parse_params(params: Optional[Mapping[str, Expr]]) -> Dict[str, sp.Expr]:
    """Parse named time-varying parameters, resolving references between them
    in declaration order."""
    out: Dict[str, sp.Expr] = {}
    for name, text in (params or {}).items():
        if not _NAME.fullmatch(name) or name in _FUNCS or name in ("t", "pi") \
                or re.fullmatch(r"x\d+", name):
            raise ExpressionError(f"params.{name}: reserved or invalid parameter name")
        allowed = {"t": T}
        allowed.update(out)
        out[name] = _parse(text, allowed, f"params.{name}")
    return out


def time_expr(text: Expr, params: Mapping[str, sp.Expr], what: str = "expression") -> sp.Expr:
    allowed = {"t": T}
    allowed.update(params)
    return _parse(text, allowed, what)


def channel_expr(text: Expr, n: int, params: Mapping[str, sp.Expr],
                 what: str = "channel") -> sp.Expr:
    allowed = {"t": T}
    allowed.update(params)
    allowed.update({s.name: s for s in state_symbols(n)})
    return _parse(text, allowed, what)


def compile_time_function(text: Expr, params: Optional[Mapping[str, sp.Expr]] = None,
                          what: str = "bound") -> TimeFunction:
    expr = time_expr(text, params or {}, what)
    d = sp.diff(expr, T)
    f = sp.lambdify([T], expr, modules="math")
    df = sp.lambdify([T], d, modules="math")
    return TimeFunction(lambda t: float(f(t)), lambda t: float(df(t)), label=str(text))


def compile_channel(name: str, text: Expr, n: int,
                    params: Optional[Mapping[str, sp.Expr]] = None) -> OutputChannel:
    """Build an :class:`OutputChannel` with symbolic derivatives.

    The value accepts ``x1`` of shape ``(n,)`` or a stack ``(n, N)``.
    """
    xs = state_symbols(n)
    expr = channel_expr(text, n, params or {}, f"channel {name}")
    grad = [sp.diff(expr, s) for s in xs]
    ht = sp.diff(expr, T)
    hess = [[sp.diff(g, s) for s in xs] for g in grad]
    args = [T] + xs

    f_math = sp.lambdify(args, expr, modules="math")
    f_np = sp.lambdify(args, expr, modules="numpy")
    jet_fn = sp.lambdify(args, (expr, grad, ht), modules="math", cse=True)
    g_fn = sp.lambdify(args, grad, modules="math", cse=True)
    ht_fn = sp.lambdify(args, ht, modules="math")
    H_fn = sp.lambdify(args, hess, modules="math", cse=True)

    def value(t, x1):
        x1 = np.asarray(x1, dtype=float)
        if x1.ndim == 1:
            return float(f_math(t, *x1.tolist()))
        v = f_np(t, *x1)
        return np.broadcast_to(np.asarray(v, dtype=float), x1.shape[1:]).copy()

    def gradient(t, x1):
        return np.array(g_fn(t, *np.asarray(x1, dtype=float).tolist()), dtype=float)

    def time_partial(t, x1):
        return float(ht_fn(t, *np.asarray(x1, dtype=float).tolist()))

    def hessian(t, x1):
        return np.array(H_fn(t, *np.asarray(x1, dtype=float).tolist()), dtype=float)

    def jet(t, x1):
        h, g, d = jet_fn(t, *np.asarray(x1, dtype=float).tolist())
        return float(h), np.array(g, dtype=float), float(d)

    return OutputChannel(name, value, gradient, time_partial, hessian, jet)


def compile_psi_jet(entries, n: int, params: Optional[Mapping[str, sp.Expr]] = None):
    """Fused evaluator of ``(psi, dpsi/dx1, dpsi/dt)`` for a whole constraint set.

    ``entries`` is a sequence of ``(kind, channel, lower, upper)`` with kind in
    ``funnel | lower | upper`` and ``None`` for absent bounds. Common
    subexpressions (shared parameters, trigonometric terms) are evaluated
    once per call, which makes this the fast path of the closed loop.
    """
    params = params or {}
    xs = state_symbols(n)
    psi = []
    for k, (kind, channel, lower, upper) in enumerate(entries):
        h = channel_expr(channel, n, params, f"constraints[{k}].channel")
        if kind in ("funnel", "lower"):
            psi.append(h - time_expr(lower, params, f"constraints[{k}].lower"))
        if kind in ("funnel", "upper"):
            psi.append(time_expr(upper, params, f"constraints[{k}].upper") - h)
    dpsi = [[sp.diff(e, s) for s in xs] for e in psi]
    dt = [sp.diff(e, T) for e in psi]
    fn = sp.lambdify([T] + xs, (psi, dpsi, dt), modules="math", cse=True)

    def jet(t, x1):
        p, J, d = fn(t, *x1)
        return np.array(p, dtype=float), np.array(J, dtype=float), np.array(d, dtype=float)

    return jet
