"""Built-in problems: two drift problems whose eigenvalue is not monotone in
tau, a separable case and a few standard test problems."""

from __future__ import annotations

import math

from .errors import ProblemError
from .expression import parse_expression
from .problem import ProblemSpec, build_problem

DEFAULT_A1 = "2+sin(2*pi*t)"


def _ex1(a: str | None) -> ProblemSpec:
    # drift along x with time-periodic scalar diffusion a(t); V is chosen so
    # that lambda(1) > 0 while the averaged problem has lambda = 0
    a_expr = parse_expression(a or DEFAULT_A1)
    if "x" in a_expr.variables():
        raise ProblemError("the ex1 diffusion a(t) must depend on t only")
    da = a_expr.derivative("t")
    V = f"-x*({da})/(2*({a_expr})^2)"
    return build_problem(dim=1, domain=(0.0, 1.0), b=0.0, period=1.0, A=str(a_expr), m="x", V=V, name="ex1")


_TABLE = {
    "ex2": dict(
        dim=1,
        domain=(0.0, 2 * math.pi),
        b=0.0,
        period=2 * math.pi,
        A="1",
        m="cos(x)*sin(t)",
        V="(1/2)*cos(x)*(sin(t)+cos(t))",
    ),
    "separable": dict(dim=1, domain=(0.0, math.pi), b=0.0, A="1", m="0", V="cos(x)+sin(2*pi*t)"),
    "dirichlet1d": dict(dim=1, domain=(0.0, math.pi), b=1.0, A="1", m="0", V="cos(x)*sin(2*pi*t)"),
    "neumann2d": dict(
        dim=2,
        domain=((0.0, math.pi), (0.0, math.pi)),
        b=0.0,
        A=[["1", "0"], ["0", "1"]],
        m="0",
        V="cos(x)*cos(y)*sin(2*pi*t)",
    ),
    "thm12": dict(dim=1, domain=(0.0, math.pi), b=0.0, A="1", m="cos(x)", V="cos(x)*sin(2*pi*t)"),
    "mzero": dict(dim=1, domain=(0.0, math.pi), b=0.0, A="1", m="0", V="cos(x)*sin(2*pi*t)"),
}

PRESETS = ("ex1",) + tuple(_TABLE)


def preset(name: str, a: str | None = None) -> ProblemSpec:
    """Return a built-in problem by name.

    ``a`` overrides the time-periodic diffusion of ``ex1``.
    """
    if name == "ex1":
        return _ex1(a)
    if a is not None:
        raise ProblemError("only the ex1 preset takes a diffusion override")
    try:
        kwargs = _TABLE[name]
    except KeyError:
        raise ProblemError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}") from None
    return build_problem(name=name, **kwargs)
