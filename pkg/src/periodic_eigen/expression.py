"""Coefficient expressions: tokenizer, recursive-descent parser, evaluator,
printer and symbolic differentiation.

Grammar (highest precedence first)::

    atom    := NUMBER | NAME | NAME '(' expr ')' | '(' expr ')'
    power   := atom ('^' exponent)*          # left-associative
    unary   := '-' unary | '+' unary | power
    term    := unary (('*' | '/') unary)*
    expr    := term (('+' | '-') term)*

An exponent may carry its own unary sign, so ``2^-1`` parses as ``2^(-1)``.
Variables are ``x``, ``y``, ``t``; constants are ``pi`` and ``e``.
Evaluation is vectorised: variables may be bound to numpy arrays.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Mapping, Union

import numpy as np

from .errors import ExpressionDomainError, ExpressionSyntaxError, NotDifferentiable

VARIABLES = ("x", "y", "t")
CONSTANTS = {"pi": math.pi, "e": math.e}
FUNCTIONS = ("sin", "cos", "tan", "exp", "log", "sqrt", "abs")

ArrayLike = Union[float, np.ndarray]


class Expression:
    """Base class of the expression AST. Nodes are immutable and hashable."""

    def evaluate(self, env: Mapping[str, ArrayLike]) -> ArrayLike:
        raise NotImplementedError

    def variables(self) -> frozenset:
        raise NotImplementedError

    def derivative(self, var: str) -> "Expression":
        raise NotImplementedError

    def substitute(self, var: str, repl: "Expression") -> "Expression":
        raise NotImplementedError

    def __call__(self, **env):
        return evaluate(self, env)

    @property
    def is_constant(self) -> bool:
        return not self.variables()


@dataclass(frozen=True)
class Num(Expression):
    value: float

    def evaluate(self, env):
        return self.value

    def variables(self):
        return frozenset()

    def derivative(self, var):
        return ZERO

    def substitute(self, var, repl):
        return self

    def __str__(self):
        text = repr(float(self.value))
        return f"({text})" if self.value < 0 or text.startswith("-") else text


@dataclass(frozen=True)
class Const(Expression):
    name: str

    def evaluate(self, env):
        return CONSTANTS[self.name]

    def variables(self):
        return frozenset()

    def derivative(self, var):
        return ZERO

    def substitute(self, var, repl):
        return self

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class Var(Expression):
    name: str

    def evaluate(self, env):
        try:
            return env[self.name]
        except KeyError:
            raise ExpressionDomainError(f"variable '{self.name}' not supplied", str(self)) from None

    def variables(self):
        return frozenset((self.name,))

    def derivative(self, var):
        return ONE if var == self.name else ZERO

    def substitute(self, var, repl):
        return repl if var == self.name else self

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class Neg(Expression):
    arg: Expression

    def evaluate(self, env):
        return -self.arg.evaluate(env)

    def variables(self):
        return self.arg.variables()

    def derivative(self, var):
        return neg(self.arg.derivative(var))

    def substitute(self, var, repl):
        return Neg(self.arg.substitute(var, repl))

    def __str__(self):
        return f"(-{self.arg})"


def _bad(mask) -> int | None:
    """Flat index of the first offending entry, or None when all are fine."""
    mask = np.asarray(mask)
    if not mask.any():
        return None
    return int(np.flatnonzero(mask)[0]) if mask.ndim else 0


@dataclass(frozen=True)
class BinOp(Expression):
    op: str
    left: Expression
    right: Expression

    def evaluate(self, env):
        a = self.left.evaluate(env)
        b = self.right.evaluate(env)
        if self.op == "+":
            return a + b
        if self.op == "-":
            return a - b
        if self.op == "*":
            return a * b
        if self.op == "/":
            idx = _bad(np.asarray(b) == 0)
            if idx is not None:
                raise ExpressionDomainError("division by zero", str(self), idx)
            return a / b
        # '^'
        a_arr, b_arr = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
        idx = _bad((a_arr == 0) & (b_arr < 0))
        if idx is not None:
            raise ExpressionDomainError("zero raised to a negative power", str(self), idx)
        idx = _bad((a_arr < 0) & (b_arr != np.round(b_arr)))
        if idx is not None:
            raise ExpressionDomainError("negative base with non-integer exponent", str(self), idx)
        with np.errstate(over="ignore", invalid="ignore"):
            out = np.power(a_arr, b_arr)
        idx = _bad(~np.isfinite(out))
        if idx is not None:
            raise ExpressionDomainError("overflow", str(self), idx)
        return out if out.ndim else float(out)

    def variables(self):
        return self.left.variables() | self.right.variables()

    def derivative(self, var):
        u, v = self.left, self.right
        du, dv = u.derivative(var), v.derivative(var)
        if self.op == "+":
            return add(du, dv)
        if self.op == "-":
            return sub(du, dv)
        if self.op == "*":
            return add(mul(du, v), mul(u, dv))
        if self.op == "/":
            return div(sub(mul(du, v), mul(u, dv)), power(v, Num(2.0)))
        if var not in v.variables():
            # d(u^c) = c u^(c-1) u'
            return mul(mul(v, power(u, sub(v, ONE))), du)
        # d(u^v) = u^v (v' log u + v u'/u)
        return mul(self, add(mul(dv, call("log", u)), div(mul(v, du), u)))

    def substitute(self, var, repl):
        return BinOp(self.op, self.left.substitute(var, repl), self.right.substitute(var, repl))

    def __str__(self):
        return f"({self.left} {self.op} {self.right})"


_UNARY_NUMPY = {
    "sin": np.sin,
    "cos": np.cos,
    "tan": np.tan,
    "exp": np.exp,
    "log": np.log,
    "sqrt": np.sqrt,
    "abs": np.abs,
}


@dataclass(frozen=True)
class Call(Expression):
    fn: str
    arg: Expression

    def evaluate(self, env):
        a = self.arg.evaluate(env)
        if self.fn == "log":
            idx = _bad(np.asarray(a) <= 0)
            if idx is not None:
                raise ExpressionDomainError("log of non-positive value", str(self), idx)
        elif self.fn == "sqrt":
            idx = _bad(np.asarray(a) < 0)
            if idx is not None:
                raise ExpressionDomainError("sqrt of negative value", str(self), idx)
        with np.errstate(over="ignore", invalid="ignore"):
            out = _UNARY_NUMPY[self.fn](a)
        idx = _bad(~np.isfinite(out))
        if idx is not None:
            raise ExpressionDomainError("non-finite result", str(self), idx)
        return out if np.ndim(out) else float(out)

    def variables(self):
        return self.arg.variables()

    def derivative(self, var):
        u = self.arg
        du = u.derivative(var)
        if du == ZERO:
            return ZERO
        if self.fn == "sin":
            return mul(call("cos", u), du)
        if self.fn == "cos":
            return neg(mul(call("sin", u), du))
        if self.fn == "tan":
            return div(du, power(call("cos", u), Num(2.0)))
        if self.fn == "exp":
            return mul(self, du)
        if self.fn == "log":
            return div(du, u)
        if self.fn == "sqrt":
            return div(du, mul(Num(2.0), self))
        raise NotDifferentiable(f"{self.fn} is not differentiable symbolically")

    def substitute(self, var, repl):
        return Call(self.fn, self.arg.substitute(var, repl))

    def __str__(self):
        return f"{self.fn}({self.arg})"


ZERO = Num(0.0)
ONE = Num(1.0)


# -- constructors with light constant folding ------------------------------


def _num(e: Expression) -> float | None:
    return e.value if isinstance(e, Num) else None


def neg(a: Expression) -> Expression:
    if isinstance(a, Num):
        return Num(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def add(a: Expression, b: Expression) -> Expression:
    if a == ZERO:
        return b
    if b == ZERO:
        return a
    if _num(a) is not None and _num(b) is not None:
        return Num(a.value + b.value)
    return BinOp("+", a, b)


def sub(a: Expression, b: Expression) -> Expression:
    if b == ZERO:
        return a
    if a == ZERO:
        return neg(b)
    if _num(a) is not None and _num(b) is not None:
        return Num(a.value - b.value)
    return BinOp("-", a, b)


def mul(a: Expression, b: Expression) -> Expression:
    if a == ZERO or b == ZERO:
        return ZERO
    if a == ONE:
        return b
    if b == ONE:
        return a
    if _num(a) is not None and _num(b) is not None:
        return Num(a.value * b.value)
    return BinOp("*", a, b)


def div(a: Expression, b: Expression) -> Expression:
    if a == ZERO:
        return ZERO
    if b == ONE:
        return a
    return BinOp("/", a, b)


def power(a: Expression, b: Expression) -> Expression:
    if b == ONE:
        return a
    if b == ZERO:
        return ONE
    return BinOp("^", a, b)


def call(fn: str, a: Expression) -> Expression:
    return Call(fn, a)


# -- tokenizer and parser ----------------------------------------------------

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][-+]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),]))"
)


def _byte_offset(src: str, char_pos: int) -> int:
    return len(src[:char_pos].encode("utf-8"))


def _tokenize(src: str):
    tokens = []
    pos = 0
    while pos < len(src):
        if src[pos:].strip() == "":
            break
        m = _TOKEN.match(src, pos)
        if m is None or m.end() == pos:
            start = pos + (len(src[pos:]) - len(src[pos:].lstrip()))
            raise ExpressionSyntaxError(f"unexpected character {src[start]!r}", _byte_offset(src, start))
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), _byte_offset(src, start)))
        pos = m.end()
    tokens.append(("end", "", _byte_offset(src, len(src))))
    return tokens


class _Parser:
    def __init__(self, src: str):
        self.tokens = _tokenize(src)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value):
        kind, text, off = self.take()
        if text != value or kind == "end":
            found = "end of input" if kind == "end" else repr(text)
            raise ExpressionSyntaxError(f"expected {value!r}, found {found}", off)

    def parse(self) -> Expression:
        node = self.expr()
        kind, text, off = self.peek()
        if kind != "end":
            raise ExpressionSyntaxError(f"unexpected token {text!r}", off)
        return node

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self):
        kind, text, _ = self.peek()
        if kind == "op" and text == "-":
            self.take()
            return Neg(self.unary())
        if kind == "op" and text == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self):
        node = self.atom()
        while self.peek()[0] == "op" and self.peek()[1] == "^":
            self.take()
            node = BinOp("^", node, self.exponent())
        return node

    def exponent(self):
        kind, text, _ = self.peek()
        if kind == "op" and text == "-":
            self.take()
            return Neg(self.exponent())
        return self.atom()

    def atom(self):
        kind, text, off = self.take()
        if kind == "num":
            return Num(float(text))
        if kind == "name":
            if self.peek()[1] == "(" and self.peek()[0] == "op":
                if text not in FUNCTIONS:
                    raise ExpressionSyntaxError(f"unknown function {text!r}", off)
                self.take()
                args = [self.expr()]
                while self.peek()[1] == ",":
                    self.take()
                    args.append(self.expr())
                self.expect(")")
                if len(args) != 1:
                    raise ExpressionSyntaxError(f"{text} takes 1 argument, got {len(args)}", off)
                return Call(text, args[0])
            if text in FUNCTIONS:
                raise ExpressionSyntaxError(f"function {text!r} requires an argument list", off)
            if text in CONSTANTS:
                return Const(text)
            if text in VARIABLES:
                return Var(text)
            raise ExpressionSyntaxError(f"unknown identifier {text!r}", off)
        if kind == "op" and text == "(":
            node = self.expr()
            self.expect(")")
            return node
        found = "end of input" if kind == "end" else repr(text)
        raise ExpressionSyntaxError(f"unexpected {found}", off)


def parse_expression(src: str) -> Expression:
    """Parse ``src`` into an expression tree.

    Raises
    ------
    ExpressionSyntaxError
        With the byte offset of the offending token; unknown identifiers and
        wrong argument counts are reported the same way.
    """
    if not isinstance(src, str) or not src.strip():
        raise ExpressionSyntaxError("empty expression", 0)
    return _Parser(src).parse()


def eval_expression(expr: Expression, point: Mapping[str, ArrayLike]) -> ArrayLike:
    """Evaluate ``expr`` at ``point`` (a mapping of variable names to values).

    Scalars in give a float out; arrays broadcast.
    """
    return evaluate(expr, point)


def evaluate(expr: Expression, env: Mapping[str, ArrayLike]) -> ArrayLike:
    missing = expr.variables() - set(env)
    if missing:
        raise ExpressionDomainError(f"variables not supplied: {sorted(missing)}", str(expr))
    env = {k: (np.asarray(v, dtype=float) if np.ndim(v) else float(v)) for k, v in env.items()}
    out = expr.evaluate(env)
    if np.ndim(out) == 0:
        out = float(out)
        if not math.isfinite(out):
            raise ExpressionDomainError("non-finite result", str(expr))
    return out


def as_expression(value) -> Expression:
    """Coerce a string or number to an expression (expressions pass through)."""
    if isinstance(value, Expression):
        return value
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return Num(float(value))
    return parse_expression(value)


def evaluate_on(expr: Expression, shape, **env) -> np.ndarray:
    """Evaluate and broadcast the result to ``shape`` (constants included)."""
    return np.broadcast_to(np.asarray(evaluate(expr, env), dtype=float), shape).copy()
