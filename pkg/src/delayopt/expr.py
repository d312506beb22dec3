"""Tiny expression language for scalar formulas in x, t and y.

The solver needs closed-form histories, targets and reaction terms together
with their exact partial derivatives (time derivative of the history enters
the delay gradient, the reaction derivative enters the adjoint).  A full CAS
would be overkill; this module supports +, -, *, division by a constant,
integer powers, sin/cos/tanh/exp and the named constants pi and sqrt2, with
symbolic differentiation that is exact for this fragment.

ASTs are immutable and hashable; evaluation broadcasts over numpy arrays.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Union

import numpy as np

__all__ = [
    "ExprError",
    "ParseError",
    "EvalError",
    "Num",
    "Var",
    "Bin",
    "Pow",
    "Neg",
    "Call",
    "parse",
    "evaluate",
    "differentiate",
    "to_source",
    "free_vars",
]


class ExprError(ValueError):
    pass


class ParseError(ExprError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at offset {position})")
        self.position = position


class EvalError(ExprError):
    pass


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str  # one of 'x', 't', 'y'


@dataclass(frozen=True)
class Bin:
    op: str  # '+', '-', '*', '/'
    lhs: "Expr"
    rhs: "Expr"


@dataclass(frozen=True)
class Pow:
    base: "Expr"
    exponent: int


@dataclass(frozen=True)
class Neg:
    operand: "Expr"


@dataclass(frozen=True)
class Call:
    fn: str  # 'sin', 'cos', 'tanh', 'exp'
    arg: "Expr"


Expr = Union[Num, Var, Bin, Pow, Neg, Call]

_VARIABLES = ("x", "t", "y")
_CONSTANTS = {"pi": math.pi, "sqrt2": math.sqrt(2.0)}
_FUNCTIONS = {"sin": np.sin, "cos": np.cos, "tanh": np.tanh, "exp": np.exp}


# ---------------------------------------------------------------------------
# parsing

class _Tokenizer:
    def __init__(self, source: str):
        self.source = source
        self.pos = 0
        self._advance()

    def _advance(self):
        src, n = self.source, len(self.source)
        i = self.pos
        while i < n and src[i].isspace():
            i += 1
        self.tok_pos = i
        if i >= n:
            self.kind, self.text = "end", ""
            self.pos = i
            return
        c = src[i]
        if c.isdigit() or (c == "." and i + 1 < n and src[i + 1].isdigit()):
            j = i
            while j < n and (src[j].isdigit() or src[j] == "."):
                j += 1
            if j < n and src[j] in "eE":
                k = j + 1
                if k < n and src[k] in "+-":
                    k += 1
                if k < n and src[k].isdigit():
                    j = k
                    while j < n and src[j].isdigit():
                        j += 1
            self.kind, self.text = "num", src[i:j]
            self.pos = j
        elif c.isalpha() or c == "_":
            j = i
            while j < n and (src[j].isalnum() or src[j] == "_"):
                j += 1
            self.kind, self.text = "ident", src[i:j]
            self.pos = j
        elif c in "+-*/^()":
            self.kind, self.text = c, c
            self.pos = i + 1
        else:
            raise ParseError(f"unexpected character {c!r}", i)

    def take(self):
        kind, text, pos = self.kind, self.text, self.tok_pos
        self._advance()
        return kind, text, pos

    def expect(self, kind: str):
        if self.kind != kind:
            raise ParseError(f"expected {kind!r}, found {self.text or 'end of input'!r}", self.tok_pos)
        return self.take()


def _try_const(node: Expr):
    """Return the float value of a constant subtree, or None."""
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Neg):
        v = _try_const(node.operand)
        return None if v is None else -v
    if isinstance(node, Bin):
        a, b = _try_const(node.lhs), _try_const(node.rhs)
        if a is None or b is None:
            return None
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        if node.op == "*":
            return a * b
        return a / b
    if isinstance(node, Pow):
        v = _try_const(node.base)
        return None if v is None else v ** node.exponent
    if isinstance(node, Call):
        v = _try_const(node.arg)
        return None if v is None else float(_FUNCTIONS[node.fn](v))
    return None


class _Parser:
    def __init__(self, source: str):
        self.tz = _Tokenizer(source)

    def parse(self) -> Expr:
        node = self.sum()
        if self.tz.kind != "end":
            raise ParseError(f"trailing input {self.tz.text!r}", self.tz.tok_pos)
        return node

    def sum(self) -> Expr:
        node = self.term()
        while self.tz.kind in ("+", "-"):
            op, _, _ = self.tz.take()
            node = Bin(op, node, self.term())
        return node

    def term(self) -> Expr:
        node = self.unary()
        while self.tz.kind in ("*", "/"):
            op, _, pos = self.tz.take()
            rhs = self.unary()
            if op == "/":
                c = _try_const(rhs)
                if c is None:
                    raise ParseError("division requires a constant divisor", pos)
                if c == 0.0:
                    raise ParseError("division by zero", pos)
                rhs = Num(c)
            node = Bin(op, node, rhs)
        return node

    def unary(self) -> Expr:
        if self.tz.kind == "-":
            self.tz.take()
            return Neg(self.unary())
        if self.tz.kind == "+":
            self.tz.take()
            return self.unary()
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.tz.kind != "^":
            return base
        _, _, pos = self.tz.take()
        exp_node = self.unary()
        c = _try_const(exp_node)
        if c is None:
            raise ParseError("exponent must be constant", pos)
        if c == int(c):
            return Pow(base, int(c))
        base_c = _try_const(base)
        if base_c is None:
            raise ParseError("non-integer power requires a constant base", pos)
        if base_c <= 0.0:
            raise ParseError("non-integer power of a non-positive base", pos)
        return Num(base_c ** c)

    def atom(self) -> Expr:
        kind, text, pos = self.tz.take()
        if kind == "num":
            try:
                return Num(float(text))
            except ValueError:
                raise ParseError(f"malformed number {text!r}", pos) from None
        if kind == "(":
            node = self.sum()
            self.tz.expect(")")
            return node
        if kind == "ident":
            if self.tz.kind == "(":
                if text not in _FUNCTIONS:
                    raise ParseError(f"unknown function {text!r}", pos)
                self.tz.take()
                arg = self.sum()
                self.tz.expect(")")
                return Call(text, arg)
            if text in _VARIABLES:
                return Var(text)
            if text in _CONSTANTS:
                return Num(_CONSTANTS[text])
            raise ParseError(f"unknown identifier {text!r}", pos)
        raise ParseError(f"expected a value, found {text or 'end of input'!r}", pos)


@lru_cache(maxsize=256)
def parse(source: str) -> Expr:
    """Parse an infix expression into an AST.

    Precedence is ^ > unary minus > * and / > + and -, with parentheses and
    function application f(expr).  Raises ParseError with the byte offset of
    the offending token.
    """
    return _Parser(source).parse()


# ---------------------------------------------------------------------------
# evaluation

def evaluate(node: Expr, x=None, t=None, y=None):
    """Evaluate an AST; free variables must be bound.

    Bindings may be floats or numpy arrays; broadcasting follows numpy rules.
    """
    bindings = {"x": x, "t": t, "y": y}

    def rec(n):
        if isinstance(n, Num):
            return n.value
        if isinstance(n, Var):
            v = bindings[n.name]
            if v is None:
                raise EvalError(f"unbound variable {n.name!r}")
            return v
        if isinstance(n, Neg):
            return -rec(n.operand)
        if isinstance(n, Bin):
            a, b = rec(n.lhs), rec(n.rhs)
            if n.op == "+":
                return a + b
            if n.op == "-":
                return a - b
            if n.op == "*":
                return a * b
            return a / b
        if isinstance(n, Pow):
            return rec(n.base) ** n.exponent
        return _FUNCTIONS[n.fn](rec(n.arg))

    return rec(node)


def free_vars(node: Expr) -> frozenset:
    if isinstance(node, Var):
        return frozenset((node.name,))
    if isinstance(node, Bin):
        return free_vars(node.lhs) | free_vars(node.rhs)
    if isinstance(node, (Neg,)):
        return free_vars(node.operand)
    if isinstance(node, Pow):
        return free_vars(node.base)
    if isinstance(node, Call):
        return free_vars(node.arg)
    return frozenset()


# ---------------------------------------------------------------------------
# differentiation

def _num(v) -> Num:
    return Num(float(v))


def _add(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Num) and a.value == 0.0:
        return b
    if isinstance(b, Num) and b.value == 0.0:
        return a
    if isinstance(a, Num) and isinstance(b, Num):
        return _num(a.value + b.value)
    return Bin("+", a, b)


def _sub(a: Expr, b: Expr) -> Expr:
    if isinstance(b, Num) and b.value == 0.0:
        return a
    if isinstance(a, Num) and isinstance(b, Num):
        return _num(a.value - b.value)
    if isinstance(a, Num) and a.value == 0.0:
        return Neg(b)
    return Bin("-", a, b)


def _mul(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Num):
        if a.value == 0.0:
            return Num(0.0)
        if a.value == 1.0:
            return b
    if isinstance(b, Num):
        if b.value == 0.0:
            return Num(0.0)
        if b.value == 1.0:
            return a
    if isinstance(a, Num) and isinstance(b, Num):
        return _num(a.value * b.value)
    return Bin("*", a, b)


def _div(a: Expr, c: Num) -> Expr:
    if isinstance(a, Num):
        return _num(a.value / c.value)
    if c.value == 1.0:
        return a
    return Bin("/", a, c)


def _pow(base: Expr, n: int) -> Expr:
    if n == 0:
        return Num(1.0)
    if n == 1:
        return base
    if isinstance(base, Num):
        return _num(base.value ** n)
    return Pow(base, n)


def differentiate(node: Expr, var: str) -> Expr:
    """Exact partial derivative with respect to 'x', 't' or 'y'."""
    if var not in _VARIABLES:
        raise ExprError(f"cannot differentiate with respect to {var!r}")

    def d(n):
        if isinstance(n, Num):
            return Num(0.0)
        if isinstance(n, Var):
            return Num(1.0) if n.name == var else Num(0.0)
        if isinstance(n, Neg):
            inner = d(n.operand)
            return Num(0.0) if isinstance(inner, Num) and inner.value == 0.0 else _sub(Num(0.0), inner)
        if isinstance(n, Bin):
            if n.op == "+":
                return _add(d(n.lhs), d(n.rhs))
            if n.op == "-":
                return _sub(d(n.lhs), d(n.rhs))
            if n.op == "*":
                return _add(_mul(d(n.lhs), n.rhs), _mul(n.lhs, d(n.rhs)))
            # division was restricted to constant divisors at parse time
            return _div(d(n.lhs), n.rhs if isinstance(n.rhs, Num) else _num(_try_const(n.rhs)))
        if isinstance(n, Pow):
            return _mul(_mul(_num(n.exponent), _pow(n.base, n.exponent - 1)), d(n.base))
        if isinstance(n, Call):
            inner = d(n.arg)
            if n.fn == "sin":
                outer = Call("cos", n.arg)
            elif n.fn == "cos":
                outer = Neg(Call("sin", n.arg))
            elif n.fn == "tanh":
                outer = _sub(Num(1.0), Pow(Call("tanh", n.arg), 2))
            else:  # exp
                outer = n
            return _mul(outer, inner)
        raise ExprError(f"unknown node {n!r}")

    return d(node)


# ---------------------------------------------------------------------------
# printing

_LEVEL = {"+": 1, "-": 1, "*": 2, "/": 2}


def to_source(node: Expr) -> str:
    """Render an AST back to parseable infix text."""

    def rec(n, parent_level):
        if isinstance(n, Num):
            v = n.value
            s = repr(v)
            if v < 0 and parent_level > 1:
                return f"({s})"
            return s
        if isinstance(n, Var):
            return n.name
        if isinstance(n, Neg):
            s = f"-{rec(n.operand, 3)}"
            return f"({s})" if parent_level > 2 else s
        if isinstance(n, Bin):
            level = _LEVEL[n.op]
            lhs = rec(n.lhs, level)
            # right operand needs stricter grouping: a - (b + c), a / (b)
            rhs = rec(n.rhs, level + (1 if n.op in ("-", "/") else 0))
            s = f"{lhs} {n.op} {rhs}"
            return f"({s})" if level < parent_level else s
        if isinstance(n, Pow):
            base = rec(n.base, 5)
            exp = str(n.exponent) if n.exponent >= 0 else f"({n.exponent})"
            return f"{base}^{exp}"
        if isinstance(n, Call):
            return f"{n.fn}({rec(n.arg, 0)})"
        raise ExprError(f"unknown node {n!r}")

    return rec(node, 0)
