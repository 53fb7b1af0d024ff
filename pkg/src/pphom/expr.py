"""Coefficient expressions: a small recursive-descent parser and numpy evaluator.

Grammar::

    expr    := term (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := ('+' | '-') unary | power
    power   := primary ('^' unary)?
    primary := NUMBER | NAME | FUNC '(' expr ')' | '(' expr ')'

Variables are t, x1, x2, y1, y2; named constants pi and e; functions sin,
cos, exp.  ``^`` is right associative and binds tighter than unary minus,
so ``-2^2`` is -4.  Evaluation is vectorised over numpy broadcasting and,
by convention, reduces y1, y2 modulo 1.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

VARIABLES = ("t", "x1", "x2", "y1", "y2")
CONSTANTS = {"pi": math.pi, "e": math.e}
FUNCTIONS = {"sin": np.sin, "cos": np.cos, "exp": np.exp}

_TOKEN = re.compile(r"\s*(?:(\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)|([A-Za-z_]\w*)|(\S))")


class ParseError(ValueError):
    def __init__(self, message: str, pos: int):
        super().__init__(f"{message} at position {pos}")
        self.pos = pos


class EvalError(ArithmeticError):
    pass


class Expr:
    """Base class of expression nodes."""

    prec = 100

    def evaluate(self, t=0.0, x1=0.0, x2=0.0, y1=0.0, y2=0.0, wrap_y: bool = True):
        if wrap_y:
            y1 = np.mod(y1, 1.0)
            y2 = np.mod(y2, 1.0)
        env = {"t": t, "x1": x1, "x2": x2, "y1": y1, "y2": y2}
        with np.errstate(all="ignore"):
            out = self._eval(env)
        out = np.asarray(out, dtype=float)
        if not np.all(np.isfinite(out)):
            raise EvalError(f"non-finite value of {self.to_text()}")
        return out

    def variables(self) -> frozenset:
        return frozenset()

    def depends_on(self, *names) -> bool:
        return bool(self.variables() & set(names))

    def is_constant(self) -> bool:
        return not self.variables()

    def __str__(self):
        return self.to_text()


@dataclass(frozen=True)
class Num(Expr):
    value: float

    @property
    def prec(self):
        return 3 if math.copysign(1.0, self.value) < 0 else 100

    def _eval(self, env):
        return self.value

    def to_text(self):
        v = self.value
        if v == int(v) and abs(v) < 1e15:
            return ("-" if math.copysign(1.0, v) < 0 else "") + str(abs(int(v)))
        return repr(float(v))


@dataclass(frozen=True)
class Name(Expr):
    name: str

    def _eval(self, env):
        if self.name in CONSTANTS:
            return CONSTANTS[self.name]
        return env[self.name]

    def variables(self):
        return frozenset() if self.name in CONSTANTS else frozenset([self.name])

    def to_text(self):
        return self.name


@dataclass(frozen=True)
class Neg(Expr):
    operand: Expr
    prec = 3

    def _eval(self, env):
        return -self.operand._eval(env)

    def variables(self):
        return self.operand.variables()

    def to_text(self):
        return "-" + _wrap(self.operand, self.prec)


@dataclass(frozen=True)
class Call(Expr):
    func: str
    arg: Expr

    def _eval(self, env):
        return FUNCTIONS[self.func](self.arg._eval(env))

    def variables(self):
        return self.arg.variables()

    def to_text(self):
        return f"{self.func}({self.arg.to_text()})"


_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "^": 4}


@dataclass(frozen=True)
class Bin(Expr):
    op: str
    left: Expr
    right: Expr

    @property
    def prec(self):
        return _PREC[self.op]

    def _eval(self, env):
        a = self.left._eval(env)
        b = self.right._eval(env)
        if self.op == "+":
            return a + b
        if self.op == "-":
            return a - b
        if self.op == "*":
            return a * b
        if self.op == "/":
            if np.any(np.asarray(b) == 0):
                raise EvalError(f"division by zero in {self.to_text()}")
            return a / b
        return np.power(np.asarray(a, float), b)

    def variables(self):
        return self.left.variables() | self.right.variables()

    def to_text(self):
        p = self.prec
        if self.op == "^":
            # right associative; the base must bind tighter than unary minus
            return f"{_wrap(self.left, p + 1)}^{_wrap(self.right, 3)}"
        left = _wrap(self.left, p)
        right = _wrap(self.right, p + 1)
        if self.op in "+-":
            return f"{left} {self.op} {right}"
        return f"{left}{self.op}{right}"


def _wrap(e: Expr, min_prec: int) -> str:
    text = e.to_text()
    return f"({text})" if e.prec < min_prec else text


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = []
        pos = 0
        while pos < len(text):
            m = _TOKEN.match(text, pos)
            if m is None or m.end() == pos:
                break
            start = m.start(m.lastindex) if m.lastindex else pos
            if m.group(1) is not None:
                self.tokens.append(("num", m.group(1), start))
            elif m.group(2) is not None:
                self.tokens.append(("name", m.group(2), start))
            elif m.group(3) is not None:
                self.tokens.append(("op", m.group(3), start))
            pos = m.end()
        self.tokens.append(("end", "", len(text)))
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value):
        kind, val, pos = self.take()
        if val != value or kind != "op":
            raise ParseError(f"expected {value!r}, found {val or 'end of input'!r}", pos)

    def parse(self) -> Expr:
        e = self.expr()
        kind, val, pos = self.peek()
        if kind != "end":
            raise ParseError(f"unexpected {val!r}", pos)
        return e

    def expr(self):
        e = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            e = Bin(op, e, self.term())
        return e

    def term(self):
        e = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            e = Bin(op, e, self.unary())
        return e

    def unary(self):
        kind, val, _ = self.peek()
        if kind == "op" and val in "+-":
            self.take()
            operand = self.unary()
            if val == "+":
                return operand
            if isinstance(operand, Num) and math.copysign(1.0, operand.value) > 0:
                return Num(-operand.value)
            return Neg(operand)
        return self.power()

    def power(self):
        base = self.primary()
        if self.peek()[:2] == ("op", "^"):
            self.take()
            return Bin("^", base, self.unary())
        return base

    def primary(self):
        kind, val, pos = self.take()
        if kind == "num":
            return Num(float(val))
        if kind == "name":
            if val in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Call(val, arg)
            if val in VARIABLES or val in CONSTANTS:
                return Name(val)
            raise ParseError(f"unknown identifier {val!r}", pos)
        if kind == "op" and val == "(":
            e = self.expr()
            self.expect(")")
            return e
        raise ParseError(f"unexpected {val or 'end of input'!r}", pos)


def parse_expr(text) -> Expr:
    """Parse an expression string; numbers are accepted as-is."""
    if isinstance(text, Expr):
        return text
    if isinstance(text, (int, float, np.floating, np.integer)):
        return Num(float(text))
    if not isinstance(text, str):
        raise TypeError(f"cannot parse {type(text).__name__}")
    if not text.strip():
        raise ParseError("empty expression", 0)
    return _Parser(text).parse()


def is_y_periodic(e: Expr, n_samples: int = 100, seed: int = 0, tol: float = 1e-12) -> bool:
    """Sampling test: f(y) == f(y + e_k) for k = 1, 2 without the modulo wrap."""
    if not e.depends_on("y1", "y2"):
        return True
    rng = np.random.default_rng(seed)
    t, x1, x2, y1, y2 = rng.uniform(0, 1, size=(5, n_samples))
    base = e.evaluate(t, x1, x2, y1, y2, wrap_y=False)
    for dy1, dy2 in ((1.0, 0.0), (0.0, 1.0)):
        shifted = e.evaluate(t, x1, x2, y1 + dy1, y2 + dy2, wrap_y=False)
        if np.max(np.abs(shifted - base)) > tol * max(1.0, np.max(np.abs(base))):
            return False
    return True
