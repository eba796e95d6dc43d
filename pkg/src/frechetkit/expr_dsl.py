"""Small arithmetic expression language for charts, fields and coefficients.

Grammar (lowest to highest precedence)::

    expr   := term (("+" | "-") term)*          left associative
    term   := unary (("*" | "/") unary)*        left associative
    unary  := "-" unary | power
    power  := atom ("^" unary)?                 right associative
    atom   := NUMBER | VAR | FUNC "(" expr ")" | "(" expr ")"

Variables are ``t`` and ``x1`` .. ``xN``; functions are ``sin``, ``cos``,
``exp``, ``tanh`` and ``log``.  Exponents must be integer constants.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Mapping, Union

from frechetkit.errors import DslSyntaxError, EvalError

FUNCTIONS = ("sin", "cos", "exp", "tanh", "log")

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^(),])
    """,
    re.VERBOSE,
)
_VAR_RE = re.compile(r"^(t|x[1-9][0-9]*)$")


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - * / ^
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Call:
    func: str
    arg: "Expr"


Expr = Union[Num, Var, Neg, BinOp, Call]


def Add(a, b):
    return BinOp("+", a, b)


def Sub(a, b):
    return BinOp("-", a, b)


def Mul(a, b):
    return BinOp("*", a, b)


def Div(a, b):
    return BinOp("/", a, b)


def Pow(a, b):
    if isinstance(b, (int, float)):
        b = Num(float(b)) if b >= 0 else Neg(Num(float(-b)))
    return BinOp("^", a, b)


# ---------------------------------------------------------------- tokenizer


@dataclass(frozen=True)
class _Token:
    kind: str  # "num", "ident", "op", "end"
    text: str
    offset: int  # byte offset


def _tokenize(text: str) -> list[_Token]:
    tokens = []
    pos = 0
    byte_pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise DslSyntaxError(f"unexpected character {text[pos]!r}", byte_pos)
        kind = m.lastgroup
        chunk = m.group()
        if kind != "ws":
            tokens.append(_Token(kind, chunk, byte_pos))
        byte_pos += len(chunk.encode("utf-8"))
        pos = m.end()
    tokens.append(_Token("end", "", byte_pos))
    return tokens


# ------------------------------------------------------------------- parser


class _Parser:
    def __init__(self, text: str, dim: int | None):
        self.tokens = _tokenize(text)
        self.i = 0
        self.dim = dim

    @property
    def tok(self) -> _Token:
        return self.tokens[self.i]

    def advance(self) -> _Token:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, text: str) -> _Token:
        tok = self.tok
        if tok.kind != "op" or tok.text != text:
            found = "end of input" if tok.kind == "end" else repr(tok.text)
            raise DslSyntaxError(f"expected {text!r}, found {found}", tok.offset)
        return self.advance()

    def parse(self) -> Expr:
        node = self.expr()
        if self.tok.kind != "end":
            raise DslSyntaxError(f"unexpected token {self.tok.text!r}", self.tok.offset)
        return node

    def expr(self) -> Expr:
        node = self.term()
        while self.tok.kind == "op" and self.tok.text in "+-":
            op = self.advance().text
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Expr:
        node = self.unary()
        while self.tok.kind == "op" and self.tok.text in "*/":
            op = self.advance().text
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Expr:
        if self.tok.kind == "op" and self.tok.text == "-":
            self.advance()
            return Neg(self.unary())
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.tok.kind == "op" and self.tok.text == "^":
            self.advance()
            at = self.tok.offset
            exponent = self.unary()
            value = _constant_value(exponent)
            if value is None or value != int(value):
                raise DslSyntaxError("exponent must be an integer constant", at)
            return BinOp("^", base, exponent)
        return base

    def atom(self) -> Expr:
        tok = self.tok
        if tok.kind == "num":
            self.advance()
            return Num(float(tok.text))
        if tok.kind == "ident":
            self.advance()
            if tok.text in FUNCTIONS:
                self.expect("(")
                if self.tok.kind == "op" and self.tok.text == ")":
                    raise DslSyntaxError(f"{tok.text} takes exactly 1 argument, got 0", self.tok.offset)
                arg = self.expr()
                if self.tok.kind == "op" and self.tok.text == ",":
                    raise DslSyntaxError(f"{tok.text} takes exactly 1 argument", self.tok.offset)
                self.expect(")")
                return Call(tok.text, arg)
            if not _VAR_RE.match(tok.text):
                raise DslSyntaxError(f"unknown identifier {tok.text!r}", tok.offset)
            if self.dim is not None and tok.text != "t" and int(tok.text[1:]) > self.dim:
                raise DslSyntaxError(
                    f"variable {tok.text!r} exceeds declared dimension {self.dim}", tok.offset
                )
            return Var(tok.text)
        if tok.kind == "op" and tok.text == "(":
            self.advance()
            node = self.expr()
            self.expect(")")
            return node
        found = "end of input" if tok.kind == "end" else repr(tok.text)
        raise DslSyntaxError(f"unexpected {found}", tok.offset)


def parse(text: str, dim: int | None = None) -> Expr:
    """Parse ``text`` into an AST.

    ``dim`` limits the admissible ``x<i>`` variables.  Raises
    :class:`DslSyntaxError` carrying the byte offset of the failure.
    """
    return _Parser(text, dim).parse()


def _constant_value(node: Expr) -> float | None:
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Neg):
        v = _constant_value(node.operand)
        return None if v is None else -v
    if isinstance(node, BinOp) and node.op == "^":
        b, e = _constant_value(node.left), _constant_value(node.right)
        if b is None or e is None:
            return None
        try:
            return float(b ** int(e))
        except (ZeroDivisionError, OverflowError):
            return None
    return None


# ------------------------------------------------------------------ printer

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "^": 4}


def _prec(node: Expr) -> int:
    if isinstance(node, BinOp):
        return _PREC[node.op]
    if isinstance(node, Neg):
        return 3
    return 5


def _fmt_num(value: float) -> str:
    if value.is_integer() and abs(value) < 1e16:
        return str(int(value))
    return repr(value)


def to_text(node: Expr) -> str:
    """Render an AST with the minimal parentheses that parse back to it."""
    if isinstance(node, Num):
        return _fmt_num(node.value)
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Call):
        return f"{node.func}({to_text(node.arg)})"
    if isinstance(node, Neg):
        inner = to_text(node.operand)
        return f"-({inner})" if _prec(node.operand) < 3 else f"-{inner}"

    def wrap(child, need):
        s = to_text(child)
        return f"({s})" if need else s

    p = _PREC[node.op]
    if node.op == "^":
        left = wrap(node.left, _prec(node.left) <= 4)
        right = wrap(node.right, _prec(node.right) < 3)
        return f"{left}^{right}"
    left = wrap(node.left, _prec(node.left) < p)
    right = wrap(node.right, _prec(node.right) <= p)
    sep = f" {node.op} " if p == 1 else node.op
    return f"{left}{sep}{right}"


# ---------------------------------------------------------------- evaluator


def evaluate(node: Expr, env: Mapping[str, float], _path: tuple = ()) -> float:
    """Evaluate in IEEE double precision.

    Raises :class:`EvalError` (with the path of the failing node) on division
    by zero, logarithm of a nonpositive number, or overflow.
    """
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        try:
            return float(env[node.name])
        except KeyError:
            raise EvalError(f"unbound variable {node.name!r}", _path) from None
    if isinstance(node, Neg):
        return -evaluate(node.operand, env, _path + ("operand",))
    if isinstance(node, Call):
        x = evaluate(node.arg, env, _path + ("arg",))
        if node.func == "log" and x <= 0.0:
            raise EvalError(f"log of nonpositive value {x!r}", _path)
        try:
            return getattr(math, node.func)(x)
        except OverflowError:
            raise EvalError(f"overflow in {node.func}", _path) from None
    a = evaluate(node.left, env, _path + ("left",))
    b = evaluate(node.right, env, _path + ("right",))
    op = node.op
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    if op == "/":
        if b == 0.0:
            raise EvalError("division by zero", _path)
        return a / b
    n = int(b)
    if a == 0.0 and n < 0:
        raise EvalError("zero raised to a negative power", _path)
    try:
        return a**n
    except OverflowError:
        raise EvalError("overflow in power", _path) from None


# eval is the conventional name in the DSL's vocabulary; keep both spellings
eval_expr = evaluate


def variables(node: Expr) -> set[str]:
    if isinstance(node, Var):
        return {node.name}
    if isinstance(node, Num):
        return set()
    if isinstance(node, (Neg,)):
        return variables(node.operand)
    if isinstance(node, Call):
        return variables(node.arg)
    return variables(node.left) | variables(node.right)


# ---------------------------------------------------- symbolic differentiation

ZERO = Num(0.0)
ONE = Num(1.0)


def _num(v: float) -> Expr:
    return Num(v) if v >= 0 else Neg(Num(-v))


def _is(node, v):
    return isinstance(node, Num) and node.value == v


def _s_add(a, b):
    if _is(a, 0.0):
        return b
    if _is(b, 0.0):
        return a
    if isinstance(a, Num) and isinstance(b, Num):
        return _num(a.value + b.value)
    if isinstance(b, Neg):
        return _s_sub(a, b.operand)
    return Add(a, b)


def _s_sub(a, b):
    if _is(b, 0.0):
        return a
    if _is(a, 0.0):
        return _s_neg(b)
    if isinstance(a, Num) and isinstance(b, Num):
        return _num(a.value - b.value)
    return Sub(a, b)


def _s_neg(a):
    if _is(a, 0.0):
        return ZERO
    if isinstance(a, Neg):
        return a.operand
    return Neg(a)


def _s_mul(a, b):
    if _is(a, 0.0) or _is(b, 0.0):
        return ZERO
    if _is(a, 1.0):
        return b
    if _is(b, 1.0):
        return a
    if isinstance(a, Num) and isinstance(b, Num):
        return _num(a.value * b.value)
    if isinstance(a, Neg):
        return _s_neg(_s_mul(a.operand, b))
    if isinstance(b, Neg):
        return _s_neg(_s_mul(a, b.operand))
    return Mul(a, b)


def _s_div(a, b):
    if _is(a, 0.0):
        return ZERO
    if _is(b, 1.0):
        return a
    return Div(a, b)


def _s_pow(base, n: int):
    if n == 0:
        return ONE
    if n == 1:
        return base
    return Pow(base, n)


def differentiate(node: Expr, var: str) -> Expr:
    """Symbolic derivative with 0/1 folding."""
    if isinstance(node, Num):
        return ZERO
    if isinstance(node, Var):
        return ONE if node.name == var else ZERO
    if isinstance(node, Neg):
        return _s_neg(differentiate(node.operand, var))
    if isinstance(node, Call):
        u = node.arg
        du = differentiate(u, var)
        if _is(du, 0.0):
            return ZERO
        if node.func == "sin":
            outer = Call("cos", u)
        elif node.func == "cos":
            outer = Neg(Call("sin", u))
        elif node.func == "exp":
            outer = node
        elif node.func == "tanh":
            outer = Sub(ONE, Pow(node, 2))
        else:  # log
            return _s_div(du, u)
        return _s_mul(outer, du)
    a, b, op = node.left, node.right, node.op
    if op == "+":
        return _s_add(differentiate(a, var), differentiate(b, var))
    if op == "-":
        return _s_sub(differentiate(a, var), differentiate(b, var))
    if op == "*":
        return _s_add(_s_mul(differentiate(a, var), b), _s_mul(a, differentiate(b, var)))
    if op == "/":
        da, db = differentiate(a, var), differentiate(b, var)
        if _is(db, 0.0):
            return _s_div(da, b)
        return _s_div(_s_sub(_s_mul(da, b), _s_mul(a, db)), Pow(b, 2))
    n = int(_constant_value(b))
    da = differentiate(a, var)
    if _is(da, 0.0):
        return ZERO
    return _s_mul(_s_mul(_num(float(n)), _s_pow(a, n - 1)), da)


# ------------------------------------------------------------ random ASTs


def random_ast(rng, depth: int = 4, dim: int = 3) -> Expr:
    """Draw a parser-canonical AST (used by round-trip tests).

    ``rng`` is a :class:`numpy.random.Generator`.
    """
    if depth <= 0 or rng.random() < 0.25:
        if rng.random() < 0.5:
            kind = rng.integers(3)
            if kind == 0:
                return Num(float(rng.integers(0, 100)))
            if kind == 1:
                return Num(float(rng.random() * 10.0 ** int(rng.integers(-6, 6))))
            return Num(float(rng.integers(0, 1000)) / 8.0)
        names = ["t"] + [f"x{i}" for i in range(1, dim + 1)]
        return Var(names[rng.integers(len(names))])
    choice = rng.integers(8)
    if choice == 0:
        return Neg(random_ast(rng, depth - 1, dim))
    if choice == 1:
        return Call(FUNCTIONS[rng.integers(len(FUNCTIONS))], random_ast(rng, depth - 1, dim))
    if choice == 2:
        n = int(rng.integers(-3, 5))
        return Pow(random_ast(rng, depth - 1, dim), n)
    op = "+-*/"[rng.integers(4)]
    return BinOp(op, random_ast(rng, depth - 1, dim), random_ast(rng, depth - 1, dim))
