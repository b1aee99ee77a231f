"""Small arithmetic expression language for game coefficients.

Problem files specify drift, diffusion, running cost and terminal cost as
quoted strings, e.g. ``"exp(-(1-t)/2)*cos(x1)"``.  The grammar is

    expr   := term  (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | atom
    atom   := NUMBER | NAME | NAME '(' expr (',' expr)* ')' | '(' expr ')'

with the usual precedence (unary minus binds tighter than '*' and '/',
which bind tighter than '+' and '-') and left associativity.  Parsing is
whitespace-insensitive.  Trees are immutable after :func:`parse`, so
:func:`evaluate` is reentrant and safe to call concurrently.

``evaluate`` accepts scalar or numpy-array bindings; array bindings must
share a common shape and evaluation is then elementwise.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Union

import numpy as np

__all__ = [
    "Expr",
    "Num",
    "Var",
    "Neg",
    "BinOp",
    "Call",
    "ExpressionError",
    "ParseError",
    "UnknownIdentifierError",
    "ArityError",
    "EvaluationError",
    "UnboundVariableError",
    "DomainError",
    "parse",
    "evaluate",
    "pretty",
    "free_variables",
]

# Supported functions and their arities.
FUNCTIONS = {
    "sin": 1,
    "cos": 1,
    "exp": 1,
    "abs": 1,
    "sqrt": 1,
    "tanh": 1,
    "min": 2,
    "max": 2,
}


class ExpressionError(ValueError):
    """Base class for every error raised by this module."""


class ParseError(ExpressionError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


class UnknownIdentifierError(ParseError):
    def __init__(self, name: str, offset: int):
        ParseError.__init__(self, f"unknown identifier {name!r}", offset)
        self.name = name


class ArityError(ParseError):
    def __init__(self, func: str, expected: int, got: int, offset: int):
        ParseError.__init__(
            self, f"function {func!r} takes {expected} argument(s), got {got}", offset
        )
        self.func = func


class EvaluationError(ExpressionError):
    """Raised by :func:`evaluate`; carries the offending subexpression."""

    def __init__(self, message: str, node: "Expr | None" = None):
        if node is not None:
            message = f"{message} in {pretty(node)!r}"
        super().__init__(message)
        self.node = node


class UnboundVariableError(EvaluationError):
    pass


class DomainError(EvaluationError):
    pass


# ---------------------------------------------------------------------------
# AST
# ---------------------------------------------------------------------------


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
    op: str  # one of + - * /
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple


Expr = Union[Num, Var, Neg, BinOp, Call]


# ---------------------------------------------------------------------------
# Tokenizer
# ---------------------------------------------------------------------------

_SINGLE = set("+-*/(),")


def _tokenize(source: str):
    """Yield (kind, text, offset) triples; kind in {num, name, op, end}."""
    tokens = []
    i, n = 0, len(source)
    while i < n:
        ch = source[i]
        if ch.isspace():
            i += 1
            continue
        if ch in _SINGLE:
            tokens.append(("op", ch, i))
            i += 1
            continue
        if ch.isdigit() or ch == ".":
            j = i
            while j < n and (source[j].isdigit() or source[j] == "."):
                j += 1
            # optional exponent
            if j < n and source[j] in "eE":
                k = j + 1
                if k < n and source[k] in "+-":
                    k += 1
                if k < n and source[k].isdigit():
                    j = k
                    while j < n and source[j].isdigit():
                        j += 1
            text = source[i:j]
            try:
                value = float(text)
            except ValueError:
                raise ParseError(f"malformed number {text!r}", i) from None
            tokens.append(("num", value, i))
            i = j
            continue
        if ch.isalpha() or ch == "_":
            j = i
            while j < n and (source[j].isalnum() or source[j] == "_"):
                j += 1
            tokens.append(("name", source[i:j], i))
            i = j
            continue
        raise ParseError(f"unexpected character {ch!r}", i)
    tokens.append(("end", "", n))
    return tokens


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


class _Parser:
    def __init__(self, tokens, allowed_vars):
        self.tokens = tokens
        self.pos = 0
        self.allowed = frozenset(allowed_vars)

    def peek(self):
        return self.tokens[self.pos]

    def advance(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, text):
        kind, val, off = self.peek()
        if kind != "op" or val != text:
            raise ParseError(f"expected {text!r}", off)
        return self.advance()

    def parse_expr(self):
        node = self.parse_term()
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val in "+-":
                self.advance()
                node = BinOp(val, node, self.parse_term())
            else:
                return node

    def parse_term(self):
        node = self.parse_unary()
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val in "*/":
                self.advance()
                node = BinOp(val, node, self.parse_unary())
            else:
                return node

    def parse_unary(self):
        kind, val, _ = self.peek()
        if kind == "op" and val == "-":
            self.advance()
            return Neg(self.parse_unary())
        return self.parse_atom()

    def parse_atom(self):
        kind, val, off = self.advance()
        if kind == "num":
            return Num(val)
        if kind == "name":
            if val in FUNCTIONS:
                nxt_kind, nxt_val, nxt_off = self.peek()
                if nxt_kind != "op" or nxt_val != "(":
                    raise ParseError(f"expected '(' after function {val!r}", nxt_off)
                self.advance()
                args = [self.parse_expr()]
                while True:
                    k, v, o = self.peek()
                    if k == "op" and v == ",":
                        self.advance()
                        args.append(self.parse_expr())
                    else:
                        break
                self.expect(")")
                if len(args) != FUNCTIONS[val]:
                    raise ArityError(val, FUNCTIONS[val], len(args), off)
                return Call(val, tuple(args))
            if val not in self.allowed:
                raise UnknownIdentifierError(val, off)
            return Var(val)
        if kind == "op" and val == "(":
            node = self.parse_expr()
            self.expect(")")
            return node
        raise ParseError(f"unexpected token {val!r}" if val else "unexpected end of input", off)


def parse(source: str, allowed_vars: Iterable[str]) -> Expr:
    """Parse ``source`` into an expression tree.

    ``allowed_vars`` is the set of variable names the expression may
    reference; anything else raises :class:`UnknownIdentifierError`.
    """
    if not isinstance(source, str) or not source.strip():
        raise ParseError("empty expression", 0)
    parser = _Parser(_tokenize(source), allowed_vars)
    node = parser.parse_expr()
    kind, val, off = parser.peek()
    if kind != "end":
        raise ParseError(f"unexpected trailing input {val!r}", off)
    return node


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

_UNARY_FUNCS = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "abs": np.abs,
    "tanh": np.tanh,
}


def evaluate(expr: Expr, bindings: Mapping[str, float]) -> float:
    """Evaluate ``expr`` under ``bindings`` in IEEE double precision.

    Bindings may be scalars or numpy arrays of a common shape.  Division
    by zero and square roots of negative numbers raise :class:`DomainError`
    naming the offending subexpression, as does any non-finite result.
    """
    with np.errstate(over="ignore", invalid="ignore"):
        result = _eval(expr, bindings)
    if not np.all(np.isfinite(result)):
        raise DomainError("non-finite result", expr)
    return result


def _eval(expr, bindings):
    if isinstance(expr, Num):
        return expr.value
    if isinstance(expr, Var):
        try:
            return bindings[expr.name]
        except KeyError:
            raise UnboundVariableError(f"unbound variable {expr.name!r}", expr) from None
    if isinstance(expr, Neg):
        return -_eval(expr.operand, bindings)
    if isinstance(expr, BinOp):
        left = _eval(expr.left, bindings)
        right = _eval(expr.right, bindings)
        if expr.op == "+":
            return left + right
        if expr.op == "-":
            return left - right
        if expr.op == "*":
            return left * right
        # division: a zero denominator is a modelling error, not +-inf
        if np.any(right == 0):
            raise DomainError("division by zero", expr)
        return left / right
    if isinstance(expr, Call):
        if expr.func == "sqrt":
            arg = _eval(expr.args[0], bindings)
            if np.any(arg < 0):
                raise DomainError("square root of negative number", expr)
            return np.sqrt(arg)
        if expr.func in ("min", "max"):
            a = _eval(expr.args[0], bindings)
            b = _eval(expr.args[1], bindings)
            return np.minimum(a, b) if expr.func == "min" else np.maximum(a, b)
        return _UNARY_FUNCS[expr.func](_eval(expr.args[0], bindings))
    raise TypeError(f"not an expression node: {expr!r}")


# ---------------------------------------------------------------------------
# Pretty printing and inspection
# ---------------------------------------------------------------------------

_PREC_ADD = 1
_PREC_MUL = 2
_PREC_NEG = 3
_PREC_ATOM = 4


def _prec(expr) -> int:
    if isinstance(expr, BinOp):
        return _PREC_ADD if expr.op in "+-" else _PREC_MUL
    if isinstance(expr, Neg):
        return _PREC_NEG
    return _PREC_ATOM


def pretty(expr: Expr) -> str:
    """Render ``expr`` as a string that reparses to an identical tree."""
    if isinstance(expr, Num):
        return repr(expr.value)
    if isinstance(expr, Var):
        return expr.name
    if isinstance(expr, Neg):
        inner = pretty(expr.operand)
        if _prec(expr.operand) < _PREC_NEG:
            inner = f"({inner})"
        return "-" + inner
    if isinstance(expr, BinOp):
        me = _prec(expr)
        left = pretty(expr.left)
        if _prec(expr.left) < me:
            left = f"({left})"
        right = pretty(expr.right)
        # left associativity: parenthesize right child at equal precedence
        if _prec(expr.right) <= me:
            right = f"({right})"
        return f"{left}{expr.op}{right}"
    if isinstance(expr, Call):
        return f"{expr.func}({','.join(pretty(a) for a in expr.args)})"
    raise TypeError(f"not an expression node: {expr!r}")


def free_variables(expr: Expr) -> frozenset:
    """Set of variable names occurring in ``expr``."""
    if isinstance(expr, Num):
        return frozenset()
    if isinstance(expr, Var):
        return frozenset((expr.name,))
    if isinstance(expr, Neg):
        return free_variables(expr.operand)
    if isinstance(expr, BinOp):
        return free_variables(expr.left) | free_variables(expr.right)
    if isinstance(expr, Call):
        out = frozenset()
        for a in expr.args:
            out |= free_variables(a)
        return out
    raise TypeError(f"not an expression node: {expr!r}")
