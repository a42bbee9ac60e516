"""Arithmetic expression language used for structural equations.

Grammar, highest precedence first::

    atom   : NUMBER | NAME | NAME '(' expr (',' expr)* ')' | '(' expr ')'
    power  : atom ('^' unary)?            right-associative
    unary  : '-' unary | power
    term   : unary (('*' | '/') unary)*
    expr   : term (('+' | '-') term)*

``^`` binds tighter than unary minus, so ``-X^2`` means ``-(X^2)``, and
``2^3^2`` means ``2^(3^2)``. Numeric literals are decimal doubles with
optional scientific notation. The function set is fixed: sin, cos, exp,
log, abs, sqrt take one argument; min, max, pow take two.

Expression trees are immutable and evaluation is pure, so a tree may be
shared freely between threads. Evaluation never returns NaN or infinity:
domain problems (log of a nonpositive value, division by zero, overflow)
raise EvaluationError instead. The canonical printer ``to_source`` and
``parse`` round-trip: ``parse(to_source(e))`` is structurally equal to
``e`` for any tree the parser can produce. The parser never creates a
negative Const (a leading minus becomes a Neg node), so canonical trees
represent negation via Neg.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Iterator, Mapping, Union

import numpy as np

from .errors import CdpError

__all__ = [
    "BinOp",
    "Call",
    "Const",
    "EvaluationError",
    "Expression",
    "ExpressionError",
    "FUNCTION_ARITY",
    "Neg",
    "ParseError",
    "Var",
    "evaluate",
    "evaluate_batch",
    "free_variables",
    "parse",
    "to_source",
]

FUNCTION_ARITY = {
    "sin": 1,
    "cos": 1,
    "exp": 1,
    "log": 1,
    "abs": 1,
    "sqrt": 1,
    "min": 2,
    "max": 2,
    "pow": 2,
}

_NAME_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")
_BINARY_OPS = ("+", "-", "*", "/", "^")


class ExpressionError(CdpError):
    """Problem with an expression tree or its evaluation."""


class ParseError(ExpressionError):
    """Syntax error in expression source; carries the byte offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte {offset})")
        self.offset = offset


class EvaluationError(ExpressionError):
    """Evaluation failed: unbound variable or numeric domain error."""


@dataclass(frozen=True)
class Const:
    value: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "value", float(self.value))
        if not math.isfinite(self.value):
            raise ExpressionError("constants must be finite")


@dataclass(frozen=True)
class Var:
    name: str

    def __post_init__(self) -> None:
        if not _NAME_RE.match(self.name):
            raise ExpressionError(f"invalid variable name {self.name!r}")


@dataclass(frozen=True)
class Neg:
    operand: "Expression"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expression"
    right: "Expression"

    def __post_init__(self) -> None:
        if self.op not in _BINARY_OPS:
            raise ExpressionError(f"unknown operator {self.op!r}")


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple["Expression", ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "args", tuple(self.args))
        arity = FUNCTION_ARITY.get(self.func)
        if arity is None:
            raise ExpressionError(f"unknown function {self.func!r}")
        if len(self.args) != arity:
            raise ExpressionError(
                f"function '{self.func}' expects {arity} argument(s), got {len(self.args)}"
            )


Expression = Union[Const, Var, Neg, BinOp, Call]


# --- parsing ---------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"(?P<num>(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op>[-+*/^(),])"
)


def _byte_offset(source: str, char_pos: int) -> int:
    return len(source[:char_pos].encode("utf-8"))


def _tokenize(source: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(source):
        if source[pos].isspace():
            pos += 1
            continue
        match = _TOKEN_RE.match(source, pos)
        if match is None:
            raise ParseError(
                f"unexpected character {source[pos]!r}", _byte_offset(source, pos)
            )
        kind = str(match.lastgroup)
        tokens.append((kind, match.group(), pos))
        pos = match.end()
    return tokens


class _Parser:
    def __init__(self, source: str):
        self.source = source
        self.tokens = _tokenize(source)
        self.pos = 0

    def error(self, message: str, token_index: int | None = None) -> ParseError:
        index = self.pos if token_index is None else token_index
        if index < len(self.tokens):
            char_pos = self.tokens[index][2]
        else:
            char_pos = len(self.source)
        return ParseError(message, _byte_offset(self.source, char_pos))

    def peek(self) -> tuple[str, str, int] | None:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def take(self) -> tuple[str, str, int]:
        token = self.peek()
        if token is None:
            raise self.error("unexpected end of input")
        self.pos += 1
        return token

    def accept_op(self, *ops: str) -> str | None:
        token = self.peek()
        if token is not None and token[0] == "op" and token[1] in ops:
            self.pos += 1
            return token[1]
        return None

    def expect_op(self, op: str) -> None:
        if self.accept_op(op) is None:
            raise self.error(f"expected {op!r}")

    def parse(self) -> Expression:
        if not self.tokens:
            raise ParseError("empty expression", 0)
        tree = self.expr()
        if self.peek() is not None:
            raise self.error("unexpected trailing input")
        return tree

    def expr(self) -> Expression:
        tree = self.term()
        while True:
            op = self.accept_op("+", "-")
            if op is None:
                return tree
            tree = BinOp(op, tree, self.term())

    def term(self) -> Expression:
        tree = self.unary()
        while True:
            op = self.accept_op("*", "/")
            if op is None:
                return tree
            tree = BinOp(op, tree, self.unary())

    def unary(self) -> Expression:
        if self.accept_op("-"):
            return Neg(self.unary())
        return self.power()

    def power(self) -> Expression:
        base = self.atom()
        if self.accept_op("^"):
            # The exponent re-enters unary so "2^-3" works; recursing at
            # this level rather than looping makes ^ right-associative.
            return BinOp("^", base, self.unary())
        return base

    def atom(self) -> Expression:
        token = self.peek()
        if token is None:
            raise self.error("unexpected end of input")
        kind, text, _ = token
        if kind == "num":
            self.take()
            value = float(text)
            if not math.isfinite(value):
                raise self.error("numeric literal out of range", self.pos - 1)
            return Const(value)
        if kind == "name":
            self.take()
            if self.accept_op("("):
                return self.call(text, self.pos - 2)
            return Var(text)
        if kind == "op" and text == "(":
            self.take()
            tree = self.expr()
            self.expect_op(")")
            return tree
        raise self.error(f"unexpected token {text!r}")

    def call(self, func: str, name_index: int) -> Expression:
        arity = FUNCTION_ARITY.get(func)
        if arity is None:
            raise self.error(f"unknown function {func!r}", name_index)
        args = [self.expr()]
        while self.accept_op(","):
            args.append(self.expr())
        self.expect_op(")")
        if len(args) != arity:
            raise self.error(
                f"function '{func}' expects {arity} argument(s), got {len(args)}",
                name_index,
            )
        return Call(func, tuple(args))


def parse(source: str) -> Expression:
    """Parse expression source text into a tree; raises ParseError."""
    if not source.strip():
        raise ParseError("empty expression", 0)
    return _Parser(source).parse()


# --- printing --------------------------------------------------------------

_LEVEL_ADD, _LEVEL_MUL, _LEVEL_UNARY, _LEVEL_POW, _LEVEL_ATOM = 1, 2, 3, 4, 5


def _level(expr: Expression) -> int:
    if isinstance(expr, Const):
        # negative literals print with a leading minus, so they need
        # unary precedence or (-3)^2 would reprint as -3^2
        return _LEVEL_UNARY if math.copysign(1.0, expr.value) < 0 else _LEVEL_ATOM
    if isinstance(expr, (Var, Call)):
        return _LEVEL_ATOM
    if isinstance(expr, Neg):
        return _LEVEL_UNARY
    if expr.op in ("+", "-"):
        return _LEVEL_ADD
    if expr.op in ("*", "/"):
        return _LEVEL_MUL
    return _LEVEL_POW


def _wrap(expr: Expression, minimum: int) -> str:
    text = to_source(expr)
    return f"({text})" if _level(expr) < minimum else text


def to_source(expr: Expression) -> str:
    """Canonical source text; parse(to_source(e)) reproduces e."""
    if isinstance(expr, Const):
        return repr(expr.value)
    if isinstance(expr, Var):
        return expr.name
    if isinstance(expr, Neg):
        return "-" + _wrap(expr.operand, _LEVEL_UNARY)
    if isinstance(expr, Call):
        return f"{expr.func}({', '.join(to_source(a) for a in expr.args)})"
    if expr.op in ("+", "-"):
        left = _wrap(expr.left, _LEVEL_ADD)
        right = _wrap(expr.right, _LEVEL_ADD + 1)
        return f"{left} {expr.op} {right}"
    if expr.op in ("*", "/"):
        left = _wrap(expr.left, _LEVEL_MUL)
        right = _wrap(expr.right, _LEVEL_MUL + 1)
        return f"{left}{expr.op}{right}"
    # '^': left must be an atom to survive re-parsing; the right side sits
    # at unary level so a Neg exponent prints without parentheses.
    left = _wrap(expr.left, _LEVEL_ATOM)
    right = _wrap(expr.right, _LEVEL_UNARY)
    return f"{left}^{right}"


def free_variables(expr: Expression) -> set[str]:
    """Set of variable names referenced anywhere in the tree."""
    names: set[str] = set()
    stack: list[Expression] = [expr]
    while stack:
        node = stack.pop()
        if isinstance(node, Var):
            names.add(node.name)
        elif isinstance(node, Neg):
            stack.append(node.operand)
        elif isinstance(node, BinOp):
            stack.append(node.left)
            stack.append(node.right)
        elif isinstance(node, Call):
            stack.extend(node.args)
    return names


def _walk(expr: Expression) -> Iterator[Expression]:
    stack: list[Expression] = [expr]
    while stack:
        node = stack.pop()
        yield node
        if isinstance(node, Neg):
            stack.append(node.operand)
        elif isinstance(node, BinOp):
            stack.append(node.left)
            stack.append(node.right)
        elif isinstance(node, Call):
            stack.extend(node.args)


# --- evaluation ------------------------------------------------------------


def _check_finite(value: float, what: str) -> float:
    if not math.isfinite(value):
        raise EvaluationError(f"non-finite result in {what}")
    return value


def evaluate(expr: Expression, env: Mapping[str, float]) -> float:
    """Evaluate the tree with scalar bindings; raises EvaluationError."""
    if isinstance(expr, Const):
        return expr.value
    if isinstance(expr, Var):
        try:
            return _check_finite(float(env[expr.name]), f"variable '{expr.name}'")
        except KeyError:
            raise EvaluationError(f"unbound variable '{expr.name}'") from None
    if isinstance(expr, Neg):
        return -evaluate(expr.operand, env)
    if isinstance(expr, BinOp):
        left = evaluate(expr.left, env)
        right = evaluate(expr.right, env)
        if expr.op == "+":
            return _check_finite(left + right, "'+'")
        if expr.op == "-":
            return _check_finite(left - right, "'-'")
        if expr.op == "*":
            return _check_finite(left * right, "'*'")
        if expr.op == "/":
            if right == 0.0:
                raise EvaluationError("division by zero")
            return _check_finite(left / right, "'/'")
        return _pow(left, right)
    return _call(expr, env)


def _pow(base: float, exponent: float) -> float:
    try:
        return _check_finite(math.pow(base, exponent), "'^'")
    except (ValueError, OverflowError):
        raise EvaluationError(
            f"domain error in '^' for base {base!r}, exponent {exponent!r}"
        ) from None


def _call(expr: Call, env: Mapping[str, float]) -> float:
    args = [evaluate(a, env) for a in expr.args]
    func = expr.func
    if func == "log":
        if args[0] <= 0.0:
            raise EvaluationError(f"log of nonpositive value {args[0]!r}")
        return math.log(args[0])
    if func == "sqrt":
        if args[0] < 0.0:
            raise EvaluationError(f"sqrt of negative value {args[0]!r}")
        return math.sqrt(args[0])
    if func == "exp":
        try:
            return math.exp(args[0])
        except OverflowError:
            raise EvaluationError(f"overflow in exp({args[0]!r})") from None
    if func == "sin":
        return math.sin(args[0])
    if func == "cos":
        return math.cos(args[0])
    if func == "abs":
        return abs(args[0])
    if func == "min":
        return min(args)
    if func == "max":
        return max(args)
    return _pow(args[0], args[1])


def _batch_check(value, what: str):
    if not np.all(np.isfinite(value)):
        raise EvaluationError(f"non-finite result in {what}")
    return value


def _eval_array(expr: Expression, env: Mapping[str, np.ndarray]):
    if isinstance(expr, Const):
        return expr.value
    if isinstance(expr, Var):
        try:
            return env[expr.name]
        except KeyError:
            raise EvaluationError(f"unbound variable '{expr.name}'") from None
    if isinstance(expr, Neg):
        return -_eval_array(expr.operand, env)
    if isinstance(expr, BinOp):
        left = _eval_array(expr.left, env)
        right = _eval_array(expr.right, env)
        with np.errstate(all="ignore"):
            if expr.op == "+":
                return _batch_check(left + right, "'+'")
            if expr.op == "-":
                return _batch_check(left - right, "'-'")
            if expr.op == "*":
                return _batch_check(left * right, "'*'")
            if expr.op == "/":
                return _batch_check(np.divide(left, right), "'/'")
            return _batch_check(np.power(left, right), "'^'")
    args = [_eval_array(a, env) for a in expr.args]
    func = expr.func
    with np.errstate(all="ignore"):
        if func == "log":
            return _batch_check(np.log(args[0]), "log")
        if func == "sqrt":
            return _batch_check(np.sqrt(args[0]), "sqrt")
        if func == "exp":
            return _batch_check(np.exp(args[0]), "exp")
        if func == "sin":
            return np.sin(args[0])
        if func == "cos":
            return np.cos(args[0])
        if func == "abs":
            return np.abs(args[0])
        if func == "min":
            return np.minimum(args[0], args[1])
        if func == "max":
            return np.maximum(args[0], args[1])
        return _batch_check(np.power(args[0], args[1]), "pow")


def evaluate_batch(expr: Expression, env: Mapping[str, np.ndarray], n: int) -> np.ndarray:
    """Evaluate over length-n column bindings; the bulk path used by the
    model machinery. Semantics match evaluate applied element by element,
    with the same hard errors for domain problems."""
    result = _eval_array(expr, env)
    if np.ndim(result) == 0:
        return np.full(n, float(result))
    out = np.asarray(result, dtype=np.float64)
    if out.shape != (n,):
        raise EvaluationError(f"expected {n} values, got shape {out.shape}")
    return out
