"""Expression language for metric components and scalar fields.

Grammar (whitespace insensitive)::

    expr     := term (("+" | "-") term)*
    term     := unary (("*" | "/") unary)*
    unary    := "-" unary | power
    power    := base ("^" exponent)?
    exponent := ["-"] number | "(" constant-expr ")"
    base     := number | ident | ident "(" expr ")" | "(" expr ")"

``^`` binds tighter than unary minus, so ``-x1^2`` is ``-(x1^2)``.  Exponents
are real constants; a parenthesised exponent may contain arithmetic on numbers
only (``r^(-3)``, ``u^(4/3)``) and is folded when parsed.  Identifiers are the
coordinates ``x1 .. xn``, the radius ``r``, the functions ``sqrt``, ``exp``,
``log`` and free parameters.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Mapping, Union

import numpy as np

from . import jet as J

FUNCTIONS = ("sqrt", "exp", "log")


class ExprError(ValueError):
    """Base class for expression language errors."""


class ParseError(ExprError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{message} at line {line}, column {column}")
        self.message = message
        self.line = line
        self.column = column


class UnknownIdentifierError(ParseError):
    pass


class ArityError(ParseError):
    pass


class EvaluationError(ExprError):
    pass


# ---- AST -------------------------------------------------------------------

@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Var:
    index: int  # 0-based coordinate index; printed as x{index+1}


@dataclass(frozen=True)
class Radius:
    pass


@dataclass(frozen=True)
class Param:
    name: str


@dataclass(frozen=True)
class Unary:
    op: str  # "neg", "sqrt", "exp", "log"
    arg: "Expr"


@dataclass(frozen=True)
class Binary:
    op: str  # "+", "-", "*", "/"
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Power:
    base: "Expr"
    exponent: float


Expr = Union[Const, Var, Radius, Param, Unary, Binary, Power]


# ---- tokenizer ---------------------------------------------------------------

_TOKEN = re.compile(
    r"(?P<ws>\s+)"
    r"|(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),])"
)


@dataclass(frozen=True)
class Token:
    kind: str  # "num", "ident", "op", "end"
    text: str
    line: int
    column: int


def tokenize(source: str) -> list[Token]:
    tokens = []
    pos, line, line_start = 0, 1, 0
    while pos < len(source):
        m = _TOKEN.match(source, pos)
        if m is None:
            raise ParseError(f"unexpected character {source[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        text = m.group()
        if kind == "ws":
            for k, ch in enumerate(text):
                if ch == "\n":
                    line += 1
                    line_start = pos + k + 1
        else:
            tokens.append(Token(kind, text, line, pos - line_start + 1))
        pos = m.end()
    tokens.append(Token("end", "", line, pos - line_start + 1))
    return tokens


# ---- parser ----------------------------------------------------------------

class _Parser:
    def __init__(self, source: str, params, dim):
        self.tokens = tokenize(source)
        self.pos = 0
        self.params = None if params is None else set(params)
        self.dim = dim

    @property
    def tok(self) -> Token:
        return self.tokens[self.pos]

    def advance(self) -> Token:
        t = self.tokens[self.pos]
        self.pos += 1
        return t

    def error(self, message: str, tok: Token | None = None, cls=ParseError):
        tok = tok or self.tok
        return cls(message, tok.line, tok.column)

    def expect(self, text: str) -> Token:
        if self.tok.text != text or self.tok.kind != "op":
            found = self.tok.text or "end of input"
            raise self.error(f"expected {text!r}, found {found!r}")
        return self.advance()

    def parse(self) -> Expr:
        if self.tok.kind == "end":
            raise self.error("empty expression")
        e = self.expr()
        if self.tok.kind != "end":
            raise self.error(f"unexpected {self.tok.text!r}")
        return e

    def expr(self) -> Expr:
        e = self.term()
        while self.tok.kind == "op" and self.tok.text in "+-":
            op = self.advance().text
            e = Binary(op, e, self.term())
        return e

    def term(self) -> Expr:
        e = self.unary()
        while self.tok.kind == "op" and self.tok.text in "*/":
            op = self.advance().text
            e = Binary(op, e, self.unary())
        return e

    def unary(self) -> Expr:
        if self.tok.kind == "op" and self.tok.text == "-":
            self.advance()
            arg = self.unary()
            if isinstance(arg, Const):
                return Const(-arg.value)
            return Unary("neg", arg)
        return self.power()

    def power(self) -> Expr:
        base = self.base()
        if self.tok.kind == "op" and self.tok.text == "^":
            self.advance()
            exponent = self.exponent()
            if self.tok.kind == "op" and self.tok.text == "^":
                raise self.error("chained '^' is ambiguous; add parentheses")
            return Power(base, exponent)
        return base

    def exponent(self) -> float:
        tok = self.tok
        if tok.kind == "op" and tok.text == "-":
            self.advance()
            if self.tok.kind != "num":
                raise self.error("exponent must be a number or a parenthesised constant")
            return -self.number(self.advance())
        if tok.kind == "num":
            return self.number(self.advance())
        if tok.kind == "op" and tok.text == "(":
            self.advance()
            inner = self.expr()
            self.expect(")")
            try:
                return fold_constant(inner)
            except EvaluationError as exc:
                raise self.error(f"exponent must be constant: {exc}", tok) from None
        raise self.error("exponent must be a number or a parenthesised constant")

    def number(self, tok: Token) -> float:
        v = float(tok.text)
        if not math.isfinite(v):
            raise self.error(f"number {tok.text} overflows", tok)
        return v

    def base(self) -> Expr:
        tok = self.tok
        if tok.kind == "num":
            return Const(self.number(self.advance()))
        if tok.kind == "op" and tok.text == "(":
            self.advance()
            e = self.expr()
            self.expect(")")
            return e
        if tok.kind == "ident":
            self.advance()
            name = tok.text
            if self.tok.kind == "op" and self.tok.text == "(":
                return self.call(name, tok)
            if name in FUNCTIONS:
                raise self.error(f"function {name} expects 1 argument, got 0", tok, ArityError)
            return self.identifier(name, tok)
        found = tok.text or "end of input"
        raise self.error(f"unexpected {found!r}")

    def call(self, name: str, tok: Token) -> Expr:
        if name not in FUNCTIONS:
            raise self.error(f"unknown function {name!r}", tok, UnknownIdentifierError)
        self.advance()  # "("
        args = []
        if not (self.tok.kind == "op" and self.tok.text == ")"):
            args.append(self.expr())
            while self.tok.kind == "op" and self.tok.text == ",":
                self.advance()
                args.append(self.expr())
        self.expect(")")
        if len(args) != 1:
            raise self.error(f"function {name} expects 1 argument, got {len(args)}", tok, ArityError)
        return Unary(name, args[0])

    def identifier(self, name: str, tok: Token) -> Expr:
        if name == "r":
            return Radius()
        m = re.fullmatch(r"x([1-9]\d*)", name)
        if m:
            idx = int(m.group(1))
            if self.dim is not None and idx > self.dim:
                raise self.error(f"coordinate {name} exceeds dimension {self.dim}", tok, UnknownIdentifierError)
            return Var(idx - 1)
        if self.params is not None and name not in self.params:
            raise self.error(f"unknown identifier {name!r}", tok, UnknownIdentifierError)
        return Param(name)


def parse(source: str, params=None, dim: int | None = None) -> Expr:
    """Parse ``source`` into an AST.

    When ``params`` (an iterable of names) is given, any other free identifier
    is rejected; when ``dim`` is given, coordinates beyond it are rejected.
    """
    return _Parser(source, params, dim).parse()


def fold_constant(e: Expr) -> float:
    """Numeric value of an expression that contains no variables or parameters."""
    if isinstance(e, Const):
        return e.value
    if isinstance(e, (Var, Radius, Param)):
        raise EvaluationError(f"non-constant term {pretty(e)}")
    if isinstance(e, Unary):
        v = fold_constant(e.arg)
        return float(_np_unary(e.op, np.float64(v)))
    if isinstance(e, Binary):
        a, b = fold_constant(e.left), fold_constant(e.right)
        return float(_np_binary(e.op, np.float64(a), np.float64(b)))
    if isinstance(e, Power):
        return float(np.float64(fold_constant(e.base)) ** e.exponent)
    raise TypeError(e)


# ---- pretty printer --------------------------------------------------------

_PREC_ADD, _PREC_MUL, _PREC_UNARY, _PREC_POW, _PREC_ATOM = 1, 2, 3, 4, 5


def _prec(e: Expr) -> int:
    if isinstance(e, Binary):
        return _PREC_ADD if e.op in "+-" else _PREC_MUL
    if isinstance(e, Unary) and e.op == "neg":
        return _PREC_UNARY
    if isinstance(e, Const) and (e.value < 0 or math.copysign(1.0, e.value) < 0):
        return _PREC_UNARY
    if isinstance(e, Power):
        return _PREC_POW
    return _PREC_ATOM


def _num(v: float) -> str:
    return repr(float(v))


def pretty(e: Expr) -> str:
    """Text form that parses back to the same AST."""
    if isinstance(e, Const):
        return _num(e.value)
    if isinstance(e, Var):
        return f"x{e.index + 1}"
    if isinstance(e, Radius):
        return "r"
    if isinstance(e, Param):
        return e.name
    if isinstance(e, Unary):
        if e.op == "neg":
            inner = pretty(e.arg)
            # a constant operand would fold into a negative literal on reparse
            if _prec(e.arg) < _PREC_UNARY or isinstance(e.arg, Const):
                inner = f"({inner})"
            return f"-{inner}"
        return f"{e.op}({pretty(e.arg)})"
    if isinstance(e, Binary):
        p = _prec(e)
        left = pretty(e.left)
        right = pretty(e.right)
        if _prec(e.left) < p:
            left = f"({left})"
        if _prec(e.right) <= p:
            right = f"({right})"
        return f"{left} {e.op} {right}"
    if isinstance(e, Power):
        base = pretty(e.base)
        if _prec(e.base) <= _PREC_POW:
            base = f"({base})"
        x = e.exponent
        ex = _num(x) if math.copysign(1.0, x) > 0 else f"({_num(x)})"
        return f"{base}^{ex}"
    raise TypeError(e)


def free_params(e: Expr) -> set[str]:
    if isinstance(e, Param):
        return {e.name}
    if isinstance(e, Unary):
        return free_params(e.arg)
    if isinstance(e, Binary):
        return free_params(e.left) | free_params(e.right)
    if isinstance(e, Power):
        return free_params(e.base)
    return set()


def max_var(e: Expr) -> int:
    """Largest coordinate index used (1-based), 0 if none."""
    if isinstance(e, Var):
        return e.index + 1
    if isinstance(e, Unary):
        return max_var(e.arg)
    if isinstance(e, Binary):
        return max(max_var(e.left), max_var(e.right))
    if isinstance(e, Power):
        return max_var(e.base)
    return 0


def substitute(e: Expr, values: Mapping[str, float]) -> Expr:
    """Replace named parameters by constants."""
    if isinstance(e, Param) and e.name in values:
        return Const(float(values[e.name]))
    if isinstance(e, Unary):
        return Unary(e.op, substitute(e.arg, values))
    if isinstance(e, Binary):
        return Binary(e.op, substitute(e.left, values), substitute(e.right, values))
    if isinstance(e, Power):
        return Power(substitute(e.base, values), e.exponent)
    return e


# ---- evaluation ------------------------------------------------------------

def _np_unary(op, v):
    with np.errstate(all="ignore"):
        if op == "neg":
            return -v
        if op == "sqrt":
            if np.any(v < 0):
                raise EvaluationError("sqrt of a negative value")
            return np.sqrt(v)
        if op == "exp":
            return np.exp(v)
        if op == "log":
            if np.any(v <= 0):
                raise EvaluationError("log of a non-positive value")
            return np.log(v)
    raise ValueError(op)


def _np_binary(op, a, b):
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    if op == "/":
        if np.any(b == 0):
            raise EvaluationError("division by zero")
        return a / b
    raise ValueError(op)


def _resolve(name: str, params: Mapping[str, float]) -> float:
    try:
        return float(params[name])
    except KeyError:
        raise EvaluationError(f"parameter {name!r} has no value") from None


def _as_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[None, :]
    return pts


def eval_value(e: Expr, points, params: Mapping[str, float] | None = None) -> np.ndarray:
    """Plain floating-point evaluation at points of shape (N, n) or (n,)."""
    pts = _as_points(points)
    params = params or {}
    cache: dict = {}

    def go(node):
        if node in cache:
            return cache[node]
        if isinstance(node, Const):
            out = np.full(len(pts), node.value)
        elif isinstance(node, Var):
            if node.index >= pts.shape[1]:
                raise EvaluationError(f"x{node.index + 1} undefined in dimension {pts.shape[1]}")
            out = pts[:, node.index]
        elif isinstance(node, Radius):
            out = np.sqrt(np.sum(pts**2, axis=1))
        elif isinstance(node, Param):
            out = np.full(len(pts), _resolve(node.name, params))
        elif isinstance(node, Unary):
            out = _np_unary(node.op, go(node.arg))
        elif isinstance(node, Binary):
            out = _np_binary(node.op, go(node.left), go(node.right))
        elif isinstance(node, Power):
            b = go(node.base)
            if not float(node.exponent).is_integer() and np.any(b <= 0):
                raise EvaluationError(f"non-integer power {node.exponent} of a non-positive value")
            if node.exponent < 0 and np.any(b == 0):
                raise EvaluationError("negative power of zero")
            out = b ** node.exponent
        else:
            raise TypeError(node)
        cache[node] = out
        return out

    return go(e)


class JetEvaluator:
    """Evaluates many expressions on the same points, sharing subexpressions.

    Constant subtrees are kept as plain floats, so they cost a scaling rather
    than a jet product.
    """

    def __init__(self, points, order: int, params: Mapping[str, float] | None = None):
        self.points = _as_points(points)
        self.dim = self.points.shape[1]
        self.order = order
        self.params = dict(params or {})
        self.cache: dict = {}
        self._r2 = None

    def _radius_sq(self) -> J.Jet:
        if self._r2 is None:
            acc = None
            for i in range(self.dim):
                xi = J.Jet.variable(i, self.points[:, i], self.dim, self.order)
                sq = J.jet_mul(xi, xi)
                acc = sq if acc is None else acc + sq
            self._r2 = acc
        return self._r2

    def _check_radius(self):
        if np.any(self._radius_sq().value <= 0):
            raise J.JetDomainError("r", "radius is not differentiable at the origin")

    def __call__(self, e: Expr):
        if e in self.cache:
            return self.cache[e]
        out = self._eval(e)
        self.cache[e] = out
        return out

    def jet(self, e: Expr) -> J.Jet:
        """Jet of ``e`` (constants promoted to constant jets)."""
        v = self(e)
        if isinstance(v, J.Jet):
            return v
        return J.Jet.constant(np.full(len(self.points), v), self.dim, self.order)

    def _eval(self, e: Expr):
        if isinstance(e, Const):
            return e.value
        if isinstance(e, Param):
            return _resolve(e.name, self.params)
        if isinstance(e, Var):
            if e.index >= self.dim:
                raise EvaluationError(f"x{e.index + 1} undefined in dimension {self.dim}")
            return J.Jet.variable(e.index, self.points[:, e.index], self.dim, self.order)
        if isinstance(e, Radius):
            self._check_radius()
            return J.sqrt(self._radius_sq())
        if isinstance(e, Unary):
            a = self(e.arg)
            if not isinstance(a, J.Jet):
                return float(_np_unary(e.op, np.float64(a)))
            if e.op == "neg":
                return -a
            return {"sqrt": J.sqrt, "exp": J.exp, "log": J.log}[e.op](a)
        if isinstance(e, Binary):
            a, b = self(e.left), self(e.right)
            if not isinstance(a, J.Jet) and not isinstance(b, J.Jet):
                return float(_np_binary(e.op, np.float64(a), np.float64(b)))
            if e.op == "+":
                return a + b
            if e.op == "-":
                return a - b
            if e.op == "*":
                return a * b
            if isinstance(b, J.Jet):
                return J.jet_scale(J.reciprocal(b), a) if not isinstance(a, J.Jet) else J.jet_mul(a, J.reciprocal(b))
            if b == 0:
                raise EvaluationError("division by zero")
            return J.jet_scale(a, 1.0 / b)
        if isinstance(e, Power):
            if isinstance(e.base, Radius):
                # r^p = (r^2)^(p/2) skips the intermediate square root
                self._check_radius()
                return J.power(self._radius_sq(), e.exponent / 2.0)
            b = self(e.base)
            if not isinstance(b, J.Jet):
                return float(np.float64(b) ** e.exponent)
            return J.power(b, e.exponent)
        raise TypeError(e)


def eval_jet(e: Expr, point, params: Mapping[str, float] | None = None, order: int = 0) -> J.Jet:
    """Jet of ``e`` at ``point`` (shape (n,)) or at a batch of points (shape (N, n)).

    A single point yields a scalar jet; a batch yields a jet with trailing
    shape (N,).
    """
    single = np.asarray(point).ndim == 1
    jet = JetEvaluator(point, order, params).jet(e)
    if single:
        return jet[0]
    return jet
