"""Tiny expression language for symbols and coefficients.

Grammar (EBNF, also documented in the README):

    expr    = term { ("+" | "-") term } ;
    term    = unary { ("*" | "/") unary } ;
    unary   = "-" unary | power ;
    power   = atom [ ("^" | "**") exponent ] ;
    exponent= [ "-" ] INTEGER | "(" [ "-" ] INTEGER ")" ;
    atom    = NUMBER | VARIABLE | FUNC "(" expr ")" | "(" expr ")" ;
    VARIABLE= "t" | "s" | "x" | "xi" ;
    FUNC    = "exp" | "log" | "sin" | "cos" | "sqrt" | "ang" ;

`ang(u)` is the weight ang(u) = sqrt(1 + u^2); it is a first-class
primitive so its derivative u*u'/ang(u) stays stable near 0.  `pow`
exponents are integer literals only, which keeps differentiation closed
over the operator set.  Trees are immutable; evaluation is pure and
accepts floats or numpy arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

VARIABLES = ("t", "s", "x", "xi")
FUNCTIONS = ("exp", "log", "sin", "cos", "sqrt", "ang")

DEFAULT_DEPTH_CAP = 64


class ExprError(Exception):
    """Base class for expression-language failures."""


class ParseError(ExprError):
    def __init__(self, message, position):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class EvalError(ExprError):
    """Unbound variable or arithmetic domain failure during evaluation."""


class DepthError(ExprError):
    """A derivative tree exceeded the configured depth cap."""


# ---------------------------------------------------------------------------
# AST


@dataclass(frozen=True)
class Expr:
    def __str__(self):
        return to_string(self)

    @property
    def precedence(self):
        return _PRECEDENCE[type(self)]


@dataclass(frozen=True)
class Num(Expr):
    # non-negative by canonical form: negative literals print with a
    # leading minus, which re-parses as unary negation and would break
    # the structural round trip
    value: float

    def __post_init__(self):
        if self.value == 0.0:
            object.__setattr__(self, "value", 0.0)


def num(value):
    """Canonical literal: negatives become Neg of a positive literal."""
    value = float(value)
    if value < 0.0:
        return Neg(Num(-value))
    return Num(value)


@dataclass(frozen=True)
class Var(Expr):
    name: str


@dataclass(frozen=True)
class Unary(Expr):
    arg: Expr


class Neg(Unary):
    pass


class Exp(Unary):
    pass


class Log(Unary):
    pass


class Sin(Unary):
    pass


class Cos(Unary):
    pass


class Sqrt(Unary):
    pass


class Ang(Unary):
    pass


@dataclass(frozen=True)
class Binary(Expr):
    left: Expr
    right: Expr


class Add(Binary):
    pass


class Sub(Binary):
    pass


class Mul(Binary):
    pass


class Div(Binary):
    pass


@dataclass(frozen=True)
class Pow(Expr):
    base: Expr
    exponent: int


_PRECEDENCE = {
    Num: 5, Var: 5,
    Exp: 5, Log: 5, Sin: 5, Cos: 5, Sqrt: 5, Ang: 5,
    Pow: 4, Neg: 3,
    Mul: 2, Div: 2,
    Add: 1, Sub: 1,
}

_FUNC_NODE = {"exp": Exp, "log": Log, "sin": Sin, "cos": Cos,
              "sqrt": Sqrt, "ang": Ang}
_NODE_FUNC = {v: k for k, v in _FUNC_NODE.items()}


# ---------------------------------------------------------------------------
# Lexer / parser

_TOKEN_CHARS = set("+-*/^()")


def _tokenize(text):
    tokens = []
    i, n = 0, len(text)
    while i < n:
        c = text[i]
        if c.isspace():
            i += 1
            continue
        if c == "*" and i + 1 < n and text[i + 1] == "*":
            tokens.append(("op", "^", i))
            i += 2
            continue
        if c in _TOKEN_CHARS:
            tokens.append(("op", c, i))
            i += 1
            continue
        if c.isdigit() or c == ".":
            j = i
            seen_dot = False
            while j < n and (text[j].isdigit() or text[j] == "."):
                if text[j] == ".":
                    if seen_dot:
                        raise ParseError("malformed number", i)
                    seen_dot = True
                j += 1
            if j < n and text[j] in "eE":
                k = j + 1
                if k < n and text[k] in "+-":
                    k += 1
                if k >= n or not text[k].isdigit():
                    raise ParseError("malformed exponent", j)
                while k < n and text[k].isdigit():
                    k += 1
                j = k
            tokens.append(("num", text[i:j], i))
            i = j
            continue
        if c.isalpha() or c == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            tokens.append(("name", text[i:j], i))
            i = j
            continue
        raise ParseError(f"unknown token {c!r}", i)
    tokens.append(("end", "", n))
    return tokens


class _Parser:
    def __init__(self, tokens):
        self.tokens = tokens
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos]

    def next(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect_op(self, op):
        kind, val, at = self.next()
        if kind != "op" or val != op:
            raise ParseError(f"expected {op!r}, found {val or 'end of input'!r}", at)

    def parse_expr(self):
        node = self.parse_term()
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val in "+-":
                self.next()
                rhs = self.parse_term()
                node = Add(node, rhs) if val == "+" else Sub(node, rhs)
            else:
                return node

    def parse_term(self):
        node = self.parse_unary()
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val in "*/":
                self.next()
                rhs = self.parse_unary()
                node = Mul(node, rhs) if val == "*" else Div(node, rhs)
            else:
                return node

    def parse_unary(self):
        kind, val, _ = self.peek()
        if kind == "op" and val == "-":
            self.next()
            return Neg(self.parse_unary())
        return self.parse_power()

    def parse_power(self):
        base = self.parse_atom()
        kind, val, _ = self.peek()
        if kind == "op" and val == "^":
            self.next()
            return Pow(base, self.parse_exponent())
        return base

    def parse_exponent(self):
        kind, val, at = self.next()
        sign = 1
        parenthesized = False
        if kind == "op" and val == "(":
            parenthesized = True
            kind, val, at = self.next()
        if kind == "op" and val == "-":
            sign = -1
            kind, val, at = self.next()
        if kind != "num" or any(c in val for c in ".eE"):
            raise ParseError("pow exponent must be an integer literal", at)
        if parenthesized:
            self.expect_op(")")
        return sign * int(val)

    def parse_atom(self):
        kind, val, at = self.next()
        if kind == "num":
            return Num(float(val))
        if kind == "name":
            if val in VARIABLES:
                return Var(val)
            if val in FUNCTIONS:
                self.expect_op("(")
                arg = self.parse_expr()
                self.expect_op(")")
                return _FUNC_NODE[val](arg)
            raise ParseError(f"unknown identifier {val!r}", at)
        if kind == "op" and val == "(":
            node = self.parse_expr()
            self.expect_op(")")
            return node
        raise ParseError(f"unexpected {val or 'end of input'!r}", at)


def parse(text):
    """Parse an expression string into its unique AST."""
    parser = _Parser(_tokenize(text))
    node = parser.parse_expr()
    kind, val, at = parser.peek()
    if kind != "end":
        raise ParseError(f"trailing input {val!r}", at)
    return node


# ---------------------------------------------------------------------------
# Printing


def _wrap(child, parent_prec, strict):
    text = to_string(child)
    prec = child.precedence
    if prec < parent_prec or (strict and prec == parent_prec):
        return f"({text})"
    return text


def to_string(e):
    """Render an AST; parse(to_string(e)) is structurally identical to e."""
    if isinstance(e, Num):
        return repr(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Neg):
        return "-" + _wrap(e.arg, 3, strict=False)
    if isinstance(e, Unary):
        return f"{_NODE_FUNC[type(e)]}({to_string(e.arg)})"
    if isinstance(e, Pow):
        return f"{_wrap(e.base, 5, strict=False)}^{e.exponent}"
    if isinstance(e, Binary):
        op = {Add: "+", Sub: "-", Mul: "*", Div: "/"}[type(e)]
        # right operand is parenthesized on equal precedence so the
        # round-trip re-parses to the same association
        left = _wrap(e.left, e.precedence, strict=False)
        right = _wrap(e.right, e.precedence, strict=True)
        return f"{left} {op} {right}"
    raise TypeError(f"not an Expr node: {e!r}")


# ---------------------------------------------------------------------------
# Evaluation


def evaluate(e, env):
    """Evaluate e with env mapping variable names to floats or arrays.

    Raises EvalError on unbound variables, log of a non-positive value,
    sqrt of a negative value, or division by zero; never returns NaN
    silently.
    """
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Var):
        try:
            return env[e.name]
        except KeyError:
            raise EvalError(f"unbound variable {e.name!r}") from None
    if isinstance(e, Neg):
        return -evaluate(e.arg, env)
    if isinstance(e, Exp):
        return np.exp(evaluate(e.arg, env))
    if isinstance(e, Log):
        v = evaluate(e.arg, env)
        if np.any(np.asarray(v) <= 0.0):
            raise EvalError("log of non-positive value")
        return np.log(v)
    if isinstance(e, Sin):
        return np.sin(evaluate(e.arg, env))
    if isinstance(e, Cos):
        return np.cos(evaluate(e.arg, env))
    if isinstance(e, Sqrt):
        v = evaluate(e.arg, env)
        if np.any(np.asarray(v) < 0.0):
            raise EvalError("sqrt of negative value")
        return np.sqrt(v)
    if isinstance(e, Ang):
        v = evaluate(e.arg, env)
        return np.sqrt(1.0 + v * v)
    if isinstance(e, Add):
        return evaluate(e.left, env) + evaluate(e.right, env)
    if isinstance(e, Sub):
        return evaluate(e.left, env) - evaluate(e.right, env)
    if isinstance(e, Mul):
        return evaluate(e.left, env) * evaluate(e.right, env)
    if isinstance(e, Div):
        num = evaluate(e.left, env)
        den = evaluate(e.right, env)
        if np.any(np.asarray(den) == 0.0):
            raise EvalError("division by zero")
        return num / den
    if isinstance(e, Pow):
        base = evaluate(e.base, env)
        if e.exponent < 0 and np.any(np.asarray(base) == 0.0):
            raise EvalError("zero raised to a negative power")
        return base ** e.exponent
    raise TypeError(f"not an Expr node: {e!r}")


# ---------------------------------------------------------------------------
# Differentiation

# smart constructors fold 0/1 literals so derivative trees stay compact;
# they never touch parsed trees, so round-trip fidelity is unaffected

_ZERO = Num(0.0)
_ONE = Num(1.0)


def _is_const(e, value):
    return isinstance(e, Num) and e.value == value


def _add(a, b):
    if _is_const(a, 0.0):
        return b
    if _is_const(b, 0.0):
        return a
    return Add(a, b)


def _sub(a, b):
    if _is_const(b, 0.0):
        return a
    if _is_const(a, 0.0):
        return Neg(b)
    return Sub(a, b)


def _mul(a, b):
    if _is_const(a, 0.0) or _is_const(b, 0.0):
        return _ZERO
    if _is_const(a, 1.0):
        return b
    if _is_const(b, 1.0):
        return a
    return Mul(a, b)


def _div(a, b):
    if _is_const(a, 0.0):
        return _ZERO
    if _is_const(b, 1.0):
        return a
    return Div(a, b)


def depth(e):
    if isinstance(e, (Num, Var)):
        return 1
    if isinstance(e, Unary):
        return 1 + depth(e.arg)
    if isinstance(e, Pow):
        return 1 + depth(e.base)
    return 1 + max(depth(e.left), depth(e.right))


def differentiate(e, var, depth_cap=DEFAULT_DEPTH_CAP):
    """Exact symbolic derivative of e with respect to var.

    Raises DepthError if the resulting tree is deeper than depth_cap.
    """
    if var not in VARIABLES:
        raise ExprError(f"cannot differentiate with respect to {var!r}")
    result = _diff(e, var)
    if depth(result) > depth_cap:
        raise DepthError(
            f"derivative tree depth exceeds cap {depth_cap};"
            " raise depth_cap or simplify the source expression")
    return result


def _diff(e, var):
    if isinstance(e, Num):
        return _ZERO
    if isinstance(e, Var):
        return _ONE if e.name == var else _ZERO
    if isinstance(e, Neg):
        du = _diff(e.arg, var)
        return _ZERO if _is_const(du, 0.0) else Neg(du)
    if isinstance(e, Exp):
        return _mul(e, _diff(e.arg, var))
    if isinstance(e, Log):
        return _div(_diff(e.arg, var), e.arg)
    if isinstance(e, Sin):
        return _mul(Cos(e.arg), _diff(e.arg, var))
    if isinstance(e, Cos):
        return _mul(Neg(Sin(e.arg)), _diff(e.arg, var))
    if isinstance(e, Sqrt):
        return _div(_diff(e.arg, var), _mul(Num(2.0), e))
    if isinstance(e, Ang):
        # d ang(u) = u u' / ang(u)
        return _div(_mul(e.arg, _diff(e.arg, var)), e)
    if isinstance(e, Add):
        return _add(_diff(e.left, var), _diff(e.right, var))
    if isinstance(e, Sub):
        return _sub(_diff(e.left, var), _diff(e.right, var))
    if isinstance(e, Mul):
        return _add(_mul(_diff(e.left, var), e.right),
                    _mul(e.left, _diff(e.right, var)))
    if isinstance(e, Div):
        du = _diff(e.left, var)
        dv = _diff(e.right, var)
        if _is_const(dv, 0.0):
            return _div(du, e.right)
        return _div(_sub(_mul(du, e.right), _mul(e.left, dv)),
                    Pow(e.right, 2))
    if isinstance(e, Pow):
        du = _diff(e.base, var)
        if e.exponent == 0:
            return _ZERO
        if e.exponent == 1:
            return du
        if e.exponent == 2:
            inner = e.base
        else:
            inner = Pow(e.base, e.exponent - 1)
        return _mul(_mul(num(e.exponent), inner), du)
    raise TypeError(f"not an Expr node: {e!r}")


def free_variables(e):
    if isinstance(e, Num):
        return set()
    if isinstance(e, Var):
        return {e.name}
    if isinstance(e, Unary):
        return free_variables(e.arg)
    if isinstance(e, Pow):
        return free_variables(e.base)
    return free_variables(e.left) | free_variables(e.right)


def ensure_expr(source):
    """Coerce a string or Expr to an Expr."""
    if isinstance(source, Expr):
        return source
    if isinstance(source, str):
        return parse(source)
    if isinstance(source, (int, float)):
        return num(source)
    raise TypeError(f"cannot interpret {source!r} as an expression")


def finite_difference(e, var, env, step=1e-5):
    """Central finite difference, the standard oracle for differentiate."""
    hi = dict(env)
    lo = dict(env)
    hi[var] = env[var] + step
    lo[var] = env[var] - step
    return (evaluate(e, hi) - evaluate(e, lo)) / (2.0 * step)
