"""Expression trees for real functions of one variable.

Nodes are immutable dataclasses; constants are exact (rationals and rational
multiples of pi or e), so trees that come out of the rule engine print with
exact coefficients.  Evaluation is total: points outside a subterm's domain
yield None instead of raising.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

from .exact import Exact, PI, RAT
from .errors import ExprSyntaxError, UnknownIdentifierError


@dataclass(frozen=True)
class Expr:
    def __add__(self, other):
        return Add(self, _coerce(other))

    def __radd__(self, other):
        return Add(_coerce(other), self)

    def __sub__(self, other):
        return Sub(self, _coerce(other))

    def __rsub__(self, other):
        return Sub(_coerce(other), self)

    def __mul__(self, other):
        return Mul(self, _coerce(other))

    def __rmul__(self, other):
        return Mul(_coerce(other), self)

    def __truediv__(self, other):
        return Div(self, _coerce(other))

    def __rtruediv__(self, other):
        return Div(_coerce(other), self)

    def __neg__(self):
        return Neg(self)

    def __pow__(self, exponent):
        return Pow(self, Fraction(exponent))

    def __str__(self):
        return format_expr(self)


@dataclass(frozen=True)
class Const(Expr):
    value: Exact


@dataclass(frozen=True)
class Var(Expr):
    pass


@dataclass(frozen=True)
class Neg(Expr):
    arg: Expr


@dataclass(frozen=True)
class Add(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Sub(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Mul(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Div(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Pow(Expr):
    base: Expr
    exponent: Fraction  # integer or half-integer


@dataclass(frozen=True)
class Abs(Expr):
    arg: Expr


@dataclass(frozen=True)
class Sqrt(Expr):
    arg: Expr


@dataclass(frozen=True)
class Exp(Expr):
    arg: Expr


@dataclass(frozen=True)
class Ln(Expr):
    arg: Expr


@dataclass(frozen=True)
class Sin(Expr):
    arg: Expr


@dataclass(frozen=True)
class Cos(Expr):
    arg: Expr


@dataclass(frozen=True)
class Tan(Expr):
    arg: Expr


@dataclass(frozen=True)
class Sec(Expr):
    arg: Expr


@dataclass(frozen=True)
class Arcsin(Expr):
    arg: Expr


@dataclass(frozen=True)
class Arctan(Expr):
    arg: Expr


X = Var()
ZERO = Const(Exact.rational(0))
ONE = Const(Exact.rational(1))
PI_CONST = Const(Exact.pi_multiple(1))
E_CONST = Const(Exact.e_multiple(1))

FUNCTIONS = {
    "abs": Abs,
    "sqrt": Sqrt,
    "exp": Exp,
    "ln": Ln,
    "sin": Sin,
    "cos": Cos,
    "tan": Tan,
    "sec": Sec,
    "arcsin": Arcsin,
    "arctan": Arctan,
}

_UNARY_FUNCS = tuple(FUNCTIONS.values())


def _coerce(v) -> Expr:
    if isinstance(v, Expr):
        return v
    return Const(Exact.rational(v))


def num(v) -> Const:
    return Const(Exact.rational(v))


# ---------------------------------------------------------------------------
# Exact constant arithmetic (used by parse-time folding and simplify)
# ---------------------------------------------------------------------------

def _make_exact(kind: str, coef: Fraction) -> Exact:
    if coef == 0 or kind == RAT:
        return Exact.rational(coef)
    if kind == PI:
        return Exact.pi_multiple(coef)
    return Exact.e_multiple(coef)


def _exact_add(a: Exact, b: Exact):
    if a.coef == 0 and a.kind == RAT:
        return b
    if b.coef == 0 and b.kind == RAT:
        return a
    if a.kind == b.kind and a.is_exact:
        return _make_exact(a.kind, a.coef + b.coef)
    return None


def _exact_mul(a: Exact, b: Exact):
    if not (a.is_exact and b.is_exact):
        return None
    if a.kind == RAT:
        return _make_exact(b.kind, a.coef * b.coef)
    if b.kind == RAT:
        return _make_exact(a.kind, a.coef * b.coef)
    return None  # pi*pi, pi*e, ... are not representable


def _exact_div(a: Exact, b: Exact):
    if not (a.is_exact and b.is_exact) or b.coef == 0:
        return None
    if b.kind == RAT:
        return _make_exact(a.kind, a.coef / b.coef)
    return None


def as_constant(e: Expr):
    """The Exact value of a constant subtree, or None."""
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Neg):
        inner = as_constant(e.arg)
        return None if inner is None else -inner
    return None


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

_OPS = "+-*/^()"


def _tokenize(text: str):
    tokens = []
    i, n = 0, len(text)
    while i < n:
        c = text[i]
        if c.isspace():
            i += 1
            continue
        if c in _OPS:
            tokens.append((c, c, i))
            i += 1
            continue
        if c.isdigit() or (c == "." and i + 1 < n and text[i + 1].isdigit()):
            j = i
            seen_dot = False
            while j < n and (text[j].isdigit() or (text[j] == "." and not seen_dot)):
                seen_dot = seen_dot or text[j] == "."
                j += 1
            tokens.append(("num", text[i:j], i))
            i = j
            continue
        if c.isalpha():
            j = i
            while j < n and text[j].isalnum():
                j += 1
            tokens.append(("ident", text[i:j], i))
            i = j
            continue
        raise ExprSyntaxError(f"unexpected character {c!r}", i)
    tokens.append(("end", "", n))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos]

    def advance(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, kind: str):
        tok = self.peek()
        if tok[0] != kind:
            raise ExprSyntaxError(f"unexpected token {tok[1]!r}", tok[2], (kind,))
        return self.advance()

    def parse(self) -> Expr:
        e = self.expr()
        tok = self.peek()
        if tok[0] != "end":
            raise ExprSyntaxError(f"trailing input {tok[1]!r}", tok[2], ("end of input",))
        return e

    def expr(self) -> Expr:
        e = self.term()
        while self.peek()[0] in ("+", "-"):
            op = self.advance()[0]
            rhs = self.term()
            e = _fold_binary(Add if op == "+" else Sub, e, rhs)
        return e

    def term(self) -> Expr:
        e = self.factor()
        while self.peek()[0] in ("*", "/"):
            op = self.advance()[0]
            rhs = self.factor()
            e = _fold_binary(Mul if op == "*" else Div, e, rhs)
        return e

    def factor(self) -> Expr:
        if self.peek()[0] == "-":
            self.advance()
            inner = self.factor()
            c = as_constant(inner)
            return Const(-c) if c is not None and isinstance(inner, Const) else Neg(inner)
        e = self.atom()
        if self.peek()[0] == "^":
            self.advance()
            e = Pow(e, self.exponent())
        return e

    def exponent(self) -> Fraction:
        parens = self.peek()[0] == "("
        if parens:
            self.advance()
        sign = 1
        if self.peek()[0] == "-":
            self.advance()
            sign = -1
        tok = self.expect("num")
        if "." in tok[1]:
            raise ExprSyntaxError("exponent must be an integer or half-integer", tok[2])
        p = sign * int(tok[1])
        q = 1
        if parens and self.peek()[0] == "/":
            self.advance()
            den = self.expect("num")
            if den[1] != "2":
                raise ExprSyntaxError("only half-integer exponents are supported", den[2], ("2",))
            q = 2
        if parens:
            self.expect(")")
        return Fraction(p, q)

    def atom(self) -> Expr:
        tok = self.peek()
        kind, text, offset = tok
        if kind == "num":
            self.advance()
            return Const(Exact.rational(Fraction(text)))
        if kind == "(":
            self.advance()
            e = self.expr()
            self.expect(")")
            return e
        if kind == "ident":
            self.advance()
            if text == "x":
                return X
            if text == "pi":
                return PI_CONST
            if text == "e":
                return E_CONST
            if text in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return FUNCTIONS[text](arg)
            raise UnknownIdentifierError(text, offset)
        raise ExprSyntaxError(
            f"unexpected token {text!r}", offset, ("number", "pi", "e", "x", "function", "(")
        )


def _fold_binary(node_cls, left: Expr, right: Expr) -> Expr:
    """Combine two subtrees, folding pure-constant arithmetic when exact."""
    a, b = as_constant(left), as_constant(right)
    if a is not None and b is not None:
        folded = None
        if node_cls is Add:
            folded = _exact_add(a, b)
        elif node_cls is Sub:
            folded = _exact_add(a, -b)
        elif node_cls is Mul:
            folded = _exact_mul(a, b)
        elif node_cls is Div:
            folded = _exact_div(a, b)
        if folded is not None:
            return Const(folded)
    return node_cls(left, right)


def parse_expr(text: str) -> Expr:
    """Parse text into an expression tree.

    Pure-constant arithmetic that stays exact (3*pi/2, 0.5, -8*pi) folds into
    a single constant node, so parse(format(e)) is a fixed point.
    """
    if not text or not text.strip():
        raise ExprSyntaxError("empty input", 0)
    return _Parser(text).parse()


# ---------------------------------------------------------------------------
# Printer
# ---------------------------------------------------------------------------

_PREC_ADD = 10
_PREC_NEG = 15
_PREC_MUL = 20
_PREC_POW = 30
_PREC_ATOM = 40


def _prec(e: Expr) -> int:
    if isinstance(e, (Add, Sub)):
        return _PREC_ADD
    if isinstance(e, Neg):
        return _PREC_NEG
    if isinstance(e, Const) and e.value.to_float() < 0:
        return _PREC_NEG  # renders with a leading minus
    if isinstance(e, (Mul, Div)):
        return _PREC_MUL
    if isinstance(e, Pow):
        return _PREC_POW
    return _PREC_ATOM


def _wrap(e: Expr, min_prec: int) -> str:
    s = format_expr(e)
    return f"({s})" if _prec(e) < min_prec else s


def format_expr(e: Expr) -> str:
    """Deterministic text form; reparsing yields an AST-equal tree."""
    if isinstance(e, Const):
        return e.value.render()
    if isinstance(e, Var):
        return "x"
    if isinstance(e, Neg):
        return "-" + _wrap(e.arg, _PREC_POW)
    if isinstance(e, Add):
        return f"{_wrap(e.left, _PREC_ADD)} + {_wrap(e.right, _PREC_ADD + 1)}"
    if isinstance(e, Sub):
        return f"{_wrap(e.left, _PREC_ADD)} - {_wrap(e.right, _PREC_ADD + 1)}"
    if isinstance(e, Mul):
        return f"{_wrap(e.left, _PREC_MUL)}*{_wrap(e.right, _PREC_MUL + 1)}"
    if isinstance(e, Div):
        return f"{_wrap(e.left, _PREC_MUL)}/{_wrap(e.right, _PREC_MUL + 1)}"
    if isinstance(e, Pow):
        p, q = e.exponent.numerator, e.exponent.denominator
        if q == 1 and p >= 0:
            exp_text = str(p)
        elif q == 1:
            exp_text = f"({p})"
        else:
            exp_text = f"({p}/2)"
        return f"{_wrap(e.base, _PREC_ATOM)}^{exp_text}"
    for name, cls in FUNCTIONS.items():
        if isinstance(e, cls):
            return f"{name}({format_expr(e.arg)})"
    raise TypeError(f"cannot format {e!r}")


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def eval_at(e: Expr, x: float):
    """Value of the rule at x, or None where any subterm is undefined.

    Undefinedness is a value, not an error: domain inference samples this.
    """
    v = _eval(e, x)
    if v is not None and math.isnan(v):
        return None
    return v


def _eval(e: Expr, x: float):
    if isinstance(e, Const):
        return e.value.to_float()
    if isinstance(e, Var):
        return x
    if isinstance(e, Neg):
        v = _eval(e.arg, x)
        return None if v is None else -v
    if isinstance(e, (Add, Sub, Mul, Div)):
        a = _eval(e.left, x)
        if a is None:
            return None
        b = _eval(e.right, x)
        if b is None:
            return None
        try:
            if isinstance(e, Add):
                return a + b
            if isinstance(e, Sub):
                return a - b
            if isinstance(e, Mul):
                return a * b
            if b == 0:
                return None
            return a / b
        except OverflowError:
            return math.inf
    if isinstance(e, Pow):
        v = _eval(e.base, x)
        if v is None:
            return None
        p, q = e.exponent.numerator, e.exponent.denominator
        try:
            if q == 1:
                if v == 0 and p < 0:
                    return None
                return float(v) ** p if p >= 0 else 1.0 / float(v) ** (-p)
            if v < 0 or (v == 0 and p < 0):
                return None
            return math.pow(v, p / 2.0)
        except OverflowError:
            return math.inf
    v = _eval(e.arg, x)
    if v is None:
        return None
    if isinstance(e, Abs):
        return abs(v)
    if isinstance(e, Sqrt):
        return math.sqrt(v) if v >= 0 else None
    if isinstance(e, Exp):
        try:
            return math.exp(v)
        except OverflowError:
            return math.inf
    if isinstance(e, Ln):
        if v <= 0:
            return None
        return math.log(v) if not math.isinf(v) else math.inf
    if isinstance(e, Sin):
        return math.sin(v) if not math.isinf(v) else None
    if isinstance(e, Cos):
        return math.cos(v) if not math.isinf(v) else None
    if isinstance(e, Tan):
        if math.isinf(v) or math.cos(v) == 0.0:
            return None
        return math.tan(v)
    if isinstance(e, Sec):
        if math.isinf(v):
            return None
        c = math.cos(v)
        return None if c == 0.0 else 1.0 / c
    if isinstance(e, Arcsin):
        return math.asin(v) if -1.0 <= v <= 1.0 else None
    if isinstance(e, Arctan):
        return math.atan(v)
    raise TypeError(f"cannot evaluate {e!r}")


# ---------------------------------------------------------------------------
# Structure helpers
# ---------------------------------------------------------------------------

def subst_var(e: Expr, replacement: Expr) -> Expr:
    """e with every occurrence of the variable replaced (composition)."""
    if isinstance(e, (Const,)):
        return e
    if isinstance(e, Var):
        return replacement
    if isinstance(e, Neg):
        return Neg(subst_var(e.arg, replacement))
    if isinstance(e, (Add, Sub, Mul, Div)):
        return type(e)(subst_var(e.left, replacement), subst_var(e.right, replacement))
    if isinstance(e, Pow):
        return Pow(subst_var(e.base, replacement), e.exponent)
    return type(e)(subst_var(e.arg, replacement))


def children(e: Expr) -> tuple[Expr, ...]:
    if isinstance(e, (Const, Var)):
        return ()
    if isinstance(e, (Add, Sub, Mul, Div)):
        return (e.left, e.right)
    if isinstance(e, Pow):
        return (e.base,)
    return (e.arg,)


def subtrees(e: Expr):
    yield e
    for c in children(e):
        yield from subtrees(c)


def contains_var(e: Expr) -> bool:
    return any(isinstance(s, Var) for s in subtrees(e))


def is_total(e: Expr) -> bool:
    """True when the natural domain is provably all of R (structurally)."""
    if isinstance(e, (Const, Var)):
        return True
    if isinstance(e, Neg):
        return is_total(e.arg)
    if isinstance(e, (Add, Sub, Mul)):
        return is_total(e.left) and is_total(e.right)
    if isinstance(e, Pow):
        return e.exponent.denominator == 1 and e.exponent >= 0 and is_total(e.base)
    if isinstance(e, (Abs, Exp, Sin, Cos, Arctan)):
        return is_total(e.arg)
    return False


# ---------------------------------------------------------------------------
# Simplification (sound, domain-preserving rewrites only)
# ---------------------------------------------------------------------------

def simplify_basic(e: Expr) -> Expr:
    """Constant folding, 0/1 identities, double negation, coefficient collection.

    Rewrites that would enlarge the natural domain are never applied; a term
    may cancel out of a sum only when it is defined on all of R.
    """
    return _simp(e)


def _simp(e: Expr) -> Expr:
    if isinstance(e, (Const, Var)):
        return e
    if isinstance(e, (Add, Sub)):
        return _rebuild_sum(_linear_terms(e))
    if isinstance(e, Neg):
        a = _simp(e.arg)
        c = as_constant(a)
        if c is not None:
            return Const(-c)
        if isinstance(a, Neg):
            return a.arg
        return _rebuild_sum(_linear_terms(Neg(a), presimplified=True))
    if isinstance(e, Mul):
        return _simp_mul(_simp(e.left), _simp(e.right))
    if isinstance(e, Div):
        return _simp_div(_simp(e.left), _simp(e.right))
    if isinstance(e, Pow):
        return _simp_pow(_simp(e.base), e.exponent)
    arg = _simp(e.arg)
    if isinstance(e, Abs):
        c = as_constant(arg)
        if c is not None and c.is_exact:
            return Const(c if c.coef >= 0 else -c)
        if isinstance(arg, (Neg, Abs)):
            return Abs(arg.arg) if isinstance(arg, Neg) else arg
    if isinstance(e, Sqrt) and isinstance(arg, Pow) and arg.exponent == 2:
        return Abs(arg.base)
    return type(e)(arg)


def _simp_mul(a: Expr, b: Expr) -> Expr:
    ca, cb = as_constant(a), as_constant(b)
    if ca is not None and cb is not None:
        folded = _exact_mul(ca, cb)
        if folded is not None:
            return Const(folded)
    if isinstance(a, Neg):
        return _simp(Neg(Mul(a.arg, b)))
    if isinstance(b, Neg):
        return _simp(Neg(Mul(a, b.arg)))
    if cb is not None and ca is None:
        a, b, ca, cb = b, a, cb, ca  # constant coefficient goes on the left
    if ca is not None:
        if ca.kind == RAT and ca.coef == 1:
            return b
        if ca.kind == RAT and ca.coef == -1:
            return _simp(Neg(b))
        if ca.kind == RAT and ca.coef == 0 and is_total(b):
            return ZERO
        inner_c, inner = _split_coefficient(b)
        if inner_c is not None:
            merged = _exact_mul(ca, inner_c)
            if merged is not None:
                return _simp(Mul(Const(merged), inner))
    return Mul(a, b)


def _simp_div(a: Expr, b: Expr) -> Expr:
    ca, cb = as_constant(a), as_constant(b)
    if ca is not None and cb is not None:
        folded = _exact_div(ca, cb)
        if folded is not None:
            return Const(folded)
    if isinstance(a, Neg):
        return _simp(Neg(Div(a.arg, b)))
    if isinstance(b, Neg):
        return _simp(Neg(Div(a, b.arg)))
    if cb is not None and cb.is_exact and cb.coef != 0:
        if cb.kind == RAT and cb.coef == 1:
            return a
        if cb.kind == RAT:
            return _simp(Mul(Const(Exact.rational(1 / cb.coef)), a))
    return Div(a, b)


def _simp_pow(base: Expr, exponent: Fraction) -> Expr:
    if exponent == 1:
        return base
    if exponent == 0 and is_total(base):
        return ONE
    c = as_constant(base)
    if c is not None and c.kind == RAT and exponent.denominator == 1:
        if c.coef != 0 or exponent >= 0:
            return Const(Exact.rational(c.coef**exponent.numerator))
    return Pow(base, exponent)


def _split_coefficient(e: Expr):
    """e as (constant, rest) when it has the shape c*rest, else (None, e)."""
    if isinstance(e, Mul):
        c = as_constant(e.left)
        if c is not None:
            return c, e.right
        c = as_constant(e.right)
        if c is not None:
            return c, e.left
    return None, e


def _linear_terms(e: Expr, presimplified: bool = False):
    """Flatten a +/- chain into (constant accumulator, [(coef, term), ...])."""
    acc = Exact.rational(0)
    terms: list[tuple[Exact, Expr]] = []

    def visit(node: Expr, sign: int):
        nonlocal acc
        if isinstance(node, Add):
            visit(node.left, sign)
            visit(node.right, sign)
            return
        if isinstance(node, Sub):
            visit(node.left, sign)
            visit(node.right, -sign)
            return
        if isinstance(node, Neg):
            visit(node.arg, -sign)
            return
        leaf = node if presimplified else _simp(node)
        if isinstance(leaf, (Add, Sub, Neg)):
            visit(leaf, sign)
            return
        c = as_constant(leaf)
        if c is not None:
            merged = _exact_add(acc, c if sign > 0 else -c)
            if merged is not None:
                acc = merged
                return
        coef, rest = _split_coefficient(leaf)
        if coef is None:
            coef = Exact.rational(sign)
        elif sign < 0:
            coef = -coef
        for i, (c0, t0) in enumerate(terms):
            if t0 == rest:
                merged = _exact_add(c0, coef)
                if merged is not None:
                    terms[i] = (merged, t0)
                    return
        terms.append((coef, rest))

    visit(e, 1)
    return acc, terms


def _rebuild_sum(parts) -> Expr:
    acc, terms = parts
    kept = [(c, t) for (c, t) in terms if not (c.kind == RAT and c.coef == 0 and is_total(t))]
    out: Expr | None = None
    for coef, term in kept:
        piece_negative = coef.coef < 0
        mag = -coef if piece_negative else coef
        piece = term if (mag.kind == RAT and mag.coef == 1) else _simp_mul(Const(mag), term)
        if out is None:
            out = Neg(piece) if piece_negative else piece
        else:
            out = Sub(out, piece) if piece_negative else Add(out, piece)
    if acc.kind != RAT or acc.coef != 0:
        if out is None:
            return Const(acc)
        if acc.coef < 0:
            return Sub(out, Const(-acc))
        return Add(out, Const(acc))
    return out if out is not None else ZERO
