"""Exact scalar values: rationals, rational multiples of pi or e, floats, infinities.

Interval endpoints and literal constants are kept exact so that domain
endpoints like 3*pi/2 print and compare symbolically.  A float kind exists
as a fallback for computed values that do not snap to anything nicer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

RAT = "rat"
PI = "pi"
E = "e"
FLOAT = "float"
POS_INF = "+inf"
NEG_INF = "-inf"

_BASE_VALUE = {RAT: 1.0, PI: math.pi, E: math.e}


@dataclass(frozen=True)
class Exact:
    """A real number with an exact symbolic representation when possible.

    kind "rat": value is coef; kind "pi"/"e": value is coef*pi / coef*e;
    kind "float": value is approx (coef unused); infinities carry no payload.
    """

    kind: str
    coef: Fraction = Fraction(0)
    approx: float = 0.0

    @staticmethod
    def rational(value) -> "Exact":
        c = Fraction(value)
        return Exact(RAT, c, float(c))

    @staticmethod
    def pi_multiple(value) -> "Exact":
        c = Fraction(value)
        if c == 0:
            return Exact.rational(0)
        return Exact(PI, c, float(c) * math.pi)

    @staticmethod
    def e_multiple(value) -> "Exact":
        c = Fraction(value)
        if c == 0:
            return Exact.rational(0)
        return Exact(E, c, float(c) * math.e)

    @staticmethod
    def from_float(x: float) -> "Exact":
        if math.isinf(x):
            return POS_INFINITY if x > 0 else NEG_INFINITY
        return Exact(FLOAT, Fraction(0), x)

    @property
    def is_exact(self) -> bool:
        return self.kind in (RAT, PI, E)

    @property
    def is_finite(self) -> bool:
        return self.kind not in (POS_INF, NEG_INF)

    def to_float(self) -> float:
        if self.kind == POS_INF:
            return math.inf
        if self.kind == NEG_INF:
            return -math.inf
        if self.kind == FLOAT:
            return self.approx
        return float(self.coef) * _BASE_VALUE[self.kind]

    def __neg__(self) -> "Exact":
        if self.kind == POS_INF:
            return NEG_INFINITY
        if self.kind == NEG_INF:
            return POS_INFINITY
        if self.kind == FLOAT:
            return Exact(FLOAT, Fraction(0), -self.approx)
        return Exact(self.kind, -self.coef, -self.to_float())

    def __lt__(self, other: "Exact") -> bool:
        if self == other:
            return False
        return self.to_float() < other.to_float()

    def __le__(self, other: "Exact") -> bool:
        return self == other or self < other

    def __gt__(self, other: "Exact") -> bool:
        return other < self

    def __ge__(self, other: "Exact") -> bool:
        return other <= self

    def close_to(self, other: "Exact", tol: float = 1e-9) -> bool:
        """Equality for comparisons that must tolerate float endpoints."""
        if self == other:
            return True
        if not (self.is_finite and other.is_finite):
            return False
        if self.is_exact and other.is_exact:
            return False
        return abs(self.to_float() - other.to_float()) <= tol

    def render(self) -> str:
        if self.kind == POS_INF:
            return "inf"
        if self.kind == NEG_INF:
            return "-inf"
        if self.kind == FLOAT:
            return repr(self.approx)
        if self.kind == RAT:
            return _render_fraction(self.coef)
        sym = "pi" if self.kind == PI else "e"
        p, q = self.coef.numerator, self.coef.denominator
        if p == 1:
            head = sym
        elif p == -1:
            head = "-" + sym
        else:
            head = f"{p}*{sym}"
        return head if q == 1 else f"{head}/{q}"

    def __str__(self) -> str:
        return self.render()


POS_INFINITY = Exact(POS_INF, Fraction(0), math.inf)
NEG_INFINITY = Exact(NEG_INF, Fraction(0), -math.inf)
ZERO = Exact.rational(0)


def _render_fraction(c: Fraction) -> str:
    if c.denominator == 1:
        return str(c.numerator)
    return f"{c.numerator}/{c.denominator}"


def to_exact(v) -> Exact:
    """Coerce ints, Fractions, and floats (snapped) to Exact; pass Exact through."""
    if isinstance(v, Exact):
        return v
    if isinstance(v, (int, Fraction)):
        return Exact.rational(v)
    return snap(float(v))


def snap(x: float, tol: float = 1e-9, max_pi_den: int = 12, max_rat_den: int = 64) -> Exact:
    """Replace a float by a nearby exact value when one is close enough.

    Tries rational multiples of pi first (p/q*pi with q <= max_pi_den), then
    plain rationals (p/q with q <= max_rat_den); keeps the float otherwise.
    """
    if math.isinf(x):
        return POS_INFINITY if x > 0 else NEG_INFINITY
    if abs(x) <= tol:
        return ZERO
    c = Fraction(x / math.pi).limit_denominator(max_pi_den)
    if c != 0 and abs(x - float(c) * math.pi) <= tol:
        return Exact.pi_multiple(c)
    c = Fraction(x).limit_denominator(max_rat_den)
    if abs(x - float(c)) <= tol:
        return Exact.rational(c)
    return Exact.from_float(x)
