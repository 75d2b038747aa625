"""Symbolic differentiation plus the numeric oracles behind every check.

Zero isolation follows the monotone-partition argument: the window is split
at the zeros of the derivative, each monotone piece holds at most one zero,
and bisection pins it down.  All routines are deterministic (fixed grids).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Callable, Optional

from .exact import Exact, snap, to_exact
from .errors import (
    DomainViolationError,
    EmptyDomainError,
    NonDifferentiableError,
    ResolutionFailureError,
    ToleranceNotMetError,
    UndefinedNearError,
)
from .expr import (
    Abs, Add, Arcsin, Arctan, Const, Cos, Div, Exp, Expr, Ln, Mul, Neg, Pow,
    Sec, Sin, Sqrt, Sub, Tan, Var,
    eval_at, simplify_basic,
)


@dataclass(frozen=True)
class Tolerances:
    """Numeric knobs; the defaults match the documented behavior."""

    scan_points: int = 4096
    bisect_tol: float = 1e-12
    snap_tol: float = 1e-9
    derivative_rel_tol: float = 1e-5
    quadrature_tol: float = 1e-10
    quadrature_max_panels: int = 10_000
    edge_margin: float = 1e-7
    tangential_value_tol: float = 1e-10


DEFAULT_TOLERANCES = Tolerances()


def window_pair(window) -> tuple[Exact, Exact]:
    lo, hi = window
    return to_exact(lo), to_exact(hi)


# ---------------------------------------------------------------------------
# Symbolic differentiation
# ---------------------------------------------------------------------------

def differentiate(e: Expr) -> Expr:
    """Symbolic derivative, valid on the interior of the natural domain.

    abs differentiates as u/abs(u) (off zeros of u); ln(abs(u)) collapses to
    u'/u directly, which is the same function.
    """
    return simplify_basic(_diff(e))


def _diff(e: Expr) -> Expr:
    if isinstance(e, Const):
        return Const(Exact.rational(0))
    if isinstance(e, Var):
        return Const(Exact.rational(1))
    if isinstance(e, Neg):
        return Neg(_diff(e.arg))
    if isinstance(e, Add):
        return Add(_diff(e.left), _diff(e.right))
    if isinstance(e, Sub):
        return Sub(_diff(e.left), _diff(e.right))
    if isinstance(e, Mul):
        return Add(Mul(_diff(e.left), e.right), Mul(e.left, _diff(e.right)))
    if isinstance(e, Div):
        num = Sub(Mul(_diff(e.left), e.right), Mul(e.left, _diff(e.right)))
        return Div(num, Pow(e.right, Fraction(2)))
    if isinstance(e, Pow):
        p = e.exponent
        if p == 0:
            return Const(Exact.rational(0))
        scaled = Mul(Const(Exact.rational(p)), Pow(e.base, p - 1))
        return Mul(scaled, _diff(e.base))
    if isinstance(e, Abs):
        return Mul(Div(e.arg, Abs(e.arg)), _diff(e.arg))
    if isinstance(e, Sqrt):
        return Div(_diff(e.arg), Mul(Const(Exact.rational(2)), Sqrt(e.arg)))
    if isinstance(e, Exp):
        return Mul(Exp(e.arg), _diff(e.arg))
    if isinstance(e, Ln):
        inner = e.arg.arg if isinstance(e.arg, Abs) else e.arg
        return Div(_diff(inner), inner)
    if isinstance(e, Sin):
        return Mul(Cos(e.arg), _diff(e.arg))
    if isinstance(e, Cos):
        return Mul(Neg(Sin(e.arg)), _diff(e.arg))
    if isinstance(e, Tan):
        return Mul(Pow(Sec(e.arg), Fraction(2)), _diff(e.arg))
    if isinstance(e, Sec):
        return Mul(Mul(Sec(e.arg), Tan(e.arg)), _diff(e.arg))
    if isinstance(e, Arcsin):
        return Div(_diff(e.arg), Sqrt(Sub(Const(Exact.rational(1)), Pow(e.arg, Fraction(2)))))
    if isinstance(e, Arctan):
        return Div(_diff(e.arg), Add(Const(Exact.rational(1)), Pow(e.arg, Fraction(2))))
    raise NonDifferentiableError(f"no differentiation rule for {e!r}")


# ---------------------------------------------------------------------------
# Finite-difference oracles
# ---------------------------------------------------------------------------

def numeric_derivative(e: Expr, x: float) -> float:
    """Central difference with one Richardson step; independent of differentiate."""

    h = 1e-5 * max(1.0, abs(x))

    def central(step: float) -> float:
        up = eval_at(e, x + step)
        dn = eval_at(e, x - step)
        if up is None or dn is None:
            raise UndefinedNearError(f"probe undefined near x={x!r} (step {step:g})")
        return (up - dn) / (2.0 * step)

    d1 = central(h)
    d2 = central(h / 2.0)
    return (4.0 * d2 - d1) / 3.0


def one_sided_limit(f: Callable[[float], Optional[float]], p: float, side: int,
                    h0: float = 1e-3, steps: int = 13) -> Optional[float]:
    """Limit of f at p from one side (+1 from above, -1 from below).

    Returns a float, +-inf on clean divergence, or None when no stable
    behavior shows up at the sampled offsets.
    """
    vals = []
    h = h0 * max(1.0, abs(p))
    for _ in range(steps):
        v = f(p + side * h)
        if v is not None:
            vals.append(v)
        h /= 4.0
    if len(vals) < 3:
        return None
    tail = vals[-3:]
    if all(abs(v) > 1e8 for v in tail) and abs(tail[2]) >= abs(tail[1]) >= abs(tail[0]):
        return math.inf if tail[2] > 0 else -math.inf
    if any(math.isinf(v) for v in tail):
        return math.inf if tail[2] > 0 else -math.inf
    d1, d2 = tail[1] - tail[0], tail[2] - tail[1]
    if abs(d2) <= 1e-7 * (1.0 + abs(tail[2])) or abs(d2) < abs(d1):
        denom = d2 - d1
        if abs(denom) > 1e-300:
            aitken = tail[2] - d2 * d2 / denom
            if abs(aitken - tail[2]) < 1.0 + abs(tail[2]):
                return aitken
        return tail[2]
    return None


def one_sided_derivative(f: Callable[[float], Optional[float]], p: float, fp: float,
                         side: int, h0: float = 1e-3, steps: int = 9) -> Optional[float]:
    """One-sided difference quotient at p, Aitken-extrapolated.

    Handles both smooth endpoints (error ~ h) and square-root behavior
    (error ~ sqrt(h)): Aitken removes any geometric error term.
    """
    quotients = []
    h = h0
    for _ in range(steps):
        v = f(p + side * h)
        if v is not None and not math.isinf(v):
            quotients.append((v - fp) / (side * h))
        h /= 4.0
    if not quotients:
        return None
    for i in range(len(quotients) - 3, -1, -1):
        d0, d1, d2 = quotients[i], quotients[i + 1], quotients[i + 2]
        denom = d2 - 2.0 * d1 + d0
        if abs(denom) > 1e-9 * (1.0 + abs(d2)):
            return d2 - (d2 - d1) ** 2 / denom
    return quotients[-1]


# ---------------------------------------------------------------------------
# Quadrature
# ---------------------------------------------------------------------------

def quadrature(e: Expr, a, b, tol: Tolerances = DEFAULT_TOLERANCES) -> float:
    """Adaptive Simpson integral of e over [a, b] (sign-aware for b < a)."""
    af, bf = to_exact(a).to_float(), to_exact(b).to_float()
    if af == bf:
        return 0.0
    if af > bf:
        return -quadrature(e, bf, af, tol)

    def f(x: float) -> float:
        v = eval_at(e, x)
        if v is None:
            raise DomainViolationError(f"integrand undefined at x={x!r}")
        return v

    for i in range(129):
        f(af + (bf - af) * i / 128.0)

    state = {"panels": 0, "err": 0.0}

    def simpson(lo, flo, hi, fhi, mid, fmid) -> float:
        return (hi - lo) / 6.0 * (flo + 4.0 * fmid + fhi)

    def recurse(lo, flo, hi, fhi, mid, fmid, whole, budget, depth) -> float:
        lm, rm = (lo + mid) / 2.0, (mid + hi) / 2.0
        flm, frm = f(lm), f(rm)
        left = simpson(lo, flo, mid, fmid, lm, flm)
        right = simpson(mid, fmid, hi, fhi, rm, frm)
        delta = left + right - whole
        state["panels"] += 1
        if abs(delta) <= 15.0 * budget or depth >= 60 or state["panels"] >= tol.quadrature_max_panels:
            state["err"] += abs(delta) / 15.0
            return left + right + delta / 15.0
        return (recurse(lo, flo, mid, fmid, lm, flm, left, budget / 2.0, depth + 1)
                + recurse(mid, fmid, hi, fhi, rm, frm, right, budget / 2.0, depth + 1))

    fa, fb = f(af), f(bf)
    m = (af + bf) / 2.0
    fm = f(m)
    whole = simpson(af, fa, bf, fb, m, fm)
    result = recurse(af, fa, bf, fb, m, fm, whole, tol.quadrature_tol, 0)
    if state["panels"] >= tol.quadrature_max_panels and state["err"] > 100.0 * tol.quadrature_tol:
        raise ToleranceNotMetError(result, state["err"])
    return result


# ---------------------------------------------------------------------------
# Zero isolation
# ---------------------------------------------------------------------------

def _bisect(e: Expr, lo: float, hi: float, vlo: float, vhi: float, tol: float) -> float:
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        vm = eval_at(e, mid)
        if vm is None:
            mid += (hi - lo) * 1e-3
            vm = eval_at(e, mid)
            if vm is None:
                break
        if vm == 0.0:
            return mid
        if (vm > 0) == (vlo > 0):
            lo, vlo = mid, vm
        else:
            hi, vhi = mid, vm
    return 0.5 * (lo + hi)


def _scan_zero_candidates(e: Expr, lo: float, hi: float, n: int, bisect_tol: float) -> list[float]:
    """Sign-change scan on a midpoint grid; adjacent defined cells only."""
    h = (hi - lo) / n
    out: list[float] = []
    prev_x = prev_v = None
    for i in range(n):
        x = lo + (i + 0.5) * h
        v = eval_at(e, x)
        if v is None or math.isinf(v):
            prev_x = prev_v = None
            continue
        if v == 0.0:
            out.append(x)
        elif prev_v is not None and prev_v != 0.0 and (v > 0) != (prev_v > 0):
            out.append(_bisect(e, prev_x, x, prev_v, v, bisect_tol))
        prev_x, prev_v = x, v
    return out


def _is_pole(e: Expr, z: float, delta: float = 1e-7) -> bool:
    vals = [abs(v) for v in (eval_at(e, z - delta), eval_at(e, z + delta)) if v is not None]
    if not vals:
        return True
    return min(vals) > 1.0


@lru_cache(maxsize=None)
def _find_zeros_cached(e: Expr, wlo: Exact, whi: Exact, tol: Tolerances) -> tuple[Exact, ...]:
    lo, hi = wlo.to_float(), whi.to_float()
    n = tol.scan_points
    h = (hi - lo) / n

    candidates = _scan_zero_candidates(e, lo, hi, n, tol.bisect_tol)

    # Monotone partition: at most one zero of e between consecutive zeros of e'.
    try:
        de = differentiate(e)
        dzeros = _scan_zero_candidates(de, lo, hi, n, tol.bisect_tol)
    except NonDifferentiableError:
        dzeros = []
    bounds = [lo] + sorted(dzeros) + [hi]
    for a, b in zip(bounds, bounds[1:]):
        if b - a < 8.0 * tol.bisect_tol:
            continue
        margin = min(h / 16.0, (b - a) / 1024.0)
        va, vb = eval_at(e, a + margin), eval_at(e, b - margin)
        if va is None or vb is None or va == 0.0 or vb == 0.0:
            continue
        if (va > 0) != (vb > 0):
            candidates.append(_bisect(e, a + margin, b - margin, va, vb, tol.bisect_tol))
    # Tangential zeros sit at zeros of the derivative.
    for z in dzeros:
        v = eval_at(e, z)
        if v is not None and abs(v) <= tol.tangential_value_tol:
            candidates.append(z)

    merged: list[float] = []
    for z in sorted(candidates):
        if merged and abs(z - merged[-1]) <= 1e-8 * max(1.0, abs(z)):
            continue
        merged.append(z)
    kept = [z for z in merged if not _is_pole(e, z)]
    for z1, z2 in zip(kept, kept[1:]):
        if z2 - z1 < 4.0 * h:
            raise ResolutionFailureError(
                f"zeros at {z1!r} and {z2!r} are closer than 4*h = {4.0 * h:g}"
            )
    snapped: list[Exact] = []
    seen = set()
    for z in kept:
        s = snap(z, tol.snap_tol)
        key = s.render()
        if key not in seen:
            seen.add(key)
            snapped.append(s)
    return tuple(snapped)


def find_zeros(e: Expr, window, tol: Tolerances = DEFAULT_TOLERANCES) -> list[Exact]:
    """Zeros of e strictly inside the window, snapped to exact values."""
    wlo, whi = window_pair(window)
    return list(_find_zeros_cached(e, wlo, whi, tol))


# ---------------------------------------------------------------------------
# Sign charts
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SignChart:
    """Breakpoints (zeros and undefined points) and the sign between them."""

    breakpoints: tuple[Exact, ...]
    signs: tuple[str, ...]  # "+", "-", or "u" for a gap with no defined points
    window: tuple[Exact, Exact]

    def single_sign(self) -> Optional[str]:
        present = {s for s in self.signs if s != "u"}
        return present.pop() if len(present) == 1 else None


def sign_chart(e: Expr, window, tol: Tolerances = DEFAULT_TOLERANCES) -> SignChart:
    from . import domain as domain_mod  # deferred: domain builds on find_zeros

    wlo, whi = window_pair(window)
    zeros = find_zeros(e, (wlo, whi), tol)
    dom = domain_mod.natural_domain(e, (wlo, whi), tol)
    undef: list[Exact] = []
    for part in dom.parts:
        for endpoint in (part.lo, part.hi):
            if wlo < endpoint < whi:
                undef.append(endpoint)
    points: list[Exact] = []
    for p in sorted(list(zeros) + undef, key=lambda s: s.to_float()):
        if not points or not points[-1].close_to(p, tol.snap_tol):
            points.append(p)
    edges = [wlo.to_float()] + [p.to_float() for p in points] + [whi.to_float()]
    signs = []
    for a, b in zip(edges, edges[1:]):
        sign = "u"
        for t in (0.5, 0.25, 0.75, 0.125, 0.875):
            v = eval_at(e, a + (b - a) * t)
            if v is not None and v != 0.0 and not math.isinf(v):
                sign = "+" if v > 0 else "-"
                break
        signs.append(sign)
    return SignChart(tuple(points), tuple(signs), (wlo, whi))


# ---------------------------------------------------------------------------
# Continuity classification
# ---------------------------------------------------------------------------

def continuity_class(e: Expr, d) -> str:
    """"continuous", "c1", or "unknown" for e restricted to the domain set d.

    Every operator in the grammar is continuous on its natural domain, so a
    restriction of e to a subset of its natural domain is continuous; it is
    C1 when the derivative's natural domain still covers d.
    """
    from . import domain as domain_mod

    nd = domain_mod.natural_domain(e, d.window)
    if not domain_mod.is_subset(d, nd):
        return "unknown"
    try:
        de = differentiate(e)
        ndd = domain_mod.natural_domain(de, d.window)
    except (NonDifferentiableError, EmptyDomainError):
        return "continuous"
    if domain_mod.is_subset(d, ndd):
        return "c1"
    return "continuous"
