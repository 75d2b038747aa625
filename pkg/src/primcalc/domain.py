"""Interval-union domains inside a finite working window.

A domain set is an ordered union of pairwise disjoint, non-mergeable
intervals with exact endpoints.  Sets are authoritative only inside their
window; window edges always render as open endpoints.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable

from .exact import Exact, to_exact
from .errors import EmptyDomainError
from .calculus import DEFAULT_TOLERANCES, Tolerances, find_zeros, window_pair
from .expr import (
    Abs, Add, Arcsin, Arctan, Const, Cos, Div, Exp, Expr, Ln, Mul, Neg, Pow,
    Sec, Sin, Sqrt, Sub, Tan, Var,
    eval_at,
)


@dataclass(frozen=True)
class Interval:
    lo: Exact
    hi: Exact
    lo_closed: bool
    hi_closed: bool

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"not an interval: lo={self.lo} hi={self.hi}")
        if (not self.lo.is_finite and self.lo_closed) or (not self.hi.is_finite and self.hi_closed):
            raise ValueError("an infinite endpoint must be open")

    def contains(self, x: Exact, tol: float = 0.0) -> bool:
        if _eq(x, self.lo, tol):
            return self.lo_closed
        if _eq(x, self.hi, tol):
            return self.hi_closed
        return self.lo < x < self.hi

    def midpoint(self) -> float:
        return 0.5 * (self.lo.to_float() + self.hi.to_float())

    def render(self) -> str:
        left = "[" if self.lo_closed else "]"
        right = "]" if self.hi_closed else "["
        return f"{left}{self.lo.render()},{self.hi.render()}{right}"

    def to_json(self) -> dict:
        return {
            "lo": self.lo.render(),
            "hi": self.hi.render(),
            "lo_closed": self.lo_closed,
            "hi_closed": self.hi_closed,
        }

    def __str__(self) -> str:
        return self.render()


@dataclass(frozen=True)
class DomainSet:
    parts: tuple[Interval, ...]
    window: tuple[Exact, Exact]

    def render(self) -> str:
        return " ∪ ".join(p.render() for p in self.parts)

    def to_json(self) -> dict:
        return {
            "parts": [p.to_json() for p in self.parts],
            "window": [self.window[0].render(), self.window[1].render()],
        }

    def contains_point(self, x, tol: float = 0.0) -> bool:
        xe = x if isinstance(x, Exact) else Exact.from_float(float(x))
        return any(p.contains(xe, tol) for p in self.parts)

    def __str__(self) -> str:
        return self.render()


def _eq(a: Exact, b: Exact, tol: float = 0.0) -> bool:
    if a == b:
        return True
    if tol > 0.0:
        return a.close_to(b, tol)
    return False


def _lt(a: Exact, b: Exact) -> bool:
    return a < b


def interval(lo, hi, lo_closed: bool = False, hi_closed: bool = False) -> Interval:
    return Interval(to_exact(lo), to_exact(hi), lo_closed, hi_closed)


def _canonical(intervals: Iterable[Interval]) -> tuple[Interval, ...]:
    """Sort and merge so no two parts overlap or touch with a shared point."""
    items = sorted(intervals, key=lambda p: (p.lo.to_float(), p.hi.to_float()))
    out: list[Interval] = []
    for part in items:
        if not out:
            out.append(part)
            continue
        prev = out[-1]
        if _lt(part.lo, prev.hi) or (
            _eq(part.lo, prev.hi) and (prev.hi_closed or part.lo_closed)
        ):
            hi, hi_closed = part.hi, part.hi_closed
            if _lt(part.hi, prev.hi) or (_eq(part.hi, prev.hi) and prev.hi_closed):
                hi, hi_closed = prev.hi, prev.hi_closed
            out[-1] = Interval(prev.lo, hi, prev.lo_closed, hi_closed)
        else:
            out.append(part)
    return tuple(out)


def domain_set(intervals: Iterable[Interval], window) -> DomainSet:
    parts = _canonical(intervals)
    if not parts:
        raise EmptyDomainError("no interval of positive length")
    return DomainSet(parts, window_pair(window))


def full_window(window) -> DomainSet:
    wlo, whi = window_pair(window)
    return DomainSet((Interval(wlo, whi, False, False),), (wlo, whi))


# ---------------------------------------------------------------------------
# Set operations
# ---------------------------------------------------------------------------

def components(d: DomainSet) -> list[Interval]:
    """Connected components in ascending order (one free constant each)."""
    return list(d.parts)


def intersect(a: DomainSet, b: DomainSet, tol: Tolerances = DEFAULT_TOLERANCES) -> DomainSet:
    if not (_eq(a.window[0], b.window[0], tol.snap_tol) and _eq(a.window[1], b.window[1], tol.snap_tol)):
        raise ValueError(f"window mismatch: {a.window} vs {b.window}")
    parts = _intersect_parts(a.parts, b.parts)
    if not parts:
        raise EmptyDomainError("intersection has no interval of positive length")
    return DomainSet(tuple(parts), a.window)


def _intersect_parts(pa, pb) -> list[Interval]:
    out = []
    for p in pa:
        for q in pb:
            lo, lo_closed = _max_endpoint(p.lo, p.lo_closed, q.lo, q.lo_closed, lower=True)
            hi, hi_closed = _max_endpoint(p.hi, p.hi_closed, q.hi, q.hi_closed, lower=False)
            if _lt(lo, hi):
                out.append(Interval(lo, hi, lo_closed, hi_closed))
    return list(_canonical(out))


def _max_endpoint(a: Exact, a_closed: bool, b: Exact, b_closed: bool, lower: bool):
    if _eq(a, b):
        return a, a_closed and b_closed
    if lower:
        return (a, a_closed) if _lt(b, a) else (b, b_closed)
    return (a, a_closed) if _lt(a, b) else (b, b_closed)


def puncture(parts: Iterable[Interval], points: Iterable[Exact], tol: float = 1e-9) -> list[Interval]:
    """Remove isolated points, splitting or opening intervals as needed."""
    out = list(parts)
    for z in points:
        next_out = []
        for p in out:
            if _eq(z, p.lo, tol):
                next_out.append(Interval(p.lo, p.hi, False, p.hi_closed))
            elif _eq(z, p.hi, tol):
                next_out.append(Interval(p.lo, p.hi, p.lo_closed, False))
            elif p.lo < z < p.hi:
                next_out.append(Interval(p.lo, z, p.lo_closed, False))
                next_out.append(Interval(z, p.hi, False, p.hi_closed))
            else:
                next_out.append(p)
        out = next_out
    return out


def fill_points(d: DomainSet, points: Iterable[Exact], tol: float = 1e-9) -> DomainSet:
    """Merge consecutive parts that are separated only by the given points."""
    parts = list(d.parts)
    for z in points:
        merged = []
        i = 0
        while i < len(parts):
            p = parts[i]
            if (
                i + 1 < len(parts)
                and _eq(p.hi, z, tol)
                and not p.hi_closed
                and _eq(parts[i + 1].lo, z, tol)
                and not parts[i + 1].lo_closed
            ):
                q = parts[i + 1]
                merged.append(Interval(p.lo, q.hi, p.lo_closed, q.hi_closed))
                i += 2
            else:
                merged.append(p)
                i += 1
        parts = merged
    return DomainSet(tuple(parts), d.window)


def is_subset(a: DomainSet, b: DomainSet, tol: float = 1e-9) -> bool:
    for p in a.parts:
        if not any(_part_within(p, q, tol) for q in b.parts):
            return False
    return True


def _part_within(p: Interval, q: Interval, tol: float) -> bool:
    lo_ok = _lt(q.lo, p.lo) or (_eq(q.lo, p.lo, tol) and (q.lo_closed or not p.lo_closed))
    hi_ok = _lt(p.hi, q.hi) or (_eq(p.hi, q.hi, tol) and (q.hi_closed or not p.hi_closed))
    return lo_ok and hi_ok


def is_standard(d: DomainSet) -> tuple[bool, list[str]]:
    """Validate the four separation clauses for an externally built set.

    Sets produced by this module are standard by construction; this check
    exists for hand-made ones.
    """
    violations: list[str] = []
    for p in d.parts:
        if not p.lo < p.hi:
            violations.append(f"empty-interval at {p.render()}")
        if (not p.lo.is_finite and p.lo_closed) or (not p.hi.is_finite and p.hi_closed):
            violations.append(f"infinite-closed at {p.render()}")
    for prev, nxt in zip(d.parts, d.parts[1:]):
        if _lt(nxt.lo, prev.hi) or (_lt(nxt.lo, prev.lo)):
            violations.append(f"overlap at {nxt.lo.render()}")
        elif _eq(nxt.lo, prev.hi) and (prev.hi_closed or nxt.lo_closed):
            if prev.hi_closed and nxt.lo_closed:
                violations.append(f"overlap at {nxt.lo.render()}")
            else:
                violations.append(f"mergeable-adjacency at {nxt.lo.render()}")
    return (not violations), violations


def domains_equal(a: DomainSet, b: DomainSet, tol: float = 1e-9):
    """Exact-first comparison; returns (equal, first mismatch point or None)."""
    if len(a.parts) == len(b.parts):
        same = True
        for p, q in zip(a.parts, b.parts):
            if not (
                _eq(p.lo, q.lo, tol) and _eq(p.hi, q.hi, tol)
                and p.lo_closed == q.lo_closed and p.hi_closed == q.hi_closed
            ):
                same = False
                break
        if same:
            return True, None
    candidates: list[Exact] = []
    for s in (a, b):
        for p in s.parts:
            candidates.append(p.lo)
            candidates.append(p.hi)
            candidates.append(Exact.from_float(p.midpoint()))
    witness = None
    for x in sorted(candidates, key=lambda v: v.to_float()):
        if not x.is_finite:
            continue
        if a.contains_point(x, tol) != b.contains_point(x, tol):
            witness = x
            break
    return False, witness


# ---------------------------------------------------------------------------
# Natural-domain inference
# ---------------------------------------------------------------------------

def natural_domain(e: Expr, window, tol: Tolerances = DEFAULT_TOLERANCES) -> DomainSet:
    """Largest subset of the window where the rule evaluates to a real.

    Endpoints come from per-operator rules plus zero isolation of
    denominators, log arguments, and radicands; they snap to exact values.
    """
    wlo, whi = window_pair(window)
    return _natural_domain_cached(e, wlo, whi, tol)


@lru_cache(maxsize=None)
def _natural_domain_cached(e: Expr, wlo: Exact, whi: Exact, tol: Tolerances) -> DomainSet:
    window = (wlo, whi)
    parts = _dom(e, window, tol)
    if not parts:
        raise EmptyDomainError(f"{e} is nowhere defined in {wlo.render()}..{whi.render()}")
    return DomainSet(tuple(_canonical(parts)), window)


def _dom(e: Expr, window, tol: Tolerances) -> list[Interval]:
    wlo, whi = window
    full = [Interval(wlo, whi, False, False)]
    if isinstance(e, (Const, Var)):
        return full
    if isinstance(e, Neg):
        return _dom(e.arg, window, tol)
    if isinstance(e, (Add, Sub, Mul)):
        return _intersect_parts(_dom(e.left, window, tol), _dom(e.right, window, tol))
    if isinstance(e, Div):
        base = _intersect_parts(_dom(e.left, window, tol), _dom(e.right, window, tol))
        return puncture(base, _zeros_of(e.right, window, tol), tol.snap_tol)
    if isinstance(e, Pow):
        base = _dom(e.base, window, tol)
        p = e.exponent
        if p.denominator == 1:
            if p >= 0:
                return base
            return puncture(base, _zeros_of(e.base, window, tol), tol.snap_tol)
        if p > 0:
            return _region(e.base, base, window, strict=False, tol=tol)
        return _region(e.base, base, window, strict=True, tol=tol)
    if isinstance(e, Sqrt):
        return _region(e.arg, _dom(e.arg, window, tol), window, strict=False, tol=tol)
    if isinstance(e, Ln):
        if isinstance(e.arg, Abs):
            inner = e.arg.arg
            return puncture(_dom(inner, window, tol), _zeros_of(inner, window, tol), tol.snap_tol)
        return _region(e.arg, _dom(e.arg, window, tol), window, strict=True, tol=tol)
    if isinstance(e, (Tan, Sec)):
        base = _dom(e.arg, window, tol)
        return puncture(base, find_zeros(Cos(e.arg), window, tol), tol.snap_tol)
    if isinstance(e, Arcsin):
        base = _dom(e.arg, window, tol)
        one = Const(Exact.rational(1))
        lo_side = _region(Add(e.arg, one), base, window, strict=False, tol=tol)
        hi_side = _region(Sub(one, e.arg), base, window, strict=False, tol=tol)
        return _intersect_parts(lo_side, hi_side)
    if isinstance(e, (Abs, Exp, Sin, Cos, Arctan)):
        return _dom(e.arg, window, tol)
    raise TypeError(f"no domain rule for {e!r}")


def _zeros_of(u: Expr, window, tol: Tolerances) -> list[Exact]:
    """Zero set of u, unwrapping structure that preserves or unions zeros."""
    if isinstance(u, (Neg, Abs, Sqrt)):
        return _zeros_of(u.arg, window, tol)
    if isinstance(u, Pow) and u.exponent > 0:
        return _zeros_of(u.base, window, tol)
    if isinstance(u, Mul):
        left = _zeros_of(u.left, window, tol)
        right = _zeros_of(u.right, window, tol)
        out = list(left)
        for z in right:
            if not any(z.close_to(w, tol.snap_tol) for w in out):
                out.append(z)
        return sorted(out, key=lambda s: s.to_float())
    if isinstance(u, Div):
        return _zeros_of(u.left, window, tol)
    return find_zeros(u, window, tol)


def _region(u: Expr, base: list[Interval], window, strict: bool, tol: Tolerances) -> list[Interval]:
    """Sub-parts of base where u > 0 (strict) or u >= 0 (zeros kept, closed)."""
    zeros = find_zeros(u, window, tol)
    zero_floats = [z.to_float() for z in zeros]
    out: list[Interval] = []
    for part in base:
        cuts = [z for z, zf in zip(zeros, zero_floats)
                if part.lo.to_float() < zf < part.hi.to_float()
                and not _eq(z, part.lo, tol.snap_tol) and not _eq(z, part.hi, tol.snap_tol)]
        edges: list[tuple[Exact, bool, bool]] = []  # (point, closed_here, is_cut)
        edges.append((part.lo, part.lo_closed, False))
        for z in cuts:
            edges.append((z, not strict, True))
        edges.append((part.hi, part.hi_closed, False))
        for (lo, lo_c, lo_cut), (hi, hi_c, hi_cut) in zip(edges, edges[1:]):
            lof, hif = lo.to_float(), hi.to_float()
            sign = None
            for t in (0.5, 0.25, 0.75):
                v = eval_at(u, lof + (hif - lof) * t)
                if v is not None and v != 0.0:
                    sign = v > 0
                    break
                if v == 0.0:
                    sign = None if strict else True
                    break
            if not sign:
                continue
            lo_closed, hi_closed = lo_c, hi_c
            if not lo_cut and lo_closed:
                lo_closed = _endpoint_ok(u, lo, strict, tol)
            if not hi_cut and hi_closed:
                hi_closed = _endpoint_ok(u, hi, strict, tol)
            if _lt(lo, hi):
                out.append(Interval(lo, hi, lo_closed, hi_closed))
    return list(_canonical(out))


def _endpoint_ok(u: Expr, p: Exact, strict: bool, tol: Tolerances) -> bool:
    v = eval_at(u, p.to_float())
    if v is None:
        return False
    if strict:
        return v > tol.snap_tol
    return v >= -tol.snap_tol
