"""Functions as (rule, domain, codomain) triples and their primitive families.

Two functions are equivalent when their domains coincide and their
derivatives agree; the primitives of f form one equivalence class, carried
here as a base function plus one free constant per connected component.
A base may be "gap-filled": finitely many (point, value) plugs extend the
rule across removable undefined points, and verification switches to
one-sided difference checks there.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

from .exact import Exact, to_exact
from .errors import (
    ArityMismatchError,
    NotAPrimitiveError,
    ZeroScaleError,
)
from .calculus import (
    DEFAULT_TOLERANCES,
    Tolerances,
    differentiate,
    one_sided_derivative,
    one_sided_limit,
)
from .domain import (
    DomainSet,
    Interval,
    components,
    domains_equal,
    fill_points,
    intersect,
    is_standard,
    is_subset,
    natural_domain,
    puncture,
)
from .expr import Add, Const, Expr, Mul, Sub, eval_at, format_expr, simplify_basic

PLUG_POINT_TOL = 1e-9
DERIV_REL_TOL = 1e-8
ONE_SIDED_TOL = 1e-5
CONST_REL_TOL = 1e-8
LIMIT_TOL = 1e-7


@dataclass(frozen=True)
class Fn:
    """A function: rule, domain, codomain tag (always the reals here).

    plugs fill removable points the rule itself cannot reach; offsets add a
    constant per connected component (how piecewise-constant shifts are
    represented without a piecewise node).
    """

    rule: Expr
    domain: DomainSet
    codomain: str = "R"
    plugs: tuple[tuple[Exact, float], ...] = ()
    offsets: Optional[tuple[float, ...]] = None

    def eval(self, x: float) -> Optional[float]:
        for point, value in self.plugs:
            pf = point.to_float()
            if abs(x - pf) <= PLUG_POINT_TOL * max(1.0, abs(pf)):
                return value + self._offset_at(x)
        v = eval_at(self.rule, x)
        if v is None:
            return None
        return v + self._offset_at(x)

    def _offset_at(self, x: float) -> float:
        if not self.offsets:
            return 0.0
        idx = component_index(self.domain, x)
        return self.offsets[idx] if idx is not None else 0.0

    def describe(self) -> str:
        return f"{format_expr(self.rule)} on {self.domain.render()}"


def component_index(d: DomainSet, x: float, tol: float = 1e-9) -> Optional[int]:
    pad = tol * max(1.0, abs(x))
    for i, part in enumerate(d.parts):
        if part.lo.to_float() - pad <= x <= part.hi.to_float() + pad:
            return i
    return None


def make_fn(rule: Expr, domain: DomainSet,
            plugs: tuple[tuple[Exact, float], ...] = (),
            offsets: Optional[tuple[float, ...]] = None,
            tol: Tolerances = DEFAULT_TOLERANCES) -> Fn:
    """Construct a function triple, checking the domain invariants."""
    ok, violations = is_standard(domain)
    if not ok:
        raise ValueError(f"domain is not standard: {violations}")
    if offsets is not None and len(offsets) != len(domain.parts):
        raise ArityMismatchError(
            f"{len(offsets)} offsets for {len(domain.parts)} components"
        )
    nd = natural_domain(rule, domain.window, tol)
    if plugs:
        nd = fill_points(nd, [p for p, _ in plugs], tol.snap_tol)
    if not is_subset(domain, nd, tol.snap_tol):
        raise ValueError(
            f"domain {domain.render()} is not contained in the rule's "
            f"natural domain {nd.render()}"
        )
    return Fn(rule, domain, "R", tuple(plugs), offsets)


def fn_on_natural_domain(rule: Expr, window, tol: Tolerances = DEFAULT_TOLERANCES) -> Fn:
    return Fn(rule, natural_domain(rule, window, tol))


# ---------------------------------------------------------------------------
# Check reports
# ---------------------------------------------------------------------------

@dataclass
class Evidence:
    hypothesis: str
    level: str  # "symbolic" | "numeric" | "assumed"
    detail: str = ""

    def to_json(self) -> dict:
        out = {"hyp": self.hypothesis, "level": self.level}
        if self.detail:
            out["detail"] = self.detail
        return out


@dataclass
class CheckReport:
    verdict: str  # "pass" | "fail"
    reason: Optional[str] = None
    evidence: list[Evidence] = field(default_factory=list)
    witness: object = None
    constants: Optional[list[float]] = None

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    def witness_text(self) -> Optional[str]:
        if self.witness is None:
            return None
        if isinstance(self.witness, Exact):
            return self.witness.render()
        return repr(self.witness)

    def to_json(self) -> dict:
        out = {"verdict": self.verdict}
        if self.reason:
            out["reason"] = self.reason
        if self.evidence:
            out["evidence"] = [ev.to_json() for ev in self.evidence]
        if self.witness is not None:
            out["witness"] = self.witness_text()
        if self.constants is not None:
            out["constants"] = self.constants
        return out


def _sample_points(part: Interval, count: int, edge_margin: float,
                   avoid: tuple[float, ...] = ()) -> list[float]:
    lo, hi = part.lo.to_float(), part.hi.to_float()
    width = hi - lo
    m = max(edge_margin, width * 1e-4)
    xs = []
    for i in range(count):
        x = lo + m + (width - 2 * m) * (i + 0.5) / count
        if any(abs(x - p) < 1e-4 * max(1.0, abs(p)) for p in avoid):
            continue
        xs.append(x)
    return xs


# ---------------------------------------------------------------------------
# Primitive and equivalence checks
# ---------------------------------------------------------------------------

def is_primitive(F: Fn, f: Fn, tol: Tolerances = DEFAULT_TOLERANCES) -> CheckReport:
    """Check F' = f including domain equality and one-sided edge cases.

    Interior agreement is sampled at 64 points per component against the
    symbolic derivative; plugs and closed component endpoints are checked
    with one-sided difference quotients at a looser tolerance.
    """
    evidence: list[Evidence] = []
    equal, witness = domains_equal(F.domain, f.domain, tol.snap_tol)
    if not equal:
        return CheckReport("fail", "DomainMismatch", evidence, witness)
    evidence.append(Evidence("D_F = D_f", "symbolic", f"{F.domain.render()}"))

    dF = differentiate(F.rule)
    if simplify_basic(dF) == simplify_basic(f.rule):
        evidence.append(Evidence("F' = f", "symbolic", f"F' = {format_expr(dF)}"))
    else:
        plug_pts = tuple(p.to_float() for p, _ in F.plugs)
        checked = 0
        for part in F.domain.parts:
            for x in _sample_points(part, 64, tol.edge_margin, avoid=plug_pts):
                fv = f.eval(x)
                dv = eval_at(dF, x)
                if fv is None or dv is None:
                    continue
                checked += 1
                if abs(dv - fv) > DERIV_REL_TOL * (1.0 + abs(fv)):
                    return CheckReport(
                        "fail", "DerivativeMismatch", evidence, x,
                    )
        if checked == 0:
            return CheckReport("fail", "NotDifferentiable", evidence)
        evidence.append(
            Evidence("F' = f", "numeric", f"{checked} interior samples, rel tol {DERIV_REL_TOL:g}")
        )

    for point, _ in F.plugs:
        p = point.to_float()
        fv = f.eval(p)
        if fv is None:
            return CheckReport("fail", "DomainMismatch", evidence, point)
        for side in (-1, 1):
            d = one_sided_derivative(F.eval, p, F.eval(p), side)
            if d is None or abs(d - fv) > ONE_SIDED_TOL * (1.0 + abs(fv)):
                return CheckReport("fail", "DerivativeMismatch", evidence, point)
        evidence.append(
            Evidence("one-sided F' = f at plug", "numeric", f"x = {point.render()}")
        )

    for part in F.domain.parts:
        width = part.hi.to_float() - part.lo.to_float()
        h0 = min(1e-3, width / 16.0)
        for endpoint, side, closed in (
            (part.lo, 1, part.lo_closed),
            (part.hi, -1, part.hi_closed),
        ):
            if not closed:
                continue
            p = endpoint.to_float()
            fv = f.eval(p)
            Fp = F.eval(p)
            if fv is None or Fp is None:
                return CheckReport("fail", "DomainMismatch", evidence, endpoint)
            d = one_sided_derivative(F.eval, p, Fp, side, h0=h0)
            if d is None or abs(d - fv) > ONE_SIDED_TOL * (1.0 + abs(fv)):
                return CheckReport("fail", "DerivativeMismatch", evidence, endpoint)
            evidence.append(
                Evidence("one-sided F' = f at closed endpoint", "numeric",
                         f"x = {endpoint.render()}")
            )

    return CheckReport("pass", None, evidence)


def equivalent(f: Fn, g: Fn, tol: Tolerances = DEFAULT_TOLERANCES) -> CheckReport:
    """f ~ g: equal domains and equal derivatives."""
    evidence: list[Evidence] = []
    equal, witness = domains_equal(f.domain, g.domain, tol.snap_tol)
    if not equal:
        return CheckReport("fail", "DomainMismatch", evidence, witness)
    evidence.append(Evidence("D_f = D_g", "symbolic", f.domain.render()))
    df, dg = differentiate(f.rule), differentiate(g.rule)
    if simplify_basic(df) == simplify_basic(dg):
        evidence.append(Evidence("f' = g'", "symbolic", format_expr(df)))
        return CheckReport("pass", None, evidence)
    checked = 0
    for part in f.domain.parts:
        for x in _sample_points(part, 64, tol.edge_margin):
            a, b = eval_at(df, x), eval_at(dg, x)
            if a is None or b is None:
                continue
            checked += 1
            if abs(a - b) > DERIV_REL_TOL * (1.0 + max(abs(a), abs(b))):
                return CheckReport("fail", "DerivativeMismatch", evidence, x)
    if checked == 0:
        return CheckReport("fail", "NotDifferentiable", evidence)
    evidence.append(Evidence("f' = g'", "numeric", f"{checked} samples"))
    return CheckReport("pass", None, evidence)


# ---------------------------------------------------------------------------
# Primitive families
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PrimitiveFamily:
    """All primitives of the target: base plus one constant per component."""

    base: Fn
    target: Fn
    constants: tuple[str, ...]

    @property
    def components(self) -> list[Interval]:
        return components(self.base.domain)

    def render(self) -> str:
        lines = []
        for i, part in enumerate(self.base.domain.parts):
            rule_text = f"{format_expr(self.base.rule)} + {self.constants[i]}"
            plug_notes = [
                f"{_render_plug_value(v)} + {self.constants[i]}, if x = {p.render()}"
                for p, v in self.base.plugs
                if part.lo < p < part.hi
            ]
            lines.append(f"{rule_text}, if x ∈ {part.render()}")
            lines.extend(plug_notes)
        return "\n".join(lines)

    def to_json(self) -> dict:
        return {
            "base": format_expr(self.base.rule),
            "plugs": [[p.render(), _render_plug_value(v)] for p, v in self.base.plugs],
            "components": [part.to_json() for part in self.base.domain.parts],
            "constants": list(self.constants),
        }


def _render_plug_value(v: float) -> str:
    snapped = to_exact(v)
    return snapped.render() if snapped.is_exact else repr(v)


def family_from_base(F: Fn, f: Fn, tol: Tolerances = DEFAULT_TOLERANCES) -> PrimitiveFamily:
    report = is_primitive(F, f, tol)
    if not report.passed:
        raise NotAPrimitiveError(report)
    names = tuple(f"c{i + 1}" for i in range(len(F.domain.parts)))
    return PrimitiveFamily(F, f, names)


def member(fam: PrimitiveFamily, constants) -> Fn:
    """The concrete primitive with the given per-component constants."""
    values = tuple(float(c) for c in constants)
    if len(values) != len(fam.base.domain.parts):
        raise ArityMismatchError(
            f"{len(values)} constants for {len(fam.base.domain.parts)} components"
        )
    return Fn(fam.base.rule, fam.base.domain, "R", fam.base.plugs, values)


def contains(fam: PrimitiveFamily, phi: Fn, tol: Tolerances = DEFAULT_TOLERANCES) -> CheckReport:
    """Is phi in the family?  Recovers the per-component constants when so."""
    evidence: list[Evidence] = []
    equal, witness = domains_equal(fam.base.domain, phi.domain, tol.snap_tol)
    if not equal:
        return CheckReport("fail", "DomainMismatch", evidence, witness)
    evidence.append(Evidence("D_phi = D_f", "symbolic", phi.domain.render()))
    recovered: list[float] = []
    plug_pts = tuple(p.to_float() for p, _ in fam.base.plugs)
    for part in fam.base.domain.parts:
        diffs: list[tuple[float, float]] = []
        for x in _sample_points(part, 32, 1e-7, avoid=plug_pts):
            pv, bv = phi.eval(x), fam.base.eval(x)
            if pv is None or bv is None:
                continue
            diffs.append((x, pv - bv))
        if not diffs:
            return CheckReport("fail", "NonConstantDifference", evidence, part.midpoint())
        values = [d for _, d in diffs]
        mean = sum(values) / len(values)
        spread = max(values) - min(values)
        if spread > CONST_REL_TOL * (1.0 + abs(mean)):
            worst = max(diffs, key=lambda t: abs(t[1] - mean))
            return CheckReport("fail", "NonConstantDifference", evidence, worst[0])
        recovered.append(mean)
    evidence.append(
        Evidence("phi - F constant per component", "numeric", "32 samples per component")
    )
    return CheckReport("pass", None, evidence, constants=recovered)


# ---------------------------------------------------------------------------
# Class arithmetic
# ---------------------------------------------------------------------------

def _combine(a: PrimitiveFamily, b: PrimitiveFamily, node, tol: Tolerances) -> PrimitiveFamily:
    if a.base.plugs or b.base.plugs or a.base.offsets or b.base.offsets:
        raise ValueError("class arithmetic requires plain (plug-free) bases")
    dom = intersect(a.base.domain, b.base.domain, tol)
    base_rule = simplify_basic(node(a.base.rule, b.base.rule))
    target_rule = simplify_basic(node(a.target.rule, b.target.rule))
    base = make_fn(base_rule, dom, tol=tol)
    target = make_fn(target_rule, dom, tol=tol)
    return family_from_base(base, target, tol)


def class_add(a: PrimitiveFamily, b: PrimitiveFamily,
              tol: Tolerances = DEFAULT_TOLERANCES) -> PrimitiveFamily:
    return _combine(a, b, Add, tol)


def class_sub(a: PrimitiveFamily, b: PrimitiveFamily,
              tol: Tolerances = DEFAULT_TOLERANCES) -> PrimitiveFamily:
    return _combine(a, b, Sub, tol)


def class_scale(alpha, a: PrimitiveFamily,
                tol: Tolerances = DEFAULT_TOLERANCES) -> PrimitiveFamily:
    coef = to_exact(alpha)
    if coef.to_float() == 0.0:
        raise ZeroScaleError("scaling a primitive family by zero is not allowed")
    scale = Const(coef)
    base = make_fn(simplify_basic(Mul(scale, a.base.rule)), a.base.domain, tol=tol)
    target = make_fn(simplify_basic(Mul(scale, a.target.rule)), a.base.domain, tol=tol)
    return family_from_base(base, target, tol)


# ---------------------------------------------------------------------------
# Existence (continuity on a standard domain)
# ---------------------------------------------------------------------------

def fn_continuity_class(f: Fn, tol: Tolerances = DEFAULT_TOLERANCES) -> str:
    """Continuity classification that understands gap-filled wrappers."""
    from .calculus import continuity_class

    if not f.plugs:
        return continuity_class(f.rule, f.domain)
    plug_points = [p for p, _ in f.plugs]
    punctured = DomainSet(
        tuple(puncture(f.domain.parts, plug_points, tol.snap_tol)), f.domain.window
    )
    base_class = continuity_class(f.rule, punctured)
    if base_class == "unknown":
        return "unknown"
    for point, value in f.plugs:
        p = point.to_float()
        for side in (-1, 1):
            lim = one_sided_limit(lambda x: eval_at(f.rule, x), p, side)
            if lim is None or math.isinf(lim) or abs(lim - value) > LIMIT_TOL * (1.0 + abs(value)):
                return "unknown"
    return "continuous"


def has_primitive(f: Fn, tol: Tolerances = DEFAULT_TOLERANCES) -> CheckReport:
    """Existence check: continuous on a standard domain means P(f) is non-empty.

    Does not construct a primitive.
    """
    evidence: list[Evidence] = []
    ok, violations = is_standard(f.domain)
    if not ok:
        return CheckReport(
            "fail", "HypothesisUnverified",
            [Evidence("D_f standard", "symbolic", "; ".join(violations))],
        )
    evidence.append(Evidence("D_f standard", "symbolic", f.domain.render()))
    cls = fn_continuity_class(f, tol)
    if cls not in ("continuous", "c1"):
        evidence.append(Evidence("f continuous", "numeric", f"classified {cls}"))
        return CheckReport("fail", "HypothesisUnverified", evidence)
    level = "symbolic" if not f.plugs else "numeric"
    evidence.append(Evidence("f continuous", level, f"classified {cls}"))
    evidence.append(
        Evidence("continuous on standard domain => P(f) nonempty", "symbolic",
                 "existence only")
    )
    return CheckReport("pass", None, evidence)
