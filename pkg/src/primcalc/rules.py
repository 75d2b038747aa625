"""The antiderivative engine.

Every rule checks the hypotheses of the theorem it invokes and records the
evidence in a trace; every family any rule returns is re-verified against
its target with is_primitive before it escapes.  Nothing is trusted
unverified.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from .exact import Exact, to_exact
from .errors import (
    EmptyDomainError,
    HypothesisUnverifiedError,
    InverseUnverifiedError,
    NotAPrimitiveError,
    RuleNotFoundError,
)
from .calculus import (
    DEFAULT_TOLERANCES,
    Tolerances,
    differentiate,
    find_zeros,
    one_sided_limit,
    quadrature,
)
from .domain import (
    DomainSet,
    domain_set,
    domains_equal,
    fill_points,
    intersect,
    interval,
    is_standard,
    natural_domain,
)
from .expr import (
    Abs, Add, Arcsin, Arctan, Const, Cos, Div, Exp, Expr, Ln, Mul, Neg, Pow,
    Sec, Sin, Sqrt, Sub, Tan, Var, X,
    as_constant, contains_var, eval_at, format_expr, parse_expr, simplify_basic,
    subst_var, subtrees,
)
from .primitives import (
    CheckReport,
    Evidence,
    Fn,
    PrimitiveFamily,
    class_add,
    class_scale,
    class_sub,
    contains,
    family_from_base,
    fn_continuity_class,
    fn_on_natural_domain,
    is_primitive,
    make_fn,
)

DEPTH_CAP = 8
BY_PARTS_DEPTH_CAP = 3
MATCH_REL_TOL = 1e-9
LIMIT_AGREE_TOL = 1e-7


# ---------------------------------------------------------------------------
# Traces
# ---------------------------------------------------------------------------

@dataclass
class TraceStep:
    rule: str
    theorem: str
    evidence: list[Evidence]
    result: str

    def to_json(self) -> dict:
        return {
            "rule": self.rule,
            "theorem": self.theorem,
            "evidence": [ev.to_json() for ev in self.evidence],
            "result": self.result,
        }


@dataclass
class RuleTrace:
    steps: list[TraceStep] = field(default_factory=list)

    def add(self, rule: str, theorem: str, evidence: list[Evidence], result: str):
        self.steps.append(TraceStep(rule, theorem, list(evidence), result))

    def to_json(self) -> dict:
        return {"steps": [s.to_json() for s in self.steps]}


@dataclass(frozen=True)
class Substitution:
    """A change of variables: g, its direction, and g^-1 when inverting."""

    g: Fn
    direction: str  # "forward" | "inverse" | "inverse_relaxed" | "definite"
    inverse_rule: Optional[Expr] = None


# ---------------------------------------------------------------------------
# Base table
# ---------------------------------------------------------------------------

_FIXED_ENTRIES = [
    ("1", "1", "x"),
    ("exp", "exp(x)", "exp(x)"),
    ("sin", "sin(x)", "-cos(x)"),
    ("cos", "cos(x)", "sin(x)"),
    ("sec^2", "sec(x)^2", "tan(x)"),
    ("sec", "sec(x)", "ln(abs(tan(x)+sec(x)))"),
    ("cos^2", "cos(x)^2", "x/2 + sin(x)*cos(x)/2"),
    ("1/(1+x^2)", "1/(1+x^2)", "arctan(x)"),
    ("1/sqrt(1-x^2)", "1/sqrt(1-x^2)", "arcsin(x)"),
    ("1/(x(x+1))", "1/(x*(x+1))", "ln(abs(x)) - ln(abs(x+1))"),
    ("1/x", "1/x", "ln(abs(x))"),
]
FIXED_TABLE = [
    (name, simplify_basic(parse_expr(integrand)), parse_expr(primitive))
    for name, integrand, primitive in _FIXED_ENTRIES
]


def _shift_of(u: Expr) -> Optional[Expr]:
    """u as x+a (returns the shifted form) when u is x plus a constant."""
    if isinstance(u, Var):
        return u
    if isinstance(u, Add):
        if isinstance(u.left, Var) and as_constant(u.right) is not None:
            return u
        if isinstance(u.right, Var) and as_constant(u.left) is not None:
            return Add(u.right, u.left)
    if isinstance(u, Sub) and isinstance(u.left, Var) and as_constant(u.right) is not None:
        return u
    return None


def _structural_primitive(r: Expr) -> Optional[tuple[str, Expr]]:
    half = Const(Exact.rational(Fraction(1, 2)))
    c = as_constant(r)
    if c is not None:
        return "constant", simplify_basic(Mul(Const(c), X))
    if isinstance(r, Var):
        return "power", simplify_basic(Mul(half, Pow(X, Fraction(2))))
    if isinstance(r, Pow) and isinstance(r.base, Var):
        p = r.exponent
        if p == -1:
            return "1/x", Ln(Abs(X))
        coef = Const(Exact.rational(1 / (p + 1)))
        return "power", simplify_basic(Mul(coef, Pow(X, p + 1)))
    if isinstance(r, Mul):
        coef = as_constant(r.left)
        if coef is not None:
            inner = _structural_primitive(r.right)
            if inner is not None:
                return inner[0], simplify_basic(Mul(Const(coef), inner[1]))
    if isinstance(r, Div):
        c = as_constant(r.left)
        if c is not None:
            shifted = _shift_of(r.right)
            if shifted is not None:
                return "1/(x+a)", simplify_basic(Mul(Const(c), Ln(Abs(shifted))))
            den = r.right
            pf = None
            if isinstance(den, Mul) and isinstance(den.left, Var):
                s = _shift_of(den.right)
                if s is not None and _shift_constant(s) == 1:
                    pf = True
            if isinstance(den, Add) and isinstance(den.left, Pow) and isinstance(den.right, Var):
                if isinstance(den.left.base, Var) and den.left.exponent == 2:
                    pf = True
            if pf:
                prim = Sub(Ln(Abs(X)), Ln(Abs(Add(X, Const(Exact.rational(1))))))
                return "partial-fractions 1/(x(x+1))", simplify_basic(Mul(Const(c), prim))
    return None


def _shift_constant(shifted: Expr) -> Optional[Fraction]:
    if isinstance(shifted, Add):
        c = as_constant(shifted.right)
        return c.coef if c is not None and c.kind == "rat" else None
    return Fraction(0) if isinstance(shifted, Var) else None


def _fn_samples(f: Fn, per_component: int = 48) -> list[float]:
    from .primitives import _sample_points

    plug_pts = tuple(p.to_float() for p, _ in f.plugs)
    xs: list[float] = []
    for part in f.domain.parts:
        xs.extend(_sample_points(part, per_component, 1e-7, avoid=plug_pts))
    return xs


def _numeric_match(f: Fn, candidate: Expr) -> bool:
    xs = _fn_samples(f)
    checked = 0
    for x in xs:
        fv, cv = f.eval(x), eval_at(candidate, x)
        if fv is None:
            continue
        if cv is None:
            return False
        checked += 1
        if abs(fv - cv) > MATCH_REL_TOL * (1.0 + abs(cv)):
            return False
    return checked >= max(8, len(xs) // 2)


def _table_lookup(f: Fn, tol: Tolerances) -> Optional[tuple[str, str, Fn]]:
    """Match f against the table; returns (entry, level, primitive on D_f)."""
    r = simplify_basic(f.rule)
    hit = _structural_primitive(r)
    if hit is not None:
        name, prim = hit
        try:
            return name, "symbolic", make_fn(prim, f.domain, tol=tol)
        except (ValueError, EmptyDomainError):
            return None
    for name, integrand, prim in FIXED_TABLE:
        if r == integrand:
            try:
                return name, "symbolic", make_fn(prim, f.domain, tol=tol)
            except (ValueError, EmptyDomainError):
                continue
        if _numeric_match(f, integrand):
            try:
                return name, "numeric", make_fn(prim, f.domain, tol=tol)
            except (ValueError, EmptyDomainError):
                continue
    return None


def base_table(f_rule: Expr, window=None, tol: Tolerances = DEFAULT_TOLERANCES) -> Optional[Fn]:
    """A known base primitive for the rule on its natural domain, if any."""
    win = window if window is not None else DEFAULT_WINDOW
    try:
        f = fn_on_natural_domain(f_rule, win, tol)
    except EmptyDomainError:
        return None
    hit = _table_lookup(f, tol)
    if hit is None:
        return None
    _, _, prim = hit
    if not is_primitive(prim, f, tol).passed:
        return None
    return prim


DEFAULT_WINDOW = (Exact.pi_multiple(-8), Exact.pi_multiple(8))


# ---------------------------------------------------------------------------
# Image analysis for the substitution hypotheses
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ImageInterval:
    lo: float
    hi: float
    lo_attained: bool
    hi_attained: bool


def image_of(g: Fn, tol: Tolerances = DEFAULT_TOLERANCES) -> list[ImageInterval]:
    """Per-component image intervals from monotone pieces and endpoint limits."""
    out = []
    for part in g.domain.parts:
        lo_f, hi_f = part.lo.to_float(), part.hi.to_float()
        candidates: list[tuple[float, bool]] = []
        from .errors import NonDifferentiableError, ResolutionFailureError

        try:
            crit = find_zeros(differentiate(g.rule), (part.lo, part.hi), tol)
        except (NonDifferentiableError, ResolutionFailureError):
            crit = []
        for z in crit:
            v = eval_at(g.rule, z.to_float())
            if v is not None:
                candidates.append((v, True))
        width = hi_f - lo_f
        for i in range(17):
            x = lo_f + width * (i + 0.5) / 17
            v = eval_at(g.rule, x)
            if v is not None:
                candidates.append((v, True))
        for p, side, closed in ((lo_f, 1, part.lo_closed), (hi_f, -1, part.hi_closed)):
            v = eval_at(g.rule, p) if closed else None
            if v is not None:
                candidates.append((v, True))
                continue
            lim = one_sided_limit(lambda t: eval_at(g.rule, t), p, side,
                                  h0=min(1e-3, width / 64.0))
            if lim is not None:
                candidates.append((lim, False))
        if not candidates:
            continue
        lo_v = min(c[0] for c in candidates)
        hi_v = max(c[0] for c in candidates)
        lo_att = any(a for v, a in candidates if v <= lo_v + 1e-12 * (1.0 + abs(lo_v)))
        hi_att = any(a for v, a in candidates if v >= hi_v - 1e-12 * (1.0 + abs(hi_v)))
        out.append(ImageInterval(lo_v, hi_v, lo_att, hi_att))
    return out


def _excluded_points(d: DomainSet) -> list[Exact]:
    """Interior boundary points of the window that are not in the set."""
    wlo, whi = d.window
    pts = []
    for part in d.parts:
        for p, closed in ((part.lo, part.lo_closed), (part.hi, part.hi_closed)):
            if not closed and wlo < p < whi and not d.contains_point(p):
                pts.append(p)
    return pts


def _point_in_target(x: float, f: Fn, tol: Tolerances) -> bool:
    wlo, whi = f.domain.window[0].to_float(), f.domain.window[1].to_float()
    if wlo < x < whi:
        return f.domain.contains_point(x, tol.snap_tol)
    # beyond the window the domain is not authoritative; probe the rule
    return f.eval(x) is not None


def _image_within(g: Fn, f: Fn, tol: Tolerances):
    """Check Im_g subset of D_f; returns (ok, witness, detail)."""
    images = image_of(g, tol)
    if not images:
        return False, None, "no image information"
    excl = _excluded_points(f.domain)
    details = []
    edge = 1e-7  # numeric limits put image boundaries within this of the truth
    for im in images:
        for p in excl:
            pf = p.to_float()
            inside = im.lo + edge < pf < im.hi - edge
            at_edge = (abs(pf - im.lo) <= edge and im.lo_attained) or (
                abs(pf - im.hi) <= edge and im.hi_attained
            )
            if inside or at_edge:
                return False, p, f"excluded point {p.render()} lies in the image"
        lo_c = max(im.lo, -1e12)
        hi_c = min(im.hi, 1e12)
        for i in range(33):
            x = lo_c + (hi_c - lo_c) * (i + 0.5) / 33
            if not _point_in_target(x, f, tol):
                return False, x, f"image point {x!r} outside D_f"
        for v, att in ((im.lo, im.lo_attained), (im.hi, im.hi_attained)):
            if att and math.isfinite(v) and not _point_in_target(v, f, tol):
                return False, v, f"attained image endpoint {v!r} outside D_f"
        if math.isinf(im.hi):
            t = max(abs(hi_c), 64.0)
            for _ in range(8):
                if eval_at(f.rule, t) is None:
                    return False, t, f"image tail point {t!r} outside D_f"
                t *= 8.0
        if math.isinf(im.lo):
            t = -max(abs(lo_c), 64.0)
            for _ in range(8):
                if eval_at(f.rule, t) is None:
                    return False, t, f"image tail point {t!r} outside D_f"
                t *= 8.0
        details.append(f"[{im.lo:g},{im.hi:g}]")
    return True, None, "image " + " ∪ ".join(details)


def _image_equals(g: Fn, f: Fn, tol: Tolerances):
    ok, witness, detail = _image_within(g, f, tol)
    if not ok:
        return False, witness, detail
    images = image_of(g, tol)
    hull_lo = min(im.lo for im in images)
    hull_hi = max(im.hi for im in images)
    lo_att = any(im.lo_attained for im in images if im.lo <= hull_lo + 1e-12)
    hi_att = any(im.hi_attained for im in images if im.hi >= hull_hi - 1e-12)
    for part in f.domain.parts:
        plo, phi = part.lo.to_float(), part.hi.to_float()
        if plo < hull_lo - 1e-9 or phi > hull_hi + 1e-9:
            return False, part.lo if plo < hull_lo - 1e-9 else part.hi, "D_f exceeds the image"
        if part.lo_closed and abs(plo - hull_lo) <= 1e-9 and not lo_att:
            return False, part.lo, f"endpoint {part.lo.render()} not attained by g"
        if part.hi_closed and abs(phi - hull_hi) <= 1e-9 and not hi_att:
            return False, part.hi, f"endpoint {part.hi.render()} not attained by g"
    return True, None, detail


def _hull_window(images: list[ImageInterval]) -> tuple[float, float]:
    finite = [v for im in images for v in (im.lo, im.hi) if math.isfinite(v)]
    bound = max([abs(v) for v in finite] + [16.0]) * 1.25 + 1.0
    lo = min([im.lo for im in images] + [-bound])
    hi = max([im.hi for im in images] + [bound])
    lo = -bound * 4 if math.isinf(lo) else min(lo, -1.0) - 1.0
    hi = bound * 4 if math.isinf(hi) else max(hi, 1.0) + 1.0
    return lo, hi


# ---------------------------------------------------------------------------
# Integration by parts:  P(f*g') = [f*g] - P(f'*g)
# ---------------------------------------------------------------------------

def by_parts(f: Fn, g: Fn, tol: Tolerances = DEFAULT_TOLERANCES,
             trace: Optional[RuleTrace] = None, _depth: int = 0) -> PrimitiveFamily:
    evidence: list[Evidence] = []
    for name, fn in (("f", f), ("g", g)):
        ok, violations = is_standard(fn.domain)
        if not ok:
            raise HypothesisUnverifiedError(f"D_{name} standard",
                                            CheckReport("fail", "HypothesisUnverified"))
    try:
        dom = intersect(f.domain, g.domain, tol)
    except EmptyDomainError as exc:
        raise HypothesisUnverifiedError("D_f ∩ D_g standard") from exc
    evidence.append(Evidence("D_f, D_g, D_f∩D_g standard", "symbolic", dom.render()))
    for name, fn in (("f", f), ("g", g)):
        if fn_continuity_class(fn, tol) != "c1":
            raise HypothesisUnverifiedError(f"{name} is C1")
        evidence.append(Evidence(f"{name} is C1", "symbolic", "derivative defined on the domain"))

    target_rule = simplify_basic(Mul(f.rule, differentiate(g.rule)))
    inner_rule = simplify_basic(Mul(differentiate(f.rule), g.rule))
    inner_fn = make_fn(inner_rule, dom, tol=tol)
    inner_fam, _ = _antiderive(inner_fn, (), tol, trace, _depth + 1)
    base_rule = simplify_basic(Sub(Mul(f.rule, g.rule), inner_fam.base.rule))
    base = make_fn(base_rule, dom, plugs=inner_fam.base.plugs, tol=tol)
    target = make_fn(target_rule, dom, tol=tol)
    fam = family_from_base(base, target, tol)
    if trace is not None:
        trace.add("by_parts", "IBP", evidence, format_expr(fam.base.rule))
    return fam


# ---------------------------------------------------------------------------
# Forward substitution:  P((f∘g)·g') = [F∘g]
# ---------------------------------------------------------------------------

def subst_forward(f: Fn, g: Fn, tol: Tolerances = DEFAULT_TOLERANCES,
                  trace: Optional[RuleTrace] = None, _depth: int = 0) -> PrimitiveFamily:
    evidence = [Evidence("g differentiable", "symbolic", "grammar is closed under d/dx")]
    ok, witness, detail = _image_within(g, f, tol)
    if not ok:
        raise HypothesisUnverifiedError(
            "Im_g ⊆ D_f", CheckReport("fail", "HypothesisUnverified", evidence, witness)
        )
    evidence.append(Evidence("Im_g ⊆ D_f", "numeric", detail))

    fam_f, _ = _antiderive(f, (), tol, trace, _depth + 1)
    base_rule = cancel_compositions(
        simplify_basic(subst_var(fam_f.base.rule, g.rule)), g.domain, tol
    )
    target_rule = simplify_basic(Mul(subst_var(f.rule, g.rule), differentiate(g.rule)))
    base = make_fn(base_rule, g.domain, tol=tol)
    target = make_fn(target_rule, g.domain, tol=tol)
    fam = family_from_base(base, target, tol)
    if trace is not None:
        trace.add("subst_forward", "CHANGE-OF-VARS (indefinite, forward)", evidence,
                  format_expr(fam.base.rule))
    return fam


# ---------------------------------------------------------------------------
# Inverse substitutions:  P(f) = {H∘g^-1}
# ---------------------------------------------------------------------------

def _check_inverse(g: Fn, inverse_rule: Expr, f: Fn, tol: Tolerances) -> Evidence:
    xs = _fn_samples(f, 64)
    if not xs:
        raise InverseUnverifiedError("no sample points to verify the inverse")
    for x in xs:
        u = eval_at(inverse_rule, x)
        v = eval_at(g.rule, u) if u is not None else None
        if v is None or abs(v - x) > 1e-9 * (1.0 + abs(x)):
            raise InverseUnverifiedError(
                f"g(g_inverse({x!r})) = {v!r} does not reproduce the input"
            )
    return Evidence("g_inverse verified", "numeric", f"g∘g_inverse = id at {len(xs)} points")


def _monotone_evidence(g: Fn, allow_endpoint_zeros: bool, tol: Tolerances) -> Evidence:
    dg = differentiate(g.rule)
    sign_seen = set()
    for part in g.domain.parts:
        zeros = find_zeros(dg, (part.lo, part.hi), tol)
        lo_f, hi_f = part.lo.to_float(), part.hi.to_float()
        width = hi_f - lo_f
        for z in zeros:
            zf = z.to_float()
            interior = min(zf - lo_f, hi_f - zf) > max(1e-7, 1e-7 * width)
            if interior or not allow_endpoint_zeros:
                clause = ("diffeomorphism: g' nonvanishing on D_g"
                          if not allow_endpoint_zeros
                          else "g strictly monotone (bijective): g' zero only at endpoints")
                raise HypothesisUnverifiedError(
                    clause, CheckReport("fail", "HypothesisUnverified", witness=z)
                )
        for i in range(32):
            v = eval_at(dg, lo_f + width * (i + 0.5) / 32)
            if v is not None and v != 0.0:
                sign_seen.add(v > 0)
    if len(sign_seen) != 1:
        clause = ("diffeomorphism: g' nonvanishing on D_g" if not allow_endpoint_zeros
                  else "g strictly monotone (bijective): g' zero only at endpoints")
        raise HypothesisUnverifiedError(clause)
    direction = "increasing" if True in sign_seen else "decreasing"
    return Evidence(
        "diffeomorphism: g' keeps a single sign on D_g" if not allow_endpoint_zeros
        else "g strictly monotone (bijective)",
        "numeric", f"g' {direction} sign chart has a single sign",
    )


def _inverse_family(f: Fn, sub: Substitution, evidence: list[Evidence],
                    tol: Tolerances, trace: Optional[RuleTrace], _depth: int,
                    rule_name: str, theorem: str) -> PrimitiveFamily:
    g = sub.g
    ok, witness, detail = _image_equals(g, f, tol)
    if not ok:
        raise HypothesisUnverifiedError(
            "Im_g = D_f", CheckReport("fail", "HypothesisUnverified", evidence, witness)
        )
    evidence.append(Evidence("Im_g = D_f", "numeric", detail))
    evidence.append(_check_inverse(g, sub.inverse_rule, f, tol))

    inner_rule = simplify_basic(Mul(subst_var(f.rule, g.rule), differentiate(g.rule)))
    inner_fn = make_fn(inner_rule, g.domain, tol=tol)
    fam_h, _ = _antiderive(inner_fn, (), tol, trace, _depth + 1)
    base_rule = cancel_compositions(
        simplify_basic(subst_var(fam_h.base.rule, sub.inverse_rule)), f.domain, tol
    )
    base = make_fn(base_rule, f.domain, tol=tol)
    fam = family_from_base(base, f, tol)
    if trace is not None:
        trace.add(rule_name, theorem, evidence, format_expr(fam.base.rule))
    return fam


def subst_inverse(f: Fn, sub: Substitution, tol: Tolerances = DEFAULT_TOLERANCES,
                  trace: Optional[RuleTrace] = None, _depth: int = 0) -> PrimitiveFamily:
    """P(f) through a diffeomorphism g with supplied inverse."""
    if sub.inverse_rule is None:
        raise InverseUnverifiedError("inverse substitution requires g_inverse")
    evidence = [Evidence("g differentiable", "symbolic", "grammar is closed under d/dx")]
    evidence.append(_monotone_evidence(sub.g, allow_endpoint_zeros=False, tol=tol))
    return _inverse_family(f, sub, evidence, tol, trace, _depth,
                           "subst_inverse", "CHANGE-OF-VARS (inverse, diffeomorphism)")


def subst_inverse_relaxed(f: Fn, sub: Substitution, tol: Tolerances = DEFAULT_TOLERANCES,
                          trace: Optional[RuleTrace] = None, _depth: int = 0) -> PrimitiveFamily:
    """Inverse substitution where g' may vanish at domain endpoints.

    The resulting base gets one-sided derivative checks at closed endpoints
    (inside is_primitive), which is what makes the relaxation sound.
    """
    if sub.inverse_rule is None:
        raise InverseUnverifiedError("relaxed substitution requires g_inverse")
    evidence = [Evidence("g differentiable", "symbolic", "grammar is closed under d/dx")]
    evidence.append(_monotone_evidence(sub.g, allow_endpoint_zeros=True, tol=tol))
    evidence.append(Evidence("g_inverse continuous", "symbolic",
                             "inverse of a strictly monotone continuous function"))
    cls = fn_continuity_class(f, tol)
    if cls not in ("continuous", "c1"):
        raise HypothesisUnverifiedError(
            "f continuous", CheckReport("fail", "HypothesisUnverified", evidence)
        )
    evidence.append(Evidence("f continuous", "numeric" if f.plugs else "symbolic",
                             f"classified {cls}"))
    return _inverse_family(f, sub, evidence, tol, trace, _depth,
                           "subst_inverse_relaxed", "CHANGE-OF-VARS (inverse, endpoint-relaxed)")


# ---------------------------------------------------------------------------
# Definite integrals through a substitution
# ---------------------------------------------------------------------------

def defint_change_of_vars(f: Fn, g: Fn, a, b, tol: Tolerances = DEFAULT_TOLERANCES,
                          trace: Optional[RuleTrace] = None) -> float:
    """The common value of ∫_{g(a)}^{g(b)} f  and  ∫_a^b (f∘g)·g'.

    Whichever side has a rule-reachable primitive is evaluated by the
    fundamental theorem; the other side is quadratured as a cross-check.
    """
    evidence: list[Evidence] = []
    af, bf = to_exact(a).to_float(), to_exact(b).to_float()
    lo, hi = (af, bf) if af <= bf else (bf, af)
    pad = max(1.0, (hi - lo) / 8.0)
    ab = domain_set([interval(lo, hi, True, True)], (lo - pad, hi + pad))
    from .calculus import continuity_class

    if continuity_class(g.rule, ab) != "c1":
        raise HypothesisUnverifiedError("g is C1 on [a,b]")
    evidence.append(Evidence("g is C1 on [a,b]", "symbolic", f"[{lo:g},{hi:g}]"))
    if fn_continuity_class(f, tol) not in ("continuous", "c1"):
        raise HypothesisUnverifiedError("f continuous")
    evidence.append(Evidence("f continuous", "symbolic", ""))
    g_ab = make_fn(g.rule, ab, tol=tol)
    ok, witness, detail = _image_within(g_ab, f, tol)
    if not ok:
        raise HypothesisUnverifiedError(
            "g([a,b]) ⊆ D_f", CheckReport("fail", "HypothesisUnverified", evidence, witness)
        )
    evidence.append(Evidence("g([a,b]) ⊆ D_f", "numeric", detail))

    ga, gb = eval_at(g.rule, af), eval_at(g.rule, bf)
    if ga is None or gb is None:
        raise HypothesisUnverifiedError("g defined at a and b")
    pulled_rule = simplify_basic(Mul(subst_var(f.rule, g.rule), differentiate(g.rule)))

    value = None
    used = None
    side = None
    try:
        from .primitives import component_index

        fam, _ = _antiderive(f, (), tol, None, 1)
        same_component = (
            component_index(fam.base.domain, ga) == component_index(fam.base.domain, gb)
        )
        Fb, Fa = fam.base.eval(gb), fam.base.eval(ga)
        if same_component and Fb is not None and Fa is not None:
            value, used, side = Fb - Fa, "F(g(b)) - F(g(a)) with F ∈ P(f)", "outer"
    except (RuleNotFoundError, NotAPrimitiveError, EmptyDomainError):
        pass
    if value is None:
        try:
            h_fn = make_fn(pulled_rule, ab, tol=tol)
            fam_h, _ = _antiderive(h_fn, (), tol, None, 1)
            Hb, Ha = fam_h.base.eval(bf), fam_h.base.eval(af)
            if Hb is not None and Ha is not None:
                value, used, side = Hb - Ha, "H(b) - H(a) with H ∈ P((f∘g)·g')", "pulled"
        except (RuleNotFoundError, NotAPrimitiveError, EmptyDomainError):
            pass
    if value is None:
        value = quadrature(pulled_rule, af, bf, tol)
        used, side = "quadrature fallback (no primitive reachable)", "pulled"
        cross = quadrature(f.rule, ga, gb, tol)
    elif side == "outer":
        cross = quadrature(pulled_rule, af, bf, tol)
    else:
        cross = quadrature(f.rule, ga, gb, tol)
    if abs(value - cross) > 1e-7 * (1.0 + abs(value)):
        raise HypothesisUnverifiedError(
            f"definite/indefinite coherence: {value!r} vs quadrature {cross!r}"
        )
    evidence.append(Evidence("independent quadrature cross-check", "numeric",
                             f"|Δ| = {abs(value - cross):.2e}"))
    if trace is not None:
        trace.add("defint_change_of_vars", "CHANGE-OF-VARS (definite) + FTC2",
                  evidence, f"{used} = {value!r}")
    return value


# ---------------------------------------------------------------------------
# Guarded composition cancellation (used when composing H∘g or H∘g^-1)
# ---------------------------------------------------------------------------

def _cancel_once(e: Expr) -> Expr:
    one = Const(Exact.rational(1))
    if isinstance(e, Tan) and isinstance(e.arg, Arctan):
        return e.arg.arg
    if isinstance(e, Sec) and isinstance(e.arg, Arctan):
        return Sqrt(Add(one, Pow(e.arg.arg, Fraction(2))))
    if isinstance(e, Sin) and isinstance(e.arg, Arcsin):
        return e.arg.arg
    if isinstance(e, Cos) and isinstance(e.arg, Arcsin):
        return Sqrt(Sub(one, Pow(e.arg.arg, Fraction(2))))
    return e


def _cancel_rewrite(e: Expr) -> Expr:
    if isinstance(e, (Const, Var)):
        return e
    if isinstance(e, (Add, Sub, Mul, Div)):
        out = type(e)(_cancel_rewrite(e.left), _cancel_rewrite(e.right))
    elif isinstance(e, Pow):
        out = Pow(_cancel_rewrite(e.base), e.exponent)
    elif isinstance(e, Neg):
        out = Neg(_cancel_rewrite(e.arg))
    else:
        out = type(e)(_cancel_rewrite(e.arg))
    return _cancel_once(out)


def cancel_compositions(e: Expr, domain: DomainSet, tol: Tolerances = DEFAULT_TOLERANCES) -> Expr:
    """Cancel inverse-function pairs, accepting only domain-preserving results.

    The rewrite is validated against the original: equal natural domains on
    the window and value agreement on samples, otherwise e is returned as is.
    """
    candidate = simplify_basic(_cancel_rewrite(e))
    if candidate == e:
        return e
    try:
        before = natural_domain(e, domain.window, tol)
        after = natural_domain(candidate, domain.window, tol)
    except EmptyDomainError:
        return e
    equal, _ = domains_equal(before, after, tol.snap_tol)
    if not equal:
        return e
    for part in domain.parts:
        lo, hi = part.lo.to_float(), part.hi.to_float()
        for i in range(24):
            x = lo + (hi - lo) * (i + 0.5) / 24
            v1, v2 = eval_at(e, x), eval_at(candidate, x)
            if (v1 is None) != (v2 is None):
                return e
            if v1 is not None and abs(v1 - v2) > 1e-9 * (1.0 + abs(v1)):
                return e
    return candidate


# ---------------------------------------------------------------------------
# The half-angle (tan(x/2)) rewrite for 1/(a + b·cos + c·sin)
# ---------------------------------------------------------------------------

def _match_linear_trig(rule: Expr) -> Optional[tuple[Fraction, Fraction, Fraction, Fraction]]:
    """Match k / (a + b*cos(x) + c*sin(x)); returns (k, a, b, c)."""
    if not isinstance(rule, Div):
        return None
    k = as_constant(rule.left)
    if k is None or k.kind != "rat":
        return None
    from .expr import _linear_terms  # same flattening the simplifier uses

    acc, terms = _linear_terms(rule.right)
    if acc.kind != "rat":
        return None
    a, b, c = acc.coef, Fraction(0), Fraction(0)
    for coef, term in terms:
        if coef.kind != "rat":
            return None
        if term == Cos(X):
            b += coef.coef
        elif term == Sin(X):
            c += coef.coef
        else:
            return None
    if b == 0 and c == 0:
        return None
    return k.coef, a, b, c


def _weierstrass(f: Fn, tol: Tolerances, trace: Optional[RuleTrace],
                 _depth: int) -> Optional[PrimitiveFamily]:
    matched = _match_linear_trig(simplify_basic(f.rule))
    if matched is None:
        return None
    k, a, b, c = matched
    g_rule = Tan(Div(X, Const(Exact.rational(2))))
    try:
        g_dom = intersect(natural_domain(g_rule, f.domain.window, tol), f.domain, tol)
    except EmptyDomainError:
        return None
    g = Fn(g_rule, g_dom)

    half = Fraction(1, 2)
    coeffs = [((a - b) * half, Fraction(2)), (c, Fraction(1)), ((a + b) * half, Fraction(0))]
    poly: Optional[Expr] = None
    for coef, power in coeffs:
        if coef == 0:
            continue
        term: Expr = Pow(X, power) if power > 1 else (X if power == 1 else Const(Exact.rational(1)))
        term = term if coef == 1 else Mul(Const(Exact.rational(coef)), term)
        poly = term if poly is None else Add(poly, term)
    if poly is None:
        return None
    h_rule = simplify_basic(Div(Const(Exact.rational(k)), poly))

    lo, hi = _hull_window(image_of(g, tol))
    try:
        h_fn = fn_on_natural_domain(h_rule, (lo, hi), tol)
    except EmptyDomainError:
        return None

    evidence = [Evidence("half-angle identity valid off odd multiples of pi", "numeric", "")]
    xs = _fn_samples(Fn(f.rule, g_dom), 48)
    rewritten = simplify_basic(Mul(subst_var(h_rule, g_rule), differentiate(g_rule)))
    agree = 0
    for x in xs:
        v1, v2 = eval_at(f.rule, x), eval_at(rewritten, x)
        if v1 is None or v2 is None:
            continue
        if abs(v1 - v2) > MATCH_REL_TOL * (1.0 + abs(v1)):
            return None
        agree += 1
    if agree < 8:
        return None
    evidence[0] = Evidence("half-angle identity valid off odd multiples of pi",
                           "numeric", f"{agree} sample agreements")

    fam = subst_forward(h_fn, g, tol, trace, _depth)
    if trace is not None:
        trace.add("weierstrass", "HALF-ANGLE REWRITE", evidence, format_expr(fam.base.rule))
    return _finish(fam.base, f, tol, trace)


# ---------------------------------------------------------------------------
# Gap filling and final verification
# ---------------------------------------------------------------------------

def _gap_fill(base: Fn, f: Fn, tol: Tolerances) -> Fn:
    """Fill removable punctures of the base domain that f's domain covers."""
    gaps: list[tuple[Exact, float]] = []
    parts = base.domain.parts
    for prev, nxt in zip(parts, parts[1:]):
        if prev.hi_closed or nxt.lo_closed or not (prev.hi == nxt.lo or prev.hi.close_to(nxt.lo, tol.snap_tol)):
            continue
        p = prev.hi
        pf = p.to_float()
        if not f.domain.contains_point(p, tol.snap_tol):
            continue
        if f.eval(pf) is None:
            continue
        below = one_sided_limit(base.eval, pf, -1)
        above = one_sided_limit(base.eval, pf, +1)
        if below is None or above is None or math.isinf(below) or math.isinf(above):
            continue
        if abs(below - above) > LIMIT_AGREE_TOL * (1.0 + abs(below)):
            continue
        value = 0.5 * (below + above)
        snapped = to_exact(value)
        gaps.append((p, snapped.to_float() if snapped.is_exact else value))
    if not gaps:
        return base
    new_domain = fill_points(base.domain, [p for p, _ in gaps], tol.snap_tol)
    return Fn(base.rule, new_domain, "R", base.plugs + tuple(gaps), base.offsets)


def _finish(base: Fn, f: Fn, tol: Tolerances, trace: Optional[RuleTrace]) -> PrimitiveFamily:
    """Retarget a candidate base onto f, gap-filling and re-verifying."""
    candidate = base
    equal, _ = domains_equal(candidate.domain, f.domain, tol.snap_tol)
    if not equal:
        filled = _gap_fill(candidate, f, tol)
        if filled is not candidate and trace is not None:
            new_plugs = [p for p in filled.plugs if p not in candidate.plugs]
            trace.add(
                "gap_fill", "REMOVABLE-POINT FILL",
                [Evidence("one-sided limits exist and agree", "numeric",
                          ", ".join(f"x = {p.render()}: value {v!r}" for p, v in new_plugs))],
                format_expr(filled.rule),
            )
        candidate = filled
    fam = family_from_base(candidate, f, tol)
    if trace is not None and len(fam.components) > 1:
        trace.add(
            "stitch_components", "PER-COMPONENT CONSTANTS",
            [Evidence("components are disjoint intervals", "symbolic",
                      f"{len(fam.components)} components")],
            ", ".join(fam.constants),
        )
    return fam


# ---------------------------------------------------------------------------
# Forward-substitution discovery (composite factor + c*g' residue)
# ---------------------------------------------------------------------------

def _flatten_product(e: Expr) -> list[Expr]:
    if isinstance(e, Mul):
        return _flatten_product(e.left) + _flatten_product(e.right)
    return [e]


def _replace_subtree(e: Expr, old: Expr, new: Expr) -> Expr:
    if e == old:
        return new
    if isinstance(e, (Const, Var)):
        return e
    if isinstance(e, (Add, Sub, Mul, Div)):
        return type(e)(_replace_subtree(e.left, old, new), _replace_subtree(e.right, old, new))
    if isinstance(e, Pow):
        return Pow(_replace_subtree(e.base, old, new), e.exponent)
    if isinstance(e, Neg):
        return Neg(_replace_subtree(e.arg, old, new))
    return type(e)(_replace_subtree(e.arg, old, new))


_SENTINEL = Const(Exact.rational(Fraction(104729, 104723)))


def _forward_candidates(rule: Expr) -> list[Expr]:
    factors = _flatten_product(rule)
    seen: list[Expr] = []
    for factor in factors:
        for sub in subtrees(factor):
            if isinstance(sub, (Const, Var)) or not contains_var(sub):
                continue
            if sub == rule:
                continue
            if sub not in seen:
                seen.append(sub)
    return seen


def _try_forward_discovery(f: Fn, g_rule: Expr, tol: Tolerances,
                           trace: Optional[RuleTrace], _depth: int) -> Optional[PrimitiveFamily]:
    factors = _flatten_product(simplify_basic(f.rule))
    outer_factors: list[Expr] = []
    rest_factors: list[Expr] = []
    for factor in factors:
        if g_rule in set(subtrees(factor)) and not contains_var(
            _replace_subtree(factor, g_rule, _SENTINEL)
        ):
            outer_factors.append(_replace_subtree(factor, g_rule, X))
        else:
            rest_factors.append(factor)
    if not outer_factors:
        return None
    rest: Expr = Const(Exact.rational(1))
    for r in rest_factors:
        rest = Mul(rest, r)
    rest = simplify_basic(rest)
    dg = differentiate(g_rule)

    ratios = []
    for x in _fn_samples(f, 48):
        rv, dv = eval_at(rest, x), eval_at(dg, x)
        if rv is None or dv is None or abs(dv) < 1e-12:
            continue
        ratios.append(rv / dv)
    if len(ratios) < 8:
        return None
    mean = sum(ratios) / len(ratios)
    if max(ratios) - min(ratios) > 1e-8 * (1.0 + abs(mean)):
        return None
    coef = to_exact(mean)

    outer: Expr = Const(coef) if coef.is_exact else Const(Exact.from_float(mean))
    for of in outer_factors:
        outer = Mul(outer, of)
    outer = simplify_basic(outer)

    try:
        g_fn = make_fn(g_rule, f.domain, tol=tol)
    except (ValueError, EmptyDomainError):
        return None
    try:
        lo, hi = _hull_window(image_of(g_fn, tol))
        outer_fn = fn_on_natural_domain(outer, (lo, hi), tol)
        fam = subst_forward(outer_fn, g_fn, tol, trace, _depth)
        return _finish(fam.base, f, tol, trace)
    except (HypothesisUnverifiedError, RuleNotFoundError, NotAPrimitiveError,
            InverseUnverifiedError, EmptyDomainError, ValueError):
        return None


# ---------------------------------------------------------------------------
# The driver
# ---------------------------------------------------------------------------

def antiderive(f: Fn, hooks: tuple[Substitution, ...] = (),
               tol: Tolerances = DEFAULT_TOLERANCES) -> tuple[PrimitiveFamily, RuleTrace]:
    """Compute P(f): fixed strategy order, every output re-verified.

    Order: table, linearity, partial fractions, half-angle rewrite,
    integration by parts, then substitution hooks (user-supplied first,
    then discovered forward candidates).  Recursion depth is capped.
    """
    trace = RuleTrace()
    fam, _ = _antiderive(f, hooks, tol, trace, 0)
    return fam, trace


def _antiderive(f: Fn, hooks, tol: Tolerances, trace: Optional[RuleTrace],
                depth: int) -> tuple[PrimitiveFamily, Optional[RuleTrace]]:
    if depth > DEPTH_CAP:
        raise RuleNotFoundError(f"recursion depth cap ({DEPTH_CAP}) reached", trace)
    rule = simplify_basic(f.rule)
    f = Fn(rule, f.domain, f.codomain, f.plugs, f.offsets)

    # 1. table
    hit = _table_lookup(f, tol)
    if hit is not None:
        name, level, prim = hit
        try:
            fam = _finish(prim, f, tol, None)
            if trace is not None:
                trace.add("base_table", "KNOWN-PRIMITIVE TABLE",
                          [Evidence(f"table entry '{name}' matches the integrand", level, "")],
                          format_expr(fam.base.rule))
                if len(fam.components) > 1:
                    trace.add("stitch_components", "PER-COMPONENT CONSTANTS",
                              [Evidence("components are disjoint intervals", "symbolic",
                                        f"{len(fam.components)} components")],
                              ", ".join(fam.constants))
            return fam, trace
        except NotAPrimitiveError:
            pass

    # 2. linearity
    fam = _try_linearity(f, rule, hooks, tol, trace, depth)
    if fam is not None:
        return fam, trace

    # 3. partial fractions for the 1/(u(u+1)) shape
    fam = _try_partial_fractions(f, rule, hooks, tol, trace, depth)
    if fam is not None:
        return fam, trace

    # 4. half-angle rewrite
    try:
        fam = _weierstrass(f, tol, trace, depth)
        if fam is not None:
            return fam, trace
    except (HypothesisUnverifiedError, RuleNotFoundError, NotAPrimitiveError,
            EmptyDomainError, ValueError):
        pass

    # 5. integration by parts on product shapes
    if isinstance(rule, Mul) and depth < BY_PARTS_DEPTH_CAP:
        for part_f, part_g_integrand in ((rule.left, rule.right), (rule.right, rule.left)):
            try:
                g_candidate = _table_lookup(Fn(part_g_integrand, f.domain), tol)
                if g_candidate is None:
                    continue
                g_fn = Fn(g_candidate[2].rule, f.domain)
                part_fn = Fn(part_f, f.domain)
                fam = by_parts(part_fn, g_fn, tol, trace, depth)
                return _finish(fam.base, f, tol, trace), trace
            except (HypothesisUnverifiedError, RuleNotFoundError, NotAPrimitiveError,
                    EmptyDomainError, ValueError):
                continue

    # 6. substitution hooks: user-supplied, then discovered forward candidates
    for hook in hooks:
        try:
            if hook.direction == "forward":
                fam = _try_forward_discovery(f, hook.g.rule, tol, trace, depth)
                if fam is not None:
                    return fam, trace
            elif hook.direction == "inverse":
                fam = subst_inverse(f, hook, tol, trace, depth)
                return _finish(fam.base, f, tol, trace), trace
            elif hook.direction == "inverse_relaxed":
                fam = subst_inverse_relaxed(f, hook, tol, trace, depth)
                return _finish(fam.base, f, tol, trace), trace
        except (HypothesisUnverifiedError, RuleNotFoundError, NotAPrimitiveError,
                InverseUnverifiedError, EmptyDomainError, ValueError):
            continue
    for g_rule in _forward_candidates(rule):
        fam = _try_forward_discovery(f, g_rule, tol, trace, depth)
        if fam is not None:
            return fam, trace

    raise RuleNotFoundError(f"no rule chain found for {format_expr(rule)}", trace)


def _try_linearity(f: Fn, rule: Expr, hooks, tol: Tolerances,
                   trace: Optional[RuleTrace], depth: int) -> Optional[PrimitiveFamily]:
    try:
        if isinstance(rule, (Add, Sub)):
            left = Fn(rule.left, f.domain)
            right = Fn(rule.right, f.domain)
            fam_l, _ = _antiderive(left, hooks, tol, trace, depth + 1)
            fam_r, _ = _antiderive(right, hooks, tol, trace, depth + 1)
            combined = (class_add if isinstance(rule, Add) else class_sub)(fam_l, fam_r, tol)
            if trace is not None:
                trace.add("linearity", "CLASS SUM/DIFFERENCE",
                          [Evidence("D_f ∩ D_g standard", "symbolic",
                                    combined.base.domain.render())],
                          format_expr(combined.base.rule))
            return _finish(combined.base, f, tol, trace)
        if isinstance(rule, Neg):
            inner, _ = _antiderive(Fn(rule.arg, f.domain), hooks, tol, trace, depth + 1)
            scaled = class_scale(-1, inner, tol)
            if trace is not None:
                trace.add("linearity", "CLASS SCALING (alpha != 0)",
                          [Evidence("alpha != 0", "symbolic", "alpha = -1")],
                          format_expr(scaled.base.rule))
            return _finish(scaled.base, f, tol, trace)
        if isinstance(rule, Mul):
            coef = as_constant(rule.left)
            if coef is not None and coef.to_float() != 0.0:
                inner, _ = _antiderive(Fn(rule.right, f.domain), hooks, tol, trace, depth + 1)
                scaled = class_scale(coef, inner, tol)
                if trace is not None:
                    trace.add("linearity", "CLASS SCALING (alpha != 0)",
                              [Evidence("alpha != 0", "symbolic", f"alpha = {coef.render()}")],
                              format_expr(scaled.base.rule))
                return _finish(scaled.base, f, tol, trace)
        if isinstance(rule, Div):
            coef = as_constant(rule.right)
            if coef is not None and coef.kind == "rat" and coef.coef != 0:
                inner, _ = _antiderive(Fn(rule.left, f.domain), hooks, tol, trace, depth + 1)
                scaled = class_scale(Exact.rational(1 / coef.coef), inner, tol)
                if trace is not None:
                    trace.add("linearity", "CLASS SCALING (alpha != 0)",
                              [Evidence("alpha != 0", "symbolic",
                                        f"alpha = 1/({coef.render()})")],
                              format_expr(scaled.base.rule))
                return _finish(scaled.base, f, tol, trace)
    except (RuleNotFoundError, NotAPrimitiveError, EmptyDomainError,
            HypothesisUnverifiedError, ValueError):
        return None
    return None


def _try_partial_fractions(f: Fn, rule: Expr, hooks, tol: Tolerances,
                           trace: Optional[RuleTrace], depth: int) -> Optional[PrimitiveFamily]:
    if not isinstance(rule, Div):
        return None
    c = as_constant(rule.left)
    if c is None:
        return None
    den = rule.right
    shape = False
    if isinstance(den, Mul) and isinstance(den.left, Var):
        s = _shift_of(den.right)
        shape = s is not None and _shift_constant(s) == 1
    if isinstance(den, Add) and isinstance(den.left, Pow) and isinstance(den.right, Var):
        shape = isinstance(den.left.base, Var) and den.left.exponent == 2
    if not shape:
        return None
    one = Const(Exact.rational(1))
    split = simplify_basic(Sub(Div(Const(c), X), Div(Const(c), Add(X, one))))
    try:
        fam, _ = _antiderive(Fn(split, f.domain), hooks, tol, trace, depth + 1)
        if trace is not None:
            trace.add("partial_fractions", "PARTIAL FRACTIONS 1/(u(u+1))",
                      [Evidence("1/(x(x+1)) = 1/x - 1/(x+1)", "symbolic", "")],
                      format_expr(split))
        return _finish(fam.base, f, tol, trace)
    except (RuleNotFoundError, NotAPrimitiveError, EmptyDomainError,
            HypothesisUnverifiedError, ValueError):
        return None
