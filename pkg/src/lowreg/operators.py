"""Formal operator expressions over a fixed generator basis, with exact
rational-complex coefficients, and the dominant-part calculus used to split
oscillations into a part that is integrated exactly and a lower-order rest.

Generators and their differential orders:

    laplacian       Delta            order 2
    sqrt_shift(m)   sqrt(-Delta+m^2) order 1
    d_x             d/dx             order 1
    identity        Id               order 0
    inv_sqrt_shift(m)                order -1  (bounded smoothing, outer ops only)

Domains are compared through differential order: D(A) is strictly smaller
than D(B) iff order(A) > order(B); two expressions have equal domain iff
their top-order generator supports coincide.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, TYPE_CHECKING

if TYPE_CHECKING:  # pragma: no cover
    from .equations import EquationSpec
    from .trees import DecoratedTree


@dataclass(frozen=True)
class QC:
    """Complex number with exact rational real/imaginary parts."""

    re: Fraction = Fraction(0)
    im: Fraction = Fraction(0)

    @staticmethod
    def of(z) -> "QC":
        if isinstance(z, QC):
            return z
        if isinstance(z, complex):
            return QC(Fraction(z.real).limit_denominator(10**12),
                      Fraction(z.imag).limit_denominator(10**12))
        return QC(Fraction(z), Fraction(0))

    def __add__(self, other: "QC") -> "QC":
        return QC(self.re + other.re, self.im + other.im)

    def __sub__(self, other: "QC") -> "QC":
        return QC(self.re - other.re, self.im - other.im)

    def __mul__(self, other: "QC") -> "QC":
        return QC(self.re * other.re - self.im * other.im,
                  self.re * other.im + self.im * other.re)

    def __neg__(self) -> "QC":
        return QC(-self.re, -self.im)

    def conj(self) -> "QC":
        return QC(self.re, -self.im)

    @property
    def is_zero(self) -> bool:
        return self.re == 0 and self.im == 0

    def to_complex(self) -> complex:
        return complex(self.re) + 1j * complex(self.im)

    def sort_key(self) -> tuple:
        return (self.re, self.im)

    def __str__(self) -> str:
        if self.is_zero:
            return "0"
        parts = []
        if self.re:
            parts.append(str(self.re))
        if self.im:
            if self.im == 1:
                parts.append("i")
            elif self.im == -1:
                parts.append("-i")
            else:
                parts.append(f"{self.im}*i")
        return "+".join(parts).replace("+-", "-")


QC_ZERO = QC()
QC_ONE = QC(Fraction(1))
QC_I = QC(Fraction(0), Fraction(1))

# generator symbols: (name, mass parameter or None)
LAPLACIAN = ("laplacian", None)
D_X = ("d_x", None)
IDENTITY = ("identity", None)

_ORDERS = {"laplacian": 2, "sqrt_shift": 1, "d_x": 1, "abs_grad": 1,
           "identity": 0, "inv_sqrt_shift": -1}


def sqrt_shift(m) -> tuple:
    """Generator for sqrt(-Delta + m^2); m enters the per-mode symbol."""
    return ("sqrt_shift", Fraction(m))


def inv_sqrt_shift(m) -> tuple:
    return ("inv_sqrt_shift", Fraction(m))


def generator_order(gen: tuple) -> int:
    return _ORDERS[gen[0]]


@dataclass(frozen=True)
class OperatorExpr:
    """Finite rational-complex combination of generators; zero coefficients
    are pruned so equality is coefficient-wise."""

    terms: tuple  # sorted tuple of (generator, QC)

    @staticmethod
    def make(coeffs: dict) -> "OperatorExpr":
        items = tuple(sorted(((g, QC.of(c)) for g, c in coeffs.items()
                              if not QC.of(c).is_zero), key=lambda t: t[0]))
        return OperatorExpr(items)

    def sort_key(self) -> tuple:
        return tuple((g, c.sort_key()) for g, c in self.terms)

    @property
    def is_zero(self) -> bool:
        return not self.terms

    def coeff(self, gen: tuple) -> QC:
        for g, c in self.terms:
            if g == gen:
                return c
        return QC_ZERO

    def __add__(self, other: "OperatorExpr") -> "OperatorExpr":
        acc = {g: c for g, c in self.terms}
        for g, c in other.terms:
            acc[g] = acc.get(g, QC_ZERO) + c
        return OperatorExpr.make(acc)

    def __sub__(self, other: "OperatorExpr") -> "OperatorExpr":
        return self + (-other)

    def __neg__(self) -> "OperatorExpr":
        return OperatorExpr(tuple((g, -c) for g, c in self.terms))

    def scale(self, z) -> "OperatorExpr":
        z = QC.of(z)
        if z.is_zero:
            return ZERO_OP
        return OperatorExpr(tuple((g, c * z) for g, c in self.terms))

    def conj(self) -> "OperatorExpr":
        return OperatorExpr(tuple((g, c.conj()) for g, c in self.terms))

    def domain_order(self) -> int:
        """Max differential order among nonzero generators (0 for zero op)."""
        if self.is_zero:
            return 0
        return max(generator_order(g) for g, _ in self.terms)

    def top_support(self) -> frozenset:
        """Generators at the top differential order."""
        d = self.domain_order()
        return frozenset(g for g, _ in self.terms if generator_order(g) == d)

    def top_part(self) -> "OperatorExpr":
        d = self.domain_order()
        return OperatorExpr(tuple((g, c) for g, c in self.terms
                                  if generator_order(g) == d))

    def __str__(self) -> str:
        if self.is_zero:
            return "0"
        names = {"laplacian": "Δ", "d_x": "∂x", "identity": "Id"}
        out = []
        for g, c in self.terms:
            if g[0] in names:
                gs = names[g[0]]
            elif g[0] == "sqrt_shift":
                gs = f"⟨∇⟩_{g[1]}"
            else:
                gs = f"⟨∇⟩_{g[1]}⁻¹"
            cs = str(c)
            out.append(gs if cs == "1" else f"-{gs}" if cs == "-1" else f"{cs}*{gs}")
        return " + ".join(out).replace("+ -", "- ")


ZERO_OP = OperatorExpr(())
ID_OP = OperatorExpr.make({IDENTITY: 1})


def delta(coeff=1) -> OperatorExpr:
    return OperatorExpr.make({LAPLACIAN: coeff})


def i_delta() -> OperatorExpr:
    return OperatorExpr.make({LAPLACIAN: 1j})


def i_sqrt_shift(m) -> OperatorExpr:
    return OperatorExpr.make({sqrt_shift(m): 1j})


def d_x(coeff=1) -> OperatorExpr:
    return OperatorExpr.make({D_X: coeff})


def abs_grad() -> OperatorExpr:
    """|∇| = (-Δ)^{1/2}, the stabilizer filters' argument."""
    return OperatorExpr.make({("abs_grad", None): 1})


# --- domain comparison and dominant parts ---------------------------------

def same_domain(a: OperatorExpr, b: OperatorExpr) -> bool:
    return (a.domain_order() == b.domain_order()
            and a.top_support() == b.top_support())


def strictly_smaller_domain(a: OperatorExpr, b: OperatorExpr) -> bool:
    """D(a) strictly contained in D(b): a has strictly higher order."""
    return a.domain_order() > b.domain_order()


class OperatorSet:
    """Finite set of operator expressions (duplicates collapse)."""

    def __init__(self, exprs: Iterable[OperatorExpr] = ()):
        seen = {}
        for e in exprs:
            seen[e.terms] = e
        self._exprs = tuple(sorted(seen.values(), key=OperatorExpr.sort_key))

    def __iter__(self):
        return iter(self._exprs)

    def __len__(self) -> int:
        return len(self._exprs)

    def __eq__(self, other) -> bool:
        return isinstance(other, OperatorSet) and self._exprs == other._exprs

    def __hash__(self) -> int:
        return hash(self._exprs)

    def __contains__(self, e: OperatorExpr) -> bool:
        return e in self._exprs

    def union(self, other: "OperatorSet") -> "OperatorSet":
        return OperatorSet((*self._exprs, *other._exprs))

    def __str__(self) -> str:
        return "{" + ", ".join(str(e) for e in self._exprs) + "}"


def dominant_split(a: OperatorExpr, ldom: OperatorExpr):
    """If a = ldom + rest with order(ldom) > order(rest), return rest; else None."""
    if ldom.is_zero:
        return None
    rest = a - ldom
    if ldom.domain_order() > rest.domain_order():
        return rest
    return None


def p_dom(s: OperatorSet) -> OperatorExpr:
    """Common dominant part of a finite operator set, or zero.

    The candidates are the elements of smallest domain (largest differential
    order); they must share that domain (identical top-order support) and a
    single top-order part, which must also strictly dominate the domains of
    the remaining elements.
    """
    if len(s) == 0:
        raise ValueError("p_dom of an empty set")
    max_ord = max(e.domain_order() for e in s)
    if max_ord <= 0:
        return ZERO_OP
    cands = [e for e in s if e.domain_order() == max_ord]
    tops = {e.top_part().terms for e in cands}
    if len(tops) != 1:
        return ZERO_OP
    supports = {e.top_support() for e in cands}
    if len(supports) != 1:
        return ZERO_OP
    ldom = cands[0].top_part()
    # every candidate must split as ldom + lower order
    for e in cands:
        if dominant_split(e, ldom) is None:
            return ZERO_OP
    return ldom


def oplus(op: OperatorExpr, s: OperatorSet) -> OperatorSet:
    """Add ``op`` to each element."""
    return OperatorSet(op + e for e in s)


def ominus(s: OperatorSet, op: OperatorExpr) -> OperatorSet:
    """Strip ``op`` from every element whose dominant part equals it."""
    out = []
    for e in s:
        rest = dominant_split(e, op)
        out.append(rest if rest is not None else e)
    return OperatorSet(out)


def max_op(op: OperatorExpr, s: OperatorSet) -> OperatorSet:
    """Replace elements dominated by ``op`` with ``op`` itself, others with 0."""
    out = []
    for e in s:
        out.append(op if dominant_split(e, op) is not None else ZERO_OP)
    return OperatorSet(out)


# --- dominant operators of a decorated tree --------------------------------

def r_dom_o(tree: "DecoratedTree", o: str, eq: "EquationSpec") -> OperatorSet:
    """Operator set collected from a decorated tree seen from component ``o``:
    the component operators reachable through the root driver, together with
    the sets of all planted subtrees (node polynomial decorations ignored)."""
    from .trees import graft  # local import to avoid a cycle

    driver = tree.driver
    if driver is None:
        raise ValueError("r_dom_o expects a tree with a driver at the root")
    labels = eq.interactions.get((o, driver))
    if labels is None:
        raise KeyError(f"no nonlinearity for component {o!r}, driver {driver!r}")
    s = OperatorSet(eq.plus_ops[lb] for lb in labels)
    for edge, sub in tree.children:
        s = s.union(r_dom(graft(edge, sub), eq))
    return s


def l_dom(planted: "DecoratedTree", eq: "EquationSpec") -> OperatorExpr:
    (o, sub), = planted.children
    lo = eq.plus_ops[o]
    return p_dom(oplus(-lo, r_dom_o(sub, o, eq)))


def r_dom(planted: "DecoratedTree", eq: "EquationSpec") -> OperatorSet:
    (o, sub), = planted.children
    lo = eq.plus_ops[o]
    inner = oplus(-lo, r_dom_o(sub, o, eq))
    return oplus(lo, max_op(l_dom(planted, eq), inner))


def r_low(planted: "DecoratedTree", eq: "EquationSpec") -> OperatorSet:
    (o, sub), = planted.children
    lo = eq.plus_ops[o]
    inner = oplus(-lo, r_dom_o(sub, o, eq))
    return ominus(inner, p_dom(inner))
