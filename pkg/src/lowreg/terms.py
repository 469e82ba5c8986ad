"""Evaluable term DAG for derived schemes.

A finalized scheme term is a function of the initial data and the step size
only: every integration variable has been resolved into tau-polynomial
weights, semigroup dressings e^{a tau L}, and phi-filter dressings.  Nodes
evaluate against the spectral backend; commutator nodes expand their
defining recursion at evaluation time.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .equations import Monomial, ScalarFn, Trig
from .operators import OperatorExpr, QC, generator_order
from .spectral import (Field, Grid, GroupedFn, commutator, phi_values,
                       field_prod, pointwise_apply)

# --- tau polynomials ---------------------------------------------------------

def tau_poly(*terms) -> tuple:
    """Canonical tau-polynomial: tuple of (power, coeff), powers ascending."""
    acc: dict = {}
    for p, c in terms:
        acc[p] = acc.get(p, 0.0) + complex(c)
    return tuple(sorted((p, c) for p, c in acc.items() if c != 0))


def tp_eval(poly: tuple, tau: float) -> complex:
    return sum(c * tau ** p for p, c in poly)


def tp_mul(a: tuple, b: tuple) -> tuple:
    return tau_poly(*((pa + pb, ca * cb) for pa, ca in a for pb, cb in b))


def tp_scale(a: tuple, z) -> tuple:
    return tau_poly(*((p, c * z) for p, c in a))


TP_ONE = tau_poly((0, 1.0))


# --- dressings ---------------------------------------------------------------

@dataclass(frozen=True)
class Dressing:
    """Per-mode multiplier, possibly tau-dependent.

    kind "semi": e^{scale * tau * sym(op)}
    kind "phi":  sum_j w_j * phi_j(scale * tau * sym(op))
    kind "op":   sym(op)^power, tau-free
    """

    kind: str
    op: OperatorExpr
    scale: complex = 1.0
    phi_weights: tuple = ()
    power: int = 1

    def key(self) -> tuple:
        return (self.kind, self.op.terms, self.scale, self.phi_weights, self.power)

    def array(self, grid: Grid, tau: float) -> np.ndarray:
        cache_key = (self.key(), tau)
        hit = grid._mult_cache.get(cache_key)
        if hit is not None:
            return hit
        sym = grid.symbol(self.op)
        if self.kind == "semi":
            arr = np.exp(self.scale * tau * sym)
        elif self.kind == "phi":
            sigma = self.scale * tau * sym
            arr = np.zeros(grid.n, dtype=complex)
            for j, w in self.phi_weights:
                arr = arr + w * phi_values(j, sigma)
        elif self.kind == "op":
            arr = sym ** self.power
        elif self.kind in ("phi_exp", "phi_rest"):
            # split phi_j(s) = e^s E_j(s) + rest; near s=0 the whole value is
            # assigned to the rest part (the split is singular there).
            import math as _math
            sigma = self.scale * tau * sym
            small = np.abs(sigma) < 1e-6
            safe = np.where(small, 1.0, sigma)
            exp_part = np.zeros(grid.n, dtype=complex)
            for j, w in self.phi_weights:
                ej = 1.0 / safe
                for q in range(1, j):
                    fq = _math.factorial(q)
                    ej = (1.0 - fq * ej) / (fq * safe)
                exp_part = exp_part + w * np.exp(safe) * ej
            exp_part = np.where(small, 0.0, exp_part)
            if self.kind == "phi_exp":
                arr = exp_part
            else:
                full = np.zeros(grid.n, dtype=complex)
                for j, w in self.phi_weights:
                    full = full + w * phi_values(j, sigma)
                arr = full - exp_part
        else:  # pragma: no cover
            raise ValueError(f"unknown dressing {self.kind!r}")
        grid._mult_cache[cache_key] = arr
        return arr

    def is_time_free(self) -> bool:
        return self.kind == "op"

    def diff_order(self) -> float:
        if self.kind == "op":
            return max(self.op.domain_order(), 0) * self.power
        return 0.0


def semi(op: OperatorExpr, scale=1.0) -> Dressing:
    return Dressing("semi", op, complex(scale))


def phi(op: OperatorExpr, weights: dict, scale=1.0) -> Dressing:
    return Dressing("phi", op, complex(scale),
                    tuple(sorted((j, complex(w)) for j, w in weights.items() if w != 0)))


def opdress(op: OperatorExpr, power: int = 1) -> Dressing:
    return Dressing("op", op, power=power)


# --- template for commutator nodes ------------------------------------------

@dataclass(frozen=True)
class Leaf:
    slot: int
    fn: Optional[ScalarFn] = None
    mults: tuple = ()  # Dressings; only on bare (fn-less) leaves

    def __post_init__(self):
        if self.fn is not None and self.mults:
            raise ValueError("dressed leaves must be linear in their slot")


@dataclass(frozen=True)
class Group:
    mults: tuple = ()      # Dressings applied to the group product
    leaves: tuple = ()     # Leaf


@dataclass(frozen=True)
class Template:
    groups: tuple = ()     # Group
    outer: tuple = ()      # Dressings applied to the whole product

    def arity(self) -> int:
        slots = [lf.slot for g in self.groups for lf in g.leaves]
        return max(slots) + 1 if slots else 0


# --- nodes -------------------------------------------------------------------

@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Const:
    value: complex


@dataclass(frozen=True)
class FnNode:
    fn: ScalarFn
    arg: object


@dataclass(frozen=True)
class Prod:
    factors: tuple


@dataclass(frozen=True)
class Dress:
    dressing: Dressing
    arg: object


@dataclass(frozen=True)
class CommNode:
    depth: int
    lop: OperatorExpr
    template: Template
    args: tuple


@dataclass(frozen=True)
class Lin:
    """Linear combination with tau-polynomial weights; the top-level shape
    of every derived scheme term."""

    terms: tuple  # of (tau_poly, node)

    def __add__(self, other: "Lin") -> "Lin":
        return Lin(self.terms + other.terms)

    def scaled(self, z) -> "Lin":
        return Lin(tuple((tp_scale(p, z), n) for p, n in self.terms))


ZERO_TERM = Lin(())


def lin_single(poly, node) -> Lin:
    return Lin(((poly, node),))


# --- evaluation --------------------------------------------------------------

def _mult_callable(dressings: Sequence[Dressing], grid: Grid, tau: float):
    arrs = [d.array(grid, tau) for d in dressings]

    def apply(f: Field) -> Field:
        c = f.coeffs
        for a in arrs:
            c = a * c
        return Field(grid, c)

    return apply


def _grouped_fn(template: Template, grid: Grid, tau: float) -> "_TemplateFn":
    built = []
    for g in template.groups:
        leaves = []
        for lf in g.leaves:
            if lf.mults:
                leaves.append((lf.slot, None, _mult_callable(lf.mults, grid, tau)))
            else:
                leaves.append((lf.slot, lf.fn, None))
        built.append(([_mult_callable(g.mults, grid, tau)] if g.mults else [],
                      leaves))
    return _TemplateFn(built, [_mult_callable(template.outer, grid, tau)]
                       if template.outer else [])


class _TemplateFn(GroupedFn):
    """GroupedFn whose leaves may carry a linear per-leaf multiplier."""

    def __init__(self, groups, outer):
        self.groups = groups
        self.outer = outer
        slots = [s for _, leaves in groups for s, _, _ in leaves]
        if len(slots) != len(set(slots)):
            raise ValueError("slots must be unique across leaves")
        self.arity = (max(slots) + 1) if slots else 0

    def dirderiv(self, args, dirs):
        grid = args[0].grid
        per_slot: dict = {}
        for slot, w in dirs:
            per_slot.setdefault(slot, []).append(w)
        prod: Optional[Field] = None
        for mults, leaves in self.groups:
            fs = []
            for slot, fn, mult in leaves:
                ds = per_slot.pop(slot, [])
                if fn is None:
                    if len(ds) > 1:
                        return Field.zero(grid)
                    base = ds[0] if ds else args[slot]
                    fs.append(mult(base) if mult is not None else base)
                else:
                    g = fn
                    for _ in ds:
                        g = g.deriv()
                    if g.is_zero:
                        return Field.zero(grid)
                    fs.append(pointwise_apply(g, args[slot]))
                    fs.extend(ds)
            g = field_prod(fs) if fs else Field.constant(grid, 1.0)
            for m in mults:
                g = m(g)
            prod = g if prod is None else prod * g
        if per_slot:
            return Field.zero(grid)
        if prod is None:
            prod = Field.constant(grid, 1.0)
        for m in self.outer:
            prod = m(prod)
        return prod


def evaluate(node, env: dict, tau: float, grid: Optional[Grid] = None) -> Field:
    """Evaluate a term node against fields ``env`` at step size ``tau``."""
    if grid is None:
        grid = next(iter(env.values())).grid
    if isinstance(node, Lin):
        out = Field.zero(grid)
        for poly, sub in node.terms:
            w = tp_eval(poly, tau)
            if w != 0:
                out = out + evaluate(sub, env, tau, grid).scaled(w)
        return out
    if isinstance(node, Var):
        return env[node.name]
    if isinstance(node, Const):
        return Field.constant(grid, node.value)
    if isinstance(node, FnNode):
        return pointwise_apply(node.fn, evaluate(node.arg, env, tau, grid))
    if isinstance(node, Prod):
        return field_prod([evaluate(f, env, tau, grid) for f in node.factors])
    if isinstance(node, Dress):
        f = evaluate(node.arg, env, tau, grid)
        return Field(grid, node.dressing.array(grid, tau) * f.coeffs)
    if isinstance(node, CommNode):
        h = _grouped_fn(node.template, grid, tau)
        args = [evaluate(a, env, tau, grid) for a in node.args]
        return commutator(h, node.lop, node.depth, args)
    raise TypeError(f"not a term node: {node!r}")


# --- structural queries ------------------------------------------------------

def is_time_free(node) -> bool:
    """True when the node involves no semigroup/filter dressings, i.e. it can
    be reused as a coefficient of a xi-monomial inside a parent integral."""
    if isinstance(node, Lin):
        return all(is_time_free(n) for _, n in node.terms)
    if isinstance(node, (Var, Const)):
        return True
    if isinstance(node, FnNode):
        return is_time_free(node.arg)
    if isinstance(node, Prod):
        return all(is_time_free(f) for f in node.factors)
    if isinstance(node, Dress):
        return node.dressing.is_time_free() and is_time_free(node.arg)
    if isinstance(node, CommNode):
        tpl = node.template
        dressings = list(tpl.outer)
        for g in tpl.groups:
            dressings.extend(g.mults)
            for lf in g.leaves:
                dressings.extend(lf.mults)
        return (all(d.is_time_free() for d in dressings)
                and all(is_time_free(a) for a in node.args))
    return False


def data_cost(node) -> float:
    """Differential order the node has already consumed on the data; used by
    the Taylor-admission test."""
    if isinstance(node, Lin):
        return max((data_cost(n) for _, n in node.terms), default=0.0)
    if isinstance(node, (Var, Const)):
        return 0.0
    if isinstance(node, FnNode):
        return data_cost(node.arg)
    if isinstance(node, Prod):
        return max((data_cost(f) for f in node.factors), default=0.0)
    if isinstance(node, Dress):
        return node.dressing.diff_order() + data_cost(node.arg)
    if isinstance(node, CommNode):
        per_level = max(node.lop.domain_order() - 1, 0)
        tpl_cost = 0.0
        for g in node.template.groups:
            for d in g.mults:
                tpl_cost = max(tpl_cost, d.diff_order())
            for lf in g.leaves:
                for d in lf.mults:
                    tpl_cost = max(tpl_cost, d.diff_order())
        args = max((data_cost(a) for a in node.args), default=0.0)
        return node.depth * per_level + tpl_cost + args
    raise TypeError(f"not a term node: {node!r}")


# --- serialization -----------------------------------------------------------

def _qc_to_json(c: QC) -> list:
    return [str(c.re), str(c.im)]


def _op_to_json(op: OperatorExpr) -> list:
    return [[g[0], None if g[1] is None else str(g[1]), _qc_to_json(c)]
            for g, c in op.terms]


def _op_from_json(data) -> OperatorExpr:
    terms = []
    for name, m, (re, im) in data:
        gen = (name, None if m is None else Fraction(m))
        terms.append((gen, QC(Fraction(re), Fraction(im))))
    return OperatorExpr(tuple(terms))


def _fn_to_json(fn: Optional[ScalarFn]):
    if fn is None:
        return None
    if isinstance(fn, Monomial):
        c = complex(fn.coeff)
        return {"kind": "monomial", "coeff": [c.real, c.imag], "power": fn.power}
    if isinstance(fn, Trig):
        c = complex(fn.coeff)
        return {"kind": fn.kind, "coeff": [c.real, c.imag], "scale": fn.scale}
    raise TypeError(f"unserializable scalar fn {fn!r}")


def _fn_from_json(data) -> Optional[ScalarFn]:
    if data is None:
        return None
    c = complex(data["coeff"][0], data["coeff"][1])
    if data["kind"] == "monomial":
        return Monomial(c, data["power"])
    return Trig(data["kind"], c, data["scale"])


def _dressing_to_json(d: Dressing) -> dict:
    return {"kind": d.kind, "op": _op_to_json(d.op),
            "scale": [d.scale.real, d.scale.imag] if isinstance(d.scale, complex) else [float(d.scale), 0.0],
            "phi": [[j, [w.real, w.imag]] for j, w in d.phi_weights],
            "power": d.power}


def _dressing_from_json(data) -> Dressing:
    return Dressing(data["kind"], _op_from_json(data["op"]),
                    complex(*data["scale"]),
                    tuple((j, complex(*w)) for j, w in data["phi"]),
                    data["power"])


def node_to_dict(node) -> dict:
    if isinstance(node, Lin):
        return {"type": "lin",
                "terms": [[[ [p, [c.real, c.imag]] for p, c in poly], node_to_dict(n)]
                          for poly, n in node.terms]}
    if isinstance(node, Var):
        return {"type": "var", "name": node.name}
    if isinstance(node, Const):
        v = complex(node.value)
        return {"type": "const", "value": [v.real, v.imag]}
    if isinstance(node, FnNode):
        return {"type": "fn", "fn": _fn_to_json(node.fn), "arg": node_to_dict(node.arg)}
    if isinstance(node, Prod):
        return {"type": "prod", "factors": [node_to_dict(f) for f in node.factors]}
    if isinstance(node, Dress):
        return {"type": "dress", "dressing": _dressing_to_json(node.dressing),
                "arg": node_to_dict(node.arg)}
    if isinstance(node, CommNode):
        tpl = node.template
        return {"type": "comm", "depth": node.depth, "lop": _op_to_json(node.lop),
                "template": {
                    "outer": [_dressing_to_json(d) for d in tpl.outer],
                    "groups": [{
                        "mults": [_dressing_to_json(d) for d in g.mults],
                        "leaves": [{"slot": lf.slot, "fn": _fn_to_json(lf.fn),
                                    "mults": [_dressing_to_json(d) for d in lf.mults]}
                                   for lf in g.leaves]} for g in tpl.groups]},
                "args": [node_to_dict(a) for a in node.args]}
    raise TypeError(f"not a term node: {node!r}")


def node_from_dict(data: dict):
    t = data["type"]
    if t == "lin":
        return Lin(tuple((tau_poly(*((p, complex(*c)) for p, c in poly)),
                          node_from_dict(n)) for poly, n in data["terms"]))
    if t == "var":
        return Var(data["name"])
    if t == "const":
        return Const(complex(*data["value"]))
    if t == "fn":
        return FnNode(_fn_from_json(data["fn"]), node_from_dict(data["arg"]))
    if t == "prod":
        return Prod(tuple(node_from_dict(f) for f in data["factors"]))
    if t == "dress":
        return Dress(_dressing_from_json(data["dressing"]), node_from_dict(data["arg"]))
    if t == "comm":
        tpl = Template(
            groups=tuple(Group(
                mults=tuple(_dressing_from_json(d) for d in g["mults"]),
                leaves=tuple(Leaf(lf["slot"], _fn_from_json(lf["fn"]),
                                  tuple(_dressing_from_json(d) for d in lf["mults"]))
                             for lf in g["leaves"])) for g in data["template"]["groups"]),
            outer=tuple(_dressing_from_json(d) for d in data["template"]["outer"]))
        return CommNode(data["depth"], _op_from_json(data["lop"]), tpl,
                        tuple(node_from_dict(a) for a in data["args"]))
    raise ValueError(f"unknown node type {t!r}")


def node_to_json(node) -> str:
    return json.dumps(node_to_dict(node), sort_keys=True)


def node_from_json(s: str):
    return node_from_dict(json.loads(s))


# --- pretty printing ---------------------------------------------------------

def _fmt_complex(c: complex) -> str:
    if c.imag == 0:
        r = c.real
        return f"{int(r)}" if r == int(r) else f"{r:g}"
    if c.real == 0:
        if c.imag == 1:
            return "i"
        if c.imag == -1:
            return "-i"
        return f"{c.imag:g}i"
    return f"({c.real:g}{c.imag:+g}i)"


def _fmt_poly(poly) -> str:
    bits = []
    for p, c in poly:
        cs = _fmt_complex(c)
        if p == 0:
            bits.append(cs)
        else:
            tp = "τ" if p == 1 else f"τ^{p}"
            bits.append(tp if cs == "1" else f"-{tp}" if cs == "-1" else f"{cs}·{tp}")
    return " + ".join(bits) if bits else "0"


def _fmt_dressing(d: Dressing) -> str:
    if d.kind == "semi":
        s = _fmt_complex(complex(d.scale))
        pre = "" if s == "1" else s
        return f"e^{{{pre}τ({d.op})}}"
    if d.kind == "phi":
        s = _fmt_complex(complex(d.scale))
        pre = "" if s == "1" else s
        bits = []
        for j, w in d.phi_weights:
            ws = _fmt_complex(w)
            core = f"φ{j}({pre}τ({d.op}))"
            bits.append(core if ws == "1" else f"-{core}" if ws == "-1" else f"{ws}·{core}")
        return "[" + " + ".join(bits).replace("+ -", "- ") + "]"
    body = f"({d.op})"
    return body if d.power == 1 else f"{body}^{d.power}"


def pretty(node) -> str:
    if isinstance(node, Lin):
        bits = [f"({_fmt_poly(p)})·{pretty(n)}" for p, n in node.terms]
        return " + ".join(bits) if bits else "0"
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Const):
        return _fmt_complex(complex(node.value))
    if isinstance(node, FnNode):
        return f"{node.fn.label()}[{pretty(node.arg)}]"
    if isinstance(node, Prod):
        return "·".join(f"({pretty(f)})" for f in node.factors)
    if isinstance(node, Dress):
        return f"{_fmt_dressing(node.dressing)}({pretty(node.arg)})"
    if isinstance(node, CommNode):
        tpl_bits = []
        for g in node.template.groups:
            leaf_bits = []
            for lf in g.leaves:
                s = f"w{lf.slot}" if lf.fn is None else f"{lf.fn.label()}[w{lf.slot}]"
                for d in lf.mults:
                    s = f"{_fmt_dressing(d)}({s})"
                leaf_bits.append(s)
            gstr = "·".join(leaf_bits) if leaf_bits else "1"
            for d in g.mults:
                gstr = f"{_fmt_dressing(d)}({gstr})"
            tpl_bits.append(f"({gstr})")
        tpl = "·".join(tpl_bits)
        for d in node.template.outer:
            tpl = f"{_fmt_dressing(d)}({tpl})"
        args = ", ".join(pretty(a) for a in node.args)
        sup = "" if node.depth == 1 else f"^{node.depth}"
        return f"C{sup}[{tpl}, {node.lop}]({args})"
    return repr(node)
