"""Scheme derivation engine.

Two characters act on decorated trees: the exact one evaluates each tree's
iterated Duhamel integral by adaptive quadrature (the oracle), while the
approximating one emits evaluable term DAGs after splitting the operator
interactions into a dominant part, integrated exactly through phi-filters,
and lower-order parts that are Taylor-expanded.  The split is driven by a
Taylor-admission test against the a-priori regularity of the data.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.integrate import quad_vec

from . import operators as ops
from .equations import EquationSpec, Potential, ScalarFn, nth_deriv
from .operators import OperatorExpr, ZERO_OP, p_dom, dominant_split
from .spectral import (Field, Grid, apply_operator, commutator, registered,
                       semigroup)
from .terms import (CommNode, Const, Dress, FnNode, Group, Leaf, Lin, Prod,
                    Template, Var, ZERO_TERM, Dressing, data_cost, evaluate,
                    is_time_free, lin_single, opdress, phi, semi, tau_poly,
                    tp_mul, tp_scale, TP_ONE)
from .trees import (DecoratedTree, ZERO_TREE, decompose, deg, graft, n_plus,
                    project_Dr, symmetry_factor_root, with_children)


class QuadratureError(RuntimeError):
    """Raised when the exact-integral oracle cannot reach its tolerance."""


class DerivationError(NotImplementedError):
    """Raised for tree/domain combinations outside the implemented calculus
    (children that stay oscillatory, nested outer multipliers)."""


@dataclass(frozen=True)
class RegularityDomain:
    """A-priori Sobolev class of data and potentials; decides whether an
    operator monomial may be Taylor-expanded."""

    s: float
    basis: str = "periodic"

    def admits_order(self, d: float, margin: float = 0.0) -> bool:
        return d <= self.s - margin + 1e-9


# --- symbolic root coefficients ----------------------------------------------

@dataclass(frozen=True)
class UFactor:
    """One tensor factor of the root coefficient: the depth-fold commutator
    of a scalar-function derivative with the component operator, propagated
    by that component's semigroup."""

    label: str
    op: OperatorExpr
    fn: ScalarFn
    comm_depth: int

    def arg_node(self):
        var = Var(f"v_{self.label}")
        if self.comm_depth == 0:
            if self.fn.is_constant:
                return Const(self.fn(0.0 + 0.0j))
            return FnNode(self.fn, var)
        tpl = Template(groups=(Group((), (Leaf(0, self.fn),)),))
        return CommNode(self.comm_depth, self.op, tpl, (var,))

    def cost(self) -> float:
        return self.comm_depth * max(self.op.domain_order() - 1, 0)


@dataclass(frozen=True)
class UTerm:
    coeff: complex
    factors: tuple  # of UFactor


def _op_kills_constants(op: OperatorExpr) -> bool:
    return all(g[0] in ("laplacian", "d_x", "abs_grad") for g, _ in op.terms)


def _comm_is_zero(fn: ScalarFn, op: OperatorExpr, depth: int) -> bool:
    if fn.is_zero:
        return True
    if depth == 0:
        return False
    if fn.is_linear:
        return True
    if fn.is_constant and _op_kills_constants(op):
        return True
    return False


def upsilon_root(tree: DecoratedTree, o: str, eq: EquationSpec) -> list:
    """Root coefficient as a sum of tensor-factor terms.

    Each child edge differentiates the matching nonlinearity factor once;
    the polynomial decoration distributes commutator insertions over the
    factors by the Leibniz rule.  Identically vanishing terms are dropped,
    so an empty result means the tree does not occur for this equation.
    """
    ell, driver, children = decompose(tree)
    if driver is None:
        raise ValueError("root coefficient needs a driver at the root")
    labels = eq.interactions.get((o, driver))
    if labels is None:
        raise KeyError(f"component {o!r} has no driver {driver!r}")
    counts = {lb: 0 for lb in labels}
    for edge, _ in children:
        if edge not in counts:
            raise KeyError(f"edge label {edge!r} not allowed under driver {driver!r}")
        counts[edge] += 1
    base = []
    for lb in labels:
        fn = nth_deriv(eq.factor_fn(driver, o, lb), counts[lb])
        if fn.is_zero:
            return []
        base.append((lb, eq.plus_ops[lb], fn))
    terms = []
    nfac = len(base)
    for comp in _compositions(ell, nfac):
        w = math.factorial(ell)
        for c in comp:
            w //= math.factorial(c)
        factors = []
        dead = False
        for (lb, op, fn), depth in zip(base, comp):
            if _comm_is_zero(fn, op, depth):
                dead = True
                break
            factors.append(UFactor(lb, op, fn, depth))
        if not dead:
            terms.append(UTerm(complex(w), tuple(factors)))
    return terms


def _compositions(total: int, parts: int):
    if parts == 0:
        if total == 0:
            yield ()
        return
    for head in range(total + 1):
        for rest in _compositions(total - head, parts - 1):
            yield (head, *rest)


def upsilon_node(tree: DecoratedTree, o: str, eq: EquationSpec, xi_scale=1.0) -> Lin:
    """The root coefficient as an evaluable sum, semigroups at time
    ``xi_scale * tau`` (0 drops them, as in the local-error maps)."""
    out = []
    for t in upsilon_root(tree, o, eq):
        fs = []
        for uf in t.factors:
            node = uf.arg_node()
            if xi_scale != 0 and not uf.op.is_zero:
                node = Dress(semi(uf.op, xi_scale), node)
            fs.append(node)
        out.append((tau_poly((0, t.coeff)), Prod(tuple(fs)) if len(fs) != 1 else fs[0]))
    return Lin(tuple(out))


# --- tree enumeration ---------------------------------------------------------

def enumerate_trees(eq: EquationSpec, p: int, o: str) -> list:
    """All decorated trees feeding the order-p scheme for component ``o``:
    at most p-1 time integrations, generated by Duhamel iteration and with a
    nonvanishing iterated integral."""
    if p < 1:
        raise ValueError("scheme order must be >= 1")
    return _trees_for(eq, o, p - 1, {})


def _trees_for(eq: EquationSpec, o: str, budget: int, memo: dict) -> list:
    key = (o, budget)
    if key in memo:
        return memo[key]
    found = set()
    for (comp, driver), labels in eq.interactions.items():
        if comp != o:
            continue
        for ell in range(budget + 1):
            rem = budget - ell
            pairs = []
            if rem >= 1:
                for lb in labels:
                    for sub in _trees_for(eq, lb, rem - 1, memo):
                        if 1 + n_plus(sub) <= rem:
                            pairs.append((lb, sub))
            for combo in _multisets(pairs, rem):
                t = with_children(driver, ell, combo)
                if n_plus(t) <= budget and upsilon_root(t, o, eq):
                    found.add(t)
    result = sorted(found, key=DecoratedTree.sort_key)
    memo[key] = result
    return result


def _multisets(pairs: list, budget: int):
    """Multisets of (edge, subtree) pairs with total cost (1 + n_+) within
    budget; nondecreasing index choice avoids permuted duplicates."""

    def rec(start: int, left: int):
        yield ()
        for i in range(start, len(pairs)):
            cost = 1 + n_plus(pairs[i][1])
            if cost <= left:
                for rest in rec(i, left - cost):
                    yield (pairs[i], *rest)

    seen = set()
    for combo in rec(0, budget):
        key = tuple(sorted((e, t.sort_key()) for e, t in combo))
        if key not in seen:
            seen.add(key)
            yield combo


# --- the K operator -----------------------------------------------------------

@dataclass(frozen=True)
class KFactor:
    op: OperatorExpr
    node: object
    cost: float = 0.0


@dataclass(frozen=True)
class Integrand:
    """xi^ell * B( prod_i e^{xi L_i} u_i ), with xi-free factors u_i."""

    ell: int
    coeff: complex
    factors: tuple  # of KFactor
    outer: Optional[OperatorExpr] = None


def _admits_full_taylor(intg: Integrand, lo: OperatorExpr, r: int,
                        domain: RegularityDomain, eq: EquationSpec) -> bool:
    budget = r - intg.ell + 1
    orders = [max(lo.domain_order(), 0)]
    orders += [max(f.op.domain_order(), 0) for f in intg.factors]
    worst = budget * max(orders)
    worst += max((f.cost for f in intg.factors), default=0.0)
    return domain.admits_order(worst, eq.admit_margin)


def _comm_multinomial(arity: int, op_counts: Sequence[tuple]) -> list:
    """Expand nested commutators of a bare product with commuting operators:
    C^k[M, L] distributes k applications of (-L outside | L on one slot).
    Returns (integer coeff, outer op-powers, per-slot op-powers) tuples;
    empty for the identically vanishing single-slot case."""
    total = sum(c for _, c in op_counts)
    if arity == 1 and total >= 1:
        return []
    state = {((), tuple()): 1}

    def bump(powers: tuple, op_idx: int) -> tuple:
        d = dict(powers)
        d[op_idx] = d.get(op_idx, 0) + 1
        return tuple(sorted(d.items()))

    for op_idx, (_, count) in enumerate(op_counts):
        for _ in range(count):
            new: dict = {}
            for (outer, slots), coeff in state.items():
                slots = slots if slots else tuple(() for _ in range(arity))
                key = (bump(outer, op_idx), slots)
                new[key] = new.get(key, 0) - coeff
                for i in range(arity):
                    s2 = list(slots)
                    s2[i] = bump(s2[i], op_idx)
                    key = (outer, tuple(s2))
                    new[key] = new.get(key, 0) + coeff
            state = new
    out = []
    for (outer, slots), coeff in state.items():
        if coeff:
            slots = slots if slots else tuple(() for _ in range(arity))
            out.append((coeff, outer, slots))
    return out


def _op_power_dressings(powers: tuple, op_list: Sequence[OperatorExpr]) -> tuple:
    return tuple(opdress(op_list[idx], power) for idx, power in powers)


def _w_phi_weights(m: int, a: int) -> dict:
    """Exact integral int_0^tau (tau-xi)^m xi^a e^{xi L} dxi
    = tau^{m+a+1} * sum_i C(m,i)(-1)^i (a+i)! phi_{a+i+1}(tau L)."""
    return {a + i + 1: math.comb(m, i) * (-1) ** i * math.factorial(a + i)
            for i in range(m + 1)}


def k_approx(intg: Integrand, o: str, r: int, domain: RegularityDomain,
             eq: EquationSpec) -> Lin:
    """Order-r approximation of int_0^tau e^{(tau-xi) L_o} F(xi) dxi.

    Taylor-expands everything the domain admits; otherwise integrates the
    dominant oscillation exactly (phi-filters) and Taylor-expands only the
    lower-order parts, with commutator corrections in the step operator.
    """
    if intg.ell > r:
        raise ValueError("polynomial decoration exceeds the approximation order")
    lo = eq.plus_ops[o]
    if _admits_full_taylor(intg, lo, r, domain, eq):
        return _k_full_taylor(intg, lo, r)
    a_ops = [f.op - lo for f in intg.factors]
    ldom = p_dom(ops.OperatorSet(a_ops))
    if not ldom.is_zero:
        return _k_resonance(intg, lo, ldom, a_ops, r)
    return _k_no_resonance(intg, lo, a_ops, r)


def _k_full_taylor(intg: Integrand, lo: OperatorExpr, r: int) -> Lin:
    terms = []
    nf = len(intg.factors)
    for total in range(r - intg.ell + 1):
        for n in range(total + 1):
            for ks in _compositions(total - n, nf):
                if any(k and intg.factors[i].op.is_zero for i, k in enumerate(ks)):
                    continue
                a = sum(ks) + intg.ell
                w = intg.coeff * math.factorial(a) / math.factorial(n + a + 1)
                for k in ks:
                    w /= math.factorial(k)
                fs = []
                for f, k in zip(intg.factors, ks):
                    fs.append(Dress(opdress(f.op, k), f.node) if k else f.node)
                node = Prod(tuple(fs)) if len(fs) != 1 else fs[0]
                if intg.outer is not None:
                    node = Dress(opdress(intg.outer), node)
                if n:
                    node = Dress(opdress(lo, n), node)
                terms.append((tau_poly((n + a + 1, w)), node))
    return Lin(tuple(terms))


def _k_resonance(intg: Integrand, lo: OperatorExpr, ldom: OperatorExpr,
                 a_ops: list, r: int) -> Lin:
    nf = len(intg.factors)
    in_i = []
    a_low = []
    for a in a_ops:
        rest = dominant_split(a, ldom)
        if rest is not None:
            in_i.append(True)
            a_low.append(rest)
        else:
            in_i.append(False)
            a_low.append(a)
    side_j = [i for i in range(nf) if not in_i[i]]
    side_i = [i for i in range(nf) if in_i[i]]
    terms = []
    for q in range(r - intg.ell + 1):
        for n, m, p, ks in _nmpk(q, nf):
            if any(k and a_low[i].is_zero for i, k in enumerate(ks)):
                continue
            for jj in range(p + 1):
                # C^p[M_I, xi Ldom + tau Lo]: binomial split of the operator
                for cn, outer_n, slots_n in _comm_multinomial(len(side_j), ((lo, n),)):
                    for cp, outer_p, slots_p in _comm_multinomial(
                            len(side_i), ((ldom, jj), (lo, p - jj))):
                        a = intg.ell + sum(ks) + jj
                        # the outer commutator expansion carries (xi-tau)^m
                        w = (intg.coeff * cn * cp * math.comb(p, jj) * (-1) ** m
                             / (math.factorial(p) * math.factorial(m)
                                * math.factorial(n)))
                        for k in ks:
                            w /= math.factorial(k)
                        tau_pow = n + (p - jj) + m + a + 1
                        phi_w = _w_phi_weights(m, a)
                        groups = []
                        if side_j or outer_n:
                            leaves = tuple(
                                Leaf(slot, None,
                                     _op_power_dressings(slots_n[idx], [lo]))
                                for idx, slot in enumerate(side_j))
                            groups.append(Group(
                                (semi(lo), *_op_power_dressings(outer_n, [lo])),
                                leaves))
                        leaves_i = tuple(
                            Leaf(slot, None,
                                 _op_power_dressings(slots_p[idx], [ldom, lo]))
                            for idx, slot in enumerate(side_i))
                        groups.append(Group(
                            (semi(lo), phi(ldom, phi_w),
                             *_op_power_dressings(outer_p, [ldom, lo])),
                            leaves_i))
                        tpl = Template(groups=tuple(groups))
                        args = []
                        for i, f in enumerate(intg.factors):
                            node = f.node
                            if ks[i]:
                                node = Dress(opdress(a_low[i], ks[i]), node)
                            args.append(node)
                        node = CommNode(m, lo, tpl, tuple(args))
                        if intg.outer is not None:
                            node = Dress(opdress(intg.outer), node)
                        terms.append((tau_poly((tau_pow, w)), node))
    return Lin(tuple(terms))


def _k_no_resonance(intg: Integrand, lo: OperatorExpr, a_ops: list, r: int) -> Lin:
    nf = len(intg.factors)
    terms = []
    for q in range(r - intg.ell + 1):
        for n, m, ks in _nmk(q, nf):
            if any(k and a_ops[i].is_zero for i, k in enumerate(ks)):
                continue
            for cn, outer_n, slots_n in _comm_multinomial(nf, ((lo, n),)):
                a = intg.ell + sum(ks)
                w = (intg.coeff * cn * (-1) ** m * math.factorial(a)
                     / (math.factorial(n) * math.factorial(m + a + 1)))
                for k in ks:
                    w /= math.factorial(k)
                tau_pow = n + m + a + 1
                leaves = tuple(Leaf(i, None,
                                    _op_power_dressings(slots_n[i], [lo]))
                               for i in range(nf))
                tpl = Template(groups=(Group(
                    (semi(lo), *_op_power_dressings(outer_n, [lo])), leaves),))
                args = []
                for i, f in enumerate(intg.factors):
                    node = f.node
                    if ks[i]:
                        node = Dress(opdress(a_ops[i], ks[i]), node)
                    args.append(node)
                node = CommNode(m, lo, tpl, tuple(args))
                if intg.outer is not None:
                    node = Dress(opdress(intg.outer), node)
                terms.append((tau_poly((tau_pow, w)), node))
    return Lin(tuple(terms))


def _nmpk(q: int, nf: int):
    for n in range(q + 1):
        for m in range(q - n + 1):
            for p in range(q - n - m + 1):
                for ks in _compositions(q - n - m - p, nf):
                    yield n, m, p, ks


def _nmk(q: int, nf: int):
    for n in range(q + 1):
        for m in range(q - n + 1):
            for ks in _compositions(q - n - m, nf):
                yield n, m, ks


# --- the approximating character ----------------------------------------------

def _potential_factor(pot: Potential) -> Optional[KFactor]:
    if pot.is_unit:
        return None
    return KFactor(ZERO_OP, Var(pot.var))


def _child_monomials(term: Lin) -> list:
    """A collapsed child is a xi-polynomial with time-free coefficients."""
    out = []
    for poly, node in term.terms:
        if not is_time_free(node):
            raise DerivationError(
                "child approximation stays oscillatory; combination not "
                "implemented (deeper trees at rough domains)")
        for power, coeff in poly:
            out.append((power, coeff, node))
    return out


def pi_approx(tree: DecoratedTree, o: str, r: int, domain: RegularityDomain,
              eq: EquationSpec) -> Lin:
    """The approximating character on the planted tree I_o(tree) at order r."""
    planted = project_Dr(graft(o, tree), r)
    if planted is ZERO_TREE:
        return ZERO_TERM
    ell, driver, children = decompose(tree)
    s_root = symmetry_factor_root(tree)
    child_mons = []
    for edge, sub in children:
        child_mons.append(_child_monomials(
            pi_approx(sub, edge, r - 1 - ell, domain, eq)))
    pot = eq.potentials[driver]
    pot_factor = _potential_factor(pot)
    out = ZERO_TERM
    for ut in upsilon_root(tree, o, eq):
        for combo in itertools.product(*child_mons):
            ell_eff = ell + sum(p for p, _, _ in combo)
            coeff = ut.coeff / s_root
            factors = []
            for uf in ut.factors:
                if (uf.comm_depth == 0 and uf.fn.is_constant
                        and _op_kills_constants(uf.op)):
                    coeff *= uf.fn(0.0 + 0.0j)
                    continue
                factors.append(KFactor(uf.op, uf.arg_node(), uf.cost()))
            for _, c, node in combo:
                coeff *= c
                factors.append(KFactor(ZERO_OP, node, data_cost(node)))
            if pot_factor is not None:
                factors.append(pot_factor)
            intg = Integrand(ell_eff, coeff, tuple(factors),
                             outer=eq.outer_op(o, driver))
            out = out + k_approx(intg, o, r, domain, eq)
    return out


# --- the exact character (quadrature oracle) -----------------------------------

def _quad(f, a: float, b: float, tol: float, grid: Grid) -> Field:
    if b <= a:
        return Field.zero(grid)
    val, err = quad_vec(lambda x: f(x).coeffs, a, b, epsabs=tol, epsrel=1e-13)
    if err > 100 * tol:
        raise QuadratureError(f"quadrature stalled at error {err:.3e}")
    return Field(grid, val)


def tilde_pi_exact(tree: DecoratedTree, o: str, eq: EquationSpec, env: dict,
                   xi: float, tol: float = 1e-12) -> Field:
    """(Pi-tilde_o tree)(v, xi): root coefficient times potential, monomial
    and exact child integrals."""
    from .spectral import field_prod, pointwise_apply

    grid = next(iter(env.values())).grid
    ell, driver, children = decompose(tree)
    s_root = symmetry_factor_root(tree)
    child_fields = [pi_exact(graft(edge, sub), eq, env, xi, tol)
                    for edge, sub in children]
    pot = eq.potentials[driver]
    total = Field.zero(grid)
    for ut in upsilon_root(tree, o, eq):
        coeff = ut.coeff / s_root
        factors = []
        for uf in ut.factors:
            base = env[f"v_{uf.label}"]
            if uf.comm_depth:
                val = commutator(registered(uf.fn), uf.op, uf.comm_depth, [base])
            elif uf.fn.is_constant:
                coeff *= uf.fn(0j)
                continue
            else:
                val = pointwise_apply(uf.fn, base)
            factors.append(semigroup(uf.op, xi, val))
        factors.extend(child_fields)
        if not pot.is_unit:
            factors.append(env[pot.var])
        prod = field_prod(factors) if factors else Field.constant(grid, 1.0)
        total = total + prod.scaled(coeff)
    if ell:
        total = total.scaled(xi ** ell)
    b = eq.outer_op(o, driver)
    if b is not None:
        total = apply_operator(b, total)
    return total


def pi_exact(obj, eq: EquationSpec, env: dict, tau: float,
             tol: float = 1e-12) -> Field:
    """Exact character: nested adaptive quadrature of the iterated Duhamel
    integrals; multiplicative over forests."""
    from .trees import Forest

    grid = next(iter(env.values())).grid
    if isinstance(obj, Forest):
        out = Field.constant(grid, 1.0)
        for t in obj.trees:
            out = out * pi_exact(t, eq, env, tau, tol)
        return out
    if not obj.is_planted:
        raise ValueError("pi_exact needs a planted tree or a forest")
    (o, sub), = obj.children
    lo = eq.plus_ops[o]

    def f(xi: float) -> Field:
        inner = tilde_pi_exact(sub, o, eq, env, xi, tol)
        return semigroup(lo, tau - xi, inner)

    return _quad(f, 0.0, tau, tol, grid)


# --- Taylor remainders and the local-error recursion ---------------------------

def taylor_remainder(intg: Integrand, o: str, r: int, domain: RegularityDomain,
                     eq: EquationSpec) -> Lin:
    """Leading remainder of the K approximation (tau-free commutator terms)."""
    lo = eq.plus_ops[o]
    order = r - intg.ell + 1
    nf = len(intg.factors)
    terms = []
    if _admits_full_taylor(intg, lo, r, domain, eq):
        for n in range(order + 1):
            for ks in _compositions(order - n, nf):
                if any(k and intg.factors[i].op.is_zero for i, k in enumerate(ks)):
                    continue
                fs = []
                for f, k in zip(intg.factors, ks):
                    fs.append(Dress(opdress(f.op, k), f.node) if k else f.node)
                node = Prod(tuple(fs)) if len(fs) != 1 else fs[0]
                if intg.outer is not None:
                    node = Dress(opdress(intg.outer), node)
                if n:
                    node = Dress(opdress(lo, n), node)
                terms.append((tau_poly((0, intg.coeff)), node))
        return Lin(tuple(terms))
    a_ops = [f.op - lo for f in intg.factors]
    ldom = p_dom(ops.OperatorSet(a_ops))
    if not ldom.is_zero:
        in_i, a_low = [], []
        for a in a_ops:
            rest = dominant_split(a, ldom)
            in_i.append(rest is not None)
            a_low.append(rest if rest is not None else a)
        side_j = [i for i in range(nf) if not in_i[i]]
        side_i = [i for i in range(nf) if in_i[i]]
        shifted = ldom + lo
        for m in range(order + 1):
            for n in range(order - m + 1):
                for p in range(order - m - n + 1):
                    for ks in _compositions(order - m - n - p, nf):
                        if any(k and a_low[i].is_zero for i, k in enumerate(ks)):
                            continue
                        for cn, on, sn in _comm_multinomial(len(side_j), ((lo, n),)):
                            for cp, op_, sp in _comm_multinomial(
                                    len(side_i), ((shifted, p),)):
                                groups = []
                                if side_j or on:
                                    groups.append(Group(
                                        _op_power_dressings(on, [lo]),
                                        tuple(Leaf(slot, None,
                                                   _op_power_dressings(sn[idx], [lo]))
                                              for idx, slot in enumerate(side_j))))
                                groups.append(Group(
                                    _op_power_dressings(op_, [shifted]),
                                    tuple(Leaf(slot, None,
                                               _op_power_dressings(sp[idx], [shifted]))
                                          for idx, slot in enumerate(side_i))))
                                args = []
                                for i, f in enumerate(intg.factors):
                                    node = f.node
                                    if ks[i]:
                                        node = Dress(opdress(a_low[i], ks[i]), node)
                                    args.append(node)
                                node = CommNode(m, lo, Template(tuple(groups)),
                                                tuple(args))
                                if intg.outer is not None:
                                    node = Dress(opdress(intg.outer), node)
                                terms.append((tau_poly((0, intg.coeff * cn * cp)),
                                              node))
        return Lin(tuple(terms))
    for m in range(order + 1):
        for n in range(order - m + 1):
            for ks in _compositions(order - m - n, nf):
                if any(k and a_ops[i].is_zero for i, k in enumerate(ks)):
                    continue
                for cn, on, sn in _comm_multinomial(nf, ((lo, n),)):
                    tpl = Template(groups=(Group(
                        _op_power_dressings(on, [lo]),
                        tuple(Leaf(i, None, _op_power_dressings(sn[i], [lo]))
                              for i in range(nf))),))
                    args = []
                    for i, f in enumerate(intg.factors):
                        node = f.node
                        if ks[i]:
                            node = Dress(opdress(a_ops[i], ks[i]), node)
                        args.append(node)
                    node = CommNode(m, lo, tpl, tuple(args))
                    if intg.outer is not None:
                        node = Dress(opdress(intg.outer), node)
                    terms.append((tau_poly((0, intg.coeff * cn)), node))
    return Lin(tuple(terms))


def _tree_integrands(tree: DecoratedTree, o: str, r: int,
                     domain: RegularityDomain, eq: EquationSpec) -> list:
    """Integrands of Pi-tilde_{o,A} D_r(tree), children collapsed."""
    ell, driver, children = decompose(tree)
    s_root = symmetry_factor_root(tree)
    child_mons = [
        _child_monomials(pi_approx(sub, edge, r - ell, domain, eq))
        for edge, sub in children]
    pot_factor = _potential_factor(eq.potentials[driver])
    out = []
    for ut in upsilon_root(tree, o, eq):
        for combo in itertools.product(*child_mons):
            ell_eff = ell + sum(p for p, _, _ in combo)
            coeff = ut.coeff / s_root
            factors = []
            for uf in ut.factors:
                if (uf.comm_depth == 0 and uf.fn.is_constant
                        and _op_kills_constants(uf.op)):
                    coeff *= uf.fn(0j)
                    continue
                factors.append(KFactor(uf.op, uf.arg_node(), uf.cost()))
            for _, c, node in combo:
                coeff *= c
                factors.append(KFactor(ZERO_OP, node, data_cost(node)))
            if pot_factor is not None:
                factors.append(pot_factor)
            out.append(Integrand(ell_eff, coeff, tuple(factors),
                                 outer=eq.outer_op(o, driver)))
    return out


def remainder_for_tree(tree: DecoratedTree, o: str, r: int,
                       domain: RegularityDomain, eq: EquationSpec) -> Lin:
    """R^r_{o,A} applied to the collapsed integrand of the tree."""
    out = ZERO_TERM
    for intg in _tree_integrands(tree, o, r - 1, domain, eq):
        out = out + taylor_remainder(intg, o, r, domain, eq)
    return out


def local_error_term(tree, o: str, r: int, domain: RegularityDomain,
                     eq: EquationSpec) -> Lin:
    """The recursive local-error operator for the planted tree I_o(tree)."""
    if isinstance(tree, DecoratedTree) and tree.is_planted:
        (o2, sub), = tree.children
        return local_error_term(sub, o2, r, domain, eq)
    if r < 0 or (not tree.children and tree.driver is None):
        return lin_single(TP_ONE, Const(1.0))
    comp = _local_error_comp(tree, o, r - 1, domain, eq)
    return comp + remainder_for_tree(tree, o, r, domain, eq)


def _local_error_comp(tree: DecoratedTree, o: str, r: int,
                      domain: RegularityDomain, eq: EquationSpec) -> Lin:
    ell, driver, children = decompose(tree)
    s_root = symmetry_factor_root(tree)
    ups = upsilon_node(tree, o, eq, xi_scale=0.0).scaled(1.0 / s_root)
    pot = eq.potentials[driver]
    terms = []
    if children:
        child_sum = ZERO_TERM
        for edge, sub in children:
            child_sum = child_sum + local_error_term(sub, edge, r - ell, domain, eq)
    else:
        child_sum = lin_single(TP_ONE, Const(1.0))
    b = eq.outer_op(o, driver)
    for pu, nu in ups.terms:
        for pc, nc in child_sum.terms:
            fs = [nu] if isinstance(nc, Const) and nc.value == 1.0 else [nu, nc]
            if not pot.is_unit:
                fs.append(Var(pot.var))
            node = Prod(tuple(fs)) if len(fs) != 1 else fs[0]
            if b is not None:
                node = Dress(opdress(b), node)
            terms.append((tp_mul(pu, pc), node))
    return Lin(tuple(terms))


# --- scheme assembly ------------------------------------------------------------

@dataclass
class Scheme:
    """Derived one-step map for one component (the conjugate component of a
    paired system is propagated by conjugation)."""

    eq: EquationSpec
    component: str
    order_r: int
    domain: RegularityDomain
    term: Lin
    trees: list

    def step_env(self, env: dict, tau: float) -> Field:
        return evaluate(self.term, env, tau)

    def step(self, u: Field, v_pot: Optional[Field], tau: float) -> Field:
        env = {f"v_{self.component}": u}
        conj_lb = self.eq.conj_pairs.get(self.component)
        if conj_lb:
            env[f"v_{conj_lb}"] = u.conj()
        for pot in self.eq.potentials.values():
            if not pot.is_unit:
                if v_pot is None:
                    raise ValueError("scheme needs the potential field")
                env[pot.var] = v_pot
        return self.step_env(env, tau)


def build_scheme(eq: EquationSpec, o: str, r: int,
                 domain: RegularityDomain) -> Scheme:
    """e^{tau L_o} v_o plus the order-r approximation of every tree of the
    order-(r+1) set."""
    if r < 0:
        raise ValueError("scheme order must be >= 0")
    trees = enumerate_trees(eq, r + 1, o)
    term = lin_single(TP_ONE, Dress(semi(eq.plus_ops[o]), Var(f"v_{o}")))
    for t in trees:
        term = term + pi_approx(t, o, r, domain, eq)
    term = Lin(tuple((p, n) for p, n in term.terms if p))
    return Scheme(eq, o, r, domain, term, trees)


# --- Duhamel residual (exact-solution order check) ------------------------------

def duhamel_residual(eq: EquationSpec, o: str, r: int, env: dict, tau: float,
                     tol: float = 1e-12) -> Field:
    """Defect of the truncated tree series in Duhamel's formula; decays one
    order faster than the series' own truncation order."""
    from .spectral import pointwise_apply

    grid = next(iter(env.values())).grid
    trees = {c: enumerate_trees(eq, r + 1, c) for c in eq.plus_ops}
    # conjugate-pair shortcut (valid when the data respects the pairing)
    conj_of = {}
    for a, b in eq.conj_pairs.items():
        if (env[f"v_{b}"] - env[f"v_{a}"].conj()).norm() < 1e-13:
            conj_of[b] = a
    cache: dict = {}

    def w(comp: str, xi: float) -> Field:
        key = (comp, xi)
        if key in cache:
            return cache[key]
        if comp in conj_of:
            out = w(conj_of[comp], xi).conj()
        else:
            out = semigroup(eq.plus_ops[comp], xi, env[f"v_{comp}"])
            for t in trees[comp]:
                out = out + pi_exact(graft(comp, t), eq, env, xi, tol)
        cache[key] = out
        return out

    lo = eq.plus_ops[o]
    drivers = [(driver, labels) for (comp, driver), labels
               in eq.interactions.items() if comp == o]

    def integrand(xi: float) -> Field:
        total = Field.zero(grid)
        for driver, labels in drivers:
            prod = None
            for lb in labels:
                f = pointwise_apply(eq.factor_fn(driver, o, lb), w(lb, xi))
                prod = f if prod is None else prod * f
            b = eq.outer_op(o, driver)
            if b is not None:
                prod = apply_operator(b, prod)
            pot = eq.potentials[driver]
            if not pot.is_unit:
                prod = prod * env[pot.var]
            total = total + prod
        return semigroup(lo, tau - xi, total)

    rhs = semigroup(lo, tau, env[f"v_{o}"]) + _quad(integrand, 0.0, tau, tol, grid)
    return w(o, tau) - rhs


# --- dominant decomposition (diagnostic) -----------------------------------------

@dataclass
class Summand:
    kind: str                  # "oscillatory" | "unit"
    rdom: tuple                # semigroup operators carried by the summand
    term: Lin

    def evaluate(self, env: dict, tau: float) -> Field:
        return evaluate(self.term, env, tau)


def _walk_phi(node):
    """Yield phi dressings with a nonzero operator inside a node."""
    if isinstance(node, Dress):
        if node.dressing.kind == "phi" and not node.dressing.op.is_zero:
            yield node.dressing
        yield from _walk_phi(node.arg)
    elif isinstance(node, Prod):
        for f in node.factors:
            yield from _walk_phi(f)
    elif isinstance(node, FnNode):
        yield from _walk_phi(node.arg)
    elif isinstance(node, CommNode):
        for g in node.template.groups:
            for d in g.mults:
                if d.kind == "phi" and not d.op.is_zero:
                    yield d
        for a in node.args:
            yield from _walk_phi(a)


def _replace_phi(node, target: Dressing, repl: Dressing):
    if isinstance(node, Dress):
        d = repl if node.dressing == target else node.dressing
        return Dress(d, _replace_phi(node.arg, target, repl))
    if isinstance(node, Prod):
        return Prod(tuple(_replace_phi(f, target, repl) for f in node.factors))
    if isinstance(node, FnNode):
        return FnNode(node.fn, _replace_phi(node.arg, target, repl))
    if isinstance(node, CommNode):
        groups = tuple(
            Group(tuple(repl if d == target else d for d in g.mults), g.leaves)
            for g in node.template.groups)
        return CommNode(node.depth, node.lop,
                        Template(groups, node.template.outer),
                        tuple(_replace_phi(a, target, repl) for a in node.args))
    return node


def dominant_decomposition(tree: DecoratedTree, o: str, r: int,
                           domain: RegularityDomain, eq: EquationSpec) -> list:
    """Split the approximated tree into oscillatory summands (carrying the
    dominant semigroups) and polynomial unit summands; their sum reproduces
    the scheme term exactly.  Diagnostic; identity outer operators only."""
    ell, driver, _ = decompose(tree)
    if eq.outer_op(o, driver) is not None:
        raise DerivationError("decomposition not supported with outer operators")
    lo = eq.plus_ops[o]
    term = pi_approx(tree, o, r, domain, eq)
    out = []
    for poly, node in term.terms:
        phis = list(_walk_phi(node))
        if not phis:
            out.append(Summand("unit", (lo,), Lin(((poly, node),))))
            continue
        d = phis[0]
        exp_part = Dressing("phi_exp", d.op, d.scale, d.phi_weights)
        poly_part = Dressing("phi_rest", d.op, d.scale, d.phi_weights)
        out.append(Summand("oscillatory", (lo, lo + d.op.scale(d.scale)),
                           Lin(((poly, _replace_phi(node, d, exp_part)),))))
        out.append(Summand("unit", (lo,),
                           Lin(((poly, _replace_phi(node, d, poly_part)),))))
    return out
