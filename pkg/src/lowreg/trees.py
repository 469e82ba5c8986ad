"""Decorated rooted trees and forests.

A tree node carries a polynomial power ``l`` (monomials xi^l picked up from
commutator expansions) and a driver label (which potential the node's
nonlinearity multiplies).  Edges carry component labels and stand for one
Duhamel integral each.  Trees are non-planar: children are kept in a
canonical order so that structural equality is multiset equality.

Planted trees have a bare root (power 0, no driver, exactly one child); the
optional ``root_order`` tag on a planted tree records the approximation
order r attached by the projection ``project_Dr``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional


class _Zero:
    """Absorbing zero of the tree vector space (result of projections)."""

    def __repr__(self) -> str:
        return "0"

    def __bool__(self) -> bool:
        return False


ZERO_TREE = _Zero()


def _driver_key(d):
    return ("", d) if d is not None else ("~none", "")


@dataclass(frozen=True)
class DecoratedTree:
    power: int = 0                       # polynomial decoration at the root
    driver: Optional[str] = None         # minus-label at the root, None = bare
    children: tuple = ()                 # tuple of (edge_label, DecoratedTree)
    root_order: Optional[int] = None     # r tag, planted trees only

    def __post_init__(self):
        object.__setattr__(self, "children",
                           tuple(sorted(self.children,
                                        key=lambda c: (c[0], c[1].sort_key()))))
        if self.root_order is not None and self.root_order + 1 < deg(self):
            raise ValueError("root order below tree degree")

    def sort_key(self):
        return (self.power, _driver_key(self.driver),
                tuple((e, t.sort_key()) for e, t in self.children))

    @property
    def is_planted(self) -> bool:
        return (self.power == 0 and self.driver is None
                and len(self.children) == 1)

    def with_order(self, r: int) -> "DecoratedTree":
        return replace(self, root_order=r)

    def __str__(self) -> str:
        if self.driver is None and not self.children:
            return "1"
        kids = "".join(f" I_{e}({t})" for e, t in self.children)
        if self.driver is None:
            head = "" if self.root_order is None else f"[r={self.root_order}]"
            return (head + kids).strip()
        head = f"λ_{self.driver}" + (f"^{self.power}" if self.power else "")
        return (head + kids).strip()


def node(driver: str, power: int = 0) -> DecoratedTree:
    """A single decorated node λ_driver^power."""
    return DecoratedTree(power=power, driver=driver)


def graft(o: str, tree: DecoratedTree) -> DecoratedTree:
    """Connect ``tree`` to a fresh bare root through an edge labelled ``o``."""
    return DecoratedTree(children=((o, tree),))


def with_children(driver: str, power: int,
                  children: Iterable[tuple]) -> DecoratedTree:
    return DecoratedTree(power=power, driver=driver, children=tuple(children))


def decompose(tree: DecoratedTree):
    """Split a tree into (power, driver, [(edge, subtree), ...])."""
    if isinstance(tree, _Zero):
        raise ValueError("cannot decompose the zero element")
    return tree.power, tree.driver, list(tree.children)


def deg(tree: DecoratedTree) -> int:
    """Maximum count of edges plus polynomial decorations on any
    leaf-to-root path; the empty max over children counts as -1."""
    if isinstance(tree, _Zero):
        return 0
    if not tree.children:
        return tree.power
    return tree.power + 1 + max(deg(t) for _, t in tree.children)


def n_plus(tree: DecoratedTree) -> int:
    """Total polynomial decorations plus edge count (powers of tau the
    associated iterated integral produces)."""
    if isinstance(tree, _Zero):
        return 0
    return (tree.power
            + sum(1 + n_plus(t) for _, t in tree.children))


def project_Dr(tree: DecoratedTree, r: int):
    """Attach the order tag r, projecting to zero when r+1 < deg."""
    if r < -1:
        raise ValueError("order tag must be >= -1")
    if isinstance(tree, _Zero):
        return ZERO_TREE
    if r + 1 < deg(tree):
        return ZERO_TREE
    return tree.with_order(r)


def symmetry_factor_root(tree: DecoratedTree) -> int:
    """k! times one factorial per multiplicity of identical planted children."""
    if isinstance(tree, _Zero):
        raise ValueError("zero element has no symmetry factor")
    s = math.factorial(tree.power)
    counts: dict = {}
    for e, t in tree.children:
        key = (e, t.sort_key())
        counts[key] = counts.get(key, 0) + 1
    for c in counts.values():
        s *= math.factorial(c)
    return s


@dataclass(frozen=True)
class Forest:
    """Unordered multiset of planted trees; the empty forest is the unit."""

    trees: tuple = ()

    def __post_init__(self):
        for t in self.trees:
            if not t.is_planted:
                raise ValueError("forests contain planted trees only")
        object.__setattr__(self, "trees",
                           tuple(sorted(self.trees, key=DecoratedTree.sort_key)))

    @property
    def is_unit(self) -> bool:
        return not self.trees

    def __mul__(self, other: "Forest") -> "Forest":
        return Forest(self.trees + other.trees)

    def __str__(self) -> str:
        return "1" if self.is_unit else " ".join(str(t) for t in self.trees)


UNIT_FOREST = Forest()


# --- serialization ----------------------------------------------------------

def tree_to_dict(tree: DecoratedTree) -> dict:
    d = {"power": tree.power, "driver": tree.driver,
         "children": [{"edge": e, "tree": tree_to_dict(t)}
                      for e, t in tree.children]}
    if tree.root_order is not None:
        d["root_order"] = tree.root_order
    return d


def tree_from_dict(d: dict) -> DecoratedTree:
    return DecoratedTree(
        power=d.get("power", 0),
        driver=d.get("driver"),
        children=tuple((c["edge"], tree_from_dict(c["tree"]))
                       for c in d.get("children", ())),
        root_order=d.get("root_order"),
    )


def tree_to_json(tree: DecoratedTree) -> str:
    return json.dumps(tree_to_dict(tree), sort_keys=True)


def tree_from_json(s: str) -> DecoratedTree:
    return tree_from_dict(json.loads(s))


def tree_to_dot(tree: DecoratedTree, name: str = "tree") -> str:
    """Graphviz digraph; node ids follow the canonical child order, so the
    output is stable across runs."""
    lines = [f"digraph {name} {{", "  rankdir=BT;"]
    counter = [0]

    def walk(t: DecoratedTree) -> int:
        nid = counter[0]
        counter[0] += 1
        if t.driver is None:
            label = "·" if t.root_order is None else f"r={t.root_order}"
        else:
            label = f"({t.power},{t.driver})"
        lines.append(f'  n{nid} [label="{label}"];')
        for e, sub in t.children:
            cid = walk(sub)
            lines.append(f'  n{cid} -> n{nid} [label="{e}"];')
        return nid

    walk(tree)
    lines.append("}")
    return "\n".join(lines)
