import json

import pytest
from hypothesis import given, strategies as st

from lowreg.trees import (DecoratedTree, Forest, UNIT_FOREST, ZERO_TREE,
                          decompose, deg, graft, n_plus, node, project_Dr,
                          symmetry_factor_root, tree_from_json, tree_to_dot,
                          tree_to_json, with_children)

lam0 = node("0")
lam1 = node("1")
lam0_1 = node("0", power=1)


def test_graft_builds_planted_trees():
    t = graft("o", lam0)
    assert t.is_planted
    assert decompose(t) == (0, None, [("o", lam0)])
    t2 = graft("o", lam0_1)
    assert t2.children[0][1].power == 1
    nested = graft("o", with_children("0", 0, [("o", lam1)]))
    assert decompose(nested)[2][0][1].children[0][0] == "o"


def test_decompose_roundtrip():
    t = with_children("0", 0, [("o", lam0)])
    ell, driver, kids = decompose(t)
    assert (ell, driver) == (0, "0")
    assert with_children(driver, ell, kids) == t
    with pytest.raises(ValueError):
        decompose(ZERO_TREE)


def test_three_branch_decomposition():
    t = with_children("0", 2, [("o1", node("1", 1)), ("o2", lam0), ("o3", lam1)])
    ell, driver, kids = decompose(t)
    assert ell == 2 and driver == "0" and len(kids) == 3
    assert {e for e, _ in kids} == {"o1", "o2", "o3"}


def _path_count(tree):
    # independent oracle: max (edges + decorations) over leaf-to-root paths
    if not tree.children:
        return tree.power
    return tree.power + max(1 + _path_count(t) for _, t in tree.children)


@pytest.mark.parametrize("tree,expect", [
    (lam0, 0),
    (graft("o", lam0), 1),
    (graft("o", with_children("0", 0, [("o", lam0)])), 2),
    (graft("o", lam0_1), 2),
])
def test_deg_matches_path_count(tree, expect):
    assert deg(tree) == expect == _path_count(tree)


def test_n_plus():
    assert n_plus(lam0) == 0
    assert n_plus(lam0_1) == 1
    assert n_plus(with_children("0", 0, [("o", lam1)])) == 1
    assert n_plus(graft("o", with_children("0", 0, [("o", lam0)]))) == 2
    assert n_plus(graft("o", lam0)) == n_plus(lam0) + 1


def test_project_Dr():
    assert project_Dr(graft("o", lam0), 0).root_order == 0
    assert project_Dr(UNIT_TREE := DecoratedTree(), -1) is not ZERO_TREE
    two_edges = graft("o", with_children("0", 0, [("o", lam0)]))
    assert project_Dr(two_edges, 0) is ZERO_TREE
    assert project_Dr(two_edges, 1).root_order == 1
    # nonzero iff r+1 >= deg, over all GP-like trees with <= 2 edges
    trees = [lam0, lam0_1, graft("o", lam0), two_edges,
             with_children("0", 1, [("o", lam0)])]
    for t in trees:
        for r in range(-1, 4):
            assert (project_Dr(t, r) is not ZERO_TREE) == (r + 1 >= deg(t))


def test_symmetry_factor():
    assert symmetry_factor_root(lam0) == 1
    assert symmetry_factor_root(node("1")) == 1
    duplicated = with_children("0", 0, [("o", lam0), ("o", lam0)])
    assert symmetry_factor_root(duplicated) == 2
    assert symmetry_factor_root(with_children("0", 2, [("o", lam0)])) == 2
    mixed = with_children("0", 1, [("o", lam0), ("o", lam0), ("o", lam1)])
    assert symmetry_factor_root(mixed) == 2


def test_canonical_equality_under_permutation():
    a = with_children("0", 0, [("o", lam0), ("ob", lam1)])
    b = with_children("0", 0, [("ob", lam1), ("o", lam0)])
    assert a == b
    assert hash(a) == hash(b)


def test_forest_product():
    f1 = Forest((graft("o", lam0),))
    f2 = Forest((graft("ob", lam1),))
    assert (f1 * f2) == (f2 * f1)
    assert (f1 * UNIT_FOREST) == f1
    with pytest.raises(ValueError):
        Forest((lam0,))  # not planted


def test_json_roundtrip_and_dot():
    t = graft("o", with_children("0", 1, [("o", lam0), ("ob", lam1)]))
    s = tree_to_json(t)
    assert tree_from_json(s) == t
    assert json.loads(s)["children"][0]["edge"] == "o"
    dot = tree_to_dot(t)
    assert dot.startswith("digraph") and '"o"' in dot
    assert tree_to_dot(t) == dot  # stable


# --- property tests ----------------------------------------------------------

_subtree = st.deferred(lambda: st.builds(
    lambda p, d, kids: with_children(d, p, kids),
    st.integers(0, 2), st.sampled_from(["0", "1"]),
    st.lists(st.tuples(st.sampled_from(["o", "ob"]), _subtree), max_size=3)))


@given(_subtree)
def test_canonicalization_idempotent(t):
    rebuilt = with_children(t.driver, t.power, reversed(t.children))
    assert rebuilt == t
    assert tree_from_json(tree_to_json(t)) == t


@given(_subtree)
def test_symmetry_invariant_under_relabeling(t):
    perm = with_children(t.driver, t.power, tuple(reversed(t.children)))
    assert symmetry_factor_root(perm) == symmetry_factor_root(t)
