"""
Cluster hierarchies over the variables {0, ..., p-1}.

Node ids follow one convention for every tree built or parsed here: leaf
``j`` (the singleton ``{j}``) has id ``j``, internal nodes get ids ``p, p+1,
...`` in an order where children precede parents, and the root has the
largest id. Variable indices are 0-based in the API; Newick files use
1-based leaf labels.
"""

import sys
from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple, Optional, Sequence

import numpy as np

from ._backend import complete_linkage


@dataclass(frozen=True)
class ClusterNode:
    id: int
    variables: tuple
    parent: Optional[int]
    children: tuple
    height: float = 0.0

    @property
    def is_leaf(self) -> bool:
        return not self.children

    @property
    def size(self) -> int:
        return len(self.variables)


class Relations(NamedTuple):
    parent: Optional[int]
    children: tuple
    siblings: tuple
    ancestors: tuple  # root first


@dataclass(frozen=True)
class ClusterTree:
    nodes: tuple
    root: int

    @property
    def p(self) -> int:
        return len(self.nodes[self.root].variables)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def __getitem__(self, c: int) -> ClusterNode:
        return self.nodes[self._check(c)]

    def _check(self, c) -> int:
        if not isinstance(c, (int, np.integer)) or not 0 <= c < len(self.nodes):
            raise KeyError(f"node {c!r} is not in the tree")
        return int(c)

    @cached_property
    def is_binary(self) -> bool:
        return all(len(node.children) in (0, 2) for node in self.nodes)

    @cached_property
    def preorder(self) -> np.ndarray:
        """Node ids with every parent before its children."""
        order, stack = [], [self.root]
        while stack:
            c = stack.pop()
            order.append(c)
            stack.extend(reversed(self.nodes[c].children))
        return np.asarray(order, dtype=np.intp)

    @cached_property
    def parent_array(self) -> np.ndarray:
        """``parent_array[c]`` is the parent id, or -1 for the root."""
        return np.asarray(
            [-1 if node.parent is None else node.parent for node in self.nodes], dtype=np.intp
        )

    @cached_property
    def membership(self) -> np.ndarray:
        """Boolean matrix of shape (n_nodes, p); row c marks the variables of node c."""
        M = np.zeros((self.n_nodes, self.p), dtype=bool)
        for node in self.nodes:
            M[node.id, list(node.variables)] = True
        return M

    @cached_property
    def sibling_array(self) -> np.ndarray:
        """Sibling id in a binary tree (-1 for the root); undefined otherwise."""
        sib = np.full(self.n_nodes, -1, dtype=np.intp)
        for node in self.nodes:
            if len(node.children) == 2:
                a, b = node.children
                sib[a], sib[b] = b, a
        return sib

    @cached_property
    def leaf_mask(self) -> np.ndarray:
        return np.asarray([node.is_leaf for node in self.nodes])

    def parent(self, c: int) -> Optional[int]:
        return self[c].parent

    def children(self, c: int) -> tuple:
        return self[c].children

    def siblings(self, c: int) -> tuple:
        node = self[c]
        if node.parent is None:
            return ()
        return tuple(d for d in self.nodes[node.parent].children if d != c)

    def ancestors(self, c: int) -> tuple:
        chain = []
        node = self[c]
        while node.parent is not None:
            chain.append(node.parent)
            node = self.nodes[node.parent]
        return tuple(reversed(chain))

    def navigate(self, c: int) -> Relations:
        return Relations(self.parent(c), self.children(c), self.siblings(c), self.ancestors(c))

    def descendants(self, c: int) -> tuple:
        """All nodes strictly below ``c``."""
        out, stack = [], list(self[c].children)
        while stack:
            d = stack.pop()
            out.append(d)
            stack.extend(self.nodes[d].children)
        return tuple(sorted(out))


def _is_leaf_key(key) -> bool:
    return isinstance(key, tuple) and len(key) == 2 and key[0] == "leaf"


def tree_from_children(children_of: dict, heights: dict, p: int) -> ClusterTree:
    """Assemble a tree from a child map over arbitrary hashable keys.

    Leaves are the keys ``("leaf", j)``; every other key must appear in
    ``children_of``. Ids are renumbered to the module convention.
    """
    if p == 1 and not children_of:
        return ClusterTree((ClusterNode(0, (0,), None, (), 0.0),), 0)
    child_keys = {k for kids in children_of.values() for k in kids}
    roots = [k for k in children_of if k not in child_keys]
    if len(roots) != 1:
        raise ValueError(f"expected exactly one root, found {len(roots)}")
    # postorder over internal keys
    order, stack = [], [(roots[0], False)]
    while stack:
        key, done = stack.pop()
        if _is_leaf_key(key):
            continue
        if key not in children_of:
            raise ValueError(f"node {key!r} has no children and is not a leaf")
        if done:
            order.append(key)
            continue
        stack.append((key, True))
        stack.extend((kid, False) for kid in reversed(children_of[key]))
    ids = {("leaf", j): j for j in range(p)}
    for key in order:
        ids[key] = len(ids)
    n_nodes = len(ids)
    variables = [(j,) for j in range(p)] + [None] * (n_nodes - p)
    kids_by_id = [()] * n_nodes
    parent = [None] * n_nodes
    for key in order:
        i = ids[key]
        kids = tuple(ids[k] for k in children_of[key])
        if len(kids) < 2:
            raise ValueError("internal nodes need at least two children")
        kids_by_id[i] = kids
        variables[i] = tuple(sorted(v for k in kids for v in variables[k]))
        for k in kids:
            if parent[k] is not None:
                raise ValueError("a node has two parents")
            parent[k] = i
    root = ids[roots[0]]
    if len(variables[root]) != p or len(set(variables[root])) != p:
        raise ValueError("root must contain every variable exactly once")
    nodes = tuple(
        ClusterNode(i, variables[i], parent[i], kids_by_id[i], float(heights.get(key, 0.0)))
        for key, i in sorted(ids.items(), key=lambda kv: kv[1])
    )
    return ClusterTree(nodes, root)


def _from_merges(pairs: np.ndarray, heights: np.ndarray, p: int) -> ClusterTree:
    # slot k holds the current cluster whose smallest variable is k
    slot_key = [("leaf", j) for j in range(p)]
    children_of, height_of = {}, {}
    for step, (a, b) in enumerate(pairs):
        key = ("merge", step)
        children_of[key] = (slot_key[a], slot_key[b])
        height_of[key] = float(heights[step])
        slot_key[a] = key
    return tree_from_children(children_of, height_of, p)


def correlation_distance(X) -> np.ndarray:
    """Matrix of ``1 - |cor(X_j, X_k)|``."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] < 2:
        raise ValueError("need a matrix with at least 2 columns")
    if not np.all(np.isfinite(X)):
        raise ValueError("matrix contains non-finite entries")
    Z = X - X.mean(axis=0)
    norms = np.sqrt((Z * Z).sum(axis=0))
    const = np.flatnonzero(norms <= 1e-12 * max(1.0, float(np.abs(X).max())))
    if const.size:
        raise ValueError(f"column {int(const[0])} is constant; correlation is undefined")
    Z = Z / norms
    D = 1.0 - np.abs(np.clip(Z.T @ Z, -1.0, 1.0))
    # exact duplicates (up to sign) should merge at height 0, not at rounding noise
    D[D < 1e-13] = 0.0
    D = np.minimum(D, D.T)
    np.fill_diagonal(D, 0.0)
    return D


def build_correlation_tree(X, linkage: str = "complete") -> ClusterTree:
    """Agglomerative clustering of the columns of ``X`` on ``1 - |cor|``.

    Complete linkage is the default and the only one run by the compiled
    kernel. Ties are broken towards the pair of clusters whose smallest
    variable indices are lowest. ``"single"`` and ``"average"`` go through
    scipy and carry no tie-breaking promise.
    """
    D = correlation_distance(X)
    p = D.shape[0]
    if linkage == "complete":
        pairs, heights = complete_linkage(np.ascontiguousarray(D))
        return _from_merges(pairs, heights, p)
    if linkage in ("single", "average"):
        from scipy.cluster.hierarchy import linkage as scipy_linkage
        from scipy.spatial.distance import squareform

        Z = scipy_linkage(squareform(D, checks=False), method=linkage)
        keys = [("leaf", j) for j in range(p)]
        children_of, height_of = {}, {}
        for step, (a, b, h, _) in enumerate(Z):
            key = ("merge", step)
            children_of[key] = (keys[int(a)], keys[int(b)])
            height_of[key] = float(h)
            keys.append(key)
        return tree_from_children(children_of, height_of, p)
    raise ValueError(f"unknown linkage {linkage!r}")


def single_variable_tree(p: int) -> ClusterTree:
    """Root over all variables with the p singletons as its only children."""
    if p < 1:
        raise ValueError("p must be positive")
    if p == 1:
        return ClusterTree((ClusterNode(0, (0,), None, (), 0.0),), 0)
    return tree_from_children({"root": tuple(("leaf", j) for j in range(p))}, {}, p)


def effective_cluster_size(tree: ClusterTree, c: int, s_hat: Sequence[int]) -> int:
    """Shaffer effective size of cluster ``c`` restricted to the screened set.

    ``|C ∩ S|`` if some child of the sibling of ``C`` meets ``S``, otherwise
    ``|C ∩ S| + |si(C) ∩ S|``. The root has no sibling and gets ``|C ∩ S|``.
    """
    if not tree.is_binary:
        raise ValueError("effective cluster size is defined for binary trees only")
    node = tree[c]
    s = set(int(j) for j in s_hat)
    own = len(s.intersection(node.variables))
    sibs = tree.siblings(c)
    if not sibs:
        return own
    (si,) = sibs
    sib = tree.nodes[si]
    if any(s.intersection(tree.nodes[e].variables) for e in sib.children):
        return own
    return own + len(s.intersection(sib.variables))


# ------------------------------------------------------------------ #
# Newick
# ------------------------------------------------------------------ #


def to_newick(tree: ClusterTree) -> str:
    """Serialize with 1-based leaf labels and ultrametric branch lengths."""
    nodes = tree.nodes
    parts = []
    # (node, parent height) entries, or a string to emit verbatim
    stack = [(tree.root, None)]
    while stack:
        item = stack.pop()
        if isinstance(item, str):
            parts.append(item)
            continue
        c, parent_height = item
        node = nodes[c]
        tail = (
            f":{float(node.height)!r}" if parent_height is None
            else f":{float(parent_height - node.height)!r}"
        )
        if node.is_leaf:
            parts.append(f"{node.variables[0] + 1}{tail if parent_height is not None else ''}")
            continue
        parts.append("(")
        stack.append(")" + tail)
        for pos, k in enumerate(reversed(node.children)):
            stack.append((k, node.height))
            if pos < len(node.children) - 1:
                stack.append(",")
    return "".join(parts) + ";"


class _NewickParser:
    def __init__(self, text: str):
        self.s = "".join(text.split())
        self.i = 0
        self.counter = 0
        self.children_of = {}
        self.lengths = {}
        self.leaves = {}

    def peek(self):
        return self.s[self.i] if self.i < len(self.s) else ""

    def expect(self, ch):
        if self.peek() != ch:
            raise ValueError(f"invalid Newick: expected {ch!r} at position {self.i}")
        self.i += 1

    def token(self):
        start = self.i
        while self.i < len(self.s) and self.s[self.i] not in "(),:;":
            self.i += 1
        return self.s[start:self.i]

    def length(self, key):
        if self.peek() == ":":
            self.i += 1
            tok = self.token()
            try:
                self.lengths[key] = float(tok)
            except ValueError:
                raise ValueError(f"invalid Newick branch length {tok!r}") from None
        else:
            self.lengths[key] = 0.0

    def subtree(self):
        if self.peek() == "(":
            self.i += 1
            kids = [self.subtree()]
            while self.peek() == ",":
                self.i += 1
                kids.append(self.subtree())
            self.expect(")")
            self.token()  # internal labels are ignored
            key = ("internal", self.counter)
            self.counter += 1
            self.children_of[key] = tuple(kids)
        else:
            label = self.token()
            try:
                j = int(label) - 1
            except ValueError:
                raise ValueError(f"invalid Newick leaf label {label!r}; expected 1-based integers") from None
            if j < 0:
                raise ValueError(f"invalid Newick leaf label {label!r}")
            if j in self.leaves:
                raise ValueError(f"leaf label {label} appears twice")
            key = ("leaf", j)
            self.leaves[j] = key
        self.length(key)
        return key

    def parse(self):
        root = self.subtree()
        self.expect(";")
        if self.i != len(self.s):
            raise ValueError("invalid Newick: trailing characters after ';'")
        return root


def from_newick(text: str) -> ClusterTree:
    """Parse a Newick string whose leaves are labeled 1..p."""
    parser = _NewickParser(text)
    limit = sys.getrecursionlimit()
    sys.setrecursionlimit(max(limit, 4 * text.count("(") + 1000))
    try:
        root = parser.parse()
    finally:
        sys.setrecursionlimit(limit)
    p = len(parser.leaves)
    if sorted(parser.leaves) != list(range(p)):
        raise ValueError("Newick leaf labels must be exactly 1..p")
    # node height = path length down to its deepest leaf
    heights = {}
    stack = [(root, False)]
    while stack:
        key, done = stack.pop()
        kids = parser.children_of.get(key, ())
        if not kids:
            heights[key] = 0.0
        elif done:
            heights[key] = max(heights[k] + parser.lengths[k] for k in kids)
        else:
            stack.append((key, True))
            stack.extend((k, False) for k in kids)
    return tree_from_children(parser.children_of, heights, p)
