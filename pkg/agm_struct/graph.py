import logging

import numpy as np

from agm_struct.exceptions import TreeStructureError

logger = logging.getLogger(__name__)

DUMMY = 0


class TreeGraph:
    """
    A rooted tree over label nodes 1..n.

    Node 0 is a dummy parent above the root whose label space has a single state, so the
    root's pairwise marginal degenerates to a 1-by-k row. Instances are immutable once built.

    Attributes:
    n (int): Number of real nodes.
    root (int): Root node index.
    edges (tuple): (parent, child) pairs of the n-1 real edges, ordered by child index.
    """

    __slots__ = ("_n", "_root", "_parent", "_children", "_edges", "_topo", "_parent_index")

    def __init__(self, n, root, parent, children):
        self._n = n
        self._root = root
        self._parent = tuple(parent)
        self._children = tuple(tuple(c) for c in children)
        self._edges = tuple((self._parent[i], i) for i in range(1, n + 1) if i != root)
        self._topo = _postorder(root, self._children)
        self._parent_index = np.array([p - 1 for p in self._parent[1:]], dtype=np.int64)

    @property
    def n(self):
        return self._n

    @property
    def root(self):
        return self._root

    @property
    def edges(self):
        return self._edges

    def parent(self, node):
        """Returns pt(node); the root maps to the dummy node 0."""
        return self._parent[node]

    def children(self, node):
        """Returns ch(node) in ascending index order."""
        return self._children[node]

    @property
    def parent_index(self):
        """0-based parent position of each node (-1 for the root), as used by the array solvers."""
        return self._parent_index

    def nodes(self):
        return range(1, self._n + 1)

    def __eq__(self, other):
        if not isinstance(other, TreeGraph):
            return NotImplemented
        return self._n == other._n and self._root == other._root and self._parent == other._parent

    def __hash__(self):
        return hash((self._n, self._root, self._parent))

    def __repr__(self):
        return f"TreeGraph(n={self._n}, root={self._root}, edges={list(self._edges)})"


def _postorder(root, children):
    order = []
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        stack.append((node, True))
        for child in reversed(children[node]):
            stack.append((child, False))
    return tuple(order)


def build_tree(n, edges, root=1):
    """
    Orients an undirected edge list away from the root.

    Parameters:
    n (int): Number of nodes (at least 1).
    edges (iterable): Undirected (u, v) node pairs with indices in 1..n.
    root (int): The root node.

    Returns:
    TreeGraph: The rooted tree, with the dummy node 0 attached above the root.

    Raises:
    TreeStructureError: On out-of-range indices, duplicate edges, cycles or disconnected nodes.
    """
    if int(n) != n or n < 1:
        raise TreeStructureError(f"node count must be a positive integer, got {n}")
    n = int(n)
    if root not in range(1, n + 1):
        raise TreeStructureError(f"root {root} is not a node in 1..{n}")

    adjacency = [[] for _ in range(n + 1)]
    seen = set()
    edge_list = [tuple(e) for e in edges]
    for u, v in edge_list:
        if u not in range(1, n + 1) or v not in range(1, n + 1):
            raise TreeStructureError(f"edge ({u}, {v}) has a node outside 1..{n}")
        if u == v:
            raise TreeStructureError(f"self loop on node {u} forms a cycle")
        key = (min(u, v), max(u, v))
        if key in seen:
            raise TreeStructureError(f"duplicate edge ({u}, {v})")
        seen.add(key)
        adjacency[u].append(v)
        adjacency[v].append(u)

    if len(edge_list) > n - 1:
        raise TreeStructureError(f"{len(edge_list)} edges on {n} nodes contain a cycle")

    parent = [DUMMY] * (n + 1)
    parent[0] = -1
    visited = [False] * (n + 1)
    visited[root] = True
    stack = [root]
    while stack:
        node = stack.pop()
        for nb in sorted(adjacency[node]):
            if nb == parent[node]:
                continue
            if visited[nb]:
                raise TreeStructureError(f"cycle detected through edge ({node}, {nb})")
            visited[nb] = True
            parent[nb] = node
            stack.append(nb)

    missing = [i for i in range(1, n + 1) if not visited[i]]
    if missing:
        raise TreeStructureError(f"graph is disconnected: nodes {missing} are not reachable from root {root}")

    children = [[] for _ in range(n + 1)]
    for i in range(1, n + 1):
        if i != root:
            children[parent[i]].append(i)
    children[DUMMY] = [root]
    return TreeGraph(n, root, parent, [sorted(c) for c in children])


def topo_order(tree):
    """
    Leaves-first order: every node appears after all of its children; ties go to the smaller index.
    """
    return tree._topo


def root_first_order(tree):
    return tuple(reversed(tree._topo))


def reroot(tree, root):
    """Re-orients the same undirected edge set around a new root."""
    return build_tree(tree.n, tree.edges, root)


def chain(n):
    """The chain 1 - 2 - ... - n rooted at node 1."""
    return build_tree(n, [(i, i + 1) for i in range(1, n)], 1)


def star(n):
    """Node 1 connected to every other node, rooted at node 1."""
    return build_tree(n, [(1, i) for i in range(2, n + 1)], 1)
