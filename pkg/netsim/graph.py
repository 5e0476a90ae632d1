"""Network topologies for the contact processes.

Graphs are built with networkx (or directly from edge arrays for large trees)
and then frozen into a compact immutable form: sorted edge array, per-node
neighbour/edge-id tuples and a sparse adjacency matrix for vectorised
neighbour counts. Node ids are dense integers 0..n-1, lattices are row-major.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import networkx as nx
import numpy as np
from scipy import sparse

logger = logging.getLogger(__name__)

max_restarts = 100          # small-world construction attempts before giving up
max_tree_nodes = 10 ** 7    # cap on truncated tree size
rejection_tries = 64        # random pair draws before enumerating addable pairs


class Graph:
    """Immutable simple undirected graph.

    Attributes:
        n: number of nodes
        edges: (|E|, 2) int array, rows (u, v) with u < v, lexicographically sorted
        adjacency: tuple of per-node neighbour tuples
        incident: tuple of per-node edge-id tuples, parallel to adjacency
        k: maximum degree
        matrix: CSR adjacency matrix (int64), used for n(j, x) in bulk
    """

    def __init__(self, n, edges):
        n = int(n)
        if n <= 0:
            raise ValueError("Graph needs at least one node, got n=%d" % n)
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if edges.size and (edges.min() < 0 or edges.max() >= n):
            raise ValueError("Edge endpoint outside 0..%d" % (n - 1))
        if np.any(edges[:, 0] == edges[:, 1]):
            raise ValueError("Self-loops are not allowed")
        edges = np.sort(edges, axis=1)
        order = np.lexsort((edges[:, 1], edges[:, 0]))
        edges = edges[order]
        if len(edges) > 1 and np.any(np.all(edges[1:] == edges[:-1], axis=1)):
            raise ValueError("Parallel edges are not allowed")
        edges.setflags(write=False)

        self.n = n
        self.edges = edges
        nbrs = [[] for _ in range(n)]
        eids = [[] for _ in range(n)]
        for eid, (u, v) in enumerate(edges.tolist()):
            nbrs[u].append(v)
            eids[u].append(eid)
            nbrs[v].append(u)
            eids[v].append(eid)
        self.adjacency = tuple(tuple(a) for a in nbrs)
        self.incident = tuple(tuple(a) for a in eids)
        self.degrees = np.array([len(a) for a in nbrs], dtype=np.int64)
        self.degrees.setflags(write=False)
        self.k = int(self.degrees.max()) if n else 0
        ones = np.ones(2 * len(edges), dtype=np.int64)
        rows = np.concatenate([edges[:, 0], edges[:, 1]])
        cols = np.concatenate([edges[:, 1], edges[:, 0]])
        self.matrix = sparse.csr_matrix((ones, (rows, cols)), shape=(n, n))

    @property
    def n_edges(self):
        return len(self.edges)

    @classmethod
    def from_networkx(cls, G):
        """Freeze a networkx graph whose nodes are exactly 0..n-1."""
        n = G.number_of_nodes()
        if sorted(G.nodes()) != list(range(n)):
            raise ValueError("Node labels must be the integers 0..n-1")
        if nx.number_of_selfloops(G):
            raise ValueError("Self-loops are not allowed")
        return cls(n, np.array(list(G.edges()), dtype=np.int64).reshape(-1, 2))

    def validate(self):
        """Check symmetry, simplicity and degree bookkeeping; raises ValueError."""
        for j, nbrs in enumerate(self.adjacency):
            if j in nbrs:
                raise ValueError("Node %d has a self-loop" % j)
            if len(set(nbrs)) != len(nbrs):
                raise ValueError("Node %d has duplicate neighbours" % j)
            for v in nbrs:
                if j not in self.adjacency[v]:
                    raise ValueError("Adjacency not symmetric for (%d, %d)" % (j, v))
        if self.k != max(len(a) for a in self.adjacency):
            raise ValueError("k does not equal the maximum degree")
        if 2 * self.n_edges != int(self.degrees.sum()):
            raise ValueError("Edge count is not half the degree sum")
        if (self.matrix != self.matrix.T).nnz:
            raise ValueError("Adjacency matrix not symmetric")

    def degree_histogram(self):
        return dict(zip(*[a.tolist() for a in np.unique(self.degrees, return_counts=True)]))

    def __repr__(self):
        return "Graph(n=%d, edges=%d, k=%d)" % (self.n, self.n_edges, self.k)


@dataclass(frozen=True)
class GraphSpec:
    """Recipe for one of the supported topologies."""
    kind: str = "torus"
    width: int = 30
    height: int = 30
    target_degree: int = 4
    extra_edges: Optional[int] = None
    root_children: int = 2
    tree_degree: int = 4
    depth: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("torus", "small-world", "tree"):
            raise ValueError("Unknown graph kind %r (torus, small-world, tree)" % self.kind)
        if self.kind == "small-world":
            expected = self.width * self.height * (self.target_degree - 4)
            if self.target_degree < 4 or expected % 2:
                raise ValueError(
                    "Small world needs target_degree >= 4 and n*(target_degree-4) even, "
                    "got n=%d, target_degree=%d" % (self.width * self.height, self.target_degree))
            if self.extra_edges is not None and self.extra_edges != expected // 2:
                raise ValueError("extra_edges must equal n*(target_degree-4)/2 = %d" % (expected // 2))

    @property
    def label(self):
        return {"torus": "Lattice", "small-world": "Small world", "tree": "Tree"}[self.kind]

    @property
    def expected_edges(self):
        if self.kind == "torus":
            return 2 * self.width * self.height
        if self.kind == "small-world":
            return self.width * self.height * self.target_degree // 2
        return tree_size(self.root_children, self.tree_degree, self.depth) - 1

    def build(self, seed=None):
        if self.kind == "torus":
            g = make_torus(self.width, self.height)
        elif self.kind == "small-world":
            g = make_small_world(self.width, self.height, self.target_degree,
                                 self.seed if seed is None else seed)
        else:
            g = make_tree(self.root_children, self.tree_degree, self.depth)
        if g.n_edges != self.expected_edges:
            raise RuntimeError("%s has %d edges, expected %d"
                               % (self.label, g.n_edges, self.expected_edges))
        logger.debug("Built %r, degrees %s", g, g.degree_histogram())
        return g


def _torus_nx(width, height):
    if width < 3 or height < 3:
        raise ValueError(
            "Torus needs width >= 3 and height >= 3 (got %dx%d); smaller dimensions "
            "wrap onto parallel edges" % (width, height))
    G = nx.grid_2d_graph(height, width, periodic=True)
    return nx.relabel_nodes(G, {(r, c): r * width + c for r, c in G.nodes()})


def make_torus(width, height):
    """Toroidal lattice, every node of degree 4, nodes numbered row-major."""
    return Graph.from_networkx(_torus_nx(width, height))


def _add_random_edges(G, target_degree, rng):
    # Uniform placement among node pairs below target degree that are not yet adjacent.
    open_nodes = [v for v in sorted(G.nodes()) if G.degree(v) < target_degree]
    while open_nodes:
        pair = None
        if len(open_nodes) >= 2:
            for _ in range(rejection_tries):
                a, b = rng.choice(len(open_nodes), size=2, replace=False)
                u, v = open_nodes[a], open_nodes[b]
                if not G.has_edge(u, v):
                    pair = (u, v)
                    break
        if pair is None:
            candidates = [(u, v) for i, u in enumerate(open_nodes)
                          for v in open_nodes[i + 1:] if not G.has_edge(u, v)]
            if not candidates:
                return False
            pair = candidates[int(rng.integers(len(candidates)))]
        G.add_edge(*pair)
        open_nodes = [v for v in open_nodes if G.degree(v) < target_degree]
    return True


def make_small_world(width, height, target_degree, seed):
    """Torus plus uniformly placed extra edges until every degree is target_degree.

    Restarts from the plain torus with a fresh substream when the greedy
    placement dead-ends; gives up after max_restarts attempts.
    """
    n = width * height
    if target_degree < 4 or (n * (target_degree - 4)) % 2:
        raise ValueError(
            "Small world needs target_degree >= 4 and n*(target_degree-4) even, "
            "got n=%d, target_degree=%d" % (n, target_degree))
    base = _torus_nx(width, height)
    if target_degree == 4:
        return Graph.from_networkx(base)
    for attempt in range(max_restarts):
        rng = np.random.default_rng([int(seed), attempt])
        G = base.copy()
        if _add_random_edges(G, target_degree, rng):
            logger.debug("Small world %dx%d degree %d built on attempt %d",
                         width, height, target_degree, attempt + 1)
            return Graph.from_networkx(G)
        logger.debug("Small world construction stalled on attempt %d, restarting", attempt + 1)
    raise RuntimeError("Small world construction stalled %d times; no addable pair left" % max_restarts)


def tree_size(m, k, depth):
    """Node count of the truncated tree: 1 + sum_d m (k-1)^(d-1)."""
    return 1 + sum(m * (k - 1) ** (d - 1) for d in range(1, depth + 1))


def make_tree(m, k, depth):
    """Truncated tree: root (node 0) has m children, other internal nodes k-1.

    Nodes are numbered level by level, so the leaves are the last
    m (k-1)^(depth-1) ids.
    """
    if m < 1 or k < 3 or depth < 1:
        raise ValueError("Tree needs m >= 1, k >= 3, depth >= 1 (got m=%d, k=%d, depth=%d)"
                         % (m, k, depth))
    size = tree_size(m, k, depth)
    if size > max_tree_nodes:
        raise ValueError("Tree with m=%d, k=%d, depth=%d has %d nodes, above the cap of %d"
                         % (m, k, depth, size, max_tree_nodes))
    level = np.zeros(1, dtype=np.int64)
    next_id = 1
    children_of = []
    for d in range(1, depth + 1):
        fanout = m if d == 1 else k - 1
        parent_ids = np.repeat(level, fanout)
        child_ids = np.arange(next_id, next_id + len(parent_ids), dtype=np.int64)
        children_of.append(np.stack([parent_ids, child_ids], axis=1))
        next_id += len(parent_ids)
        level = child_ids
    return Graph(size, np.concatenate(children_of))


def tree_leaves(m, k, depth):
    """Ids of the depth-`depth` nodes of make_tree(m, k, depth)."""
    size = tree_size(m, k, depth)
    return np.arange(size - m * (k - 1) ** (depth - 1), size)


def format_edge_list(g):
    lines = ["n %d" % g.n]
    lines.extend("%d %d" % (u, v) for u, v in g.edges.tolist())
    return "\n".join(lines) + "\n"


def write_edge_list(g, path):
    """Write `n <count>` then one `u v` line per edge (u < v, sorted)."""
    with open(path, "w", newline="\n") as f:
        f.write(format_edge_list(g))


def read_edge_list(path):
    with open(path) as f:
        lines = [line.strip() for line in f if line.strip()]
    if not lines or not lines[0].startswith("n "):
        raise ValueError("Edge list %s must start with a 'n <count>' line" % path)
    n = int(lines[0].split()[1])
    edges = [tuple(int(tok) for tok in line.split()) for line in lines[1:]]
    if any(len(e) != 2 for e in edges):
        raise ValueError("Edge list %s has a malformed edge line" % path)
    return Graph(n, np.array(edges, dtype=np.int64).reshape(-1, 2))

