"""Sampling G(n, kappa) and measuring its components.

Vertices are grouped into contiguous blocks by type.  For each unordered
pair of blocks the number of edges is Binomial(M, p) with M the number of
vertex pairs in the block and p = min(kappa/n, 1); the edges themselves are
a uniform subset of that size.  Conditioned on its size a Bernoulli edge set
is uniform, so this has exactly the law of independent per-pair coins.
"""

from __future__ import annotations

from collections import Counter, deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numba import njit

from .kernel import Kernel, TypeSpace, apply_T
from .seeding import chunk_generator

MAX_PAIRS = 1 << 62


@dataclass(frozen=True)
class TypeAssignment:
    n: int
    counts: np.ndarray
    labels: tuple
    mode: str = "deterministic"

    @property
    def vertex_type(self):
        return np.repeat(np.asarray(self.labels), self.counts)

    @property
    def offsets(self):
        return np.concatenate([[0], np.cumsum(self.counts)])


def _largest_remainder(n, weights):
    raw = n * np.asarray(weights, dtype=float)
    base = np.floor(raw).astype(np.int64)
    short = n - int(base.sum())
    # stable sort keeps ties in label order
    order = np.argsort(-(raw - base), kind="stable")
    base[order[:short]] += 1
    return base


def assign_types(space: TypeSpace, n: int, mode: str = "deterministic",
                 rng: Optional[np.random.Generator] = None) -> TypeAssignment:
    """Vertex types for n vertices.

    ``deterministic`` apportions n*mu by largest remainder; ``iid`` draws each
    vertex type independently from mu (only the counts matter, since vertices
    are stored in type blocks).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if mode == "deterministic":
        counts = _largest_remainder(n, space.weights)
    elif mode == "iid":
        if rng is None:
            raise ValueError("iid assignment needs a random generator")
        counts = rng.multinomial(n, space.weights).astype(np.int64)
    else:
        raise ValueError(f"unknown assignment mode {mode!r}")
    return TypeAssignment(int(n), counts, space.labels, mode)


def verify_assumption(assignment: TypeAssignment, kernel: Kernel, eps: float, q: float) -> bool:
    """counts(x)/n - mu(x) <= eps exp(q T[1](x)) mu(x) for every type x."""
    mu = kernel.space.weights
    t1 = apply_T(kernel, np.ones(kernel.dim))
    lhs = assignment.counts / assignment.n - mu
    return bool(np.all(lhs <= eps * np.exp(q * t1) * mu))


@dataclass(frozen=True)
class GraphSample:
    assignment: TypeAssignment
    edges: np.ndarray
    seed: int = 0

    @property
    def n(self):
        return self.assignment.n

    @property
    def m(self):
        return int(self.edges.shape[0])

    def dump(self, path):
        with open(path, "w") as fh:
            fh.write(f"{self.n} {self.m}\n")
            for u, v in self.edges:
                fh.write(f"{u} {v}\n")


def _decode_triangle(t):
    """Index t in [0, c(c-1)/2) -> (i, j) with i < j, enumerating by j."""
    j = np.floor((1.0 + np.sqrt(1.0 + 8.0 * t.astype(float))) / 2.0).astype(np.int64)
    # floating sqrt may be off by one near perfect squares
    j -= (j * (j - 1) // 2) > t
    j += ((j + 1) * j // 2) <= t
    i = t - j * (j - 1) // 2
    return i, j


def pair_count(ca, cb, same):
    m = ca * (ca - 1) // 2 if same else ca * cb
    if m > MAX_PAIRS:
        raise OverflowError(f"block has {m} vertex pairs")
    return m


def expected_edges(kernel: Kernel, counts, n: int) -> float:
    """Expected edge count of G(n, kappa) with the given type counts."""
    tot = 0.0
    d = kernel.dim
    for a in range(d):
        for b in range(a, d):
            p = min(kernel.matrix[a, b] / n, 1.0)
            tot += p * pair_count(int(counts[a]), int(counts[b]), a == b)
    return tot


def generate_graph(assignment: TypeAssignment, kernel: Kernel, seed: int) -> GraphSample:
    """Sample the edge set; block (a, b) uses its own stream derived from seed."""
    n = assignment.n
    counts = [int(c) for c in assignment.counts]
    off = assignment.offsets
    d = len(counts)
    blocks = []
    bidx = 0
    for a in range(d):
        for b in range(a, d):
            key = bidx
            bidx += 1
            p = min(float(kernel.matrix[a, b]) / n, 1.0)
            M = pair_count(counts[a], counts[b], a == b)
            if p <= 0.0 or M == 0:
                continue
            rng = chunk_generator(seed, "block", a, b, key)
            k = int(rng.binomial(M, p)) if p < 1.0 else M
            if k == 0:
                continue
            t = rng.choice(M, size=k, replace=False, shuffle=False).astype(np.int64)
            if a == b:
                i, j = _decode_triangle(t)
                u, v = off[a] + i, off[a] + j
            else:
                u, v = off[a] + t // counts[b], off[b] + t % counts[b]
            blocks.append(np.column_stack([u, v]))
    edges = np.concatenate(blocks).astype(np.int64) if blocks else np.zeros((0, 2), dtype=np.int64)
    return GraphSample(assignment, edges, int(seed))


# -- components --------------------------------------------------------------

@njit(cache=True, nogil=True)
def _uf_roots(n, edges):
    parent = np.arange(n)
    size = np.ones(n, dtype=np.int64)
    for e in range(edges.shape[0]):
        a = edges[e, 0]
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        b = edges[e, 1]
        while parent[b] != b:
            parent[b] = parent[parent[b]]
            b = parent[b]
        if a == b:
            continue
        if size[a] < size[b]:
            a, b = b, a
        parent[b] = a
        size[a] += size[b]
    for v in range(n):
        r = v
        while parent[r] != r:
            r = parent[r]
        parent[v] = r
    return parent, size


@dataclass(frozen=True)
class ComponentStats:
    c1: int
    c2: int
    histogram: dict
    components: np.ndarray = field(repr=False)
    sizes: np.ndarray = field(repr=False)

    def size_of(self, v):
        return int(self.sizes[self.components[v]])


def largest_component(graph: GraphSample) -> ComponentStats:
    """Union-find (union by size, path halving) over the edge list."""
    n = graph.n
    roots, size = _uf_roots(n, np.ascontiguousarray(graph.edges, dtype=np.int64))
    comp_sizes = size[roots == np.arange(n)]
    vals, mult = np.unique(comp_sizes, return_counts=True)
    hist = {int(s): int(c) for s, c in zip(vals, mult)}
    top = np.sort(comp_sizes)[::-1]
    c1 = int(top[0])
    c2 = int(top[1]) if top.size > 1 else 0
    return ComponentStats(c1, c2, hist, roots, size)


def adjacency(graph: GraphSample):
    """CSR (indptr, indices) of the undirected graph."""
    n = graph.n
    e = graph.edges
    src = np.concatenate([e[:, 0], e[:, 1]])
    dst = np.concatenate([e[:, 1], e[:, 0]])
    order = np.argsort(src, kind="stable")
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(src, minlength=n), out=indptr[1:])
    return indptr, dst[order]


@dataclass(frozen=True)
class ExplorationTrace:
    root: int
    order: list
    tree_edges: list

    @property
    def size(self):
        return len(self.order)


def explore_component(graph: GraphSample, root: int, csr=None) -> ExplorationTrace:
    """Breadth-first exploration from ``root``.

    Each revealed vertex in turn has its unused neighbours revealed and is
    then marked saturated; the process stops when every revealed vertex is
    saturated.
    """
    if not 0 <= root < graph.n:
        raise ValueError(f"root {root} out of range")
    indptr, nbrs = csr if csr is not None else adjacency(graph)
    used = {root}
    order = [root]
    tree = []
    queue = deque([root])
    while queue:
        v = queue.popleft()
        for w in nbrs[indptr[v]:indptr[v + 1]]:
            w = int(w)
            if w not in used:
                used.add(w)
                order.append(w)
                tree.append((v, w))
                queue.append(w)
    return ExplorationTrace(root, order, tree)


def component_size_spectrum(graph: GraphSample, roots, stats: Optional[ComponentStats] = None) -> Counter:
    """Histogram of the component sizes seen from each root.

    Sizes are size-biased: a component of size s is hit s times as often as
    a single vertex would be.
    """
    roots = np.asarray(roots, dtype=np.int64)
    if roots.size == 0:
        raise ValueError("roots must be nonempty")
    stats = stats or largest_component(graph)
    sizes = stats.sizes[stats.components[roots]]
    vals, mult = np.unique(sizes, return_counts=True)
    return Counter({int(s): int(c) for s, c in zip(vals, mult)})
