"""Undirected graph machinery for decomposable (chordal) graphical models.

Provides chordality testing via maximum cardinality search (MCS), extraction
of a perfect clique ordering with the running-intersection property, and
single-edge toggle proposals that stay inside the decomposable family.
Vertices are integers ``0..q-1``; edges are unordered pairs stored as
``(j, j')`` with ``j < j'``.

Graphs are immutable and hashable; the chordality test and the clique
decomposition are memoized because graph-space MCMC revisits the same
graphs constantly. Adjacency is kept both as vertex bitmasks (for the
search algorithms) and lazily as sets (for callers).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Iterator

import numpy as np

try:  # optional JIT for the hot chordality kernel; pure Python otherwise
    import numba

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    _HAVE_NUMBA = False

__all__ = [
    "UndirectedGraph",
    "CliqueDecomposition",
    "is_decomposable",
    "clique_decomposition",
    "propose_edge_toggle",
    "decomposable_neighborhood_size",
]


def _normalize_edge(j: int, jp: int) -> tuple[int, int]:
    if j == jp:
        raise ValueError(f"self-loop ({j},{jp}) is not a valid edge")
    return (j, jp) if j < jp else (jp, j)


class UndirectedGraph:
    """Immutable simple undirected graph on vertices ``0..vertex_count-1``."""

    __slots__ = ("vertex_count", "edges", "_bits", "_sets")

    def __init__(self, vertex_count: int, edges: Iterable[tuple[int, int]] = ()):
        if vertex_count < 1:
            raise ValueError("vertex_count must be positive")
        self.vertex_count = int(vertex_count)
        normalized = set()
        for j, jp in edges:
            e = _normalize_edge(int(j), int(jp))
            if not (0 <= e[0] and e[1] < self.vertex_count):
                raise ValueError(f"edge {e} outside vertex range 0..{vertex_count - 1}")
            normalized.add(e)
        self.edges: frozenset[tuple[int, int]] = frozenset(normalized)
        self._bits: list[int] | None = None
        self._sets: list[set[int]] | None = None

    # -- adjacency views -------------------------------------------------

    def adjacency_bits(self) -> list[int]:
        """Neighbor bitmask per vertex (bit v set iff edge to vertex v)."""
        if self._bits is None:
            bits = [0] * self.vertex_count
            for j, jp in self.edges:
                bits[j] |= 1 << jp
                bits[jp] |= 1 << j
            self._bits = bits
        return self._bits

    def neighbors(self, j: int) -> set[int]:
        if self._sets is None:
            sets: list[set[int]] = [set() for _ in range(self.vertex_count)]
            for a, b in self.edges:
                sets[a].add(b)
                sets[b].add(a)
            self._sets = sets
        return self._sets[j]

    # -- basic queries -----------------------------------------------------

    def has_edge(self, j: int, jp: int) -> bool:
        return _normalize_edge(j, jp) in self.edges

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    def with_edge_toggled(self, j: int, jp: int) -> "UndirectedGraph":
        e = _normalize_edge(j, jp)
        if not 0 <= e[0] < e[1] < self.vertex_count:
            raise ValueError(f"edge {e} outside vertex range")
        out = object.__new__(UndirectedGraph)
        out.vertex_count = self.vertex_count
        out.edges = self.edges - {e} if e in self.edges else self.edges | {e}
        out._sets = None
        if self._bits is not None:
            bits = self._bits.copy()
            bits[e[0]] ^= 1 << e[1]
            bits[e[1]] ^= 1 << e[0]
            out._bits = bits
        else:
            out._bits = None
        return out

    def sorted_edges(self) -> list[tuple[int, int]]:
        return sorted(self.edges)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, UndirectedGraph)
            and self.vertex_count == other.vertex_count
            and self.edges == other.edges
        )

    def __hash__(self) -> int:
        return hash((self.vertex_count, self.edges))

    def __repr__(self) -> str:
        return f"UndirectedGraph(q={self.vertex_count}, edges={self.sorted_edges()})"

    # -- constructors / serialization --------------------------------------

    @classmethod
    def empty(cls, vertex_count: int) -> "UndirectedGraph":
        return cls(vertex_count)

    @classmethod
    def complete(cls, vertex_count: int) -> "UndirectedGraph":
        edges = [(j, jp) for j in range(vertex_count) for jp in range(j + 1, vertex_count)]
        return cls(vertex_count, edges)

    @classmethod
    def from_adjacency(cls, adj: np.ndarray) -> "UndirectedGraph":
        adj = np.asarray(adj)
        q = adj.shape[0]
        if adj.shape != (q, q):
            raise ValueError("adjacency matrix must be square")
        if np.any(adj != adj.T):
            raise ValueError("adjacency matrix must be symmetric")
        if np.any(np.diag(adj) != 0):
            raise ValueError("adjacency matrix must have zero diagonal")
        js, jps = np.nonzero(np.triu(adj, k=1))
        return cls(q, zip(js.tolist(), jps.tolist()))

    def to_adjacency(self) -> np.ndarray:
        adj = np.zeros((self.vertex_count, self.vertex_count), dtype=int)
        for j, jp in self.edges:
            adj[j, jp] = adj[jp, j] = 1
        return adj

    @classmethod
    def from_csv(cls, path) -> "UndirectedGraph":
        return cls.from_adjacency(np.loadtxt(path, delimiter=",", ndmin=2))

    def to_csv(self, path) -> None:
        np.savetxt(path, self.to_adjacency(), fmt="%d", delimiter=",")


@dataclass(frozen=True)
class CliqueDecomposition:
    """Perfect ordering of maximal cliques with consecutive separators.

    ``separators[k-1]`` is the intersection of ``cliques[k]`` with the union
    of all earlier cliques (running-intersection property); it is empty when
    clique ``k`` starts a new connected component.
    """

    cliques: tuple[tuple[int, ...], ...]
    separators: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        if len(self.separators) != max(len(self.cliques) - 1, 0):
            raise ValueError("need exactly one separator per clique after the first")

    def __iter__(self) -> Iterator[tuple[tuple[int, ...], tuple[int, ...]]]:
        """Yield (clique, separator) pairs; the first separator is empty."""
        for k, clique in enumerate(self.cliques):
            yield clique, () if k == 0 else self.separators[k - 1]


def _bit_vertices(mask: int) -> list[int]:
    out = []
    while mask:
        low = mask & -mask
        out.append(low.bit_length() - 1)
        mask ^= low
    return out


def _mcs_python(adj: list[int], q: int) -> tuple[tuple[int, ...], bool]:
    weight = [0] * q
    unvisited = (1 << q) - 1
    order: list[int] = []
    pos = [0] * q
    for step in range(q):
        best = -1
        best_w = -1
        m = unvisited
        while m:
            v = (m & -m).bit_length() - 1
            if weight[v] > best_w:
                best, best_w = v, weight[v]
            m &= m - 1
        unvisited ^= 1 << best
        order.append(best)
        pos[best] = step
        m = adj[best] & unvisited
        while m:
            weight[(m & -m).bit_length() - 1] += 1
            m &= m - 1
    seen = 0
    chordal = True
    for v in order:
        earlier = adj[v] & seen
        if earlier:
            parent = -1
            parent_pos = -1
            m = earlier
            while m:
                u = (m & -m).bit_length() - 1
                if pos[u] > parent_pos:
                    parent, parent_pos = u, pos[u]
                m &= m - 1
            if (earlier ^ (1 << parent)) & ~adj[parent]:
                chordal = False
                break
        seen |= 1 << v
    return tuple(order), chordal


if _HAVE_NUMBA:

    @numba.njit(cache=True)
    def _mcs_kernel(adj: np.ndarray, q: int):  # pragma: no cover - jitted
        one = np.uint64(1)
        weight = np.zeros(q, np.int64)
        visited = np.zeros(q, np.uint8)
        order = np.empty(q, np.int64)
        pos = np.empty(q, np.int64)
        for step in range(q):
            best = -1
            best_w = -1
            for v in range(q):
                if visited[v] == 0 and weight[v] > best_w:
                    best = v
                    best_w = weight[v]
            visited[best] = 1
            order[step] = best
            pos[best] = step
            row = adj[best]
            for v in range(q):
                if visited[v] == 0 and (row >> np.uint64(v)) & one:
                    weight[v] += 1
        seen = np.uint64(0)
        chordal = True
        for step in range(q):
            v = order[step]
            earlier = adj[v] & seen
            if earlier != np.uint64(0):
                parent = -1
                parent_pos = -1
                for u in range(q):
                    if (earlier >> np.uint64(u)) & one and pos[u] > parent_pos:
                        parent = u
                        parent_pos = pos[u]
                rest = earlier & ~(one << np.uint64(parent))
                if rest & ~adj[parent] != np.uint64(0):
                    chordal = False
                    break
            seen |= one << np.uint64(v)
        return order, chordal


@lru_cache(maxsize=8192)
def _mcs_order(graph: UndirectedGraph) -> tuple[tuple[int, ...], bool]:
    """Maximum cardinality search visit order and chordality flag.

    Ties break toward the smallest vertex index so the ordering is
    deterministic. Chordality is the standard perfect-elimination check on
    the reversed visit order, done on neighbor bitmasks.
    """
    q = graph.vertex_count
    adj = graph.adjacency_bits()
    if _HAVE_NUMBA and q <= 64:
        order, chordal = _mcs_kernel(np.array(adj, dtype=np.uint64), q)
        return tuple(int(v) for v in order), bool(chordal)
    return _mcs_python(adj, q)


def is_decomposable(graph: UndirectedGraph) -> bool:
    """True iff the graph is chordal (every cycle >= 4 has a chord)."""
    return _mcs_order(graph)[1]


def _maximal_cliques(graph: UndirectedGraph, order: tuple[int, ...]) -> list[tuple[int, ...]]:
    adj = graph.adjacency_bits()
    seen = 0
    candidates: list[int] = []
    for v in order:
        candidates.append((adj[v] & seen) | (1 << v))
        seen |= 1 << v
    candidates.sort(key=lambda m: m.bit_count(), reverse=True)
    maximal: list[int] = []
    for c in candidates:
        if not any(c & m == c for m in maximal):
            maximal.append(c)
    return sorted(tuple(_bit_vertices(m)) for m in maximal)


@lru_cache(maxsize=4096)
def clique_decomposition(graph: UndirectedGraph) -> CliqueDecomposition:
    """Perfect clique ordering of a decomposable graph.

    Builds a junction forest (maximum-weight spanning forest of the clique
    intersection graph) and emits cliques in breadth-first order, so each
    separator is the intersection with the already-visited cliques.
    """
    order, chordal = _mcs_order(graph)
    if not chordal:
        raise ValueError("graph is not decomposable")
    cliques = _maximal_cliques(graph, order)
    masks = [sum(1 << v for v in c) for c in cliques]
    n = len(cliques)

    # Prim over the clique intersection graph; weight-0 attachments start
    # fresh components, which yields empty separators for them.
    in_tree = [False] * n
    parent = [-1] * n
    visit: list[int] = []
    for _ in range(n):
        best, best_w, best_par = -1, -1, -1
        for i in range(n):
            if in_tree[i]:
                continue
            w, par = 0, -1
            for t in visit:
                overlap = (masks[i] & masks[t]).bit_count()
                if overlap > w:
                    w, par = overlap, t
            if w > best_w:
                best, best_w, best_par = i, w, par
        in_tree[best] = True
        parent[best] = best_par if best_w > 0 else -1
        visit.append(best)

    ordered = [cliques[i] for i in visit]
    separators = []
    for k in range(1, n):
        i = visit[k]
        if parent[i] == -1:
            separators.append(())
        else:
            separators.append(tuple(_bit_vertices(masks[i] & masks[parent[i]])))
    return CliqueDecomposition(tuple(ordered), tuple(separators))


def _pair_from_index(q: int, m: int) -> tuple[int, int]:
    # m indexes the strictly-upper-triangular pairs in row-major order
    j = 0
    row = q - 1
    while m >= row:
        m -= row
        j += 1
        row -= 1
    return j, j + 1 + m


def propose_edge_toggle(graph: UndirectedGraph, rng: np.random.Generator) -> UndirectedGraph:
    """Uniform single-edge toggle, redrawn until the result is decomposable.

    The effective proposal is uniform over the decomposable one-edge
    neighborhood of the input graph.
    """
    q = graph.vertex_count
    if q < 2:
        raise ValueError("need at least two vertices to toggle an edge")
    graph.adjacency_bits()  # materialize once so toggles copy instead of rebuild
    n_pairs = q * (q - 1) // 2
    while True:
        j, jp = _pair_from_index(q, int(rng.integers(n_pairs)))
        candidate = graph.with_edge_toggled(j, jp)
        if is_decomposable(candidate):
            return candidate


def decomposable_neighborhood_size(graph: UndirectedGraph) -> int:
    """Number of decomposable graphs differing from ``graph`` in one edge."""
    q = graph.vertex_count
    count = 0
    for j in range(q):
        for jp in range(j + 1, q):
            if is_decomposable(graph.with_edge_toggled(j, jp)):
                count += 1
    return count
