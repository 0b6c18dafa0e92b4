"""Interconnection graph induced by the block sparsity of the state weight."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np

from .errors import StructuralError, ValidationError

if TYPE_CHECKING:
    from .cost import QuadraticCost

ZERO_BLOCK_RTOL = 1e-12
SYMMETRY_RTOL = 1e-10


class _Unreachable:
    """Distance marker for targets in another connected component."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "Unreachable"

    def __reduce__(self):
        return (_Unreachable, ())


Unreachable = _Unreachable()


class IndexSet(tuple):
    """Sorted, duplicate-free tuple of 1-based node indices."""

    def __new__(cls, members: Iterable[int] = ()):
        items = sorted({int(m) for m in members})
        return super().__new__(cls, items)

    def check(self, node_count: int) -> "IndexSet":
        for m in self:
            if not 1 <= m <= node_count:
                raise ValidationError(f"node {m} outside 1..{node_count}")
        return self

    def __repr__(self):
        return "IndexSet({" + ", ".join(map(str, self)) + "})"


@dataclass(frozen=True)
class InterconnectionGraph:
    """Undirected graph on nodes ``1..node_count``.

    ``adjacency[i - 1]`` holds the sorted neighbours of node ``i``.
    """

    node_count: int
    adjacency: tuple[tuple[int, ...], ...]
    state_dims: tuple[int, ...]
    control_dims: tuple[int, ...]

    def __post_init__(self):
        if self.node_count < 1:
            raise StructuralError("graph needs at least one node")
        if len(self.adjacency) != self.node_count:
            raise StructuralError("adjacency length does not match node_count")
        for i, nbrs in enumerate(self.adjacency, start=1):
            if i in nbrs:
                raise ValidationError(f"self-loop at node {i}")
            if list(nbrs) != sorted(set(nbrs)):
                raise ValidationError(f"neighbour list of node {i} not sorted/unique")
            for j in nbrs:
                if not 1 <= j <= self.node_count:
                    raise ValidationError(f"neighbour {j} of node {i} out of range")
                if i not in self.adjacency[j - 1]:
                    raise ValidationError(f"edge {i}-{j} not symmetric")

    @classmethod
    def from_edges(cls, node_count: int, edges: Iterable[tuple[int, int]],
                   state_dims: Sequence[int] | None = None,
                   control_dims: Sequence[int] | None = None) -> "InterconnectionGraph":
        nbrs: list[set[int]] = [set() for _ in range(node_count)]
        for i, j in edges:
            if i == j:
                continue
            nbrs[i - 1].add(j)
            nbrs[j - 1].add(i)
        return cls(
            node_count=node_count,
            adjacency=tuple(tuple(sorted(n)) for n in nbrs),
            state_dims=tuple(state_dims) if state_dims is not None else (1,) * node_count,
            control_dims=tuple(control_dims) if control_dims is not None else (1,) * node_count,
        )

    @property
    def nodes(self) -> range:
        return range(1, self.node_count + 1)

    def neighbors(self, i: int) -> tuple[int, ...]:
        self._check_node(i)
        return self.adjacency[i - 1]

    def edges(self) -> list[tuple[int, int]]:
        return [(i, j) for i in self.nodes for j in self.adjacency[i - 1] if i < j]

    def _check_node(self, i: int) -> None:
        if not 1 <= i <= self.node_count:
            raise ValidationError(f"node {i} outside 1..{self.node_count}")

    def distances_from(self, source: int) -> dict[int, int]:
        """BFS hop counts from ``source`` to every reachable node."""
        self._check_node(source)
        dist = {source: 0}
        queue = deque([source])
        while queue:
            v = queue.popleft()
            for w in self.adjacency[v - 1]:
                if w not in dist:
                    dist[w] = dist[v] + 1
                    queue.append(w)
        return dist


def build_graph(cost: "QuadraticCost") -> InterconnectionGraph:
    """Graph with an edge ``{i, j}`` wherever block ``Q_ij`` is not numerically zero."""
    s = cost.node_count
    scale = cost.max_abs_q()
    tol = ZERO_BLOCK_RTOL * scale
    edges = []
    for i in range(1, s + 1):
        for j in range(i + 1, s + 1):
            a = cost.q_block(i, j)
            b = cost.q_block(j, i)
            if not np.allclose(a, b.T, rtol=0.0, atol=SYMMETRY_RTOL * max(scale, 1.0)):
                raise ValidationError(f"Q not symmetric between blocks ({i},{j}) and ({j},{i})")
            if max(np.max(np.abs(a), initial=0.0), np.max(np.abs(b), initial=0.0)) > tol:
                edges.append((i, j))
    return InterconnectionGraph.from_edges(s, edges, cost.state_dims, cost.control_dims)


def graph_distance(g: InterconnectionGraph, i: int, target: Iterable[int]):
    """Hop distance from node ``i`` to the closest member of ``target``.

    Returns :data:`Unreachable` when no member of ``target`` shares a
    component with ``i``.
    """
    target = IndexSet(target)
    if not target:
        raise ValidationError("target set must be nonempty")
    target.check(g.node_count)
    dist = g.distances_from(i)
    hits = [dist[j] for j in target if j in dist]
    return min(hits) if hits else Unreachable


def level_sets(g: InterconnectionGraph, source: int) -> list[IndexSet]:
    """Shells ``W_k`` of nodes at exactly distance ``k`` from ``source``, k = 0..max."""
    dist = g.distances_from(source)
    depth = max(dist.values())
    shells: list[list[int]] = [[] for _ in range(depth + 1)]
    for node, d in dist.items():
        shells[d].append(node)
    return [IndexSet(w) for w in shells]


def superlevel_set(shells: Sequence[IndexSet], k: int) -> IndexSet:
    """Union of the shells at distance ``k`` or more (the set ``V_k``)."""
    return IndexSet(node for w in shells[max(k, 0):] for node in w)


def chain_graph(s: int) -> InterconnectionGraph:
    return InterconnectionGraph.from_edges(s, [(i, i + 1) for i in range(1, s)])
