"""Robot partitions, overlapping blocks and the robot-level communication graph.

Distances are undirected hop counts; edge direction only decides whether a
boundary measurement is an outgoing or an incoming prior.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .graph import Estimates, GraphError, PoseGraph


@dataclass(frozen=True, eq=False)
class BlockAssignment:
    """Disjoint cover of the pose ids by ``n_robots`` non-empty blocks."""

    owner: np.ndarray
    blocks: tuple[np.ndarray, ...]

    @property
    def n_robots(self) -> int:
        return len(self.blocks)

    @classmethod
    def from_blocks(cls, blocks: Sequence[Iterable[int]], n_poses: int) -> "BlockAssignment":
        owner = np.full(n_poses, -1, dtype=np.intp)
        out = []
        for robot, ids in enumerate(blocks):
            ids = np.array(sorted(set(int(i) for i in ids)), dtype=np.intp)
            if ids.size == 0:
                raise GraphError(f"block {robot} is empty")
            if ids.min() < 0 or ids.max() >= n_poses:
                raise GraphError(f"block {robot} references an unknown pose")
            if np.any(owner[ids] >= 0):
                raise GraphError(f"block {robot} overlaps another block")
            owner[ids] = robot
            out.append(ids)
        if np.any(owner < 0):
            missing = np.flatnonzero(owner < 0)
            raise GraphError(f"poses {missing[:10].tolist()} are not assigned to any robot")
        return cls(owner, tuple(out))


def sequential_partition(graph: PoseGraph, n_robots: int) -> BlockAssignment:
    """Contiguous id ranges; the first ``n % N`` robots get one extra pose."""
    n = graph.n_poses
    if n_robots < 1 or n_robots > n:
        raise GraphError(f"cannot split {n} poses among {n_robots} robots")
    base, extra = divmod(n, n_robots)
    sizes = [base + (1 if r < extra else 0) for r in range(n_robots)]
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    return BlockAssignment.from_blocks(
        [range(bounds[r], bounds[r + 1]) for r in range(n_robots)], n
    )


def parse_partition(text: str, n_poses: int) -> BlockAssignment:
    """One line per robot, whitespace-separated pose ids; ``#`` starts a comment."""
    blocks = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            blocks.append([int(tok) for tok in line.split()])
        except ValueError:
            raise GraphError(f"partition line {lineno}: non-integer pose id") from None
    if not blocks:
        raise GraphError("partition file lists no robots")
    return BlockAssignment.from_blocks(blocks, n_poses)


def graph_distance(graph: PoseGraph, sources: Iterable[int], max_depth: float = np.inf) -> np.ndarray:
    """Multi-source BFS hop counts; ``inf`` beyond ``max_depth`` or unreachable."""
    dist = np.full(graph.n_poses, np.inf)
    queue = deque()
    for s in sources:
        if dist[s] != 0:
            dist[s] = 0
            queue.append(s)
    if not queue:
        raise ValueError("source set is empty")
    adj = graph.adjacency
    while queue:
        u = queue.popleft()
        du = dist[u]
        if du >= max_depth:
            continue
        for v in adj[u]:
            if dist[v] == np.inf:
                dist[v] = du + 1
                queue.append(v)
    return dist


@dataclass(frozen=True, eq=False)
class OverlapBlock:
    """Robot ``robot``'s inflated subproblem at overlap ``omega``.

    Node sets are sorted id arrays; edge sets are arrays of indices into
    ``graph.edges`` in file order. ``boundary_values`` holds the frozen poses
    of ``boundary`` when the block was built with estimates.
    """

    robot: int
    omega: int
    owned: np.ndarray
    interior: np.ndarray
    boundary: np.ndarray
    interior_edges: np.ndarray
    outgoing_prior_edges: np.ndarray
    incoming_prior_edges: np.ndarray
    boundary_values: Estimates | None = None

    @property
    def inflated(self) -> np.ndarray:
        """All poses the robot must hold, i.e. interior plus boundary."""
        return np.union1d(self.interior, self.boundary)

    @property
    def prior_edges(self) -> np.ndarray:
        return np.concatenate([self.outgoing_prior_edges, self.incoming_prior_edges])


def build_overlap_block(
    graph: PoseGraph,
    assignment: BlockAssignment,
    robot: int,
    omega: int,
    estimates: Estimates | None = None,
) -> OverlapBlock:
    if omega < 0:
        raise ValueError("omega must be non-negative")
    owned = assignment.blocks[robot]
    dist = graph_distance(graph, owned, max_depth=omega + 1)
    interior = np.flatnonzero(dist <= omega)
    boundary = np.flatnonzero(dist == omega + 1)

    arr = graph.arrays
    di, dj = dist[arr.src], dist[arr.dst]
    interior_edges = np.flatnonzero((di <= omega) & (dj <= omega))
    outgoing = np.flatnonzero((di <= omega) & (dj == omega + 1))
    incoming = np.flatnonzero((di == omega + 1) & (dj <= omega))
    values = estimates.take(boundary) if estimates is not None else None
    return OverlapBlock(
        robot, omega, owned, interior, boundary,
        interior_edges, outgoing, incoming, values,
    )


@dataclass(frozen=True, eq=False)
class CommunicationGraph:
    n_robots: int
    links: tuple[tuple[int, int], ...]

    def neighbors(self, robot: int) -> list[int]:
        out = [b for a, b in self.links if a == robot]
        out += [a for a, b in self.links if b == robot]
        return sorted(out)

    def has_link(self, a: int, b: int) -> bool:
        return (min(a, b), max(a, b)) in self.links


def inflated_sets(graph: PoseGraph, assignment: BlockAssignment, omega: int) -> list[np.ndarray]:
    """``V_alpha^{omega+1}`` for every robot."""
    return [
        np.flatnonzero(graph_distance(graph, blk, max_depth=omega + 1) <= omega + 1)
        for blk in assignment.blocks
    ]


def build_communication_graph(
    graph: PoseGraph, assignment: BlockAssignment, omega: int
) -> CommunicationGraph:
    """Link two robots iff either one's inflated block reaches the other's poses."""
    links = set()
    for a, reach in enumerate(inflated_sets(graph, assignment, omega)):
        for b in np.unique(assignment.owner[reach]):
            if b != a:
                links.add((min(a, int(b)), max(a, int(b))))
    return CommunicationGraph(assignment.n_robots, tuple(sorted(links)))
