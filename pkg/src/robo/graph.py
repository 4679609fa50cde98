"""Pose-graph data model.

Pose ids are dense integers ``0..n-1``. Current estimates are kept in a
:class:`Estimates` container (stacked rotation and translation arrays) so the
solver kernels can index them without per-pose Python objects.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .geometry import Pose


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class RelativeMeasurement:
    """Directed relative pose measurement ``from_id -> to_id``."""

    from_id: int
    to_id: int
    transform: Pose
    kappa: float
    tau: float

    def __post_init__(self):
        if self.from_id == self.to_id:
            raise GraphError(f"self-loop on pose {self.from_id}")
        if not (self.kappa > 0 and self.tau > 0):
            raise GraphError(
                f"edge ({self.from_id},{self.to_id}): precisions must be positive"
            )


@dataclass
class Estimates:
    """Stacked poses: ``R`` has shape ``(n, d, d)``, ``t`` has shape ``(n, d)``."""

    R: np.ndarray
    t: np.ndarray

    @property
    def dim(self) -> int:
        return self.R.shape[1]

    def __len__(self) -> int:
        return self.R.shape[0]

    @classmethod
    def identity(cls, n: int, d: int) -> "Estimates":
        return cls(np.tile(np.eye(d), (n, 1, 1)), np.zeros((n, d)))

    @classmethod
    def from_poses(cls, poses: Sequence[Pose]) -> "Estimates":
        return cls(
            np.stack([p.rotation for p in poses]).astype(float),
            np.stack([p.translation for p in poses]).astype(float),
        )

    def pose(self, i: int) -> Pose:
        return Pose(self.R[i], self.t[i])

    def poses(self) -> list[Pose]:
        return [self.pose(i) for i in range(len(self))]

    def copy(self) -> "Estimates":
        return Estimates(self.R.copy(), self.t.copy())

    def take(self, ids) -> "Estimates":
        ids = np.asarray(ids, dtype=np.intp)
        return Estimates(self.R[ids].copy(), self.t[ids].copy())

    def put(self, ids, other: "Estimates") -> None:
        ids = np.asarray(ids, dtype=np.intp)
        self.R[ids] = other.R
        self.t[ids] = other.t

    def left_multiply(self, g: Pose) -> "Estimates":
        """Apply a global rigid transform ``g`` to every pose."""
        return Estimates(
            np.einsum("ab,nbc->nac", g.rotation, self.R),
            self.t @ g.rotation.T + g.translation,
        )

    def equals(self, other: "Estimates") -> bool:
        return np.array_equal(self.R, other.R) and np.array_equal(self.t, other.t)


@dataclass(frozen=True, eq=False)
class EdgeArrays:
    """Column view of a measurement list, convenient for vectorized kernels."""

    src: np.ndarray
    dst: np.ndarray
    R: np.ndarray
    t: np.ndarray
    kappa: np.ndarray
    tau: np.ndarray

    def __len__(self) -> int:
        return self.src.shape[0]

    @classmethod
    def from_measurements(cls, edges: Sequence[RelativeMeasurement], d: int) -> "EdgeArrays":
        m = len(edges)
        if m == 0:
            return cls(
                np.zeros(0, np.intp), np.zeros(0, np.intp), np.zeros((0, d, d)),
                np.zeros((0, d)), np.zeros(0), np.zeros(0),
            )
        return cls(
            np.fromiter((e.from_id for e in edges), np.intp, m),
            np.fromiter((e.to_id for e in edges), np.intp, m),
            np.stack([e.transform.rotation for e in edges]),
            np.stack([e.transform.translation for e in edges]),
            np.fromiter((e.kappa for e in edges), float, m),
            np.fromiter((e.tau for e in edges), float, m),
        )

    def subset(self, idx) -> "EdgeArrays":
        idx = np.asarray(idx, dtype=np.intp)
        return EdgeArrays(
            self.src[idx], self.dst[idx], self.R[idx], self.t[idx],
            self.kappa[idx], self.tau[idx],
        )


@dataclass(frozen=True, eq=False)
class PoseGraph:
    """Directed, weakly connected pose graph with dense ids ``0..n-1``.

    ``initial`` holds the estimates read from the source (identity for poses
    that had no vertex record).
    """

    dimension: int
    initial: Estimates
    edges: tuple[RelativeMeasurement, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "edges", tuple(self.edges))
        if self.dimension not in (2, 3):
            raise GraphError(f"unsupported dimension {self.dimension}")
        n = len(self.initial)
        if n == 0:
            raise GraphError("no vertices")
        if self.initial.dim != self.dimension:
            raise GraphError("estimate dimension does not match graph dimension")
        for e in self.edges:
            if not (0 <= e.from_id < n and 0 <= e.to_id < n):
                raise GraphError(f"edge ({e.from_id},{e.to_id}) references unknown pose")
            if e.transform.dim != self.dimension:
                raise GraphError(f"edge ({e.from_id},{e.to_id}) has wrong dimension")
        if not self.is_connected():
            raise GraphError("pose graph is not connected")

    @property
    def n_poses(self) -> int:
        return len(self.initial)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def arrays(self) -> EdgeArrays:
        return EdgeArrays.from_measurements(self.edges, self.dimension)

    @cached_property
    def adjacency(self) -> list[list[int]]:
        """Undirected neighbour lists, ascending, without duplicates."""
        nbrs: list[set[int]] = [set() for _ in range(self.n_poses)]
        for e in self.edges:
            nbrs[e.from_id].add(e.to_id)
            nbrs[e.to_id].add(e.from_id)
        return [sorted(s) for s in nbrs]

    @cached_property
    def incident_edges(self) -> list[list[int]]:
        inc: list[list[int]] = [[] for _ in range(self.n_poses)]
        for k, e in enumerate(self.edges):
            inc[e.from_id].append(k)
            inc[e.to_id].append(k)
        return inc

    def is_connected(self) -> bool:
        n = self.n_poses
        seen = np.zeros(n, dtype=bool)
        seen[0] = True
        queue = deque([0])
        adj = self.adjacency
        while queue:
            u = queue.popleft()
            for v in adj[u]:
                if not seen[v]:
                    seen[v] = True
                    queue.append(v)
        return bool(seen.all())

    def with_edges(self, edges: Iterable[RelativeMeasurement]) -> "PoseGraph":
        return PoseGraph(self.dimension, self.initial, tuple(edges))

    def with_initial(self, initial: Estimates) -> "PoseGraph":
        return PoseGraph(self.dimension, initial, self.edges)

    def with_uniform_precision(self, kappa: float, tau: float) -> "PoseGraph":
        return self.with_edges(
            RelativeMeasurement(e.from_id, e.to_id, e.transform, kappa, tau)
            for e in self.edges
        )
