"""Initial estimates: per-robot odometry, block-wise spanning tree, chordal relaxation.

Every initializer pins pose 0 to the identity.
"""

from __future__ import annotations

from collections import deque

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import Pose, compose, inverse, project_batch
from .graph import Estimates, GraphError, PoseGraph, RelativeMeasurement
from .partition import BlockAssignment

INIT_SCHEMES = ("odometry", "spanning-tree", "chordal")


def _step(origin: Pose, e: RelativeMeasurement, forward: bool) -> Pose:
    """Pose at the far end of ``e`` given the pose at its near end."""
    return compose(origin, e.transform if forward else inverse(e.transform))


def _tree_compose(graph: PoseGraph, root: int, allowed, start: Pose) -> dict[int, Pose]:
    """BFS over edges accepted by ``allowed(k)`` composing measurements from ``root``."""
    poses = {root: start}
    queue = deque([root])
    while queue:
        u = queue.popleft()
        for k in graph.incident_edges[u]:
            if not allowed(k):
                continue
            e = graph.edges[k]
            v, forward = (e.to_id, True) if e.from_id == u else (e.from_id, False)
            if v not in poses:
                poses[v] = _step(poses[u], e, forward)
                queue.append(v)
    return poses


def _dead_reckon(graph: PoseGraph, block: np.ndarray, owner: np.ndarray) -> dict[int, Pose]:
    """Chain consecutive-id measurements inside one block, starting at identity."""
    robot = owner[block[0]]
    odom: dict[int, tuple[RelativeMeasurement, bool]] = {}
    for e in graph.edges:
        lo, hi = min(e.from_id, e.to_id), max(e.from_id, e.to_id)
        if hi - lo == 1 and owner[lo] == robot and owner[hi] == robot and hi not in odom:
            odom[hi] = (e, e.from_id == lo)

    local = {int(block[0]): Pose.identity(graph.dimension)}
    fallback = None
    for k in block[1:]:
        k = int(k)
        if k in odom and k - 1 in local:
            e, forward = odom[k]
            local[k] = _step(local[k - 1], e, forward)
            continue
        if fallback is None:
            fallback = _tree_compose(
                graph, int(block[0]),
                lambda i: owner[graph.edges[i].from_id] == robot and owner[graph.edges[i].to_id] == robot,
                Pose.identity(graph.dimension),
            )
        if k not in fallback:
            raise GraphError(f"pose {k} is not reachable inside robot {robot}'s block")
        local[k] = fallback[k]
    return local


def odometry_init(graph: PoseGraph, assignment: BlockAssignment, anchor: str = "tree") -> Estimates:
    """Each robot dead-reckons its own trajectory.

    With ``anchor="identity"`` every block starts at the identity. With
    ``anchor="tree"`` blocks are chained to the block of pose 0 through one
    inter-robot measurement each (first usable edge in file order).
    """
    if anchor not in ("tree", "identity"):
        raise ValueError(f"unknown anchor mode {anchor!r}")
    owner = assignment.owner
    local = [_dead_reckon(graph, blk, owner) for blk in assignment.blocks]
    offsets: list[Pose | None] = [None] * assignment.n_robots

    if anchor == "identity":
        offsets = [Pose.identity(graph.dimension)] * assignment.n_robots
    else:
        root = int(owner[0])
        offsets[root] = Pose.identity(graph.dimension)
        queue = deque([root])
        while queue:
            a = queue.popleft()
            for e in graph.edges:
                ra, rb = owner[e.from_id], owner[e.to_id]
                if ra == a and offsets[rb] is None:
                    known, unknown, forward, b = e.from_id, e.to_id, True, rb
                elif rb == a and offsets[ra] is None:
                    known, unknown, forward, b = e.to_id, e.from_id, False, ra
                else:
                    continue
                T_known = compose(offsets[a], local[a][known])
                T_unknown = _step(T_known, e, forward)
                offsets[b] = compose(T_unknown, inverse(local[b][unknown]))
                queue.append(b)

    poses = [None] * graph.n_poses
    for robot, blk in enumerate(assignment.blocks):
        for i in blk:
            poses[i] = compose(offsets[robot], local[robot][int(i)])
    return Estimates.from_poses(poses)


def spanning_tree_init(graph: PoseGraph, assignment: BlockAssignment) -> Estimates:
    """Compose measurements along a spanning tree that prefers intra-robot edges.

    The tree is a minimum spanning tree grown from pose 0 (Prim on a 0-1
    deque, edges scanned in file order) with intra-robot edges weighing 0 and
    inter-robot edges 1, so internally connected blocks are joined by exactly
    ``N - 1`` inter-robot edges.
    """
    n = graph.n_poses
    owner = assignment.owner
    key = np.full(n, np.inf)
    parent: list[tuple[int, bool] | None] = [None] * n
    done = np.zeros(n, dtype=bool)
    poses: list[Pose | None] = [None] * n
    key[0] = 0
    dq = deque([0])
    while dq:
        u = dq.popleft()
        if done[u]:
            continue
        done[u] = True
        if parent[u] is None:
            poses[u] = Pose.identity(graph.dimension)
        else:
            k, forward = parent[u]
            e = graph.edges[k]
            poses[u] = _step(poses[e.from_id if forward else e.to_id], e, forward)
        for k in graph.incident_edges[u]:
            e = graph.edges[k]
            v, forward = (e.to_id, True) if e.from_id == u else (e.from_id, False)
            if done[v]:
                continue
            w = 0 if owner[u] == owner[v] else 1
            if w < key[v]:
                key[v] = w
                parent[v] = (k, forward)
                if w == 0:
                    dq.appendleft(v)
                else:
                    dq.append(v)
    return Estimates.from_poses(poses)


def _solve_spd(A: sp.spmatrix, b: np.ndarray, what: str) -> np.ndarray:
    try:
        lu = spla.splu(A.tocsc(), permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                       options={"SymmetricMode": True})
        x = lu.solve(b)
    except RuntimeError:
        raise GraphError(f"{what} system is rank deficient (disconnected graph?)") from None
    if not np.all(np.isfinite(x)):
        raise GraphError(f"{what} system is rank deficient (disconnected graph?)")
    return x


def _incidence(graph: PoseGraph, weights: np.ndarray, blocks_i: np.ndarray) -> sp.csr_matrix:
    """Sparse ``(m*d, n*d)`` matrix with ``w I`` at column block ``j`` and ``-w B_e`` at ``i``."""
    arr = graph.arrays
    m, d, n = len(arr), graph.dimension, graph.n_poses
    rows = np.arange(m * d).reshape(m, d)
    c_j = arr.dst[:, None] * d + np.arange(d)
    v_j = np.broadcast_to(weights[:, None], (m, d))
    r_i = np.broadcast_to(rows[:, :, None], (m, d, d))
    c_i = np.broadcast_to((arr.src[:, None] * d + np.arange(d))[:, None, :], (m, d, d))
    v_i = -weights[:, None, None] * blocks_i
    return sp.csr_matrix(
        (np.concatenate([v_j.ravel(), v_i.ravel()]),
         (np.concatenate([rows.ravel(), r_i.ravel()]), np.concatenate([c_j.ravel(), c_i.ravel()]))),
        shape=(m * d, n * d),
    )


def _anchored_lstsq(A: sp.csr_matrix, rhs: np.ndarray, anchor: np.ndarray, d: int, what: str):
    """Least squares ``min |A x - rhs|`` with the first ``d`` rows of ``x`` fixed to ``anchor``."""
    A = A.tocsc()
    A0, Ar = A[:, :d], A[:, d:]
    b = rhs - A0 @ anchor
    x = _solve_spd((Ar.T @ Ar), Ar.T @ b, what)
    return np.concatenate([anchor, x.reshape(-1, anchor.shape[1])])


def chordal_init(graph: PoseGraph) -> Estimates:
    """Two-stage chordal relaxation solved centrally.

    Rotations: unconstrained least squares on ``sqrt(kappa)(R_j - R_i Rm)``
    with ``R_0 = I``, each block then projected onto SO(d). Translations:
    least squares on ``sqrt(tau)(t_j - t_i - R_i tm)`` with the rotations
    fixed and ``t_0 = 0``.
    """
    arr = graph.arrays
    d, n = graph.dimension, graph.n_poses
    if n == 1:
        return Estimates.identity(1, d)
    # Work with X_i = R_i^T so that X_j - Rm^T X_i is linear in block columns.
    A = _incidence(graph, np.sqrt(arr.kappa), np.swapaxes(arr.R, 1, 2))
    X = _anchored_lstsq(A, np.zeros((A.shape[0], d)), np.eye(d), d, "rotation")
    R = project_batch(np.swapaxes(X.reshape(n, d, d), 1, 2))
    R[0] = np.eye(d)

    st = np.sqrt(arr.tau)
    B = _incidence(graph, st, np.broadcast_to(np.eye(d), (len(arr), d, d)))
    rhs = (st[:, None] * (R[arr.src] @ arr.t[:, :, None])[:, :, 0]).reshape(-1, 1)
    t = _anchored_lstsq(B, rhs, np.zeros((d, 1)), d, "translation").reshape(n, d)
    return Estimates(R, t)


def initialize(scheme: str, graph: PoseGraph, assignment: BlockAssignment, odom_anchor: str = "tree") -> Estimates:
    if scheme == "odometry":
        return odometry_init(graph, assignment, odom_anchor)
    if scheme == "spanning-tree":
        return spanning_tree_init(graph, assignment)
    if scheme == "chordal":
        return chordal_init(graph)
    raise ValueError(f"unknown initialization {scheme!r}; expected one of {INIT_SCHEMES}")
