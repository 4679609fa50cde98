"""Global metrics: aggregated cost, relative suboptimality, APE, traffic, reference."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .geometry import inverse
from .graph import Estimates, PoseGraph
from .initialization import chordal_init
from .residuals import edge_dist2
from .solver import SolverConfig, Subproblem, lm_step, riemannian_gradient

log = logging.getLogger(__name__)

FLOATS_PER_POSE = 7
BYTES_PER_FLOAT = 4
BYTES_PER_POSE = FLOATS_PER_POSE * BYTES_PER_FLOAT
CSV_HEADER = ("k", "time_s", "cost", "delta_rel", "rmse_ape", "total_bytes", "max_link_bytes")
ALIGNMENT = "rigid-positions"


def aggregate_solution(states: Sequence, n_poses: int | None = None) -> Estimates:
    """Assemble the global estimate, taking every pose from its owner.

    ``states`` are objects exposing ``owned`` (global ids), ``ids`` (global
    ids of their local cache) and ``estimates`` (aligned with ``ids``).
    """
    n = n_poses if n_poses is not None else sum(len(s.owned) for s in states)
    d = states[0].estimates.dim
    out = Estimates(np.full((n, d, d), np.nan), np.full((n, d), np.nan))
    filled = np.zeros(n, dtype=bool)
    for s in states:
        local = np.searchsorted(s.ids, s.owned)
        if np.any(local >= len(s.ids)) or np.any(s.ids[np.minimum(local, len(s.ids) - 1)] != s.owned):
            raise ValueError("agent cache is missing an owned pose")
        out.R[s.owned] = s.estimates.R[local]
        out.t[s.owned] = s.estimates.t[local]
        filled[s.owned] = True
    if not filled.all():
        raise ValueError(f"poses {np.flatnonzero(~filled)[:10].tolist()} have no owner")
    return out


def global_cost(graph: PoseGraph, estimates: Estimates, metric: str = "chordal") -> float:
    """Half the sum of squared measurement distances over every edge."""
    if len(estimates) != graph.n_poses:
        raise ValueError(f"estimates cover {len(estimates)} poses, graph has {graph.n_poses}")
    a = graph.arrays
    if len(a) == 0:
        return 0.0
    d2 = edge_dist2(metric, estimates.R[a.src], estimates.t[a.src],
                    estimates.R[a.dst], estimates.t[a.dst], a.R, a.t, a.kappa, a.tau)
    return 0.5 * float(d2.sum())


def relative_suboptimality(cost: float, optimal_cost: float) -> float:
    if not optimal_cost > 0:
        raise ValueError("optimal cost must be positive for a relative gap")
    return (cost - optimal_cost) / optimal_cost


def align_rigid(points: np.ndarray, reference: np.ndarray):
    """Rotation ``R`` and offset ``t`` minimizing ``sum |R p + t - q|^2`` (no scale)."""
    mu_p, mu_q = points.mean(axis=0), reference.mean(axis=0)
    C = (reference - mu_q).T @ (points - mu_p)
    U, _, Vt = np.linalg.svd(C)
    S = np.eye(points.shape[1])
    S[-1, -1] = np.sign(np.linalg.det(U @ Vt)) or 1.0
    R = U @ S @ Vt
    return R, mu_q - R @ mu_p


def rmse_ape(estimates: Estimates, reference: Estimates) -> float:
    """RMSE of positions after rigid alignment of ``estimates`` onto ``reference``."""
    if len(estimates) != len(reference):
        raise ValueError("estimate and reference cover different poses")
    d = estimates.dim
    if len(estimates) < d + 1:
        raise ValueError(f"need at least {d + 1} poses to align in {d}D")
    R, t = align_rigid(estimates.t, reference.t)
    err = estimates.t @ R.T + t - reference.t
    return float(np.sqrt(np.mean(np.einsum("ij,ij->i", err, err))))


def link_key(a: int, b: int) -> tuple[int, int]:
    return (a, b) if a < b else (b, a)


def comm_bytes(messages: Iterable) -> tuple[dict[tuple[int, int], int], int]:
    """Bytes per undirected robot pair and in total; each pose costs seven float32."""
    per_link: dict[tuple[int, int], int] = {}
    total = 0
    for msg in messages:
        nbytes = len(msg.payload_ids) * BYTES_PER_POSE
        key = link_key(msg.sender, msg.receiver)
        per_link[key] = per_link.get(key, 0) + nbytes
        total += nbytes
    return per_link, total


def kilobits(nbytes: float) -> float:
    return nbytes * 8 / 1000.0


@dataclass
class ReferenceSolution:
    estimates: Estimates
    optimal_cost: float
    metric: str
    gradient_norm: float
    iterations: int
    converged: bool


def centralized_reference(
    graph: PoseGraph,
    metric: str = "chordal",
    initial: Estimates | None = None,
    max_iterations: int = 500,
    gradient_tol: float = 1e-9,
    rel_change_tol: float = 1e-12,
) -> ReferenceSolution:
    """Chordal initialization followed by full-graph LM until stationary.

    Stops when the gradient norm or the relative cost change falls below its
    tolerance, or when LM can no longer find a decreasing step. The result is
    re-anchored so pose 0 is the identity.
    """
    spb = Subproblem.full(graph, metric)
    cfg = SolverConfig(max_inner_iterations=20, gradient_tolerance=1e-14)
    est = chordal_init(graph) if initial is None else initial.copy()
    damping = None
    cost = global_cost(graph, est, metric)
    converged = False
    it = 0
    while it < max_iterations:
        gnorm = float(np.linalg.norm(riemannian_gradient(spb, est)))
        if gnorm <= gradient_tol:
            converged = True
            break
        step = lm_step(spb, est, cfg, damping)
        it += 1
        damping = step.damping
        if not step.accepted:
            converged = True
            break
        change = (cost - step.cost) / max(cost, 1e-300)
        est, cost = step.estimates, step.cost
        if change <= rel_change_tol:
            converged = True
            break
    gnorm = float(np.linalg.norm(riemannian_gradient(spb, est)))
    if not converged:
        log.warning("reference solve hit the %d-iteration cap (gradient %.3g)", max_iterations, gnorm)
    est = est.left_multiply(inverse(est.pose(0)))
    est.R[0] = np.eye(graph.dimension)
    est.t[0] = 0.0
    return ReferenceSolution(est, global_cost(graph, est, metric), metric, gnorm, it, converged)


@dataclass
class IterationRecord:
    k: int
    time_s: float | None
    cost: float
    optimal_cost: float
    delta_rel: float
    rmse_ape: float
    bytes_per_link: dict[tuple[int, int], int] = field(default_factory=dict)
    total_bytes: int = 0
    cumulative_bytes: int = 0

    @property
    def max_link_bytes(self) -> int:
        return max(self.bytes_per_link.values(), default=0)


class Tracker:
    """Runtime callback that turns snapshots into :class:`IterationRecord` rows.

    Returning ``True`` from :meth:`__call__` asks the runtime to stop, which
    happens once ``target_subopt`` is reached (if set).
    """

    def __init__(self, graph: PoseGraph, reference: ReferenceSolution | None,
                 target_subopt: float | None = None, compute_ape: bool = True):
        self.graph = graph
        self.reference = reference
        self.metric = reference.metric if reference else "chordal"
        self.target = target_subopt
        self.compute_ape = compute_ape and reference is not None
        self.records: list[IterationRecord] = []
        self._cumulative = 0
        self.absolute_gap = reference is not None and not reference.optimal_cost > 0
        if self.absolute_gap:
            log.warning("optimal cost is zero; delta_rel column holds the absolute gap")

    def __call__(self, snapshot) -> bool:
        cost = global_cost(self.graph, snapshot.estimates, self.metric)
        f_star = self.reference.optimal_cost if self.reference else float("nan")
        if self.reference is None:
            delta = float("nan")
        elif self.absolute_gap:
            delta = cost - f_star
        else:
            delta = relative_suboptimality(cost, f_star)
        ape = rmse_ape(snapshot.estimates, self.reference.estimates) if self.compute_ape else float("nan")
        per_link, total = comm_bytes(snapshot.messages)
        self._cumulative += total
        self.records.append(IterationRecord(
            snapshot.k, snapshot.time, cost, f_star, delta, ape, per_link, total, self._cumulative,
        ))
        return self.target is not None and delta <= self.target

    def iterations_to(self, threshold: float) -> int | None:
        for rec in self.records:
            if rec.delta_rel <= threshold:
                return rec.k
        return None

    def time_to(self, threshold: float) -> float | None:
        for rec in self.records:
            if rec.delta_rel <= threshold:
                return rec.time_s
        return None


def _num(x) -> str:
    if x is None:
        return ""
    return repr(float(x)) if isinstance(x, float) else str(x)


def records_to_csv(records: Sequence[IterationRecord], metadata: Mapping[str, object] | None = None) -> str:
    out = io.StringIO()
    if metadata:
        out.write("# " + " ".join(f"{k}={v}" for k, v in metadata.items()) + "\n")
    w = csv.writer(out, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in records:
        w.writerow([r.k, _num(r.time_s), _num(r.cost), _num(r.delta_rel), _num(r.rmse_ape),
                    r.total_bytes, r.max_link_bytes])
    return out.getvalue()
