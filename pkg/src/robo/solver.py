"""Per-robot subproblem: cost, gradient and a damped Gauss-Newton (LM) step.

A :class:`Subproblem` is expressed in *local* indexing: ``ids`` lists the
global pose ids the robot holds (interior then boundary, merged in ascending
order) and every estimate passed to the functions below is aligned with it.
Interior poses are the variables; boundary poses stay fixed and enter the
cost only through prior edges.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import exp_batch, rot_dim
from .graph import EdgeArrays, Estimates, PoseGraph
from .partition import OverlapBlock
from .residuals import _check_metric, edge_dist2, edge_linearization

MIN_DAMPING = 1e-12
MAX_DAMPING = 1e12
# below this relative predicted decrease a step cannot beat floating-point noise
NEGLIGIBLE_DECREASE = 1e-14


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    """LM settings. Damping scales the Hessian diagonal (Marquardt style)."""

    initial_damping: float = 1e-4
    damping_up: float = 10.0
    damping_down: float = 3.0
    max_inner_iterations: int = 10
    gradient_tolerance: float = 1e-10

    def __post_init__(self):
        if not self.initial_damping > 0 or not self.gradient_tolerance > 0:
            raise ValueError("damping and gradient tolerance must be positive")
        if not (self.damping_up > 1 and self.damping_down > 1):
            raise ValueError("damping factors must exceed 1")
        if self.max_inner_iterations < 1:
            raise ValueError("max_inner_iterations must be at least 1")


class StepResult(NamedTuple):
    estimates: Estimates
    accepted: bool
    damping: float
    cost: float


class Subproblem:
    """Compiled form of one robot's block: local edge arrays plus sparsity layout."""

    def __init__(self, ids, variable_mask, edges: EdgeArrays, kinds, metric: str, dim: int):
        _check_metric(metric)
        self.ids = np.asarray(ids, dtype=np.intp)
        self.variable_mask = np.asarray(variable_mask, dtype=bool)
        self.edges = edges
        self.kinds = np.asarray(kinds, dtype=np.int8)  # 0 interior, 1 outgoing, 2 incoming
        self.metric = metric
        self.dim = dim
        self.dof = rot_dim(dim) + dim

        var_pos = np.full(self.ids.size, -1, dtype=np.intp)
        var_pos[self.variable_mask] = np.arange(int(self.variable_mask.sum()))
        self.var_pos = var_pos
        self.n_var = int(self.variable_mask.sum())
        vi, vj = var_pos[edges.src], var_pos[edges.dst]
        if np.any((vi < 0) & (vj < 0)):
            raise SolverError("edge with both endpoints fixed")
        self._vi, self._vj = vi, vj
        self._build_pattern()

    @classmethod
    def from_block(cls, graph: PoseGraph, block: OverlapBlock, metric: str) -> "Subproblem":
        ids = block.inflated
        local = np.full(graph.n_poses, -1, dtype=np.intp)
        local[ids] = np.arange(ids.size)
        edge_idx = np.concatenate(
            [block.interior_edges, block.outgoing_prior_edges, block.incoming_prior_edges]
        )
        kinds = np.concatenate([
            np.zeros(block.interior_edges.size), np.ones(block.outgoing_prior_edges.size),
            np.full(block.incoming_prior_edges.size, 2),
        ])
        arr = graph.arrays.subset(edge_idx)
        arr = EdgeArrays(local[arr.src], local[arr.dst], arr.R, arr.t, arr.kappa, arr.tau)
        mask = np.isin(ids, block.interior)
        return cls(ids, mask, arr, kinds, metric, graph.dimension)

    @classmethod
    def full(cls, graph: PoseGraph, metric: str) -> "Subproblem":
        """The centralized problem: every pose is a variable, no priors."""
        n = graph.n_poses
        return cls(np.arange(n), np.ones(n, bool), graph.arrays,
                   np.zeros(graph.n_edges), metric, graph.dimension)

    @property
    def variables(self) -> np.ndarray:
        return self.ids[self.variable_mask]

    @property
    def fixed_ids(self) -> np.ndarray:
        return self.ids[~self.variable_mask]

    def gather(self, global_estimates: Estimates) -> Estimates:
        return global_estimates.take(self.ids)

    def _build_pattern(self):
        p, vi, vj = self.dof, self._vi, self._vj
        # block order per edge: (i,i), (j,j), (i,j), (j,i); -1 marks an absent block
        br = np.stack([vi, vj, vi, vj], axis=1)
        bc = np.stack([vi, vj, vj, vi], axis=1)
        present = (br >= 0) & (bc >= 0)
        shape = br.shape + (p, p)
        off = np.arange(p)
        rows = np.broadcast_to(br[:, :, None, None] * p + off[:, None], shape)
        cols = np.broadcast_to(bc[:, :, None, None] * p + off[None, :], shape)
        valid = np.broadcast_to(present[:, :, None, None], shape)
        # diagonal blocks always exist so damping never meets a missing slot
        n = self.n_var
        base = np.arange(n)[:, None, None] * p
        diag_r = np.broadcast_to(base + off[:, None], (n, p, p))
        diag_c = np.broadcast_to(base + off[None, :], (n, p, p))
        all_r = np.concatenate([rows[valid], diag_r.ravel()])
        all_c = np.concatenate([cols[valid], diag_c.ravel()])
        N = n * p
        keys = all_r.astype(np.int64) * N + all_c
        uniq, inverse = np.unique(keys, return_inverse=True)
        self._valid = valid
        self._n_entries = int(valid.sum())
        self._slots = inverse[: self._n_entries]
        self._nnz = uniq.size
        u_rows = uniq // N
        self._indices = (uniq % N).astype(np.int32)
        self._indptr = np.searchsorted(u_rows, np.arange(N + 1)).astype(np.int32)
        self._diag_slots = np.flatnonzero(u_rows == (uniq % N))
        self._size = N

    def block_pattern(self) -> np.ndarray:
        """Boolean ``(n_var, n_var)`` map of structurally present Hessian blocks."""
        p = self.dof
        out = np.zeros((self.n_var, self.n_var), dtype=bool)
        rows = np.repeat(np.arange(self._size), np.diff(self._indptr))
        out[rows // p, self._indices // p] = True
        return out


def _endpoint_arrays(spb: Subproblem, est: Estimates):
    e = spb.edges
    return (est.R[e.src], est.t[e.src], est.R[e.dst], est.t[e.dst], e.R, e.t, e.kappa, e.tau)


def _check_estimates(spb: Subproblem, est: Estimates) -> None:
    if len(est) != spb.ids.size:
        raise SolverError(
            f"estimates cover {len(est)} poses, subproblem needs {spb.ids.size}"
        )


def evaluate_block_cost(spb: Subproblem, est: Estimates) -> float:
    """Half the sum of squared distances over interior and prior edges."""
    _check_estimates(spb, est)
    if len(spb.edges) == 0:
        return 0.0
    return 0.5 * float(np.sum(edge_dist2(spb.metric, *_endpoint_arrays(spb, est))))


def _linearize(spb: Subproblem, est: Estimates):
    r, Ji, Jj = edge_linearization(spb.metric, *_endpoint_arrays(spb, est))
    # fixed endpoints contribute no columns
    Ji[spb._vi < 0] = 0.0
    Jj[spb._vj < 0] = 0.0
    return r, Ji, Jj


def riemannian_gradient(spb: Subproblem, est: Estimates) -> np.ndarray:
    """Gradient of :func:`evaluate_block_cost`, shape ``(n_var, dof)``, rotation first."""
    _check_estimates(spb, est)
    r, Ji, Jj = _linearize(spb, est)
    return _gradient(spb, r, Ji, Jj)


def _gradient(spb, r, Ji, Jj) -> np.ndarray:
    p = spb.dof
    gi = (np.swapaxes(Ji, 1, 2) @ r[:, :, None])[:, :, 0]
    gj = (np.swapaxes(Jj, 1, 2) @ r[:, :, None])[:, :, 0]
    g = np.zeros((spb.n_var, p))
    mi, mj = spb._vi >= 0, spb._vj >= 0
    np.add.at(g, spb._vi[mi], gi[mi])
    np.add.at(g, spb._vj[mj], gj[mj])
    return g


def normal_equations(spb: Subproblem, est: Estimates):
    """Return ``(H, g, cost)`` with ``H = J^T J`` as a CSC matrix and ``g = J^T r``."""
    _check_estimates(spb, est)
    r, Ji, Jj = _linearize(spb, est)
    H = _hessian_data(spb, Ji, Jj)
    g = _gradient(spb, r, Ji, Jj).ravel()
    cost = 0.5 * float(np.einsum("ij,ij->", r, r))
    return _to_csc(spb, H), g, cost


def _hessian_data(spb: Subproblem, Ji, Jj) -> np.ndarray:
    JiT = np.swapaxes(Ji, 1, 2)
    JjT = np.swapaxes(Jj, 1, 2)
    blocks = np.stack([JiT @ Ji, JjT @ Jj, JiT @ Jj, JjT @ Ji], axis=1)
    return np.bincount(spb._slots, weights=blocks[spb._valid], minlength=spb._nnz)


def _to_csc(spb: Subproblem, data: np.ndarray) -> sp.csc_matrix:
    # row-major layout of a symmetric matrix doubles as its column-major layout
    return sp.csc_matrix((data, spb._indices, spb._indptr), shape=(spb._size, spb._size))


def retract(spb: Subproblem, est: Estimates, step: np.ndarray) -> Estimates:
    """Move the variables along ``step`` (shape ``(n_var, dof)``)."""
    rd = rot_dim(spb.dim)
    step = np.asarray(step).reshape(spb.n_var, spb.dof)
    out = est.copy()
    idx = np.flatnonzero(spb.variable_mask)
    out.R[idx] = est.R[idx] @ exp_batch(step[:, :rd])
    out.t[idx] = est.t[idx] + step[:, rd:]
    return out


def _solve(spb: Subproblem, data: np.ndarray, g: np.ndarray, damping: float):
    A = data.copy()
    diag = A[spb._diag_slots]
    floor = 1e-9 * max(float(diag.mean()), 1e-300)
    A[spb._diag_slots] = diag + damping * np.maximum(diag, floor)
    try:
        lu = spla.splu(
            _to_csc(spb, A), permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
            options={"SymmetricMode": True},
        )
        dx = lu.solve(-g)
    except RuntimeError:
        return None
    if not np.all(np.isfinite(dx)):
        return None
    return dx


def lm_step(spb: Subproblem, est: Estimates, cfg: SolverConfig, damping: float | None = None) -> StepResult:
    """One Levenberg-Marquardt step.

    The step is accepted only if the block cost strictly decreases; after a
    rejection the damping grows and the step is retried, at most
    ``cfg.max_inner_iterations`` times. A rejected call returns ``est`` itself.
    """
    _check_estimates(spb, est)
    lam = cfg.initial_damping if damping is None else damping
    if spb.n_var == 0 or len(spb.edges) == 0:
        return StepResult(est, False, lam, evaluate_block_cost(spb, est))
    r, Ji, Jj = _linearize(spb, est)
    g = _gradient(spb, r, Ji, Jj).ravel()
    cost = 0.5 * float(np.einsum("ij,ij->", r, r))
    if np.max(np.abs(g)) <= cfg.gradient_tolerance:
        return StepResult(est, False, lam, cost)
    data = _hessian_data(spb, Ji, Jj)
    for _ in range(cfg.max_inner_iterations):
        dx = _solve(spb, data, g, lam)
        if dx is not None:
            predicted = -(g @ dx) - 0.5 * (dx @ (_to_csc(spb, data) @ dx))
            if predicted <= NEGLIGIBLE_DECREASE * cost:
                return StepResult(est, False, lam, cost)
            cand = retract(spb, est, dx)
            new_cost = evaluate_block_cost(spb, cand)
            if new_cost < cost:
                return StepResult(cand, True, max(lam / cfg.damping_down, MIN_DAMPING), new_cost)
        lam = min(lam * cfg.damping_up, MAX_DAMPING)
    return StepResult(est, False, lam, cost)


def solve_subproblem(spb: Subproblem, est: Estimates, cfg: SolverConfig, damping: float | None = None) -> StepResult:
    """Approximate subproblem solve used by every ROBO iteration: a single LM step."""
    return lm_step(spb, est, cfg, damping)
