"""Problem builders shared by solver, runtime and acceptance tests."""

import numpy as np

from robo.geometry import Pose, exp_batch
from robo.graph import Estimates, PoseGraph, RelativeMeasurement
from robo.partition import build_overlap_block
from robo.solver import Subproblem, retract

from conftest import random_assignment, random_graph


def perturbed_graph(rng, n, d, extra=None, max_angle=2.0):
    """Random topology; each measurement is the true relative pose times a bounded error.

    Keeping residual angles below ``max_angle`` avoids the non-smooth log at pi.
    """
    base = random_graph(rng, n, d, extra)
    truth = base.initial
    rd = 1 if d == 2 else 3
    edges = []
    for e in base.edges:
        i, j = e.from_id, e.to_id
        Rm = truth.R[i].T @ truth.R[j]
        tm = truth.R[i].T @ (truth.t[j] - truth.t[i])
        v = rng.normal(size=rd)
        v *= rng.uniform(0, max_angle / 2) / max(np.linalg.norm(v), 1e-12)
        edges.append(RelativeMeasurement(
            i, j, Pose(Rm @ exp_batch(v[None])[0], tm + rng.normal(0, 1, d)), e.kappa, e.tau))
    graph = PoseGraph(d, truth, tuple(edges))
    return graph, truth


def jittered(rng, est, max_angle=0.5, sigma=0.5):
    rd = 1 if est.dim == 2 else 3
    v = rng.normal(size=(len(est), rd))
    v *= rng.uniform(0, max_angle / 2, (len(est), 1)) / np.maximum(np.linalg.norm(v, axis=1, keepdims=True), 1e-12)
    return Estimates(est.R @ exp_batch(v), est.t + rng.normal(0, sigma, est.t.shape))


def random_block_problem(rng, d, metric, n=None, omega=None, n_robots=None):
    """Random subproblem whose estimates stay near-consistent with the measurements."""
    n = n or int(rng.integers(6, 25))
    graph, truth = perturbed_graph(rng, n, d, extra=int(rng.integers(0, n)))
    n_robots = n_robots or int(rng.integers(2, 5))
    a = random_assignment(rng, n, n_robots)
    omega = int(rng.integers(0, 3)) if omega is None else omega
    blk = build_overlap_block(graph, a, int(rng.integers(n_robots)), omega)
    spb = Subproblem.from_block(graph, blk, metric)
    est = jittered(rng, truth).take(spb.ids)
    return graph, blk, spb, est


def numeric_gradient(spb, est, cost_fn, h=1e-6):
    out = np.zeros((spb.n_var, spb.dof))
    for v in range(spb.n_var):
        for k in range(spb.dof):
            step = np.zeros((spb.n_var, spb.dof))
            step[v, k] = h
            out[v, k] = (cost_fn(spb, retract(spb, est, step)) - cost_fn(spb, retract(spb, est, -step))) / (2 * h)
    return out
