import csv
import io
import logging
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robo.evaluation import (
    ALIGNMENT,
    BYTES_PER_POSE,
    CSV_HEADER,
    IterationRecord,
    Tracker,
    aggregate_solution,
    align_rigid,
    centralized_reference,
    comm_bytes,
    global_cost,
    kilobits,
    records_to_csv,
    relative_suboptimality,
    rmse_ape,
)
from robo.graph import Estimates
from robo.initialization import chordal_init
from robo.partition import build_overlap_block, sequential_partition
from robo.residuals import edge_dist2
from robo.runtime import PoseUpdateMessage, run_synchronous
from robo.synthetic import SyntheticSpec, generate_synthetic

from conftest import random_assignment, random_estimates, random_graph, random_rotations
from helpers import jittered


def agent(owned, ids, est):
    return SimpleNamespace(owned=np.asarray(owned), ids=np.asarray(ids), estimates=est)


def msg(sender, receiver, n):
    return PoseUpdateMessage(sender, receiver, np.arange(n), np.zeros((n, 3, 3)), np.zeros((n, 3)), 0.0, 0.0)


class TestAggregate:
    def test_single_robot_verbatim(self, rng):
        est = random_estimates(rng, 12, 3)
        out = aggregate_solution([agent(np.arange(12), np.arange(12), est)])
        assert out.equals(est)

    def test_matches_owner_lookup_oracle(self, rng):
        for _ in range(50):
            n, N = int(rng.integers(4, 40)), int(rng.integers(1, 5))
            a = random_assignment(rng, n, min(N, n))
            copies = [random_estimates(rng, n, 2) for _ in range(a.n_robots)]
            states = []
            for r, blk in enumerate(a.blocks):
                extra = rng.choice(n, int(rng.integers(0, n)), replace=False)
                ids = np.union1d(blk, extra)
                states.append(agent(blk, ids, copies[r].take(ids)))
            out = aggregate_solution(states, n)
            for i in range(n):
                r = int(a.owner[i])
                assert np.array_equal(out.R[i], copies[r].R[i]) and np.array_equal(out.t[i], copies[r].t[i])

    def test_non_owned_copies_are_ignored(self, rng):
        g, _ = generate_synthetic(SyntheticSpec("ring", 60, seed=1))
        a = sequential_partition(g, 3)
        res = run_synchronous(g, a, 2, chordal_init(g), max_iters=2)
        before = aggregate_solution(res.agents, g.n_poses)
        for s in res.agents:
            foreign = ~np.isin(s.ids, s.owned)
            s.estimates.t[foreign] += 100.0
        assert aggregate_solution(res.agents, g.n_poses).equals(before)

    def test_errors(self, rng):
        est = random_estimates(rng, 4, 2)
        with pytest.raises(ValueError):
            aggregate_solution([agent([0, 1, 2], [0, 1], est.take([0, 1]))], 3)
        with pytest.raises(ValueError):
            aggregate_solution([agent([0, 1], [0, 1], est.take([0, 1]))], 3)


class TestGlobalCost:
    def test_zero_noise_ground_truth(self):
        for d in (2, 3):
            g, truth = generate_synthetic(SyntheticSpec("grid", 80, d=d, rot_noise_deg=0, trans_noise_m=0))
            assert global_cost(g, truth) <= 1e-20
            assert global_cost(g, truth, "geodesic") <= 1e-20

    def test_each_edge_counted_once_across_blocks(self, rng):
        for _ in range(20):
            n = int(rng.integers(8, 40))
            g = random_graph(rng, n, d=int(rng.choice([2, 3])), extra=n)
            a = random_assignment(rng, n, int(rng.integers(1, 5)))
            est = random_estimates(rng, n, g.dimension)
            arr = g.arrays
            d2 = edge_dist2("chordal", est.R[arr.src], est.t[arr.src], est.R[arr.dst], est.t[arr.dst],
                            arr.R, arr.t, arr.kappa, arr.tau)
            omega = int(rng.integers(0, 3))
            seen = {}
            for r in range(a.n_robots):
                blk = build_overlap_block(g, a, r, omega)
                for k in np.concatenate([blk.interior_edges, blk.prior_edges]):
                    seen[int(k)] = d2[k]
            assert sorted(seen) == list(range(g.n_edges))
            assert global_cost(g, est) == pytest.approx(0.5 * sum(seen.values()), rel=1e-12)

    def test_wrong_size(self, rng):
        g = random_graph(rng, 6)
        with pytest.raises(ValueError):
            global_cost(g, random_estimates(rng, 5, 2))


class TestSuboptimality:
    def test_examples(self):
        assert relative_suboptimality(5.0, 5.0) == 0.0
        assert relative_suboptimality(1.1 * 7.0, 7.0) == pytest.approx(0.1, rel=1e-12)
        assert relative_suboptimality(638.8, 638.6) == pytest.approx(3.1e-4, abs=5e-6)

    def test_degenerate_reference(self):
        with pytest.raises(ValueError):
            relative_suboptimality(1.0, 0.0)


class TestRmseApe:
    def test_identical_is_zero(self, rng):
        est = random_estimates(rng, 20, 3)
        assert rmse_ape(est, est) <= 1e-12

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), d=st.sampled_from([2, 3]))
    def test_rigid_invariance(self, seed, d):
        rng = np.random.default_rng(seed)
        ref = random_estimates(rng, 30, d)
        est = Estimates(ref.R.copy(), ref.t + rng.normal(0, 0.3, ref.t.shape))
        R = random_rotations(rng, 1, d)[0]
        moved = Estimates(R @ est.R, est.t @ R.T + rng.normal(0, 10, d))
        assert abs(rmse_ape(moved, ref) - rmse_ape(est, ref)) <= 1e-9

    def test_alignment_is_rotation(self, rng):
        p, q = rng.normal(size=(10, 3)), rng.normal(size=(10, 3))
        R, _ = align_rigid(p, q)
        assert np.allclose(R.T @ R, np.eye(3)) and np.linalg.det(R) == pytest.approx(1.0)

    @pytest.mark.parametrize("d", [2, 3])
    def test_isotropic_noise_monte_carlo(self, d, rng):
        n, sigma = 200, 0.25
        ref = random_estimates(rng, n, d)
        vals = []
        for _ in range(100):
            # E|noise|^2 = sigma^2; alignment absorbs d(d+1)/2 of n*d degrees of freedom
            noisy = Estimates(ref.R, ref.t + rng.normal(0, sigma / np.sqrt(d), ref.t.shape))
            vals.append(rmse_ape(noisy, ref))
        expected = sigma * np.sqrt(1 - (d + 1) / (2 * n))
        assert np.mean(vals) == pytest.approx(expected, rel=0.1)
        assert np.mean(vals) == pytest.approx(sigma, rel=0.1)

    def test_errors(self, rng):
        with pytest.raises(ValueError):
            rmse_ape(random_estimates(rng, 3, 3), random_estimates(rng, 3, 3))
        with pytest.raises(ValueError):
            rmse_ape(random_estimates(rng, 5, 2), random_estimates(rng, 6, 2))


class TestCommBytes:
    def test_single_pose(self):
        per_link, total = comm_bytes([msg(0, 1, 1)])
        assert total == BYTES_PER_POSE == 28
        assert kilobits(total) == pytest.approx(0.224, abs=1e-12)
        assert per_link == {(0, 1): 28}

    def test_table_arithmetic(self):
        assert kilobits(159 * BYTES_PER_POSE) == pytest.approx(35.616, abs=1e-12)
        assert round(kilobits(159 * BYTES_PER_POSE)) == 36
        assert kilobits(130 * BYTES_PER_POSE) == pytest.approx(29.12, abs=1e-12)
        assert round(kilobits(130 * BYTES_PER_POSE)) == 29

    def test_additive_and_undirected(self):
        msgs = [msg(0, 1, 3), msg(1, 0, 2), msg(2, 1, 5)]
        per_link, total = comm_bytes(msgs)
        assert per_link == {(0, 1): 5 * 28, (1, 2): 5 * 28}
        assert total == sum(comm_bytes([m])[1] for m in msgs) == 10 * 28
        assert comm_bytes([]) == ({}, 0)


class TestReference:
    def test_zero_noise(self):
        g, _ = generate_synthetic(SyntheticSpec("ring", 80, seed=3, rot_noise_deg=0, trans_noise_m=0))
        ref = centralized_reference(g)
        assert ref.optimal_cost <= 1e-10 and ref.converged

    def test_anchored_and_stationary(self):
        g, _ = generate_synthetic(SyntheticSpec("grid", 100, seed=4))
        ref = centralized_reference(g, "geodesic")
        assert np.array_equal(ref.estimates.R[0], np.eye(2)) and np.array_equal(ref.estimates.t[0], np.zeros(2))
        assert ref.converged and ref.metric == "geodesic"
        assert ref.optimal_cost == global_cost(g, ref.estimates, "geodesic")

    def test_multi_start_agreement(self, rng):
        for seed, shape, d in [(0, "ring", 2), (1, "grid", 2), (2, "grid", 3)]:
            g, truth = generate_synthetic(SyntheticSpec(shape, 60, seed=seed, d=d))
            f_star = centralized_reference(g).optimal_cost
            for _ in range(5):
                start = jittered(rng, truth, max_angle=0.3, sigma=0.3)
                f = centralized_reference(g, initial=start).optimal_cost
                assert f == pytest.approx(f_star, rel=1e-6)

    def test_local_minimality_spot_check(self, rng):
        g, _ = generate_synthetic(SyntheticSpec("ring", 80, seed=5, d=3))
        ref = centralized_reference(g)
        for _ in range(20):
            near = jittered(rng, ref.estimates, max_angle=1e-3, sigma=1e-3)
            assert global_cost(g, near) >= ref.optimal_cost

    def test_iteration_cap_is_flagged(self, caplog):
        g, _ = generate_synthetic(SyntheticSpec("grid", 100, seed=6))
        with caplog.at_level(logging.WARNING, logger="robo.evaluation"):
            ref = centralized_reference(g, initial=g.initial.left_multiply(g.initial.pose(5)), max_iterations=1)
        assert not ref.converged and ref.iterations == 1
        assert "cap" in caplog.text


def snapshot(k, est, messages=(), time=None):
    return SimpleNamespace(k=k, time=time, estimates=est, messages=list(messages))


class TestTracker:
    def setup_method(self):
        self.g, self.truth = generate_synthetic(SyntheticSpec("ring", 50, seed=7))
        self.ref = centralized_reference(self.g)

    def test_records_and_target(self):
        tr = Tracker(self.g, self.ref, target_subopt=1e-3)
        init = chordal_init(self.g)
        assert tr(snapshot(0, init, [msg(0, 1, 2)])) is (relative_suboptimality(global_cost(self.g, init), self.ref.optimal_cost) <= 1e-3)
        assert tr(snapshot(1, self.ref.estimates, [msg(0, 1, 3), msg(1, 2, 1)]))
        r0, r1 = tr.records
        assert r1.delta_rel == 0.0 and r1.rmse_ape <= 1e-12
        assert r0.total_bytes == 56 and r1.total_bytes == 112
        assert r1.cumulative_bytes == 168 and r1.max_link_bytes == 84
        assert tr.iterations_to(1e-3) == 1

    def test_time_to(self):
        tr = Tracker(self.g, self.ref)
        tr(snapshot(0, chordal_init(self.g), time=0.0))
        tr(snapshot(1, self.ref.estimates, time=0.37))
        assert tr.time_to(1e-9) == 0.37 and tr.time_to(-1.0) is None

    def test_zero_reference_reports_absolute_gap(self, caplog):
        ref = centralized_reference(self.g)
        ref.optimal_cost = 0.0
        with caplog.at_level(logging.WARNING, logger="robo.evaluation"):
            tr = Tracker(self.g, ref)
        tr(snapshot(0, self.truth))
        assert tr.records[0].delta_rel == global_cost(self.g, self.truth)
        assert "absolute" in caplog.text

    def test_csv_delta_is_recomputable_bit_exactly(self):
        g, truth = self.g, self.truth
        tr = Tracker(g, self.ref)
        res = run_synchronous(g, sequential_partition(g, 3), 1, chordal_init(g), max_iters=5, callbacks=tr)
        assert len(res.history) == len(tr.records) == 6
        text = records_to_csv(tr.records, {"optimal_cost": repr(self.ref.optimal_cost), "alignment": ALIGNMENT})
        lines = text.splitlines()
        assert lines[0].startswith("# ")
        meta = dict(kv.split("=", 1) for kv in lines[0][2:].split())
        f_star = float(meta["optimal_cost"])
        rows = list(csv.DictReader(io.StringIO("\n".join(lines[1:]))))
        assert tuple(rows[0]) == CSV_HEADER
        for row, rec in zip(rows, tr.records):
            cost = float(row["cost"])
            assert (cost - f_star) / f_star == float(row["delta_rel"]) == rec.delta_rel
            assert int(row["total_bytes"]) == rec.total_bytes
            assert row["time_s"] == ""


def test_iteration_record_max_link():
    rec = IterationRecord(0, None, 1.0, 1.0, 0.0, 0.0)
    assert rec.max_link_bytes == 0
