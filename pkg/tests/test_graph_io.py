import logging

import numpy as np
import pytest

from robo.evaluation import centralized_reference, global_cost
from robo.g2o import G2oFormatError, extract_precisions, parse_g2o, read_g2o, save_g2o, write_g2o
from robo.geometry import Pose
from robo.graph import Estimates, GraphError, PoseGraph, RelativeMeasurement
from robo.initialization import odometry_init
from robo.partition import sequential_partition
from robo.residuals import edge_dist2
from robo.synthetic import SyntheticSpec, generate_synthetic, parse_synthetic_spec, synthetic_suite

from conftest import random_graph

SMALL_2D = "VERTEX_SE2 0 0 0 0\nVERTEX_SE2 1 1 0 0\nEDGE_SE2 0 1 1 0 0 1 0 0 1 0 1\n"


def assert_graphs_close(a: PoseGraph, b: PoseGraph, atol):
    assert a.dimension == b.dimension and a.n_poses == b.n_poses and a.n_edges == b.n_edges
    assert np.allclose(a.initial.R, b.initial.R, atol=atol)
    assert np.allclose(a.initial.t, b.initial.t, atol=atol)
    for ea, eb in zip(a.edges, b.edges):
        assert (ea.from_id, ea.to_id) == (eb.from_id, eb.to_id)
        assert np.allclose(ea.transform.rotation, eb.transform.rotation, atol=atol)
        assert np.allclose(ea.transform.translation, eb.transform.translation, atol=atol)
        assert ea.kappa == pytest.approx(eb.kappa, rel=atol)
        assert ea.tau == pytest.approx(eb.tau, rel=atol)


class TestModel:
    def test_measurement_validation(self):
        with pytest.raises(GraphError):
            RelativeMeasurement(1, 1, Pose.identity(2), 1.0, 1.0)
        with pytest.raises(GraphError):
            RelativeMeasurement(0, 1, Pose.identity(2), 0.0, 1.0)
        with pytest.raises(GraphError):
            RelativeMeasurement(0, 1, Pose.identity(2), 1.0, -2.0)

    def test_graph_must_be_connected(self):
        e = RelativeMeasurement(0, 1, Pose.identity(2), 1.0, 1.0)
        with pytest.raises(GraphError, match="connected"):
            PoseGraph(2, Estimates.identity(3, 2), (e,))

    def test_graph_rejects_unknown_endpoint(self):
        e = RelativeMeasurement(0, 5, Pose.identity(2), 1.0, 1.0)
        with pytest.raises(GraphError):
            PoseGraph(2, Estimates.identity(2, 2), (e,))

    def test_adjacency_is_undirected(self, rng):
        g = random_graph(rng, 20)
        for u, nbrs in enumerate(g.adjacency):
            for v in nbrs:
                assert u in g.adjacency[v]

    def test_estimates_left_multiply(self, rng):
        g = random_graph(rng, 10, d=3)
        G = g.edges[0].transform
        moved = g.initial.left_multiply(G)
        for i in range(10):
            assert np.allclose((G @ g.initial.pose(i)).matrix(), moved.pose(i).matrix())


class TestPrecisions:
    def test_examples(self):
        assert extract_precisions(np.eye(3)) == (1.0, 1.0)
        assert extract_precisions(np.diag([4.0, 4.0, 9.0])) == (9.0, 4.0)
        assert extract_precisions(np.diag([2.0, 2, 2, 8, 8, 8])) == (8.0, 2.0)

    def test_ignores_off_diagonal_coupling(self):
        info = np.diag([2.0, 2, 2, 8, 8, 8])
        info[0, 4] = info[4, 0] = 0.5
        info[1, 2] = info[2, 1] = -0.3
        assert extract_precisions(info) == (8.0, 2.0)

    def test_rejects_indefinite(self):
        with pytest.raises(GraphError):
            extract_precisions(np.diag([1.0, -1.0, 1.0]))
        with pytest.raises(GraphError):
            extract_precisions(np.array([[1.0, 2, 0], [0, 1, 0], [0, 0, 1]]))


class TestParse:
    def test_small_example(self):
        g = parse_g2o(SMALL_2D)
        assert g.n_poses == 2 and g.n_edges == 1
        assert np.array_equal(g.edges[0].transform.translation, [1.0, 0.0])
        assert (g.edges[0].kappa, g.edges[0].tau) == (1.0, 1.0)

    def test_empty_stream(self):
        with pytest.raises(G2oFormatError, match="no vertices"):
            parse_g2o("")
        with pytest.raises(G2oFormatError, match="no vertices"):
            parse_g2o("# only a comment\n")

    def test_bad_field_count_reports_line(self):
        with pytest.raises(G2oFormatError) as exc:
            parse_g2o("VERTEX_SE2 0 0 0 0\nEDGE_SE2 0 1 1 0 0 1 0 0\n")
        assert exc.value.line == 2

    def test_mixed_dimensions(self):
        text = "VERTEX_SE2 0 0 0 0\nVERTEX_SE3:QUAT 1 0 0 0 0 0 0 1\n"
        with pytest.raises(G2oFormatError, match="mixed"):
            parse_g2o(text)

    def test_non_pd_information(self):
        with pytest.raises(G2oFormatError) as exc:
            parse_g2o("VERTEX_SE2 0 0 0 0\nEDGE_SE2 0 1 1 0 0 1 0 0 -1 0 1\n")
        assert exc.value.line == 2

    def test_unknown_records_warn(self, caplog):
        with caplog.at_level(logging.WARNING):
            g = parse_g2o("FIX 0\n" + SMALL_2D + "VERTEX_XY 7 1 2\n")
        assert g.n_poses == 2
        assert sum("unsupported" in r.message for r in caplog.records) == 2

    def test_dense_remap_and_missing_vertices(self):
        text = ("VERTEX_SE2 10 1 2 0.5\n"
                "EDGE_SE2 10 30 1 0 0 1 0 0 1 0 1\n"
                "EDGE_SE2 30 20 1 0 0 1 0 0 1 0 1\n")
        g = parse_g2o(text)
        assert g.n_poses == 3
        assert [(e.from_id, e.to_id) for e in g.edges] == [(0, 2), (2, 1)]
        assert np.array_equal(g.initial.t[0], [1.0, 2.0])
        assert np.array_equal(g.initial.t[1], [0.0, 0.0])
        assert np.array_equal(g.initial.R[2], np.eye(2))

    def test_se3_translation_first_information(self):
        info = np.diag([2.0, 2, 2, 8, 8, 8])[np.triu_indices(6)]
        text = ("VERTEX_SE3:QUAT 0 0 0 0 0 0 0 1\n"
                "EDGE_SE3:QUAT 0 1 1 2 3 0 0 0.7071067811865476 0.7071067811865476 "
                + " ".join(map(str, info)) + "\n")
        g = parse_g2o(text)
        e = g.edges[0]
        assert (e.kappa, e.tau) == (8.0, 2.0)
        assert np.allclose(e.transform.rotation, [[0, -1, 0], [1, 0, 0], [0, 0, 1]], atol=1e-12)

    def test_parse_accepts_line_iterables(self):
        assert parse_g2o(SMALL_2D.splitlines()).n_edges == 1


class TestWrite:
    def test_single_identity_vertex(self):
        g = PoseGraph(2, Estimates.identity(1, 2), ())
        assert write_g2o(g) == "VERTEX_SE2 0 0 0 0\n"

    def test_integer_fixture_round_trip_exact(self):
        g = parse_g2o(SMALL_2D)
        again = parse_g2o(write_g2o(g))
        assert_graphs_close(g, again, atol=0)
        assert write_g2o(again) == write_g2o(g)

    @pytest.mark.parametrize("d", [2, 3])
    def test_random_round_trip(self, rng, d):
        g = random_graph(rng, 30, d=d)
        assert_graphs_close(g, parse_g2o(write_g2o(g)), atol=1e-10)

    def test_file_round_trip(self, rng, tmp_path):
        g = random_graph(rng, 12, d=3)
        path = tmp_path / "g.g2o"
        save_g2o(path, g)
        assert_graphs_close(g, read_g2o(path), atol=1e-10)

    def test_writes_enough_digits(self):
        e = RelativeMeasurement(0, 1, Pose(np.eye(2), [1 / 3, 2 / 3]), 1.0, 1.0)
        line = write_g2o(PoseGraph(2, Estimates.identity(2, 2), (e,))).splitlines()[-1]
        assert "0.3333333333333333" in line


class TestSynthetic:
    def test_zero_noise_chain_has_zero_residuals(self):
        g, truth = generate_synthetic(SyntheticSpec("chain", 10, rot_noise_deg=0, trans_noise_m=0))
        a = g.arrays
        d2 = edge_dist2("chordal", truth.R[a.src], truth.t[a.src], truth.R[a.dst], truth.t[a.dst],
                        a.R, a.t, a.kappa, a.tau)
        assert np.max(d2) <= 1e-24
        assert all(e.kappa == 1.0 and e.tau == 1.0 for e in g.edges)

    @pytest.mark.parametrize("shape", ["chain", "ring", "grid"])
    @pytest.mark.parametrize("d", [2, 3])
    def test_determinism(self, shape, d):
        spec = SyntheticSpec(shape, 80, d=d, seed=4)
        a, b = generate_synthetic(spec)[0], generate_synthetic(spec)[0]
        assert write_g2o(a) == write_g2o(b)
        assert a.n_poses == 80

    def test_precisions_follow_noise(self):
        g, _ = generate_synthetic(SyntheticSpec("ring", 40, rot_noise_deg=2.0, trans_noise_m=0.1))
        assert g.edges[0].kappa == pytest.approx(1 / np.deg2rad(2.0) ** 2)
        assert g.edges[0].tau == pytest.approx(100.0)

    def test_loop_closures_present(self):
        g, _ = generate_synthetic(SyntheticSpec("ring", 100, seed=1))
        assert g.n_edges > 99
        assert any(abs(e.to_id - e.from_id) > 1 for e in g.edges)

    def test_noise_statistics(self):
        g, truth = generate_synthetic(SyntheticSpec("grid", 3000, rot_noise_deg=2.0, trans_noise_m=0.1, seed=2))
        a = g.arrays
        rel = truth.t[a.dst] - truth.t[a.src]
        err = a.t - (np.swapaxes(truth.R[a.src], 1, 2) @ rel[:, :, None])[:, :, 0]
        assert np.std(err) == pytest.approx(0.1, rel=0.05)

    def test_ring_centralized_beats_odometry(self):
        g, _ = generate_synthetic(SyntheticSpec("ring", 50, rot_noise_deg=2.0, trans_noise_m=0.05, seed=3))
        odo = odometry_init(g, sequential_partition(g, 1))
        ref = centralized_reference(g, "chordal")
        assert ref.optimal_cost < global_cost(g, odo, "chordal")

    def test_spec_parsing(self):
        s = parse_synthetic_spec("grid:300:d=3:rot=2:trans=0.1:lc=0.2", seed=9)
        assert s == SyntheticSpec("grid", 300, 3, 2.0, 0.1, 0.2, 9)
        assert parse_synthetic_spec("ring:50:seed=3", seed=9).seed == 3
        for bad in ("ring", "ring:x", "blob:20", "ring:20:q=1", "ring:1"):
            with pytest.raises(ValueError):
                parse_synthetic_spec(bad)

    def test_suite_is_seeded(self):
        a, b = synthetic_suite(6, seed=1), synthetic_suite(6, seed=1)
        assert a == b
        assert [s.shape for s in a] == ["ring", "grid"] * 3
        assert all(150 <= s.n_poses <= 300 for s in a)
