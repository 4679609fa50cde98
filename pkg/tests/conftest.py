import numpy as np
import pytest

from robo.geometry import Pose, exp_batch
from robo.graph import Estimates, PoseGraph, RelativeMeasurement
from robo.partition import BlockAssignment


def random_rotations(rng, m, d):
    if d == 2:
        return exp_batch(rng.uniform(-np.pi, np.pi, (m, 1)))
    axis = rng.normal(size=(m, 3))
    axis /= np.linalg.norm(axis, axis=1, keepdims=True)
    return exp_batch(axis * rng.uniform(0, np.pi * 0.95, (m, 1)))


def random_estimates(rng, n, d, spread=3.0):
    return Estimates(random_rotations(rng, n, d), rng.normal(0, spread, (n, d)))


def random_pose(rng, d):
    return Pose(random_rotations(rng, 1, d)[0], rng.normal(size=d))


def random_graph(rng, n, d=2, extra=None, kappa=(1.0, 10.0), tau=(1.0, 10.0)):
    """Random spanning tree plus ``extra`` random chords, random orientation per edge."""
    extra = n // 2 if extra is None else extra
    pairs = set()
    for v in range(1, n):
        pairs.add((int(rng.integers(v)), v))
    for _ in range(extra):
        a, b = rng.choice(n, 2, replace=False)
        if (a, b) not in pairs and (b, a) not in pairs:
            pairs.add((int(a), int(b)))
    edges = []
    for a, b in sorted(pairs):
        if rng.random() < 0.5:
            a, b = b, a
        edges.append(RelativeMeasurement(
            a, b, random_pose(rng, d), float(rng.uniform(*kappa)), float(rng.uniform(*tau)),
        ))
    return PoseGraph(d, random_estimates(rng, n, d), tuple(edges))


def random_assignment(rng, n, n_robots):
    owner = rng.permutation(np.arange(n) % n_robots)
    return BlockAssignment.from_blocks([np.flatnonzero(owner == r) for r in range(n_robots)], n)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_CRITERIA: dict[int, tuple[str, str, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    rep = (yield).get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        number, title = marker.args
        outcome = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[rep.outcome]
        _CRITERIA[number] = (outcome, title, getattr(item, "criterion_detail", ""))


@pytest.fixture
def detail(request):
    """Setter for the one-line summary shown next to an acceptance criterion."""
    def put(text):
        request.node.criterion_detail = text
    return put


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        outcome, title, text = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:>2} {outcome}  {title}" + (f": {text}" if text else ""))
