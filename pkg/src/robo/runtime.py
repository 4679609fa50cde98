"""Distributed ROBO iterations under three communication regimes.

Everything runs in a single deterministic event loop. Each robot keeps a
private cache of the poses it needs (its inflated block ``V^{omega+1}``);
robots only exchange their *owned* poses, and only the ones that fall inside
the receiver's inflated block.

Callbacks receive a :class:`Snapshot` after every iteration (synchronous,
edgewise) or optimization event (asynchronous), plus one for the initial
state; a callback returning ``True`` stops the run.
"""

from __future__ import annotations

import heapq
import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable, NamedTuple, Sequence

import numpy as np

from .evaluation import aggregate_solution
from .graph import Estimates, PoseGraph
from .partition import (
    BlockAssignment,
    CommunicationGraph,
    OverlapBlock,
    build_communication_graph,
    build_overlap_block,
)
from .solver import SolverConfig, Subproblem, solve_subproblem

log = logging.getLogger(__name__)

MODES = ("sync", "edgewise", "async")


@dataclass(eq=False)
class PoseUpdateMessage:
    sender: int
    receiver: int
    payload_ids: np.ndarray
    R: np.ndarray
    t: np.ndarray
    send_time: float
    deliver_time: float

    def __post_init__(self):
        if self.deliver_time < self.send_time:
            raise ValueError("message delivered before it was sent")


@dataclass(eq=False)
class AgentState:
    """One robot's view: its cache over ``ids`` (= ``V^{omega+1}``, ascending)."""

    robot: int
    owned: np.ndarray
    ids: np.ndarray
    estimates: Estimates
    subproblem: Subproblem
    damping: float
    stamps: np.ndarray = None
    inbox: list = field(default_factory=list)

    def __post_init__(self):
        if self.stamps is None:
            self.stamps = np.full(self.ids.size, -np.inf)
        self._owned_mask = np.isin(self.ids, self.owned)

    def local_index(self, pose_ids) -> np.ndarray:
        """Cache positions of ``pose_ids``; -1 where a pose is not cached."""
        pose_ids = np.asarray(pose_ids, dtype=np.intp)
        pos = np.searchsorted(self.ids, pose_ids)
        pos = np.minimum(pos, self.ids.size - 1)
        return np.where(self.ids[pos] == pose_ids, pos, -1)

    def owned_estimates(self) -> Estimates:
        return self.estimates.take(self.local_index(self.owned))


@dataclass(frozen=True)
class ScheduleSpec:
    mode: str = "sync"
    max_iterations: int = 100
    wall_limit_seconds: float = 30.0
    lam: float = 10.0
    delay_seconds: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.mode == "async" and not self.lam > 0:
            raise ValueError("Poisson rate must be positive")
        if self.delay_seconds < 0:
            raise ValueError("delay must be non-negative")


class PoissonClock:
    """Independent exponential inter-event gaps with shared rate ``lam`` per robot."""

    def __init__(self, lam: float, seed: int, n_robots: int):
        if not lam > 0:
            raise ValueError("Poisson rate must be positive")
        self.lam = lam
        seqs = np.random.SeedSequence(seed).spawn(n_robots)
        self._rngs = [np.random.default_rng(s) for s in seqs]

    def gap(self, robot: int) -> float:
        g = 0.0
        while g <= 0.0:
            g = float(self._rngs[robot].exponential(1.0 / self.lam))
        return g

    def next_time(self, robot: int, now: float) -> float:
        return now + self.gap(robot)


class RoundRobinClock:
    """Deterministic test clock: every robot fires at ``period, 2*period, ...``.

    With zero delay this reproduces the synchronous schedule exactly, because
    optimizations at a tick run before the deliveries stamped with that tick.
    """

    def __init__(self, period: float = 1.0):
        self.period = period

    def next_time(self, robot: int, now: float) -> float:
        return now + self.period


class Snapshot(NamedTuple):
    k: int
    time: float | None
    estimates: Estimates
    messages: list

    @property
    def link_pose_counts(self) -> dict[tuple[int, int], int]:
        out: dict[tuple[int, int], int] = {}
        for m in self.messages:
            key = (min(m.sender, m.receiver), max(m.sender, m.receiver))
            out[key] = out.get(key, 0) + len(m.payload_ids)
        return out


@dataclass
class RunResult:
    history: list[Snapshot]
    agents: list[AgentState]
    blocks: list[OverlapBlock]
    comm: CommunicationGraph
    stopped_early: bool = False

    @property
    def final(self) -> Estimates:
        return aggregate_solution(self.agents)


def project_and_share(
    state: AgentState,
    comm: CommunicationGraph,
    blocks: Sequence[OverlapBlock],
    send_time: float = 0.0,
    delay: float = 0.0,
    receivers: Iterable[int] | None = None,
) -> list[PoseUpdateMessage]:
    """Messages carrying the sender's owned poses that lie in each neighbour's inflated block."""
    targets = comm.neighbors(state.robot) if receivers is None else receivers
    out = []
    for beta in targets:
        if not comm.has_link(state.robot, beta):
            continue
        ids = np.intersect1d(state.owned, blocks[beta].inflated)
        pos = state.local_index(ids)
        out.append(PoseUpdateMessage(
            state.robot, beta, ids, state.estimates.R[pos].copy(), state.estimates.t[pos].copy(),
            send_time, send_time + delay,
        ))
    return out


def apply_updates(state: AgentState, inbox: Iterable[PoseUpdateMessage]) -> AgentState:
    """Overwrite cached neighbour poses, newest ``send_time`` winning; owned poses are never touched."""
    for msg in sorted(inbox, key=lambda m: m.send_time):
        if msg.receiver != state.robot:
            log.warning("robot %d dropped a message addressed to %d", state.robot, msg.receiver)
            continue
        pos = state.local_index(msg.payload_ids)
        outside = pos < 0
        if outside.any():
            log.warning("robot %d dropped poses %s outside its block", state.robot,
                        msg.payload_ids[outside].tolist())
        own = np.zeros_like(outside)
        own[~outside] = state._owned_mask[pos[~outside]]
        if own.any():
            log.warning("robot %d ignored updates to its own poses %s", state.robot,
                        msg.payload_ids[own].tolist())
        keep = ~outside & ~own
        keep[keep] = msg.send_time >= state.stamps[pos[keep]]
        target = pos[keep]
        state.estimates.R[target] = msg.R[keep]
        state.estimates.t[target] = msg.t[keep]
        state.stamps[target] = msg.send_time
    return state


class _Team:
    def __init__(self, graph: PoseGraph, assignment: BlockAssignment, omega: int,
                 init: Estimates, cfg: SolverConfig | None, metric: str):
        self.graph = graph
        self.cfg = cfg or SolverConfig()
        self.blocks = [build_overlap_block(graph, assignment, a, omega, init)
                       for a in range(assignment.n_robots)]
        self.comm = build_communication_graph(graph, assignment, omega)
        self.agents = []
        for a, blk in enumerate(self.blocks):
            spb = Subproblem.from_block(graph, blk, metric)
            self.agents.append(AgentState(
                a, blk.owned, spb.ids, init.take(spb.ids), spb, self.cfg.initial_damping,
            ))

    def solve(self, agent: AgentState) -> None:
        res = solve_subproblem(agent.subproblem, agent.estimates, self.cfg, agent.damping)
        agent.estimates = res.estimates
        agent.damping = res.damping

    def snapshot(self, k, time, messages) -> Snapshot:
        return Snapshot(k, time, aggregate_solution(self.agents, self.graph.n_poses), messages)


def _emit(callbacks, snap: Snapshot, history: list | None) -> bool:
    if history is not None:
        history.append(snap)
    stop = False
    for cb in callbacks:
        stop = bool(cb(snap)) or stop
    return stop


def _as_list(callbacks) -> list[Callable]:
    if callbacks is None:
        return []
    if callable(callbacks):
        return [callbacks]
    return list(callbacks)


def run_synchronous(graph, assignment, omega, init, cfg=None, max_iters=100, callbacks=None,
                    metric="chordal", keep_history=True) -> RunResult:
    """All robots solve on the same snapshot, then exchange and apply updates."""
    team = _Team(graph, assignment, omega, init, cfg, metric)
    cbs = _as_list(callbacks)
    history = [] if keep_history else None
    stop = _emit(cbs, team.snapshot(0, None, []), history)
    k = 0
    while not stop and k < max_iters:
        k += 1
        for agent in team.agents:
            team.solve(agent)
        messages = [m for agent in team.agents
                    for m in project_and_share(agent, team.comm, team.blocks, float(k))]
        for agent in team.agents:
            apply_updates(agent, [m for m in messages if m.receiver == agent.robot])
        stop = _emit(cbs, team.snapshot(k, None, messages), history)
    return RunResult(history or [], team.agents, team.blocks, team.comm, stop)


def run_edgewise(graph, assignment, omega, init, cfg=None, max_iters=100, seed=0, callbacks=None,
                 metric="chordal", keep_history=True) -> RunResult:
    """Each iteration one uniformly drawn communication link's two robots solve and swap poses."""
    team = _Team(graph, assignment, omega, init, cfg, metric)
    links = team.comm.links
    if not links:
        raise ValueError("communication graph has no links; edgewise mode needs at least one")
    rng = np.random.default_rng(seed)
    cbs = _as_list(callbacks)
    history = [] if keep_history else None
    stop = _emit(cbs, team.snapshot(0, None, []), history)
    k = 0
    while not stop and k < max_iters:
        k += 1
        a, b = links[int(rng.integers(len(links)))]
        pair = (team.agents[a], team.agents[b])
        for agent in pair:
            apply_updates(agent, agent.inbox)
            agent.inbox = []
            team.solve(agent)
        messages = (project_and_share(pair[0], team.comm, team.blocks, float(k), receivers=[b])
                    + project_and_share(pair[1], team.comm, team.blocks, float(k), receivers=[a]))
        for agent in pair:
            apply_updates(agent, [m for m in messages if m.receiver == agent.robot])
        stop = _emit(cbs, team.snapshot(k, None, messages), history)
    return RunResult(history or [], team.agents, team.blocks, team.comm, stop)


_OPTIMIZE, _DELIVER = 0, 1


def run_asynchronous(graph, assignment, omega, init, cfg=None, schedule: ScheduleSpec | None = None,
                     callbacks=None, metric="chordal", keep_history=True, clock=None) -> RunResult:
    """Discrete-event simulation with Poisson optimization triggers and fixed message delay.

    Events are ordered by ``(time, kind, robot, sequence)`` with optimizations
    before deliveries at equal times. At an optimization event the robot
    applies everything delivered so far, takes one LM step on possibly stale
    data and sends its overlapped poses, which arrive ``delay`` seconds later.
    """
    schedule = schedule or ScheduleSpec(mode="async")
    team = _Team(graph, assignment, omega, init, cfg, metric)
    n = assignment.n_robots
    clock = clock or PoissonClock(schedule.lam, schedule.rng_seed, n)
    delay = schedule.delay_seconds
    horizon = schedule.wall_limit_seconds
    cbs = _as_list(callbacks)
    history = [] if keep_history else None
    stop = _emit(cbs, team.snapshot(0, 0.0, []), history)

    queue: list = []
    seq = 0
    for a in range(n):
        heapq.heappush(queue, (clock.next_time(a, 0.0), _OPTIMIZE, a, seq, None))
        seq += 1
    k = 0
    while queue and not stop:
        time, kind, robot, _, payload = heapq.heappop(queue)
        if time > horizon:
            break
        agent = team.agents[robot]
        if kind == _DELIVER:
            agent.inbox.append(payload)
            continue
        apply_updates(agent, agent.inbox)
        agent.inbox = []
        team.solve(agent)
        messages = project_and_share(agent, team.comm, team.blocks, time, delay)
        for m in messages:
            heapq.heappush(queue, (m.deliver_time, _DELIVER, m.receiver, seq, m))
            seq += 1
        heapq.heappush(queue, (clock.next_time(robot, time), _OPTIMIZE, robot, seq, None))
        seq += 1
        k += 1
        stop = _emit(cbs, team.snapshot(k, time, messages), history)
    return RunResult(history or [], team.agents, team.blocks, team.comm, stop)


def run(mode: str, graph, assignment, omega, init, cfg=None, schedule: ScheduleSpec | None = None,
        callbacks=None, metric="chordal", keep_history=True) -> RunResult:
    schedule = schedule or ScheduleSpec(mode=mode)
    if mode == "sync":
        return run_synchronous(graph, assignment, omega, init, cfg, schedule.max_iterations,
                               callbacks, metric, keep_history)
    if mode == "edgewise":
        return run_edgewise(graph, assignment, omega, init, cfg, schedule.max_iterations,
                            schedule.rng_seed, callbacks, metric, keep_history)
    if mode == "async":
        return run_asynchronous(graph, assignment, omega, init, cfg, schedule, callbacks,
                                metric, keep_history)
    raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
