"""Command-line driver: ``robo run``, ``robo sweep`` and ``robo reference``."""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import shlex
import sys
from pathlib import Path

import numpy as np

from .evaluation import (
    ALIGNMENT,
    ReferenceSolution,
    Tracker,
    centralized_reference,
    global_cost,
    records_to_csv,
)
from .g2o import read_g2o, write_g2o
from .graph import GraphError, PoseGraph
from .initialization import INIT_SCHEMES, initialize
from .partition import parse_partition, sequential_partition
from .residuals import METRICS
from .runtime import MODES, ScheduleSpec, run
from .solver import SolverConfig
from .synthetic import generate_synthetic, parse_synthetic_spec, synthetic_suite

log = logging.getLogger("robo")

DEFAULT_ROBOTS = 5
DEFAULT_OMEGA = "2"
SWEEP_CHECKPOINTS = (100, 500, 1000)
CACHE_ENV = "ROBO_CACHE_DIR"


class UsageError(Exception):
    pass


def _omega_list(text: str) -> list[int]:
    try:
        values = [int(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad omega list {text!r}") from None
    if not values or min(values) < 0:
        raise argparse.ArgumentTypeError("omega values must be non-negative integers")
    return values


def _noise_pair(text: str) -> tuple[float, float]:
    try:
        rot, trans = (float(tok) for tok in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("expected ROT_DEG,TRANS_M") from None
    if not (rot > 0 and trans > 0):
        raise argparse.ArgumentTypeError("noise standard deviations must be positive")
    return rot, trans


def _add_graph_source(p: argparse.ArgumentParser) -> None:
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--dataset", type=Path, help="g2o file (SE2 or SE3:QUAT)")
    src.add_argument("--synthetic", metavar="SPEC",
                     help="SHAPE:N[:d=..:rot=..:trans=..:lc=..:seed=..], e.g. ring:200")
    p.add_argument("--seed", type=int, default=0, help="seeds synthetic data and schedules")
    p.add_argument("--metric", choices=METRICS, default="chordal")
    p.add_argument("--noise-override", type=_noise_pair, metavar="ROT_DEG,TRANS_M",
                   help="replace every measurement precision by these isotropic noise levels")


def _add_run_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--robots", type=int, default=DEFAULT_ROBOTS)
    p.add_argument("--omega", type=_omega_list, default=_omega_list(DEFAULT_OMEGA),
                   help="comma-separated overlap sizes (default 2; gains flatten beyond 3)")
    p.add_argument("--mode", choices=MODES, default="sync")
    p.add_argument("--init", choices=INIT_SCHEMES, default="chordal")
    p.add_argument("--odom-anchor", choices=("identity", "tree"), default="tree")
    p.add_argument("--max-iters", type=int, help="iteration cap (sync, edgewise)")
    p.add_argument("--lambda", dest="lam", type=float, help="Poisson rate in Hz (async)")
    p.add_argument("--delay", type=float, help="message delay in seconds (async)")
    p.add_argument("--wall-seconds", type=float, help="simulated horizon in seconds (async)")
    p.add_argument("--target-subopt", type=float, help="stop once delta_rel drops to this value")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="robo", description="Overlapping-domain distributed pose graph optimization.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one regime for a list of overlap sizes")
    _add_graph_source(p_run)
    _add_run_options(p_run)
    p_run.add_argument("--partition-file", type=Path, help="one line of pose ids per robot")
    p_run.add_argument("--out", type=Path, default=Path("robo_out"), help="directory for CSV files")

    p_sweep = sub.add_parser("sweep", help="iterations-to-threshold over the synthetic suite")
    p_sweep.add_argument("--instances", type=int, default=20)
    p_sweep.add_argument("--seed", type=int, default=0, help="suite seed")
    p_sweep.add_argument("--min-poses", type=int, default=150)
    p_sweep.add_argument("--max-poses", type=int, default=300)
    p_sweep.add_argument("--metric", choices=METRICS, default="chordal")
    _add_run_options(p_sweep)
    p_sweep.set_defaults(init="spanning-tree", target_subopt=1e-3)
    p_sweep.add_argument("--out", type=Path, help="optional CSV of per-instance results")

    p_ref = sub.add_parser("reference", help="compute (or fetch from cache) the reference solution")
    _add_graph_source(p_ref)
    p_ref.add_argument("--cache-dir", type=Path, help=f"cache directory (default ${CACHE_ENV} or .robo_cache)")
    return parser


def _check_schedule_flags(args) -> None:
    if args.mode == "async":
        missing = [flag for flag, v in (("--lambda", args.lam), ("--delay", args.delay),
                                        ("--wall-seconds", args.wall_seconds)) if v is None]
        if missing:
            raise UsageError(f"--mode async requires {', '.join(missing)}")
    elif args.max_iters is None:
        raise UsageError(f"--mode {args.mode} requires --max-iters")
    if args.robots < 1:
        raise UsageError("--robots must be positive")


def load_graph(args) -> PoseGraph:
    if args.dataset is not None:
        graph = read_g2o(args.dataset)
    else:
        graph, _ = generate_synthetic(parse_synthetic_spec(args.synthetic, seed=args.seed))
    if args.noise_override is not None:
        rot_deg, trans_m = args.noise_override
        graph = graph.with_uniform_precision(1.0 / np.deg2rad(rot_deg) ** 2, 1.0 / trans_m**2)
    return graph


def graph_key(graph: PoseGraph, metric: str) -> str:
    digest = hashlib.sha256(write_g2o(graph).encode()).hexdigest()
    return f"{digest[:32]}_{metric}"


def cached_reference(graph: PoseGraph, metric: str, cache_dir: Path) -> tuple[ReferenceSolution, bool]:
    """Reference solution from ``cache_dir`` if present, else computed and stored.

    Returns the solution and whether it was a cache hit. Freshly computed
    solutions are re-read from disk so hits and misses yield identical values.
    """
    key = graph_key(graph, metric)
    g2o_path = cache_dir / f"{key}.g2o"
    meta_path = cache_dir / f"{key}.json"
    hit = g2o_path.exists() and meta_path.exists()
    if not hit:
        ref = centralized_reference(graph, metric)
        if not ref.converged:
            log.warning("reference did not converge; downstream metrics are unreliable")
        cache_dir.mkdir(parents=True, exist_ok=True)
        g2o_path.write_text(write_g2o(graph, ref.estimates), encoding="utf-8")
        meta_path.write_text(json.dumps({
            "metric": metric, "optimal_cost": ref.optimal_cost,
            "gradient_norm": ref.gradient_norm, "iterations": ref.iterations,
            "converged": ref.converged,
        }, indent=2) + "\n", encoding="utf-8")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    est = read_g2o(g2o_path).initial
    return ReferenceSolution(est, global_cost(graph, est, metric), metric, meta["gradient_norm"],
                             meta["iterations"], meta["converged"]), hit


def get_reference(graph: PoseGraph, metric: str) -> ReferenceSolution:
    cache = os.environ.get(CACHE_ENV)
    if cache:
        return cached_reference(graph, metric, Path(cache))[0]
    return centralized_reference(graph, metric)


def _schedule(args, seed: int) -> ScheduleSpec:
    return ScheduleSpec(
        mode=args.mode,
        max_iterations=args.max_iters or 0,
        wall_limit_seconds=args.wall_seconds or 0.0,
        lam=args.lam or 10.0,
        delay_seconds=args.delay or 0.0,
        rng_seed=seed,
    )


def _fmt(x) -> str:
    return "-" if x is None else (f"{x:.4g}" if isinstance(x, float) else str(x))


def cmd_run(args, argv: list[str]) -> int:
    _check_schedule_flags(args)
    graph = load_graph(args)
    if args.partition_file is not None:
        assignment = parse_partition(args.partition_file.read_text(encoding="utf-8"), graph.n_poses)
    else:
        assignment = sequential_partition(graph, args.robots)
    init = initialize(args.init, graph, assignment, args.odom_anchor)
    ref = get_reference(graph, args.metric)
    args.out.mkdir(parents=True, exist_ok=True)

    rows = []
    for omega in args.omega:
        tracker = Tracker(graph, ref, args.target_subopt)
        run(args.mode, graph, assignment, omega, init, SolverConfig(), _schedule(args, args.seed),
            callbacks=tracker, metric=args.metric, keep_history=False)
        meta = {
            "command": shlex.quote(shlex.join(["robo", *argv])),
            "seed": args.seed, "mode": args.mode, "omega": omega, "metric": args.metric,
            "init": args.init, "robots": assignment.n_robots,
            "initial_cost": repr(tracker.records[0].cost), "optimal_cost": repr(ref.optimal_cost),
            "reference_converged": ref.converged, "alignment": ALIGNMENT,
        }
        path = args.out / f"{args.mode}_omega{omega}.csv"
        # one row per iteration or event; the initial state lives in the metadata line
        path.write_text(records_to_csv(tracker.records[1:], meta), encoding="utf-8")
        last = tracker.records[-1]
        rows.append((omega, last.k, last.time_s, last.delta_rel, last.rmse_ape,
                     tracker.iterations_to(args.target_subopt) if args.target_subopt else None, path))

    print(f"F* = {ref.optimal_cost:.10g} ({args.metric}), {graph.n_poses} poses, "
          f"{graph.n_edges} edges, {assignment.n_robots} robots, mode {args.mode}")
    print(f"{'omega':>5} {'k':>6} {'time_s':>8} {'delta_rel':>11} {'rmse_ape':>10} {'k_target':>8}  csv")
    for omega, k, t, delta, ape, k_hit, path in rows:
        print(f"{omega:>5} {k:>6} {_fmt(t):>8} {delta:>11.4e} {ape:>10.4g} {_fmt(k_hit):>8}  {path}")
    return 0


def sweep_results(args) -> tuple[list, dict[int, list]]:
    """Per-instance iterations (or simulated seconds) to the target, per omega."""
    specs = synthetic_suite(args.instances, seed=args.seed, n_range=(args.min_poses, args.max_poses))
    per_omega: dict[int, list] = {w: [] for w in args.omega}
    for idx, spec in enumerate(specs):
        graph, _ = generate_synthetic(spec)
        assignment = sequential_partition(graph, args.robots)
        init = initialize(args.init, graph, assignment, args.odom_anchor)
        ref = centralized_reference(graph, args.metric)
        for omega in args.omega:
            tracker = Tracker(graph, ref, args.target_subopt, compute_ape=False)
            run(args.mode, graph, assignment, omega, init, SolverConfig(),
                _schedule(args, args.seed + idx), callbacks=tracker, metric=args.metric,
                keep_history=False)
            hit = (tracker.time_to(args.target_subopt) if args.mode == "async"
                   else tracker.iterations_to(args.target_subopt))
            per_omega[omega].append(hit)
    return specs, per_omega


def cmd_sweep(args, argv: list[str]) -> int:
    _check_schedule_flags(args)
    specs, per_omega = sweep_results(args)
    unit = "simulated s" if args.mode == "async" else "iterations"
    print(f"{len(specs)} instances, mode {args.mode}, target delta_rel <= {args.target_subopt:g} ({unit})")
    checkpoints = [c for c in SWEEP_CHECKPOINTS if args.mode == "async" or c <= args.max_iters]
    head = f"{'omega':>5} {'median':>8} {'solved':>7}" + "".join(f" {'@' + str(c):>6}" for c in checkpoints)
    print(head)
    for omega, hits in per_omega.items():
        reached = [h for h in hits if h is not None]
        med = float(np.median([h if h is not None else np.inf for h in hits]))
        line = f"{omega:>5} {_fmt(med) if np.isfinite(med) else 'inf':>8} {len(reached) / len(hits):>7.0%}"
        if args.mode != "async":
            line += "".join(f" {sum(h <= c for h in reached) / len(hits):>6.0%}" for c in checkpoints)
        print(line)
    if args.out is not None:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(f"# command={shlex.quote(shlex.join(['robo', *argv]))} seed={args.seed}\n")
            fh.write("instance,shape,n_poses,omega,to_target\n")
            for omega, hits in per_omega.items():
                for idx, (spec, h) in enumerate(zip(specs, hits)):
                    fh.write(f"{idx},{spec.shape},{spec.n_poses},{omega},{'' if h is None else h}\n")
    return 0


def cmd_reference(args, argv: list[str]) -> int:
    graph = load_graph(args)
    cache = args.cache_dir or Path(os.environ.get(CACHE_ENV) or ".robo_cache")
    ref, hit = cached_reference(graph, args.metric, cache)
    key = graph_key(graph, args.metric)
    print(f"{'cache hit' if hit else 'computed'}: {cache / key}.g2o")
    print(f"F* = {ref.optimal_cost!r} ({args.metric}), gradient {ref.gradient_norm:.3g}, "
          f"{ref.iterations} iterations, converged={ref.converged}")
    return 0 if ref.converged else 3


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handlers = {"run": cmd_run, "sweep": cmd_sweep, "reference": cmd_reference}
    try:
        return handlers[args.command](args, argv)
    except UsageError as exc:
        parser.error(str(exc))
    except (GraphError, ValueError, OSError) as exc:
        print(f"robo: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
