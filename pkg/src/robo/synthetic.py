"""Seeded synthetic pose graphs for desk-scale experiments.

Three trajectory shapes are available:

* ``chain``: a smooth random walk, odometry only unless the walk revisits itself.
* ``ring``: two laps around a circle, so every pose of the second lap can
  close a loop with the first lap at the same bearing.
* ``grid``: a Manhattan random walk on a unit lattice that keeps revisiting
  vertices, in the spirit of the M3500 / grid3D benchmarks.

Loop closures are drawn between poses whose ground-truth positions lie within
``LOOP_RADIUS`` of each other and are at least three steps apart.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .geometry import Pose, exp_batch, planar_rotation
from .graph import Estimates, GraphError, PoseGraph, RelativeMeasurement

SHAPES = ("chain", "ring", "grid")
LOOP_RADIUS = 1.1
RING_LAPS = 2
GRID_SIDE_FACTOR = 1.5
MAX_CLOSURES_PER_POSE = 3


@dataclass(frozen=True)
class SyntheticSpec:
    shape: str = "ring"
    n_poses: int = 200
    d: int = 2
    rot_noise_deg: float = 1.0
    trans_noise_m: float = 0.05
    loop_closure_prob: float = 0.3
    seed: int = 0

    def validate(self) -> None:
        if self.shape not in SHAPES:
            raise ValueError(f"unknown shape {self.shape!r}; expected one of {SHAPES}")
        if self.n_poses < 2:
            raise ValueError("n_poses must be at least 2")
        if self.d not in (2, 3):
            raise ValueError("d must be 2 or 3")
        if self.rot_noise_deg < 0 or self.trans_noise_m < 0:
            raise ValueError("noise magnitudes must be non-negative")
        if not 0.0 <= self.loop_closure_prob <= 1.0:
            raise ValueError("loop_closure_prob must lie in [0, 1]")


def parse_synthetic_spec(text: str, seed: int = 0) -> SyntheticSpec:
    """Parse ``SHAPE:N[:key=value...]``, e.g. ``grid:300:d=3:rot=2:trans=0.1:lc=0.2``."""
    parts = text.split(":")
    if len(parts) < 2:
        raise ValueError(f"synthetic spec {text!r} must look like SHAPE:N")
    try:
        spec = SyntheticSpec(shape=parts[0], n_poses=int(parts[1]), seed=seed)
    except ValueError:
        raise ValueError(f"bad pose count in {text!r}") from None
    keys = {"d": ("d", int), "rot": ("rot_noise_deg", float),
            "trans": ("trans_noise_m", float), "lc": ("loop_closure_prob", float),
            "seed": ("seed", int)}
    for item in parts[2:]:
        key, _, value = item.partition("=")
        if key not in keys or not value:
            raise ValueError(f"bad synthetic option {item!r}")
        name, cast = keys[key]
        spec = replace(spec, **{name: cast(value)})
    spec.validate()
    return spec


def _headings_to_rotations(yaw: np.ndarray, pitch: np.ndarray, d: int) -> np.ndarray:
    if d == 2:
        return np.stack([planar_rotation(a) for a in yaw])
    rz = exp_batch(np.stack([np.zeros_like(yaw), np.zeros_like(yaw), yaw], axis=1))
    ry = exp_batch(np.stack([np.zeros_like(pitch), pitch, np.zeros_like(pitch)], axis=1))
    return rz @ ry


def _trajectory(spec: SyntheticSpec, rng: np.random.Generator) -> Estimates:
    n, d = spec.n_poses, spec.d
    idx = np.arange(n)
    pitch = np.zeros(n)
    if spec.shape == "ring":
        lap = int(np.ceil(n / RING_LAPS))
        radius = lap / (2 * np.pi)
        angle = 2 * np.pi * idx / lap
        pos = np.zeros((n, d))
        pos[:, 0] = radius * np.cos(angle)
        pos[:, 1] = radius * np.sin(angle)
        yaw = angle + np.pi / 2
        if d == 3:
            pos[:, 2] = 0.5 * np.sin(angle * 3)
    elif spec.shape == "chain":
        yaw = np.cumsum(rng.normal(0.0, 0.15, n))
        steps = np.stack([np.cos(yaw), np.sin(yaw)], axis=1)
        pos = np.zeros((n, d))
        pos[1:, :2] = np.cumsum(steps[:-1], axis=0)
        if d == 3:
            pitch = rng.normal(0.0, 0.05, n)
            pos[1:, 2] = np.cumsum(np.sin(pitch[:-1]))
    else:
        pos, yaw, pitch = _grid_walk(n, d, rng)
    return Estimates(_headings_to_rotations(yaw, pitch, d), pos)


def _grid_walk(n: int, d: int, rng: np.random.Generator):
    side = max(3, int(round(np.sqrt(n) / GRID_SIDE_FACTOR)))
    dirs = [np.array(v, float) for v in ([1, 0, 0], [0, 1, 0], [-1, 0, 0], [0, -1, 0])]
    if d == 3:
        dirs += [np.array([0, 0, 1.0]), np.array([0, 0, -1.0])]
    dirs = [v[:d] for v in dirs]
    pos = np.zeros((n, d))
    yaw = np.zeros(n)
    pitch = np.zeros(n)
    heading = 0
    for k in range(1, n):
        if rng.random() > 0.6:
            heading = int(rng.integers(len(dirs)))
        step = dirs[heading]
        nxt = pos[k - 1] + step
        if np.any(np.abs(nxt) > side):
            options = [h for h, v in enumerate(dirs) if not np.any(np.abs(pos[k - 1] + v) > side)]
            heading = options[int(rng.integers(len(options)))]
            step = dirs[heading]
            nxt = pos[k - 1] + step
        pos[k] = nxt
    # Orientation follows the direction of travel in the plane; vertical moves keep yaw.
    for k in range(n - 1):
        step = pos[k + 1] - pos[k]
        if abs(step[0]) + abs(step[1]) > 0:
            yaw[k] = np.arctan2(step[1], step[0])
        elif k > 0:
            yaw[k] = yaw[k - 1]
    yaw[-1] = yaw[-2]
    return pos, yaw, pitch


def _relative(truth: Estimates, i: int, j: int) -> tuple[np.ndarray, np.ndarray]:
    Ri, ti = truth.R[i], truth.t[i]
    return Ri.T @ truth.R[j], Ri.T @ (truth.t[j] - ti)


def generate_synthetic(spec: SyntheticSpec) -> tuple[PoseGraph, Estimates]:
    """Build a noisy graph and return it with its ground truth.

    Noise is isotropic Gaussian: rotations are perturbed on the right by
    ``exp(N(0, sigma_rot^2 I))``, translations additively. Precisions are
    ``1 / sigma^2``, falling back to 1 when the corresponding noise is zero.
    The graph's initial estimate is ground truth; use an initializer for a
    realistic starting point.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    truth = _trajectory(spec, rng)
    d, n = spec.d, spec.n_poses
    sigma_r = np.deg2rad(spec.rot_noise_deg)
    sigma_t = spec.trans_noise_m
    kappa = 1.0 / sigma_r**2 if sigma_r > 0 else 1.0
    tau = 1.0 / sigma_t**2 if sigma_t > 0 else 1.0

    pairs = [(i, i + 1) for i in range(n - 1)]
    pos = truth.t
    for i in range(3, n):
        dist = np.linalg.norm(pos[: i - 2] - pos[i], axis=1)
        cand = np.flatnonzero(dist <= LOOP_RADIUS)
        if cand.size == 0:
            continue
        cand = cand[rng.random(cand.size) < spec.loop_closure_prob]
        if cand.size > MAX_CLOSURES_PER_POSE:
            cand = np.sort(rng.choice(cand, MAX_CLOSURES_PER_POSE, replace=False))
        pairs.extend((int(j), i) for j in cand)

    rdim = 1 if d == 2 else 3
    rot_noise = rng.normal(0.0, sigma_r, (len(pairs), rdim))
    trans_noise = rng.normal(0.0, sigma_t, (len(pairs), d))
    noise_R = exp_batch(rot_noise)
    edges = []
    for k, (i, j) in enumerate(pairs):
        R, t = _relative(truth, i, j)
        edges.append(
            RelativeMeasurement(i, j, Pose(R @ noise_R[k], t + trans_noise[k]), kappa, tau)
        )
    try:
        graph = PoseGraph(d, truth.copy(), tuple(edges))
    except GraphError as exc:
        raise ValueError(f"invalid synthetic spec: {exc}") from None
    return graph, truth


def synthetic_suite(
    n_instances: int,
    seed: int = 0,
    n_range: tuple[int, int] = (150, 300),
    shapes: tuple[str, ...] = ("ring", "grid"),
    **overrides,
) -> list[SyntheticSpec]:
    """Seeded list of specs alternating between ``shapes``."""
    rng = np.random.default_rng(seed)
    specs = []
    for k in range(n_instances):
        n = int(rng.integers(n_range[0], n_range[1] + 1))
        specs.append(
            SyntheticSpec(shape=shapes[k % len(shapes)], n_poses=n,
                          seed=int(rng.integers(2**31)), **overrides)
        )
    return specs
