"""Reading and writing pose graphs in the g2o text format.

Supported records::

    VERTEX_SE2 id x y theta
    EDGE_SE2 i j dx dy dtheta I11 I12 I13 I22 I23 I33
    VERTEX_SE3:QUAT id x y z qx qy qz qw
    EDGE_SE3:QUAT i j dx dy dz qx qy qz qw I11 I12 .. I66   (21 entries)

Information matrices are given upper-triangular, row-major, translation
block first. Only the isotropic precisions survive ingestion, see
:func:`extract_precisions`.
"""

from __future__ import annotations

import io
import logging
from typing import Iterable, TextIO

import numpy as np
from scipy.spatial.transform import Rotation as ScipyRotation

from .geometry import Pose, planar_rotation
from .graph import Estimates, GraphError, PoseGraph, RelativeMeasurement

log = logging.getLogger(__name__)

_RECORDS = {
    "VERTEX_SE2": (2, "vertex", 4),
    "EDGE_SE2": (2, "edge", 11),
    "VERTEX_SE3:QUAT": (3, "vertex", 8),
    "EDGE_SE3:QUAT": (3, "edge", 30),
}


class G2oFormatError(GraphError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


def extract_precisions(info: np.ndarray) -> tuple[float, float]:
    """Return ``(kappa, tau)`` from a full g2o information matrix.

    ``tau`` is the mean of the translational diagonal, ``kappa`` the mean of
    the rotational diagonal; coupling terms are ignored.
    """
    info = np.asarray(info, dtype=float)
    if info.shape not in ((3, 3), (6, 6)):
        raise GraphError(f"information matrix has shape {info.shape}")
    if not np.allclose(info, info.T, rtol=0, atol=1e-9 * max(1.0, np.abs(info).max())):
        raise GraphError("information matrix is not symmetric")
    try:
        np.linalg.cholesky(info)
    except np.linalg.LinAlgError:
        raise GraphError("information matrix is not positive definite") from None
    d = 2 if info.shape[0] == 3 else 3
    diag = np.diag(info)
    return float(diag[d:].mean()), float(diag[:d].mean())


def _upper_to_full(values: np.ndarray, size: int) -> np.ndarray:
    M = np.zeros((size, size))
    M[np.triu_indices(size)] = values
    return M + np.triu(M, 1).T


def _quat_to_matrix(q: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(q)
    if not norm > 0:
        raise ValueError("zero quaternion")
    return ScipyRotation.from_quat(q / norm).as_matrix()


def parse_g2o(stream: TextIO | str | Iterable[str]) -> PoseGraph:
    """Parse g2o text into a :class:`PoseGraph`.

    Ids are remapped to ``0..n-1`` preserving numeric order; vertices that only
    appear in edges start at the identity.
    """
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    dim = None
    vertices: dict[int, Pose] = {}
    raw_edges: list[tuple[int, int, Pose, float, float, int]] = []

    for lineno, line in enumerate(stream, start=1):
        tokens = line.split()
        if not tokens or tokens[0].startswith("#"):
            continue
        tag = tokens[0]
        if tag not in _RECORDS:
            log.warning("line %d: skipping unsupported record %s", lineno, tag)
            continue
        rec_dim, kind, n_fields = _RECORDS[tag]
        if dim is None:
            dim = rec_dim
        elif dim != rec_dim:
            raise G2oFormatError("mixed 2D and 3D records", lineno)
        if len(tokens) - 1 != n_fields:
            raise G2oFormatError(
                f"{tag} expects {n_fields} fields, got {len(tokens) - 1}", lineno
            )
        try:
            ids = [int(tok) for tok in tokens[1 : (2 if kind == "vertex" else 3)]]
            vals = np.array([float(tok) for tok in tokens[len(ids) + 1 :]])
        except ValueError as exc:
            raise G2oFormatError(str(exc), lineno) from None
        if not np.all(np.isfinite(vals)):
            raise G2oFormatError("non-finite value", lineno)

        try:
            if rec_dim == 2:
                pose = Pose(planar_rotation(vals[2]), vals[:2])
            else:
                pose = Pose(_quat_to_matrix(vals[3:7]), vals[:3])
        except ValueError as exc:
            raise G2oFormatError(f"invalid pose: {exc}", lineno) from None

        if kind == "vertex":
            if ids[0] in vertices:
                raise G2oFormatError(f"duplicate vertex {ids[0]}", lineno)
            vertices[ids[0]] = pose
        else:
            info_vals = vals[3:] if rec_dim == 2 else vals[7:]
            info = _upper_to_full(info_vals, 3 if rec_dim == 2 else 6)
            try:
                kappa, tau = extract_precisions(info)
            except GraphError as exc:
                raise G2oFormatError(str(exc), lineno) from None
            if ids[0] == ids[1]:
                raise G2oFormatError(f"self-loop on vertex {ids[0]}", lineno)
            raw_edges.append((ids[0], ids[1], pose, kappa, tau, lineno))

    if not vertices and not raw_edges:
        raise G2oFormatError("no vertices")

    all_ids = sorted(set(vertices) | {e[0] for e in raw_edges} | {e[1] for e in raw_edges})
    remap = {old: new for new, old in enumerate(all_ids)}
    identity = Pose.identity(dim)
    initial = Estimates.from_poses([vertices.get(old, identity) for old in all_ids])
    edges = [
        RelativeMeasurement(remap[i], remap[j], pose, kappa, tau)
        for i, j, pose, kappa, tau, _ in raw_edges
    ]
    return PoseGraph(dim, initial, tuple(edges))


def read_g2o(path) -> PoseGraph:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_g2o(fh)


def _fmt(x: float) -> str:
    return repr(float(x)) if x != 0 else "0"


def _pose_fields(pose: Pose) -> list[float]:
    if pose.dim == 2:
        R = pose.rotation
        return [*pose.translation, float(np.arctan2(R[1, 0], R[0, 0]))]
    q = ScipyRotation.from_matrix(pose.rotation).as_quat()
    return [*pose.translation, *q]


def _info_fields(kappa: float, tau: float, d: int) -> list[float]:
    size = 3 if d == 2 else 6
    diag = np.array([tau] * d + [kappa] * (size - d))
    return list(np.diag(diag)[np.triu_indices(size)])


def write_g2o(graph: PoseGraph, estimates: Estimates | None = None) -> str:
    """Serialize ``graph`` (vertices from ``estimates`` or ``graph.initial``)."""
    est = graph.initial if estimates is None else estimates
    d = graph.dimension
    vtag, etag = ("VERTEX_SE2", "EDGE_SE2") if d == 2 else ("VERTEX_SE3:QUAT", "EDGE_SE3:QUAT")
    out = io.StringIO()
    for i in range(len(est)):
        fields = _pose_fields(est.pose(i))
        out.write(" ".join([vtag, str(i), *map(_fmt, fields)]) + "\n")
    for e in graph.edges:
        fields = _pose_fields(e.transform) + _info_fields(e.kappa, e.tau, d)
        out.write(" ".join([etag, str(e.from_id), str(e.to_id), *map(_fmt, fields)]) + "\n")
    return out.getvalue()


def save_g2o(path, graph: PoseGraph, estimates: Estimates | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(write_g2o(graph, estimates))
