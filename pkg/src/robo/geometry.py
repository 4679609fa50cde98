"""Rigid-body primitives on SO(d) / SE(d) for d in {2, 3}.

Rotations are stored as plain ``d x d`` matrices in both dimensions so every
cost formula below is written once. The batched helpers (``*_batch``) operate
on stacks of shape ``(m, d, d)`` and back the vectorized solver kernels; the
scalar functions are the reference versions used on single poses.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ORTHO_TOL = 1e-9
_SMALL_ANGLE = 1e-6
# below this antisymmetric magnitude the angle is pi to machine precision
_PI_SIGN_TOL = 1e-12


class GeometryError(ValueError):
    pass


def rot_dim(d: int) -> int:
    """Number of rotational degrees of freedom in dimension ``d``."""
    return 1 if d == 2 else 3


def dof(d: int) -> int:
    return rot_dim(d) + d


def is_rotation(m: np.ndarray, tol: float = ORTHO_TOL) -> bool:
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] not in (2, 3):
        return False
    d = m.shape[0]
    return (
        np.linalg.norm(m.T @ m - np.eye(d)) <= tol
        and abs(np.linalg.det(m) - 1.0) <= tol
    )


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform ``x -> rotation @ x + translation``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = _frozen(self.rotation)
        t = _frozen(self.translation).reshape(-1)
        if not is_rotation(R):
            raise GeometryError("rotation is not in SO(d)")
        if t.shape != (R.shape[0],):
            raise GeometryError(
                f"translation has length {t.shape[0]}, expected {R.shape[0]}"
            )
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @property
    def dim(self) -> int:
        return self.rotation.shape[0]

    @classmethod
    def identity(cls, d: int) -> "Pose":
        return cls(np.eye(d), np.zeros(d))

    @classmethod
    def from_matrix(cls, T: np.ndarray) -> "Pose":
        T = np.asarray(T, dtype=float)
        d = T.shape[0] - 1
        return cls(T[:d, :d], T[:d, d])

    def matrix(self) -> np.ndarray:
        d = self.dim
        T = np.eye(d + 1)
        T[:d, :d] = self.rotation
        T[:d, d] = self.translation
        return T

    def __matmul__(self, other: "Pose") -> "Pose":
        return compose(self, other)

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return np.array_equal(self.rotation, other.rotation) and np.array_equal(
            self.translation, other.translation
        )

    def __repr__(self):
        return f"Pose(rotation={self.rotation.tolist()}, translation={self.translation.tolist()})"


def compose(a: Pose, b: Pose) -> Pose:
    if a.dim != b.dim:
        raise GeometryError(f"dimension mismatch: {a.dim} vs {b.dim}")
    return Pose(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def inverse(p: Pose) -> Pose:
    Rt = p.rotation.T
    return Pose(Rt, -Rt @ p.translation)


def planar_rotation(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def hat(v: np.ndarray) -> np.ndarray:
    """Skew matrix of a tangent vector (length 1 in 2D, length 3 in 3D)."""
    v = np.asarray(v, dtype=float).reshape(-1)
    if v.size == 1:
        return np.array([[0.0, -v[0]], [v[0], 0.0]])
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


def generators(d: int) -> np.ndarray:
    """Basis of so(d) as an array of shape ``(rot_dim(d), d, d)``."""
    return np.stack([hat(e) for e in np.eye(rot_dim(d))])


def rotation_exp(v) -> np.ndarray:
    v = np.asarray(v, dtype=float).reshape(-1)
    if not np.all(np.isfinite(v)):
        raise GeometryError("non-finite tangent vector")
    if v.size == 1:
        return planar_rotation(v[0])
    return exp_batch(v[None, :])[0]


def rotation_log(R: np.ndarray) -> np.ndarray:
    """Axis-angle vector of ``R``; the returned norm is the angle in [0, pi].

    In 2D the signed angle is returned as a length-1 vector in (-pi, pi].
    Near pi in 3D the axis is read from the symmetric part of ``R``; at exactly
    pi it is oriented so its first non-zero component is positive.
    """
    R = np.asarray(R, dtype=float)
    return log_batch(R[None])[0]


def project_to_rotation(m: np.ndarray) -> np.ndarray:
    """Nearest rotation to ``m`` in Frobenius norm."""
    m = np.asarray(m, dtype=float)
    U, s, Vt = np.linalg.svd(m)
    if s[-1] <= 1e-12 * max(s[0], 1e-300):
        raise GeometryError("cannot project a singular matrix onto SO(d)")
    D = np.eye(m.shape[0])
    D[-1, -1] = np.sign(np.linalg.det(U @ Vt))
    return U @ D @ Vt


def project_batch(m: np.ndarray) -> np.ndarray:
    U, s, Vt = np.linalg.svd(m)
    if np.any(s[:, -1] <= 1e-12 * np.maximum(s[:, 0], 1e-300)):
        raise GeometryError("cannot project a singular matrix onto SO(d)")
    sign = np.sign(np.linalg.det(U @ Vt))
    U = U.copy()
    U[:, :, -1] *= sign[:, None]
    return U @ Vt


def exp_batch(v: np.ndarray) -> np.ndarray:
    """Batched exponential map: ``(m, 1) -> (m, 2, 2)`` or ``(m, 3) -> (m, 3, 3)``."""
    v = np.asarray(v, dtype=float)
    m = v.shape[0]
    if v.shape[1] == 1:
        c, s = np.cos(v[:, 0]), np.sin(v[:, 0])
        out = np.empty((m, 2, 2))
        out[:, 0, 0] = c
        out[:, 0, 1] = -s
        out[:, 1, 0] = s
        out[:, 1, 1] = c
        return out
    theta2 = np.einsum("ij,ij->i", v, v)
    theta = np.sqrt(theta2)
    small = theta < _SMALL_ANGLE
    safe = np.where(small, 1.0, theta)
    a = np.where(small, 1.0 - theta2 / 6.0, np.sin(safe) / safe)
    b = np.where(small, 0.5 - theta2 / 24.0, (1.0 - np.cos(safe)) / (safe * safe))
    K = hat_batch(v)
    return np.eye(3) + a[:, None, None] * K + b[:, None, None] * (K @ K)


def hat_batch(v: np.ndarray) -> np.ndarray:
    m = v.shape[0]
    if v.shape[1] == 1:
        K = np.zeros((m, 2, 2))
        K[:, 0, 1] = -v[:, 0]
        K[:, 1, 0] = v[:, 0]
        return K
    K = np.zeros((m, 3, 3))
    K[:, 0, 1] = -v[:, 2]
    K[:, 0, 2] = v[:, 1]
    K[:, 1, 0] = v[:, 2]
    K[:, 1, 2] = -v[:, 0]
    K[:, 2, 0] = -v[:, 1]
    K[:, 2, 1] = v[:, 0]
    return K


def log_batch(R: np.ndarray) -> np.ndarray:
    """Batched logarithm map, inverse of :func:`exp_batch` on angles in [0, pi]."""
    R = np.asarray(R, dtype=float)
    if R.shape[1] == 2:
        return np.arctan2(R[:, 1, 0], R[:, 0, 0])[:, None]
    w = np.stack(
        [R[:, 2, 1] - R[:, 1, 2], R[:, 0, 2] - R[:, 2, 0], R[:, 1, 0] - R[:, 0, 1]],
        axis=1,
    ) * 0.5
    cos = np.clip((np.trace(R, axis1=1, axis2=2) - 1.0) * 0.5, -1.0, 1.0)
    sin = np.linalg.norm(w, axis=1)
    theta = np.arctan2(sin, cos)
    small = theta < _SMALL_ANGLE
    safe_sin = np.where(small | (sin == 0), 1.0, sin)
    scale = np.where(small, 1.0 + theta * theta / 6.0, theta / safe_sin)
    out = w * scale[:, None]
    # Near pi the antisymmetric part vanishes; recover the axis from sym(R).
    near_pi = (np.pi - theta) < 1e-3
    for k in np.flatnonzero(near_pi):
        out[k] = _log_near_pi(R[k], theta[k], w[k])
    return out


def _log_near_pi(R: np.ndarray, theta: float, w: np.ndarray) -> np.ndarray:
    # sym(R) = cos(theta) I + (1 - cos(theta)) a a^T, exact for any theta.
    cos = np.cos(theta)
    B = (0.5 * (R + R.T) - cos * np.eye(3)) / (1.0 - cos)
    col = int(np.argmax(np.diag(B)))
    axis = B[:, col] / np.sqrt(max(B[col, col], 1e-300))
    axis /= np.linalg.norm(axis)
    if np.linalg.norm(w) > _PI_SIGN_TOL:
        axis = axis * np.sign(np.dot(axis, w) or 1.0)
    else:
        nz = axis[np.flatnonzero(np.abs(axis) > 1e-12)[0]]
        axis = axis * np.sign(nz)
    return axis * theta


def right_jacobian_inv_batch(phi: np.ndarray) -> np.ndarray:
    """Inverse right Jacobian of SO(3), batched; identity in 2D."""
    m = phi.shape[0]
    if phi.shape[1] == 1:
        return np.ones((m, 1, 1))
    theta2 = np.einsum("ij,ij->i", phi, phi)
    theta = np.sqrt(theta2)
    small = theta < 1e-4
    safe = np.where(small, 1.0, theta)
    coef = np.where(
        small,
        1.0 / 12.0 + theta2 / 720.0,
        1.0 / (safe * safe) - (1.0 + np.cos(safe)) / (2.0 * safe * np.sin(safe)),
    )
    K = hat_batch(phi)
    return np.eye(3) + 0.5 * K + coef[:, None, None] * (K @ K)


def chordal_dist2(Ti: Pose, Tj: Pose, m) -> float:
    """``kappa |Rj - Ri Rm|_F^2 + tau |tj - ti - Ri tm|^2`` for measurement ``m``."""
    Rm, tm = m.transform.rotation, m.transform.translation
    rot = Tj.rotation - Ti.rotation @ Rm
    tr = Tj.translation - Ti.translation - Ti.rotation @ tm
    return float(m.kappa * np.sum(rot * rot) + m.tau * np.dot(tr, tr))


def geodesic_dist2(Ti: Pose, Tj: Pose, m) -> float:
    """``kappa |Log(Rm^T Ri^T Rj)|^2 + tau |tj - ti - Ri tm|^2`` for measurement ``m``."""
    Rm, tm = m.transform.rotation, m.transform.translation
    phi = rotation_log(Rm.T @ Ti.rotation.T @ Tj.rotation)
    tr = Tj.translation - Ti.translation - Ti.rotation @ tm
    return float(m.kappa * np.dot(phi, phi) + m.tau * np.dot(tr, tr))
