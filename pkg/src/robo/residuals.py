"""Vectorized per-edge residuals and Jacobians for both rotation metrics.

For an edge ``(i, j)`` the stacked residual is ``r = [r_rot, r_trans]`` with
``|r|^2 = dist^2``:

* chordal:  ``r_rot = sqrt(kappa) vec(R_j - R_i Rm)``            (d*d entries)
* geodesic: ``r_rot = sqrt(kappa) Log(Rm^T R_i^T R_j)``           (1 or 3 entries)
* both:     ``r_trans = sqrt(tau) (t_j - t_i - R_i tm)``           (d entries)

Jacobians are taken with respect to the tangent vector ``[w, v]`` of each
endpoint, where the rotation moves as ``R exp(hat(w))`` and the translation as
``t + v`` (global frame).
"""

from __future__ import annotations

import numpy as np

from .geometry import generators, log_batch, right_jacobian_inv_batch, rot_dim

METRICS = ("chordal", "geodesic")


def residual_dim(metric: str, d: int) -> int:
    return (d * d if metric == "chordal" else rot_dim(d)) + d


def _check_metric(metric: str) -> None:
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}; expected one of {METRICS}")


def edge_residuals(metric, Ri, ti, Rj, tj, Rm, tm, kappa, tau):
    """Stacked residuals of shape ``(m, residual_dim)``."""
    _check_metric(metric)
    m, d = ti.shape
    sk = np.sqrt(kappa)[:, None]
    st = np.sqrt(tau)[:, None]
    r_t = st * (tj - ti - (Ri @ tm[:, :, None])[:, :, 0])
    if metric == "chordal":
        r_rot = sk * (Rj - Ri @ Rm).reshape(m, d * d)
    else:
        E = np.swapaxes(Rm, 1, 2) @ np.swapaxes(Ri, 1, 2) @ Rj
        r_rot = sk * log_batch(E)
    return np.concatenate([r_rot, r_t], axis=1)


def edge_dist2(metric, Ri, ti, Rj, tj, Rm, tm, kappa, tau) -> np.ndarray:
    r = edge_residuals(metric, Ri, ti, Rj, tj, Rm, tm, kappa, tau)
    return np.einsum("ij,ij->i", r, r)


def edge_linearization(metric, Ri, ti, Rj, tj, Rm, tm, kappa, tau):
    """Residuals plus Jacobians ``Ji, Jj`` of shape ``(m, residual_dim, dof)``."""
    _check_metric(metric)
    m, d = ti.shape
    rd = rot_dim(d)
    p = rd + d
    G = generators(d)
    sk = np.sqrt(kappa)
    st = np.sqrt(tau)
    nr = residual_dim(metric, d)
    nrot = nr - d
    Ji = np.zeros((m, nr, p))
    Jj = np.zeros((m, nr, p))

    r_t = st[:, None] * (tj - ti - (Ri @ tm[:, :, None])[:, :, 0])
    # d r_trans / d w_i = -sqrt(tau) R_i G_k tm
    Ji[:, nrot:, :rd] = -st[:, None, None] * np.einsum("mab,kbc,mc->mak", Ri, G, tm)
    eye = np.eye(d)
    Ji[:, nrot:, rd:] = -st[:, None, None] * eye
    Jj[:, nrot:, rd:] = st[:, None, None] * eye

    if metric == "chordal":
        r_rot = sk[:, None] * (Rj - Ri @ Rm).reshape(m, d * d)
        dRj = np.einsum("mab,kbc->mack", Rj, G).reshape(m, d * d, rd)
        dRi = np.einsum("mab,kbc,mce->maek", Ri, G, Rm).reshape(m, d * d, rd)
        Jj[:, :nrot, :rd] = sk[:, None, None] * dRj
        Ji[:, :nrot, :rd] = -sk[:, None, None] * dRi
    else:
        RjT_Ri = np.swapaxes(Rj, 1, 2) @ Ri
        E = np.swapaxes(Rm, 1, 2) @ np.swapaxes(Ri, 1, 2) @ Rj
        phi = log_batch(E)
        r_rot = sk[:, None] * phi
        Jinv = right_jacobian_inv_batch(phi)
        Jj[:, :nrot, :rd] = sk[:, None, None] * Jinv
        Ji[:, :nrot, :rd] = -sk[:, None, None] * (Jinv @ RjT_Ri if d == 3 else Jinv)
    r = np.concatenate([r_rot, r_t], axis=1)
    return r, Ji, Jj
