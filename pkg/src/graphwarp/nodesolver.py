"""Sparse Levenberg-Marquardt-damped Gauss-Newton over per-node 6-dof params.

Every solver in this package (occluded-motion ARAP, refinement, warp-field
registration) minimizes a sum of squared residual terms over per-node rigid
transforms in the about-node convention. The state is (R, t) stacked arrays;
each iteration solves the damped normal equations for increments
(omega_i, dt_i) per node and retracts R_i <- exp(omega_i) R_i, t_i <- t_i + dt.

Terms produce residuals and Jacobian triplets against a fixed column layout of
6 * node + [omega_x, omega_y, omega_z, t_x, t_y, t_z]. Weights are folded into
the residuals as sqrt factors, so the energy is always r.r.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .errors import NumericalFailure, SolverDiverged
from .geometry import exp_so3


def skew_stack(y: np.ndarray) -> np.ndarray:
    """Cross-product matrices for stacked vectors: (M, 3) -> (M, 3, 3)."""
    y = np.asarray(y, dtype=float)
    S = np.zeros(y.shape[:-1] + (3, 3))
    S[..., 0, 1] = -y[..., 2]
    S[..., 0, 2] = y[..., 1]
    S[..., 1, 0] = y[..., 2]
    S[..., 1, 2] = -y[..., 0]
    S[..., 2, 0] = -y[..., 1]
    S[..., 2, 1] = y[..., 0]
    return S


def exp_so3_stack(w: np.ndarray) -> np.ndarray:
    """Vectorized Rodrigues exponential: (N, 3) axis-angle -> (N, 3, 3)."""
    w = np.asarray(w, dtype=float)
    theta = np.linalg.norm(w, axis=1)
    small = theta < 1e-12
    safe = np.where(small, 1.0, theta)
    K = skew_stack(w / safe[:, None])
    KK = K @ K
    eye = np.broadcast_to(np.eye(3), K.shape)
    R = (
        eye
        + np.sin(theta)[:, None, None] * K
        + (1.0 - np.cos(theta))[:, None, None] * KK
    )
    if np.any(small):
        Ks = skew_stack(w[small])
        R[small] = eye[small] + Ks + 0.5 * (Ks @ Ks)
    return R


def retract(R: np.ndarray, t: np.ndarray, delta: np.ndarray):
    """Apply a stacked increment vector (6N,) to the state."""
    n = len(R)
    d = delta.reshape(n, 6)
    return exp_so3_stack(d[:, :3]) @ R, t + d[:, 3:]


class PointTargetTerm:
    """sqrt(w_s) * ((p_s + t_s) - target_s) over a node subset.

    Linear in t, independent of R. Covers observation anchors, prediction data
    terms, and the motion energy (targets differ, shape does not).
    """

    def __init__(self, name, node_indices, node_positions, targets, weights):
        self.name = name
        self.idx = np.asarray(node_indices, dtype=int)
        self.p = np.asarray(node_positions, dtype=float)[self.idx]
        self.targets = np.asarray(targets, dtype=float).reshape(-1, 3)
        w = np.broadcast_to(np.asarray(weights, dtype=float), (len(self.idx),))
        self.sqrt_w = np.sqrt(w)

    def residuals(self, R, t):
        return (self.sqrt_w[:, None] * (self.p + t[self.idx] - self.targets)).ravel()

    def system(self, R, t):
        s = len(self.idx)
        r = self.sqrt_w[:, None] * (self.p + t[self.idx] - self.targets)
        rows = np.arange(3 * s)
        cols = (6 * self.idx[:, None] + 3 + np.arange(3)[None, :]).ravel()
        vals = np.repeat(self.sqrt_w, 3)
        return r.ravel(), rows, cols, vals


class RegEdgeTerm:
    """Local-rigidity residual per directed edge (j -> i).

    Standard form evaluates both transforms at the same point p_i:
        r = sqrt(lam) * (R_j (p_i - p_j) + p_j + t_j - (p_i + t_i))
    With printed_form=True the second transform is instead evaluated at p_j
    (the form penalizing unequal node positions even under identity maps):
        r = sqrt(lam) * (R_j (p_i - p_j) + p_j + t_j - (R_i (p_j - p_i) + p_i + t_i))
    """

    def __init__(self, name, node_positions, edge_pairs, lam, printed_form=False):
        self.name = name
        self.pos = np.asarray(node_positions, dtype=float)
        self.edges = np.asarray(edge_pairs, dtype=int).reshape(-1, 2)
        self.sqrt_lam = float(np.sqrt(lam))
        self.printed_form = printed_form

    def _residual_vectors(self, R, t):
        j = self.edges[:, 0]
        i = self.edges[:, 1]
        dj = self.pos[i] - self.pos[j]
        yj = np.einsum("eab,eb->ea", R[j], dj)
        if self.printed_form:
            yi = np.einsum("eab,eb->ea", R[i], -dj)
            r = self.sqrt_lam * (yj + self.pos[j] + t[j] - (yi + self.pos[i] + t[i]))
        else:
            r = self.sqrt_lam * (yj + self.pos[j] + t[j] - (self.pos[i] + t[i]))
        return r, yj

    def residuals(self, R, t):
        if len(self.edges) == 0:
            return np.zeros(0)
        return self._residual_vectors(R, t)[0].ravel()

    def system(self, R, t):
        e = len(self.edges)
        if e == 0:
            z = np.zeros(0)
            return z, z.astype(int), z.astype(int), z
        j = self.edges[:, 0]
        i = self.edges[:, 1]
        r, yj = self._residual_vectors(R, t)

        row_base = 3 * np.arange(e)
        rows_list, cols_list, vals_list = [], [], []

        # d r / d omega_j = -skew(yj)
        Jw = -self.sqrt_lam * skew_stack(yj)
        rr = (row_base[:, None, None] + np.arange(3)[None, :, None]).repeat(3, axis=2)
        cc = (6 * j[:, None, None] + np.arange(3)[None, None, :]).repeat(3, axis=1)
        rows_list.append(rr.ravel())
        cols_list.append(cc.ravel())
        vals_list.append(Jw.ravel())

        # d r / d t_j = +I, d r / d t_i = -I
        diag = np.arange(3)
        for nodes, sign in ((j, 1.0), (i, -1.0)):
            rows_list.append((row_base[:, None] + diag[None, :]).ravel())
            cols_list.append((6 * nodes[:, None] + 3 + diag[None, :]).ravel())
            vals_list.append(np.full(3 * e, sign * self.sqrt_lam))

        if self.printed_form:
            # d r / d omega_i = +skew(yi)
            yi = np.einsum("eab,eb->ea", R[i], self.pos[j] - self.pos[i])
            Jwi = self.sqrt_lam * skew_stack(yi)
            cc_i = (6 * i[:, None, None] + np.arange(3)[None, None, :]).repeat(3, axis=1)
            rows_list.append(rr.ravel())
            cols_list.append(cc_i.ravel())
            vals_list.append(Jwi.ravel())

        return (
            r.ravel(),
            np.concatenate(rows_list),
            np.concatenate(cols_list),
            np.concatenate(vals_list),
        )


class BlendedPointTerm:
    """Base for terms driven by warped (anchor-blended) vertex positions."""

    def __init__(self, skinned, node_positions):
        self.anchors = skinned.anchors
        self.blend_w = skinned.weights
        self.verts = skinned.positions
        self.anchor_pos = np.asarray(node_positions, dtype=float)[self.anchors]
        self.local = self.verts[:, None, :] - self.anchor_pos  # (V, K, 3)

    def warp(self, R, t):
        Ra = R[self.anchors]  # (V, K, 3, 3)
        rotated = np.einsum("vkab,vkb->vka", Ra, self.local)
        per_anchor = rotated + self.anchor_pos + t[self.anchors]
        warped = (self.blend_w[:, :, None] * per_anchor).sum(axis=1)
        return warped, rotated


class DepthPlaneTerm(BlendedPointTerm):
    """sqrt(lam) * n . (v' - u) point-to-plane residual per correspondence."""

    def __init__(self, name, skinned, node_positions, targets, normals, lam):
        super().__init__(skinned, node_positions)
        self.name = name
        self.targets = np.asarray(targets, dtype=float).reshape(-1, 3)
        self.normals = np.asarray(normals, dtype=float).reshape(-1, 3)
        self.sqrt_lam = float(np.sqrt(lam))

    def residuals(self, R, t):
        warped, _ = self.warp(R, t)
        return self.sqrt_lam * ((warped - self.targets) * self.normals).sum(axis=1)

    def system(self, R, t):
        v, k = self.anchors.shape
        warped, rotated = self.warp(R, t)
        r = self.sqrt_lam * ((warped - self.targets) * self.normals).sum(axis=1)

        # d r / d t_a = w_a n ; d r / d omega_a = -w_a n^T skew(rotated_a)
        n_exp = self.normals[:, None, :]  # (V, 1, 3)
        Jt = self.sqrt_lam * self.blend_w[:, :, None] * n_exp  # (V, K, 3)
        cross = np.cross(rotated, np.broadcast_to(n_exp, rotated.shape))
        Jw = self.sqrt_lam * self.blend_w[:, :, None] * cross  # n.(-skew(y)) = (y x n)

        rows = np.repeat(np.arange(v), k * 6)
        cols = (6 * self.anchors[:, :, None] + np.arange(6)[None, None, :]).ravel()
        vals = np.concatenate([Jw[..., None, :], Jt[..., None, :]], axis=2).ravel()
        return r, rows, cols, vals


class PixelTerm(BlendedPointTerm):
    """sqrt(lam) * (proj(v') - proj(u)) residual, 2 rows per correspondence.

    Pairs whose warped vertex has non-positive depth at the current state are
    skipped (zero residual rows); the skip count is exposed for reporting.
    """

    def __init__(self, name, skinned, node_positions, target_pixels, cam, lam):
        super().__init__(skinned, node_positions)
        self.name = name
        self.target_px = np.asarray(target_pixels, dtype=float).reshape(-1, 2)
        self.cam = cam
        self.sqrt_lam = float(np.sqrt(lam))
        self.skipped = 0

    def _residual_parts(self, warped):
        v = len(warped)
        z = warped[:, 2]
        ok = z > 1e-9
        self.skipped = int(np.count_nonzero(~ok))
        zs = np.where(ok, z, 1.0)
        u = self.cam.fx * warped[:, 0] / zs + self.cam.cx
        w_px = self.cam.fy * warped[:, 1] / zs + self.cam.cy
        r = np.zeros((v, 2))
        r[ok, 0] = u[ok] - self.target_px[ok, 0]
        r[ok, 1] = w_px[ok] - self.target_px[ok, 1]
        r *= self.sqrt_lam
        return r, ok, zs

    def residuals(self, R, t):
        warped, _ = self.warp(R, t)
        return self._residual_parts(warped)[0].ravel()

    def system(self, R, t):
        v, k = self.anchors.shape
        warped, rotated = self.warp(R, t)
        r, ok, zs = self._residual_parts(warped)

        # projection Jacobian dPi/dv' (V, 2, 3)
        P = np.zeros((v, 2, 3))
        P[:, 0, 0] = self.cam.fx / zs
        P[:, 0, 2] = -self.cam.fx * warped[:, 0] / zs**2
        P[:, 1, 1] = self.cam.fy / zs
        P[:, 1, 2] = -self.cam.fy * warped[:, 1] / zs**2
        P[~ok] = 0.0

        # dv'/d omega_a = -w_a skew(rotated_a); dv'/d t_a = w_a I
        Sk = skew_stack(rotated)  # (V, K, 3, 3)
        Jw = -np.einsum("vrc,vkcd->vkrd", P, Sk)  # (V, K, 2, 3)
        Jt = np.broadcast_to(P[:, None, :, :], (v, k, 2, 3))
        J = np.concatenate([Jw, Jt], axis=3) * self.blend_w[:, :, None, None]
        J *= self.sqrt_lam

        rows = (2 * np.arange(v))[:, None, None, None] + np.arange(2)[None, None, :, None]
        rows = np.broadcast_to(rows, (v, k, 2, 6)).ravel()
        cols = 6 * self.anchors[:, :, None, None] + np.arange(6)[None, None, None, :]
        cols = np.broadcast_to(cols, (v, k, 2, 6)).ravel()
        return r.ravel(), rows, cols, J.ravel()


@dataclass
class SolveReport:
    """Accepted-state energy trace; entry 0 is the initialization."""

    energies: list
    term_energies: list  # list of dict, aligned with energies
    iterations: int
    converged: bool

    def to_dict(self) -> dict:
        return {
            "energies": [float(e) for e in self.energies],
            "term_energies": [
                {k: float(v) for k, v in te.items()} for te in self.term_energies
            ],
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
        }


def _assemble(terms, R, t, n_params):
    parts = [term.system(R, t) for term in terms]
    offsets = np.cumsum([0] + [len(p[0]) for p in parts])
    r = np.concatenate([p[0] for p in parts]) if parts else np.zeros(0)
    rows = np.concatenate(
        [p[1] + offsets[k] for k, p in enumerate(parts)]
    ) if parts else np.zeros(0, dtype=int)
    cols = np.concatenate([p[2] for p in parts]) if parts else np.zeros(0, dtype=int)
    vals = np.concatenate([p[3] for p in parts]) if parts else np.zeros(0)
    J = sp.coo_matrix((vals, (rows, cols)), shape=(len(r), n_params)).tocsr()
    per_term = {
        term.name: float(p[0] @ p[0]) for term, p in zip(terms, parts)
    }
    return r, J, per_term


def energy_of(terms, R, t) -> tuple:
    """Total energy and per-term energies at a state (no Jacobians)."""
    per_term = {}
    total = 0.0
    for term in terms:
        r = term.residuals(R, t)
        e = float(r @ r)
        per_term[term.name] = e
        total += e
    return total, per_term


def solve_gauss_newton(
    terms,
    R0: np.ndarray,
    t0: np.ndarray,
    max_iters: int = 10,
    damping: float = 1e-4,
    rel_tol: float = 1e-6,
    max_retries: int = 12,
):
    """Minimize the stacked squared residuals of `terms` from (R0, t0).

    Damping is multiplied by 10 after a rejected step and divided by 10 after
    an accepted one. Accepted steps never increase the energy; if no step can
    be accepted and the last attempted increment is not negligible, the solve
    is declared diverged.
    """
    R = np.array(R0, dtype=float, copy=True)
    t = np.array(t0, dtype=float, copy=True)
    n = len(R)
    n_params = 6 * n

    total, per_term = energy_of(terms, R, t)
    if not np.isfinite(total):
        raise NumericalFailure("initial energy is not finite")
    energies = [total]
    term_energies = [per_term]
    mu = float(damping)
    converged = False
    iterations = 0

    for _ in range(max_iters):
        if total <= 1e-30:
            converged = True
            break
        r, J, _ = _assemble(terms, R, t, n_params)
        g = J.T @ r
        H = (J.T @ J).tocsc()
        diag = np.maximum(H.diagonal(), 1e-9)
        accepted = False
        delta = None
        for _retry in range(max_retries):
            A = H + sp.diags(mu * diag)
            try:
                delta = spsolve(A, -g)
            except Exception:
                mu *= 10.0
                continue
            if not np.all(np.isfinite(delta)):
                mu *= 10.0
                continue
            R_new, t_new = retract(R, t, delta)
            total_new, per_term_new = energy_of(terms, R_new, t_new)
            if np.isfinite(total_new) and total_new <= total:
                R, t = R_new, t_new
                decrease = total - total_new
                total, per_term = total_new, per_term_new
                energies.append(total)
                term_energies.append(per_term)
                mu = max(mu / 10.0, 1e-12)
                accepted = True
                iterations += 1
                if decrease < rel_tol * max(total, 1e-30):
                    converged = True
                break
            mu *= 10.0
        if not accepted:
            if delta is not None and np.max(np.abs(delta)) < 1e-12:
                converged = True
                break
            raise SolverDiverged(
                f"no energy-decreasing step found after {max_retries} damping retries"
            )
        if converged:
            break

    report = SolveReport(energies, term_energies, iterations, converged)
    return R, t, report
