"""Metrics: 3D end-point error (mm) and depth-alignment geometry error (cm)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CountMismatch, EmptySelection, NoValidVertices
from .geometry import Camera, backproject


def epe(pred: np.ndarray, gt: np.ndarray, mask=None) -> float:
    """Mean end-point error over the selected nodes, in millimeters."""
    pred = np.asarray(pred, dtype=float).reshape(-1, 3)
    gt = np.asarray(gt, dtype=float).reshape(-1, 3)
    if len(pred) != len(gt):
        raise CountMismatch(f"pred ({len(pred)}) and gt ({len(gt)}) lengths differ")
    if mask is None:
        sel = np.ones(len(pred), dtype=bool)
    else:
        sel = np.asarray(mask)
        if sel.dtype != bool:
            tmp = np.zeros(len(pred), dtype=bool)
            tmp[np.asarray(sel, dtype=int)] = True
            sel = tmp
        if len(sel) != len(pred):
            raise CountMismatch("mask length != node count")
    if not np.any(sel):
        raise EmptySelection("no nodes selected for EPE")
    return float(np.linalg.norm(pred[sel] - gt[sel], axis=1).mean() * 1000.0)


def geometry_error(
    warped_vertices: np.ndarray,
    depth: np.ndarray,
    cam: Camera,
    visibility_tol: float = 0.05,
) -> float:
    """Mean absolute point-to-plane distance of visible warped vertices to the
    backprojected depth surface at their pixels, in centimeters.

    A vertex counts when it projects in-bounds onto valid depth (with a valid
    central-difference normal stencil) and is not occluded by more than
    `visibility_tol`. Raises NoValidVertices when nothing qualifies.
    """
    verts = np.asarray(warped_vertices, dtype=float).reshape(-1, 3)
    depth = np.asarray(depth, dtype=float)
    h, w = depth.shape

    z = verts[:, 2]
    front = z > 0
    u = np.zeros(len(verts))
    v = np.zeros(len(verts))
    u[front] = cam.fx * verts[front, 0] / z[front] + cam.cx
    v[front] = cam.fy * verts[front, 1] / z[front] + cam.cy
    px = np.rint(u).astype(int)
    py = np.rint(v).astype(int)
    ok = front & (px >= 1) & (px < w - 1) & (py >= 1) & (py < h - 1)

    pxc = np.clip(px, 1, w - 2)
    pyc = np.clip(py, 1, h - 2)
    d_c = depth[pyc, pxc]
    d_l = depth[pyc, pxc - 1]
    d_r = depth[pyc, pxc + 1]
    d_u = depth[pyc - 1, pxc]
    d_d = depth[pyc + 1, pxc]
    ok &= (d_c > 0) & (d_l > 0) & (d_r > 0) & (d_u > 0) & (d_d > 0)
    ok &= z <= d_c + visibility_tol
    if not np.any(ok):
        raise NoValidVertices("no warped vertex lands on valid depth")

    idx = np.flatnonzero(ok)
    tx = pxc[idx].astype(float)
    ty = pyc[idx].astype(float)
    surf = backproject(cam, tx, ty, d_c[idx])
    p_r = backproject(cam, tx + 1, ty, d_r[idx])
    p_l = backproject(cam, tx - 1, ty, d_l[idx])
    p_d = backproject(cam, tx, ty + 1, d_d[idx])
    p_u = backproject(cam, tx, ty - 1, d_u[idx])
    normals = np.cross(p_r - p_l, p_d - p_u)
    nn = np.linalg.norm(normals, axis=1)
    good = nn > 1e-12
    if not np.any(good):
        raise NoValidVertices("all normals degenerate")
    normals = normals[good] / nn[good, None]
    dist = np.abs(((verts[idx[good]] - surf[good]) * normals).sum(axis=1))
    return float(dist.mean() * 100.0)


@dataclass
class FrameMetrics:
    frame: int
    epe_occluded_mm: float | None = None
    epe_all_mm: float | None = None
    geometry_error_cm: float | None = None
    occluded_count: int = 0

    def to_dict(self) -> dict:
        return {
            "frame": int(self.frame),
            "epe_occluded_mm": None
            if self.epe_occluded_mm is None
            else float(self.epe_occluded_mm),
            "epe_all_mm": None if self.epe_all_mm is None else float(self.epe_all_mm),
            "geometry_error_cm": None
            if self.geometry_error_cm is None
            else float(self.geometry_error_cm),
            "occluded_count": int(self.occluded_count),
        }


@dataclass
class EvalReport:
    """Per-frame metrics with aggregates recomputable from the entries."""

    frames: list
    config: dict = field(default_factory=dict)

    def aggregate(self) -> dict:
        out = {}
        for key in ("epe_occluded_mm", "epe_all_mm", "geometry_error_cm"):
            values = [
                getattr(f, key) for f in self.frames if getattr(f, key) is not None
            ]
            if values:
                out[key] = {"mean": float(np.mean(values)), "max": float(np.max(values))}
        return out

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "frames": [f.to_dict() for f in self.frames],
            "aggregate": self.aggregate(),
        }
