"""Point-splat z-buffer rendering.

Points are projected and splatted into a square window of half-width
`splat_radius` pixels; each covered pixel keeps the smallest depth and the
index of the point that produced it. Dependency-free and adequate at desk
scale; no mesh rasterization.
"""

from __future__ import annotations

import numpy as np

from .geometry import Camera


def splat_points(
    points: np.ndarray, cam: Camera, splat_radius: int = 1
) -> tuple[np.ndarray, np.ndarray]:
    """Render points (N, 3) in the camera frame to (depth, index) buffers.

    depth: (H, W) float64, 0 where nothing was hit.
    index: (H, W) int64, -1 where nothing was hit, else the winning point id.
    Points with z <= 0 are ignored.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    depth = np.zeros((cam.height, cam.width))
    index = np.full((cam.height, cam.width), -1, dtype=np.int64)

    front = pts[:, 2] > 0
    if not np.any(front):
        return depth, index
    ids = np.flatnonzero(front)
    p = pts[front]
    z = p[:, 2]
    u = cam.fx * p[:, 0] / z + cam.cx
    v = cam.fy * p[:, 1] / z + cam.cy
    px = np.rint(u).astype(int)
    py = np.rint(v).astype(int)

    big = np.full((cam.height, cam.width), np.inf)
    winner = np.full((cam.height, cam.width), -1, dtype=np.int64)
    r = int(splat_radius)
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            qx = px + dx
            qy = py + dy
            ok = (qx >= 0) & (qx < cam.width) & (qy >= 0) & (qy < cam.height)
            if not np.any(ok):
                continue
            flat = qy[ok] * cam.width + qx[ok]
            zo = z[ok]
            io = ids[ok]
            # keep the nearest point per pixel; ties resolve to the lowest
            # point index because lexsort orders by (pixel, depth, id)
            order = np.lexsort((io, zo, flat))
            flat = flat[order]
            zo = zo[order]
            io = io[order]
            first = np.ones(len(flat), dtype=bool)
            first[1:] = flat[1:] != flat[:-1]
            fy, fx2 = np.divmod(flat[first], cam.width)
            better = zo[first] < big[fy, fx2]
            big[fy[better], fx2[better]] = zo[first][better]
            winner[fy[better], fx2[better]] = io[first][better]

    hit = np.isfinite(big)
    depth[hit] = big[hit]
    index[hit] = winner[hit]
    return depth, index
