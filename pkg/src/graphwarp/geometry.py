"""Core 3D geometry: SE(3) transforms, pinhole camera, weighted rigid alignment.

Points and motions are plain numpy arrays: a single point is shape (3,),
a point set is (N, 3), everything in meters, float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BehindCamera, DegenerateConfiguration, NonpositiveDepth

ORTHONORMALITY_TOL = 1e-9


def skew(v: np.ndarray) -> np.ndarray:
    """Cross-product matrix: skew(v) @ x == cross(v, x)."""
    return np.array(
        [
            [0.0, -v[2], v[1]],
            [v[2], 0.0, -v[0]],
            [-v[1], v[0], 0.0],
        ]
    )


def exp_so3(w: np.ndarray) -> np.ndarray:
    """Rodrigues exponential of an axis-angle vector (3,) -> rotation (3,3)."""
    w = np.asarray(w, dtype=float)
    theta = float(np.linalg.norm(w))
    if theta < 1e-12:
        # second-order series keeps the result orthonormal to machine precision
        K = skew(w)
        return np.eye(3) + K + 0.5 * (K @ K)
    axis = w / theta
    K = skew(axis)
    return np.eye(3) + np.sin(theta) * K + (1.0 - np.cos(theta)) * (K @ K)


def rotation_about_axis(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rotation matrix for a right-handed rotation of `angle` radians about `axis`."""
    axis = np.asarray(axis, dtype=float)
    n = np.linalg.norm(axis)
    if n == 0.0:
        raise ValueError("rotation axis must be nonzero")
    return exp_so3(axis / n * angle)


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Element of SE(3): p -> rotation @ p + translation.

    rotation must be orthonormal with determinant +1 (checked to 1e-9).
    """

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if R.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {R.shape}")
        err = np.abs(R.T @ R - np.eye(3)).max()
        det = np.linalg.det(R)
        if err > ORTHONORMALITY_TOL or abs(det - 1.0) > ORTHONORMALITY_TOL:
            raise ValueError(
                f"rotation is not in SO(3): |R^T R - I|={err:.3g}, det={det:.12g}"
            )
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_translation(cls, t) -> "RigidTransform":
        return cls(np.eye(3), np.asarray(t, dtype=float))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Apply to a point (3,) or point set (N, 3)."""
        p = np.asarray(points, dtype=float)
        return p @ self.rotation.T + self.translation

    def inverse(self) -> "RigidTransform":
        Rt = self.rotation.T
        return RigidTransform(Rt, -Rt @ self.translation)


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Composition a∘b: (a∘b)(p) = a(b(p))."""
    return RigidTransform(
        a.rotation @ b.rotation, a.rotation @ b.translation + a.translation
    )


def rigid_fit(src: np.ndarray, dst: np.ndarray, weights=None) -> RigidTransform:
    """Weighted least-squares rigid alignment T minimizing sum w_i |T(src_i) - dst_i|^2.

    SVD-based closed form (Kabsch/Umeyama, scale fixed to 1); a reflection in
    the optimum is corrected by flipping the smallest singular direction.

    Raises DegenerateConfiguration when fewer than 3 effectively non-collinear
    points carry positive weight; callers may then fall back to a
    translation-only fit.
    """
    src = np.asarray(src, dtype=float).reshape(-1, 3)
    dst = np.asarray(dst, dtype=float).reshape(-1, 3)
    if src.shape != dst.shape:
        raise ValueError(f"src {src.shape} and dst {dst.shape} differ")
    if weights is None:
        w = np.ones(len(src))
    else:
        w = np.asarray(weights, dtype=float).reshape(-1)
        if len(w) != len(src):
            raise ValueError("weights length does not match point count")
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
    active = w > 0
    if np.count_nonzero(active) < 3:
        raise DegenerateConfiguration(
            f"rigid fit needs >=3 weighted points, got {np.count_nonzero(active)}"
        )
    wa = w[active]
    sa = src[active]
    da = dst[active]
    wsum = wa.sum()
    src_mean = (wa[:, None] * sa).sum(axis=0) / wsum
    dst_mean = (wa[:, None] * da).sum(axis=0) / wsum
    sc = sa - src_mean
    dc = da - dst_mean

    # collinearity check on the source scatter: a rotation about the line is
    # unobservable, so the problem is rank deficient
    scatter = (wa[:, None] * sc).T @ sc
    eig = np.linalg.eigvalsh(scatter)
    if eig[-1] <= 0 or eig[1] / eig[-1] < 1e-10:
        raise DegenerateConfiguration("source points are collinear or coincident")

    H = (wa[:, None] * sc).T @ dc
    U, _, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    R = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T
    t = dst_mean - R @ src_mean
    return RigidTransform(R, t)


def translation_fit(src: np.ndarray, dst: np.ndarray, weights=None) -> RigidTransform:
    """Translation-only fallback: identity rotation, weighted mean displacement."""
    src = np.asarray(src, dtype=float).reshape(-1, 3)
    dst = np.asarray(dst, dtype=float).reshape(-1, 3)
    if weights is None:
        w = np.ones(len(src))
    else:
        w = np.asarray(weights, dtype=float).reshape(-1)
    if w.sum() <= 0:
        raise DegenerateConfiguration("translation fit needs positive total weight")
    t = (w[:, None] * (dst - src)).sum(axis=0) / w.sum()
    return RigidTransform(np.eye(3), t)


@dataclass(frozen=True)
class Camera:
    """Pinhole intrinsics. Right-handed, +z forward, image origin top-left."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    def to_dict(self) -> dict:
        return {
            "fx": float(self.fx),
            "fy": float(self.fy),
            "cx": float(self.cx),
            "cy": float(self.cy),
            "width": int(self.width),
            "height": int(self.height),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Camera":
        return cls(d["fx"], d["fy"], d["cx"], d["cy"], int(d["width"]), int(d["height"]))


def project(cam: Camera, p: np.ndarray) -> np.ndarray:
    """Project a point (3,) or points (N,3) with z > 0 to pixels (u, v).

    Raises BehindCamera if any z <= 0.
    """
    pts = np.asarray(p, dtype=float)
    single = pts.ndim == 1
    pts = pts.reshape(-1, 3)
    z = pts[:, 2]
    if np.any(z <= 0):
        raise BehindCamera(f"{int(np.count_nonzero(z <= 0))} point(s) with z <= 0")
    uv = np.empty((len(pts), 2))
    uv[:, 0] = cam.fx * pts[:, 0] / z + cam.cx
    uv[:, 1] = cam.fy * pts[:, 1] / z + cam.cy
    return uv[0] if single else uv


def backproject(cam: Camera, u, v, depth) -> np.ndarray:
    """Inverse of project: pixel (u, v) at `depth` meters -> point in camera frame.

    Accepts scalars or equally shaped arrays; raises NonpositiveDepth if any
    depth <= 0.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    d = np.asarray(depth, dtype=float)
    if np.any(d <= 0):
        raise NonpositiveDepth("backprojection needs depth > 0")
    x = (u - cam.cx) / cam.fx * d
    y = (v - cam.cy) / cam.fy * d
    out = np.stack([x, y, d], axis=-1)
    return out


def look_at(eye: np.ndarray, target: np.ndarray, up=(0.0, 1.0, 0.0)) -> RigidTransform:
    """World-to-camera transform for a camera at `eye` looking at `target`.

    Camera convention: +z forward, +x right, +y down (image origin top-left),
    so `up` is the world up direction mapped to -y.
    """
    eye = np.asarray(eye, dtype=float)
    target = np.asarray(target, dtype=float)
    fwd = target - eye
    n = np.linalg.norm(fwd)
    if n == 0:
        raise ValueError("eye and target coincide")
    fwd = fwd / n
    upv = np.asarray(up, dtype=float)
    right = np.cross(fwd, upv)
    rn = np.linalg.norm(right)
    if rn < 1e-12:
        # forward is parallel to up; pick another up
        upv = np.array([1.0, 0.0, 0.0])
        right = np.cross(fwd, upv)
        rn = np.linalg.norm(right)
    right = right / rn
    down = np.cross(fwd, right)
    R = np.stack([right, down, fwd], axis=0)
    return RigidTransform(R, -R @ eye)
