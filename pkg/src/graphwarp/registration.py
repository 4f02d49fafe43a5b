"""Confidence-guided warp-field optimization against depth/flow observations.

The total energy over per-node transforms is

    E = lam_depth * E_depth + lam_motion * E_motion + lam_2d * E_2d + lam_reg * E_reg

with point-to-plane depth alignment, a per-node prediction term weighted by
the confidence weight, reprojection consistency in pixels, and the
local-rigidity regularizer. Minimized by damped Gauss-Newton on sparse normal
equations (see nodesolver).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BehindCamera,
    CountMismatch,
    DegenerateConfiguration,
    DimensionMismatch,
    GraphMismatch,
)
from .geometry import Camera, backproject, project, rigid_fit, translation_fit
from .losses import WeightParams, motion_weights
from .motion import MotionPrediction
from .nodesolver import (
    DepthPlaneTerm,
    PixelTerm,
    PointTargetTerm,
    RegEdgeTerm,
    energy_of,
    solve_gauss_newton,
)
from .raster import splat_points
from .synthetic import compute_visibility
from .warp import SkinnedSet, WarpField, warp_points

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EnergyWeights:
    lambda_depth: float = 1.0
    lambda_motion: float = 2.0
    lambda_2d: float = 1e-6
    lambda_reg: float = 5.0

    def __post_init__(self):
        for name in ("lambda_depth", "lambda_motion", "lambda_2d", "lambda_reg"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")

    def to_dict(self) -> dict:
        return {
            "lambda_depth": float(self.lambda_depth),
            "lambda_motion": float(self.lambda_motion),
            "lambda_2d": float(self.lambda_2d),
            "lambda_reg": float(self.lambda_reg),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EnergyWeights":
        kwargs = {k: float(v) for k, v in d.items() if k.startswith("lambda_")}
        return cls(**kwargs)


@dataclass(frozen=True)
class SolverParams:
    max_iters: int = 10
    damping: float = 1e-4
    rel_tol: float = 1e-6

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.damping < 0:
            raise ValueError("damping must be nonnegative")


class CorrespondenceSet:
    """Pairs of (skinned canonical vertex, target point, target unit normal)."""

    def __init__(self, skinned: SkinnedSet, targets, normals, camera: Camera, dropped=None):
        self.skinned = skinned
        self.targets = np.asarray(targets, dtype=float).reshape(-1, 3)
        self.normals = np.asarray(normals, dtype=float).reshape(-1, 3)
        self.camera = camera
        self.dropped = dict(dropped or {})
        if len(self.targets) != len(skinned) or len(self.normals) != len(skinned):
            raise CountMismatch("correspondence arrays have different lengths")
        if len(self.targets):
            norms = np.linalg.norm(self.normals, axis=1)
            if np.abs(norms - 1.0).max() > 1e-6:
                raise ValueError("target normals must be unit length")
            if np.any(self.targets[:, 2] <= 0):
                raise ValueError("targets must have positive depth")

    def __len__(self):
        return len(self.targets)


def e_depth(field: WarpField, corr: CorrespondenceSet) -> float:
    """Point-to-plane alignment energy: sum (n . (v' - u))^2."""
    if len(corr) == 0:
        return 0.0
    warped = warp_points(field, corr.skinned)
    return float((((warped - corr.targets) * corr.normals).sum(axis=1) ** 2).sum())


def e_motion(
    field_prev: WarpField,
    field_cur: WarpField,
    prediction: MotionPrediction,
    weights: np.ndarray,
) -> float:
    """Prediction-consistency energy: sum w_i |T_i^t p_i - (T_i^{t-1} p_i + mu_i)|^2."""
    if field_prev.graph.num_nodes != field_cur.graph.num_nodes or not np.array_equal(
        field_prev.graph.positions, field_cur.graph.positions
    ):
        raise GraphMismatch("fields live on different graphs")
    if len(prediction) != field_cur.graph.num_nodes:
        raise CountMismatch("prediction length != node count")
    w = np.broadcast_to(np.asarray(weights, dtype=float), (len(prediction),))
    diff = field_cur.node_positions() - (field_prev.node_positions() + prediction.mu)
    return float((w * (diff**2).sum(axis=1)).sum())


def e_2d(field: WarpField, corr: CorrespondenceSet, cam: Camera) -> float:
    """Reprojection energy in pixels^2: sum |proj(v') - proj(u)|^2.

    Warped vertices behind the camera are skipped; if more than 10% of pairs
    get skipped a warning is logged.
    """
    if len(corr) == 0:
        return 0.0
    warped = warp_points(field, corr.skinned)
    ok = warped[:, 2] > 0
    skipped = int(np.count_nonzero(~ok))
    if skipped > 0.1 * len(corr):
        logger.warning("e_2d: %d/%d pairs behind the camera", skipped, len(corr))
    pv = project(cam, warped[ok])
    pu = project(cam, corr.targets[ok])
    return float(((pv - pu) ** 2).sum())


def e_reg(field: WarpField, printed_form: bool = False) -> float:
    """Local-rigidity energy over all directed graph edges.

    Default evaluates both node transforms at the same point p_i, so any
    global rigid field has zero energy. printed_form=True evaluates the second
    transform at p_j instead (kept for comparison; nonzero for static unequal
    node positions).
    """
    edges = field.graph.edge_array()
    if len(edges) == 0:
        return 0.0
    term = RegEdgeTerm("reg", field.graph.positions, edges, 1.0, printed_form)
    r = term.system(field.rotations, field.translations)[0]
    return float(r @ r)


def _masked_bilinear(raster: np.ndarray, valid: np.ndarray, u: np.ndarray, v: np.ndarray):
    """Bilinear lookup of a (H, W, C) raster restricted to valid pixels.

    Returns (values (M, C), ok (M,)); ok is False where every neighbor with
    nonzero bilinear weight is invalid or out of bounds.
    """
    h, w = raster.shape[:2]
    x0 = np.floor(u).astype(int)
    y0 = np.floor(v).astype(int)
    fx = u - x0
    fy = v - y0
    vals = np.zeros((len(u), raster.shape[2]))
    wsum = np.zeros(len(u))
    for dy in (0, 1):
        for dx in (0, 1):
            wgt = (fx if dx else 1.0 - fx) * (fy if dy else 1.0 - fy)
            xs = x0 + dx
            ys = y0 + dy
            ok = (xs >= 0) & (xs < w) & (ys >= 0) & (ys < h)
            xs_c = np.clip(xs, 0, w - 1)
            ys_c = np.clip(ys, 0, h - 1)
            ok &= valid[ys_c, xs_c]
            wgt = np.where(ok, wgt, 0.0)
            vals += wgt[:, None] * raster[ys_c, xs_c]
            wsum += wgt
    good = wsum > 1e-12
    vals[good] /= wsum[good, None]
    return vals, good


def build_correspondences(
    field_prev: WarpField,
    skinned: SkinnedSet,
    flow: np.ndarray,
    depth_cur: np.ndarray,
    cam: Camera,
    visibility_tol: float = 0.02,
    splat_radius: int = 1,
    max_distance: float | None = 0.05,
) -> CorrespondenceSet:
    """Correspondences for one frame from dense flow and the current depth.

    The warped canonical model is rendered to the previous view; each visible
    vertex looks up the flow at its projected pixel (masked bilinear), lands on
    the target pixel, and is paired with the backprojected current depth there,
    carrying the depth image's local normal (central differences). Pairs with
    invalid depth, out-of-bounds targets, or degenerate normals are dropped and
    counted, as are pairs whose target sits more than max_distance from the
    warped vertex (a vertex that slid behind an occluder between the frames
    otherwise grabs the occluder's surface).
    """
    flow = np.asarray(flow, dtype=float)
    depth_cur = np.asarray(depth_cur, dtype=float)
    if flow.shape[:2] != (cam.height, cam.width) or flow.shape[2] != 2:
        raise DimensionMismatch(f"flow shape {flow.shape} != camera {cam.height}x{cam.width}x2")
    if depth_cur.shape != (cam.height, cam.width):
        raise DimensionMismatch(
            f"depth shape {depth_cur.shape} != camera {cam.height}x{cam.width}"
        )

    dropped = {
        "invisible": 0,
        "no_flow": 0,
        "out_of_bounds": 0,
        "invalid_depth": 0,
        "bad_normal": 0,
        "too_far": 0,
    }

    warped = warp_points(field_prev, skinned)
    mdepth, _ = splat_points(warped, cam, splat_radius)
    visible = compute_visibility(warped, mdepth, cam, visibility_tol)
    dropped["invisible"] = int(np.count_nonzero(~visible))
    idx = np.flatnonzero(visible)
    if len(idx) == 0:
        return CorrespondenceSet(
            skinned.subset(idx), np.zeros((0, 3)), np.zeros((0, 3)), cam, dropped
        )

    uv = project(cam, warped[idx])
    flow_vals, has_flow = _masked_bilinear(flow, mdepth > 0, uv[:, 0], uv[:, 1])
    dropped["no_flow"] = int(np.count_nonzero(~has_flow))
    idx = idx[has_flow]
    target_px = uv[has_flow] + flow_vals[has_flow]

    tx = np.rint(target_px[:, 0]).astype(int)
    ty = np.rint(target_px[:, 1]).astype(int)
    # the normal stencil needs the four neighbors in bounds as well
    inb = (tx >= 1) & (tx < cam.width - 1) & (ty >= 1) & (ty < cam.height - 1)
    dropped["out_of_bounds"] = int(np.count_nonzero(~inb))
    idx, target_px, tx, ty = idx[inb], target_px[inb], tx[inb], ty[inb]

    d_c = depth_cur[ty, tx]
    d_l = depth_cur[ty, tx - 1]
    d_r = depth_cur[ty, tx + 1]
    d_u = depth_cur[ty - 1, tx]
    d_d = depth_cur[ty + 1, tx]
    ok_depth = (d_c > 0) & (d_l > 0) & (d_r > 0) & (d_u > 0) & (d_d > 0)
    dropped["invalid_depth"] = int(np.count_nonzero(~ok_depth))
    idx, target_px, tx, ty = idx[ok_depth], target_px[ok_depth], tx[ok_depth], ty[ok_depth]
    if len(idx) == 0:
        return CorrespondenceSet(
            skinned.subset(idx), np.zeros((0, 3)), np.zeros((0, 3)), cam, dropped
        )

    targets = backproject(cam, target_px[:, 0], target_px[:, 1], depth_cur[ty, tx])
    p_r = backproject(cam, tx + 1.0, ty.astype(float), depth_cur[ty, tx + 1])
    p_l = backproject(cam, tx - 1.0, ty.astype(float), depth_cur[ty, tx - 1])
    p_d = backproject(cam, tx.astype(float), ty + 1.0, depth_cur[ty + 1, tx])
    p_u = backproject(cam, tx.astype(float), ty - 1.0, depth_cur[ty - 1, tx])
    normals = np.cross(p_r - p_l, p_d - p_u)
    nn = np.linalg.norm(normals, axis=1)
    ok_n = nn > 1e-12
    dropped["bad_normal"] = int(np.count_nonzero(~ok_n))
    idx, targets, normals, nn = idx[ok_n], targets[ok_n], normals[ok_n], nn[ok_n]
    normals = normals / nn[:, None]
    # orient toward the camera for consistency
    flip = normals[:, 2] > 0
    normals[flip] = -normals[flip]

    if max_distance is not None:
        near = np.linalg.norm(targets - warped[idx], axis=1) <= max_distance
        dropped["too_far"] = int(np.count_nonzero(~near))
        idx, targets, normals = idx[near], targets[near], normals[near]

    return CorrespondenceSet(skinned.subset(idx), targets, normals, cam, dropped)


@dataclass
class EnergyReport:
    """Per-term energies along the accepted iterations of one solve."""

    energies: list
    term_energies: list
    iterations: int
    converged: bool
    pairs: int
    dropped: dict
    pixel_skipped: int

    @property
    def initial(self) -> dict:
        return self.term_energies[0]

    @property
    def final(self) -> dict:
        return self.term_energies[-1]

    def to_dict(self) -> dict:
        return {
            "energies": [float(e) for e in self.energies],
            "term_energies": [
                {k: float(v) for k, v in te.items()} for te in self.term_energies
            ],
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
            "pairs": int(self.pairs),
            "dropped": {k: int(v) for k, v in self.dropped.items()},
            "pixel_skipped": int(self.pixel_skipped),
        }


TERM_NAMES = ("depth", "motion", "2d", "reg")


def _fit_prediction_rigid(field_prev: WarpField, prediction: MotionPrediction, w):
    src = field_prev.node_positions()
    dst = src + prediction.mu
    try:
        return rigid_fit(src, dst, w)
    except (DegenerateConfiguration, ValueError):
        try:
            return translation_fit(src, dst, w)
        except DegenerateConfiguration:
            from .geometry import RigidTransform

            return RigidTransform.identity()


def solve_warpfield(
    field_prev: WarpField,
    corr: CorrespondenceSet,
    prediction: MotionPrediction,
    weights: EnergyWeights = EnergyWeights(),
    params: SolverParams = SolverParams(),
    node_weights: np.ndarray | None = None,
    weight_params: WeightParams = WeightParams(),
    printed_reg: bool = False,
) -> tuple[WarpField, EnergyReport]:
    """Minimize the total energy for one frame.

    Starts from field_prev composed with the rigid component of the
    prediction; per-node confidence weights default to the prediction's
    motion_weights. Accepted steps never increase the energy, so the solution
    is at most as bad as the initialization.
    """
    graph = field_prev.graph
    if len(prediction) != graph.num_nodes:
        raise CountMismatch("prediction length != node count")
    if node_weights is None:
        node_weights = motion_weights(prediction.mu, prediction.sigma, weight_params)
    else:
        node_weights = np.broadcast_to(
            np.asarray(node_weights, dtype=float), (graph.num_nodes,)
        )

    g_rigid = _fit_prediction_rigid(field_prev, prediction, node_weights)
    init = field_prev.compose_global(g_rigid)

    motion_targets = field_prev.node_positions() + prediction.mu
    terms = []
    if weights.lambda_depth > 0 and len(corr) > 0:
        terms.append(
            DepthPlaneTerm(
                "depth", corr.skinned, graph.positions, corr.targets, corr.normals,
                weights.lambda_depth,
            )
        )
    if weights.lambda_motion > 0:
        terms.append(
            PointTargetTerm(
                "motion",
                np.arange(graph.num_nodes),
                graph.positions,
                motion_targets,
                weights.lambda_motion * node_weights,
            )
        )
    pixel_term = None
    if weights.lambda_2d > 0 and len(corr) > 0:
        pixel_term = PixelTerm(
            "2d", corr.skinned, graph.positions, project(corr.camera, corr.targets),
            corr.camera, weights.lambda_2d,
        )
        terms.append(pixel_term)
    if weights.lambda_reg > 0:
        edges = graph.edge_array()
        if len(edges):
            terms.append(
                RegEdgeTerm("reg", graph.positions, edges, weights.lambda_reg, printed_reg)
            )

    R, t, solve_report = solve_gauss_newton(
        terms,
        init.rotations,
        init.translations,
        max_iters=params.max_iters,
        damping=params.damping,
        rel_tol=params.rel_tol,
    )

    term_energies = [
        {name: te.get(name, 0.0) for name in TERM_NAMES} | {"total": sum(te.values())}
        for te in solve_report.term_energies
    ]
    skipped = pixel_term.skipped if pixel_term is not None else 0
    if len(corr) and skipped > 0.1 * len(corr):
        logger.warning("solve_warpfield: %d/%d pairs behind camera", skipped, len(corr))
    report = EnergyReport(
        energies=solve_report.energies,
        term_energies=term_energies,
        iterations=solve_report.iterations,
        converged=solve_report.converged,
        pairs=len(corr),
        dropped=corr.dropped,
        pixel_skipped=skipped,
    )
    return WarpField(graph, R, t), report


def total_energy(
    field_prev: WarpField,
    field: WarpField,
    corr: CorrespondenceSet,
    prediction: MotionPrediction,
    weights: EnergyWeights,
    node_weights: np.ndarray,
    printed_reg: bool = False,
) -> float:
    """Reference evaluation of the total energy (used by tests and reports)."""
    return (
        weights.lambda_depth * e_depth(field, corr)
        + weights.lambda_motion
        * e_motion(field_prev, field, prediction, node_weights)
        + weights.lambda_2d * e_2d(field, corr, corr.camera)
        + weights.lambda_reg * e_reg(field, printed_reg)
    )
