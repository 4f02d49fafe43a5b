"""High-level flows shared by the CLI and the test harnesses:
generate -> predict -> register -> evaluate.
"""

from __future__ import annotations

import logging
import os

import numpy as np

from .config import Config
from .errors import BadSpec, ParseError
from .evaluation import EvalReport, FrameMetrics, epe, geometry_error
from .errors import EmptySelection, NoValidVertices
from .jsonutil import read_json
from .motion import (
    MotionPrediction,
    arap_refine,
    load_external_predictions,
    predict_arap,
    predict_rigid,
    save_predictions,
)
from .pyramid import pyramid_at_positions
from .registration import build_correspondences, solve_warpfield
from .seqio import FIELD_FMT, PRED_FMT, REPORT_FMT, read_warp_field
from .synthetic import (
    AnimationSource,
    SyntheticSequence,
    generate_sequence,
    load_animation,
    make_articulated_animation,
)
from .warp import WarpField, node_displacements, skin_vertices, warp_points

logger = logging.getLogger(__name__)

PREDICT_METHODS = ("rigid", "arap", "arap-refined", "external")


def animation_from_spec(path) -> AnimationSource:
    """Load an animation from a spec JSON (procedural) or a positions file."""
    path = str(path)
    if path.endswith(".npz"):
        return load_animation(path)
    spec = read_json(path)
    if "positions" in spec:
        return AnimationSource(np.asarray(spec["positions"], dtype=float))
    if "type" in spec:
        return make_articulated_animation(spec)
    raise BadSpec(f"{path}: neither 'type' nor 'positions' present")


def generate_from_spec(spec_path, cfg: Config, seed: int) -> SyntheticSequence:
    anim = animation_from_spec(spec_path)
    return generate_sequence(anim, cfg.synth, cfg.pyramid, seed=seed)


def predict_sequence(
    seq: SyntheticSequence,
    method: str,
    cfg: Config,
    external_dir=None,
) -> list:
    """Per-frame predictions for frames 1..T-1 (frame 0 carries no motion).

    A frame's motions displace the previous frame's node positions, so the
    predictors run on the pyramid rebased to those live positions.
    """
    if method not in PREDICT_METHODS:
        raise ValueError(f"unknown method {method!r}")
    n_nodes = seq.pyramid.graph.num_nodes
    out = []
    for t in range(1, seq.num_frames):
        frame = seq.frames[t]
        live = pyramid_at_positions(seq.pyramid, seq.frames[t - 1].positions)
        if method == "external":
            if external_dir is None:
                raise ValueError("external method needs a prediction directory")
            pred = load_prediction_file(external_dir, t, n_nodes, cfg)
        elif method == "rigid":
            pred = predict_rigid(live.graph, frame.motions, frame.visible, cfg.arap)
        elif method == "arap":
            pred = predict_arap(live, frame.motions, frame.visible, cfg.arap)
        else:  # arap-refined
            base = predict_arap(live, frame.motions, frame.visible, cfg.arap)
            pred = arap_refine(live, base, frame.visible, frame.motions, cfg.arap)
        out.append(pred)
    return out


def prediction_path(preddir, t: int):
    return os.path.join(str(preddir), PRED_FMT.format(t))


def load_prediction_file(preddir, t: int, node_count: int, cfg: Config) -> MotionPrediction:
    path = prediction_path(preddir, t)
    if not os.path.isfile(path):
        alt = path[:-4] + ".json"
        if os.path.isfile(alt):
            path = alt
        else:
            raise ParseError("prediction file not found", path=path)
    return load_external_predictions(path, node_count, cfg.arap.sigma_min)


def save_prediction_dir(predictions, outdir) -> None:
    os.makedirs(outdir, exist_ok=True)
    for t, pred in enumerate(predictions, start=1):
        save_predictions(pred, prediction_path(outdir, t))


def load_prediction_dir(preddir, seq: SyntheticSequence, cfg: Config) -> list:
    n = seq.pyramid.graph.num_nodes
    return [
        load_prediction_file(preddir, t, n, cfg) for t in range(1, seq.num_frames)
    ]


def register_sequence(
    seq: SyntheticSequence,
    predictions=None,
    cfg: Config = None,
    uniform_weights: bool = False,
):
    """Track the sequence frame by frame with the warp-field solver.

    predictions: per-frame MotionPrediction list (frames 1..T-1) or None.
    Without predictions the motion term is disabled and the solver relies on
    depth, flow and the regularizer alone. Returns (fields, reports) where
    fields[0] is the identity field on the canonical graph.
    """
    cfg = cfg or Config()
    graph = seq.pyramid.graph
    weights = cfg.weights
    if predictions is None:
        zero = MotionPrediction(
            np.zeros((graph.num_nodes, 3)), np.zeros(graph.num_nodes), "none"
        )
        predictions = [zero] * (seq.num_frames - 1)
        if weights.lambda_motion != 0:
            logger.info("register: no predictions given, disabling the motion term")
            from .registration import EnergyWeights

            weights = EnergyWeights(
                lambda_depth=weights.lambda_depth,
                lambda_motion=0.0,
                lambda_2d=weights.lambda_2d,
                lambda_reg=weights.lambda_reg,
            )
    if len(predictions) != seq.num_frames - 1:
        raise ValueError("need one prediction per frame after the first")

    skinned = skin_vertices(
        seq.canonical_points, graph, cfg.skinning.k, cfg.skinning.radius
    )
    fields = [WarpField.identity(graph)]
    reports = []
    for t in range(1, seq.num_frames):
        frame = seq.frames[t]
        corr = build_correspondences(
            fields[t - 1],
            skinned,
            frame.flow,
            frame.depth,
            seq.camera,
            visibility_tol=cfg.correspondence.visibility_tol,
            splat_radius=cfg.correspondence.splat_radius,
            max_distance=cfg.correspondence.max_distance,
        )
        node_weights = np.ones(graph.num_nodes) if uniform_weights else None
        field, report = solve_warpfield(
            fields[t - 1],
            corr,
            predictions[t - 1],
            weights,
            cfg.solver,
            node_weights=node_weights,
            weight_params=cfg.confidence,
        )
        fields.append(field)
        reports.append(report)
    return fields, reports


def evaluate_predictions(
    seq: SyntheticSequence, predictions, cfg: Config = None
) -> EvalReport:
    """EPE of per-frame predicted motions against the ground truth."""
    cfg = cfg or Config()
    frames = []
    for t in range(1, seq.num_frames):
        pred = predictions[t - 1]
        gt = seq.gt_motion(t)
        frame = seq.frames[t]
        occ = frame.occluded
        fm = FrameMetrics(frame=t, occluded_count=int(occ.sum()))
        fm.epe_all_mm = epe(pred.mu, gt)
        if occ.any():
            fm.epe_occluded_mm = epe(pred.mu, gt, occ)
        frames.append(fm)
    return EvalReport(frames, cfg.to_dict())


def evaluate_warp(seq: SyntheticSequence, fields, cfg: Config = None) -> EvalReport:
    """Motion EPE plus depth-alignment geometry error of a tracked sequence."""
    cfg = cfg or Config()
    graph = seq.pyramid.graph
    skinned = skin_vertices(
        seq.canonical_points, graph, cfg.skinning.k, cfg.skinning.radius
    )
    frames = []
    for t in range(1, seq.num_frames):
        frame = seq.frames[t]
        motion = node_displacements(fields[t - 1], fields[t])
        gt = seq.gt_motion(t)
        occ = frame.occluded
        fm = FrameMetrics(frame=t, occluded_count=int(occ.sum()))
        fm.epe_all_mm = epe(motion, gt)
        if occ.any():
            try:
                fm.epe_occluded_mm = epe(motion, gt, occ)
            except EmptySelection:
                pass
        warped = warp_points(fields[t], skinned)
        try:
            fm.geometry_error_cm = geometry_error(warped, frame.depth, seq.camera)
        except NoValidVertices:
            pass
        frames.append(fm)
    return EvalReport(frames, cfg.to_dict())


def load_warp_dir(warpdir, seq: SyntheticSequence) -> list:
    graph = seq.pyramid.graph
    fields = []
    for t in range(seq.num_frames):
        path = os.path.join(str(warpdir), FIELD_FMT.format(t))
        if not os.path.isfile(path):
            raise ParseError("warp field file not found", path=path)
        fields.append(read_warp_field(path, graph))
    return fields
