"""Occluded-node motion prediction.

Visible nodes carry observed motions; the occluded rest is filled in by a
global rigid fit, by a graph-based local-rigidity (ARAP) solve, by an ARAP
refinement of an existing prediction, or ingested from files produced by an
external predictor. Every predictor reports per-node (mu, sigma); the observed
motion is returned verbatim at visible nodes.
"""

from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    CountMismatch,
    DegenerateConfiguration,
    NegativeSigma,
    ParseError,
)
from .geometry import RigidTransform, rigid_fit, translation_fit
from .jsonutil import read_json, write_canonical
from .losses import WeightParams, motion_weights, truncate_sigma
from .nodesolver import PointTargetTerm, RegEdgeTerm, solve_gauss_newton
from .pyramid import GraphPyramid, NodeGraph


@dataclass(frozen=True)
class GaussianMotion:
    """One node's predicted displacement with isotropic standard deviation."""

    mu: np.ndarray
    sigma: float


@dataclass
class MotionPrediction:
    """Per-node Gaussian motions plus provenance.

    translation_only flags a degenerate rigid fit that fell back to a pure
    translation; unreachable lists occluded nodes without a graph path to any
    visible node (they received the rigid fallback).
    """

    mu: np.ndarray
    sigma: np.ndarray
    source: str
    translation_only: bool = False
    unreachable: np.ndarray | None = None
    report: object = None

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float).reshape(-1, 3)
        self.sigma = np.asarray(self.sigma, dtype=float).reshape(-1)
        if len(self.mu) != len(self.sigma):
            raise CountMismatch("mu and sigma lengths differ")

    def __len__(self):
        return len(self.mu)

    def __getitem__(self, i) -> GaussianMotion:
        return GaussianMotion(self.mu[i], float(self.sigma[i]))


@dataclass(frozen=True)
class ArapParams:
    """Solver constants for the local-rigidity predictors.

    sigma_hop is the base of the occluded-confidence heuristic
    sigma = sigma_hop * (1 + hops to the nearest visible node), capped at
    sigma_cap. It defaults to the millimeter scale of the predictor's actual
    error; basing it on the 0.1 file-ingestion truncation floor would drive
    every occluded confidence weight to zero.
    """

    lambda_anchor: float = 100.0
    lambda_data: float = 1.0
    max_iters: int = 10
    rel_tol: float = 1e-6
    damping: float = 1e-8
    sigma_min: float = 0.1
    sigma_hop: float = 0.002
    sigma_cap: float = 0.1
    sigma_occluded: float = 0.1
    weight_params: WeightParams = field(default_factory=WeightParams)


def _as_mask(mask, n: int) -> np.ndarray:
    m = np.asarray(mask).astype(bool).reshape(-1)
    if len(m) != n:
        raise CountMismatch(f"mask length {len(m)} != node count {n}")
    return m


def _fit_visible_rigid(positions, motions, mask):
    """Rigid fit over visible nodes; falls back to translation-only."""
    src = positions[mask]
    dst = src + motions[mask]
    try:
        return rigid_fit(src, dst), False
    except DegenerateConfiguration:
        return translation_fit(src, dst), True


@dataclass(frozen=True)
class RigidSplit:
    """Decomposition of observed motion into a global rigid part and residuals."""

    rigid: RigidTransform
    residual: np.ndarray
    translation_only: bool


def split_rigid(graph: NodeGraph, motions: np.ndarray, mask) -> RigidSplit:
    """Extract the rigid motion carried by the visible nodes.

    residual_i = (p_i + motion_i) - rigid(p_i), so composing the rigid part
    with the residual reproduces the input motion exactly wherever the motion
    was defined.
    """
    motions = np.asarray(motions, dtype=float).reshape(-1, 3)
    mask = _as_mask(mask, graph.num_nodes)
    if len(motions) != graph.num_nodes:
        raise CountMismatch("motions length != node count")
    rigid, fallback = _fit_visible_rigid(graph.positions, motions, mask)
    residual = graph.positions + motions - rigid.apply(graph.positions)
    return RigidSplit(rigid, residual, fallback)


def _hops_to_visible(graph: NodeGraph, mask: np.ndarray) -> np.ndarray:
    """Breadth-first hop count from each node to the nearest visible node."""
    adj = graph.undirected_adjacency()
    hops = np.full(graph.num_nodes, np.inf)
    queue = deque()
    for i in np.flatnonzero(mask):
        hops[i] = 0
        queue.append(int(i))
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if hops[v] == np.inf:
                hops[v] = hops[u] + 1
                queue.append(v)
    return hops


def _occluded_sigma(hops: np.ndarray, mask: np.ndarray, params: ArapParams) -> np.ndarray:
    """sigma 0 at visible nodes, hop-scaled default elsewhere."""
    sigma = np.zeros(len(hops))
    occ = ~mask
    scaled = params.sigma_hop * (1.0 + np.where(np.isfinite(hops), hops, np.inf))
    sigma[occ] = np.minimum(scaled[occ], params.sigma_cap)
    return sigma


def predict_rigid(
    graph: NodeGraph,
    visible_motions: np.ndarray,
    mask,
    params: ArapParams = ArapParams(),
) -> MotionPrediction:
    """Occluded motion from the global rigid transform of the visible motion."""
    motions = np.asarray(visible_motions, dtype=float).reshape(-1, 3)
    mask = _as_mask(mask, graph.num_nodes)
    rigid, fallback = _fit_visible_rigid(graph.positions, motions, mask)
    mu = rigid.apply(graph.positions) - graph.positions
    mu[mask] = motions[mask]
    sigma = np.zeros(graph.num_nodes)
    sigma[~mask] = params.sigma_occluded
    return MotionPrediction(mu, sigma, "rigid", translation_only=fallback)


def _solve_arap(graph, mask, anchor_targets, anchor_weights, anchor_idx,
                extra_terms, init_R, init_t, params):
    terms = [
        PointTargetTerm("anchor", anchor_idx, graph.positions, anchor_targets, anchor_weights),
        RegEdgeTerm("reg", graph.positions, graph.edge_array(), 1.0),
    ]
    terms.extend(extra_terms)
    return solve_gauss_newton(
        terms,
        init_R,
        init_t,
        max_iters=params.max_iters,
        damping=params.damping,
        rel_tol=params.rel_tol,
    )


def predict_arap(
    pyramid: GraphPyramid,
    visible_motions: np.ndarray,
    mask,
    params: ArapParams = ArapParams(),
) -> MotionPrediction:
    """Occluded motion from an as-rigid-as-possible solve on the node graph.

    Visible nodes are anchored to their observed motions (weight
    lambda_anchor); every directed graph edge contributes the local-rigidity
    residual. Occluded nodes in components without any visible node cannot be
    constrained and keep the rigid-fit fallback; they are listed in
    `unreachable`.
    """
    graph = pyramid.graph
    motions = np.asarray(visible_motions, dtype=float).reshape(-1, 3)
    mask = _as_mask(mask, graph.num_nodes)

    rigid, fallback = _fit_visible_rigid(graph.positions, motions, mask)
    init_t = rigid.apply(graph.positions) - graph.positions
    init_R = np.tile(rigid.rotation, (graph.num_nodes, 1, 1))

    hops = _hops_to_visible(graph, mask)
    unreachable = np.flatnonzero(~np.isfinite(hops) & ~mask)

    # visible nodes anchor to observations; unreachable ones to the rigid
    # fallback so their block of the system stays well-posed
    anchor_idx = np.concatenate([np.flatnonzero(mask), unreachable])
    anchor_targets = np.concatenate(
        [
            graph.positions[mask] + motions[mask],
            graph.positions[unreachable] + init_t[unreachable],
        ]
    )
    R, t, report = _solve_arap(
        graph, mask, anchor_targets, params.lambda_anchor, anchor_idx,
        [], init_R, init_t, params,
    )
    mu = t.copy()
    mu[mask] = motions[mask]
    sigma = _occluded_sigma(hops, mask, params)
    return MotionPrediction(
        mu,
        sigma,
        "arap",
        translation_only=fallback,
        unreachable=unreachable if len(unreachable) else None,
        report=report,
    )


def arap_refine(
    pyramid: GraphPyramid,
    prediction: MotionPrediction,
    mask,
    visible_motions: np.ndarray,
    params: ArapParams = ArapParams(),
) -> MotionPrediction:
    """Post-process a prediction with the ARAP energy plus a data term.

    Occluded nodes are pulled toward their predicted mu, weighted by
    lambda_data times the confidence weight of the prediction; visible nodes
    stay anchored to the observations. Sigmas pass through unchanged.
    """
    graph = pyramid.graph
    motions = np.asarray(visible_motions, dtype=float).reshape(-1, 3)
    mask = _as_mask(mask, graph.num_nodes)
    if len(prediction) != graph.num_nodes:
        raise CountMismatch("prediction length != node count")

    rigid, fallback = _fit_visible_rigid(graph.positions, motions, mask)
    init_R = np.tile(rigid.rotation, (graph.num_nodes, 1, 1))
    init_t = prediction.mu.copy()
    init_t[mask] = motions[mask]

    occluded = np.flatnonzero(~mask)
    w = motion_weights(prediction.mu, prediction.sigma, params.weight_params)
    data_term = PointTargetTerm(
        "data",
        occluded,
        graph.positions,
        graph.positions[occluded] + prediction.mu[occluded],
        params.lambda_data * w[occluded],
    )
    R, t, report = _solve_arap(
        graph,
        mask,
        graph.positions[mask] + motions[mask],
        params.lambda_anchor,
        np.flatnonzero(mask),
        [data_term],
        init_R,
        init_t,
        params,
    )
    mu = t.copy()
    mu[mask] = motions[mask]
    return MotionPrediction(
        mu,
        prediction.sigma.copy(),
        f"{prediction.source}-refined" if not prediction.source.endswith("-refined") else prediction.source,
        translation_only=fallback,
        report=report,
    )


PREDICTION_CSV_HEADER = ["node_id", "mu_x", "mu_y", "mu_z", "sigma"]


def save_predictions(prediction: MotionPrediction, path) -> None:
    """Write a prediction file; format picked from the extension (.csv/.json)."""
    path = str(path)
    if path.endswith(".json"):
        write_canonical(
            path,
            {
                "mu": prediction.mu,
                "sigma": prediction.sigma,
                "source": prediction.source,
            },
        )
        return
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(PREDICTION_CSV_HEADER)
        for i in range(len(prediction)):
            writer.writerow(
                [i]
                + [format(v, ".9g") for v in prediction.mu[i]]
                + [format(prediction.sigma[i], ".9g")]
            )


def _parse_csv_predictions(path, expected_node_count):
    mu = np.zeros((expected_node_count, 3))
    sigma = np.zeros(expected_node_count)
    seen = np.zeros(expected_node_count, dtype=bool)
    with open(path, "r", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty prediction file", path=path) from None
        if [h.strip() for h in header] != PREDICTION_CSV_HEADER:
            raise ParseError(
                f"expected header {','.join(PREDICTION_CSV_HEADER)}", path=path, line=1
            )
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 5:
                raise ParseError(f"expected 5 columns, got {len(row)}", path=path, line=lineno)
            try:
                node = int(row[0])
                values = [float(v) for v in row[1:]]
            except ValueError as exc:
                raise ParseError(str(exc), path=path, line=lineno) from None
            if not 0 <= node < expected_node_count:
                raise CountMismatch(
                    f"{path}:{lineno}: node_id {node} outside 0..{expected_node_count - 1}"
                )
            if seen[node]:
                raise ParseError(f"duplicate node_id {node}", path=path, line=lineno)
            seen[node] = True
            mu[node] = values[:3]
            sigma[node] = values[3]
    if not seen.all():
        raise CountMismatch(
            f"{path}: {int((~seen).sum())} node(s) missing of {expected_node_count}"
        )
    return mu, sigma


def load_external_predictions(
    path, expected_node_count: int, sigma_min: float = 0.1
) -> MotionPrediction:
    """Read per-node (mu, sigma) from a CSV or JSON prediction file.

    Negative sigmas are rejected; surviving sigmas are truncated up to
    sigma_min.
    """
    path = str(path)
    if path.endswith(".json"):
        try:
            data = read_json(path)
            mu = np.asarray(data["mu"], dtype=float).reshape(-1, 3)
            sigma = np.asarray(data["sigma"], dtype=float).reshape(-1)
        except (KeyError, ValueError, TypeError) as exc:
            raise ParseError(str(exc), path=path) from None
        if len(mu) != expected_node_count or len(sigma) != expected_node_count:
            raise CountMismatch(
                f"{path}: prediction rows {len(mu)} != node count {expected_node_count}"
            )
    else:
        mu, sigma = _parse_csv_predictions(path, expected_node_count)
    if not np.all(np.isfinite(mu)) or not np.all(np.isfinite(sigma)):
        raise ParseError("non-finite values in prediction file", path=path)
    if np.any(sigma < 0):
        raise NegativeSigma(f"{path}: negative sigma in prediction file")
    sigma = truncate_sigma(sigma, sigma_min)
    return MotionPrediction(mu, sigma, "external")
