"""Embedded-deformation warp: per-node rigid transforms blended over anchors.

A node's transform (R_i, t_i) acts about its own position:

    apply_i(x) = R_i (x - p_i) + p_i + t_i

so t_i is the node's displacement and a vertex is warped by the convex blend
of its anchor nodes' maps. Stored as stacked arrays (N,3,3)/(N,3) because the
solvers live on those.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyGraph, GraphMismatch
from .geometry import RigidTransform
from .pyramid import NodeGraph


@dataclass(frozen=True)
class SkinnedVertex:
    """A canonical vertex with its anchor nodes and convex blend weights."""

    position: np.ndarray
    anchors: np.ndarray
    weights: np.ndarray


class SkinnedSet:
    """Vectorized collection of skinned vertices (fixed anchor count).

    positions: (V, 3); anchors: (V, K) int; weights: (V, K), rows sum to 1.
    Behaves as a sequence of SkinnedVertex.
    """

    def __init__(self, positions, anchors, weights):
        self.positions = np.asarray(positions, dtype=float).reshape(-1, 3)
        self.anchors = np.asarray(anchors, dtype=int)
        self.weights = np.asarray(weights, dtype=float)
        if self.anchors.shape != self.weights.shape:
            raise ValueError("anchors and weights must have the same shape")
        if len(self.anchors) != len(self.positions):
            raise ValueError("anchor rows must match vertex count")

    def __len__(self):
        return len(self.positions)

    def __getitem__(self, i) -> SkinnedVertex:
        return SkinnedVertex(self.positions[i], self.anchors[i], self.weights[i])

    def subset(self, mask) -> "SkinnedSet":
        return SkinnedSet(self.positions[mask], self.anchors[mask], self.weights[mask])


def skin_vertices(
    vertices: np.ndarray, graph: NodeGraph, k: int = 4, radius: float = 0.08
) -> SkinnedSet:
    """Attach each vertex to its k nearest nodes with quadratic-falloff weights.

    Raw weight per anchor is max(0, 1 - d^2/radius^2)^2, normalized to sum 1;
    a vertex whose anchors all fall outside the radius keeps its nearest node
    with weight 1.
    """
    if graph.num_nodes == 0:
        raise EmptyGraph("cannot skin against an empty graph")
    if k < 1:
        raise ValueError("k must be >= 1")
    if radius <= 0:
        raise ValueError("radius must be positive")
    verts = np.asarray(vertices, dtype=float).reshape(-1, 3)
    k = min(k, graph.num_nodes)

    anchors = np.empty((len(verts), k), dtype=int)
    dists2 = np.empty((len(verts), k))
    chunk = 1024
    for start in range(0, len(verts), chunk):
        block = verts[start : start + chunk]
        d2 = ((block[:, None, :] - graph.positions[None, :, :]) ** 2).sum(axis=2)
        order = np.argsort(d2, axis=1, kind="stable")[:, :k]
        anchors[start : start + chunk] = order
        dists2[start : start + chunk] = np.take_along_axis(d2, order, axis=1)

    raw = np.maximum(0.0, 1.0 - dists2 / radius**2) ** 2
    total = raw.sum(axis=1)
    dead = total <= 0.0
    raw[dead, 0] = 1.0  # column 0 is the nearest node
    raw[dead, 1:] = 0.0
    total = raw.sum(axis=1)
    return SkinnedSet(verts, anchors, raw / total[:, None])


class WarpField:
    """Per-node rigid transforms attached to a node graph."""

    def __init__(self, graph: NodeGraph, rotations: np.ndarray, translations: np.ndarray):
        self.graph = graph
        self.rotations = np.asarray(rotations, dtype=float).reshape(-1, 3, 3)
        self.translations = np.asarray(translations, dtype=float).reshape(-1, 3)
        n = graph.num_nodes
        if len(self.rotations) != n or len(self.translations) != n:
            raise ValueError(
                f"field size ({len(self.rotations)}) != node count ({n})"
            )

    @classmethod
    def identity(cls, graph: NodeGraph) -> "WarpField":
        n = graph.num_nodes
        return cls(graph, np.tile(np.eye(3), (n, 1, 1)), np.zeros((n, 3)))

    @classmethod
    def from_transforms(cls, graph: NodeGraph, transforms) -> "WarpField":
        """Build from per-node RigidTransform objects (about-node convention)."""
        R = np.stack([t.rotation for t in transforms])
        t = np.stack([t.translation for t in transforms])
        return cls(graph, R, t)

    @classmethod
    def from_global(cls, graph: NodeGraph, transform: RigidTransform) -> "WarpField":
        """Field whose every node carries the same global rigid map."""
        n = graph.num_nodes
        R = np.tile(transform.rotation, (n, 1, 1))
        t = transform.apply(graph.positions) - graph.positions
        return cls(graph, R, t)

    def transform(self, i: int) -> RigidTransform:
        return RigidTransform(self.rotations[i], self.translations[i])

    def node_positions(self) -> np.ndarray:
        """Each node's position under its own transform: p_i + t_i."""
        return self.graph.positions + self.translations

    def apply_node(self, i: int, points: np.ndarray) -> np.ndarray:
        """Apply node i's transform about its own position."""
        p = self.graph.positions[i]
        pts = np.asarray(points, dtype=float)
        return (pts - p) @ self.rotations[i].T + p + self.translations[i]

    def compose_global(self, transform: RigidTransform) -> "WarpField":
        """Field realizing transform∘field (the global map applied after)."""
        R = transform.rotation @ self.rotations
        t = transform.apply(self.node_positions()) - self.graph.positions
        return WarpField(self.graph, R, t)

    def copy(self) -> "WarpField":
        return WarpField(self.graph, self.rotations.copy(), self.translations.copy())


def warp_points(field: WarpField, skinned: SkinnedSet) -> np.ndarray:
    """Warp all skinned vertices: v' = sum_a w_a [R_a (v - p_a) + p_a + t_a]."""
    p = field.graph.positions[skinned.anchors]  # (V, K, 3)
    R = field.rotations[skinned.anchors]  # (V, K, 3, 3)
    t = field.translations[skinned.anchors]  # (V, K, 3)
    local = skinned.positions[:, None, :] - p
    rotated = np.einsum("vkij,vkj->vki", R, local)
    per_anchor = rotated + p + t
    return (skinned.weights[:, :, None] * per_anchor).sum(axis=1)


def warp_point(field: WarpField, sv: SkinnedVertex) -> np.ndarray:
    """Warp a single skinned vertex."""
    out = np.zeros(3)
    for a, w in zip(sv.anchors, sv.weights):
        out += w * field.apply_node(int(a), sv.position)
    return out


def node_displacements(field_prev: WarpField, field_cur: WarpField) -> np.ndarray:
    """Per-node motion between two fields over the same graph.

    Node i sits at p_i + t_i under a field, so the displacement is simply the
    difference of translations.
    """
    if field_prev.graph.num_nodes != field_cur.graph.num_nodes or not np.array_equal(
        field_prev.graph.positions, field_cur.graph.positions
    ):
        raise GraphMismatch("warp fields are attached to different graphs")
    return field_cur.translations - field_prev.translations
