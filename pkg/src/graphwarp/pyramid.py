"""Multi-scale deformation-node graph: sampling, adjacency, pruning, feature maps.

Four levels by default, intervals doubling from 4 cm to 32 cm and neighbor
counts {8, 6, 4, 3}. Level-1 adjacency is k-nearest-neighbor in Euclidean
space; coarser levels find neighbors by breadth-first search on the level
below. Nodes of level l+1 are always a subset of level l.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyInput, InsufficientNodes, SizeMismatch


@dataclass
class NodeGraph:
    """Sparse node set with directed out-neighbor adjacency.

    positions: (N, 3) float array
    edges: per-node list of neighbor indices (no self-edges, in range)
    """

    positions: np.ndarray
    edges: list

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        n = len(self.positions)
        for i, nbrs in enumerate(self.edges):
            for j in nbrs:
                if j == i:
                    raise ValueError(f"self-edge at node {i}")
                if not 0 <= j < n:
                    raise ValueError(f"neighbor {j} of node {i} out of range")

    @property
    def num_nodes(self) -> int:
        return len(self.positions)

    def edge_array(self) -> np.ndarray:
        """All directed edges as an (E, 2) int array of (src, dst), fixed order."""
        pairs = [(i, j) for i, nbrs in enumerate(self.edges) for j in nbrs]
        if not pairs:
            return np.zeros((0, 2), dtype=int)
        return np.asarray(pairs, dtype=int)

    def undirected_adjacency(self) -> list:
        """Symmetrized neighbor lists, each sorted ascending."""
        sets = [set() for _ in range(self.num_nodes)]
        for i, nbrs in enumerate(self.edges):
            for j in nbrs:
                sets[i].add(j)
                sets[j].add(i)
        return [sorted(s) for s in sets]


@dataclass(frozen=True)
class PyramidConfig:
    """Construction parameters; lengths of the two tuples set the level count."""

    intervals: tuple = (0.04, 0.08, 0.16, 0.32)
    neighbor_counts: tuple = (8, 6, 4, 3)
    prune_threshold: float = 0.04

    def __post_init__(self):
        if len(self.intervals) != len(self.neighbor_counts):
            raise ValueError("intervals and neighbor_counts must have equal length")
        if any(iv <= 0 for iv in self.intervals):
            raise ValueError("intervals must be positive")

    @property
    def num_levels(self) -> int:
        return len(self.intervals)

    def to_dict(self) -> dict:
        return {
            "intervals": [float(v) for v in self.intervals],
            "neighbor_counts": [int(v) for v in self.neighbor_counts],
            "prune_threshold": float(self.prune_threshold),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PyramidConfig":
        return cls(
            intervals=tuple(d.get("intervals", cls.intervals)),
            neighbor_counts=tuple(d.get("neighbor_counts", cls.neighbor_counts)),
            prune_threshold=float(d.get("prune_threshold", cls.prune_threshold)),
        )


@dataclass
class GraphPyramid:
    """Stack of node graphs plus the index maps used for feature transfer.

    levels: finest first
    subset_maps[l]: level-(l+1) node index -> its level-l index (injective)
    upsample_maps[l]: level-l node index -> nearest level-(l+1) node index
    """

    levels: list
    subset_maps: list
    upsample_maps: list

    @property
    def num_levels(self) -> int:
        return len(self.levels)

    @property
    def graph(self) -> NodeGraph:
        """The finest level, which carries the deformation nodes."""
        return self.levels[0]


def sample_nodes(points: np.ndarray, interval: float) -> np.ndarray:
    """Greedy cover in input order: select a point iff it is at least
    `interval` away from every previously selected point.

    Every input point ends up within `interval` of a selected node and no two
    selected nodes are closer than `interval`. Returns indices into `points`.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        raise EmptyInput("cannot sample nodes from an empty point set")
    if interval <= 0:
        raise ValueError("interval must be positive")
    min_dist = np.full(len(pts), np.inf)
    selected = []
    for i in range(len(pts)):
        if min_dist[i] >= interval:
            selected.append(i)
            d = np.linalg.norm(pts - pts[i], axis=1)
            np.minimum(min_dist, d, out=min_dist)
    return np.asarray(selected, dtype=int)


def _knn_edges(positions: np.ndarray, k: int, chunk: int = 512) -> list:
    n = len(positions)
    k = min(k, n - 1)
    if k <= 0:
        return [[] for _ in range(n)]
    edges = []
    for start in range(0, n, chunk):
        block = positions[start : start + chunk]
        d2 = ((block[:, None, :] - positions[None, :, :]) ** 2).sum(axis=2)
        for row in range(len(block)):
            d2[row, start + row] = np.inf
        # stable argsort breaks equal distances toward the lower index
        order = np.argsort(d2, axis=1, kind="stable")
        edges.extend(list(map(int, order[row, :k])) for row in range(len(block)))
    return edges


def _bfs_members(adjacency: list, start: int, member_of: dict, count: int) -> list:
    """Collect up to `count` member nodes in breadth-first order from `start`.

    Layered traversal; within one depth layer nodes are taken in index order.
    """
    found = []
    visited = {start}
    frontier = [start]
    while frontier and len(found) < count:
        nxt = set()
        for u in frontier:
            for v in adjacency[u]:
                if v not in visited:
                    nxt.add(v)
        frontier = sorted(nxt)
        visited.update(frontier)
        for v in frontier:
            if v in member_of and len(found) < count:
                found.append(member_of[v])
    return found


def build_pyramid(
    surface_points: np.ndarray,
    config: PyramidConfig = PyramidConfig(),
    trajectories: np.ndarray | None = None,
) -> GraphPyramid:
    """Sample the level hierarchy and wire up adjacency and transfer maps.

    Level 1 nodes are sampled from `surface_points` at the finest interval;
    each coarser level is resampled from the one below, so node positions form
    a subset chain. Level-1 edges are k-nearest-neighbor; if `trajectories`
    (per-frame positions of the surface points, shape (T, P, 3)) is given,
    level-1 edges are additionally pruned for temporal consistency before the
    coarser levels run their breadth-first neighbor search.
    """
    pts = np.asarray(surface_points, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        raise InsufficientNodes("no surface points to sample nodes from")

    level_indices = []  # per level: indices into the level below (level 0: into pts)
    level_positions = []
    base = pts
    for li in range(config.num_levels):
        idx = sample_nodes(base, config.intervals[li])
        if len(idx) == 0:
            raise InsufficientNodes(f"level {li + 1} would be empty")
        level_indices.append(idx)
        base = base[idx]
        level_positions.append(base)

    # level 1: Euclidean kNN, optionally pruned by node trajectories
    level1 = NodeGraph(level_positions[0], _knn_edges(level_positions[0], config.neighbor_counts[0]))
    if trajectories is not None:
        traj = np.asarray(trajectories, dtype=float)
        node_traj = traj[:, level_indices[0], :]
        level1 = prune_edges_temporal(level1, node_traj, config.prune_threshold)

    levels = [level1]
    subset_maps = []
    for li in range(1, config.num_levels):
        coarse_idx = level_indices[li]  # indices into level li-1
        subset_maps.append(np.asarray(coarse_idx, dtype=int))
        member_of = {int(fine): ci for ci, fine in enumerate(coarse_idx)}
        adjacency = levels[li - 1].undirected_adjacency()
        k = config.neighbor_counts[li]
        edges = []
        for ci, fine in enumerate(coarse_idx):
            nbrs = _bfs_members(adjacency, int(fine), member_of, k)
            edges.append([j for j in nbrs if j != ci])
        levels.append(NodeGraph(level_positions[li], edges))

    upsample_maps = []
    for li in range(config.num_levels - 1):
        fine = level_positions[li]
        coarse = level_positions[li + 1]
        d2 = ((fine[:, None, :] - coarse[None, :, :]) ** 2).sum(axis=2)
        # argmin returns the first (lowest-index) minimizer on ties
        upsample_maps.append(np.argmin(d2, axis=1).astype(int))

    return GraphPyramid(levels, subset_maps, upsample_maps)


def pyramid_at_positions(pyramid: GraphPyramid, level1_positions: np.ndarray) -> GraphPyramid:
    """The same pyramid structure rebased onto new level-1 node positions.

    Coarser-level positions follow through the subset chain; adjacency and
    transfer maps are shared, not copied.
    """
    pos = np.asarray(level1_positions, dtype=float).reshape(-1, 3)
    if len(pos) != pyramid.levels[0].num_nodes:
        raise SizeMismatch(
            f"positions ({len(pos)}) != level-1 node count ({pyramid.levels[0].num_nodes})"
        )
    levels = [NodeGraph(pos, pyramid.levels[0].edges)]
    for li in range(1, pyramid.num_levels):
        pos = pos[pyramid.subset_maps[li - 1]]
        levels.append(NodeGraph(pos, pyramid.levels[li].edges))
    return GraphPyramid(levels, pyramid.subset_maps, pyramid.upsample_maps)


def prune_edges_temporal(
    graph: NodeGraph, node_trajectories: np.ndarray, threshold: float
) -> NodeGraph:
    """Drop edges whose endpoint distance changes by more than `threshold`.

    The change is measured against the first frame and maximized over the
    sequence. Never adds edges; applying it twice is a no-op.
    """
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    traj = np.asarray(node_trajectories, dtype=float)
    if traj.ndim != 3 or traj.shape[2] != 3:
        raise ValueError("trajectories must have shape (T, N, 3)")
    if traj.shape[0] < 2:
        raise ValueError("trajectories must cover at least 2 frames")
    if traj.shape[1] != graph.num_nodes:
        raise SizeMismatch(
            f"trajectory node count {traj.shape[1]} != graph node count {graph.num_nodes}"
        )
    edges = []
    for i, nbrs in enumerate(graph.edges):
        kept = []
        for j in nbrs:
            d = np.linalg.norm(traj[:, i, :] - traj[:, j, :], axis=1)
            if np.abs(d - d[0]).max() <= threshold:
                kept.append(j)
        edges.append(kept)
    return NodeGraph(graph.positions.copy(), edges)


def downsample_features(
    pyramid: GraphPyramid, level: int, features: np.ndarray
) -> np.ndarray:
    """Copy per-node features from `level` to `level + 1` via the subset map.

    `level` is 1-based (level 1 is the finest), matching the pyramid naming.
    """
    li = level - 1
    if not 0 <= li < pyramid.num_levels - 1:
        raise ValueError(f"no level below {level + 1} to downsample from")
    feats = np.asarray(features)
    if len(feats) != pyramid.levels[li].num_nodes:
        raise SizeMismatch(
            f"feature count {len(feats)} != level-{level} node count "
            f"{pyramid.levels[li].num_nodes}"
        )
    return feats[pyramid.subset_maps[li]]


def upsample_features(
    pyramid: GraphPyramid, coarse_level: int, features: np.ndarray
) -> np.ndarray:
    """Assign each level-(coarse_level - 1) node the feature of its nearest
    node at `coarse_level` (ties already resolved toward the lowest index when
    the map was built)."""
    li = coarse_level - 2
    if not 0 <= li < pyramid.num_levels - 1:
        raise ValueError(f"no level above {coarse_level} to upsample to")
    feats = np.asarray(features)
    if len(feats) != pyramid.levels[li + 1].num_nodes:
        raise SizeMismatch(
            f"feature count {len(feats)} != level-{coarse_level} node count "
            f"{pyramid.levels[li + 1].num_nodes}"
        )
    return feats[pyramid.upsample_maps[li]]
