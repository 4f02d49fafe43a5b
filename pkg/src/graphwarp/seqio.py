"""On-disk formats: sequence directories, graph pyramids, warp fields, rasters.

A sequence directory holds meta.json (camera, seed, config echo, canonical
points), graph.json (the pyramid), one frame_%04d.json per frame (node
positions, visibility, observed set, motions) and flat binary little-endian
float32 rasters depth_%04d.bin / flow_%04d.bin (row-major, flow interleaved as
u,v channels). All JSON goes through the canonical writer, so identical data
produces byte-identical files.
"""

from __future__ import annotations

import os

import numpy as np

from .errors import CountMismatch, ParseError
from .geometry import Camera
from .jsonutil import read_json, write_canonical
from .pyramid import GraphPyramid, NodeGraph
from .synthetic import SyntheticFrame, SyntheticSequence
from .warp import WarpField

FRAME_FMT = "frame_{:04d}.json"
DEPTH_FMT = "depth_{:04d}.bin"
FLOW_FMT = "flow_{:04d}.bin"
PRED_FMT = "pred_{:04d}.csv"
FIELD_FMT = "field_{:04d}.json"
REPORT_FMT = "report_{:04d}.json"


def write_raster(path, array: np.ndarray) -> None:
    """Row-major little-endian float32 dump."""
    np.ascontiguousarray(array, dtype="<f4").tofile(path)


def read_raster(path, shape) -> np.ndarray:
    data = np.fromfile(path, dtype="<f4")
    expected = int(np.prod(shape))
    if data.size != expected:
        raise ParseError(
            f"raster has {data.size} floats, expected {expected} for shape {shape}",
            path=path,
        )
    return data.reshape(shape)


def pyramid_to_dict(pyramid: GraphPyramid) -> dict:
    return {
        "levels": [
            {
                "positions": g.positions,
                "edges": [[int(j) for j in nbrs] for nbrs in g.edges],
            }
            for g in pyramid.levels
        ],
        "subset_maps": [m for m in pyramid.subset_maps],
        "upsample_maps": [m for m in pyramid.upsample_maps],
    }


def pyramid_from_dict(d: dict) -> GraphPyramid:
    levels = [
        NodeGraph(np.asarray(lv["positions"], dtype=float), [list(map(int, e)) for e in lv["edges"]])
        for lv in d["levels"]
    ]
    subset = [np.asarray(m, dtype=int) for m in d["subset_maps"]]
    upsample = [np.asarray(m, dtype=int) for m in d["upsample_maps"]]
    return GraphPyramid(levels, subset, upsample)


def write_sequence(seq: SyntheticSequence, outdir) -> None:
    os.makedirs(outdir, exist_ok=True)
    meta = {
        "camera": seq.camera.to_dict(),
        "seed": int(seq.seed),
        "config": seq.config,
        "frame_count": seq.num_frames,
        "canonical_points": seq.canonical_points,
        "node_point_indices": seq.node_point_indices,
    }
    write_canonical(os.path.join(outdir, "meta.json"), meta)
    write_canonical(os.path.join(outdir, "graph.json"), pyramid_to_dict(seq.pyramid))
    for f in seq.frames:
        write_canonical(
            os.path.join(outdir, FRAME_FMT.format(f.index)),
            {
                "index": int(f.index),
                "positions": f.positions,
                "visible": f.visible.astype(int),
                "observed": f.observed.astype(int),
                "motions": f.motions,
            },
        )
        write_raster(os.path.join(outdir, DEPTH_FMT.format(f.index)), f.depth)
        write_raster(os.path.join(outdir, FLOW_FMT.format(f.index)), f.flow)


def read_sequence(seqdir) -> SyntheticSequence:
    meta_path = os.path.join(seqdir, "meta.json")
    if not os.path.isfile(meta_path):
        raise ParseError("missing meta.json", path=str(seqdir))
    meta = read_json(meta_path)
    cam = Camera.from_dict(meta["camera"])
    pyramid = pyramid_from_dict(read_json(os.path.join(seqdir, "graph.json")))
    n_nodes = pyramid.graph.num_nodes
    frames = []
    for t in range(int(meta["frame_count"])):
        fd = read_json(os.path.join(seqdir, FRAME_FMT.format(t)))
        positions = np.asarray(fd["positions"], dtype=float)
        if len(positions) != n_nodes:
            raise CountMismatch(
                f"{os.path.join(seqdir, FRAME_FMT.format(t))}: "
                f"{len(positions)} positions for {n_nodes} nodes"
            )
        frames.append(
            SyntheticFrame(
                index=int(fd["index"]),
                positions=positions,
                visible=np.asarray(fd["visible"], dtype=int).astype(bool),
                observed=np.asarray(fd["observed"], dtype=int).astype(bool),
                motions=np.asarray(fd["motions"], dtype=float),
                depth=read_raster(
                    os.path.join(seqdir, DEPTH_FMT.format(t)), (cam.height, cam.width)
                ),
                flow=read_raster(
                    os.path.join(seqdir, FLOW_FMT.format(t)), (cam.height, cam.width, 2)
                ),
                camera=cam,
            )
        )
    return SyntheticSequence(
        frames=frames,
        pyramid=pyramid,
        canonical_points=np.asarray(meta["canonical_points"], dtype=float),
        node_point_indices=np.asarray(meta["node_point_indices"], dtype=int),
        camera=cam,
        seed=int(meta["seed"]),
        config=meta.get("config", {}),
    )


def write_warp_field(field: WarpField, path) -> None:
    write_canonical(
        path, {"rotations": field.rotations, "translations": field.translations}
    )


def read_warp_field(path, graph: NodeGraph) -> WarpField:
    d = read_json(path)
    R = np.asarray(d["rotations"], dtype=float)
    t = np.asarray(d["translations"], dtype=float)
    if len(R) != graph.num_nodes or len(t) != graph.num_nodes:
        raise CountMismatch(f"{path}: field size != node count {graph.num_nodes}")
    return WarpField(graph, R, t)
