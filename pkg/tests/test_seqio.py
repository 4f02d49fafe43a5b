import json
import os

import numpy as np
import pytest

from graphwarp.errors import ParseError
from graphwarp.geometry import exp_so3
from graphwarp.jsonutil import dumps_canonical, read_json, write_canonical
from graphwarp.pyramid import PyramidConfig, build_pyramid
from graphwarp.seqio import (
    pyramid_from_dict,
    pyramid_to_dict,
    read_raster,
    read_sequence,
    read_warp_field,
    write_raster,
    write_sequence,
    write_warp_field,
)
from graphwarp.synthetic import SynthConfig, generate_sequence, make_articulated_animation
from graphwarp.warp import WarpField


def small_sequence(seed=0, frames=4):
    spec = {
        "type": "chain",
        "frames": frames,
        "point_spacing": 0.025,
        "segments": [
            {"length": 0.3, "thickness": 0.08, "joint_angles_deg": [0.0]},
            {"length": 0.3, "thickness": 0.08, "joint_angles_deg": [0.0, 25.0]},
        ],
    }
    anim = make_articulated_animation(spec)
    return generate_sequence(anim, SynthConfig(), PyramidConfig(), seed=seed)


class TestCanonicalJson:
    def test_sorted_keys_and_fixed_floats(self):
        s = dumps_canonical({"b": 1.5, "a": [0.1, 2, True, None]})
        assert s == '{"a":[0.1,2,true,null],"b":1.5}\n'

    def test_nine_significant_digits(self):
        s = dumps_canonical({"x": 0.12345678949})
        assert s == '{"x":0.123456789}\n'

    def test_integral_floats_keep_point(self):
        assert dumps_canonical({"x": 2.0}) == '{"x":2.0}\n'
        assert json.loads('{"x":2.0}')["x"] == 2.0

    def test_write_read_write_stable(self, tmp_path):
        rng = np.random.default_rng(0)
        obj = {"a": rng.normal(size=(5, 3)), "n": 7, "s": "text"}
        p1 = tmp_path / "a.json"
        p2 = tmp_path / "b.json"
        write_canonical(p1, obj)
        write_canonical(p2, read_json(p1))
        assert p1.read_bytes() == p2.read_bytes()

    def test_numpy_scalars(self):
        s = dumps_canonical({"i": np.int64(3), "f": np.float64(0.25), "b": np.bool_(True)})
        assert s == '{"b":true,"f":0.25,"i":3}\n'


class TestRasters:
    def test_roundtrip_exact(self, tmp_path):
        rng = np.random.default_rng(1)
        arr = rng.normal(size=(24, 32)).astype(np.float32)
        path = tmp_path / "depth.bin"
        write_raster(path, arr)
        back = read_raster(path, (24, 32))
        assert np.array_equal(back, arr)

    def test_flow_channels(self, tmp_path):
        rng = np.random.default_rng(2)
        arr = rng.normal(size=(8, 6, 2)).astype(np.float32)
        path = tmp_path / "flow.bin"
        write_raster(path, arr)
        assert np.array_equal(read_raster(path, (8, 6, 2)), arr)

    def test_little_endian_layout(self, tmp_path):
        arr = np.array([[1.0, 2.0]], dtype=np.float32)
        path = tmp_path / "r.bin"
        write_raster(path, arr)
        raw = path.read_bytes()
        assert raw == np.array([1.0, 2.0], dtype="<f4").tobytes()

    def test_size_mismatch(self, tmp_path):
        path = tmp_path / "bad.bin"
        write_raster(path, np.zeros((4, 4), dtype=np.float32))
        with pytest.raises(ParseError):
            read_raster(path, (5, 5))


class TestPyramidJson:
    def test_roundtrip(self):
        rng = np.random.default_rng(3)
        pyr = build_pyramid(rng.uniform(0, 0.6, size=(300, 3)))
        back = pyramid_from_dict(pyramid_to_dict(pyr))
        assert back.num_levels == pyr.num_levels
        for a, b in zip(pyr.levels, back.levels):
            assert np.allclose(a.positions, b.positions)
            assert a.edges == b.edges
        for a, b in zip(pyr.subset_maps, back.subset_maps):
            assert np.array_equal(a, b)
        for a, b in zip(pyr.upsample_maps, back.upsample_maps):
            assert np.array_equal(a, b)


class TestSequenceIO:
    def test_roundtrip_fields(self, tmp_path):
        seq = small_sequence()
        out = tmp_path / "seq"
        write_sequence(seq, out)
        back = read_sequence(out)
        assert back.num_frames == seq.num_frames
        assert back.num_nodes == seq.num_nodes
        assert np.array_equal(back.node_point_indices, seq.node_point_indices)
        for fa, fb in zip(seq.frames, back.frames):
            assert np.array_equal(fa.visible, fb.visible)
            assert np.array_equal(fa.observed, fb.observed)
            assert np.array_equal(fa.depth, fb.depth)
            assert np.array_equal(fa.flow, fb.flow)
            assert np.abs(fa.positions - fb.positions).max() < 1e-7
            assert np.abs(fa.motions - fb.motions).max() < 1e-7

    def test_write_read_write_byte_identical(self, tmp_path):
        seq = small_sequence()
        d1 = tmp_path / "one"
        d2 = tmp_path / "two"
        write_sequence(seq, d1)
        write_sequence(read_sequence(d1), d2)
        files1 = sorted(os.listdir(d1))
        assert files1 == sorted(os.listdir(d2))
        for name in files1:
            assert (d1 / name).read_bytes() == (d2 / name).read_bytes(), name

    def test_missing_meta_raises(self, tmp_path):
        with pytest.raises(ParseError):
            read_sequence(tmp_path)


class TestWarpFieldIO:
    def test_roundtrip(self, tmp_path):
        seq = small_sequence()
        graph = seq.pyramid.graph
        rng = np.random.default_rng(4)
        R = np.stack([exp_so3(rng.normal(scale=0.1, size=3)) for _ in range(graph.num_nodes)])
        t = rng.normal(scale=0.02, size=(graph.num_nodes, 3))
        field = WarpField(graph, R, t)
        path = tmp_path / "field_0001.json"
        write_warp_field(field, path)
        back = read_warp_field(path, graph)
        assert np.abs(back.rotations - field.rotations).max() < 1e-8
        assert np.abs(back.translations - field.translations).max() < 1e-8
