import numpy as np
import pytest

from graphwarp.errors import BadSpec, DegenerateExtent, NothingVisible
from graphwarp.geometry import Camera, RigidTransform, rotation_about_axis
from graphwarp.pyramid import PyramidConfig
from graphwarp.synthetic import (
    AnimationSource,
    SynthConfig,
    add_motion_noise,
    aim_camera,
    compute_visibility,
    draw_noise_sigma,
    generate_sequence,
    make_articulated_animation,
    render_depth,
    resize_to_box,
)

CAM = Camera(fx=260.0, fy=260.0, cx=159.5, cy=119.5, width=320, height=240)


def one_joint_spec(frames=10, angles=(0.0, 90.0)):
    return {
        "type": "chain",
        "frames": frames,
        "point_spacing": 0.02,
        "segments": [
            {"length": 0.3, "thickness": 0.06, "joint_angles_deg": [0.0]},
            {
                "length": 0.3,
                "thickness": 0.06,
                "joint_axis": [0, 0, 1],
                "joint_angles_deg": list(angles),
            },
        ],
    }


class TestArticulatedAnimation:
    def test_static_when_curves_zero(self):
        spec = one_joint_spec(angles=(0.0,))
        anim = make_articulated_animation(spec)
        assert np.array_equal(anim.positions[0], anim.positions[-1])

    def test_distal_points_trace_arc(self):
        frames = 10
        anim = make_articulated_animation(one_joint_spec(frames=frames))
        pivot = np.array([0.3, 0.0, 0.0])  # second segment's base
        rest = anim.positions[0]
        distal = np.flatnonzero(rest[:, 0] > 0.31)
        angles = np.deg2rad(np.linspace(0.0, 90.0, frames))
        for t in range(frames):
            R = rotation_about_axis([0, 0, 1], angles[t])
            expected = (rest[distal] - pivot) @ R.T + pivot
            assert np.abs(anim.positions[t, distal] - expected).max() < 1e-12

    def test_frame_displacement_matches_rotation_delta(self):
        frames = 10
        anim = make_articulated_animation(one_joint_spec(frames=frames))
        rest = anim.positions[0]
        pivot = np.array([0.3, 0.0, 0.0])
        distal = np.flatnonzero(rest[:, 0] > 0.31)
        angles = np.deg2rad(np.linspace(0.0, 90.0, frames))
        t = 4
        Ra = rotation_about_axis([0, 0, 1], angles[t])
        Rb = rotation_about_axis([0, 0, 1], angles[t + 1])
        expected = (rest[distal] - pivot) @ (Rb - Ra).T
        got = anim.positions[t + 1, distal] - anim.positions[t, distal]
        assert np.abs(got - expected).max() < 1e-12

    def test_proximal_segment_stays(self):
        anim = make_articulated_animation(one_joint_spec())
        rest = anim.positions[0]
        proximal = np.flatnonzero(rest[:, 0] < 0.29)
        assert np.abs(anim.positions[-1, proximal] - rest[proximal]).max() < 1e-12

    def test_tree_with_offset_child(self):
        spec = {
            "type": "tree",
            "frames": 3,
            "point_spacing": 0.03,
            "segments": [
                {"length": 0.4, "thickness": 0.1, "direction": [1, 0, 0]},
                {
                    "length": 0.2,
                    "thickness": 0.05,
                    "parent": 0,
                    "direction": [0, 1, 0],
                    "offset": [-0.2, 0.0, 0.0],
                    "joint_axis": [1, 0, 0],
                    "joint_angles_deg": [0.0, 45.0],
                },
            ],
        }
        anim = make_articulated_animation(spec)
        assert anim.num_frames == 3
        # child rotates about x through its base (0.2, 0, 0)
        rest = anim.positions[0]
        child = np.flatnonzero(rest[:, 1] > 0.05)
        R = rotation_about_axis([1, 0, 0], np.deg2rad(45.0))
        base = np.array([0.2, 0.0, 0.0])
        expected = (rest[child] - base) @ R.T + base
        assert np.abs(anim.positions[2, child] - expected).max() < 1e-12

    def test_sheet_preserves_arc_length(self):
        spec = {
            "type": "sheet",
            "frames": 5,
            "width": 0.6,
            "height": 0.4,
            "point_spacing": 0.05,
            "bend_angles_deg": [0.0, 120.0],
        }
        anim = make_articulated_animation(spec)
        # row length along the bend direction is preserved per frame
        rest = anim.positions[0]
        row = np.flatnonzero(np.abs(rest[:, 1]) < 1e-9)
        order = np.argsort(rest[row, 0])
        for t in range(5):
            pts = anim.positions[t, row][order]
            seg = np.linalg.norm(np.diff(pts, axis=0), axis=1).sum()
            assert seg == pytest.approx(0.6, abs=1e-3)

    def test_bad_specs(self):
        with pytest.raises(BadSpec):
            make_articulated_animation({"type": "chain", "frames": 0, "segments": []})
        with pytest.raises(BadSpec):
            make_articulated_animation({"type": "nope", "frames": 2})
        with pytest.raises(BadSpec):
            make_articulated_animation(
                {"type": "chain", "frames": 2, "segments": [{"length": -1.0}]}
            )


class TestResize:
    def test_forced_extent_identity_up_to_recentering(self):
        anim = make_articulated_animation(one_joint_spec())
        pts = anim.positions.reshape(-1, 3)
        extent = float((pts.max(axis=0) - pts.min(axis=0)).max())
        out = resize_to_box(anim, (extent, extent), seed=3)
        d_in = anim.positions[0, :50] - anim.positions[0, 0]
        d_out = out.positions[0, :50] - out.positions[0, 0]
        assert np.abs(d_in - d_out).max() < 1e-12

    def test_double_extent_doubles_distances(self):
        anim = make_articulated_animation(one_joint_spec())
        pts = anim.positions.reshape(-1, 3)
        extent = float((pts.max(axis=0) - pts.min(axis=0)).max())
        out = resize_to_box(anim, (2 * extent, 2 * extent), seed=0)
        i, j = 10, 200
        for t in (0, 5):
            d_in = np.linalg.norm(anim.positions[t, i] - anim.positions[t, j])
            d_out = np.linalg.norm(out.positions[t, i] - out.positions[t, j])
            assert d_out == pytest.approx(2 * d_in, rel=1e-12)

    def test_seed_determinism(self):
        anim = make_articulated_animation(one_joint_spec())
        a = resize_to_box(anim, (1.0, 2.0), seed=7)
        b = resize_to_box(anim, (1.0, 2.0), seed=7)
        assert np.array_equal(a.positions, b.positions)
        c = resize_to_box(anim, (1.0, 2.0), seed=8)
        assert not np.array_equal(a.positions, c.positions)

    def test_degenerate(self):
        anim = AnimationSource(np.zeros((3, 4, 3)))
        with pytest.raises(DegenerateExtent):
            resize_to_box(anim)


class TestRenderDepth:
    def test_single_point_on_axis(self):
        depth, index, _ = render_depth(
            np.array([[0.0, 0.0, 1.0]]), CAM, pose=RigidTransform.identity()
        )
        px, py = round(CAM.cx), round(CAM.cy)
        assert depth[py, px] == pytest.approx(1.0)
        assert index[py, px] == 0

    def test_nearer_point_wins(self):
        pts = np.array([[0.0, 0.0, 2.0], [0.0, 0.0, 1.0]])
        depth, index, _ = render_depth(pts, CAM, pose=RigidTransform.identity())
        px, py = round(CAM.cx), round(CAM.cy)
        assert depth[py, px] == pytest.approx(1.0)
        assert index[py, px] == 1

    def test_fronto_parallel_plane_constant(self):
        xs = np.linspace(-0.3, 0.3, 61)
        gx, gy = np.meshgrid(xs, xs, indexing="ij")
        pts = np.stack([gx.ravel(), gy.ravel(), np.full(gx.size, 1.5)], axis=1)
        depth, _, _ = render_depth(pts, CAM, pose=RigidTransform.identity())
        hit = depth > 0
        assert hit.sum() > 1000
        assert np.abs(depth[hit] - 1.5).max() < 1e-12

    def test_auto_aim_centers_object(self):
        rng = np.random.default_rng(0)
        pts = rng.uniform(-0.3, 0.3, size=(500, 3))
        depth, _, pose = render_depth(pts, CAM)
        assert np.any(depth > 0)
        pts_cam = pose.apply(pts)
        assert pts_cam[:, 2].min() > 0  # everything in front

    def test_nothing_visible(self):
        with pytest.raises(NothingVisible):
            render_depth(
                np.array([[0.0, 0.0, -1.0]]), CAM, pose=RigidTransform.identity()
            )


class TestVisibility:
    def test_single_node_visible(self):
        node = np.array([[0.0, 0.0, 1.0]])
        depth, _, _ = render_depth(node, CAM, pose=RigidTransform.identity())
        assert compute_visibility(node, depth, CAM).tolist() == [True]

    def test_node_behind_plane_occluded(self):
        xs = np.linspace(-0.2, 0.2, 41)
        gx, gy = np.meshgrid(xs, xs, indexing="ij")
        plane = np.stack([gx.ravel(), gy.ravel(), np.full(gx.size, 1.0)], axis=1)
        depth, _, _ = render_depth(plane, CAM, pose=RigidTransform.identity())
        node = np.array([[0.0, 0.0, 1.1]])  # 10 cm behind the plane
        assert compute_visibility(node, depth, CAM, tol=0.02).tolist() == [False]
        near = np.array([[0.0, 0.0, 1.01]])  # within tolerance
        assert compute_visibility(near, depth, CAM, tol=0.02).tolist() == [True]

    def test_out_of_bounds_occluded(self):
        node = np.array([[10.0, 0.0, 1.0]])
        depth = np.zeros((CAM.height, CAM.width))
        assert compute_visibility(node, depth, CAM).tolist() == [False]

    def test_behind_camera_occluded(self):
        node = np.array([[0.0, 0.0, -1.0]])
        depth = np.zeros((CAM.height, CAM.width))
        assert compute_visibility(node, depth, CAM).tolist() == [False]


class TestMotionNoise:
    def test_zero_sigma_max_unchanged(self):
        rng = np.random.default_rng(1)
        motions = rng.normal(size=(50, 3))
        assert np.array_equal(add_motion_noise(motions, seed=0, sigma_max=0.0), motions)

    def test_seed_determinism(self):
        motions = np.zeros((20, 3))
        a = add_motion_noise(motions, seed=5, sigma_max=0.004)
        b = add_motion_noise(motions, seed=5, sigma_max=0.004)
        assert np.array_equal(a, b)
        c = add_motion_noise(motions, seed=6, sigma_max=0.004)
        assert not np.array_equal(a, c)

    def test_empirical_std_matches_drawn_sigma(self):
        n = 100_000
        seed = 12
        sigma = draw_noise_sigma(seed, 0.004)
        noised = add_motion_noise(np.zeros((n, 3)), seed=seed, sigma_max=0.004)
        emp = noised.std()
        assert abs(emp - sigma) / sigma < 0.02


def rotating_spec(frames=12):
    # root joint spins the whole cuboid about the vertical axis
    return {
        "type": "chain",
        "frames": frames,
        "point_spacing": 0.02,
        "segments": [
            {
                "length": 0.4,
                "thickness": 0.12,
                "joint_axis": [0, 1, 0],
                "joint_angles_deg": [0.0, 180.0],
            }
        ],
    }


class TestGenerateSequence:
    def test_static_animation(self):
        spec = one_joint_spec(frames=4, angles=(0.0,))
        anim = make_articulated_animation(spec)
        seq = generate_sequence(anim, SynthConfig(), PyramidConfig(), seed=0)
        for f in seq.frames:
            assert np.abs(f.motions).max() == 0.0
            assert np.array_equal(f.observed, seq.frames[0].observed)

    def test_observed_set_monotone(self):
        anim = make_articulated_animation(rotating_spec())
        seq = generate_sequence(anim, SynthConfig(), PyramidConfig(), seed=1)
        for a, b in zip(seq.frames, seq.frames[1:]):
            assert np.all(b.observed >= a.observed)
        # the union over time equals the final observed set
        union = np.zeros(seq.num_nodes, dtype=bool)
        for f in seq.frames:
            union |= f.visible
        assert np.array_equal(union, seq.frames[-1].observed)

    def test_rotation_reveals_hidden_nodes(self):
        anim = make_articulated_animation(rotating_spec())
        seq = generate_sequence(anim, SynthConfig(), PyramidConfig(), seed=2)
        first, last = seq.frames[0], seq.frames[-1]
        newly = np.flatnonzero(~first.observed & last.observed)
        assert len(newly) > 0
        # once observed, a node stays in the observed set
        for i in newly:
            t0 = next(t for t, f in enumerate(seq.frames) if f.visible[i])
            for t in range(t0, seq.num_frames):
                assert seq.frames[t].observed[i]

    def test_occluded_is_observed_minus_visible(self):
        anim = make_articulated_animation(rotating_spec())
        seq = generate_sequence(anim, SynthConfig(), PyramidConfig(), seed=3)
        for f in seq.frames:
            assert np.array_equal(f.occluded, f.observed & ~f.visible)
            assert not np.any(f.visible & ~f.observed)

    def test_motions_only_where_visible(self):
        anim = make_articulated_animation(one_joint_spec())
        seq = generate_sequence(anim, SynthConfig(), PyramidConfig(), seed=4)
        for f in seq.frames[1:]:
            assert np.all(np.linalg.norm(f.motions[~f.visible], axis=1) == 0.0)

    def test_exact_motions_without_noise(self):
        anim = make_articulated_animation(one_joint_spec())
        seq = generate_sequence(anim, SynthConfig(), PyramidConfig(), seed=5)
        for t in range(1, seq.num_frames):
            f = seq.frames[t]
            gt = seq.gt_motion(t)
            assert np.abs(f.motions[f.visible] - gt[f.visible]).max() < 1e-12

    def test_seed_reproducibility(self):
        anim = make_articulated_animation(one_joint_spec())
        cfg = SynthConfig(noise_sigma_max=0.004, resize_range=(1.0, 2.0))
        a = generate_sequence(anim, cfg, PyramidConfig(), seed=9)
        b = generate_sequence(anim, cfg, PyramidConfig(), seed=9)
        for fa, fb in zip(a.frames, b.frames):
            assert np.array_equal(fa.positions, fb.positions)
            assert np.array_equal(fa.motions, fb.motions)
            assert np.array_equal(fa.depth, fb.depth)
            assert np.array_equal(fa.flow, fb.flow)

    def test_flow_consistency_on_sparse_nodes(self):
        # nodes are the only rendered points and sit far apart in pixel space,
        # so every visible node owns its pixel and the flow chain recovers its
        # next position to float32 accuracy
        spec = {
            "type": "sheet",
            "frames": 6,
            "width": 0.5,
            "height": 0.4,
            "point_spacing": 0.1,
            "bend_angles_deg": [0.0, 40.0],
        }
        anim = make_articulated_animation(spec)
        cfg = SynthConfig(margin=0.6)
        seq = generate_sequence(anim, cfg, PyramidConfig(), seed=6)
        cam = seq.camera
        checked = 0
        for t in range(1, seq.num_frames):
            prev, cur = seq.frames[t - 1], seq.frames[t]
            for i in range(seq.num_nodes):
                if not (prev.visible[i] and cur.visible[i]):
                    continue
                p = prev.positions[i]
                u = cam.fx * p[0] / p[2] + cam.cx
                v = cam.fy * p[1] / p[2] + cam.cy
                px, py = round(u), round(v)
                if abs(prev.depth[py, px] - p[2]) > 1e-6:
                    continue  # pixel owned by another point
                fl = cur.flow[py, px]
                target = np.array([px + fl[0], py + fl[1]])
                tpx, tpy = round(float(target[0])), round(float(target[1]))
                d = cur.depth[tpy, tpx]
                if d <= 0:
                    continue
                rec = np.array(
                    [
                        (target[0] - cam.cx) / cam.fx * d,
                        (target[1] - cam.cy) / cam.fy * d,
                        d,
                    ]
                )
                assert np.linalg.norm(rec - cur.positions[i]) < 1e-4
                checked += 1
        assert checked > 20

    def test_requires_two_frames(self):
        anim = AnimationSource(np.zeros((1, 10, 3)) + [[0.0, 0.0, 1.0]])
        with pytest.raises(BadSpec):
            generate_sequence(anim, SynthConfig(), PyramidConfig(), seed=0)


def test_aim_camera_keeps_everything_in_frame():
    rng = np.random.default_rng(7)
    for _ in range(5):
        pts = rng.uniform(-1.0, 1.0, size=(200, 3)) * rng.uniform(0.2, 1.0)
        pose = aim_camera(pts, CAM, margin=1.2)
        cam_pts = pose.apply(pts)
        assert cam_pts[:, 2].min() > 0
        u = CAM.fx * cam_pts[:, 0] / cam_pts[:, 2] + CAM.cx
        v = CAM.fy * cam_pts[:, 1] / cam_pts[:, 2] + CAM.cy
        assert u.min() >= 0 and u.max() < CAM.width
        assert v.min() >= 0 and v.max() < CAM.height
