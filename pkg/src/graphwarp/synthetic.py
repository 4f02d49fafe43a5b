"""Synthetic ground-truth sequences: animated point sets seen by a virtual camera.

An animation is a (T, P, 3) trajectory of a deforming point set. The generator
samples deformation nodes on the first frame, builds the graph pyramid, renders
a per-frame depth buffer with a point-splat z-buffer, derives per-node
visibility, grows the observed node set, and emits exact per-frame motions,
optionally corrupted by per-sequence Gaussian noise, plus dense ground-truth
optical flow between consecutive frames.

The virtual camera is aimed once at the whole-sequence centroid, at a distance
that keeps the object fully in frame throughout, and all geometry is expressed
in that camera's frame (identity extrinsics afterwards).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BadSpec, DegenerateExtent, EmptyInput, NothingVisible
from .geometry import Camera, RigidTransform, compose, look_at, project, rotation_about_axis
from .pyramid import GraphPyramid, PyramidConfig, build_pyramid, sample_nodes
from .raster import splat_points


@dataclass
class AnimationSource:
    """Per-frame positions (T, P, 3) of a point set with constant topology."""

    positions: np.ndarray
    fps: float = 30.0
    name: str = "animation"

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        if self.positions.ndim != 3 or self.positions.shape[2] != 3:
            raise BadSpec("animation positions must have shape (T, P, 3)")

    @property
    def num_frames(self) -> int:
        return self.positions.shape[0]

    @property
    def num_points(self) -> int:
        return self.positions.shape[1]


def _resample_curve(values, frames: int) -> np.ndarray:
    """Linearly resample a list of control values to one value per frame."""
    vals = np.asarray(values, dtype=float).reshape(-1)
    if len(vals) == 0:
        raise BadSpec("empty angle curve")
    if len(vals) == 1:
        return np.full(frames, vals[0])
    if len(vals) == frames:
        return vals
    src = np.linspace(0.0, 1.0, len(vals))
    dst = np.linspace(0.0, 1.0, frames)
    return np.interp(dst, src, vals)


def _cuboid_surface(
    length: float, thickness_y: float, thickness_z: float, spacing: float
) -> np.ndarray:
    """Grid-sampled surface of a cuboid [0, length] x [+-ty/2] x [+-tz/2]."""
    hy = thickness_y / 2.0
    hz = thickness_z / 2.0
    nx = max(2, int(round(length / spacing)) + 1)
    ny = max(2, int(round(thickness_y / spacing)) + 1)
    nz = max(2, int(round(thickness_z / spacing)) + 1)
    xs = np.linspace(0.0, length, nx)
    ys = np.linspace(-hy, hy, ny)
    zs = np.linspace(-hz, hz, nz)
    pts = []
    # four long faces
    for y in (-hy, hy):
        gx, gz = np.meshgrid(xs, zs, indexing="ij")
        pts.append(np.stack([gx.ravel(), np.full(gx.size, y), gz.ravel()], axis=1))
    for z in (-hz, hz):
        gx, gy = np.meshgrid(xs, ys[1:-1], indexing="ij")
        pts.append(np.stack([gx.ravel(), gy.ravel(), np.full(gx.size, z)], axis=1))
    # end caps
    gy, gz = np.meshgrid(ys[1:-1], zs[1:-1], indexing="ij")
    for x in (0.0, length):
        pts.append(np.stack([np.full(gy.size, x), gy.ravel(), gz.ravel()], axis=1))
    return np.concatenate(pts, axis=0)


def _rotation_about_point(pivot, axis, angle) -> RigidTransform:
    R = rotation_about_axis(axis, angle)
    pivot = np.asarray(pivot, dtype=float)
    return RigidTransform(R, pivot - R @ pivot)


def _build_articulated(spec: dict) -> AnimationSource:
    frames = int(spec.get("frames", 0))
    if frames < 1:
        raise BadSpec("'frames' must be >= 1")
    spacing = float(spec.get("point_spacing", 0.015))
    if spacing <= 0:
        raise BadSpec("'point_spacing' must be positive")
    segments = spec.get("segments")
    if not segments:
        raise BadSpec("'segments' must be a non-empty list")

    rest_points = []
    seg_slices = []
    bases = []
    tips = []
    axes = []
    angle_curves = []
    parents = []
    for si, seg in enumerate(segments):
        parent = int(seg.get("parent", si - 1))
        if parent >= si:
            raise BadSpec(f"segment {si}: parent must come earlier in the list")
        parents.append(parent)
        length = float(seg.get("length", 0.0))
        thickness = float(seg.get("thickness", 0.08))
        thickness_z = float(seg.get("thickness_z", thickness))
        if length <= 0 or thickness <= 0 or thickness_z <= 0:
            raise BadSpec(f"segment {si}: length and thicknesses must be positive")
        direction = np.asarray(seg.get("direction", [1.0, 0.0, 0.0]), dtype=float)
        if np.linalg.norm(direction) == 0:
            raise BadSpec(f"segment {si}: zero direction")
        direction = direction / np.linalg.norm(direction)
        base = np.zeros(3) if parent < 0 else tips[parent]
        if "offset" in seg:
            base = base + np.asarray(seg["offset"], dtype=float)

        local = _cuboid_surface(length, thickness, thickness_z, spacing)
        # orient the local +x axis along `direction`
        xa = np.array([1.0, 0.0, 0.0])
        v = np.cross(xa, direction)
        s = np.linalg.norm(v)
        c = float(xa @ direction)
        if s < 1e-12:
            R = np.eye(3) if c > 0 else rotation_about_axis([0.0, 0.0, 1.0], np.pi)
        else:
            R = rotation_about_axis(v / s, np.arctan2(s, c))
        world = local @ R.T + base

        seg_slices.append(slice(sum(len(p) for p in rest_points),
                                sum(len(p) for p in rest_points) + len(world)))
        rest_points.append(world)
        bases.append(base)
        tips.append(base + direction * length)
        axis = np.asarray(seg.get("joint_axis", [0.0, 0.0, 1.0]), dtype=float)
        if np.linalg.norm(axis) == 0:
            raise BadSpec(f"segment {si}: zero joint_axis")
        axes.append(axis / np.linalg.norm(axis))
        angle_curves.append(
            np.deg2rad(_resample_curve(seg.get("joint_angles_deg", [0.0]), frames))
        )

    rest = np.concatenate(rest_points, axis=0)
    out = np.empty((frames, len(rest), 3))
    for t in range(frames):
        transforms = []
        for si in range(len(segments)):
            joint = _rotation_about_point(bases[si], axes[si], angle_curves[si][t])
            if parents[si] >= 0:
                transforms.append(compose(transforms[parents[si]], joint))
            else:
                transforms.append(joint)
            out[t, seg_slices[si]] = transforms[si].apply(rest[seg_slices[si]])
    return AnimationSource(out, fps=float(spec.get("fps", 30.0)), name=spec.get("name", "articulated"))


def _build_sheet(spec: dict) -> AnimationSource:
    frames = int(spec.get("frames", 0))
    if frames < 1:
        raise BadSpec("'frames' must be >= 1")
    width = float(spec.get("width", 0.8))
    height = float(spec.get("height", 0.6))
    spacing = float(spec.get("point_spacing", 0.015))
    if min(width, height, spacing) <= 0:
        raise BadSpec("sheet dimensions and spacing must be positive")
    nx = max(2, int(round(width / spacing)) + 1)
    ny = max(2, int(round(height / spacing)) + 1)
    xs = np.linspace(0.0, width, nx)
    ys = np.linspace(0.0, height, ny)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    angles = np.deg2rad(_resample_curve(spec.get("bend_angles_deg", [0.0]), frames))

    out = np.empty((frames, gx.size, 3))
    for t in range(frames):
        phi = angles[t]
        x = gx.ravel()
        if abs(phi) < 1e-9:
            out[t] = np.stack([x, gy.ravel(), np.zeros_like(x)], axis=1)
        else:
            # cylindrical bend preserving arc length along x
            kappa = phi / width
            out[t] = np.stack(
                [np.sin(kappa * x) / kappa, gy.ravel(), (1.0 - np.cos(kappa * x)) / kappa],
                axis=1,
            )
    return AnimationSource(out, fps=float(spec.get("fps", 30.0)), name=spec.get("name", "sheet"))


def make_articulated_animation(spec: dict) -> AnimationSource:
    """Build a piecewise-rigid (or bending-sheet) animation from a spec dict.

    spec["type"]: "chain"/"tree" (cuboid segments driven by joint angle
    curves) or "sheet" (cylindrically bending rectangle). Curves are lists of
    control values resampled linearly over the frame count.
    """
    kind = spec.get("type", "chain")
    if kind in ("chain", "tree"):
        return _build_articulated(spec)
    if kind == "sheet":
        return _build_sheet(spec)
    raise BadSpec(f"unknown animation type {kind!r}")


def load_animation(path) -> AnimationSource:
    """Import per-frame point positions from an .npz ('positions') or JSON file."""
    path = str(path)
    if path.endswith(".npz"):
        data = np.load(path)
        if "positions" not in data:
            raise BadSpec(f"{path}: missing 'positions' array")
        return AnimationSource(data["positions"])
    from .jsonutil import read_json

    data = read_json(path)
    if "positions" not in data:
        raise BadSpec(f"{path}: missing 'positions' key")
    return AnimationSource(np.asarray(data["positions"], dtype=float))


def resize_to_box(
    anim: AnimationSource, extent_range=(1.0, 2.0), seed: int = 0
) -> AnimationSource:
    """Uniformly rescale and recenter so the whole-sequence bounding box has a
    longest side drawn from `extent_range` (deterministic given seed)."""
    lo, hi = float(extent_range[0]), float(extent_range[1])
    if lo <= 0 or hi < lo:
        raise ValueError("extent_range must be 0 < lo <= hi")
    pts = anim.positions.reshape(-1, 3)
    mins = pts.min(axis=0)
    maxs = pts.max(axis=0)
    extent = float((maxs - mins).max())
    if extent <= 0:
        raise DegenerateExtent("animation occupies a single point")
    target = float(np.random.default_rng(seed).uniform(lo, hi))
    scale = target / extent
    center = (mins + maxs) / 2.0
    return AnimationSource(
        (anim.positions - center) * scale, fps=anim.fps, name=anim.name
    )


def aim_camera(
    points: np.ndarray, cam: Camera, margin: float = 1.2, view_direction=(0.0, 0.0, 1.0)
) -> RigidTransform:
    """World-to-camera pose looking along `view_direction` at the centroid of
    `points`, far enough back that everything fits in frame with `margin`."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        raise EmptyInput("cannot aim at an empty point set")
    center = (pts.min(axis=0) + pts.max(axis=0)) / 2.0
    rho = float(np.linalg.norm(pts - center, axis=1).max())
    rho = max(rho, 1e-6)
    k = max(2.0 * cam.fx / cam.width, 2.0 * cam.fy / cam.height)
    distance = rho * (1.0 + margin * k)
    d = np.asarray(view_direction, dtype=float)
    d = d / np.linalg.norm(d)
    eye = center - distance * d
    return look_at(eye, center)


def render_depth(
    points: np.ndarray,
    cam: Camera,
    splat_radius: int = 1,
    pose: RigidTransform | None = None,
):
    """Render a depth buffer (and per-pixel point index) via z-buffer splatting.

    With pose=None the camera is aimed automatically at the centroid of
    `points`; returns (depth, index, pose). Raises NothingVisible if no point
    lands in front of the camera.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if pose is None:
        pose = aim_camera(pts, cam)
    pts_cam = pose.apply(pts)
    depth, index = splat_points(pts_cam, cam, splat_radius)
    if not np.any(depth > 0):
        raise NothingVisible("no point projects into the image")
    return depth, index, pose


def compute_visibility(
    node_positions: np.ndarray, depth: np.ndarray, cam: Camera, tol: float = 0.02
) -> np.ndarray:
    """Depth-buffer visibility: a node is visible iff it projects in-bounds and
    its depth is within `tol` of the rendered surface at that pixel.

    Pixels the render left empty do not occlude. Nodes behind the camera are
    occluded. Returns a boolean mask.
    """
    pts = np.asarray(node_positions, dtype=float).reshape(-1, 3)
    vis = np.zeros(len(pts), dtype=bool)
    front = pts[:, 2] > 0
    if not np.any(front):
        return vis
    z = pts[front, 2]
    u = cam.fx * pts[front, 0] / z + cam.cx
    v = cam.fy * pts[front, 1] / z + cam.cy
    px = np.rint(u).astype(int)
    py = np.rint(v).astype(int)
    ok = (px >= 0) & (px < cam.width) & (py >= 0) & (py < cam.height)
    d = np.zeros(len(z))
    d[ok] = depth[py[ok], px[ok]]
    visible_front = ok & ((d == 0) | (z <= d + tol))
    vis[np.flatnonzero(front)] = visible_front
    return vis


def draw_noise_sigma(seed: int, sigma_max: float) -> float:
    """The per-sequence noise level: sigma ~ U(0, sigma_max), from `seed`."""
    if sigma_max < 0:
        raise ValueError("sigma_max must be >= 0")
    if sigma_max == 0:
        return 0.0
    return float(np.random.default_rng(seed).uniform(0.0, sigma_max))


def add_motion_noise(
    visible_motions: np.ndarray, seed: int, sigma_max: float = 0.004
) -> np.ndarray:
    """Perturb motions with isotropic Gaussian noise of a per-call sigma drawn
    uniformly from [0, sigma_max]. Deterministic given seed."""
    motions = np.asarray(visible_motions, dtype=float)
    if sigma_max == 0:
        return motions.copy()
    rng = np.random.default_rng(seed)
    sigma = float(rng.uniform(0.0, sigma_max))
    return motions + rng.normal(0.0, sigma, motions.shape)


@dataclass
class SyntheticFrame:
    """One observation frame.

    motions holds the observed (possibly noised) displacement from the
    previous frame, defined where `visible` is set and zero elsewhere; frame 0
    has zero motion. observed is the monotonically growing ever-visible set.
    """

    index: int
    positions: np.ndarray  # (N, 3) ground-truth node positions, camera frame
    visible: np.ndarray  # (N,) bool
    observed: np.ndarray  # (N,) bool
    motions: np.ndarray  # (N, 3)
    depth: np.ndarray  # (H, W) float32, 0 = no hit
    flow: np.ndarray  # (H, W, 2) float32 pixel flow from previous frame
    camera: Camera

    @property
    def occluded(self) -> np.ndarray:
        """Nodes in the observed set that are not currently visible."""
        return self.observed & ~self.visible


@dataclass
class SyntheticSequence:
    """Frames plus the shared canonical geometry and graph pyramid."""

    frames: list
    pyramid: GraphPyramid
    canonical_points: np.ndarray  # (P, 3) frame-0 surface points, camera frame
    node_point_indices: np.ndarray  # (N,) node index -> canonical point index
    camera: Camera
    seed: int
    config: dict = field(default_factory=dict)

    @property
    def num_frames(self) -> int:
        return len(self.frames)

    @property
    def num_nodes(self) -> int:
        return self.pyramid.graph.num_nodes

    def gt_motion(self, t: int) -> np.ndarray:
        """Exact node displacement from frame t-1 to frame t."""
        if t < 1:
            return np.zeros_like(self.frames[0].positions)
        return self.frames[t].positions - self.frames[t - 1].positions


@dataclass(frozen=True)
class SynthConfig:
    """Generator knobs: camera, rendering, noise, resizing."""

    camera: Camera = Camera(260.0, 260.0, 159.5, 119.5, 320, 240)
    margin: float = 1.2
    view_direction: tuple = (0.0, 0.0, 1.0)
    splat_radius: int = 1
    visibility_tol: float = 0.02
    noise_sigma_max: float = 0.0
    resize_range: tuple | None = None

    def to_dict(self) -> dict:
        return {
            "camera": self.camera.to_dict(),
            "margin": float(self.margin),
            "view_direction": [float(v) for v in self.view_direction],
            "splat_radius": int(self.splat_radius),
            "visibility_tol": float(self.visibility_tol),
            "noise_sigma_max": float(self.noise_sigma_max),
            "resize_range": None
            if self.resize_range is None
            else [float(v) for v in self.resize_range],
        }


def generate_sequence(
    anim: AnimationSource,
    config: SynthConfig = SynthConfig(),
    pyramid_config: PyramidConfig = PyramidConfig(),
    seed: int = 0,
) -> SyntheticSequence:
    """Run the full synthetic observation pipeline on an animation.

    Nodes are sampled on the frame-0 surface, the pyramid is built once (with
    temporal edge pruning over the node trajectories), and each frame records
    depth, ground-truth flow, visibility, the growing observed set, and the
    noised visible motions. All randomness derives from `seed`.
    """
    if anim.num_frames < 2:
        raise BadSpec("animation must have at least 2 frames")

    ss = np.random.SeedSequence(seed)
    seed_resize, seed_sigma, seed_frames = ss.spawn(3)

    if config.resize_range is not None:
        anim = resize_to_box(
            anim, config.resize_range, seed=seed_resize.generate_state(1)[0]
        )

    cam = config.camera
    pose = aim_camera(
        anim.positions.reshape(-1, 3), cam, config.margin, config.view_direction
    )
    positions = pose.apply(anim.positions.reshape(-1, 3)).reshape(anim.positions.shape)

    points0 = positions[0]
    node_idx = sample_nodes(points0, pyramid_config.intervals[0])
    pyramid = build_pyramid(points0, pyramid_config, trajectories=positions)
    node_traj = positions[:, node_idx, :]

    sigma_noise = draw_noise_sigma(seed_sigma.generate_state(1)[0], config.noise_sigma_max)
    frame_seeds = seed_frames.spawn(anim.num_frames)

    frames = []
    observed = np.zeros(len(node_idx), dtype=bool)
    prev_index = None
    for t in range(anim.num_frames):
        depth, index = splat_points(positions[t], cam, config.splat_radius)
        if not np.any(depth > 0):
            raise NothingVisible(f"frame {t}: nothing in front of the camera")
        visible = compute_visibility(node_traj[t], depth, cam, config.visibility_tol)
        observed = observed | visible

        flow = np.zeros((cam.height, cam.width, 2), dtype=np.float32)
        motions = np.zeros((len(node_idx), 3))
        if t > 0:
            hit = prev_index >= 0
            ids = prev_index[hit]
            nxt = positions[t][ids]
            in_front = nxt[:, 2] > 0
            uv = np.zeros((len(ids), 2))
            uv[in_front] = project(cam, nxt[in_front])
            ys, xs = np.nonzero(hit)
            fl = uv - np.stack([xs, ys], axis=1)
            fl[~in_front] = 0.0
            flow[ys, xs] = fl.astype(np.float32)

            gt = node_traj[t] - node_traj[t - 1]
            if sigma_noise > 0:
                rng = np.random.default_rng(frame_seeds[t].generate_state(1)[0])
                gt = gt + rng.normal(0.0, sigma_noise, gt.shape)
            motions[visible] = gt[visible]

        frames.append(
            SyntheticFrame(
                index=t,
                positions=node_traj[t].copy(),
                visible=visible,
                observed=observed.copy(),
                motions=motions,
                depth=depth.astype(np.float32),
                flow=flow,
                camera=cam,
            )
        )
        prev_index = index

    return SyntheticSequence(
        frames=frames,
        pyramid=pyramid,
        canonical_points=points0.copy(),
        node_point_indices=node_idx,
        camera=cam,
        seed=seed,
        config=config.to_dict(),
    )
