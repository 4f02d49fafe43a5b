"""graphwarp: deformation-graph motion estimation and warp-field fitting.

Estimates full 3D motion of a deformation node graph from partial
(visible-only) observations and fits a confidence-weighted warp field to
synthetic RGB-D-style sequences. See the README for the CLI and file formats.
"""

from .config import Config, load_config
from .errors import GraphWarpError
from .evaluation import EvalReport, epe, geometry_error
from .geometry import Camera, RigidTransform, backproject, compose, project, rigid_fit
from .losses import (
    LossValue,
    WeightParams,
    motion_weight,
    motion_weights,
    nll_loss,
    total_loss,
    truncate_sigma,
)
from .motion import (
    ArapParams,
    GaussianMotion,
    MotionPrediction,
    arap_refine,
    load_external_predictions,
    predict_arap,
    predict_rigid,
    split_rigid,
)
from .pyramid import (
    GraphPyramid,
    NodeGraph,
    PyramidConfig,
    build_pyramid,
    downsample_features,
    prune_edges_temporal,
    sample_nodes,
    upsample_features,
)
from .registration import (
    CorrespondenceSet,
    EnergyWeights,
    SolverParams,
    build_correspondences,
    e_2d,
    e_depth,
    e_motion,
    e_reg,
    solve_warpfield,
)
from .synthetic import (
    AnimationSource,
    SynthConfig,
    SyntheticFrame,
    SyntheticSequence,
    add_motion_noise,
    compute_visibility,
    generate_sequence,
    make_articulated_animation,
    render_depth,
    resize_to_box,
)
from .warp import (
    SkinnedSet,
    SkinnedVertex,
    WarpField,
    node_displacements,
    skin_vertices,
    warp_point,
    warp_points,
)

__version__ = "0.1.0"
