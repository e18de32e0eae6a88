"""Near-field per-pixel shading toolkit.

A light source at (or near) the camera makes image intensity fall off
with the inverse square of surface distance, which turns shading into a
depth cue.  This package provides the machinery around that cue:
geometry (backprojection, normals, per-pixel lighting and shading),
photometrics (rendering, albedo handling, specular masking), shading
and depth losses with exact gradients, a classical gradient-descent
depth refiner, a forward-only neural refinement wiring, synthetic test
scenes, file formats, and a CLI.
"""

from .config import PipelineConfig, load_config
from .fileio import (
    PointCloud,
    export_pointcloud,
    falsecolor,
    read_depth,
    read_image,
    read_pfm,
    read_pointcloud,
    write_depth,
    write_image,
    write_pfm,
    write_pointcloud,
)
from .geometry import (
    CameraIntrinsics,
    LightSpec,
    NormalMap,
    PPSField,
    backproject,
    compute_ppl,
    compute_pps,
    grid_partials,
    normals_from_points,
    pps_from_depth,
    pps_from_depth_backward,
    project,
    rays,
)
from .losses import (
    DegenerateCorrelationError,
    LossWeights,
    MetricReport,
    aggregate_loss,
    depth_metrics,
    pps_corr_loss,
    pps_corr_loss_grad,
    pps_sup_loss,
    pps_sup_loss_grad,
    smoothness_reg,
    smoothness_reg_grad,
    ssi_align,
    ssi_loss,
    ssi_loss_grad,
)
from .photometrics import (
    RenderModel,
    RenderResult,
    albedo_proxy,
    albedo_variance_loss,
    invert_albedo,
    luminance,
    render,
    specular_mask,
)
from .refine import RefineConfig, RefineResult, objective_and_gradient, refine_depth
from .refinenet import (
    FiLMParams,
    PatchFeatureProvider,
    ToyWeights,
    cross_attention,
    film_modulate,
    read_weights,
    refinenet_forward,
    shading_feature_image,
    toy_refiner_forward,
    write_weights,
)
from .scenes import SceneSpec, analytic_normals, generate_scene, standard_scene_suite

__version__ = "0.1.0"
