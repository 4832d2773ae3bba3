"""Training-free novel view synthesis by guiding a diffusion sampler
with depth-warped scene priors and an adaptive guidance weight."""

from .denoiser import (
    CapabilityError,
    Denoiser,
    DenoiserCapabilities,
    GmmFrameDenoiser,
    GmmPrior,
    LatentVideo,
    frame_denoiser_from_gmm,
    gmm_denoise,
    gmm_log_marginal,
    gmm_vjp,
    tweedie_score,
)
from .geometry import (
    CameraIntrinsics,
    CameraModel,
    DepthMap,
    ImageGrid,
    Pose,
    SourceView,
    WarpResult,
    WarpStrategy,
    canonical_camera,
    forward_warp,
    look_at,
    pose_distance,
    relative_pose,
    render_synthetic,
    reproject_pixels,
    scene_depth_at,
    scene_ids,
    select_source,
    warp_prior,
)
from .guidance import (
    DEFAULT_KAPPA_SCALE,
    GuidanceConfig,
    GuidanceMode,
    LambdaTrace,
    ModulationMode,
    WeightFn,
    dgs_step,
    error_bound_gap,
    error_model_D,
    error_model_P,
    kappa_value,
    lambda_closed_form,
    lambda_closed_form_array,
    lambda_for_step,
    lambda_formula_raw,
    lambda_numeric_oracle,
    lambda_objective,
    modulate_mean,
    modulate_mean_array,
    posterior_update,
)
from .schedule import NoiseSchedule, add_noise, build_schedule, ve_step
from .solver import (
    SceneInput,
    SceneKind,
    SolveError,
    SolveReport,
    StageInfo,
    Trajectory,
    TrajectoryKind,
    make_trajectory,
    prepare_priors,
    prior_pose_distances,
    solve,
    solve_360,
)

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_KAPPA_SCALE",
    "CameraIntrinsics",
    "CameraModel",
    "CapabilityError",
    "Denoiser",
    "DenoiserCapabilities",
    "DepthMap",
    "GmmFrameDenoiser",
    "GmmPrior",
    "GuidanceConfig",
    "GuidanceMode",
    "ImageGrid",
    "LambdaTrace",
    "LatentVideo",
    "ModulationMode",
    "NoiseSchedule",
    "Pose",
    "SceneInput",
    "SceneKind",
    "SolveError",
    "SolveReport",
    "SourceView",
    "StageInfo",
    "Trajectory",
    "TrajectoryKind",
    "WarpResult",
    "WarpStrategy",
    "WeightFn",
    "add_noise",
    "build_schedule",
    "canonical_camera",
    "dgs_step",
    "error_bound_gap",
    "error_model_D",
    "error_model_P",
    "forward_warp",
    "frame_denoiser_from_gmm",
    "gmm_denoise",
    "gmm_log_marginal",
    "gmm_vjp",
    "kappa_value",
    "lambda_closed_form",
    "lambda_closed_form_array",
    "lambda_for_step",
    "lambda_formula_raw",
    "lambda_numeric_oracle",
    "lambda_objective",
    "look_at",
    "make_trajectory",
    "modulate_mean",
    "modulate_mean_array",
    "pose_distance",
    "posterior_update",
    "prepare_priors",
    "prior_pose_distances",
    "relative_pose",
    "render_synthetic",
    "reproject_pixels",
    "scene_depth_at",
    "scene_ids",
    "select_source",
    "solve",
    "solve_360",
    "tweedie_score",
    "ve_step",
    "warp_prior",
]
