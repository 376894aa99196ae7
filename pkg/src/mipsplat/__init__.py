"""Anti-aliased 3D Gaussian splatting on the CPU.

A numpy/numba reference implementation of Gaussian splatting with a
world-space smoothing filter sized by the training views' sampling rates and
a mass-preserving screen-space filter approximating the pixel box.
"""

from .camera import Camera, in_frustum, project_covariance, projection_jacobian, world_to_camera
from .errors import (BehindCameraError, DimensionMismatchError, DivergenceError, InvalidDepthError,
                     InvalidParameterError, InvalidRateError, MipSplatError, NonFiniteError,
                     NumericDegeneracyError, ParseError, SchemaError)
from .filters import (FilterConfig, ScreenMode, apply_screen_filter, dilation_2d, ewa_filter_2d,
                      mip_filter_2d, smooth_3d)
from .gaussians import (Gaussian3D, GaussianScene, compose_covariance, convolve_gaussians, eval_gaussian,
                        eval_sh_color, quaternion_to_rotation, sh_basis)
from .metrics import MetricReport, box_downsample, evaluate, psnr, ssim
from .optimizer import Adam, TrainConfig, TrainResult, densify_and_prune, photometric_loss, train
from .rasterizer import RenderResult, RenderSettings, depth_sort, project_scene, rasterize, render, render_naive
from .backward import GradientBuffer, backward
from .sampling import SamplingState, max_sampling_rate, max_sampling_rates, refresh_sampling_state
from .scene_io import bake_scene, load_cameras, load_scene, read_png, save_cameras, save_scene, write_png

__version__ = "0.1.0"

__all__ = [
    "Adam", "BehindCameraError", "Camera", "DimensionMismatchError", "DivergenceError", "FilterConfig",
    "Gaussian3D", "GaussianScene", "GradientBuffer", "InvalidDepthError", "InvalidParameterError",
    "InvalidRateError", "MetricReport", "MipSplatError", "NonFiniteError", "NumericDegeneracyError",
    "ParseError", "RenderResult", "RenderSettings", "SamplingState", "SchemaError", "ScreenMode",
    "TrainConfig", "TrainResult", "apply_screen_filter", "backward", "bake_scene", "box_downsample",
    "compose_covariance", "convolve_gaussians", "densify_and_prune", "depth_sort", "dilation_2d",
    "eval_gaussian", "eval_sh_color", "evaluate", "ewa_filter_2d", "in_frustum", "load_cameras",
    "load_scene", "max_sampling_rate", "max_sampling_rates", "mip_filter_2d", "photometric_loss",
    "project_covariance", "project_scene", "projection_jacobian", "psnr", "quaternion_to_rotation",
    "rasterize", "read_png", "refresh_sampling_state", "render", "render_naive", "save_cameras",
    "save_scene", "sh_basis", "smooth_3d", "ssim", "train", "world_to_camera", "write_png"
]
