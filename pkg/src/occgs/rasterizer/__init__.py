from .camera import COV2D_FLOOR, NEAR_PLANE, Camera, project_covariance, project_point, project_points
from .core import TILE, rasterize, rasterize_backward
from .kernels import ALPHA_MIN, T_MIN
from .render import (
    CloudGrads,
    MissingTrainingState,
    RenderOutput,
    composite,
    render,
    render_backward,
    render_subset,
    splat_alpha,
    view_directions,
)

__all__ = [
    "ALPHA_MIN",
    "COV2D_FLOOR",
    "NEAR_PLANE",
    "T_MIN",
    "TILE",
    "Camera",
    "CloudGrads",
    "MissingTrainingState",
    "RenderOutput",
    "composite",
    "project_covariance",
    "project_point",
    "project_points",
    "rasterize",
    "rasterize_backward",
    "render",
    "render_backward",
    "render_subset",
    "splat_alpha",
    "view_directions",
]
