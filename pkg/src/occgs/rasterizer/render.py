from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..gaussians import (
    GaussianCloud,
    eval_sh_raw,
    normalize_rotation,
    quat_to_rotmat,
    sh_basis,
    sh_basis_jacobian,
)
from .camera import Camera
from .core import TILE, RasterState, rasterize, rasterize_backward
from .kernels import ALPHA_MIN, T_MIN


class MissingTrainingState(RuntimeError):
    pass


@dataclass
class RenderOutput:
    color: np.ndarray  # (H, W, 3)
    alpha: np.ndarray  # (H, W)
    state: "RenderState | None" = None


@dataclass
class RenderState:
    cloud: GaussianCloud
    raster: RasterState
    view_dirs: np.ndarray
    view_dist: np.ndarray
    raw_colors: np.ndarray


@dataclass
class CloudGrads:
    means: np.ndarray
    log_scales: np.ndarray
    rotations: np.ndarray
    opacity_logits: np.ndarray
    sh: np.ndarray


def view_directions(cloud_means, camera: Camera):
    """Unit directions from each gaussian toward the camera center, and distances."""
    v = camera.center - np.asarray(cloud_means, dtype=np.float64)
    dist = np.linalg.norm(v, axis=-1)
    return v / np.where(dist > 0, dist, 1.0)[:, None], dist


def splat_alpha(opacity: float, center, cov2d, pixel) -> float:
    """Single-splat falloff at ``pixel``; zero below the 1/255 cutoff or for singular cov."""
    cov2d = np.asarray(cov2d, dtype=np.float64)
    det = np.linalg.det(cov2d)
    if det <= 1e-12:
        return 0.0
    d = np.asarray(pixel, dtype=np.float64) - np.asarray(center, dtype=np.float64)
    a = opacity * np.exp(-0.5 * d @ np.linalg.solve(cov2d, d))
    return float(a) if a >= ALPHA_MIN else 0.0


def composite(contributions):
    """Front-to-back blend of depth-sorted (rgb, alpha) pairs -> (rgb, pixel alpha)."""
    color = np.zeros(3)
    T = 1.0
    for c, a in contributions:
        color += np.asarray(c, dtype=np.float64) * a * T
        T *= 1.0 - a
        if T < T_MIN:
            break
    return color, 1.0 - T


def render(cloud: GaussianCloud, camera: Camera, training: bool = False, tile: int = TILE) -> RenderOutput:
    dirs, dist = view_directions(cloud.means, camera)
    raw = eval_sh_raw(cloud.sh, dirs) if len(cloud) else np.zeros((0, 3))
    color, alpha, raster = rasterize(
        cloud.means, cloud.covariances() if len(cloud) else np.zeros((0, 3, 3)),
        np.clip(raw, 0.0, 1.0), cloud.opacities, camera, tile,
    )
    state = RenderState(cloud, raster, dirs, dist, raw) if training else None
    return RenderOutput(color, alpha, state)


def render_subset(cloud: GaussianCloud, index, camera: Camera, training: bool = False, tile: int = TILE) -> RenderOutput:
    return render(cloud.subset(index), camera, training, tile)


def _quat_rotmat_vjp(qn, gR):
    """Pull dL/dR back to the unit quaternion (w, x, y, z)."""
    w, x, y, z = qn[:, 0], qn[:, 1], qn[:, 2], qn[:, 3]
    g = lambda i, j: gR[:, i, j]  # noqa: E731
    dw = 2 * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1))
    dx = 2 * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2 * x * g(1, 1) - w * g(1, 2)
              + z * g(2, 0) + w * g(2, 1) - 2 * x * g(2, 2))
    dy = 2 * (-2 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2)
              - w * g(2, 0) + z * g(2, 1) - 2 * y * g(2, 2))
    dz = 2 * (-2 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2 * z * g(1, 1)
              + y * g(1, 2) + x * g(2, 0) + y * g(2, 1))
    return np.stack([dw, dx, dy, dz], axis=1)


def render_backward(out: RenderOutput, grad_color, grad_alpha) -> CloudGrads:
    """Analytic gradients of a scalar loss w.r.t. the cloud's raw parameters.

    ``out`` must come from ``render(..., training=True)``.
    """
    if out.state is None:
        raise MissingTrainingState("render_backward needs a render produced with training=True")
    st = out.state
    cloud = st.cloud
    g = rasterize_backward(st.raster, grad_color, grad_alpha)

    # color = clamp(<Y(d), f>); gradient passes only where the clamp is inactive
    live = ((st.raw_colors >= 0.0) & (st.raw_colors <= 1.0)).astype(np.float64)
    g_raw = g.colors * live
    Y = sh_basis(st.view_dirs)
    g_sh = g_raw[:, :, None] * Y[:, None, :]
    g_dir = np.einsum("nc,nck,nkj->nj", g_raw, cloud.sh, sh_basis_jacobian(st.view_dirs))
    d = st.view_dirs
    proj = g_dir - np.sum(g_dir * d, axis=1, keepdims=True) * d
    g_means = g.means - proj / np.where(st.view_dist > 0, st.view_dist, 1.0)[:, None]

    # Sigma = M M^T with M = R diag(s)
    s = cloud.scales
    qn = normalize_rotation(cloud.rotations)
    R = quat_to_rotmat(qn)
    M = R * s[:, None, :]
    gM = (g.covs + np.swapaxes(g.covs, -1, -2)) @ M
    g_log_s = np.sum(gM * R, axis=1) * s
    gR = gM * s[:, None, :]
    g_qn = _quat_rotmat_vjp(qn, gR)
    qnorm = np.linalg.norm(cloud.rotations, axis=1, keepdims=True)
    g_q = (g_qn - np.sum(g_qn * qn, axis=1, keepdims=True) * qn) / qnorm

    o = cloud.opacities
    g_logit = g.opacity * o * (1 - o)
    return CloudGrads(g_means, g_log_s, g_q, g_logit, g_sh)
