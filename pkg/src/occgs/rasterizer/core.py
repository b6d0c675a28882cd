"""Screen-space preprocessing, tile binning, and the 3D <-> 2D gradient chain.

The core works on explicit per-gaussian arrays (means, covariances, colors,
opacities) so posed clouds with non-factorized covariances can be drawn.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import COV2D_FLOOR, NEAR_PLANE, Camera, projection_jacobian
from .kernels import ALPHA_MIN, composite_backward, composite_forward

TILE = 16


@dataclass
class Splats:
    means2d: np.ndarray  # (N, 2)
    cov2d: np.ndarray  # (N, 2, 2), floor included
    conics: np.ndarray  # (N, 3) inverse cov entries (A, B, C)
    depths: np.ndarray  # (N,)
    colors: np.ndarray  # (N, 3)
    opacity: np.ndarray  # (N,)
    valid: np.ndarray  # (N,) bool: in front of the near plane with invertible cov2d
    cam_points: np.ndarray  # (N, 3)
    jac: np.ndarray  # (N, 2, 3)


@dataclass
class TileBins:
    tile: int
    tiles_x: int
    tiles_y: int
    ranges: np.ndarray  # (n_tiles, 2) slice into ``order``
    order: np.ndarray  # gaussian ids, grouped by tile, (depth, index)-sorted within tile
    tile_of_pair: np.ndarray
    q_cut: np.ndarray  # (N,) squared Mahalanobis radius past which alpha is surely below 1/255


@dataclass
class RasterState:
    """Everything the backward pass needs; retained only in training mode."""

    camera: Camera
    covs: np.ndarray
    splats: Splats
    bins: TileBins


def preprocess(means, covs, colors, opacity, camera: Camera, near: float = NEAR_PLANE) -> Splats:
    means = np.ascontiguousarray(means, dtype=np.float64).reshape(-1, 3)
    n = len(means)
    covs = np.asarray(covs, dtype=np.float64).reshape(n, 3, 3)
    cam = camera.to_camera(means)
    valid = cam[:, 2] > near
    safe = cam.copy()
    safe[~valid, 2] = 1.0
    J = projection_jacobian(camera, safe)
    T = J @ camera.W
    cov2d = T @ covs @ np.swapaxes(T, -1, -2)
    cov2d[:, 0, 0] += COV2D_FLOOR
    cov2d[:, 1, 1] += COV2D_FLOOR
    det = cov2d[:, 0, 0] * cov2d[:, 1, 1] - cov2d[:, 0, 1] * cov2d[:, 1, 0]
    valid &= det > 1e-12
    det = np.where(valid, det, 1.0)
    conics = np.stack([cov2d[:, 1, 1] / det, -cov2d[:, 0, 1] / det, cov2d[:, 0, 0] / det], axis=1)
    means2d = np.stack(
        [camera.fx * safe[:, 0] / safe[:, 2] + camera.cx, camera.fy * safe[:, 1] / safe[:, 2] + camera.cy], axis=1
    )
    return Splats(
        means2d=np.ascontiguousarray(means2d),
        cov2d=cov2d,
        conics=np.ascontiguousarray(conics),
        depths=cam[:, 2].copy(),
        colors=np.ascontiguousarray(colors, dtype=np.float64).reshape(n, 3),
        opacity=np.ascontiguousarray(opacity, dtype=np.float64).reshape(n),
        valid=valid,
        cam_points=cam,
        jac=J,
    )


def bin_tiles(splats: Splats, width: int, height: int, tile: int = TILE) -> TileBins:
    """Assign each splat to every tile its 1/255 alpha footprint touches."""
    tiles_x = -(-width // tile)
    tiles_y = -(-height // tile)
    o = splats.opacity
    live = splats.valid & (o >= ALPHA_MIN)
    q_max = np.zeros(len(o))
    q_max[live] = 2.0 * np.log(255.0 * o[live]) * (1 + 1e-6) + 1e-9
    # the ellipse {d : d^T cov^-1 d <= q} spans +-sqrt(q * cov_ii) along axis i
    rx = np.sqrt(q_max * np.abs(splats.cov2d[:, 0, 0]))
    ry = np.sqrt(q_max * np.abs(splats.cov2d[:, 1, 1]))
    mx = np.where(live, splats.means2d[:, 0], 0.0)
    my = np.where(live, splats.means2d[:, 1], 0.0)
    px0 = np.clip(np.ceil(mx - rx), 0, width - 1)
    px1 = np.clip(np.floor(mx + rx), 0, width - 1)
    py0 = np.clip(np.ceil(my - ry), 0, height - 1)
    py1 = np.clip(np.floor(my + ry), 0, height - 1)
    live &= (mx + rx >= 0) & (mx - rx <= width - 1) & (my + ry >= 0) & (my - ry <= height - 1)
    tx0 = (px0 // tile).astype(np.int64)
    tx1 = (px1 // tile).astype(np.int64)
    ty0 = (py0 // tile).astype(np.int64)
    ty1 = (py1 // tile).astype(np.int64)

    ids = np.flatnonzero(live)
    # global (depth, index) order; per-tile lists inherit it through a stable sort on tile id
    ids = ids[np.lexsort((ids, splats.depths[ids]))]
    nx = tx1[ids] - tx0[ids] + 1
    ny = ty1[ids] - ty0[ids] + 1
    counts = nx * ny
    total = int(counts.sum())
    pair_gauss = np.repeat(ids, counts)
    local = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
    rep_nx = np.repeat(nx, counts)
    pair_tile = (np.repeat(ty0[ids], counts) + local // rep_nx) * tiles_x + np.repeat(tx0[ids], counts) + local % rep_nx
    perm = np.argsort(pair_tile, kind="stable")
    order = np.ascontiguousarray(pair_gauss[perm])
    pair_tile = pair_tile[perm]
    n_tiles = tiles_x * tiles_y
    starts = np.searchsorted(pair_tile, np.arange(n_tiles), side="left")
    ends = np.searchsorted(pair_tile, np.arange(n_tiles), side="right")
    ranges = np.ascontiguousarray(np.stack([starts, ends], axis=1).astype(np.int64))
    return TileBins(tile, tiles_x, tiles_y, ranges, order, pair_tile, q_max)


def rasterize(means, covs, colors, opacity, camera: Camera, tile: int = TILE):
    """Forward render. Returns (color (H,W,3), alpha (H,W), RasterState)."""
    splats = preprocess(means, covs, colors, opacity, camera)
    bins = bin_tiles(splats, camera.width, camera.height, tile)
    color = np.zeros((camera.height, camera.width, 3))
    alpha = np.zeros((camera.height, camera.width))
    composite_forward(
        camera.width, camera.height, bins.tile, bins.tiles_x, bins.ranges, bins.order, bins.q_cut,
        splats.means2d, splats.conics, splats.colors, splats.opacity, color, alpha,
    )
    return color, alpha, RasterState(camera, np.asarray(covs, dtype=np.float64).reshape(-1, 3, 3), splats, bins)


@dataclass
class SplatGrads:
    means2d: np.ndarray
    means: np.ndarray
    covs: np.ndarray
    colors: np.ndarray
    opacity: np.ndarray


def rasterize_backward(state: RasterState, grad_color, grad_alpha) -> SplatGrads:
    cam = state.camera
    sp = state.splats
    bins = state.bins
    n = len(sp.opacity)
    grad_color = np.ascontiguousarray(grad_color, dtype=np.float64).reshape(cam.height, cam.width, 3)
    grad_alpha = np.ascontiguousarray(grad_alpha, dtype=np.float64).reshape(cam.height, cam.width)
    n_pairs = len(bins.order)
    p_mean = np.zeros((n_pairs, 2))
    p_conic = np.zeros((n_pairs, 3))
    p_color = np.zeros((n_pairs, 3))
    p_opac = np.zeros(n_pairs)
    composite_backward(
        cam.width, cam.height, bins.tile, bins.tiles_x, bins.ranges, bins.order, bins.q_cut,
        sp.means2d, sp.conics, sp.colors, sp.opacity, grad_color, grad_alpha,
        p_mean, p_conic, p_color, p_opac,
    )

    def reduce(v):
        if v.ndim == 1:
            return np.bincount(bins.order, weights=v, minlength=n)
        return np.stack([np.bincount(bins.order, weights=v[:, i], minlength=n) for i in range(v.shape[1])], axis=1)

    g_mean2d = reduce(p_mean)
    g_conic = reduce(p_conic)
    g_colors = reduce(p_color)
    g_opac = reduce(p_opac)

    # conic = inv(cov2d); full-matrix gradient of the (A, B, C) parameterization
    Gc = np.empty((n, 2, 2))
    Gc[:, 0, 0] = g_conic[:, 0]
    Gc[:, 0, 1] = Gc[:, 1, 0] = 0.5 * g_conic[:, 1]
    Gc[:, 1, 1] = g_conic[:, 2]
    C = np.empty((n, 2, 2))
    C[:, 0, 0] = sp.conics[:, 0]
    C[:, 0, 1] = C[:, 1, 0] = sp.conics[:, 1]
    C[:, 1, 1] = sp.conics[:, 2]
    G2 = -C @ Gc @ C

    T = sp.jac @ cam.W
    g_covs = np.swapaxes(T, -1, -2) @ G2 @ T
    g_T = (G2 + np.swapaxes(G2, -1, -2)) @ T @ state.covs
    g_J = g_T @ cam.W.T

    x, y, z = sp.cam_points[:, 0], sp.cam_points[:, 1], sp.cam_points[:, 2]
    z = np.where(sp.valid, z, 1.0)
    fx, fy = cam.fx, cam.fy
    g_t = np.einsum("nij,ni->nj", sp.jac, g_mean2d)
    g_t[:, 0] += g_J[:, 0, 2] * -fx / z**2
    g_t[:, 1] += g_J[:, 1, 2] * -fy / z**2
    g_t[:, 2] += (
        g_J[:, 0, 0] * -fx / z**2
        + g_J[:, 0, 2] * 2 * fx * x / z**3
        + g_J[:, 1, 1] * -fy / z**2
        + g_J[:, 1, 2] * 2 * fy * y / z**3
    )
    g_means = g_t @ cam.W

    dead = ~sp.valid
    for arr in (g_mean2d, g_means, g_covs, g_colors, g_opac):
        arr[dead] = 0.0
    return SplatGrads(g_mean2d, g_means, g_covs, g_colors, g_opac)
