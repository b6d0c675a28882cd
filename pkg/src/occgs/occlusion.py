"""Visibility split, nearest visible neighbours, pixel-aligned features and mask ops."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import ndimage

from .knn import exact_knn
from .rasterizer.camera import Camera, project_points

FEATURE_CHANNELS = 16
BODY_RADIUS = 2
ERODE_SIZE = 5


class NoVisiblePoints(ValueError):
    pass


@dataclass
class VisibilitySplit:
    seen: np.ndarray  # indices into the posed point array
    occluded: np.ndarray


@dataclass
class KnnResult:
    indices: np.ndarray  # (N2, K) into the seen set
    distances: np.ndarray  # (N2, K)


def nearest_pixels(camera: Camera, points):
    """Nearest pixel (col, row) of each projection plus an in-image flag."""
    pix, _, front = project_points(camera, points)
    cols = np.zeros(len(pix), dtype=np.int64)
    rows = np.zeros(len(pix), dtype=np.int64)
    cols[front] = np.floor(pix[front, 0] + 0.5).astype(np.int64)
    rows[front] = np.floor(pix[front, 1] + 0.5).astype(np.int64)
    inside = front & (cols >= 0) & (cols < camera.width) & (rows >= 0) & (rows < camera.height)
    return cols, rows, inside


def classify_visibility(points, camera: Camera, fg_mask) -> VisibilitySplit:
    fg_mask = np.asarray(fg_mask)
    if fg_mask.shape != (camera.height, camera.width):
        raise ValueError(f"mask shape {fg_mask.shape} does not match camera {camera.height}x{camera.width}")
    cols, rows, inside = nearest_pixels(camera, points)
    seen = inside.copy()
    seen[inside] = fg_mask[rows[inside], cols[inside]] > 0
    return VisibilitySplit(np.flatnonzero(seen), np.flatnonzero(~seen))


def knn_visible(occ_points, seen_points, k: int = 3) -> KnnResult:
    """K nearest seen points per occluded point, exact, ties to the lower index."""
    seen = np.asarray(seen_points, dtype=np.float64).reshape(-1, 3)
    if len(seen) == 0:
        raise NoVisiblePoints("no visible points")
    return KnnResult(*exact_knn(occ_points, seen, k))


def _luminance(image):
    return image @ np.array([0.299, 0.587, 0.114])


def encode_features(image) -> np.ndarray:
    """Handcrafted 16-channel feature map.

    Channels: RGB (3), RGB blurred at sigma 1 and 2 (6), |d/dx| and |d/dy| of
    luminance (2), luminance blurred at sigma 1, 2, 4, 8, 16 (5).
    """
    img = np.asarray(image, dtype=np.float64)
    lum = _luminance(img)
    chans = [img[..., c] for c in range(3)]
    for sigma in (1.0, 2.0):
        chans += [ndimage.gaussian_filter(img[..., c], sigma, mode="nearest") for c in range(3)]
    gy, gx = np.gradient(lum)
    chans += [np.abs(gx), np.abs(gy)]
    chans += [ndimage.gaussian_filter(lum, s, mode="nearest") for s in (1.0, 2.0, 4.0, 8.0, 16.0)]
    return np.stack(chans, axis=-1)


Encoder = Callable[[np.ndarray], np.ndarray]


def bilinear_sample(fmap, u, v) -> np.ndarray:
    """Sample (H, W, C) at continuous pixel coords (texel centers at integers), border-clamped."""
    H, W = fmap.shape[:2]
    u = np.clip(np.asarray(u, dtype=np.float64), 0, W - 1)
    v = np.clip(np.asarray(v, dtype=np.float64), 0, H - 1)
    x0 = np.clip(np.floor(u).astype(np.int64), 0, max(W - 2, 0))
    y0 = np.clip(np.floor(v).astype(np.int64), 0, max(H - 2, 0))
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    fx = (u - x0)[..., None]
    fy = (v - y0)[..., None]
    return (
        fmap[y0, x0] * (1 - fx) * (1 - fy)
        + fmap[y0, x1] * fx * (1 - fy)
        + fmap[y1, x0] * (1 - fx) * fy
        + fmap[y1, x1] * fx * fy
    )


def sample_features(fmap, points, camera: Camera):
    """Pixel-aligned features for many points -> ((N, C), culled flags)."""
    pix, _, front = project_points(camera, points)
    out = np.zeros((len(pix), fmap.shape[-1]))
    if front.any():
        out[front] = bilinear_sample(fmap, pix[front, 0], pix[front, 1])
    return out, ~front


def sample_feature(fmap, point, camera: Camera):
    f, culled = sample_features(fmap, np.asarray(point, dtype=np.float64).reshape(1, 3), camera)
    return f[0], bool(culled[0])


def aggregate_features(h, rho) -> np.ndarray:
    """Visibility-weighted mean of K neighbour features; uniform when all weights vanish.

    Works on a single (K, C) block or a batch (N, K, C) with rho (N, K).
    """
    h = np.asarray(h, dtype=np.float64)
    rho = np.asarray(rho, dtype=np.float64)
    if np.any(rho < 0):
        raise ValueError("visibility weights must be nonnegative")
    total = rho.sum(-1, keepdims=True)
    k = rho.shape[-1]
    w = np.where(total > 0, rho / np.where(total > 0, total, 1.0), 1.0 / k)
    return np.einsum("...k,...kc->...c", w, h)


def update_visibility_weights(rho, seen, frozen: bool) -> np.ndarray:
    rho = np.array(rho, dtype=np.float64)
    if frozen:
        return rho
    rho[np.asarray(seen, dtype=np.int64)] += 1.0
    return rho


def body_mask(points, camera: Camera, radius: int = BODY_RADIUS, erode: int = ERODE_SIZE) -> np.ndarray:
    """Splat each projected point as a (2r+1)^2 footprint, union, then erode.

    The footprint is square so that the 5x5 erosion exactly undoes an isolated
    point's footprint down to its own pixel. Pixels beyond the border count as
    background during erosion.
    """
    H, W = camera.height, camera.width
    cols, rows, _ = nearest_pixels(camera, points)
    _, _, front = project_points(camera, points)
    cols, rows = cols[front], rows[front]
    grid = np.zeros((H + 2 * radius, W + 2 * radius), dtype=bool)
    near = (cols >= -radius) & (cols < W + radius) & (rows >= -radius) & (rows < H + radius)
    cols, rows = cols[near] + radius, rows[near] + radius
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            r = rows + dy
            c = cols + dx
            ok = (r >= 0) & (r < grid.shape[0]) & (c >= 0) & (c < grid.shape[1])
            grid[r[ok], c[ok]] = True
    footprint = grid[radius : radius + H, radius : radius + W]
    return erode_mask(footprint, erode)


def erode_mask(mask, size: int = ERODE_SIZE) -> np.ndarray:
    return ndimage.binary_erosion(np.asarray(mask, dtype=bool), structure=np.ones((size, size), bool), border_value=0)


def occlusion_mask(body, fg) -> np.ndarray:
    """Pixels inside the projected body but outside the visible foreground."""
    body = np.asarray(body).astype(bool)
    fg = np.asarray(fg).astype(bool)
    if body.shape != fg.shape:
        raise ValueError(f"mask shapes differ: {body.shape} vs {fg.shape}")
    return body & ~fg
