"""Simulated occluder, occlusion extent and image metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from ..losses import ssim

PSNR_CAP = 99.0
OCCLUDER_GRAY = 0.5


class OcclusionTargetUnreachable(ValueError):
    def __init__(self, achieved: float, target: float):
        super().__init__(f"cannot occlude {target:.3f} of the valid pixels; best band reaches {achieved:.4f}")
        self.achieved = achieved
        self.target = target


@dataclass
class Occluder:
    top: int  # first covered row
    bottom: int  # last covered row, inclusive
    fraction: float  # occluded valid / valid on the reference frame
    n_frames: int


def _frame_count(n: int, frame_fraction: float) -> int:
    return math.ceil(round(frame_fraction * n, 9))


def find_band(mask, target: float = 0.5, tol: float = 0.01) -> Occluder:
    """Full-width row band centred on the mean valid row covering ``target`` of the valid pixels.

    Bands whose centre lies within one row of the mean are searched exhaustively;
    the one closest to the target wins, ties going to the thinner band.
    """
    mask = np.asarray(mask, dtype=bool)
    rows = np.nonzero(mask)[0]
    if len(rows) == 0:
        raise ValueError("reference frame has no valid pixels")
    center = rows.mean()
    per_row = mask.sum(axis=1)
    cum = np.concatenate([[0], np.cumsum(per_row)])
    total = cum[-1]
    H = mask.shape[0]
    best = None
    for top in range(H):
        for bottom in range(top, H):
            if abs(0.5 * (top + bottom) - center) > 1.0:
                continue
            frac = (cum[bottom + 1] - cum[top]) / total
            key = (abs(frac - target), bottom - top, top)
            if best is None or key < best[0]:
                best = (key, top, bottom, frac)
    if best is None or best[0][0] > tol:
        raise OcclusionTargetUnreachable(0.0 if best is None else best[3], target)
    return Occluder(best[1], best[2], float(best[3]), 0)


def simulate_occlusion(frames, occluded_fraction: float = 0.5, frame_fraction: float = 0.8, reference: int = 0,
                       fill: float = OCCLUDER_GRAY, tol: float = 0.01):
    """Composite a stationary gray band onto the first ceil(frame_fraction * n) frames.

    Returns (new frames, Occluder or None). Masks are zeroed under the band.
    """
    frames = list(frames)
    if occluded_fraction == 0 or frame_fraction == 0 or not frames:
        return [replace(f, rgb=f.rgb.copy(), mask=f.mask.copy()) for f in frames], None
    band = find_band(frames[reference].mask, occluded_fraction, tol)
    n_occ = _frame_count(len(frames), frame_fraction)
    band.n_frames = n_occ
    out = []
    for i, f in enumerate(frames):
        rgb, mask = f.rgb.copy(), f.mask.copy()
        if i < n_occ:
            rgb[band.top : band.bottom + 1] = fill
            mask[band.top : band.bottom + 1] = False
        out.append(replace(f, rgb=rgb, mask=mask, occluded=i < n_occ or f.occluded))
    return out, band


def occlusion_extent(visible, body) -> float:
    """1 - |visible & body| / |body|: 0 when the whole body is visible."""
    visible = np.asarray(visible, dtype=bool)
    body = np.asarray(body, dtype=bool)
    n = body.sum()
    if n == 0:
        raise ValueError("reference body pixel set is empty")
    return float(1.0 - (visible & body).sum() / n)


def psnr(pred, gt) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    mse = np.mean((pred - gt) ** 2)
    if mse < 1e-10:
        return PSNR_CAP
    return float(min(PSNR_CAP, -10.0 * np.log10(mse)))


@dataclass
class Metrics:
    psnr: float
    ssim: float
    occlusion_extent: float = 0.0

    def __post_init__(self):
        if self.psnr < 0:
            raise ValueError("psnr must be nonnegative")


def image_metrics(pred, gt) -> Metrics:
    return Metrics(psnr(pred, gt), float(ssim(pred, gt)))
