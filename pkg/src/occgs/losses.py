"""Training losses. Everything is torch so gradients reach the cloud and the heads.

Numpy inputs are accepted and give float results, which is what the metric
code and tests use.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


@dataclass
class LossWeights:
    mask: float = 0.1  # lambda_1
    ssim: float = 0.1  # lambda_2
    lpips: float = 0.0  # lambda_3; no perceptual network ships with this package
    occ: float = 0.1  # lambda_4
    con_mask: float = 0.1  # lambda_con inside the consistency loss
    opacity_eps: float = 0.05  # points below this opacity feed the consistency loss
    con: float = 1.0  # weight of the consistency loss in the total

    def __post_init__(self):
        for k, v in asdict(self).items():
            if v < 0:
                raise ValueError(f"loss weight {k} must be nonnegative")


@dataclass
class LossBreakdown:
    rgb: float
    mask: float
    ssim: float  # the loss term 1 - SSIM
    occ: float
    con: float
    total: float
    lpips: float = 0.0

    def recompute_total(self, w: LossWeights) -> float:
        return total_loss(self.rgb, self.mask, self.ssim, self.occ, self.con, w, self.lpips)


def _t(x):
    return x if isinstance(x, torch.Tensor) else torch.as_tensor(np.asarray(x, dtype=np.float64))


def _out(v, like):
    return v if isinstance(like, torch.Tensor) else float(v)


def _same_shape(a, b):
    if tuple(a.shape) != tuple(b.shape):
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def l_rgb(pred, gt):
    p, g = _t(pred), _t(gt)
    _same_shape(p, g)
    return _out((p - g).abs().mean(), pred)


def l_mask(pred_alpha, gt_mask):
    p, g = _t(pred_alpha), _t(gt_mask).to(_t(pred_alpha).dtype)
    _same_shape(p, g)
    return _out(((p - g) ** 2).mean(), pred_alpha)


def l_occ(rendered_occ_alpha, occ_mask):
    return l_mask(rendered_occ_alpha, occ_mask)


def _gauss_window(dtype):
    x = torch.arange(SSIM_WINDOW, dtype=dtype) - SSIM_WINDOW // 2
    g = torch.exp(-(x**2) / (2 * SSIM_SIGMA**2))
    return g / g.sum()


def ssim(a, b):
    """Mean SSIM over valid 11x11 windows and channels; images are (H, W, C) or (H, W)."""
    ta, tb = _t(a), _t(b).to(_t(a).dtype)
    _same_shape(ta, tb)
    if ta.ndim == 2:
        ta, tb = ta[..., None], tb[..., None]
    H, W, C = ta.shape
    if H < SSIM_WINDOW or W < SSIM_WINDOW:
        raise ValueError(f"image {H}x{W} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    x = ta.permute(2, 0, 1)
    y = tb.permute(2, 0, 1)
    # the gaussian window is separable: filter rows, then columns, all five maps at once
    g = _gauss_window(ta.dtype)
    maps = torch.cat([x, y, x * x, y * y, x * y])[:, None]
    maps = F.conv2d(F.conv2d(maps, g.view(1, 1, 1, -1)), g.view(1, 1, -1, 1))
    mu_x, mu_y, exx, eyy, exy = maps[:, 0].split(C)
    sxx = exx - mu_x**2
    syy = eyy - mu_y**2
    sxy = exy - mu_x * mu_y
    num = (2 * mu_x * mu_y + SSIM_C1) * (2 * sxy + SSIM_C2)
    den = (mu_x**2 + mu_y**2 + SSIM_C1) * (sxx + syy + SSIM_C2)
    return _out((num / den).mean(), a)


def l_con(color, alpha, gt_color, gt_mask, lambda_con: float = 0.1):
    """L1 color term restricted to ground-truth foreground + lambda_con * MSE(alpha, mask).

    Both terms are means over the full frame, like ``l_rgb``.
    """
    c, a = _t(color), _t(alpha)
    gc, gm = _t(gt_color).to(c.dtype), _t(gt_mask).to(c.dtype)
    _same_shape(c, gc)
    _same_shape(a, gm)
    color_term = ((c - gc).abs() * gm[..., None]).mean()
    return _out(color_term + lambda_con * ((a - gm) ** 2).mean(), color)


def total_loss(rgb, mask, ssim_part, occ, con, w: LossWeights = LossWeights(), lpips=0.0):
    """rgb + l1 mask + l2 (1 - SSIM) + l3 LPIPS + l4 occ + con; ``ssim_part`` is already 1 - SSIM."""
    return rgb + w.mask * mask + w.ssim * ssim_part + w.lpips * lpips + w.occ * occ + w.con * con


def append_loss_csv(path, iteration: int, b: LossBreakdown) -> None:
    path = Path(path)
    new = not path.exists()
    with path.open("a", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(["iteration", "rgb", "mask", "ssim", "occ", "con", "total"])
        w.writerow([iteration] + [repr(float(v)) for v in (b.rgb, b.mask, b.ssim, b.occ, b.con, b.total)])
