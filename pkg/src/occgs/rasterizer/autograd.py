"""Torch autograd wrapper around the numpy/numba rasterizer.

Upstream quantities (skinning, SH evaluation, MLP heads) stay in torch; the
rasterizer's gradient is the analytic one from ``core.rasterize_backward``.
"""

from __future__ import annotations

import numpy as np
import torch

from .camera import Camera
from .core import TILE, rasterize, rasterize_backward


class GradSink:
    """Collects the screen-space mean gradient of the most recent backward pass."""

    def __init__(self):
        self.means2d = None
        self.visible = None


class _Rasterize(torch.autograd.Function):
    @staticmethod
    def forward(ctx, means, covs, colors, opacity, camera, tile, sink):
        color, alpha, state = rasterize(
            means.detach().cpu().double().numpy(),
            covs.detach().cpu().double().numpy(),
            colors.detach().cpu().double().numpy(),
            opacity.detach().cpu().double().numpy(),
            camera,
            tile,
        )
        ctx.state = state
        ctx.sink = sink
        ctx.dtype = means.dtype
        if sink is not None:
            sink.visible = state.splats.valid & np.isin(np.arange(len(state.splats.opacity)), state.bins.order)
        return torch.from_numpy(color).to(means.dtype), torch.from_numpy(alpha).to(means.dtype)

    @staticmethod
    def backward(ctx, grad_color, grad_alpha):
        g = rasterize_backward(ctx.state, grad_color.detach().double().numpy(), grad_alpha.detach().double().numpy())
        if ctx.sink is not None:
            ctx.sink.means2d = g.means2d
        dt = ctx.dtype
        return (
            torch.from_numpy(g.means).to(dt),
            torch.from_numpy(g.covs).to(dt),
            torch.from_numpy(g.colors).to(dt),
            torch.from_numpy(g.opacity).to(dt),
            None,
            None,
            None,
        )


def rasterize_torch(means, covs, colors, opacity, camera: Camera, tile: int = TILE, sink: GradSink | None = None):
    """Differentiable render of explicit gaussians -> (color (H,W,3), alpha (H,W))."""
    return _Rasterize.apply(means, covs, colors, opacity, camera, tile, sink)
