"""Positional encoding and the residual MLPs used by the occlusion and skinning heads."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .gaussians import SH_BASIS

HIDDEN_WIDTH = 256


@dataclass
class EncodingConfig:
    n_freqs: int = 10
    include_input: bool = True

    def __post_init__(self):
        if self.n_freqs < 1:
            raise ValueError("need at least one frequency")

    def out_dim(self, d: int) -> int:
        return d * 2 * self.n_freqs + (d if self.include_input else 0)


def positional_encoding(x, cfg: EncodingConfig = EncodingConfig()):
    """[x, sin(2^0 pi x), cos(2^0 pi x), ..., sin(2^(L-1) pi x), cos(2^(L-1) pi x)].

    Accepts numpy arrays or torch tensors and returns the same kind.
    """
    is_torch = isinstance(x, torch.Tensor)
    xt = x if is_torch else torch.as_tensor(np.asarray(x, dtype=np.float64))
    parts = [xt] if cfg.include_input else []
    for i in range(cfg.n_freqs):
        f = (2.0**i) * np.pi
        parts += [torch.sin(f * xt), torch.cos(f * xt)]
    out = torch.cat(parts, dim=-1)
    return out if is_torch else out.numpy()


class Mlp(nn.Module):
    """Input layer, three residual hidden layers, linear output layer (five in total).

    Hidden layers 2..4 add the previous activation before the rectifier.
    """

    def __init__(self, in_dim: int, out_dim: int, width: int = HIDDEN_WIDTH, seed: int = 0,
                 zero_output: bool = True, dtype=torch.float64):
        super().__init__()
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.width = width
        self.layers = nn.ModuleList(
            [nn.Linear(in_dim, width), nn.Linear(width, width), nn.Linear(width, width), nn.Linear(width, width),
             nn.Linear(width, out_dim)]
        ).to(dtype)
        rng = np.random.default_rng(seed)
        with torch.no_grad():
            for i, layer in enumerate(self.layers):
                if i == len(self.layers) - 1 and zero_output:
                    layer.weight.zero_()
                    layer.bias.zero_()
                    continue
                bound = 1.0 / np.sqrt(layer.in_features)
                layer.weight.copy_(torch.from_numpy(rng.uniform(-bound, bound, tuple(layer.weight.shape))))
                layer.bias.copy_(torch.from_numpy(rng.uniform(-bound, bound, tuple(layer.bias.shape))))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return mlp_forward(self, x)


def mlp_forward(mlp: Mlp, x):
    is_torch = isinstance(x, torch.Tensor)
    dtype = mlp.layers[0].weight.dtype
    xt = x if is_torch else torch.as_tensor(np.asarray(x), dtype=dtype)
    if xt.shape[-1] != mlp.in_dim:
        raise ValueError(f"input has {xt.shape[-1]} features, network expects {mlp.in_dim}")
    h = torch.relu(mlp.layers[0](xt))
    for layer in mlp.layers[1:4]:
        h = torch.relu(layer(h) + h)
    out = mlp.layers[4](h)
    if is_torch:
        return out
    return out.detach().numpy()


class OccludedHeads(nn.Module):
    """MLP_shs and MLP_opacity: (aggregated feature, encoded position) -> (SH, opacity)."""

    def __init__(self, feature_dim: int = 16, enc: EncodingConfig = EncodingConfig(), width: int = HIDDEN_WIDTH,
                 seed: int = 0, dtype=torch.float64):
        super().__init__()
        self.enc = enc
        in_dim = feature_dim + enc.out_dim(3)
        self.shs = Mlp(in_dim, 3 * SH_BASIS, width, seed=seed, dtype=dtype)
        self.opacity = Mlp(in_dim, 1, width, seed=seed + 1, dtype=dtype)

    def forward(self, h_agg: torch.Tensor, x_occ: torch.Tensor):
        z = torch.cat([h_agg, positional_encoding(x_occ, self.enc)], dim=-1)
        sh = self.shs(z).reshape(-1, 3, SH_BASIS)
        return sh, torch.sigmoid(self.opacity(z)).reshape(-1)


def predict_occluded(heads: OccludedHeads, h_agg, x_occ):
    """f_occ (N, 3, 16) raw and alpha_occ (N,) in (0, 1); numpy in, numpy out."""
    dtype = heads.shs.layers[0].weight.dtype
    with torch.no_grad():
        sh, a = heads(torch.as_tensor(np.atleast_2d(h_agg), dtype=dtype), torch.as_tensor(np.atleast_2d(x_occ), dtype=dtype))
    return sh.numpy(), a.numpy()


class LbsOffsetHead(nn.Module):
    """Per-point skinning weight offsets from the encoded canonical position."""

    def __init__(self, n_joints: int, enc: EncodingConfig = EncodingConfig(), width: int = 64, seed: int = 10,
                 dtype=torch.float64):
        super().__init__()
        self.enc = enc
        self.mlp = Mlp(enc.out_dim(3), n_joints, width, seed=seed, dtype=dtype)

    def forward(self, x_c: torch.Tensor) -> torch.Tensor:
        return self.mlp(positional_encoding(x_c, self.enc))


class PoseCorrectionHead(nn.Module):
    """Per-joint axis-angle corrections from the flattened input pose."""

    def __init__(self, n_joints: int, width: int = 64, seed: int = 20, dtype=torch.float64):
        super().__init__()
        self.n_joints = n_joints
        self.mlp = Mlp(3 * n_joints, 3 * n_joints, width, seed=seed, dtype=dtype)

    def forward(self, axis_angle: torch.Tensor) -> torch.Tensor:
        return self.mlp(axis_angle.reshape(-1, 3 * self.n_joints)).reshape(-1, self.n_joints, 3)
