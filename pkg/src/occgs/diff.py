"""Torch versions of the geometric primitives, for the training graph.

Each mirrors a numpy function in ``gaussians`` or ``skinning``; the test suite
checks the pairs against each other.
"""

from __future__ import annotations

import torch

from .gaussians import SH_C0, SH_C1, SH_C2, SH_C3


def quat_to_rotmat(q: torch.Tensor) -> torch.Tensor:
    w, x, y, z = q.unbind(-1)
    return torch.stack(
        [
            1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
            2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
            2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
        ],
        dim=-1,
    ).reshape(q.shape[:-1] + (3, 3))


def quat_multiply(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    aw, ax, ay, az = a.unbind(-1)
    bw, bx, by, bz = b.unbind(-1)
    return torch.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        dim=-1,
    )


def axis_angle_to_quat(aa: torch.Tensor) -> torch.Tensor:
    angle_sq = (aa * aa).sum(-1, keepdim=True)
    small = angle_sq < 1e-12
    angle = torch.sqrt(torch.where(small, torch.ones_like(angle_sq), angle_sq))
    half = 0.5 * angle
    # second-order expansion near zero keeps the gradient finite
    k = torch.where(small, 0.5 - angle_sq / 48.0, torch.sin(half) / angle)
    w = torch.where(small, 1.0 - angle_sq / 8.0, torch.cos(half))
    return torch.cat([w, aa * k], dim=-1)


def covariance(log_scales: torch.Tensor, rotations: torch.Tensor) -> torch.Tensor:
    q = rotations / rotations.norm(dim=-1, keepdim=True)
    M = quat_to_rotmat(q) * torch.exp(log_scales)[..., None, :]
    return M @ M.transpose(-1, -2)


def sh_basis(d: torch.Tensor) -> torch.Tensor:
    x, y, z = d.unbind(-1)
    xx, yy, zz = x * x, y * y, z * z
    one = torch.ones_like(x)
    return torch.stack(
        [
            SH_C0 * one,
            -SH_C1 * y,
            SH_C1 * z,
            -SH_C1 * x,
            SH_C2[0] * x * y,
            SH_C2[1] * y * z,
            SH_C2[2] * (2 * zz - xx - yy),
            SH_C2[3] * x * z,
            SH_C2[4] * (xx - yy),
            SH_C3[0] * y * (3 * xx - yy),
            SH_C3[1] * x * y * z,
            SH_C3[2] * y * (4 * zz - xx - yy),
            SH_C3[3] * z * (2 * zz - 3 * xx - 3 * yy),
            SH_C3[4] * x * (4 * zz - xx - yy),
            SH_C3[5] * z * (xx - yy),
            SH_C3[6] * x * (xx - 3 * yy),
        ],
        dim=-1,
    )


def eval_sh(sh: torch.Tensor, means: torch.Tensor, camera_center: torch.Tensor) -> torch.Tensor:
    """Clamped SH color toward the camera for each gaussian; sh is (N, 3, 16)."""
    v = camera_center - means
    d = v / v.norm(dim=-1, keepdim=True)
    raw = torch.einsum("nck,nk->nc", sh, sh_basis(d))
    return raw.clamp(0.0, 1.0)


def forward_kinematics(parents, joints: torch.Tensor, quats: torch.Tensor, translation: torch.Tensor):
    """Differentiable FK -> (G (K,3,3), b (K,3)) in the skinning convention x -> G x + b."""
    local = quat_to_rotmat(quats / quats.norm(dim=-1, keepdim=True))
    glob_R: list = []
    glob_t: list = []
    for j, p in enumerate(parents):
        p = int(p)
        if p < 0:
            glob_R.append(local[j])
            glob_t.append(joints[j] + translation)
        else:
            glob_R.append(glob_R[p] @ local[j])
            glob_t.append(glob_R[p] @ (joints[j] - joints[p]) + glob_t[p])
    R = torch.stack(glob_R)
    t = torch.stack(glob_t)
    return R, t - torch.einsum("kij,kj->ki", R, joints)


def blend_lbs_weights(w_smpl: torch.Tensor, offsets: torch.Tensor) -> torch.Tensor:
    return torch.softmax(torch.log(w_smpl + 1e-8) + offsets, dim=-1)


def skin(means, covs, weights, G, b):
    Gn = torch.einsum("nk,kij->nij", weights, G)
    bn = weights @ b
    return torch.einsum("nij,nj->ni", Gn, means) + bn, Gn @ covs @ Gn.transpose(-1, -2), Gn, bn
