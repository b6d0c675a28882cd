"""Gaussian value types, covariance factorization, density and SH color."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SH_DEGREE = 3
SH_BASIS = (SH_DEGREE + 1) ** 2  # 16

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)
SH_C3 = (
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.4453057213202769,
    -0.5900435899266435,
)


class DegenerateRotation(ValueError):
    pass


class DegenerateCovariance(ValueError):
    pass


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=np.float64)))


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


def normalize_rotation(q) -> np.ndarray:
    """Scale a (w, x, y, z) quaternion, or a stack of them, to unit norm."""
    q = np.asarray(q, dtype=np.float64)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(norm <= 0.0):
        raise DegenerateRotation("degenerate rotation")
    return q / norm


def quat_to_rotmat(q) -> np.ndarray:
    """Rotation matrix of a unit (w, x, y, z) quaternion; broadcasts over leading axes."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.empty(q.shape[:-1] + (3, 3))
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def build_covariance(s, q, atol: float = 1e-6) -> np.ndarray:
    """Sigma = R S S^T R^T from positive scales ``s`` and a unit quaternion ``q``.

    Both arguments may carry a leading batch axis. Non-unit quaternions are
    rejected rather than silently normalized.
    """
    s = np.asarray(s, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if np.any(np.abs(np.linalg.norm(q, axis=-1) - 1.0) > atol):
        raise ValueError("rotation quaternion must be unit-norm; normalize first")
    R = quat_to_rotmat(q)
    M = R * s[..., None, :]
    return M @ np.swapaxes(M, -1, -2)


def gaussian_density(x, mu, cov) -> float:
    x = np.asarray(x, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    cov = np.asarray(cov, dtype=np.float64)
    det = np.linalg.det(cov)
    if abs(det) < 1e-30:
        raise DegenerateCovariance("degenerate covariance")
    d = x - mu
    maha = d @ np.linalg.solve(cov, d)
    return float((2 * np.pi) ** -1.5 * det**-0.5 * np.exp(-0.5 * maha))


def sh_basis(d) -> np.ndarray:
    """Real SH basis up to degree 3 at unit directions ``d`` (..., 3) -> (..., 16)."""
    d = np.asarray(d, dtype=np.float64)
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    xx, yy, zz = x * x, y * y, z * z
    Y = np.empty(d.shape[:-1] + (SH_BASIS,))
    Y[..., 0] = SH_C0
    Y[..., 1] = -SH_C1 * y
    Y[..., 2] = SH_C1 * z
    Y[..., 3] = -SH_C1 * x
    Y[..., 4] = SH_C2[0] * x * y
    Y[..., 5] = SH_C2[1] * y * z
    Y[..., 6] = SH_C2[2] * (2 * zz - xx - yy)
    Y[..., 7] = SH_C2[3] * x * z
    Y[..., 8] = SH_C2[4] * (xx - yy)
    Y[..., 9] = SH_C3[0] * y * (3 * xx - yy)
    Y[..., 10] = SH_C3[1] * x * y * z
    Y[..., 11] = SH_C3[2] * y * (4 * zz - xx - yy)
    Y[..., 12] = SH_C3[3] * z * (2 * zz - 3 * xx - 3 * yy)
    Y[..., 13] = SH_C3[4] * x * (4 * zz - xx - yy)
    Y[..., 14] = SH_C3[5] * z * (xx - yy)
    Y[..., 15] = SH_C3[6] * x * (xx - 3 * yy)
    return Y


def sh_basis_jacobian(d) -> np.ndarray:
    """d Y / d d for unit directions: (..., 16, 3)."""
    d = np.asarray(d, dtype=np.float64)
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    xx, yy, zz = x * x, y * y, z * z
    J = np.zeros(d.shape[:-1] + (SH_BASIS, 3))
    J[..., 1, 1] = -SH_C1
    J[..., 2, 2] = SH_C1
    J[..., 3, 0] = -SH_C1
    J[..., 4, 0], J[..., 4, 1] = SH_C2[0] * y, SH_C2[0] * x
    J[..., 5, 1], J[..., 5, 2] = SH_C2[1] * z, SH_C2[1] * y
    J[..., 6, 0], J[..., 6, 1], J[..., 6, 2] = -2 * SH_C2[2] * x, -2 * SH_C2[2] * y, 4 * SH_C2[2] * z
    J[..., 7, 0], J[..., 7, 2] = SH_C2[3] * z, SH_C2[3] * x
    J[..., 8, 0], J[..., 8, 1] = 2 * SH_C2[4] * x, -2 * SH_C2[4] * y
    J[..., 9, 0], J[..., 9, 1] = SH_C3[0] * 6 * x * y, SH_C3[0] * (3 * xx - 3 * yy)
    J[..., 10, 0], J[..., 10, 1], J[..., 10, 2] = SH_C3[1] * y * z, SH_C3[1] * x * z, SH_C3[1] * x * y
    J[..., 11, 0] = SH_C3[2] * -2 * x * y
    J[..., 11, 1] = SH_C3[2] * (4 * zz - xx - 3 * yy)
    J[..., 11, 2] = SH_C3[2] * 8 * y * z
    J[..., 12, 0] = SH_C3[3] * -6 * x * z
    J[..., 12, 1] = SH_C3[3] * -6 * y * z
    J[..., 12, 2] = SH_C3[3] * (6 * zz - 3 * xx - 3 * yy)
    J[..., 13, 0] = SH_C3[4] * (4 * zz - 3 * xx - yy)
    J[..., 13, 1] = SH_C3[4] * -2 * x * y
    J[..., 13, 2] = SH_C3[4] * 8 * x * z
    J[..., 14, 0], J[..., 14, 1], J[..., 14, 2] = SH_C3[5] * 2 * x * z, SH_C3[5] * -2 * y * z, SH_C3[5] * (xx - yy)
    J[..., 15, 0], J[..., 15, 1] = SH_C3[6] * (3 * xx - 3 * yy), SH_C3[6] * -6 * x * y
    return J


def eval_sh_raw(f, d) -> np.ndarray:
    """Unclamped per-channel color <Y(d), f>; f is (..., 3, 16), d is (..., 3)."""
    return np.einsum("...ck,...k->...c", np.asarray(f, dtype=np.float64), sh_basis(d))


def eval_sh(f, d) -> np.ndarray:
    d = np.asarray(d, dtype=np.float64)
    if np.any(np.abs(np.linalg.norm(d, axis=-1) - 1.0) > 1e-6):
        raise ValueError("view direction must be unit-norm")
    return np.clip(eval_sh_raw(f, d), 0.0, 1.0)


@dataclass
class Gaussian:
    mean: np.ndarray
    log_scale: np.ndarray
    rotation: np.ndarray
    opacity_logit: float
    sh: np.ndarray  # (3, 16)

    @property
    def scale(self) -> np.ndarray:
        return np.exp(self.log_scale)

    @property
    def opacity(self) -> float:
        return float(sigmoid(self.opacity_logit))

    def covariance(self) -> np.ndarray:
        return build_covariance(self.scale, normalize_rotation(self.rotation))


@dataclass
class GaussianCloud:
    """Struct-of-arrays Gaussian set with per-point visibility weights ``rho``."""

    means: np.ndarray  # (N, 3)
    log_scales: np.ndarray  # (N, 3)
    rotations: np.ndarray  # (N, 4) raw, normalized on use
    opacity_logits: np.ndarray  # (N,)
    sh: np.ndarray  # (N, 3, 16)
    rho: np.ndarray = field(default=None)  # (N,)
    space: str = "canonical"

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=np.float64).reshape(-1, 3)
        n = len(self.means)
        self.log_scales = np.asarray(self.log_scales, dtype=np.float64).reshape(n, 3)
        self.rotations = np.asarray(self.rotations, dtype=np.float64).reshape(n, 4)
        self.opacity_logits = np.asarray(self.opacity_logits, dtype=np.float64).reshape(n)
        self.sh = np.asarray(self.sh, dtype=np.float64).reshape(n, 3, SH_BASIS)
        if self.rho is None:
            self.rho = np.zeros(n)
        self.rho = np.asarray(self.rho, dtype=np.float64).reshape(-1)
        if len(self.rho) != n:
            raise ValueError(f"rho has {len(self.rho)} entries for {n} gaussians")
        if np.any(self.rho < 0):
            raise ValueError("visibility weights must be nonnegative")
        if self.space not in ("canonical", "posed"):
            raise ValueError(f"unknown space tag {self.space!r}")

    def __len__(self) -> int:
        return len(self.means)

    def __getitem__(self, i: int) -> Gaussian:
        return Gaussian(
            self.means[i].copy(),
            self.log_scales[i].copy(),
            self.rotations[i].copy(),
            float(self.opacity_logits[i]),
            self.sh[i].copy(),
        )

    @classmethod
    def empty(cls, space: str = "canonical") -> "GaussianCloud":
        return cls(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 4)), np.zeros(0), np.zeros((0, 3, 16)), space=space)

    @classmethod
    def from_gaussians(cls, gaussians, rho=None, space: str = "canonical") -> "GaussianCloud":
        gaussians = list(gaussians)
        if not gaussians:
            return cls.empty(space)
        return cls(
            np.stack([g.mean for g in gaussians]),
            np.stack([g.log_scale for g in gaussians]),
            np.stack([g.rotation for g in gaussians]),
            np.array([g.opacity_logit for g in gaussians]),
            np.stack([g.sh for g in gaussians]),
            rho=rho,
            space=space,
        )

    @property
    def scales(self) -> np.ndarray:
        return np.exp(self.log_scales)

    @property
    def opacities(self) -> np.ndarray:
        return sigmoid(self.opacity_logits)

    def covariances(self) -> np.ndarray:
        return build_covariance(self.scales, normalize_rotation(self.rotations))

    def subset(self, index) -> "GaussianCloud":
        index = np.asarray(index, dtype=np.int64).reshape(-1)
        if index.size and (index.min() < 0 or index.max() >= len(self)):
            raise IndexError("gaussian index out of range")
        return GaussianCloud(
            self.means[index],
            self.log_scales[index],
            self.rotations[index],
            self.opacity_logits[index],
            self.sh[index],
            rho=self.rho[index],
            space=self.space,
        )

    def copy(self) -> "GaussianCloud":
        return self.subset(np.arange(len(self)))
