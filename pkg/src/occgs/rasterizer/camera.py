from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

NEAR_PLANE = 0.01
COV2D_FLOOR = 0.3


@dataclass
class Camera:
    """Pinhole camera. World point x maps to camera space as W @ x + t."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    W: np.ndarray = field(default_factory=lambda: np.eye(3))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64).reshape(3, 3)
        self.t = np.asarray(self.t, dtype=np.float64).reshape(3)
        self.width = int(self.width)
        self.height = int(self.height)
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not np.allclose(self.W @ self.W.T, np.eye(3), atol=1e-8) or abs(np.linalg.det(self.W) - 1) > 1e-8:
            raise ValueError("extrinsic rotation must be orthonormal with det +1")

    @property
    def center(self) -> np.ndarray:
        return -self.W.T @ self.t

    def to_camera(self, points) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.W.T + self.t

    def to_vector(self) -> np.ndarray:
        """Flat 18-float record: fx fy cx cy width height W(9, row-major) t(3)."""
        return np.concatenate([[self.fx, self.fy, self.cx, self.cy, self.width, self.height], self.W.ravel(), self.t])

    @classmethod
    def from_vector(cls, v) -> "Camera":
        v = np.asarray(v, dtype=np.float64)
        return cls(float(v[0]), float(v[1]), float(v[2]), float(v[3]), int(round(v[4])), int(round(v[5])), v[6:15].reshape(3, 3), v[15:18])

    @classmethod
    def look_at(cls, eye, target, up, fx, fy, cx, cy, width, height) -> "Camera":
        """Camera at ``eye`` looking at ``target``; image y runs along -``up``."""
        eye = np.asarray(eye, dtype=np.float64)
        forward = np.asarray(target, dtype=np.float64) - eye
        forward /= np.linalg.norm(forward)
        right = np.cross(-np.asarray(up, dtype=np.float64), forward)
        right /= np.linalg.norm(right)
        down = np.cross(forward, right)
        W = np.stack([right, down, forward])
        return cls(fx, fy, cx, cy, width, height, W, -W @ eye)


def project_points(camera: Camera, points, near: float = NEAR_PLANE):
    """Vectorized pinhole projection -> (pixels (N,2), depths (N,), in_front (N,))."""
    p = camera.to_camera(np.asarray(points, dtype=np.float64).reshape(-1, 3))
    z = p[:, 2]
    ok = z > near
    zs = np.where(ok, z, 1.0)
    pix = np.stack([camera.fx * p[:, 0] / zs + camera.cx, camera.fy * p[:, 1] / zs + camera.cy], axis=1)
    pix[~ok] = np.nan
    return pix, z, ok


def project_point(camera: Camera, mu, near: float = NEAR_PLANE):
    """Pixel and depth of one point, or ``None`` when it sits behind the near plane."""
    pix, z, ok = project_points(camera, mu, near)
    if not ok[0]:
        return None
    return pix[0], float(z[0])


def projection_jacobian(camera: Camera, cam_points) -> np.ndarray:
    """Jacobian of (u, v) w.r.t. camera-space point, (N, 2, 3)."""
    x, y, z = cam_points[:, 0], cam_points[:, 1], cam_points[:, 2]
    J = np.zeros((len(cam_points), 2, 3))
    J[:, 0, 0] = camera.fx / z
    J[:, 0, 2] = -camera.fx * x / z**2
    J[:, 1, 1] = camera.fy / z
    J[:, 1, 2] = -camera.fy * y / z**2
    return J


def project_covariance(camera: Camera, cov, mu, floor: float = COV2D_FLOOR) -> np.ndarray:
    """Screen-space covariance J W Sigma W^T J^T plus a diagonal low-pass floor."""
    cov = np.asarray(cov, dtype=np.float64)
    single = cov.ndim == 2
    cov = cov.reshape(-1, 3, 3)
    cam = camera.to_camera(np.asarray(mu, dtype=np.float64).reshape(-1, 3))
    T = projection_jacobian(camera, cam) @ camera.W
    out = T @ cov @ np.swapaxes(T, -1, -2)
    out[:, 0, 0] += floor
    out[:, 1, 1] += floor
    return out[0] if single else out
