"""Articulated template, forward kinematics and linear blend skinning.

The template stands in for a parametric body model: a fixed capsule skeleton
whose rest geometry never changes (no shape space is optimized).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .gaussians import quat_to_rotmat
from .knn import exact_knn


class TemplateError(ValueError):
    pass


@dataclass
class ArticulatedTemplate:
    rest_vertices: np.ndarray  # (N, 3)
    parents: np.ndarray  # (K,), -1 for the root
    joints: np.ndarray  # (K, 3) rest joint positions
    weights: np.ndarray  # (N, K)

    def __post_init__(self):
        self.rest_vertices = np.asarray(self.rest_vertices, dtype=np.float64).reshape(-1, 3)
        self.parents = np.asarray(self.parents, dtype=np.int64).reshape(-1)
        self.joints = np.asarray(self.joints, dtype=np.float64).reshape(-1, 3)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        n, k = len(self.rest_vertices), len(self.parents)
        if len(self.joints) != k:
            raise TemplateError("joint positions and parent list disagree in length")
        if self.weights.shape != (n, k):
            raise TemplateError(f"weights must be ({n}, {k}), got {self.weights.shape}")
        if np.any(self.weights < 0) or np.any(np.abs(self.weights.sum(1) - 1) > 1e-6):
            raise TemplateError("skinning weight rows must be nonnegative and sum to 1")
        if k == 0 or self.parents[0] != -1:
            raise TemplateError("joint 0 must be the root")
        if np.any(self.parents[1:] == -1):
            raise TemplateError("only joint 0 may lack a parent")
        for j in range(1, k):
            seen = {j}
            p = self.parents[j]
            while p != -1:
                if p < 0 or p >= k or p in seen:
                    raise TemplateError(f"joint {j} does not reach the root (cycle or bad index)")
                seen.add(p)
                p = self.parents[p]
        # FK walks joints in index order
        if np.any(self.parents[1:] >= np.arange(1, k)):
            raise TemplateError("parents must precede their children")

    @property
    def n_joints(self) -> int:
        return len(self.parents)

    def bbox_diagonal(self) -> float:
        return float(np.linalg.norm(self.rest_vertices.max(0) - self.rest_vertices.min(0)))

    def to_text(self) -> str:
        lines = ["occgs-template 1", f"{len(self.rest_vertices)} {self.n_joints}"]
        lines += ["v " + " ".join(repr(float(c)) for c in v) for v in self.rest_vertices]
        lines += [f"j {int(p)} " + " ".join(repr(float(c)) for c in J) for p, J in zip(self.parents, self.joints)]
        lines += ["w " + " ".join(repr(float(c)) for c in w) for w in self.weights]
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path) -> "ArticulatedTemplate":
        return cls.from_text(Path(path).read_text())

    @classmethod
    def from_text(cls, text: str) -> "ArticulatedTemplate":
        rows = [ln.split() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
        if not rows or rows[0] != ["occgs-template", "1"]:
            raise TemplateError("not an occgs template file")
        n, k = int(rows[1][0]), int(rows[1][1])
        body = rows[2:]
        verts = [[float(c) for c in r[1:]] for r in body[:n]]
        jrows = body[n : n + k]
        wrows = body[n + k : n + k + n]
        if any(r[0] != "v" for r in body[:n]) or any(r[0] != "j" for r in jrows) or any(r[0] != "w" for r in wrows):
            raise TemplateError("malformed template body")
        return cls(
            np.array(verts),
            np.array([int(r[1]) for r in jrows]),
            np.array([[float(c) for c in r[2:5]] for r in jrows]),
            np.array([[float(c) for c in r[1:]] for r in wrows]),
        )


@dataclass
class Pose:
    rotations: np.ndarray  # (K, 4) unit quaternions (w, x, y, z)
    translation: np.ndarray  # (3,)

    def __post_init__(self):
        self.rotations = np.asarray(self.rotations, dtype=np.float64).reshape(-1, 4)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(self.rotations)):
            raise ValueError("pose rotations must be finite")

    @classmethod
    def identity(cls, n_joints: int) -> "Pose":
        q = np.zeros((n_joints, 4))
        q[:, 0] = 1
        return cls(q, np.zeros(3))

    @classmethod
    def from_axis_angle(cls, axis_angle, translation=(0.0, 0.0, 0.0)) -> "Pose":
        return cls(axis_angle_to_quat(axis_angle), translation)

    def axis_angle(self) -> np.ndarray:
        return quat_to_axis_angle(self.rotations)


@dataclass
class JointTransforms:
    rotations: np.ndarray  # (K, 3, 3) G_k
    translations: np.ndarray  # (K, 3) b_k, so a rest point x maps to G_k x + b_k
    posed_joints: np.ndarray  # (K, 3)


def axis_angle_to_quat(aa) -> np.ndarray:
    aa = np.asarray(aa, dtype=np.float64)
    angle = np.linalg.norm(aa, axis=-1, keepdims=True)
    half = 0.5 * angle
    # sin(h)/angle -> 1/2 as angle -> 0
    k = np.where(angle > 1e-12, np.sin(half) / np.where(angle > 1e-12, angle, 1.0), 0.5)
    return np.concatenate([np.cos(half), aa * k], axis=-1)


def quat_to_axis_angle(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    q = np.where(q[..., :1] < 0, -q, q)
    v = q[..., 1:]
    s = np.linalg.norm(v, axis=-1, keepdims=True)
    angle = 2 * np.arctan2(s, q[..., :1])
    return np.where(s > 1e-12, v * angle / np.where(s > 1e-12, s, 1.0), 2 * v)


def quat_multiply(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def forward_kinematics(template: ArticulatedTemplate, pose: Pose) -> JointTransforms:
    k = template.n_joints
    if len(pose.rotations) != k:
        raise ValueError(f"pose has {len(pose.rotations)} rotations for {k} joints")
    local_R = quat_to_rotmat(pose.rotations / np.linalg.norm(pose.rotations, axis=1, keepdims=True))
    glob_R = np.empty((k, 3, 3))
    glob_t = np.empty((k, 3))
    for j in range(k):
        p = template.parents[j]
        if p < 0:
            glob_R[j] = local_R[j]
            glob_t[j] = template.joints[j] + pose.translation
        else:
            glob_R[j] = glob_R[p] @ local_R[j]
            glob_t[j] = glob_R[p] @ (template.joints[j] - template.joints[p]) + glob_t[p]
    b = glob_t - np.einsum("kij,kj->ki", glob_R, template.joints)
    return JointTransforms(glob_R, b, glob_t)


def lbs_point(x_c, w, transforms: JointTransforms) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    if abs(w.sum() - 1) > 1e-6:
        raise ValueError("skinning weights must sum to 1")
    x_c = np.asarray(x_c, dtype=np.float64)
    per_joint = transforms.rotations @ x_c + transforms.translations
    return w @ per_joint


def blend_transforms(weights, transforms: JointTransforms):
    """Per-point blended (G, b) for weight rows (N, K) -> ((N,3,3), (N,3))."""
    weights = np.asarray(weights, dtype=np.float64)
    G = np.einsum("nk,kij->nij", weights, transforms.rotations)
    b = weights @ transforms.translations
    return G, b


def skin_gaussian(mean, cov, w, transforms: JointTransforms):
    """Posed (mean, covariance) of one gaussian under blended transform (G, b)."""
    w = np.asarray(w, dtype=np.float64)
    if abs(w.sum() - 1) > 1e-6:
        raise ValueError("skinning weights must sum to 1")
    G, b = blend_transforms(w[None], transforms)
    G, b = G[0], b[0]
    return G @ np.asarray(mean, dtype=np.float64) + b, G @ np.asarray(cov, dtype=np.float64) @ G.T


def skin_gaussians(means, covs, weights, transforms: JointTransforms):
    G, b = blend_transforms(weights, transforms)
    return np.einsum("nij,nj->ni", G, means) + b, G @ covs @ np.swapaxes(G, -1, -2)


def blend_lbs_weights(w_smpl, offsets) -> np.ndarray:
    """softmax(log(w + 1e-8) + offsets) along the last axis."""
    z = np.log(np.asarray(w_smpl, dtype=np.float64) + 1e-8) + np.asarray(offsets, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def refine_pose(pose: Pose, corrections) -> Pose:
    corrections = np.asarray(corrections, dtype=np.float64).reshape(-1, 4)
    if len(corrections) != len(pose.rotations):
        raise ValueError("need one correction per joint")
    return Pose(quat_multiply(pose.rotations, corrections), pose.translation.copy())


def nearest_template_vertex(x, template: ArticulatedTemplate) -> int:
    d = np.sqrt(((template.rest_vertices - np.asarray(x, dtype=np.float64)) ** 2).sum(1))
    return int(np.argmin(d))  # first minimum: lowest index wins ties


def nearest_template_vertices(points, template: ArticulatedTemplate):
    """Nearest rest vertex of every point -> (indices, distances); ties to the lower index."""
    idx, dist = exact_knn(points, template.rest_vertices, 1)
    return idx[:, 0], dist[:, 0]


class ViewTransformCache:
    """Per-view, per-point blended transforms so inference skips FK and weight blending."""

    def __init__(self, R: np.ndarray, T: np.ndarray):
        self.R = np.asarray(R, dtype=np.float64)  # (V, N, 3, 3)
        self.T = np.asarray(T, dtype=np.float64)  # (V, N, 3)

    def __len__(self) -> int:
        return len(self.R)

    def _check(self, view: int):
        if not 0 <= view < len(self.R):
            raise IndexError(f"view {view} out of range for {len(self.R)} cached views")

    def apply(self, view: int, means, covs=None):
        self._check(view)
        R, T = self.R[view], self.T[view]
        x = np.einsum("nij,nj->ni", R, means) + T
        if covs is None:
            return x
        return x, R @ covs @ np.swapaxes(R, -1, -2)


def cache_view_transforms(weights, template: ArticulatedTemplate, poses) -> ViewTransformCache:
    """Freeze blended transforms for each pose; ``weights`` are the trained (N, K) LBS weights."""
    Rs, Ts = [], []
    for pose in poses:
        G, b = blend_transforms(weights, forward_kinematics(template, pose))
        Rs.append(G)
        Ts.append(b)
    n = len(weights)
    return ViewTransformCache(np.array(Rs).reshape(-1, n, 3, 3), np.array(Ts).reshape(-1, n, 3))


# --- procedural capsule body -------------------------------------------------

JOINT_NAMES = (
    "pelvis", "chest", "head",
    "l_shoulder", "l_elbow", "l_wrist",
    "r_shoulder", "r_elbow", "r_wrist",
    "l_hip", "l_knee", "l_ankle",
    "r_hip", "r_knee", "r_ankle",
)
JOINT_PARENTS = (-1, 0, 1, 1, 3, 4, 1, 6, 7, 0, 9, 10, 0, 12, 13)
JOINT_REST = np.array(
    [
        [0.0, 0.0, 0.0],
        [0.0, 0.42, 0.0],
        [0.0, 0.6, 0.0],
        [0.19, 0.5, 0.0],
        [0.45, 0.5, 0.0],
        [0.69, 0.5, 0.0],
        [-0.19, 0.5, 0.0],
        [-0.45, 0.5, 0.0],
        [-0.69, 0.5, 0.0],
        [0.1, -0.06, 0.0],
        [0.1, -0.47, 0.0],
        [0.1, -0.86, 0.0],
        [-0.1, -0.06, 0.0],
        [-0.1, -0.47, 0.0],
        [-0.1, -0.86, 0.0],
    ]
)


@dataclass(frozen=True)
class Capsule:
    a: tuple
    b: tuple
    radius: float
    joint: int  # the joint whose transform the segment follows
    part: str


def body_capsules() -> list[Capsule]:
    J = JOINT_REST
    t = lambda v: tuple(float(c) for c in v)  # noqa: E731
    caps = [
        Capsule((0.0, -0.04, 0.0), (0.0, 0.2, 0.0), 0.15, 0, "torso"),
        Capsule((0.0, 0.2, 0.0), (0.0, 0.46, 0.0), 0.16, 1, "torso"),
        Capsule((0.0, 0.66, 0.0), (0.0, 0.8, 0.0), 0.1, 2, "head"),
        Capsule((0.0, 0.5, 0.0), (0.0, 0.62, 0.0), 0.05, 1, "neck"),
    ]
    for s, sh, el, wr in ((1, 3, 4, 5), (-1, 6, 7, 8)):
        caps.append(Capsule((0.08 * s, 0.5, 0.0), t(J[sh]), 0.07, 1, "shirt"))
        caps.append(Capsule(t(J[sh]), t(J[el]), 0.06, sh, "shirt"))
        caps.append(Capsule(t(J[el]), t(J[wr]), 0.048, el, "skin"))
        caps.append(Capsule(t(J[wr]), t(J[wr] + [0.07 * s, 0.0, 0.0]), 0.045, wr, "skin"))
    for hip, knee, ankle in ((9, 10, 11), (12, 13, 14)):
        caps.append(Capsule(t(J[hip]), t(J[knee]), 0.08, hip, "pants"))
        caps.append(Capsule(t(J[knee]), t(J[ankle]), 0.062, knee, "pants"))
        caps.append(Capsule(t(J[ankle]), t(J[ankle] + [0.0, -0.04, 0.12]), 0.05, ankle, "shoe"))
    return caps


def _segment_distance(p, a, b):
    a = np.asarray(a)
    ab = np.asarray(b) - a
    t = np.clip(((p - a) @ ab) / (ab @ ab), 0.0, 1.0)
    return np.linalg.norm(p - (a + t[:, None] * ab), axis=1)


def capsule_skin_weights(points, capsules=None, n_joints: int = len(JOINT_PARENTS), sigma: float = 0.035):
    """Smooth weights from surface distance to each capsule, pooled per owning joint."""
    capsules = capsules or body_capsules()
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    surf = np.stack([_segment_distance(points, c.a, c.b) - c.radius for c in capsules], axis=1)
    surf = np.maximum(surf, 0.0)
    surf -= surf.min(axis=1, keepdims=True)
    affinity = np.exp(-0.5 * (surf / sigma) ** 2)
    W = np.zeros((len(points), n_joints))
    for i, c in enumerate(capsules):
        W[:, c.joint] += affinity[:, i]
    W[W < 1e-4] = 0.0
    return W / W.sum(axis=1, keepdims=True)


def sample_capsule_surface(n: int, seed: int = 0, capsules=None):
    """Area-weighted points on the union surface of the capsules (inner points rejected)."""
    capsules = capsules or body_capsules()
    rng = np.random.default_rng(seed)
    areas = np.array(
        [2 * np.pi * c.radius * np.linalg.norm(np.subtract(c.b, c.a)) + 4 * np.pi * c.radius**2 for c in capsules]
    )
    out, parts = [], []
    while sum(len(o) for o in out) < n:
        m = 4 * n
        which = rng.choice(len(capsules), size=m, p=areas / areas.sum())
        d = rng.normal(size=(m, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        pts = np.empty((m, 3))
        for i, c in enumerate(capsules):
            sel = which == i
            t = rng.uniform(0, 1, sel.sum())
            axis = np.subtract(c.b, c.a)
            # project the random direction off the axis for the cylinder body
            u = d[sel] - np.outer(d[sel] @ axis / (axis @ axis), axis)
            u /= np.linalg.norm(u, axis=1, keepdims=True) + 1e-12
            cyl = np.asarray(c.a) + t[:, None] * axis + c.radius * u
            cap_pick = rng.uniform(0, 1, sel.sum()) < (4 * np.pi * c.radius**2) / areas[i]
            end = np.where((d[sel] @ axis)[:, None] > 0, np.asarray(c.b), np.asarray(c.a))
            sph = end + c.radius * d[sel]
            pts[sel] = np.where(cap_pick[:, None], sph, cyl)
        inside = np.zeros(m, bool)
        for c in capsules:
            inside |= _segment_distance(pts, c.a, c.b) < c.radius - 1e-6
        keep = ~inside
        out.append(pts[keep])
        parts.append(which[keep])
    pts = np.concatenate(out)[:n]
    parts = np.concatenate(parts)[:n]
    # deterministic spatial ordering keeps vertex indices stable across runs
    order = np.lexsort((pts[:, 0], pts[:, 2], pts[:, 1]))
    return pts[order], parts[order]


def make_capsule_template(n_vertices: int = 600, seed: int = 0) -> ArticulatedTemplate:
    caps = body_capsules()
    verts, _ = sample_capsule_surface(n_vertices, seed, caps)
    return ArticulatedTemplate(verts, np.array(JOINT_PARENTS), JOINT_REST.copy(), capsule_skin_weights(verts, caps))
