"""Procedural capsule figure: meshes, texture, motion and cameras."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..rasterizer.camera import Camera
from ..skinning import (
    ArticulatedTemplate,
    Pose,
    blend_transforms,
    body_capsules,
    capsule_skin_weights,
    forward_kinematics,
    make_capsule_template,
)
from .meshraster import box_downsample, rasterize_mesh

RESOLUTION = 64
FOCAL = 100.0
CAMERA_DISTANCE = 3.4
TEST_YAWS_DEG = (-30.0, 30.0)
TEST_STRIDE = 5
SUPERSAMPLE = 2

PART_IDS = {"torso": 0, "head": 1, "neck": 2, "shirt": 3, "skin": 4, "pants": 5, "shoe": 6}


@dataclass
class Frame:
    rgb: np.ndarray  # (H, W, 3) in [0, 1]
    mask: np.ndarray  # (H, W) bool
    pose: Pose
    camera: Camera
    index: int
    occluded: bool = False
    pose_index: int = -1  # training pose this frame reuses (test frames)

    def __post_init__(self):
        hw = (self.camera.height, self.camera.width)
        if self.rgb.shape != hw + (3,) or self.mask.shape != hw:
            raise ValueError(f"frame {self.index}: image {self.rgb.shape} / mask {self.mask.shape} vs camera {hw}")

    @property
    def masked_rgb(self) -> np.ndarray:
        return self.rgb * self.mask[..., None]


@dataclass
class Dataset:
    train: list
    test: list
    template: ArticulatedTemplate
    seed: int = 0
    info: dict = field(default_factory=dict)


# --- mesh --------------------------------------------------------------------


def capsule_mesh(capsule, n_around: int = 16, n_cap: int = 4):
    """Closed triangle mesh of one capsule -> (vertices, triangles)."""
    a, b = np.asarray(capsule.a, dtype=np.float64), np.asarray(capsule.b, dtype=np.float64)
    u = b - a
    u /= np.linalg.norm(u)
    helper = np.array([1.0, 0.0, 0.0]) if abs(u[0]) < 0.9 else np.array([0.0, 0.0, 1.0])
    e1 = np.cross(u, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(u, e1)
    psi = np.linspace(0, 2 * np.pi, n_around, endpoint=False)
    ring_dirs = np.cos(psi)[:, None] * e1 + np.sin(psi)[:, None] * e2
    rings = []
    for center, thetas in ((a, np.linspace(0, np.pi / 2, n_cap + 1)), (b, np.linspace(np.pi / 2, np.pi, n_cap + 1))):
        for th in thetas:
            rings.append(center - capsule.radius * np.cos(th) * u + capsule.radius * np.sin(th) * ring_dirs)
    verts = np.concatenate(rings)
    tris = []
    for r in range(len(rings) - 1):
        for k in range(n_around):
            i0 = r * n_around + k
            i1 = r * n_around + (k + 1) % n_around
            j0, j1 = i0 + n_around, i1 + n_around
            tris += [(i0, j0, i1), (i1, j0, j1)]
    return verts, np.array(tris, dtype=np.int64)


@dataclass
class BodyMesh:
    vertices: np.ndarray  # canonical
    triangles: np.ndarray
    part: np.ndarray  # per vertex
    weights: np.ndarray  # (V, K)


def build_body_mesh() -> BodyMesh:
    caps = body_capsules()
    verts, tris, part = [], [], []
    offset = 0
    for c in caps:
        v, t = capsule_mesh(c)
        verts.append(v)
        tris.append(t + offset)
        part.append(np.full(len(v), PART_IDS[c.part]))
        offset += len(v)
    V = np.concatenate(verts)
    return BodyMesh(V, np.concatenate(tris), np.concatenate(part), capsule_skin_weights(V, caps))


def skin_vertices(mesh: BodyMesh, template: ArticulatedTemplate, pose: Pose) -> np.ndarray:
    G, b = blend_transforms(mesh.weights, forward_kinematics(template, pose))
    return np.einsum("nij,nj->ni", G, mesh.vertices) + b


# --- appearance ----------------------------------------------------------------


def make_palette(seed: int) -> np.ndarray:
    base = np.array(
        [
            [0.80, 0.22, 0.20],  # torso
            [0.88, 0.68, 0.55],  # head
            [0.85, 0.65, 0.52],  # neck
            [0.80, 0.22, 0.20],  # shirt sleeves
            [0.88, 0.68, 0.55],  # forearms, hands
            [0.20, 0.30, 0.68],  # pants
            [0.15, 0.12, 0.10],  # shoes
        ]
    )
    rng = np.random.default_rng(seed)
    return np.clip(base + rng.uniform(-0.08, 0.08, base.shape), 0.0, 1.0)


def texture(canonical, part, palette) -> np.ndarray:
    """Albedo from the canonical surface position: part colors, shirt stripes, hair."""
    part = np.asarray(part).astype(np.int64)
    col = palette[part].copy()
    y = canonical[..., 1]
    shirt = (part == 0) | (part == 3)
    stripe = np.sin(2 * np.pi * y / 0.14) > 0.3
    col[shirt & stripe] = 0.35 * col[shirt & stripe] + 0.65 * np.array([0.95, 0.85, 0.35])
    hair = (part == 1) & ((y > 0.78) | ((y > 0.7) & (canonical[..., 2] < -0.02)))
    col[hair] = np.array([0.25, 0.16, 0.1])
    pants = part == 5
    col[pants] *= (0.85 + 0.15 * np.cos(2 * np.pi * y / 0.4))[pants][:, None]
    return col


def render_figure(mesh: BodyMesh, template: ArticulatedTemplate, pose: Pose, camera: Camera, palette,
                  supersample: int = SUPERSAMPLE):
    """Anti-aliased rgb on black and a binary coverage >= 0.5 mask."""
    posed = skin_vertices(mesh, template, pose)
    attrs = np.concatenate([mesh.vertices, mesh.part[:, None].astype(np.float64)], axis=1)
    out, hit = rasterize_mesh(posed, mesh.triangles, attrs, camera, supersample)
    color = texture(out[..., :3], np.rint(out[..., 3]), palette) * hit[..., None]
    rgb = np.clip(box_downsample(color, supersample), 0.0, 1.0)
    coverage = box_downsample(hit.astype(np.float64), supersample)
    return rgb, coverage >= 0.5


# --- motion and cameras -------------------------------------------------------


def pose_sequence(n_frames: int, seed: int, n_joints: int = 15) -> list:
    """In-place walk: swinging arms and legs, bending elbows and knees, slight root yaw and sway."""
    rng = np.random.default_rng(seed + 1)
    phase = rng.uniform(0, 2 * np.pi)
    amp = rng.uniform(0.8, 1.2, 6)
    poses = []
    for i in range(n_frames):
        t = phase + 2 * np.pi * 1.5 * i / max(n_frames, 1)
        aa = np.zeros((n_joints, 3))
        aa[0] = [0.0, 0.3 * amp[0] * np.sin(0.5 * t), 0.0]
        aa[1] = [0.08 * np.sin(t), 0.1 * np.sin(t + 1.0), 0.0]
        aa[2] = [0.15 * np.sin(t + 0.5), 0.0, 0.0]
        aa[3] = [0.35 * amp[1] * np.sin(t), 0.0, -(0.95 + 0.2 * np.sin(t))]
        aa[6] = [-0.35 * amp[1] * np.sin(t), 0.0, 0.95 + 0.2 * np.sin(t)]
        aa[4] = [0.0, -(0.3 + 0.3 * amp[2] * (1 + np.sin(t))), 0.0]
        aa[7] = [0.0, 0.3 + 0.3 * amp[2] * (1 - np.sin(t)), 0.0]
        aa[9] = [-0.35 * amp[3] * np.sin(t), 0.0, 0.05]
        aa[12] = [0.35 * amp[3] * np.sin(t), 0.0, -0.05]
        aa[10] = [0.25 * amp[4] * (1 + np.sin(t + 0.6)), 0.0, 0.0]
        aa[13] = [0.25 * amp[4] * (1 - np.sin(t + 0.6)), 0.0, 0.0]
        trans = np.array([0.05 * amp[5] * np.sin(t), 0.02 * np.cos(2 * t), 0.0])
        poses.append(Pose.from_axis_angle(aa, trans))
    return poses


def orbit_camera(yaw_deg: float, resolution: int = RESOLUTION, focal: float = FOCAL,
                 distance: float = CAMERA_DISTANCE) -> Camera:
    yaw = np.deg2rad(yaw_deg)
    eye = np.array([distance * np.sin(yaw), 0.0, distance * np.cos(yaw)])
    c = (resolution - 1) / 2.0
    scale = resolution / RESOLUTION
    return Camera.look_at(eye, [0.0, -0.03, 0.0], [0.0, 1.0, 0.0], focal * scale, focal * scale, c, c, resolution,
                          resolution)


def generate_synthetic_dataset(seed: int = 0, n_frames: int = 30, resolution: int = RESOLUTION,
                               n_template: int = 600) -> Dataset:
    """Training frames from a fixed front camera plus unoccluded held-out views.

    Test frames reuse every fifth training pose, seen from cameras orbited
    +-30 degrees around the vertical axis.
    """
    template = make_capsule_template(n_template, seed=seed)
    mesh = build_body_mesh()
    palette = make_palette(seed)
    poses = pose_sequence(n_frames, seed, template.n_joints)
    cam = orbit_camera(0.0, resolution)
    train = []
    for i, pose in enumerate(poses):
        rgb, mask = render_figure(mesh, template, pose, cam, palette)
        train.append(Frame(rgb, mask, pose, cam, i, pose_index=i))
    test = []
    for yaw in TEST_YAWS_DEG:
        tcam = orbit_camera(yaw, resolution)
        for i in range(0, n_frames, TEST_STRIDE):
            rgb, mask = render_figure(mesh, template, poses[i], tcam, palette)
            test.append(Frame(rgb, mask, poses[i], tcam, len(test), pose_index=i))
    return Dataset(train, test, template, seed, {"n_frames": n_frames, "resolution": resolution})


def with_frames(dataset: Dataset, train) -> Dataset:
    return replace(dataset, train=list(train))
