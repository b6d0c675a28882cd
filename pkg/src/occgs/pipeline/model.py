"""The trainable human model: canonical gaussians, heads, and one differentiable frame pass."""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np
import torch

from .. import diff
from ..gaussians import SH_BASIS, SH_C0, GaussianCloud, logit
from ..heads import LbsOffsetHead, OccludedHeads, PoseCorrectionHead
from ..knn import exact_knn
from ..occlusion import (
    FEATURE_CHANNELS,
    aggregate_features,
    body_mask,
    classify_visibility,
    knn_visible,
    occlusion_mask,
    sample_features,
)
from ..rasterizer.autograd import GradSink, rasterize_torch
from ..skinning import (
    ArticulatedTemplate,
    Pose,
    axis_angle_to_quat,
    cache_view_transforms,
    nearest_template_vertices,
    refine_pose,
)
from .config import TrainConfig

PARAM_KEYS = ("means", "log_scales", "rotations", "opacity_logits", "sh")
DTYPE = torch.float64


def initial_cloud(template: ArticulatedTemplate, opacity: float = 0.1, color: float = 0.5) -> GaussianCloud:
    """One isotropic gaussian per template vertex, sized by its three nearest neighbours."""
    V = template.rest_vertices
    _, d = exact_knn(V, V, 4)
    spacing = d[:, 1:].mean(axis=1)  # column 0 is the vertex itself
    n = len(V)
    sh = np.zeros((n, 3, SH_BASIS))
    sh[:, :, 0] = color / SH_C0
    return GaussianCloud(
        means=V.copy(),
        log_scales=np.repeat(np.log(0.5 * spacing)[:, None], 3, axis=1),
        rotations=np.tile([1.0, 0.0, 0.0, 0.0], (n, 1)),
        opacity_logits=np.full(n, float(logit(opacity))),
        sh=sh,
        rho=np.zeros(n),
    )


@dataclass
class FrameContext:
    """Per-frame inputs that never change during training."""

    gt: np.ndarray  # (H, W, 3) supervision image
    mask: np.ndarray  # (H, W) foreground
    features: np.ndarray | None  # (H, W, C) encoded image
    pose: Pose
    camera: object


@dataclass
class Selection:
    """Discrete per-frame choices; gradients never flow through these."""

    seen: np.ndarray
    occluded: np.ndarray
    neighbours: np.ndarray | None = None  # (N2, K) cloud rows
    weights: np.ndarray | None = None  # inverse-distance blend when features are off
    h_agg: np.ndarray | None = None
    x_occ: np.ndarray | None = None
    low: np.ndarray | None = None  # sub-threshold opacity rows for the consistency loss
    target: np.ndarray | None = None  # occlusion mask for the occluded-point render


@dataclass
class FramePass:
    color: torch.Tensor
    alpha: torch.Tensor
    selection: Selection
    posed_means: torch.Tensor
    posed_covs: torch.Tensor
    colors: torch.Tensor
    opacity: torch.Tensor
    sink: GradSink

    @property
    def seen(self) -> np.ndarray:
        return self.selection.seen

    @property
    def occluded(self) -> np.ndarray:
        return self.selection.occluded


class OccModel:
    def __init__(self, template: ArticulatedTemplate, cloud: GaussianCloud, cfg: TrainConfig):
        self.template = template
        self.cfg = cfg
        self.params = {k: torch.tensor(getattr(cloud, k), dtype=DTYPE, requires_grad=True) for k in PARAM_KEYS}
        self.rho = cloud.rho.copy()
        K = template.n_joints
        hd = self.head_dtype = getattr(torch, cfg.head_precision)
        self.occ_heads = OccludedHeads(FEATURE_CHANNELS, seed=cfg.seed, dtype=hd)
        self.lbs_head = LbsOffsetHead(K, seed=cfg.seed + 10, dtype=hd)
        self.pose_head = PoseCorrectionHead(K, seed=cfg.seed + 20, dtype=hd)
        self._parents = [int(p) for p in template.parents]
        self._joints = torch.tensor(template.joints, dtype=DTYPE)
        self._w_template = torch.tensor(template.weights, dtype=DTYPE)
        self.refresh_nearest()

    # --- bookkeeping ---------------------------------------------------------

    def __len__(self) -> int:
        return int(self.params["means"].shape[0])

    def refresh_nearest(self) -> None:
        self.nearest, _ = nearest_template_vertices(self.params["means"].detach().numpy(), self.template)

    def networks(self) -> dict:
        return {"occ": self.occ_heads, "lbs": self.lbs_head, "pose": self.pose_head}

    def network_params(self) -> dict:
        out = {}
        for prefix, net in self.networks().items():
            for name, p in net.named_parameters():
                out[f"{prefix}.{name}"] = p
        return out

    def cloud(self) -> GaussianCloud:
        p = {k: v.detach().numpy().copy() for k, v in self.params.items()}
        return GaussianCloud(rho=self.rho.copy(), **p)

    def load_cloud(self, cloud: GaussianCloud) -> None:
        self.params = {k: torch.tensor(getattr(cloud, k), dtype=DTYPE, requires_grad=True) for k in PARAM_KEYS}
        self.rho = cloud.rho.copy()

    def copy(self) -> "OccModel":
        return copy.deepcopy(self)

    def _run(self, net, *xs):
        """Evaluate a head at its own precision; results come back as float64."""
        out = net(*(torch.as_tensor(x).to(self.head_dtype) for x in xs))
        if isinstance(out, tuple):
            return tuple(o.to(DTYPE) for o in out)
        return out.to(DTYPE)

    # --- skinning ------------------------------------------------------------

    def joint_quats(self, pose: Pose) -> torch.Tensor:
        aa = torch.tensor(pose.axis_angle(), dtype=DTYPE)
        q = diff.axis_angle_to_quat(aa)
        if self.cfg.use_mlp_heads:
            q = diff.quat_multiply(q, diff.axis_angle_to_quat(self._run(self.pose_head, aa)[0]))
        return q

    def refined_pose(self, pose: Pose) -> Pose:
        if not self.cfg.use_mlp_heads:
            return pose
        with torch.no_grad():
            corr = self._run(self.pose_head, pose.axis_angle())[0].numpy()
        return refine_pose(pose, axis_angle_to_quat(corr))

    def lbs_weights(self) -> torch.Tensor:
        w = self._w_template[torch.as_tensor(self.nearest)]
        if not self.cfg.use_mlp_heads:
            return w / w.sum(-1, keepdim=True)
        return diff.blend_lbs_weights(w, self._run(self.lbs_head, self.params["means"].detach()))

    def pose_cloud(self, pose: Pose):
        """Posed means and covariances (torch, differentiable)."""
        q = self.joint_quats(pose)
        G, b = diff.forward_kinematics(self._parents, self._joints, q, torch.tensor(pose.translation, dtype=DTYPE))
        covs = diff.covariance(self.params["log_scales"], self.params["rotations"])
        means_p, covs_p, _, _ = diff.skin(self.params["means"], covs, self.lbs_weights(), G, b)
        return means_p, covs_p

    def view_cache(self, poses):
        with torch.no_grad():
            w = self.lbs_weights().numpy()
        return cache_view_transforms(w, self.template, [self.refined_pose(p) for p in poses])

    # --- one frame -----------------------------------------------------------

    def select(self, ctx: FrameContext, posed_np) -> Selection:
        """Visibility split and everything the occluded points borrow from their neighbours."""
        cfg = self.cfg
        split = classify_visibility(posed_np, ctx.camera, ctx.mask)
        sel = Selection(split.seen, split.occluded)
        seen, occ = split.seen, split.occluded
        if not cfg.use_knn or len(occ) == 0 or len(seen) == 0:
            return sel
        knn = knn_visible(posed_np[occ], posed_np[seen], cfg.k)
        sel.neighbours = seen[knn.indices]  # (N2, K) rows of the cloud
        if not cfg.use_features:
            w = 1.0 / (knn.distances + 1e-8)
            sel.weights = w / w.sum(1, keepdims=True)
            return sel
        h, _ = sample_features(ctx.features, posed_np[sel.neighbours.reshape(-1)], ctx.camera)
        sel.h_agg = aggregate_features(h.reshape(len(occ), cfg.k, -1), self.rho[sel.neighbours])
        sel.x_occ = posed_np[occ]
        return sel

    def occluded_appearance(self, sel: Selection, sh, opacity):
        """Replacement SH and opacity for the occluded points, or None when the query is off."""
        if sel.neighbours is None:
            return None
        if sel.h_agg is None:
            w = torch.as_tensor(sel.weights, dtype=DTYPE)
            idx = torch.as_tensor(sel.neighbours)
            return torch.einsum("nk,nkcb->ncb", w, sh[idx]), (w * opacity[idx]).sum(1)
        return self._run(self.occ_heads, sel.h_agg, sel.x_occ)

    def frame_pass(self, ctx: FrameContext, selection: Selection | None = None) -> FramePass:
        """Render one training frame. Pass ``selection`` to reuse an earlier frame's discrete choices."""
        means_p, covs_p = self.pose_cloud(ctx.pose)
        sel = selection or self.select(ctx, means_p.detach().numpy())
        sh = self.params["sh"]
        opacity = torch.sigmoid(self.params["opacity_logits"])
        rep = self.occluded_appearance(sel, sh, opacity)
        if rep is not None:
            occ_idx = torch.as_tensor(sel.occluded)
            sh = sh.index_put((occ_idx,), rep[0])
            opacity = opacity.index_put((occ_idx,), rep[1])
        colors = diff.eval_sh(sh, means_p, torch.as_tensor(ctx.camera.center, dtype=DTYPE))
        sink = GradSink()
        color, alpha = rasterize_torch(means_p, covs_p, colors, opacity, ctx.camera, self.cfg.tile, sink)
        return FramePass(color, alpha, sel, means_p, covs_p, colors, opacity, sink)

    def render_subset(self, fp: FramePass, index, camera):
        index = torch.as_tensor(np.asarray(index, dtype=np.int64))
        return rasterize_torch(fp.posed_means[index], fp.posed_covs[index], fp.colors[index], fp.opacity[index],
                               camera, self.cfg.tile)

    def occlusion_target(self, fp: FramePass, ctx: FrameContext) -> np.ndarray:
        body = body_mask(fp.posed_means.detach().numpy(), ctx.camera)
        return occlusion_mask(body, ctx.mask)

    @torch.no_grad()
    def render_plain(self, pose: Pose, camera, tile: int | None = None):
        """Full-pipeline render with each gaussian's own appearance, numpy out."""
        means_p, covs_p = self.pose_cloud(pose)
        colors = diff.eval_sh(self.params["sh"], means_p, torch.as_tensor(camera.center, dtype=DTYPE))
        color, alpha = rasterize_torch(means_p, covs_p, colors, torch.sigmoid(self.params["opacity_logits"]), camera,
                                       tile or self.cfg.tile)
        return color.numpy(), alpha.numpy()
