"""Optimization loop."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from ..density import DensifyStats, densify_step, write_actions_csv
from ..losses import LossBreakdown, append_loss_csv, l_con, l_mask, l_occ, l_rgb, ssim, total_loss
from ..occlusion import encode_features, update_visibility_weights
from .checkpoint import Checkpoint
from .config import TrainConfig, config_to_text
from .model import FrameContext, OccModel, Selection, initial_cloud
from .optim import Adam
from .synthetic import Dataset

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    def __init__(self, iteration: int, value: float):
        super().__init__(f"non-finite loss {value} at iteration {iteration}")
        self.iteration = iteration


@dataclass
class DensifyEvent:
    iteration: int
    n_before: int
    n_after: int
    counts: dict
    rho_size: int

    @property
    def reconciles(self) -> bool:
        c = self.counts
        return self.n_after == self.n_before - c["prune"] + c["split"] + c["clone"] - c["merge"]


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    model: OccModel
    losses: list = field(default_factory=list)  # LossBreakdown per iteration
    densify_events: list = field(default_factory=list)


def scene_extent(template) -> float:
    return 0.5 * template.bbox_diagonal()


def frame_contexts(dataset: Dataset, need_features: bool) -> list:
    return [
        FrameContext(f.masked_rgb, f.mask, encode_features(f.rgb) if need_features else None, f.pose, f.camera)
        for f in dataset.train
    ]


def view_list(dataset: Dataset):
    keys = [f"train/{f.index:04d}" for f in dataset.train] + [f"test/{f.index:04d}" for f in dataset.test]
    frames = list(dataset.train) + list(dataset.test)
    return keys, [f.pose for f in frames], [f.camera for f in frames]


def _optimizer(model: OccModel, cfg: TrainConfig, extent: float) -> Adam:
    lr = cfg.lr
    group_lr = {"means": lr.mean * extent, "log_scales": lr.scale, "rotations": lr.rotation,
                "opacity_logits": lr.opacity, "sh": lr.sh}
    params = dict(model.params)
    lrs = dict(group_lr)
    for name, p in model.network_params().items():
        params[name] = p
        lrs[name] = lr.mlp
    return Adam(params, lrs)


def frame_losses(model: OccModel, ctx: FrameContext, cfg: TrainConfig, selection: Selection | None = None):
    """Total loss tensor, its breakdown, and the frame pass.

    With ``selection`` from an earlier pass every discrete choice is reused,
    which makes the loss a smooth function of the parameters.
    """
    fp = model.frame_pass(ctx, selection)
    sel = fp.selection
    w = cfg.loss
    gt = torch.as_tensor(ctx.gt, dtype=fp.color.dtype)
    mask = torch.as_tensor(ctx.mask, dtype=fp.color.dtype)
    zero = fp.color.sum() * 0.0
    rgb = l_rgb(fp.color, gt)
    msk = l_mask(fp.alpha, mask)
    ss = 1.0 - ssim(fp.color, gt) if w.ssim > 0 else zero
    occ = con = zero
    if cfg.use_occ_losses:
        if sel.target is None:
            sel.target = model.occlusion_target(fp, ctx)
            sel.low = np.flatnonzero(fp.opacity.detach().numpy() < w.opacity_eps)
        target = torch.as_tensor(sel.target, dtype=fp.color.dtype)
        if len(sel.occluded):
            _, occ_alpha = model.render_subset(fp, sel.occluded, ctx.camera)
        else:
            occ_alpha = torch.zeros_like(target)
        occ = l_occ(occ_alpha, target)
        if len(sel.low):
            c_col, c_alpha = model.render_subset(fp, sel.low, ctx.camera)
            con = l_con(c_col, c_alpha, gt, mask, w.con_mask)
    total = total_loss(rgb, msk, ss, occ, con, w)
    parts = LossBreakdown(*(float(v.detach()) for v in (rgb, msk, ss, occ, con, total)))
    return total, parts, fp


def train(cfg: TrainConfig, dataset: Dataset, out_dir=None,
          on_iteration: Callable[[int, OccModel], None] | None = None) -> TrainResult:
    if not dataset.train:
        raise ValueError("dataset has no training frames")
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    template = dataset.template
    model = OccModel(template, initial_cloud(template, cfg.init_opacity, cfg.init_color), cfg)
    contexts = frame_contexts(dataset, cfg.use_knn and cfg.use_features)
    extent = scene_extent(template)
    opt = _optimizer(model, cfg, extent)
    stats = DensifyStats.zeros(len(model))
    densify_cfg = cfg.densify.resolved(template)
    densify_until = int(cfg.densify_until * cfg.iterations)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        for name in ("losses.csv", "densify.csv"):
            (out / name).unlink(missing_ok=True)
    result = TrainResult(None, model)
    frozen = False
    for it in range(1, cfg.iterations + 1):
        ctx = contexts[int(rng.integers(len(contexts)))]
        total, parts, fp = frame_losses(model, ctx, cfg)
        if not np.isfinite(parts.total):
            raise TrainingDiverged(it, parts.total)
        opt.zero_grad()
        total.backward()
        opt.step()
        result.losses.append(parts)
        if out is not None:
            append_loss_csv(out / "losses.csv", it, parts)
        if cfg.log_every and it % cfg.log_every == 0:
            log.info("iter %d loss %.5f (rgb %.5f) n=%d", it, parts.total, parts.rgb, len(model))

        # visibility weights accumulate only until density control starts
        model.rho = update_visibility_weights(model.rho, fp.seen, frozen)
        g = fp.sink.means2d
        if g is not None:
            ndc = np.linalg.norm(g * (np.array([ctx.camera.width, ctx.camera.height]) / 2.0), axis=1)
            stats.add(ndc, fp.sink.visible)

        if it >= cfg.densify_from and it <= densify_until and it % densify_cfg.interval == 0:
            frozen = True
            n_before = len(model)
            res = densify_step(model.cloud(), stats, densify_cfg, template, seed=cfg.seed, iteration=it)
            model.load_cloud(res.cloud)
            for k in model.params:
                opt.remap(k, model.params[k], res.source, res.fresh)
            model.refresh_nearest()
            stats = DensifyStats.zeros(len(model))
            result.densify_events.append(DensifyEvent(it, n_before, len(model), res.counts, len(model.rho)))
            if out is not None:
                write_actions_csv(out / "densify.csv", it, res.actions)
        if on_iteration is not None:
            on_iteration(it, model)

    keys, poses, cameras = view_list(dataset)
    result.checkpoint = Checkpoint.from_model(model, keys, poses, cameras, config_to_text(cfg), cfg.iterations)
    if out is not None:
        result.checkpoint.save(out / "checkpoint.ocgs")
    return result
