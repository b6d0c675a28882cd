"""Adaptive density control: split, clone, merge and prune."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .gaussians import Gaussian, GaussianCloud, logit, normalize_rotation, quat_to_rotmat, sigmoid
from .skinning import ArticulatedTemplate, nearest_template_vertices

SPLIT_SCALE_DIVISOR = 1.6


@dataclass
class DensifyConfig:
    grad_threshold: float = 2e-4
    scale_threshold: float | None = None  # None -> 1% of template bbox diagonal
    kl_threshold: float = 0.1
    opacity_threshold: float = 0.005
    surface_threshold: float | None = None  # None -> 5% of template bbox diagonal
    interval: int = 100

    def resolved(self, template: ArticulatedTemplate) -> "DensifyConfig":
        diag = template.bbox_diagonal()
        cfg = DensifyConfig(**self.__dict__)
        if cfg.scale_threshold is None:
            cfg.scale_threshold = 0.01 * diag
        if cfg.surface_threshold is None:
            cfg.surface_threshold = 0.05 * diag
        for name in ("grad_threshold", "scale_threshold", "kl_threshold", "opacity_threshold", "surface_threshold"):
            if getattr(cfg, name) <= 0:
                raise ValueError(f"{name} must be positive")
        return cfg


@dataclass
class DensifyStats:
    grad_accum: np.ndarray
    count: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> "DensifyStats":
        return cls(np.zeros(n), np.zeros(n, dtype=np.int64))

    def add(self, grad_norm, mask) -> None:
        mask = np.asarray(mask, dtype=bool)
        self.grad_accum[mask] += np.asarray(grad_norm)[mask]
        self.count[mask] += 1

    def mean(self) -> np.ndarray:
        return np.where(self.count > 0, self.grad_accum / np.maximum(self.count, 1), 0.0)


@dataclass
class Action:
    kind: str  # split | clone | merge | prune
    indices: tuple


@dataclass
class DensifyResult:
    cloud: GaussianCloud
    actions: list
    source: np.ndarray  # for each new row, the old row it was derived from
    fresh: np.ndarray  # new rows that did not exist before (clone copies, split children, merges)
    counts: dict = field(default_factory=dict)


def kl_divergence(mu0, cov0, mu1, cov1) -> float:
    """KL(N0 || N1) between two 3D gaussians."""
    mu0, mu1 = np.asarray(mu0, dtype=np.float64), np.asarray(mu1, dtype=np.float64)
    cov0, cov1 = np.asarray(cov0, dtype=np.float64), np.asarray(cov1, dtype=np.float64)
    try:
        L0 = np.linalg.cholesky(cov0)
        L1 = np.linalg.cholesky(cov1)
    except np.linalg.LinAlgError as exc:
        raise ValueError("covariance is not positive definite") from exc
    inv1 = np.linalg.inv(cov1)
    d = mu1 - mu0
    logdet0 = 2 * np.log(np.diag(L0)).sum()
    logdet1 = 2 * np.log(np.diag(L1)).sum()
    return float(0.5 * (np.trace(inv1 @ cov0) + logdet1 - logdet0 + d @ inv1 @ d - 3))


def _kl_one_to_many(mu0, cov0, mus, covs):
    inv = np.linalg.inv(covs)
    d = mus - mu0
    _, ld0 = np.linalg.slogdet(cov0)
    _, ld1 = np.linalg.slogdet(covs)
    tr = np.einsum("nij,ji->n", inv, cov0)
    return 0.5 * (tr + ld1 - ld0 + np.einsum("ni,nij,nj->n", d, inv, d) - 3)


def split_gaussian(g: Gaussian, seed) -> tuple:
    """Two children drawn from the parent's own distribution with scale / 1.6.

    ``seed`` is anything ``numpy.random.default_rng`` accepts; callers pass
    (global seed, parent index) so children are reproducible per parent.
    """
    rng = np.random.default_rng(seed)
    R = quat_to_rotmat(normalize_rotation(g.rotation))
    samples = rng.normal(size=(2, 3)) * g.scale
    children = []
    for s in samples:
        children.append(
            Gaussian(g.mean + R @ s, g.log_scale - np.log(SPLIT_SCALE_DIVISOR), g.rotation.copy(), g.opacity_logit,
                     g.sh.copy())
        )
    return children[0], children[1]


def merge_gaussians(ga: Gaussian, gb: Gaussian) -> Gaussian:
    alpha = 0.5 * (sigmoid(ga.opacity_logit) + sigmoid(gb.opacity_logit))
    return Gaussian(
        0.5 * (ga.mean + gb.mean),
        ga.log_scale.copy(),
        ga.rotation.copy(),
        float(logit(alpha)),
        0.5 * (ga.sh + gb.sh),
    )


def densify_step(cloud: GaussianCloud, stats: DensifyStats, config: DensifyConfig, template: ArticulatedTemplate,
                 seed: int = 0, iteration: int = 0) -> DensifyResult:
    """One round of split/clone/merge/prune; every Gaussian takes part in at most one action."""
    cfg = config.resolved(template)
    n = len(cloud)
    if len(stats.grad_accum) != n:
        raise ValueError("densify stats are not aligned with the cloud")
    grad = stats.mean()
    max_scale = cloud.scales.max(axis=1) if n else np.zeros(0)
    _, surf_dist = nearest_template_vertices(cloud.means, template)

    prune = (cloud.opacities < cfg.opacity_threshold) | (surf_dist > cfg.surface_threshold)
    hot = (grad > cfg.grad_threshold) & ~prune
    split = hot & (max_scale > cfg.scale_threshold)
    clone_cand = np.flatnonzero(hot & (max_scale <= cfg.scale_threshold))

    covs = cloud.covariances() if n else np.zeros((0, 3, 3))
    merged_with = {}
    used = set()
    for pos, i in enumerate(clone_cand):
        if i in used:
            continue
        rest = np.array([j for j in clone_cand[pos + 1 :] if j not in used], dtype=np.int64)
        if len(rest):
            fwd = _kl_one_to_many(cloud.means[i], covs[i], cloud.means[rest], covs[rest])
            back = np.array([_kl_one_to_many(cloud.means[j], covs[j], cloud.means[i : i + 1], covs[i : i + 1])[0]
                             for j in rest[fwd < cfg.kl_threshold]])
            partners = rest[fwd < cfg.kl_threshold][back < cfg.kl_threshold] if len(back) else []
            if len(partners):
                j = int(partners[0])
                merged_with[int(i)] = j
                used.update((int(i), j))
                continue
        used.add(int(i))
    clone = np.zeros(n, bool)
    merge_second = np.zeros(n, bool)
    for i in clone_cand:
        if int(i) in merged_with:
            merge_second[merged_with[int(i)]] = True
        elif not any(int(i) == j for j in merged_with.values()):
            clone[i] = True

    actions = []
    rows, source, fresh = [], [], []
    rho_rows = []
    for i in range(n):
        if prune[i]:
            actions.append(Action("prune", (i,)))
            continue
        if merge_second[i]:
            continue
        g = cloud[i]
        if split[i]:
            a, b = split_gaussian(g, (seed, iteration, i))
            rows += [a, b]
            source += [i, i]
            fresh += [True, True]
            rho_rows += [cloud.rho[i]] * 2
            actions.append(Action("split", (i,)))
        elif i in merged_with:
            j = merged_with[i]
            rows.append(merge_gaussians(g, cloud[j]))
            source.append(i)
            fresh.append(True)
            rho_rows.append(cloud.rho[i])
            actions.append(Action("merge", (i, j)))
        else:
            rows.append(g)
            source.append(i)
            fresh.append(False)
            rho_rows.append(cloud.rho[i])
    # clones are appended after the survivors, in index order
    for i in np.flatnonzero(clone):
        rows.append(cloud[i])
        source.append(int(i))
        fresh.append(True)
        rho_rows.append(cloud.rho[i])
        actions.append(Action("clone", (int(i),)))

    new_cloud = GaussianCloud.from_gaussians(rows, rho=np.array(rho_rows), space=cloud.space)
    counts = {k: sum(a.kind == k for a in actions) for k in ("split", "clone", "merge", "prune")}
    return DensifyResult(new_cloud, actions, np.array(source, dtype=np.int64), np.array(fresh, dtype=bool), counts)


def write_actions_csv(path, iteration: int, actions, append: bool = True) -> None:
    path = Path(path)
    new = not path.exists() or not append
    with path.open("a" if append else "w", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(["iteration", "action", "indices"])
        for a in actions:
            w.writerow([iteration, a.kind, ";".join(str(i) for i in a.indices)])
