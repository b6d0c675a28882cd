"""Single-file binary checkpoint. The byte layout is described in docs/checkpoint_format.md."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from ..gaussians import GaussianCloud, eval_sh_raw, sigmoid
from ..rasterizer.camera import Camera
from ..rasterizer.core import TILE, rasterize
from ..skinning import ArticulatedTemplate, Pose, ViewTransformCache

MAGIC = b"OCGS"
VERSION = 1
HEADER = struct.Struct("<4sHHI")
ENTRY = struct.Struct("<32s2sH4IQQ")
DTYPES = {b"f4": np.dtype("<f4"), b"i4": np.dtype("<i4"), b"u1": np.dtype("u1")}
CLOUD_KEYS = ("means", "log_scales", "rotations", "opacity_logits", "sh")


class CheckpointError(ValueError):
    pass


def as_f32(a) -> np.ndarray:
    """Round to the nearest float32 but keep float64 storage."""
    return np.asarray(a, dtype=np.float32).astype(np.float64)


@dataclass
class View:
    key: str
    camera: Camera
    pose: Pose


@dataclass
class Checkpoint:
    cloud: GaussianCloud  # canonical, with rho
    networks: dict  # parameter name -> array
    nearest: np.ndarray  # template vertex supplying each gaussian's base weights
    cache: ViewTransformCache
    views: list
    template: ArticulatedTemplate
    config_text: str
    iteration: int

    @classmethod
    def from_model(cls, model, keys, poses, cameras, config_text: str, iteration: int) -> "Checkpoint":
        """Snapshot a model. Everything stored as float32 is rounded first, so reloads are exact."""
        m = model.copy()
        with torch.no_grad():
            for p in m.params.values():
                p.copy_(torch.from_numpy(as_f32(p.detach().numpy())))
            for p in m.network_params().values():
                p.copy_(torch.from_numpy(as_f32(p.detach().numpy())))
        m.rho = as_f32(m.rho)
        cache = m.view_cache(poses)
        cache = ViewTransformCache(as_f32(cache.R), as_f32(cache.T))
        nets = {k: p.detach().numpy().copy() for k, p in m.network_params().items()}
        views = [View(k, c, p) for k, c, p in zip(keys, cameras, poses)]
        return cls(m.cloud(), nets, m.nearest.copy(), cache, views, m.template, config_text, int(iteration))

    # --- rendering -------------------------------------------------------------

    def view_index(self, key: str) -> int:
        for i, v in enumerate(self.views):
            if v.key == key:
                return i
        raise KeyError(f"no cached view {key!r}")

    def posed(self, view: int):
        return self.cache.apply(view, self.cloud.means, self.cloud.covariances())

    def render_view(self, view: int, tile: int = TILE):
        """(color (H, W, 3), alpha (H, W)) from the cached transforms of one view."""
        cam = self.views[view].camera
        means, covs = self.posed(view)
        d = cam.center - means
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        colors = np.clip(eval_sh_raw(self.cloud.sh, d), 0.0, 1.0)
        color, alpha, _ = rasterize(means, covs, colors, sigmoid(self.cloud.opacity_logits), cam, tile)
        return color, alpha

    def to_model(self):
        """Rebuild the trainable model, for the uncached full pipeline."""
        from .config import config_from_text
        from .model import OccModel

        model = OccModel(self.template, self.cloud, config_from_text(self.config_text))
        with torch.no_grad():
            for k, p in model.network_params().items():
                p.copy_(torch.from_numpy(self.networks[k]))
        model.nearest = self.nearest.copy()
        return model

    # --- serialization ------------------------------------------------------------

    def _sections(self) -> list:
        secs = [(f"cloud.{k}", getattr(self.cloud, k)) for k in CLOUD_KEYS]
        secs.append(("cloud.rho", self.cloud.rho))
        secs.append(("lbs.nearest", np.asarray(self.nearest, dtype=np.int32)))
        secs += [(f"net.{k}", v) for k, v in sorted(self.networks.items())]
        secs += [("cache.R", self.cache.R), ("cache.T", self.cache.T)]
        views = "".join(
            f"{v.key} " + " ".join(repr(float(x)) for x in np.concatenate([v.camera.to_vector(), v.pose.rotations.ravel(),
                                                                             v.pose.translation])) + "\n"
            for v in self.views
        )
        secs.append(("views", np.frombuffer(views.encode(), dtype=np.uint8)))
        secs.append(("template", np.frombuffer(self.template.to_text().encode(), dtype=np.uint8)))
        secs.append(("config", np.frombuffer(self.config_text.encode(), dtype=np.uint8)))
        secs.append(("iteration", np.array([self.iteration], dtype=np.int32)))
        return secs

    def save(self, path) -> None:
        secs = []
        for name, arr in self._sections():
            arr = np.asarray(arr)
            if arr.dtype == np.uint8:
                code = b"u1"
            elif np.issubdtype(arr.dtype, np.integer):
                code = b"i4"
            else:
                code = b"f4"
            data = np.ascontiguousarray(arr, dtype=DTYPES[code]).tobytes()
            if arr.ndim > 4:
                raise CheckpointError(f"section {name} has more than 4 dimensions")
            secs.append((name, code, arr.shape, data))
        offset = HEADER.size + ENTRY.size * len(secs)
        table, blobs = [], []
        for name, code, shape, data in secs:
            offset += -offset % 8
            dims = list(shape) + [0] * (4 - len(shape))
            table.append(ENTRY.pack(name.encode(), code, len(shape), *dims, offset, len(data)))
            blobs.append((offset, data))
            offset += len(data)
        buf = bytearray(offset)
        buf[: HEADER.size] = HEADER.pack(MAGIC, VERSION, 0, len(secs))
        pos = HEADER.size
        for entry in table:
            buf[pos : pos + ENTRY.size] = entry
            pos += ENTRY.size
        for off, data in blobs:
            buf[off : off + len(data)] = data
        Path(path).write_bytes(bytes(buf))

    @staticmethod
    def read_sections(path) -> dict:
        raw = Path(path).read_bytes()
        if len(raw) < HEADER.size:
            raise CheckpointError("file too short")
        magic, version, _, n = HEADER.unpack_from(raw, 0)
        if magic != MAGIC:
            raise CheckpointError("not an occgs checkpoint")
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        out = {}
        for i in range(n):
            name, code, ndim, d0, d1, d2, d3, off, nbytes = ENTRY.unpack_from(raw, HEADER.size + i * ENTRY.size)
            shape = (d0, d1, d2, d3)[:ndim]
            if off + nbytes > len(raw):
                raise CheckpointError("section runs past the end of the file")
            arr = np.frombuffer(raw, dtype=DTYPES[code], count=nbytes // DTYPES[code].itemsize, offset=off)
            out[name.rstrip(b"\0").decode()] = arr.reshape(shape)
        return out

    @classmethod
    def load(cls, path) -> "Checkpoint":
        s = cls.read_sections(path)
        f64 = lambda k: s[k].astype(np.float64)  # noqa: E731
        cloud = GaussianCloud(rho=f64("cloud.rho"), **{k: f64(f"cloud.{k}") for k in CLOUD_KEYS})
        nets = {k[4:]: f64(k) for k in s if k.startswith("net.")}
        views = []
        for line in bytes(s["views"]).decode().splitlines():
            key, *vals = line.split()
            v = np.array([float(x) for x in vals])
            k = (len(v) - 21) // 4
            views.append(View(key, Camera.from_vector(v[:18]), Pose(v[18 : 18 + 4 * k].reshape(k, 4), v[18 + 4 * k :])))
        return cls(
            cloud,
            nets,
            s["lbs.nearest"].astype(np.int64),
            ViewTransformCache(f64("cache.R"), f64("cache.T")),
            views,
            ArticulatedTemplate.from_text(bytes(s["template"]).decode()),
            bytes(s["config"]).decode(),
            int(s["iteration"][0]),
        )
