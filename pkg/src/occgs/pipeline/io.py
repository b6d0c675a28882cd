"""Dataset directories: PNG frames and masks plus a plain-text manifest."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from ..rasterizer.camera import Camera
from ..skinning import ArticulatedTemplate, Pose
from .synthetic import Dataset, Frame

MANIFEST = "manifest.txt"
TEMPLATE = "template.txt"


def save_png(path, rgb) -> None:
    Image.fromarray(np.round(np.clip(rgb, 0, 1) * 255).astype(np.uint8)).save(path)


def load_png(path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("RGB"), dtype=np.float64) / 255.0


def save_mask(path, mask) -> None:
    Image.fromarray(np.asarray(mask, dtype=np.uint8) * 255).save(path)


def load_mask(path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("L")) >= 128


def _floats(a) -> str:
    return ",".join(repr(float(x)) for x in np.ravel(a))


def _parse_floats(s: str) -> np.ndarray:
    return np.array([float(x) for x in s.split(",")])


def _frame_dir(root: Path, split: str) -> Path:
    return root if split == "train" else root / split


def save_dataset(dataset: Dataset, root) -> None:
    root = Path(root)
    lines = ["occgs-dataset 1", f"seed {dataset.seed}"]
    for split, frames in (("train", dataset.train), ("test", dataset.test)):
        d = _frame_dir(root, split)
        d.mkdir(parents=True, exist_ok=True)
        for f in frames:
            save_png(d / f"frame_{f.index:04d}.png", f.rgb)
            save_mask(d / f"mask_{f.index:04d}.png", f.mask)
            lines.append(
                f"{split} {f.index} occluded={int(f.occluded)} pose_index={f.pose_index} "
                f"camera={_floats(f.camera.to_vector())} translation={_floats(f.pose.translation)} "
                f"axis_angle={_floats(f.pose.axis_angle())}"
            )
    dataset.template.save(root / TEMPLATE)
    (root / MANIFEST).write_text("\n".join(lines) + "\n")


def load_dataset(root) -> Dataset:
    root = Path(root)
    rows = (root / MANIFEST).read_text().splitlines()
    if not rows or rows[0].strip() != "occgs-dataset 1":
        raise ValueError(f"{root / MANIFEST} is not a dataset manifest")
    seed = 0
    splits = {"train": [], "test": []}
    for line in rows[1:]:
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "seed":
            seed = int(parts[1])
            continue
        split, index = parts[0], int(parts[1])
        kv = dict(p.split("=", 1) for p in parts[2:])
        d = _frame_dir(root, split)
        pose = Pose.from_axis_angle(_parse_floats(kv["axis_angle"]).reshape(-1, 3), _parse_floats(kv["translation"]))
        splits[split].append(
            Frame(
                load_png(d / f"frame_{index:04d}.png"),
                load_mask(d / f"mask_{index:04d}.png"),
                pose,
                Camera.from_vector(_parse_floats(kv["camera"])),
                index,
                occluded=kv.get("occluded", "0") == "1",
                pose_index=int(kv.get("pose_index", -1)),
            )
        )
    return Dataset(splits["train"], splits["test"], ArticulatedTemplate.load(root / TEMPLATE), seed)
