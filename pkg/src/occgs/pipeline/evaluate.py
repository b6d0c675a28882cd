"""Held-out view evaluation."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .checkpoint import Checkpoint
from .protocol import Metrics, image_metrics


@dataclass
class EvalReport:
    keys: list
    per_frame: list  # Metrics
    mean: Metrics

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["view", "psnr", "ssim"])
            for k, m in zip(self.keys, self.per_frame):
                w.writerow([k, repr(m.psnr), repr(m.ssim)])
            w.writerow(["mean", repr(self.mean.psnr), repr(self.mean.ssim)])


def render_frame(checkpoint: Checkpoint, frame, split: str = "test", model=None):
    """Render through the cached transforms when the view was cached, else the full pipeline."""
    key = f"{split}/{frame.index:04d}"
    try:
        return checkpoint.render_view(checkpoint.view_index(key))[0]
    except KeyError:
        model = model or checkpoint.to_model()
        return model.render_plain(frame.pose, frame.camera)[0]


def evaluate(checkpoint: Checkpoint, frames, split: str = "test") -> EvalReport:
    """PSNR / SSIM of each rendered frame against its (unoccluded) image."""
    keys, per = [], []
    model = None
    for f in frames:
        key = f"{split}/{f.index:04d}"
        if model is None and key not in {v.key for v in checkpoint.views}:
            model = checkpoint.to_model()
        pred = render_frame(checkpoint, f, split, model)
        keys.append(key)
        per.append(image_metrics(pred, f.rgb))
    mean = Metrics(float(np.mean([m.psnr for m in per])), float(np.mean([m.ssim for m in per])))
    return EvalReport(keys, per, mean)
