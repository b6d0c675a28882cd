"""Z-buffered triangle rasterizer for ground-truth frames.

Deliberately shares no code with the gaussian rasterizer so the supervision
is renderer-independent.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from ..rasterizer.camera import Camera


@njit(cache=True)
def _raster_triangles(sx, sy, invz, attr, tris, width, height, depth, out_attr, out_hit):
    for t in range(tris.shape[0]):
        i0, i1, i2 = tris[t, 0], tris[t, 1], tris[t, 2]
        if invz[i0] <= 0 or invz[i1] <= 0 or invz[i2] <= 0:
            continue
        x0, y0, x1, y1, x2, y2 = sx[i0], sy[i0], sx[i1], sy[i1], sx[i2], sy[i2]
        area = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
        if abs(area) < 1e-12:
            continue
        xmin = max(int(np.ceil(min(x0, x1, x2))), 0)
        xmax = min(int(np.floor(max(x0, x1, x2))), width - 1)
        ymin = max(int(np.ceil(min(y0, y1, y2))), 0)
        ymax = min(int(np.floor(max(y0, y1, y2))), height - 1)
        for py in range(ymin, ymax + 1):
            for px in range(xmin, xmax + 1):
                w0 = ((x1 - px) * (y2 - py) - (x2 - px) * (y1 - py)) / area
                w1 = ((x2 - px) * (y0 - py) - (x0 - px) * (y2 - py)) / area
                w2 = 1.0 - w0 - w1
                if w0 < 0 or w1 < 0 or w2 < 0:
                    continue
                iz = w0 * invz[i0] + w1 * invz[i1] + w2 * invz[i2]
                if iz <= depth[py, px]:
                    continue
                depth[py, px] = iz
                # perspective-correct attribute interpolation
                p0 = w0 * invz[i0] / iz
                p1 = w1 * invz[i1] / iz
                p2 = w2 * invz[i2] / iz
                for c in range(attr.shape[1]):
                    out_attr[py, px, c] = p0 * attr[i0, c] + p1 * attr[i1, c] + p2 * attr[i2, c]
                out_hit[py, px] = True


def rasterize_mesh(vertices, triangles, attributes, camera: Camera, supersample: int = 1):
    """Visible-surface attributes per pixel.

    Returns (attributes (H,W,A) at ``supersample`` x resolution, hit mask).
    Pixel centers sit at integer coordinates of the output grid.
    """
    s = supersample
    cam = camera.to_camera(vertices)
    z = cam[:, 2]
    invz = np.where(z > 1e-6, 1.0 / np.where(z > 1e-6, z, 1.0), -1.0)
    # sub-pixel (i, j) of pixel p sits at p + (i + 0.5) / s - 0.5
    sx = ((camera.fx * cam[:, 0] * invz + camera.cx) + 0.5) * s - 0.5
    sy = ((camera.fy * cam[:, 1] * invz + camera.cy) + 0.5) * s - 0.5
    H, W = camera.height * s, camera.width * s
    depth = np.zeros((H, W))
    attr = np.ascontiguousarray(attributes, dtype=np.float64)
    out = np.zeros((H, W, attr.shape[1]))
    hit = np.zeros((H, W), dtype=np.bool_)
    _raster_triangles(sx, sy, invz, attr, np.ascontiguousarray(triangles, dtype=np.int64), W, H, depth, out, hit)
    return out, hit


def box_downsample(img, s: int):
    if s == 1:
        return img
    H, W = img.shape[0] // s, img.shape[1] // s
    return img.reshape(H, s, W, s, *img.shape[2:]).mean(axis=(1, 3))
