"""Independent reference computations used as test oracles.

Nothing here imports the rasterizer's tiling or kernels: every pixel is
evaluated against every gaussian with one global depth sort.
"""

import numpy as np

from occgs.gaussians import GaussianCloud, eval_sh_raw, normalize_rotation, quat_to_rotmat

ALPHA_MIN = 1.0 / 255.0
T_MIN = 1e-4


def brute_force_render(cloud: GaussianCloud, camera):
    H, W = camera.height, camera.width
    color = np.zeros((H, W, 3))
    alpha = np.zeros((H, W))
    n = len(cloud)
    if n == 0:
        return color, alpha
    cam = cloud.means @ camera.W.T + camera.t
    keep = cam[:, 2] > 0.01
    R = quat_to_rotmat(normalize_rotation(cloud.rotations))
    S = np.exp(cloud.log_scales)
    covs = np.einsum("nij,nj,nkj->nik", R, S**2, R)
    center = -camera.W.T @ camera.t
    d = center - cloud.means
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    rgb = np.clip(eval_sh_raw(cloud.sh, d), 0, 1)
    opac = 1 / (1 + np.exp(-cloud.opacity_logits))

    mu2 = np.zeros((n, 2))
    inv2 = np.zeros((n, 2, 2))
    for i in range(n):
        if not keep[i]:
            continue
        x, y, z = cam[i]
        J = np.array([[camera.fx / z, 0, -camera.fx * x / z**2], [0, camera.fy / z, -camera.fy * y / z**2]])
        c2 = J @ camera.W @ covs[i] @ camera.W.T @ J.T + 0.3 * np.eye(2)
        if np.linalg.det(c2) <= 1e-12:
            keep[i] = False
            continue
        inv2[i] = np.linalg.inv(c2)
        mu2[i] = [camera.fx * x / z + camera.cx, camera.fy * y / z + camera.cy]
    ids = [i for i in sorted(range(n), key=lambda i: (cam[i, 2], i)) if keep[i]]
    ys, xs = np.mgrid[0:H, 0:W]
    pix = np.stack([xs, ys], -1).astype(float)
    T = np.ones((H, W))
    done = np.zeros((H, W), bool)
    for i in ids:
        dd = pix - mu2[i]
        q = np.einsum("hwi,ij,hwj->hw", dd, inv2[i], dd)
        a = opac[i] * np.exp(-0.5 * q)
        a = np.where((a >= ALPHA_MIN) & ~done, a, 0.0)
        color += rgb[i] * (a * T)[..., None]
        T = T * (1 - a)
        done |= T < T_MIN
    alpha = 1 - T
    return color, alpha


def brute_force_knn(query, points, k):
    """Full distance matrix, stable sort on (distance, index)."""
    query = np.asarray(query, dtype=np.float64)
    points = np.asarray(points, dtype=np.float64)
    idx = np.empty((len(query), k), dtype=np.int64)
    dist = np.empty((len(query), k))
    n = len(points)
    for r, q in enumerate(query):
        dq = np.sqrt(((points - q) ** 2).sum(-1))
        order = np.lexsort((np.arange(n), dq))
        if n >= k:
            sel = order[:k]
        else:
            sel = np.resize(order, k)
        idx[r] = sel
        dist[r] = dq[sel]
    return idx, dist


def central_difference(f, x, h=1e-4):
    """Gradient of scalar f at array x by central differences."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f(x)
        flat[i] = old - h
        fm = f(x)
        flat[i] = old
        gf[i] = (fp - fm) / (2 * h)
    return g


def random_cloud(rng, n, spread=1.0, depth=(2.5, 4.0), scale=(-2.6, -1.3), opacity=(-1.0, 2.5), sh_scale=0.3):
    means = np.column_stack([rng.uniform(-spread, spread, n), rng.uniform(-spread, spread, n), rng.uniform(*depth, n)])
    sh = rng.normal(0, sh_scale, (n, 3, 16))
    sh[:, :, 0] = rng.uniform(0.3, 3.0, (n, 3))
    return GaussianCloud(
        means,
        rng.uniform(*scale, (n, 3)),
        rng.normal(size=(n, 4)),
        rng.uniform(*opacity, n),
        sh,
    )
