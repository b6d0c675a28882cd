import numpy as np
import pytest
import torch
from scipy.signal import correlate2d
from hypothesis import given, settings
from hypothesis import strategies as st

from occgs.gaussians import SH_C0, GaussianCloud
from occgs.losses import (
    LossBreakdown,
    LossWeights,
    append_loss_csv,
    l_con,
    l_mask,
    l_occ,
    l_rgb,
    ssim,
    total_loss,
)
from occgs.rasterizer import Camera, project_covariance, render_subset, splat_alpha
from scenes import pipeline_fd_check, toy_frame

images = st.integers(0, 2**31).map(lambda s: np.random.default_rng(s).uniform(0, 1, (12, 12, 3)))


def test_l_rgb_examples():
    rng = np.random.default_rng(0)
    a = rng.uniform(size=(4, 4, 3))
    assert l_rgb(a, a) == 0
    assert l_rgb(np.full((4, 4, 3), 0.5), np.full((4, 4, 3), 0.75)) == pytest.approx(0.25)
    b = rng.uniform(size=(4, 4, 3))
    assert l_rgb(a, b) == pytest.approx(sum(abs(x - y) for x, y in zip(a.ravel(), b.ravel())) / a.size)
    with pytest.raises(ValueError):
        l_rgb(a, b[:3])


def test_l_mask_examples():
    rng = np.random.default_rng(1)
    m = (rng.uniform(size=(5, 5)) > 0.5).astype(float)
    assert l_mask(m, m) == 0
    assert l_mask(np.full((5, 5), 0.5), np.ones((5, 5))) == pytest.approx(0.25)
    a = rng.uniform(size=(5, 5))
    assert l_mask(a, m) == pytest.approx(sum((x - y) ** 2 for x, y in zip(a.ravel(), m.ravel())) / 25)
    with pytest.raises(ValueError):
        l_mask(a, m[:4])


def test_l_occ_examples():
    occ = np.array([[0, 1, 1, 0], [0, 1, 0, 0], [1, 1, 0, 0], [0, 0, 0, 1]], float)
    assert l_occ(occ, occ) == 0
    a = np.random.default_rng(2).uniform(size=(4, 4))
    assert l_occ(a, np.zeros((4, 4))) == pytest.approx(np.mean(a**2))
    r = np.array([[0.5, 1, 0, 0], [0, 0.25, 0, 0], [1, 1, 0, 0], [0, 0, 0.5, 1]])
    expected = (0.25 + 0 + 1 + 0 + 0 + 0.5625 + 0 + 0 + 0 + 0 + 0 + 0 + 0 + 0 + 0.25 + 0) / 16
    assert l_occ(r, occ) == pytest.approx(expected)


def test_ssim_examples():
    rng = np.random.default_rng(3)
    a = rng.uniform(size=(16, 16, 3))
    assert ssim(a, a) == pytest.approx(1.0, abs=1e-9)
    assert ssim(np.zeros((16, 16)), np.ones((16, 16))) < 0.01
    board = (np.indices((16, 16)).sum(0) % 2).astype(float)
    assert ssim(board, 1 - board) < 0
    with pytest.raises(ValueError):
        ssim(np.zeros((8, 8)), np.zeros((8, 8)))


def direct_ssim(a, b):
    # full 11x11 window, no separability, one channel at a time
    x = np.arange(11) - 5
    g = np.exp(-(x**2) / (2 * 1.5**2))
    win = np.outer(g, g) / g.sum() ** 2
    maps = []
    for c in range(a.shape[-1]):
        f = lambda z: correlate2d(z, win, mode="valid")  # noqa: E731
        X, Y = a[..., c], b[..., c]
        mx, my = f(X), f(Y)
        sxx, syy, sxy = f(X * X) - mx**2, f(Y * Y) - my**2, f(X * Y) - mx * my
        maps.append((2 * mx * my + 1e-4) * (2 * sxy + 9e-4) / ((mx**2 + my**2 + 1e-4) * (sxx + syy + 9e-4)))
    return np.mean(maps)


def test_ssim_matches_direct_window():
    rng = np.random.default_rng(6)
    a, b = rng.uniform(size=(20, 17, 3)), rng.uniform(size=(20, 17, 3))
    assert ssim(a, b) == pytest.approx(direct_ssim(a, b), abs=1e-12)
    assert ssim(a[..., 0], b[..., 0]) == pytest.approx(direct_ssim(a[..., :1], b[..., :1]), abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(images, images)
def test_ssim_symmetric_and_bounded(a, b):
    s = ssim(a, b)
    assert s == pytest.approx(ssim(b, a), abs=1e-9)
    assert -1 <= s <= 1


def test_l_con_examples():
    z = np.zeros((6, 6))
    assert l_con(np.zeros((6, 6, 3)), z, np.zeros((6, 6, 3)), z) == 0
    rng = np.random.default_rng(4)
    c, a = rng.uniform(size=(6, 6, 3)), rng.uniform(size=(6, 6))
    assert l_con(c, a, c, a) == 0
    # mismatch outside the ground-truth foreground is not charged to the color term
    m = np.zeros((6, 6))
    m[:, :3] = 1
    assert l_con(c, m, np.where(m[..., None] > 0, c, 0.3), m) == 0


def test_l_con_two_gaussian_scene_by_hand():
    camera = Camera(10, 10, 3.5, 3.5, 8, 8)
    sh = np.zeros((2, 3, 16))
    sh[0, :, 0] = np.array([0.9, 0.2, 0.1]) / SH_C0
    sh[1, :, 0] = np.array([0.1, 0.8, 0.3]) / SH_C0
    cloud = GaussianCloud(np.array([[0.1, 0.0, 3.0], [-0.2, 0.1, 2.5]]), np.full((2, 3), -1.2),
                          np.tile([1.0, 0, 0, 0], (2, 1)), np.array([np.log(0.01 / 0.99), 2.0]), sh)
    low = np.flatnonzero(cloud.opacities < 0.05)
    assert list(low) == [0]
    out = render_subset(cloud, low, camera)
    rng = np.random.default_rng(5)
    gt = rng.uniform(size=(8, 8, 3))
    mask = (rng.uniform(size=(8, 8)) > 0.4).astype(float)

    # compose the single low-opacity splat by hand
    mu = np.array([10 * 0.1 / 3 + 3.5, 3.5])
    cov2 = project_covariance(camera, np.exp(-2.4) * np.eye(3), cloud.means[0])
    color = np.zeros((8, 8, 3))
    alpha = np.zeros((8, 8))
    for y in range(8):
        for x in range(8):
            a = splat_alpha(0.01, mu, cov2, [x, y])
            color[y, x] = a * np.array([0.9, 0.2, 0.1])
            alpha[y, x] = a
    np.testing.assert_allclose(out.color, color, atol=1e-12)
    expected = np.mean(np.abs(color - gt) * mask[..., None]) + 0.1 * np.mean((alpha - mask) ** 2)
    assert l_con(out.color, out.alpha, gt, mask) == pytest.approx(expected, rel=1e-12)


def test_total_loss_examples():
    assert total_loss(0, 0, 0, 0, 0) == 0
    assert total_loss(1, 0, 0, 0, 0) == 1
    assert total_loss(0.2, 0.1, 0.3, 0.4, 0.05) == pytest.approx(0.33, abs=1e-12)
    b = LossBreakdown(0.2, 0.1, 0.3, 0.4, 0.05, total=0.33)
    assert b.recompute_total(LossWeights()) == pytest.approx(b.total, abs=1e-9)
    with pytest.raises(ValueError):
        LossWeights(mask=-0.1)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 2), min_size=5, max_size=5), st.integers(0, 4), st.floats(1e-3, 1))
def test_total_loss_monotone(parts, i, bump):
    base = total_loss(*parts)
    assert base >= 0
    more = list(parts)
    more[i] += bump
    assert total_loss(*more) > base


@settings(max_examples=30, deadline=None)
@given(images, images)
def test_losses_nonnegative_and_zero_at_truth(a, b):
    m = a[..., 0] > 0.5
    for loss, x, y in ((l_rgb, a, b), (l_mask, a[..., 0], m), (l_occ, a[..., 1], m)):
        assert loss(x, y) >= 0
        assert loss(y, y) == 0
    assert 0 <= 1 - ssim(a, b) <= 2
    assert l_con(a, a[..., 0], b, m) >= 0


def test_torch_inputs_keep_gradients():
    a = torch.rand(12, 12, 3, dtype=torch.float64, requires_grad=True)
    b = torch.rand(12, 12, 3, dtype=torch.float64)
    loss = l_rgb(a, b) + l_mask(a[..., 0], b[..., 0]) + (1 - ssim(a, b)) + l_con(a, a[..., 1], b, b[..., 2])
    loss.backward()
    assert torch.isfinite(a.grad).all() and a.grad.abs().sum() > 0


def test_loss_csv(tmp_path):
    path = tmp_path / "loss.csv"
    append_loss_csv(path, 0, LossBreakdown(0.1, 0.2, 0.3, 0.4, 0.5, 0.6))
    append_loss_csv(path, 1, LossBreakdown(0.1, 0.2, 0.3, 0.4, 0.5, 0.7))
    lines = path.read_text().splitlines()
    assert lines[0] == "iteration,rgb,mask,ssim,occ,con,total"
    assert lines[2].split(",")[-1] == "0.7"


@pytest.mark.parametrize("seed", [0, 1])
def test_total_loss_gradients_through_pipeline(seed):
    model, ctx, cfg, sel = toy_frame(seed)
    assert len(sel.occluded) and len(sel.seen)
    passed, checked = pipeline_fd_check(model, ctx, cfg, sel, np.random.default_rng(seed))
    assert passed / checked >= 0.95


def test_total_loss_gradients_with_ssim_term():
    model, ctx, cfg, sel = toy_frame(5, n=6, size=16, ssim=True)
    passed, checked = pipeline_fd_check(model, ctx, cfg, sel, np.random.default_rng(5))
    assert passed / checked >= 0.95
