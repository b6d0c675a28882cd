import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from occgs import diff
from occgs.gaussians import build_covariance, normalize_rotation, quat_to_rotmat
from occgs.skinning import (
    ArticulatedTemplate,
    JointTransforms,
    Pose,
    TemplateError,
    axis_angle_to_quat,
    blend_lbs_weights,
    cache_view_transforms,
    forward_kinematics,
    lbs_point,
    make_capsule_template,
    nearest_template_vertex,
    nearest_template_vertices,
    quat_multiply,
    refine_pose,
    skin_gaussian,
    skin_gaussians,
)


@pytest.fixture(scope="module")
def template():
    return make_capsule_template(200, seed=0)


def chain_template():
    verts = np.array([[0.0, 0, 0], [1.0, 0, 0]])
    return ArticulatedTemplate(verts, np.array([-1, 0]), np.array([[0.0, 0, 0], [1.0, 0, 0]]),
                               np.array([[1.0, 0.0], [0.0, 1.0]]))


def random_pose(rng, k, scale=0.6):
    return Pose.from_axis_angle(rng.normal(scale=scale, size=(k, 3)), rng.normal(scale=0.2, size=3))


def translations_only(ts):
    ts = np.asarray(ts, dtype=np.float64)
    return JointTransforms(np.tile(np.eye(3), (len(ts), 1, 1)), ts, ts)


def test_template_validation():
    verts = np.zeros((2, 3))
    joints = np.zeros((2, 3))
    with pytest.raises(TemplateError):
        ArticulatedTemplate(verts, np.array([-1, 0]), joints, np.array([[0.5, 0.4], [1.0, 0.0]]))
    with pytest.raises(TemplateError):
        ArticulatedTemplate(verts, np.array([1, 0]), joints, np.eye(2))
    with pytest.raises(TemplateError):
        ArticulatedTemplate(verts, np.array([-1, -1]), joints, np.eye(2))


def test_template_text_round_trip(template, tmp_path):
    template.save(tmp_path / "t.txt")
    back = ArticulatedTemplate.load(tmp_path / "t.txt")
    np.testing.assert_array_equal(back.rest_vertices, template.rest_vertices)
    np.testing.assert_array_equal(back.weights, template.weights)
    np.testing.assert_array_equal(back.parents, template.parents)


def test_identity_pose_is_identity(template):
    tr = forward_kinematics(template, Pose.identity(template.n_joints))
    np.testing.assert_allclose(tr.rotations, np.tile(np.eye(3), (template.n_joints, 1, 1)), atol=1e-15)
    np.testing.assert_allclose(tr.translations, 0.0, atol=1e-15)
    np.testing.assert_allclose(tr.posed_joints, template.joints, atol=1e-15)


def test_root_translation_shifts_all_joints(template):
    t = np.array([0.3, -0.2, 1.0])
    tr = forward_kinematics(template, Pose(Pose.identity(template.n_joints).rotations, t))
    np.testing.assert_allclose(tr.posed_joints, template.joints + t, atol=1e-14)


def test_two_joint_chain():
    aa = np.zeros((2, 3))
    aa[0] = [0, 0, np.pi / 2]
    tr = forward_kinematics(chain_template(), Pose.from_axis_angle(aa))
    np.testing.assert_allclose(tr.posed_joints[1] - tr.posed_joints[0], [0, 1, 0], atol=1e-12)


def test_fk_rotations_orthonormal(template):
    rng = np.random.default_rng(0)
    tr = forward_kinematics(template, random_pose(rng, template.n_joints))
    for R in tr.rotations:
        np.testing.assert_allclose(R @ R.T, np.eye(3), atol=1e-8)
        assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-8)


def test_lbs_point_examples():
    x = np.array([0.3, 0.1, -0.5])
    assert np.allclose(lbs_point(x, [1.0], translations_only([[0, 0, 0]])), x)
    np.testing.assert_allclose(lbs_point(x, [1.0], translations_only([[1, 2, 3]])), x + [1, 2, 3])
    t1, t2 = np.array([1.0, 0, 0]), np.array([0, 4.0, 2])
    np.testing.assert_allclose(lbs_point(x, [0.5, 0.5], translations_only([t1, t2])), x + (t1 + t2) / 2)
    with pytest.raises(ValueError):
        lbs_point(x, [0.5, 0.6], translations_only([t1, t2]))


def test_lbs_one_hot_equals_single_joint(template):
    rng = np.random.default_rng(1)
    tr = forward_kinematics(template, random_pose(rng, template.n_joints))
    x = rng.normal(size=3)
    for k in range(template.n_joints):
        w = np.zeros(template.n_joints)
        w[k] = 1.0
        np.testing.assert_array_equal(lbs_point(x, w, tr), tr.rotations[k] @ x + tr.translations[k])


def test_skin_gaussian_examples():
    rng = np.random.default_rng(2)
    mu = rng.normal(size=3)
    cov = build_covariance(np.exp(rng.normal(size=3) * 0.3), normalize_rotation(rng.normal(size=4)))
    m, c = skin_gaussian(mu, cov, [1.0], translations_only([[0, 0, 0]]))
    np.testing.assert_allclose(m, mu, atol=1e-15)
    np.testing.assert_allclose(c, cov, atol=1e-15)

    R = quat_to_rotmat(normalize_rotation(rng.normal(size=4)))
    tr = JointTransforms(R[None], np.zeros((1, 3)), np.zeros((1, 3)))
    _, c = skin_gaussian(mu, cov, [1.0], tr)
    np.testing.assert_allclose(c, R @ cov @ R.T, atol=1e-12)
    np.testing.assert_allclose(np.linalg.eigvalsh(c), np.linalg.eigvalsh(cov), atol=1e-8)

    R2 = quat_to_rotmat(normalize_rotation(rng.normal(size=4)))
    b = rng.normal(size=(2, 3))
    tr = JointTransforms(np.stack([R, R2]), b, b)
    m, c = skin_gaussian(mu, cov, [0.6, 0.4], tr)
    G = 0.6 * R + 0.4 * R2
    np.testing.assert_allclose(m, G @ mu + 0.6 * b[0] + 0.4 * b[1], atol=1e-10)
    np.testing.assert_allclose(c, G @ cov @ G.T, atol=1e-10)


def test_skin_then_inverse_round_trip():
    rng = np.random.default_rng(3)
    R = quat_to_rotmat(normalize_rotation(rng.normal(size=4)))
    b = rng.normal(size=3)
    mu = rng.normal(size=3)
    cov = build_covariance(np.exp(rng.normal(size=3) * 0.3), normalize_rotation(rng.normal(size=4)))
    fwd = JointTransforms(R[None], b[None], b[None])
    inv = JointTransforms(R.T[None], (-R.T @ b)[None], b[None])
    m, c = skin_gaussian(mu, cov, [1.0], fwd)
    m2, c2 = skin_gaussian(m, c, [1.0], inv)
    np.testing.assert_allclose(m2, mu, atol=1e-8)
    np.testing.assert_allclose(c2, cov, atol=1e-8)


def test_blend_weights_zero_offsets(template):
    w = template.weights
    np.testing.assert_allclose(blend_lbs_weights(w, np.zeros_like(w)), w, atol=1e-6)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31), st.floats(-5, 5), st.integers(0, 5))
def test_blend_weights_properties(seed, shift, k):
    rng = np.random.default_rng(seed)
    w = rng.uniform(0, 1, 6)
    off = rng.normal(size=6)
    out = blend_lbs_weights(w, off)
    assert np.all(out >= 0)
    assert out.sum() == pytest.approx(1.0, abs=1e-7)
    np.testing.assert_allclose(blend_lbs_weights(w, off + shift), out, atol=1e-9)
    bumped = off.copy()
    bumped[k] += 0.5
    assert blend_lbs_weights(w, bumped)[k] > out[k]


def test_refine_pose_examples():
    rng = np.random.default_rng(4)
    pose = random_pose(rng, 4)
    ident = np.tile([1.0, 0, 0, 0], (4, 1))
    np.testing.assert_allclose(refine_pose(pose, ident).rotations, pose.rotations, atol=1e-15)
    inv = pose.rotations * np.array([1, -1, -1, -1])
    out = refine_pose(pose, inv)
    np.testing.assert_allclose(np.abs(out.rotations[:, 0]), 1.0, atol=1e-12)
    np.testing.assert_array_equal(out.translation, pose.translation)
    axis = np.array([0.0, 0.6, 0.8])
    p30 = Pose(axis_angle_to_quat(np.radians(30) * axis)[None], np.zeros(3))
    out = refine_pose(p30, axis_angle_to_quat(np.radians(60) * axis)[None])
    np.testing.assert_allclose(out.rotations[0], axis_angle_to_quat(np.radians(90) * axis), atol=1e-12)
    with pytest.raises(ValueError):
        refine_pose(p30, ident)


def test_nearest_vertex(template):
    assert nearest_template_vertex(template.rest_vertices[7], template) == 7
    verts = np.array([[9.0, 9, 9], [9, 9, 8], [1.0, 0, 0], [5, 5, 5], [7, 7, 7], [-1.0, 0, 0]])
    t = ArticulatedTemplate(verts, np.array([-1]), np.zeros((1, 3)), np.ones((6, 1)))
    assert nearest_template_vertex([0, 0, 0], t) == 2
    rng = np.random.default_rng(5)
    big = make_capsule_template(500, seed=1)
    pts = rng.normal(scale=0.5, size=(50, 3))
    idx, dist = nearest_template_vertices(pts, big)
    for p, i, d in zip(pts, idx, dist):
        scan = np.sqrt(((big.rest_vertices - p) ** 2).sum(1))
        assert i == int(np.argmin(scan))
        assert d == scan[i]


def test_cache_identity_and_isolation(template):
    rng = np.random.default_rng(6)
    poses = [Pose.identity(template.n_joints), random_pose(rng, template.n_joints)]
    cache = cache_view_transforms(template.weights, template, poses)
    np.testing.assert_allclose(cache.R[0], np.tile(np.eye(3), (len(template.weights), 1, 1)), atol=1e-15)
    np.testing.assert_allclose(cache.T[0], 0.0, atol=1e-15)
    before = cache.apply(1, template.rest_vertices)
    cache.R[0] *= 2.0
    np.testing.assert_array_equal(cache.apply(1, template.rest_vertices), before)
    with pytest.raises(IndexError):
        cache.apply(2, template.rest_vertices)


def test_cache_equals_full_pipeline(template):
    rng = np.random.default_rng(7)
    n = len(template.rest_vertices)
    covs = build_covariance(np.exp(rng.normal(size=(n, 3)) * 0.2 - 3), normalize_rotation(rng.normal(size=(n, 4))))
    poses = [random_pose(rng, template.n_joints) for _ in range(5)]
    cache = cache_view_transforms(template.weights, template, poses)
    again = cache_view_transforms(template.weights, template, poses)
    np.testing.assert_array_equal(cache.R, again.R)
    for v, pose in enumerate(poses):
        m_ref, c_ref = skin_gaussians(template.rest_vertices, covs, template.weights, forward_kinematics(template, pose))
        m, c = cache.apply(v, template.rest_vertices, covs)
        np.testing.assert_allclose(m, m_ref, atol=1e-6)
        np.testing.assert_allclose(c, c_ref, atol=1e-6)


def test_torch_twins_match(template):
    rng = np.random.default_rng(8)
    pose = random_pose(rng, template.n_joints)
    tr = forward_kinematics(template, pose)
    G, b = diff.forward_kinematics(list(template.parents), torch.tensor(template.joints),
                                   torch.tensor(pose.rotations), torch.tensor(pose.translation))
    np.testing.assert_allclose(G.numpy(), tr.rotations, atol=1e-12)
    np.testing.assert_allclose(b.numpy(), tr.translations, atol=1e-12)
    aa = rng.normal(size=(6, 3))
    aa[0] = 0.0
    np.testing.assert_allclose(diff.axis_angle_to_quat(torch.tensor(aa)).numpy(), axis_angle_to_quat(aa), atol=1e-12)
    q1, q2 = rng.normal(size=(5, 4)), rng.normal(size=(5, 4))
    np.testing.assert_allclose(diff.quat_multiply(torch.tensor(q1), torch.tensor(q2)).numpy(), quat_multiply(q1, q2),
                               atol=1e-12)
    off = rng.normal(size=template.weights.shape)
    np.testing.assert_allclose(
        diff.blend_lbs_weights(torch.tensor(template.weights), torch.tensor(off)).numpy(),
        blend_lbs_weights(template.weights, off),
        atol=1e-12,
    )
