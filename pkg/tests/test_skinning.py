import math

import numpy as np
import pytest

from garmdyn.simulate import build_skirt_template
from garmdyn.skinning import (
    BodyModel,
    MotionFrame,
    SeedRig,
    SeedTransforms,
    canonicalize_quaternions,
    lbs_forward,
    lbs_inverse,
    quat_to_matrix,
    sample_seed_points,
    seed_transforms,
    skinning_weights,
)


def axis_quat(axis, angle):
    a = np.asarray(axis, dtype=float)
    a = a / np.linalg.norm(a)
    return np.array([math.cos(angle / 2), *(math.sin(angle / 2) * a)])


def identity_pose(n_joints=4):
    return MotionFrame(
        joint_rotations=np.tile([1.0, 0, 0, 0], (n_joints, 1)),
        root_translation=np.zeros(3),
    )


def make_rig(origins, bases=None):
    m = len(origins)
    bases = np.tile(np.eye(3), (m, 1, 1)) if bases is None else bases
    bary = np.zeros((m, 3))
    bary[:, 0] = 1.0
    return SeedRig(
        seed_faces=np.zeros(m, dtype=int),
        seed_bary=bary,
        canonical_origins=np.asarray(origins, dtype=float),
        canonical_bases=bases,
    )


def random_rotation(rng):
    q = rng.normal(size=4)
    return quat_to_matrix(q / np.linalg.norm(q))


# ---------------------------------------------------------------- weights

def test_single_seed_weights_all_one():
    rig = make_rig([[0.0, 0, 0]])
    w = skinning_weights(np.random.default_rng(0).normal(size=(10, 3)), rig)
    np.testing.assert_allclose(w, 1.0)


def test_equidistant_two_seeds_half_half():
    rig = make_rig([[1.0, 0, 0], [-1.0, 0, 0]])
    w = skinning_weights(np.array([[0.0, 5.0, 0.0]]), rig)
    np.testing.assert_allclose(w, [[0.5, 0.5]], atol=1e-12)


def test_softmax_weights_direct_evaluation():
    # distances 1 and 2 -> softmax(-1, -2) = (0.73106, 0.26894)
    rig = make_rig([[1.0, 0, 0], [-2.0, 0, 0]])
    w = skinning_weights(np.zeros((1, 3)), rig)
    np.testing.assert_allclose(w, [[0.73106, 0.26894]], atol=5e-6)


def test_weight_rows_on_simplex_random():
    rng = np.random.default_rng(1)
    rig = make_rig(rng.normal(size=(7, 3)))
    w = skinning_weights(rng.normal(size=(40, 3)) * 10, rig)
    assert w.min() >= 0
    np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-6)


# ---------------------------------------------------------------- seed sampling

def test_seed_m1_nearest_garment_centroid(capsule_body, skirt_template):
    rig = sample_seed_points(capsule_body, skirt_template, 1)
    centroid = skirt_template.vertices.mean(axis=0)
    d = np.linalg.norm(capsule_body.canonical_vertices - centroid, axis=1)
    np.testing.assert_allclose(
        rig.canonical_origins[0], capsule_body.canonical_vertices[np.argmin(d)]
    )


def test_seed_m2_farthest_point_property(capsule_body, skirt_template):
    rig = sample_seed_points(capsule_body, skirt_template, 2)
    # brute force: second seed maximizes distance to the first over candidates
    gv = skirt_template.vertices
    bv = capsule_body.canonical_vertices
    d_gb = np.sqrt(((gv[:, None, :] - bv[None, :, :]) ** 2).sum(-1))
    r_assoc = 1.5 * d_gb.min(axis=1).max()
    candidates = bv[d_gb.min(axis=0) <= r_assoc]
    dist_to_first = np.linalg.norm(candidates - rig.canonical_origins[0], axis=1)
    got = np.linalg.norm(rig.canonical_origins[1] - rig.canonical_origins[0])
    np.testing.assert_allclose(got, dist_to_first.max(), atol=1e-12)


def test_seed_m_equals_candidates_exhaustive(capsule_body, skirt_template):
    gv = skirt_template.vertices
    bv = capsule_body.canonical_vertices
    d_gb = np.sqrt(((gv[:, None, :] - bv[None, :, :]) ** 2).sum(-1))
    r_assoc = 1.5 * d_gb.min(axis=1).max()
    cand_idx = np.flatnonzero(d_gb.min(axis=0) <= r_assoc)
    rig = sample_seed_points(capsule_body, skirt_template, len(cand_idx))
    got = {tuple(np.round(o, 9)) for o in rig.canonical_origins}
    want = {tuple(np.round(bv[i], 9)) for i in cand_idx}
    assert got == want
    with pytest.raises(ValueError, match="exceeds"):
        sample_seed_points(capsule_body, skirt_template, len(cand_idx) + 1)


# ---------------------------------------------------------------- seed transforms

def test_seed_transforms_canonical_identity(capsule_body, skirt_template):
    rig = sample_seed_points(capsule_body, skirt_template, 8)
    tr = seed_transforms(rig, capsule_body, identity_pose())
    np.testing.assert_allclose(tr.rotations, np.tile(np.eye(3), (8, 1, 1)), atol=1e-9)
    np.testing.assert_allclose(tr.translations, 0.0, atol=1e-9)


def test_seed_transforms_rigid_translation(capsule_body, skirt_template):
    rig = sample_seed_points(capsule_body, skirt_template, 6)
    t = np.array([0.3, -0.2, 0.15])
    pose = MotionFrame(
        joint_rotations=np.tile([1.0, 0, 0, 0], (4, 1)), root_translation=t
    )
    tr = seed_transforms(rig, capsule_body, pose)
    np.testing.assert_allclose(tr.rotations, np.tile(np.eye(3), (6, 1, 1)), atol=1e-9)
    np.testing.assert_allclose(tr.translations, np.tile(t, (6, 1)), atol=1e-9)


def test_seed_transforms_rigid_rotation_point_map(capsule_body, skirt_template):
    # rotating the root rotates the whole 1-root-3-children skeleton rigidly
    rig = sample_seed_points(capsule_body, skirt_template, 6)
    angle = 0.7
    q = axis_quat([0, 0, 1], angle)
    rots = np.tile([1.0, 0, 0, 0], (4, 1))
    rots[0] = q
    pose = MotionFrame(joint_rotations=rots, root_translation=np.zeros(3))
    tr = seed_transforms(rig, capsule_body, pose)
    r0 = quat_to_matrix(q)
    root = capsule_body.joint_rest_positions[0]
    for k in range(6):
        np.testing.assert_allclose(tr.rotations[k], r0, atol=1e-9)
        # direct point-map oracle on the seed origin
        want = r0 @ (rig.canonical_origins[k] - root) + root
        got = tr.rotations[k] @ rig.canonical_origins[k] + tr.translations[k]
        np.testing.assert_allclose(got, want, atol=1e-9)


def test_seed_transform_validation_rejects_non_rotation():
    with pytest.raises(ValueError):
        SeedTransforms(rotations=np.array([np.eye(3) * 2]), translations=np.zeros((1, 3)))


# ---------------------------------------------------------------- LBS

def test_lbs_forward_identity():
    rng = np.random.default_rng(2)
    p = rng.normal(size=(15, 3))
    tr = SeedTransforms(rotations=np.tile(np.eye(3), (3, 1, 1)), translations=np.zeros((3, 3)))
    w = np.full((15, 3), 1.0 / 3.0)
    np.testing.assert_allclose(lbs_forward(p, w, tr), p, atol=1e-12)


def test_lbs_forward_single_seed_translation():
    p = np.random.default_rng(3).normal(size=(9, 3))
    t = np.array([1.0, 2.0, 3.0])
    tr = SeedTransforms(rotations=np.eye(3)[None], translations=t[None])
    w = np.ones((9, 1))
    np.testing.assert_allclose(lbs_forward(p, w, tr), p + t, atol=1e-12)


def test_lbs_forward_matrix_blend_hand_oracle():
    # seeds: identity and a 90-degree rotation about z, weights 0.5 / 0.5
    rz = quat_to_matrix(axis_quat([0, 0, 1], math.pi / 2))
    tr = SeedTransforms(
        rotations=np.stack([np.eye(3), rz]), translations=np.zeros((2, 3))
    )
    w = np.array([[0.5, 0.5]])
    p = np.array([[1.0, 0.0, 0.0]])
    blended = 0.5 * np.eye(3) + 0.5 * rz  # explicit 3x3 arithmetic
    np.testing.assert_allclose(lbs_forward(p, w, tr)[0], blended @ p[0], atol=1e-12)


def test_lbs_inverse_identity_and_translation():
    rng = np.random.default_rng(4)
    p = rng.normal(size=(11, 3))
    w = np.ones((11, 1))
    ident = SeedTransforms(rotations=np.eye(3)[None], translations=np.zeros((1, 3)))
    np.testing.assert_allclose(lbs_inverse(p, w, ident), p, atol=1e-12)
    t = np.array([0.4, -0.7, 2.0])
    shifted = SeedTransforms(rotations=np.eye(3)[None], translations=t[None])
    np.testing.assert_allclose(lbs_inverse(p, w, shifted), p - t, atol=1e-12)


def test_lbs_inverse_forward_roundtrip_random_rigs():
    rng = np.random.default_rng(5)
    for _ in range(50):
        m = rng.integers(2, 6)
        n = rng.integers(4, 20)
        rots = np.stack([random_rotation(rng) for _ in range(m)])
        trans = rng.uniform(-1, 1, size=(m, 3))
        tr = SeedTransforms(rotations=rots, translations=trans)
        w = rng.uniform(0.05, 1.0, size=(n, m))
        w /= w.sum(axis=1, keepdims=True)
        p = rng.normal(size=(n, 3))
        posed = lbs_forward(p, w, tr)
        lin = np.einsum("nm,mab->nab", w, rots)
        if np.linalg.cond(lin).max() >= 1e6:
            continue
        np.testing.assert_allclose(lbs_inverse(posed, w, tr), p, atol=1e-6)


def test_lbs_forward_rigid_equivariance():
    rng = np.random.default_rng(6)
    m, n = 4, 12
    rots = np.stack([random_rotation(rng) for _ in range(m)])
    trans = rng.uniform(-1, 1, size=(m, 3))
    w = rng.uniform(0.1, 1.0, size=(n, m))
    w /= w.sum(axis=1, keepdims=True)
    p = rng.normal(size=(n, 3))
    base = lbs_forward(p, w, SeedTransforms(rotations=rots, translations=trans))
    g_rot = random_rotation(rng)
    g_t = rng.normal(size=3)
    moved = lbs_forward(
        p, w,
        SeedTransforms(
            rotations=np.einsum("ab,mbc->mac", g_rot, rots),
            translations=(g_rot @ trans.T).T + g_t,
        ),
    )
    np.testing.assert_allclose(moved, (g_rot @ base.T).T + g_t, atol=1e-9)


def test_lbs_inverse_singular_names_vertex():
    # opposite 180-degree rotations blended 50/50 annihilate the linear part
    r1 = quat_to_matrix(axis_quat([0, 0, 1], math.pi))
    tr = SeedTransforms(rotations=np.stack([np.eye(3), r1]), translations=np.zeros((2, 3)))
    w = np.array([[0.5, 0.5]])
    p = np.array([[1.0, 2.0, 3.0]])
    with pytest.raises(ValueError, match="vertex 0"):
        lbs_inverse(p, w, tr)
    out = lbs_inverse(p, w, tr, allow_pseudo=True)
    assert np.isfinite(out).all()


def test_quaternion_canonicalization():
    q = np.array([[-0.5, 0.5, 0.5, 0.5], [0.5, -0.5, -0.5, -0.5]])
    out = canonicalize_quaternions(q)
    assert (out[:, 0] >= 0).all()
    np.testing.assert_allclose(quat_to_matrix(out[0]), quat_to_matrix(q[0]), atol=1e-12)


def test_motion_frame_rejects_unnormalized():
    with pytest.raises(ValueError):
        MotionFrame(joint_rotations=np.array([[1.0, 1.0, 0, 0]]), root_translation=np.zeros(3))
