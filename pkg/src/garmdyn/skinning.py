"""Seed-point skinning on an articulated body.

Seed points are sampled on the body surface near the garment; each
carries a rigid tangent frame rebuilt on the posed surface every frame.
Garment vertices blend the seeds' rigid transforms with distance-softmax
weights, and the inverse of the blended affine maps posed garments back
toward canonical space -- the supervision target for the unposed-shape
decoder.

Weights are computed once on the garment template in the canonical pose
(the template is the only canonical geometry available before decoding),
so distances are in meters and mesh scale must be metric.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from garmdyn.validation import (
    check_array,
    check_faces,
    check_positions,
    check_simplex_rows,
    check_unit_rows,
)

__all__ = [
    "BodyModel",
    "MotionFrame",
    "SeedRig",
    "SeedTransforms",
    "quat_to_matrix",
    "canonicalize_quaternions",
    "sample_seed_points",
    "skinning_weights",
    "seed_transforms",
    "lbs_forward",
    "lbs_inverse",
]


def quat_to_matrix(q):
    """Rotation matrices (..., 3, 3) from unit quaternions (..., 4) in (w, x, y, z)."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    m = np.empty(q.shape[:-1] + (3, 3), dtype=np.float64)
    m[..., 0, 0] = 1 - 2 * (y * y + z * z)
    m[..., 0, 1] = 2 * (x * y - w * z)
    m[..., 0, 2] = 2 * (x * z + w * y)
    m[..., 1, 0] = 2 * (x * y + w * z)
    m[..., 1, 1] = 1 - 2 * (x * x + z * z)
    m[..., 1, 2] = 2 * (y * z - w * x)
    m[..., 2, 0] = 2 * (x * z - w * y)
    m[..., 2, 1] = 2 * (y * z + w * x)
    m[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return m


def canonicalize_quaternions(q):
    """Flip quaternion signs so w >= 0, keeping the rotation chart continuous."""
    q = np.asarray(q, dtype=np.float64).copy()
    flip = q[..., 0] < 0
    q[flip] = -q[flip]
    return q


@dataclass
class MotionFrame:
    """One frame of body motion: per-joint local rotations + root translation."""

    joint_rotations: np.ndarray  # (J, 4) unit quaternions, (w, x, y, z)
    root_translation: np.ndarray  # (3,) meters

    def __post_init__(self):
        self.joint_rotations = check_unit_rows(self.joint_rotations, "joint_rotations")
        self.root_translation = check_array(self.root_translation, "root_translation", shape=(3,))

    def flat(self):
        """Flattened network input: canonicalized quaternions then translation."""
        q = canonicalize_quaternions(self.joint_rotations)
        return np.concatenate([q.ravel(), self.root_translation])


@dataclass
class BodyModel:
    """Articulated body: canonical surface, joint tree, per-vertex joint weights."""

    canonical_vertices: np.ndarray  # (nb, 3)
    faces: np.ndarray  # (fb, 3)
    joint_parents: np.ndarray  # (J,) int, -1 for root
    joint_rest_positions: np.ndarray  # (J, 3) global rest positions
    joint_skinning_weights: np.ndarray  # (nb, J) simplex rows

    def __post_init__(self):
        self.canonical_vertices = check_positions(self.canonical_vertices, "canonical_vertices")
        self.faces = check_faces(self.faces, self.canonical_vertices.shape[0])
        self.joint_parents = np.asarray(self.joint_parents, dtype=np.int64)
        self.joint_rest_positions = check_array(
            self.joint_rest_positions, "joint_rest_positions", shape=(self.n_joints, 3)
        )
        self.joint_skinning_weights = check_simplex_rows(
            self.joint_skinning_weights, "joint_skinning_weights"
        )

    @property
    def n_joints(self):
        return self.joint_parents.shape[0]

    def forward_kinematics(self, pose: MotionFrame):
        """Global joint rotations (J, 3, 3) and positions (J, 3) for a pose."""
        local = quat_to_matrix(pose.joint_rotations)
        J = self.n_joints
        rot = np.empty((J, 3, 3))
        pos = np.empty((J, 3))
        for j in range(J):
            p = self.joint_parents[j]
            if p < 0:
                rot[j] = local[j]
                pos[j] = self.joint_rest_positions[j] + pose.root_translation
            else:
                rot[j] = rot[p] @ local[j]
                pos[j] = pos[p] + rot[p] @ (
                    self.joint_rest_positions[j] - self.joint_rest_positions[p]
                )
        return rot, pos

    def pose_vertices(self, pose: MotionFrame):
        """Posed surface via linear blend skinning over the joint tree."""
        rot, pos = self.forward_kinematics(pose)
        v = self.canonical_vertices
        local = v[:, None, :] - self.joint_rest_positions[None, :, :]  # (nb, J, 3)
        moved = np.einsum("jab,njb->nja", rot, local) + pos[None, :, :]
        return np.einsum("nj,nja->na", self.joint_skinning_weights, moved)


@dataclass
class SeedTransforms:
    """Per-seed rigid transforms relative to the canonical pose."""

    rotations: np.ndarray  # (m, 3, 3)
    translations: np.ndarray  # (m, 3)

    def __post_init__(self):
        self.rotations = check_array(self.rotations, "rotations", shape=(None, 3, 3))
        self.translations = check_array(
            self.translations, "translations", shape=(self.rotations.shape[0], 3)
        )
        eye = np.eye(3)
        rtr = np.einsum("mij,mik->mjk", self.rotations, self.rotations)
        if not np.allclose(rtr, eye, atol=1e-6):
            raise ValueError("seed rotations are not orthonormal to 1e-6")
        if np.any(np.linalg.det(self.rotations) < 0):
            raise ValueError("seed rotations must have determinant +1")

    @property
    def m(self):
        return self.rotations.shape[0]


def _face_frame(vertices, face, bary):
    """(origin, basis) tangent frame of a face point; None if degenerate."""
    tri = vertices[face]
    origin = bary @ tri
    e01 = tri[1] - tri[0]
    normal = np.cross(e01, tri[2] - tri[0])
    nn = np.linalg.norm(normal)
    le = np.linalg.norm(e01)
    if nn < 1e-14 or le < 1e-14:
        return None
    n = normal / nn
    e1 = e01 / le
    e2 = np.cross(n, e1)
    return origin, np.stack([e1, e2, n], axis=1)  # columns are the frame axes


@dataclass
class SeedRig:
    """Body-surface seed points with canonical frames and garment weights."""

    seed_faces: np.ndarray  # (m,) body face index per seed
    seed_bary: np.ndarray  # (m, 3) barycentric coordinates on that face
    canonical_origins: np.ndarray  # (m, 3)
    canonical_bases: np.ndarray  # (m, 3, 3), orthonormal columns
    weights: np.ndarray | None = None  # (n, m) simplex rows, filled once per template

    def __post_init__(self):
        self.seed_faces = np.asarray(self.seed_faces, dtype=np.int64)
        self.seed_bary = check_simplex_rows(self.seed_bary, "seed_bary")
        self.canonical_origins = check_positions(self.canonical_origins, "canonical_origins")
        self.canonical_bases = check_array(
            self.canonical_bases, "canonical_bases", shape=(self.m, 3, 3)
        )
        btb = np.einsum("mij,mik->mjk", self.canonical_bases, self.canonical_bases)
        if not np.allclose(btb, np.eye(3), atol=1e-6):
            raise ValueError("canonical frame bases are not orthonormal to 1e-6")
        if self.weights is not None:
            self.weights = check_simplex_rows(self.weights, "weights")

    @property
    def m(self):
        return self.seed_faces.shape[0]


def sample_seed_points(body: BodyModel, template, m, r_assoc=None):
    """Farthest-point sample ``m`` seeds from body vertices near the garment.

    Candidates are body vertices within ``r_assoc`` of any template vertex
    (default 1.5x the maximum canonical garment-to-body distance). The
    first seed is the candidate nearest the garment centroid; the rest
    maximize the minimum distance to already chosen seeds.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    bv = body.canonical_vertices
    gv = template.vertices
    # distance from each garment vertex to its closest body vertex
    d_gb = np.sqrt(((gv[:, None, :] - bv[None, :, :]) ** 2).sum(-1))
    if r_assoc is None:
        r_assoc = 1.5 * float(d_gb.min(axis=1).max())
    candidates = np.flatnonzero(d_gb.min(axis=0) <= r_assoc)
    if candidates.size == 0:
        raise ValueError("no body vertices within association radius of the garment")
    if m > candidates.size:
        raise ValueError(f"m={m} exceeds {candidates.size} candidate body vertices")

    cpos = bv[candidates]
    centroid = gv.mean(axis=0)
    chosen = [int(np.argmin(np.linalg.norm(cpos - centroid, axis=1)))]
    min_d = np.linalg.norm(cpos - cpos[chosen[0]], axis=1)
    for _ in range(1, m):
        nxt = int(np.argmax(min_d))
        chosen.append(nxt)
        min_d = np.minimum(min_d, np.linalg.norm(cpos - cpos[nxt], axis=1))
    seed_vertices = candidates[np.array(chosen)]

    # attach each seed vertex to its lowest-index incident face, one-hot barycentric
    faces = np.asarray(body.faces)
    seed_faces = np.empty(m, dtype=np.int64)
    seed_bary = np.zeros((m, 3))
    for k, sv in enumerate(seed_vertices):
        hits = np.argwhere(faces == sv)
        if hits.size == 0:
            raise ValueError(f"body vertex {sv} belongs to no face")
        fi, corner = hits[0]
        seed_faces[k] = fi
        seed_bary[k, corner] = 1.0

    origins = np.empty((m, 3))
    bases = np.empty((m, 3, 3))
    for k in range(m):
        frame = _face_frame(bv, faces[seed_faces[k]], seed_bary[k])
        if frame is None:
            raise ValueError(f"degenerate canonical face for seed {k}")
        origins[k], bases[k] = frame
    return SeedRig(
        seed_faces=seed_faces,
        seed_bary=seed_bary,
        canonical_origins=origins,
        canonical_bases=bases,
    )


def skinning_weights(canonical_points, rig: SeedRig):
    """Distance-softmax weights between canonical points and canonical seeds.

    w_ij = exp(-d_ij) / sum_k exp(-d_ik) with d the Euclidean distance in
    meters. Rows always lie on the simplex.
    """
    p = check_positions(canonical_points, "canonical_points")
    d = np.sqrt(((p[:, None, :] - rig.canonical_origins[None, :, :]) ** 2).sum(-1))
    z = -d
    z -= z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def seed_transforms(rig: SeedRig, body: BodyModel, pose: MotionFrame, prev: SeedTransforms | None = None):
    """Rigid transform of every seed frame from canonical to the posed surface.

    The body is posed through its own joint skinning, each seed's tangent
    frame is rebuilt on the posed face, and (R, T) maps canonical frame to
    posed frame. A degenerate posed face falls back to the previous
    frame's transform for that seed when ``prev`` is given.
    """
    posed = body.pose_vertices(pose)
    faces = np.asarray(body.faces)
    m = rig.m
    rot = np.empty((m, 3, 3))
    trans = np.empty((m, 3))
    for k in range(m):
        frame = _face_frame(posed, faces[rig.seed_faces[k]], rig.seed_bary[k])
        if frame is None:
            if prev is None:
                raise ValueError(f"degenerate posed face for seed {k} and no previous transform")
            rot[k] = prev.rotations[k]
            trans[k] = prev.translations[k]
            continue
        origin, basis = frame
        rot[k] = basis @ rig.canonical_bases[k].T
        trans[k] = origin - rot[k] @ rig.canonical_origins[k]
    return SeedTransforms(rotations=rot, translations=trans)


def _blend(weights, transforms):
    """Blended linear parts (n, 3, 3) and translations (n, 3)."""
    lin = np.einsum("nm,mab->nab", weights, transforms.rotations)
    t = weights @ transforms.translations
    return lin, t


def lbs_forward(canonical_points, weights, transforms: SeedTransforms):
    """Pose points by their weight-blended seed transforms."""
    p = check_positions(canonical_points, "canonical_points")
    w = check_simplex_rows(weights, "weights")
    if w.shape != (p.shape[0], transforms.m):
        raise ValueError(f"weights shape {w.shape} does not match points/transforms")
    lin, t = _blend(w, transforms)
    return np.einsum("nab,nb->na", lin, p) + t


def lbs_inverse(posed_points, weights, transforms: SeedTransforms, allow_pseudo=False):
    """Invert the blended affine per vertex, mapping posed points to canonical.

    Raises on blended matrices with condition number >= 1e8 unless
    ``allow_pseudo``, in which case those vertices use the pseudo-inverse.
    """
    p = check_positions(posed_points, "posed_points")
    w = check_simplex_rows(weights, "weights")
    if w.shape != (p.shape[0], transforms.m):
        raise ValueError(f"weights shape {w.shape} does not match points/transforms")
    lin, t = _blend(w, transforms)
    rhs = p - t
    cond = np.linalg.cond(lin)
    bad = np.flatnonzero(~(cond < 1e8))
    if bad.size and not allow_pseudo:
        raise ValueError(
            f"blended skinning matrix singular at vertex {int(bad[0])} "
            f"(condition number {cond[bad[0]]:.3e}); pass allow_pseudo=True to fall back"
        )
    out = np.empty_like(p)
    good = np.setdiff1d(np.arange(p.shape[0]), bad, assume_unique=False)
    if good.size:
        out[good] = np.linalg.solve(lin[good], rhs[good][..., None])[..., 0]
    for i in bad:
        out[i] = np.linalg.pinv(lin[i]) @ rhs[i]
    return out
