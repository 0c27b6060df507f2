"""Synthetic ground-truth generation: capsule body, skirt template, cloth sim.

A small articulated body (root, two leg capsules, one spine capsule) drives
an open-cylinder skirt simulated as a mass-spring sheet with stretch,
shear and bend springs, gravity, velocity damping and capsule collision.
This bundled simulator is the data oracle the learned pipeline trains
against; it is deliberately desk-scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from garmdyn.mesh import GarmentTemplate
from garmdyn.skinning import BodyModel, MotionFrame

__all__ = [
    "SyntheticSceneConfig",
    "build_capsule_body",
    "build_skirt_template",
    "make_motion_script",
    "simulate_clip",
]


def _capsule_mesh(p0, p1, radius, segments, cap_rings=3, axis_rings=5):
    """Tessellate a capsule (cylinder + hemispherical caps) around segment p0-p1."""
    p0 = np.asarray(p0, dtype=np.float64)
    p1 = np.asarray(p1, dtype=np.float64)
    axis = p1 - p0
    length = np.linalg.norm(axis)
    az = axis / length if length > 1e-12 else np.array([0.0, 0.0, 1.0])
    tmp = np.array([1.0, 0.0, 0.0]) if abs(az[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    ax = np.cross(az, tmp)
    ax /= np.linalg.norm(ax)
    ay = np.cross(az, ax)

    rings = []  # (center_offset_along_axis, ring_radius)
    for k in range(cap_rings):  # bottom hemisphere, pole excluded
        ang = (k + 1) / (cap_rings + 0) * (math.pi / 2)
        rings.append((-radius * math.cos(ang), radius * math.sin(ang)))
    for k in range(axis_rings):
        rings.append((length * k / (axis_rings - 1), radius))
    for k in range(cap_rings):
        ang = (cap_rings - k) / (cap_rings + 0) * (math.pi / 2)
        rings.append((length + radius * math.cos(ang), radius * math.sin(ang)))

    verts = [p0 - radius * az]  # bottom pole
    for off, r in rings:
        center = p0 + off * az
        for s in range(segments):
            t = 2 * math.pi * s / segments
            verts.append(center + r * (math.cos(t) * ax + math.sin(t) * ay))
    verts.append(p1 + radius * az)  # top pole
    verts = np.asarray(verts)

    faces = []
    for s in range(segments):  # bottom fan
        a = 1 + s
        b = 1 + (s + 1) % segments
        faces.append([0, b, a])
    n_rings = len(rings)
    for r in range(n_rings - 1):
        for s in range(segments):
            a = 1 + r * segments + s
            b = 1 + r * segments + (s + 1) % segments
            c = 1 + (r + 1) * segments + s
            d = 1 + (r + 1) * segments + (s + 1) % segments
            faces.append([a, b, d])
            faces.append([a, d, c])
    top = len(verts) - 1
    base = 1 + (n_rings - 1) * segments
    for s in range(segments):  # top fan
        a = base + s
        b = base + (s + 1) % segments
        faces.append([top, a, b])
    return verts, np.asarray(faces, dtype=np.int64)


@dataclass
class _Capsule:
    joint: int
    p0: np.ndarray
    p1: np.ndarray
    radius: float


def _default_capsules():
    return [
        _Capsule(0, np.array([0.0, 0.0, 0.97]), np.array([0.0, 0.0, 1.03]), 0.13),
        _Capsule(1, np.array([-0.09, 0.0, 0.94]), np.array([-0.09, 0.0, 0.42]), 0.065),
        _Capsule(2, np.array([0.09, 0.0, 0.94]), np.array([0.09, 0.0, 0.42]), 0.065),
        _Capsule(3, np.array([0.0, 0.0, 1.06]), np.array([0.0, 0.0, 1.32]), 0.085),
    ]


def build_capsule_body(segments=10, cap_rings=3, axis_rings=5):
    """Four-joint capsule body: pelvis root, two legs, one spine.

    Each capsule's vertices are rigidly bound (one-hot weights) to its
    joint, so posing the body through joint skinning moves capsules
    rigidly -- the articulation model the garment pipeline assumes.
    """
    capsules = _default_capsules()
    joint_parents = np.array([-1, 0, 0, 0], dtype=np.int64)
    joint_rest = np.array(
        [[0.0, 0.0, 1.0], [-0.09, 0.0, 0.94], [0.09, 0.0, 0.94], [0.0, 0.0, 1.06]]
    )
    all_v, all_f, all_w = [], [], []
    offset = 0
    for cap in capsules:
        v, f = _capsule_mesh(cap.p0, cap.p1, cap.radius, segments, cap_rings, axis_rings)
        w = np.zeros((v.shape[0], 4))
        w[:, cap.joint] = 1.0
        all_v.append(v)
        all_f.append(f + offset)
        all_w.append(w)
        offset += v.shape[0]
    body = BodyModel(
        canonical_vertices=np.concatenate(all_v),
        faces=np.concatenate(all_f),
        joint_parents=joint_parents,
        joint_rest_positions=joint_rest,
        joint_skinning_weights=np.concatenate(all_w),
    )
    return body, capsules


def build_skirt_template(cols=24, rows=16, waist_radius=0.16, hem_radius=0.34,
                         waist_height=1.0, hem_height=0.42):
    """Open-cylinder skirt grid with a full-square injective UV chart.

    Columns sweep just short of a full turn (one column gap of seam), rows
    interpolate waist to hem, so u = column fraction and v = row fraction
    tile [0, 1]^2 and every texel of any raster grid is covered.
    """
    verts = np.empty((cols * rows, 3))
    uvs = np.empty((cols * rows, 2))
    for i in range(cols):
        ang = 2 * math.pi * i / cols
        for j in range(rows):
            t = j / (rows - 1)
            r = waist_radius + (hem_radius - waist_radius) * t
            z = waist_height + (hem_height - waist_height) * t
            idx = i * rows + j
            verts[idx] = (r * math.cos(ang), r * math.sin(ang), z)
            uvs[idx] = (i / (cols - 1), j / (rows - 1))
    faces = []
    for i in range(cols - 1):
        for j in range(rows - 1):
            a = i * rows + j
            b = (i + 1) * rows + j
            c = i * rows + j + 1
            d = (i + 1) * rows + j + 1
            faces.append([a, b, d])
            faces.append([a, d, c])
    return GarmentTemplate(vertices=verts, faces=np.asarray(faces), uv_coords=uvs)


@dataclass
class SyntheticSceneConfig:
    """Scene: body + skirt + cloth material, validated for explicit stability."""

    cols: int = 24
    rows: int = 16
    waist_radius: float = 0.16
    hem_radius: float = 0.34
    waist_height: float = 1.0
    hem_height: float = 0.42
    mass_total: float = 0.4
    stretch_stiffness: float = 80.0
    shear_stiffness: float = 20.0
    bend_stiffness: float = 1.5
    damping: float = 1.2
    gravity: float = 9.81
    substeps: int = 16
    fps: float = 30.0
    collision_offset: float = 3e-3
    friction: float = 0.3
    capsule_segments: int = 10
    warmup_frames: int = 30

    body: BodyModel = field(default=None, repr=False)
    capsules: list = field(default=None, repr=False)
    template: GarmentTemplate = field(default=None, repr=False)

    def __post_init__(self):
        if self.body is None:
            self.body, self.capsules = build_capsule_body(segments=self.capsule_segments)
        if self.template is None:
            self.template = build_skirt_template(
                self.cols, self.rows, self.waist_radius, self.hem_radius,
                self.waist_height, self.hem_height,
            )
        self._check_stability()

    @classmethod
    def from_config(cls, cfg):
        return cls(
            cols=cfg["sim.garment_cols"],
            rows=cfg["sim.garment_rows"],
            waist_radius=cfg["sim.waist_radius"],
            hem_radius=cfg["sim.hem_radius"],
            waist_height=cfg["sim.waist_height"],
            hem_height=cfg["sim.hem_height"],
            mass_total=cfg["sim.mass_total"],
            stretch_stiffness=cfg["sim.stretch_stiffness"],
            shear_stiffness=cfg["sim.shear_stiffness"],
            bend_stiffness=cfg["sim.bend_stiffness"],
            damping=cfg["sim.damping"],
            gravity=cfg["sim.gravity"],
            substeps=cfg["sim.substeps"],
            fps=cfg["sim.fps"],
            collision_offset=cfg["sim.collision_offset"],
            friction=cfg["sim.friction"],
            capsule_segments=cfg["sim.capsule_segments"],
        )

    @property
    def vertex_mass(self):
        return self.mass_total / self.template.n_vertices

    def _springs(self):
        """(index pairs (s, 2), stiffness (s,)) for structural/shear/bend springs."""
        cols, rows = self.cols, self.rows
        pairs, ks = [], []

        def add(a, b, k):
            pairs.append((a, b))
            ks.append(k)

        for i in range(cols):
            for j in range(rows):
                a = i * rows + j
                if i + 1 < cols:
                    add(a, (i + 1) * rows + j, self.stretch_stiffness)
                if j + 1 < rows:
                    add(a, i * rows + j + 1, self.stretch_stiffness)
                if i + 1 < cols and j + 1 < rows:
                    add(a, (i + 1) * rows + j + 1, self.shear_stiffness)
                    add((i + 1) * rows + j, i * rows + j + 1, self.shear_stiffness)
                if i + 2 < cols:
                    add(a, (i + 2) * rows + j, self.bend_stiffness)
                if j + 2 < rows:
                    add(a, i * rows + j + 2, self.bend_stiffness)
        return np.asarray(pairs, dtype=np.int64), np.asarray(ks, dtype=np.float64)

    def _check_stability(self):
        pairs, ks = self._springs()
        incident = np.zeros(self.template.n_vertices)
        for (a, b), k in zip(pairs, ks):
            incident[a] += k
            incident[b] += k
        omega = math.sqrt(incident.max() / self.vertex_mass)
        dt = 1.0 / (self.fps * self.substeps)
        dt_stable = 2.0 / omega
        if dt > 0.8 * dt_stable:
            raise ValueError(
                f"explicit integration unstable: dt={dt:.3e} exceeds 0.8 * (2/omega)="
                f"{0.8 * dt_stable:.3e}; lower stiffness or raise sim.substeps"
            )

    def pinned_vertices(self):
        """Waist ring indices (row 0 of every column)."""
        return np.arange(self.cols) * self.rows

    def pinned_attachments(self):
        """Waist positions expressed in the root joint's rest frame."""
        pins = self.pinned_vertices()
        return self.template.vertices[pins] - self.body.joint_rest_positions[0]


def make_motion_script(kind, n_frames, fps=30.0, amplitude_deg=30.0, period_s=2.0,
                       phase=0.0, translation_amp=0.0):
    """Procedural per-joint rotation curves standing in for mocap clips.

    Kinds: ``rest`` (identity), ``sway`` (legs counter-swing about x),
    ``twist`` (root and spine oscillate about z), ``mix`` (both, detuned).
    """
    def axis_quat(axis, angle):
        a = np.asarray(axis, dtype=np.float64)
        a = a / np.linalg.norm(a)
        h = angle / 2.0
        return np.array([math.cos(h), *(math.sin(h) * a)])

    amp = math.radians(amplitude_deg)
    frames = []
    for f in range(n_frames):
        t = f / fps
        s = math.sin(2 * math.pi * t / period_s + phase)
        c = math.sin(2 * math.pi * t / (period_s * 1.7) + phase)
        quats = np.tile(np.array([1.0, 0.0, 0.0, 0.0]), (4, 1))
        trans = np.zeros(3)
        if kind == "rest":
            pass
        elif kind == "sway":
            quats[1] = axis_quat([1, 0, 0], amp * s)
            quats[2] = axis_quat([1, 0, 0], -amp * s)
            trans[2] = translation_amp * 0.5 * (1 - math.cos(2 * math.pi * t / period_s))
        elif kind == "twist":
            quats[0] = axis_quat([0, 0, 1], amp * s)
            quats[3] = axis_quat([0, 0, 1], 0.5 * amp * c)
        elif kind == "mix":
            quats[0] = axis_quat([0, 0, 1], 0.6 * amp * c)
            quats[1] = axis_quat([1, 0, 0], amp * s)
            quats[2] = axis_quat([1, 0, 0], -amp * s)
            trans[0] = translation_amp * s
        else:
            raise ValueError(f"unknown motion kind {kind!r}")
        frames.append(MotionFrame(joint_rotations=quats, root_translation=trans))
    return frames


def _posed_capsules(scene, pose):
    rot, pos = scene.body.forward_kinematics(pose)
    rest = scene.body.joint_rest_positions
    posed = []
    for cap in scene.capsules:
        j = cap.joint
        p0 = rot[j] @ (cap.p0 - rest[j]) + pos[j]
        p1 = rot[j] @ (cap.p1 - rest[j]) + pos[j]
        posed.append((p0, p1, cap.radius))
    return posed


def _resolve_capsules(x, v, capsules, offset, friction):
    """Project points out of capsules in place; kill inward normal velocity."""
    for p0, p1, radius in capsules:
        axis = p1 - p0
        denom = float(axis @ axis)
        if denom > 0:
            t = np.clip(((x - p0) @ axis) / denom, 0.0, 1.0)
        else:
            t = np.zeros(len(x))
        closest = p0 + t[:, None] * axis
        d = x - closest
        dist = np.linalg.norm(d, axis=1)
        pen = dist < radius + offset
        if not np.any(pen):
            continue
        safe = np.maximum(dist[pen], 1e-12)
        n = d[pen] / safe[:, None]
        x[pen] = closest[pen] + n * (radius + offset)
        vp = v[pen]
        vn = (vp * n).sum(axis=1)
        inward = vn < 0
        vtang = vp - vn[:, None] * n
        v[pen] = np.where(inward[:, None], vtang * (1.0 - friction), vp)


def simulate_clip(scene: SyntheticSceneConfig, motion):
    """Simulate the garment under a motion script.

    Returns ``(garment_frames (F, n, 3) float64, body_frames (F, nb, 3))``;
    frame f is the state after the body reached pose f. Raises on energy
    blow-up with the offending configuration echoed.
    """
    template = scene.template
    pairs, ks = scene._springs()
    rest = np.linalg.norm(
        template.vertices[pairs[:, 0]] - template.vertices[pairs[:, 1]], axis=1
    )
    mass = scene.vertex_mass
    dt = 1.0 / (scene.fps * scene.substeps)
    pins = scene.pinned_vertices()
    pin_local = scene.pinned_attachments()

    x = template.vertices.copy()
    v = np.zeros_like(x)
    e_ref = scene.mass_total * scene.gravity * max(
        scene.waist_height - scene.hem_height, 1e-3
    )

    garment_frames = np.empty((len(motion), template.n_vertices, 3))
    body_frames = np.empty((len(motion), scene.body.canonical_vertices.shape[0], 3))

    schedule = [(True, motion[0])] * scene.warmup_frames + [(False, m) for m in motion]
    out = 0
    for is_warmup, pose in schedule:
        rot, pos = scene.body.forward_kinematics(pose)
        pin_target = (rot[0] @ pin_local.T).T + pos[0]
        capsules = _posed_capsules(scene, pose)
        for _ in range(scene.substeps):
            d = x[pairs[:, 1]] - x[pairs[:, 0]]
            length = np.linalg.norm(d, axis=1)
            np.maximum(length, 1e-12, out=length)
            f_spring = (ks * (length - rest) / length)[:, None] * d
            force = np.zeros_like(x)
            np.add.at(force, pairs[:, 0], f_spring)
            np.add.at(force, pairs[:, 1], -f_spring)
            force[:, 2] -= mass * scene.gravity
            force -= scene.damping * mass * v
            v += dt * force / mass
            x += dt * v
            _resolve_capsules(x, v, capsules, scene.collision_offset, scene.friction)
            x[pins] = pin_target
            v[pins] = 0.0
        kinetic = 0.5 * mass * float((v * v).sum())
        if not np.isfinite(kinetic) or kinetic > 100.0 * e_ref:
            raise RuntimeError(
                f"simulation energy blow-up (KE={kinetic:.3e}, reference={e_ref:.3e}); "
                f"config: stretch={scene.stretch_stiffness}, substeps={scene.substeps}, "
                f"fps={scene.fps}, damping={scene.damping}"
            )
        if not is_warmup:
            garment_frames[out] = x
            body_frames[out] = scene.body.pose_vertices(pose)
            out += 1
    return garment_frames, body_frames
