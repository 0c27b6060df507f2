"""On-disk containers: garment sequences, motion clips, body models, manifests.

All binary containers are little-endian with a 16-byte header
``{magic: 4 bytes, version: u32, frame_count: u32, count: u32}`` followed
by frame-major float32 payloads:

* ``GSEQ`` -- count is the vertex count; each frame is count x 3 positions.
* ``GMOT`` -- count is the joint count J; each frame is J quaternions
  (w, x, y, z) followed by the 3-vector root translation.

The body model is a single JSON file (mesh + skeleton + joint weights);
the dataset manifest is JSON as well.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from garmdyn.skinning import BodyModel, MotionFrame

__all__ = [
    "write_gseq",
    "read_gseq",
    "write_motion_clip",
    "read_motion_clip",
    "save_body",
    "load_body",
]

_HEADER = struct.Struct("<4sIII")
_VERSION = 1


def _read_header(fh, magic, path):
    raw = fh.read(_HEADER.size)
    if len(raw) != _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    got_magic, version, frame_count, count = _HEADER.unpack(raw)
    if got_magic != magic:
        raise ValueError(f"{path}: bad magic {got_magic!r}, expected {magic!r}")
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    return frame_count, count


def write_gseq(path, frames):
    """Write a garment sequence (frames, n, 3) as a GSEQ container."""
    arr = np.ascontiguousarray(frames, dtype=np.float32)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected (frames, n, 3) positions, got {arr.shape}")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(b"GSEQ", _VERSION, arr.shape[0], arr.shape[1]))
        fh.write(arr.tobytes())


def read_gseq(path):
    """Read a GSEQ container into a (frames, n, 3) float32 array."""
    with open(path, "rb") as fh:
        frame_count, n = _read_header(fh, b"GSEQ", path)
        payload = fh.read()
    expect = frame_count * n * 3 * 4
    if len(payload) != expect:
        raise ValueError(f"{path}: payload is {len(payload)} bytes, expected {expect}")
    return np.frombuffer(payload, dtype="<f4").reshape(frame_count, n, 3).copy()


def write_motion_clip(path, frames):
    """Write motion frames as a GMOT container."""
    frames = list(frames)
    if not frames:
        raise ValueError("motion clip must contain at least one frame")
    J = frames[0].joint_rotations.shape[0]
    rows = []
    for f in frames:
        if f.joint_rotations.shape[0] != J:
            raise ValueError("inconsistent joint count across motion frames")
        rows.append(np.concatenate([f.joint_rotations.ravel(), f.root_translation]))
    arr = np.ascontiguousarray(rows, dtype=np.float32)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(b"GMOT", _VERSION, len(frames), J))
        fh.write(arr.tobytes())


def read_motion_clip(path):
    """Read a GMOT container into a list of MotionFrame."""
    with open(path, "rb") as fh:
        frame_count, J = _read_header(fh, b"GMOT", path)
        payload = fh.read()
    per_frame = (J * 4 + 3) * 4
    if len(payload) != frame_count * per_frame:
        raise ValueError(f"{path}: payload is {len(payload)} bytes, expected {frame_count * per_frame}")
    flat = np.frombuffer(payload, dtype="<f4").reshape(frame_count, J * 4 + 3).astype(np.float64)
    frames = []
    for row in flat:
        q = row[: J * 4].reshape(J, 4)
        # re-normalize: float32 storage erodes unit norms below the 1e-6 gate
        q = q / np.linalg.norm(q, axis=1, keepdims=True)
        frames.append(MotionFrame(joint_rotations=q, root_translation=row[J * 4 :]))
    return frames


def save_body(path, body: BodyModel):
    doc = {
        "format": "garmdyn-body",
        "version": 1,
        "vertices": body.canonical_vertices.tolist(),
        "faces": body.faces.tolist(),
        "joint_parents": body.joint_parents.tolist(),
        "joint_rest_positions": body.joint_rest_positions.tolist(),
        "joint_skinning_weights": body.joint_skinning_weights.tolist(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_body(path):
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != "garmdyn-body" or doc.get("version") != 1:
        raise ValueError(f"{path}: not a garmdyn body file")
    return BodyModel(
        canonical_vertices=np.array(doc["vertices"], dtype=np.float64),
        faces=np.array(doc["faces"], dtype=np.int64),
        joint_parents=np.array(doc["joint_parents"], dtype=np.int64),
        joint_rest_positions=np.array(doc["joint_rest_positions"], dtype=np.float64),
        joint_skinning_weights=np.array(doc["joint_skinning_weights"], dtype=np.float64),
    )
