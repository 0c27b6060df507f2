"""Garment mesh container and the discrete operators built on it.

The template is the canonical (unposed, metric) garment geometry; every
other module treats it as immutable. The Laplacian uses uniform
(combinatorial) one-ring weights, which stay well behaved on the
near-degenerate triangles cloth simulation produces.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from garmdyn.validation import check_array, check_faces, check_positions

__all__ = [
    "GarmentTemplate",
    "load_obj_template",
    "save_obj_template",
    "build_edges",
    "build_one_ring",
    "mesh_laplacian",
    "vertex_normals",
]


def build_edges(faces):
    """Unique undirected edges (e, 2), each row sorted, rows lexicographic."""
    f = np.asarray(faces, dtype=np.int64)
    raw = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]], axis=0)
    raw.sort(axis=1)
    return np.unique(raw, axis=0)


def build_one_ring(n_vertices, edges):
    """Per-vertex sorted neighbor index lists from an undirected edge list."""
    ring = [[] for _ in range(n_vertices)]
    for a, b in np.asarray(edges, dtype=np.int64):
        ring[a].append(int(b))
        ring[b].append(int(a))
    return [sorted(set(r)) for r in ring]


@dataclass
class GarmentTemplate:
    """Canonical garment mesh: positions, triangles, UV chart, adjacency.

    Attributes
    ----------
    vertices : (n, 3) float64
        Canonical-pose positions in meters.
    faces : (f, 3) int64
        Triangle vertex indices.
    uv_coords : (n, 2) float64
        Per-vertex chart coordinates in [0, 1]^2 (one injective chart).
    edges : (e, 2) int64
        Unique undirected edges, derived from ``faces``.
    one_ring : list of list of int
        Per-vertex neighbor indices, derived from ``edges``.
    """

    vertices: np.ndarray
    faces: np.ndarray
    uv_coords: np.ndarray
    edges: np.ndarray = field(default=None)
    one_ring: list = field(default=None)

    def __post_init__(self):
        self.vertices = check_positions(self.vertices, "vertices")
        n = self.vertices.shape[0]
        self.faces = check_faces(self.faces, n)
        self.uv_coords = check_array(self.uv_coords, "uv_coords", shape=(n, 2))
        if self.uv_coords.min() < -1e-9 or self.uv_coords.max() > 1.0 + 1e-9:
            raise ValueError("uv_coords: chart coordinates must lie in [0, 1]^2")
        if self.edges is None:
            self.edges = build_edges(self.faces)
        if self.one_ring is None:
            self.one_ring = build_one_ring(n, self.edges)
        degrees = np.array([len(r) for r in self.one_ring])
        if n and degrees.min() == 0:
            bad = int(np.argmin(degrees))
            raise ValueError(f"template has isolated vertex {bad}")
        if not self._is_connected():
            raise ValueError("template is not a single connected garment piece")

    def _is_connected(self):
        n = self.vertices.shape[0]
        if n == 0:
            return True
        seen = np.zeros(n, dtype=bool)
        stack = [0]
        seen[0] = True
        while stack:
            v = stack.pop()
            for w in self.one_ring[v]:
                if not seen[w]:
                    seen[w] = True
                    stack.append(w)
        return bool(seen.all())

    @property
    def n_vertices(self):
        return self.vertices.shape[0]

    def bbox_diagonal(self):
        """Length of the canonical bounding-box diagonal (meters)."""
        ext = self.vertices.max(axis=0) - self.vertices.min(axis=0)
        return float(np.linalg.norm(ext))

    def edge_lengths(self, positions=None):
        """Edge lengths for ``positions`` (defaults to canonical vertices)."""
        p = self.vertices if positions is None else np.asarray(positions, dtype=np.float64)
        return np.linalg.norm(p[self.edges[:, 0]] - p[self.edges[:, 1]], axis=1)

    def content_hash(self):
        """Stable hash over geometry + connectivity + chart, for lineage checks."""
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.vertices).tobytes())
        h.update(np.ascontiguousarray(self.faces).tobytes())
        h.update(np.ascontiguousarray(self.uv_coords).tobytes())
        return h.hexdigest()


def mesh_laplacian(positions, one_ring):
    """Uniform-weight delta coordinates: v_i minus the mean of its one-ring.

    Parameters
    ----------
    positions : (n, 3) array
    one_ring : list of neighbor index lists, every vertex with >= 1 neighbor

    Returns
    -------
    (n, 3) float64 delta coordinates.
    """
    p = check_positions(positions, "positions")
    n = p.shape[0]
    if len(one_ring) != n:
        raise ValueError("one_ring length does not match vertex count")
    delta = np.empty_like(p)
    for i, ring in enumerate(one_ring):
        if not ring:
            raise ValueError(f"vertex {i} has no neighbors")
        delta[i] = p[i] - p[ring].mean(axis=0)
    return delta


def laplacian_matrix(n_vertices, one_ring):
    """Sparse CSR operator L with (L @ P) == mesh_laplacian(P, one_ring)."""
    from scipy import sparse

    rows, cols, vals = [], [], []
    for i, ring in enumerate(one_ring):
        if not ring:
            raise ValueError(f"vertex {i} has no neighbors")
        rows.append(i)
        cols.append(i)
        vals.append(1.0)
        w = -1.0 / len(ring)
        for j in ring:
            rows.append(i)
            cols.append(j)
            vals.append(w)
    return sparse.csr_matrix((vals, (rows, cols)), shape=(n_vertices, n_vertices))


def vertex_normals(positions, faces):
    """Area-weighted vertex normals, unit length.

    Face normals weighted by twice the face area (the raw cross product)
    are accumulated to the face corners and normalized. Vertices whose
    accumulated normal has zero norm fall back to +z.
    """
    p = check_positions(positions, "positions")
    f = check_faces(faces, p.shape[0])
    cross = np.cross(p[f[:, 1]] - p[f[:, 0]], p[f[:, 2]] - p[f[:, 0]])
    acc = np.zeros_like(p)
    for c in range(3):
        np.add.at(acc, f[:, c], cross)
    norms = np.linalg.norm(acc, axis=1)
    degenerate = norms < 1e-20
    acc[degenerate] = (0.0, 0.0, 1.0)
    norms[degenerate] = 1.0
    return acc / norms[:, None]


def load_obj_template(path):
    """Load a garment template from a Wavefront OBJ file.

    Expects triangular ``f`` entries of the form ``v/vt`` where every
    vertex is paired with exactly one texture coordinate (a single
    injective chart; seam duplication is out of scope).
    """
    positions, uvs = [], []
    faces = []
    vt_of_vertex = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            parts = line.strip().split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "v":
                positions.append([float(x) for x in parts[1:4]])
            elif parts[0] == "vt":
                uvs.append([float(x) for x in parts[1:3]])
            elif parts[0] == "f":
                if len(parts) != 4:
                    raise ValueError("template faces must be triangles")
                corners = []
                for token in parts[1:]:
                    fields = token.split("/")
                    vi = int(fields[0]) - 1
                    if len(fields) < 2 or fields[1] == "":
                        raise ValueError("template faces must carry v/vt indices")
                    ti = int(fields[1]) - 1
                    prev = vt_of_vertex.setdefault(vi, ti)
                    if prev != ti:
                        raise ValueError(
                            f"vertex {vi} referenced with two UV indices ({prev}, {ti}); "
                            "per-vertex single UV required"
                        )
                    corners.append(vi)
                faces.append(corners)
    positions = np.asarray(positions, dtype=np.float64)
    uvs = np.asarray(uvs, dtype=np.float64)
    n = positions.shape[0]
    uv_coords = np.zeros((n, 2))
    assigned = np.zeros(n, dtype=bool)
    for vi, ti in vt_of_vertex.items():
        uv_coords[vi] = uvs[ti]
        assigned[vi] = True
    if not assigned.all():
        raise ValueError("every vertex must appear in a face with a UV coordinate")
    return GarmentTemplate(vertices=positions, faces=np.asarray(faces), uv_coords=uv_coords)


def save_obj_template(template, path):
    """Write a template to OBJ with per-vertex UVs (inverse of the loader).

    Full float64 precision: downstream seed sampling breaks distance ties
    by comparison, so the loaded template must be bit-exact.
    """
    with open(path, "w", encoding="utf-8") as fh:
        for v in template.vertices:
            fh.write(f"v {v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
        for uv in template.uv_coords:
            fh.write(f"vt {uv[0]:.17g} {uv[1]:.17g}\n")
        for f in template.faces:
            fh.write("f " + " ".join(f"{i + 1}/{i + 1}" for i in f) + "\n")
