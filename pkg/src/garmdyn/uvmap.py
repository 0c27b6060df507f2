"""UV rasterization and sampling between vertex arrays and texture-space grids.

Per-vertex 3D quantities are stored as w x h x 3 grids over the garment's
UV chart so 2D convolutions can exploit surface locality. The
correspondence is precomputed once per template into a raster plan:

* texel (i, j) has chart coordinates (i/(w-1), j/(h-1)); a texel is
  covered when its center lies inside (or on the boundary of) a UV
  triangle, and takes that face's barycentric interpolation;
* vertex sampling coordinates are uv * (w-1, h-1), read back with
  bilinear interpolation.

With this pairing, projection followed by sampling is exact on fields
that are linear over the chart whenever every vertex's bilinear
footprint is covered (true for charts that tile the full unit square).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from garmdyn.validation import check_array, check_finite, check_positions

__all__ = ["UVRasterPlan", "UVGrid", "build_uv_raster_plan", "project_to_uv", "sample_from_uv"]

_COVER_EPS = 1e-9
_INTERIOR_EPS = 1e-7


def _validate_grid_size(w, h):
    for name, v in (("w", w), ("h", h)):
        if v < 64 or (v & (v - 1)) != 0:
            raise ValueError(f"grid {name}={v}: must be a power of two >= 64")


@dataclass
class UVGrid:
    """A w x h x 3 texture-space field with its coverage mask.

    Invariant: texels with ``mask`` false hold exactly zero.
    """

    data: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float64)
        self.mask = np.ascontiguousarray(self.mask, dtype=bool)
        if self.data.ndim != 3 or self.data.shape[2] != 3:
            raise ValueError(f"grid data must be (w, h, 3), got {self.data.shape}")
        if self.mask.shape != self.data.shape[:2]:
            raise ValueError("mask shape does not match data")
        _validate_grid_size(*self.data.shape[:2])
        if np.any(self.data[~self.mask] != 0.0):
            raise ValueError("masked-out texels must hold exactly zero")

    @property
    def shape(self):
        return self.data.shape[:2]


@dataclass
class UVRasterPlan:
    """Precomputed template <-> grid correspondence.

    Attributes
    ----------
    w, h : grid dimensions.
    texel_face : (w, h) int64, covering face index per texel, -1 if uncovered.
    texel_bary : (w, h, 3) float64, barycentric coordinates of covered texel
        centers in their covering face (nonnegative, sum to 1).
    vertex_coords : (n, 3) float64 rows (x, y, pad) -- continuous grid
        coordinates uv * (w-1, h-1) per vertex (third column unused).
    faces : (f, 3) int64 copy of the template triangles.
    template_hash : content hash of the template the plan was built for.
    """

    w: int
    h: int
    texel_face: np.ndarray
    texel_bary: np.ndarray
    vertex_coords: np.ndarray
    faces: np.ndarray
    template_hash: str

    @property
    def mask(self):
        return self.texel_face >= 0

    @property
    def n_vertices(self):
        return self.vertex_coords.shape[0]

    def covered_indices(self):
        """Flat indices (row-major over (w, h)) of covered texels."""
        return np.flatnonzero(self.texel_face.ravel() >= 0)

    def gather_arrays(self):
        """(corner_idx (k,3), bary (k,3), flat_texel (k,)) for covered texels."""
        flat = self.covered_indices()
        fidx = self.texel_face.ravel()[flat]
        corners = self.faces[fidx]
        bary = self.texel_bary.reshape(-1, 3)[flat]
        return corners, bary, flat

    def bilinear_arrays(self):
        """Per-vertex bilinear support: flat texel indices (n,4), weights (n,4)."""
        x = self.vertex_coords[:, 0]
        y = self.vertex_coords[:, 1]
        ix = np.clip(np.floor(x).astype(np.int64), 0, self.w - 2)
        iy = np.clip(np.floor(y).astype(np.int64), 0, self.h - 2)
        fx = x - ix
        fy = y - iy
        w00 = (1 - fx) * (1 - fy)
        w10 = fx * (1 - fy)
        w01 = (1 - fx) * fy
        w11 = fx * fy
        flat = np.stack(
            [ix * self.h + iy, (ix + 1) * self.h + iy, ix * self.h + iy + 1, (ix + 1) * self.h + iy + 1],
            axis=1,
        )
        weights = np.stack([w00, w10, w01, w11], axis=1)
        return flat, weights


def _barycentric(points, tri):
    """Barycentric coordinates of 2D ``points`` (k, 2) in triangle ``tri`` (3, 2)."""
    v0 = tri[1] - tri[0]
    v1 = tri[2] - tri[0]
    v2 = points - tri[0]
    d00 = v0 @ v0
    d01 = v0 @ v1
    d11 = v1 @ v1
    denom = d00 * d11 - d01 * d01
    if abs(denom) < 1e-18:
        return None
    d20 = v2 @ v0
    d21 = v2 @ v1
    b = (d11 * d20 - d01 * d21) / denom
    c = (d00 * d21 - d01 * d20) / denom
    a = 1.0 - b - c
    return np.stack([a, b, c], axis=-1)


def build_uv_raster_plan(template, w, h):
    """Rasterize a template's UV chart onto a (w, h) grid.

    Every texel whose center lies inside some UV triangle is assigned
    that face with the center's barycentric coordinates; texel centers
    strictly interior to more than one triangle mean the chart overlaps
    itself, which is rejected as an ambiguous projection.
    """
    _validate_grid_size(w, h)
    uv = template.uv_coords
    texel_face = np.full((w, h), -1, dtype=np.int64)
    texel_bary = np.zeros((w, h, 3), dtype=np.float64)
    interior = np.zeros((w, h), dtype=bool)

    xs = np.arange(w) / (w - 1)
    ys = np.arange(h) / (h - 1)
    for fi, face in enumerate(template.faces):
        tri = uv[face]
        lo = tri.min(axis=0)
        hi = tri.max(axis=0)
        i0 = max(0, int(np.ceil(lo[0] * (w - 1) - 1e-9)))
        i1 = min(w - 1, int(np.floor(hi[0] * (w - 1) + 1e-9)))
        j0 = max(0, int(np.ceil(lo[1] * (h - 1) - 1e-9)))
        j1 = min(h - 1, int(np.floor(hi[1] * (h - 1) + 1e-9)))
        if i1 < i0 or j1 < j0:
            continue
        gx, gy = np.meshgrid(xs[i0 : i1 + 1], ys[j0 : j1 + 1], indexing="ij")
        pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
        bary = _barycentric(pts, tri)
        if bary is None:  # degenerate UV triangle contributes no texels
            continue
        inside = bary.min(axis=1) >= -_COVER_EPS
        strict = bary.min(axis=1) > _INTERIOR_EPS
        ii = (pts[:, 0] * (w - 1)).round().astype(np.int64)
        jj = (pts[:, 1] * (h - 1)).round().astype(np.int64)
        for k in np.flatnonzero(inside):
            i, j = ii[k], jj[k]
            if texel_face[i, j] >= 0:
                if strict[k] and interior[i, j]:
                    raise ValueError(
                        f"overlapping UV triangles: texel ({i}, {j}) interior to faces "
                        f"{texel_face[i, j]} and {fi}"
                    )
                continue  # boundary tie: first face wins
            texel_face[i, j] = fi
            b = np.clip(bary[k], 0.0, None)
            texel_bary[i, j] = b / b.sum()
            interior[i, j] = bool(strict[k])

    coords = np.zeros((template.n_vertices, 3), dtype=np.float64)
    coords[:, 0] = uv[:, 0] * (w - 1)
    coords[:, 1] = uv[:, 1] * (h - 1)
    return UVRasterPlan(
        w=w,
        h=h,
        texel_face=texel_face,
        texel_bary=texel_bary,
        vertex_coords=coords,
        faces=np.array(template.faces, dtype=np.int64),
        template_hash=template.content_hash(),
    )


def project_to_uv(positions, plan):
    """Project per-vertex values into texture space.

    Covered texels take the barycentric interpolation of their face's
    corner values; uncovered texels are zero with ``mask`` false.
    """
    p = check_positions(positions, "positions", n=plan.n_vertices)
    corners, bary, flat = plan.gather_arrays()
    data = np.zeros((plan.w * plan.h, 3), dtype=np.float64)
    data[flat] = np.einsum("kc,kcd->kd", bary, p[corners])
    return UVGrid(data=data.reshape(plan.w, plan.h, 3), mask=plan.mask.copy())


def sample_from_uv(grid, plan):
    """Bilinearly sample a grid at every vertex's chart coordinates."""
    if isinstance(grid, UVGrid):
        data = grid.data
    else:
        data = check_array(grid, "grid", ndim=3)
    if data.shape[:2] != (plan.w, plan.h):
        raise ValueError(f"grid shape {data.shape[:2]} does not match plan ({plan.w}, {plan.h})")
    check_finite(data, "grid")
    flat, weights = plan.bilinear_arrays()
    values = data.reshape(-1, 3)[flat]  # (n, 4, 3)
    return np.einsum("nk,nkd->nd", weights, values)
