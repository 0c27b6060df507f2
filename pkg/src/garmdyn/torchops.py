"""Torch-side geometry operators shared by the three learned stages.

The raster plan and mesh adjacency are frozen numpy structures; this
module lifts them into gather-based torch ops (differentiable, CPU
deterministic): texture-space projection/sampling, the uniform mesh
Laplacian, and the norm reductions every loss uses (mean over vertices
of per-vertex norms; KL summed over latent dimensions).
"""

from __future__ import annotations

import hashlib

import numpy as np
import torch

__all__ = [
    "PlanTensors",
    "LaplacianOp",
    "mean_vertex_norm",
    "mean_vertex_l1",
    "kl_divergence",
    "state_dict_hash",
    "file_hash",
    "seed_everything",
]


class PlanTensors:
    """UV raster plan lifted to torch tensors for batched projection/sampling."""

    def __init__(self, plan, dtype=torch.float32):
        corners, bary, flat = plan.gather_arrays()
        self.w = plan.w
        self.h = plan.h
        self.n = plan.n_vertices
        self.corner_idx = torch.from_numpy(corners.astype(np.int64))
        self.bary = torch.from_numpy(bary).to(dtype)
        self.flat_texel = torch.from_numpy(flat.astype(np.int64))
        flat4, weights4 = plan.bilinear_arrays()
        self.sample_idx = torch.from_numpy(flat4.astype(np.int64))
        self.sample_weights = torch.from_numpy(weights4).to(dtype)
        self.mask = torch.from_numpy(plan.mask.astype(np.float32)).to(dtype)
        self.dtype = dtype

    def to(self, dtype):
        clone = object.__new__(PlanTensors)
        clone.w, clone.h, clone.n = self.w, self.h, self.n
        clone.corner_idx = self.corner_idx
        clone.flat_texel = self.flat_texel
        clone.sample_idx = self.sample_idx
        clone.bary = self.bary.to(dtype)
        clone.sample_weights = self.sample_weights.to(dtype)
        clone.mask = self.mask.to(dtype)
        clone.dtype = dtype
        return clone

    def project(self, positions):
        """(B, n, 3) vertex values -> (B, 3, w, h) grids, zeros off-mask."""
        single = positions.dim() == 2
        if single:
            positions = positions.unsqueeze(0)
        b = positions.shape[0]
        vals = (positions[:, self.corner_idx, :] * self.bary[None, :, :, None]).sum(dim=2)
        grid = positions.new_zeros(b, self.w * self.h, 3)
        grid = grid.index_copy(1, self.flat_texel, vals)
        grid = grid.view(b, self.w, self.h, 3).permute(0, 3, 1, 2)
        return grid.squeeze(0) if single else grid

    def sample(self, grids):
        """(B, 3, w, h) grids -> (B, n, 3) bilinear samples at vertex coords."""
        single = grids.dim() == 3
        if single:
            grids = grids.unsqueeze(0)
        b = grids.shape[0]
        flat = grids.permute(0, 2, 3, 1).reshape(b, self.w * self.h, 3)
        vals = flat[:, self.sample_idx, :]  # (B, n, 4, 3)
        out = (vals * self.sample_weights[None, :, :, None]).sum(dim=2)
        return out.squeeze(0) if single else out


class LaplacianOp:
    """Uniform one-ring Laplacian as a padded-gather torch op."""

    def __init__(self, one_ring, dtype=torch.float32):
        n = len(one_ring)
        maxdeg = max(len(r) for r in one_ring)
        idx = np.zeros((n, maxdeg), dtype=np.int64)
        mask = np.zeros((n, maxdeg), dtype=np.float64)
        for i, ring in enumerate(one_ring):
            idx[i, : len(ring)] = ring
            mask[i, : len(ring)] = 1.0
        self.idx = torch.from_numpy(idx)
        self.mask = torch.from_numpy(mask).to(dtype)
        self.inv_count = torch.from_numpy(1.0 / mask.sum(axis=1)).to(dtype)
        self.dtype = dtype

    def to(self, dtype):
        clone = object.__new__(LaplacianOp)
        clone.idx = self.idx
        clone.mask = self.mask.to(dtype)
        clone.inv_count = self.inv_count.to(dtype)
        clone.dtype = dtype
        return clone

    def __call__(self, positions):
        single = positions.dim() == 2
        if single:
            positions = positions.unsqueeze(0)
        neigh = positions[:, self.idx, :]  # (B, n, maxdeg, 3)
        mean = (neigh * self.mask[None, :, :, None]).sum(dim=2) * self.inv_count[None, :, None]
        out = positions - mean
        return out.squeeze(0) if single else out


def mean_vertex_norm(diff):
    """Mean over vertices (and batch) of per-vertex Euclidean norms."""
    return diff.norm(dim=-1).mean()


def mean_vertex_l1(diff):
    """Mean over vertices (and batch) of per-vertex 1-norms."""
    return diff.abs().sum(dim=-1).mean()


def kl_divergence(mean, logvar):
    """Closed-form KL(N(mean, exp(logvar)) || N(0, I)), summed over dims, batch-averaged."""
    per_sample = 0.5 * (mean.pow(2) + logvar.exp() - 1.0 - logvar).sum(dim=-1)
    return per_sample.mean()


def state_dict_hash(state_dict):
    """Stable digest over parameter names and float64 tensor bytes."""
    digest = hashlib.sha256()
    for name in sorted(state_dict):
        digest.update(name.encode())
        t = state_dict[name].detach().cpu().to(torch.float64).numpy()
        digest.update(np.ascontiguousarray(t).tobytes())
    return digest.hexdigest()


def file_hash(path):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def seed_everything(seed):
    """Seed torch and return a dedicated torch.Generator for sampling noise."""
    torch.manual_seed(seed)
    gen = torch.Generator()
    gen.manual_seed(seed + 1)
    return gen
