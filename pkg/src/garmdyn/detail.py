"""Adversarial detail enhancement: graph-conv generator, patch discriminator.

The generator fuses local edge-convolution features of the predicted
garment (fixed mesh one-ring graph, max aggregation) with global
features from its latent code, emitting a residual wrinkle field. A
shared-trunk discriminator scores texture-space position maps as
real/fake patches at three receptive scales with a least-squares
objective (real -> 1, fake -> -1 by default; the (1, 0) pairing is
config-selectable).
"""

from __future__ import annotations

import logging
import warnings

import numpy as np
import torch
from torch import nn

from garmdyn.generative import LEAK
from garmdyn.torchops import mean_vertex_l1, seed_everything, state_dict_hash

logger = logging.getLogger(__name__)

__all__ = [
    "EdgeConv",
    "DetailGenerator",
    "PatchDiscriminator",
    "enhance",
    "loss_detail_geometry",
    "discriminator_loss",
    "generator_adversarial_loss",
    "train_detail",
]


class EdgeConv(nn.Module):
    """Edge convolution on a fixed one-ring graph.

    Per vertex i: max over neighbors j of lrelu(W [x_i, x_j - x_i] + b).
    Max aggregation makes the feature invariant to neighbor order.
    """

    def __init__(self, one_ring, in_dim, out_dim):
        super().__init__()
        n = len(one_ring)
        maxdeg = max(len(r) for r in one_ring)
        idx = np.zeros((n, maxdeg), dtype=np.int64)
        mask = np.zeros((n, maxdeg), dtype=bool)
        for i, ring in enumerate(one_ring):
            idx[i, : len(ring)] = ring
            mask[i, : len(ring)] = True
        self.register_buffer("idx", torch.from_numpy(idx))
        self.register_buffer("mask", torch.from_numpy(mask))
        self.lin = nn.Linear(2 * in_dim, out_dim)

    def forward(self, x):
        # x: (B, n, in_dim)
        neigh = x[:, self.idx, :]  # (B, n, maxdeg, in_dim)
        center = x[:, :, None, :].expand_as(neigh)
        edge = torch.cat([center, neigh - center], dim=-1)
        feat = torch.nn.functional.leaky_relu(self.lin(edge), LEAK)
        feat = feat.masked_fill(~self.mask[None, :, :, None], float("-inf"))
        return feat.max(dim=2).values


class DetailGenerator(nn.Module):
    """Stacked edge convolutions + global latent features -> residual offsets."""

    def __init__(self, one_ring, latent_dim=128, edge_dims=(3, 8, 10),
                 global_hidden=64, global_dim=64):
        super().__init__()
        layers = []
        cin = 3
        for cout in edge_dims:
            layers.append(EdgeConv(one_ring, cin, cout))
            cin = cout
        self.edge_layers = nn.ModuleList(layers)
        self.global_fc1 = nn.Linear(latent_dim, global_hidden)
        self.global_fc2 = nn.Linear(global_hidden, global_dim)
        self.fuse = nn.Linear(cin + global_dim, 3)

    def local_features(self, positions):
        x = positions
        for layer in self.edge_layers:
            x = layer(x)
        return x

    def forward(self, positions, code):
        # positions: (B, n, 3); code: (B, latent)
        local = self.local_features(positions)
        g = torch.nn.functional.leaky_relu(self.global_fc1(code), LEAK)
        g = torch.nn.functional.leaky_relu(self.global_fc2(g), LEAK)
        g = g[:, None, :].expand(-1, local.shape[1], -1)
        return self.fuse(torch.cat([local, g], dim=-1))


def enhance(generator, positions, code):
    """Residual wrinkle enhancement: output = input + generated offsets.

    Inputs are detached: stage-3 gradients never reach the earlier stages.
    """
    single = positions.dim() == 2
    p = positions.detach()
    c = code.detach()
    if single:
        p = p.unsqueeze(0)
        c = c.unsqueeze(0)
    out = p + generator(p, c)
    return out.squeeze(0) if single else out


class PatchDiscriminator(nn.Module):
    """Shared four-layer trunk with patch-logit heads at strides 16/32/64.

    The two extra downsampling blocks feeding the coarser heads skip
    instance normalization: at 64x64 inputs their maps reach 1x1 where
    per-instance statistics degenerate.
    """

    def __init__(self, channels=32):
        super().__init__()
        c = channels
        def block(cin, cout, norm=True):
            mods = [nn.Conv2d(cin, cout, 4, stride=2, padding=1)]
            if norm:
                mods.append(nn.InstanceNorm2d(cout, affine=True))
            mods.append(nn.LeakyReLU(LEAK))
            return mods
        self.trunk = nn.Sequential(
            *block(3, c), *block(c, 2 * c), *block(2 * c, 4 * c), *block(4 * c, 8 * c)
        )
        self.head16 = nn.Conv2d(8 * c, 1, 1)
        self.down32 = nn.Sequential(*block(8 * c, 8 * c, norm=False))
        self.head32 = nn.Conv2d(8 * c, 1, 1)
        self.down64 = nn.Sequential(*block(8 * c, 8 * c, norm=False))
        self.head64 = nn.Conv2d(8 * c, 1, 1)

    def forward(self, grids):
        """Logit grids at patch scales (64, 32, 16); dims must divide by 64."""
        if grids.shape[-2] % 64 or grids.shape[-1] % 64:
            raise ValueError(f"map dims {tuple(grids.shape[-2:])} must be divisible by 64")
        f16 = self.trunk(grids)
        f32 = self.down32(f16)
        f64 = self.down64(f32)
        return [self.head64(f64), self.head32(f32), self.head16(f16)]


def loss_detail_geometry(enhanced, truth, laplacian):
    """L1 geometry term: mean per-vertex 1-norms of position and Laplacian error."""
    return mean_vertex_l1(enhanced - truth) + mean_vertex_l1(laplacian(enhanced) - laplacian(truth))


def discriminator_loss(logits_real, logits_fake, fake_target=-1.0):
    """Least-squares patch loss averaged over scales and patches."""
    total = 0.0
    for lr, lf in zip(logits_real, logits_fake):
        total = total + ((lr - 1.0) ** 2).mean() + ((lf - fake_target) ** 2).mean()
    return total / len(logits_real)


def generator_adversarial_loss(logits_fake):
    """Generator's least-squares term: push fake patches toward the real target."""
    total = 0.0
    for lf in logits_fake:
        total = total + ((lf - 1.0) ** 2).mean()
    return total / len(logits_fake)


def _disc_accuracy(logits_real, logits_fake, fake_target):
    threshold = (1.0 + fake_target) / 2.0
    correct = 0
    count = 0
    for lr, lf in zip(logits_real, logits_fake):
        correct += int((lr > threshold).sum()) + int((lf < threshold).sum())
        count += lr.numel() + lf.numel()
    return correct / max(count, 1)


def train_detail(dataset, generator, discriminator, gen_model, cfg, log_every=20):
    """Alternating 1:1 generator/discriminator optimization.

    ``dataset`` provides ``inputs`` (F, n, 3) stage-2 predictions,
    ``codes`` (F, latent), ``truth`` (F, n, 3) and ``truth_grids``
    (F, 3, w, h). With ``detail.adversarial`` false the discriminator is
    untouched and only the geometry term trains the generator. Geometry
    is scaled by ``detail.geometry_scale`` inside the losses to balance
    the unit-free adversarial term.
    """
    seed_everything(cfg["seed"] + 3)
    for p in gen_model.parameters():
        p.requires_grad_(False)
    frozen_hash = state_dict_hash(gen_model.state_dict())
    adversarial = cfg["detail.adversarial"]
    fake_target = cfg["detail.fake_target"]
    scale = cfg["detail.geometry_scale"]
    opt_g = torch.optim.Adam(generator.parameters(), lr=cfg["detail.lr"], weight_decay=cfg["detail.weight_decay"])
    opt_d = torch.optim.Adam(discriminator.parameters(), lr=cfg["detail.lr"], weight_decay=cfg["detail.weight_decay"])

    n_frames = dataset.inputs.shape[0]
    batch = min(cfg["detail.batch_size"], n_frames)
    shuffle_gen = torch.Generator()
    shuffle_gen.manual_seed(cfg["seed"] + 4)
    curve = []
    collapse_run = 0
    generator.train()
    discriminator.train()
    for epoch in range(cfg["detail.epochs"]):
        order = torch.randperm(n_frames, generator=shuffle_gen)
        g_losses, accs = [], []
        for start in range(0, n_frames, batch):
            idx = order[start : start + batch]
            v_in = dataset.inputs[idx]
            codes = dataset.codes[idx]
            truth = dataset.truth[idx]
            real_grids = dataset.truth_grids[idx]

            if adversarial:
                with torch.no_grad():
                    fake = enhance(generator, v_in, codes)
                    fake_grids = gen_model.plan.project(fake)
                logits_real = discriminator(real_grids)
                logits_fake = discriminator(fake_grids)
                d_loss = discriminator_loss(logits_real, logits_fake, fake_target)
                opt_d.zero_grad()
                d_loss.backward()
                opt_d.step()
                accs.append(_disc_accuracy([l.detach() for l in logits_real],
                                           [l.detach() for l in logits_fake], fake_target))

            fake = enhance(generator, v_in, codes)
            g_loss = loss_detail_geometry(fake * scale, truth * scale, gen_model.laplacian)
            if adversarial:
                fake_grids = gen_model.plan.project(fake)
                g_loss = g_loss + generator_adversarial_loss(discriminator(fake_grids))
            if not torch.isfinite(g_loss):
                raise RuntimeError(f"non-finite stage-3 loss at epoch {epoch}")
            opt_g.zero_grad()
            g_loss.backward()
            opt_g.step()
            g_losses.append(float(g_loss.detach()))
        curve.append(float(np.mean(g_losses)))
        if adversarial and accs and float(np.mean(accs)) > 0.99:
            collapse_run += 1
            if collapse_run >= 3:
                warnings.warn("discriminator at >99% accuracy for 3 epochs; adversarial signal may have collapsed")
                logger.warning("discriminator collapse suspected at epoch %d", epoch)
        else:
            collapse_run = 0
        if log_every and epoch % log_every == 0:
            logger.info("stage3 epoch %d generator loss %.6f", epoch, curve[-1])
    generator.eval()
    discriminator.eval()
    if state_dict_hash(gen_model.state_dict()) != frozen_hash:
        raise RuntimeError("stage-3 training mutated frozen generative parameters")
    return curve
