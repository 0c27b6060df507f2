"""Garment generative model: UV-map encoder, split latent, two decoders.

Each posed garment frame is encoded from its texture-space position map
into a 128-D variational code. The code's two 64-D halves drive separate
decoders: a fully-connected stack regressing the unposed (canonical
space) shape, and a convolutional decoder emitting a texture-space
offset field that is bilinearly sampled back to vertices. Posed geometry
is their sum. The split is realized as two parallel projections whose
concatenation is the latent mean, so the static half is always the first
64 dimensions of the code.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from garmdyn.torchops import kl_divergence, mean_vertex_norm, seed_everything

logger = logging.getLogger(__name__)

__all__ = [
    "LatentCode",
    "GarmentEncoder",
    "ShapeDecoder",
    "OffsetDecoder",
    "GenerativeModel",
    "loss_generative",
    "train_generative",
]

LEAK = 0.2


@dataclass
class LatentCode:
    """Variational code with its fixed static/dynamic split.

    ``sample = mean + exp(logvar / 2) * noise`` (noise is stored); in
    inference mode the stored noise is zero so the sample equals the mean.
    The static half is the first ``dim/2`` entries, the dynamic half the
    rest.
    """

    mean: torch.Tensor
    logvar: torch.Tensor
    noise: torch.Tensor
    sample: torch.Tensor

    @property
    def dim(self):
        return self.mean.shape[-1]

    @property
    def z_static(self):
        return self.sample[..., : self.dim // 2]

    @property
    def z_dynamic(self):
        return self.sample[..., self.dim // 2 :]


def _conv_block(cin, cout):
    return [nn.Conv2d(cin, cout, 4, stride=2, padding=1), nn.InstanceNorm2d(cout, affine=True), nn.LeakyReLU(LEAK)]


class GarmentEncoder(nn.Module):
    """Four stride-2 convolutions + fully-connected head emitting (mean, logvar)."""

    def __init__(self, w, h, latent_dim=128, base_channels=32, feature_dim=256,
                 logvar_init=-1.0):
        super().__init__()
        if latent_dim % 2:
            raise ValueError("latent_dim must be even")
        c = base_channels
        self.conv = nn.Sequential(
            *_conv_block(3, c), *_conv_block(c, 2 * c), *_conv_block(2 * c, 4 * c), *_conv_block(4 * c, 8 * c)
        )
        self.bottleneck = (8 * c, w // 16, h // 16)
        flat = 8 * c * (w // 16) * (h // 16)
        self.fc = nn.Linear(flat, feature_dim)
        half = latent_dim // 2
        self.mean_static = nn.Linear(feature_dim, half)
        self.mean_dynamic = nn.Linear(feature_dim, half)
        self.logvar_head = nn.Linear(feature_dim, latent_dim)
        self.latent_dim = latent_dim
        # compact centered means; posterior variance starts below the prior so
        # the reparameterization noise cannot drown the code before the
        # decoders learn to use it
        with torch.no_grad():
            self.mean_static.bias.zero_()
            self.mean_dynamic.bias.zero_()
            self.logvar_head.weight.zero_()
            self.logvar_head.bias.fill_(logvar_init)

    def forward(self, grids):
        feat = self.conv(grids)
        feat = torch.nn.functional.leaky_relu(self.fc(feat.flatten(1)), LEAK)
        mean = torch.cat([self.mean_static(feat), self.mean_dynamic(feat)], dim=-1)
        logvar = self.logvar_head(feat)
        return mean, logvar


class ShapeDecoder(nn.Module):
    """Four fully-connected layers from the static code to canonical positions."""

    def __init__(self, half_dim, n_vertices, hidden=512, template=None):
        super().__init__()
        self.n_vertices = n_vertices
        self.fc1 = nn.Linear(half_dim, hidden)
        self.fc2 = nn.Linear(hidden, hidden)
        self.fc3 = nn.Linear(hidden, hidden)
        self.out = nn.Linear(hidden, n_vertices * 3)
        if template is not None:
            # anchor the output distribution at the canonical shape
            with torch.no_grad():
                self.out.weight.mul_(0.01)
                self.out.bias.copy_(torch.as_tensor(template, dtype=self.out.bias.dtype).reshape(-1))

    def forward(self, z_static):
        x = torch.nn.functional.leaky_relu(self.fc1(z_static), LEAK)
        x = torch.nn.functional.leaky_relu(self.fc2(x), LEAK)
        x = torch.nn.functional.leaky_relu(self.fc3(x), LEAK)
        x = self.out(x)
        return x.view(*z_static.shape[:-1], self.n_vertices, 3)


class OffsetDecoder(nn.Module):
    """Fully-connected lift + four up-convolutions to a texture-space offset field."""

    def __init__(self, half_dim, w, h, base_channels=32):
        super().__init__()
        c = base_channels
        self.w0, self.h0 = w // 16, h // 16
        self.c0 = 8 * c
        self.fc = nn.Linear(half_dim, self.c0 * self.w0 * self.h0)
        def up(cin, cout):
            return [nn.ConvTranspose2d(cin, cout, 4, stride=2, padding=1), nn.InstanceNorm2d(cout, affine=True), nn.LeakyReLU(LEAK)]
        self.deconv = nn.Sequential(
            *up(8 * c, 4 * c), *up(4 * c, 2 * c), *up(2 * c, c),
            nn.ConvTranspose2d(c, 3, 4, stride=2, padding=1),
        )

    def forward(self, z_dynamic):
        x = torch.nn.functional.leaky_relu(self.fc(z_dynamic), LEAK)
        x = x.view(-1, self.c0, self.w0, self.h0)
        return self.deconv(x)


class GenerativeModel(nn.Module):
    """Encoder + both decoders bound to one template's raster plan."""

    def __init__(self, plan_tensors, laplacian, template_vertices, latent_dim=128,
                 base_channels=32, feature_dim=256, rec_hidden=512, logvar_init=-1.0):
        super().__init__()
        self.plan = plan_tensors
        self.laplacian = laplacian
        w, h = plan_tensors.w, plan_tensors.h
        n = plan_tensors.n
        self.encoder = GarmentEncoder(w, h, latent_dim, base_channels, feature_dim, logvar_init)
        self.shape_decoder = ShapeDecoder(latent_dim // 2, n, rec_hidden, template=template_vertices)
        self.offset_decoder = OffsetDecoder(latent_dim // 2, w, h, base_channels)
        self.register_buffer("template", torch.as_tensor(template_vertices, dtype=torch.float32))
        self.latent_dim = latent_dim

    def encode(self, grids, sample=False, generator=None):
        """Encode position maps; ``sample=True`` draws reparameterized noise."""
        mean, logvar = self.encoder(grids)
        if sample:
            noise = torch.randn(mean.shape, generator=generator, dtype=mean.dtype)
            code = mean + torch.exp(0.5 * logvar) * noise
        else:
            noise = torch.zeros_like(mean)
            code = mean
        return LatentCode(mean=mean, logvar=logvar, noise=noise, sample=code)

    def decode_rec(self, z_static):
        return self.shape_decoder(z_static)

    def decode_dyn_grid(self, z_dynamic):
        """Raw decoder output masked to the chart: off-chart texels exactly zero."""
        grid = self.offset_decoder(z_dynamic)
        return grid * self.plan.mask[None, None, :, :]

    def decode_dyn(self, z_dynamic):
        return self.plan.sample(self.decode_dyn_grid(z_dynamic))

    def decode(self, code_sample):
        half = self.latent_dim // 2
        unposed = self.decode_rec(code_sample[..., :half])
        offsets = self.decode_dyn(code_sample[..., half:])
        return unposed + offsets, unposed, offsets

    def forward(self, grids, sample=False, generator=None):
        code = self.encode(grids, sample=sample, generator=generator)
        posed, unposed, offsets = self.decode(code.sample)
        return posed, unposed, offsets, code


def compose(unposed, offsets):
    """Posed geometry is exactly the sum of the two decoded parts."""
    return unposed + offsets


def loss_generative(posed, posed_truth, unposed, unposed_truth, template, code,
                    weights, laplacian):
    """Stage-1 objective; returns (total, components dict).

    Geometry norms are means over vertices of per-vertex Euclidean norms;
    the KL term is the closed-form Gaussian divergence summed over latent
    dimensions.
    """
    lam0, lam1, lam2, lam3 = weights
    geo = mean_vertex_norm(posed - posed_truth)
    geo_lap = mean_vertex_norm(laplacian(posed) - laplacian(posed_truth))
    rec = mean_vertex_norm(unposed - unposed_truth)
    rec_template = mean_vertex_norm(unposed - template)
    kl = kl_divergence(code.mean, code.logvar)
    total = geo + lam0 * geo_lap + lam1 * rec + lam2 * rec_template + lam3 * kl
    parts = {
        "geo": float(geo.detach()),
        "geo_lap": float(geo_lap.detach()),
        "rec": float(rec.detach()),
        "rec_template": float(rec_template.detach()),
        "kl": float(kl.detach()),
    }
    return total, parts


def train_generative(dataset, model, cfg, log_every=50):
    """End-to-end stage-1 optimization over (posed, unposed-target) frames.

    ``dataset`` must provide ``grids`` (F, 3, w, h), ``posed`` (F, n, 3) and
    ``unposed`` (F, n, 3) tensors. The KL weight ramps linearly to its
    configured value over the first ``gen.kl_warmup_frac`` of the run so
    the posterior cannot collapse to the prior before the decoders learn
    to read the code. Returns a per-epoch mean-loss curve; aborts on
    sustained divergence (5 epochs above 10x the initial loss).
    """
    gen = seed_everything(cfg["seed"])
    opt = torch.optim.Adam(model.parameters(), lr=cfg["gen.lr"], weight_decay=cfg["gen.weight_decay"])
    n_frames = dataset.grids.shape[0]
    batch = min(cfg["gen.batch_size"], n_frames)
    max_steps = cfg["gen.steps"] or None
    steps_per_epoch = (n_frames + batch - 1) // batch
    planned = cfg["gen.epochs"] * steps_per_epoch
    if max_steps:
        planned = min(planned, max_steps)
    warmup = max(1.0, cfg["gen.kl_warmup_frac"] * planned)
    curve = []
    initial = None
    bad_epochs = 0
    step = 0
    model.train()
    for epoch in range(cfg["gen.epochs"]):
        order = torch.randperm(n_frames, generator=gen)
        losses = []
        for start in range(0, n_frames, batch):
            idx = order[start : start + batch]
            weights = (
                cfg["gen.lambda_laplacian"],
                cfg["gen.lambda_unposed"],
                cfg["gen.lambda_template"],
                cfg["gen.lambda_kl"] * min(1.0, step / warmup),
            )
            total, _ = loss_generative(
                *_forward_batch(model, dataset, idx, gen),
                weights=weights,
                laplacian=model.laplacian,
            )
            if not torch.isfinite(total):
                raise RuntimeError(f"non-finite stage-1 loss at epoch {epoch}")
            opt.zero_grad()
            total.backward()
            opt.step()
            losses.append(float(total.detach()))
            step += 1
            if max_steps and step >= max_steps:
                break
        curve.append(float(np.mean(losses)))
        if initial is None:
            initial = curve[0]
        if curve[-1] > 10.0 * initial:
            bad_epochs += 1
            if bad_epochs >= 5:
                raise RuntimeError(
                    f"stage-1 divergence: loss {curve[-1]:.3e} above 10x initial "
                    f"{initial:.3e} for 5 epochs"
                )
        else:
            bad_epochs = 0
        if log_every and epoch % log_every == 0:
            logger.info("stage1 epoch %d loss %.6f", epoch, curve[-1])
        if max_steps and step >= max_steps:
            break
    model.eval()
    return curve


def _forward_batch(model, dataset, idx, generator):
    grids = dataset.grids[idx]
    posed_truth = dataset.posed[idx]
    unposed_truth = dataset.unposed[idx]
    posed, unposed, _, code = model(grids, sample=True, generator=generator)
    return posed, posed_truth, unposed, unposed_truth, model.template, code
