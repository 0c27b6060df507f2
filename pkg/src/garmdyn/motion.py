"""Dynamic motion encoder: body motion + previous garment state -> latent code.

A recurrent branch consumes the flattened pose (canonicalized unit
quaternions + root translation) while a convolutional branch encodes the
previous garment frame's texture-space position map; one fused linear
layer lands in the frozen generative latent space, whose decoders then
produce the garment. Rollout is autoregressive: each prediction becomes
the next step's previous state.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from garmdyn.generative import LEAK
from garmdyn.torchops import mean_vertex_norm, seed_everything, state_dict_hash

logger = logging.getLogger(__name__)

__all__ = [
    "MotionEncoder",
    "RolloutState",
    "predict_frame",
    "rollout",
    "loss_motion",
    "train_motion",
]


class MotionEncoder(nn.Module):
    """fc+GRU motion branch, conv garment branch, linear fusion to the latent."""

    def __init__(self, pose_dim, w, h, latent_dim=128, hidden_size=500,
                 base_channels=32, feature_dim=256):
        super().__init__()
        c = base_channels
        self.pose_fc = nn.Linear(pose_dim, hidden_size)
        self.gru = nn.GRUCell(hidden_size, hidden_size)
        def block(cin, cout):
            return [nn.Conv2d(cin, cout, 4, stride=2, padding=1), nn.InstanceNorm2d(cout, affine=True), nn.LeakyReLU(LEAK)]
        self.state_conv = nn.Sequential(
            *block(3, c), *block(c, 2 * c), *block(2 * c, 4 * c), *block(4 * c, 8 * c)
        )
        self.state_fc = nn.Linear(8 * c * (w // 16) * (h // 16), feature_dim)
        self.fuse = nn.Linear(hidden_size + feature_dim, latent_dim)
        self.hidden_size = hidden_size
        self.latent_dim = latent_dim

    def forward(self, pose, prev_grid, hidden):
        """One step: returns (latent code (B, latent), new hidden (B, hidden))."""
        m = torch.nn.functional.leaky_relu(self.pose_fc(pose), LEAK)
        new_hidden = self.gru(m, hidden)
        s = self.state_conv(prev_grid)
        s = torch.nn.functional.leaky_relu(self.state_fc(s.flatten(1)), LEAK)
        code = self.fuse(torch.cat([new_hidden, s], dim=-1))
        return code, new_hidden

    def forward_sequence(self, poses, prev_grids, hidden):
        """Stepwise application over a whole sequence with carried state."""
        codes = []
        for t in range(poses.shape[0]):
            code, hidden = self.forward(poses[t : t + 1], prev_grids[t : t + 1], hidden)
            codes.append(code)
        return torch.cat(codes, dim=0), hidden

    def initial_hidden(self, batch=1):
        return torch.zeros(batch, self.hidden_size)


@dataclass
class RolloutState:
    """Single-owner autoregressive state: recurrent hidden + previous garment."""

    hidden: torch.Tensor  # (1, hidden_size)
    prev_garment: torch.Tensor  # (n, 3)

    def to_arrays(self):
        return {
            "hidden": self.hidden.detach().cpu().numpy(),
            "prev_garment": self.prev_garment.detach().cpu().numpy(),
        }

    @classmethod
    def from_arrays(cls, arrays):
        return cls(
            hidden=torch.as_tensor(np.asarray(arrays["hidden"]), dtype=torch.float32),
            prev_garment=torch.as_tensor(np.asarray(arrays["prev_garment"]), dtype=torch.float32),
        )


def motion_encode(encoder, gen_model, pose_flat, state: RolloutState, use_previous_state=True):
    """Map one motion frame + the carried state to a latent code.

    The previous garment is projected to its position map first; the
    zero-previous-state ablation feeds an all-zero garment instead.
    """
    pose = torch.as_tensor(pose_flat, dtype=torch.float32).reshape(1, -1)
    prev = state.prev_garment.reshape(1, -1, 3)
    if not use_previous_state:
        prev = torch.zeros_like(prev)
    grid = gen_model.plan.project(prev)
    code, hidden = encoder(pose, grid, state.hidden)
    return code, RolloutState(hidden=hidden, prev_garment=state.prev_garment)


def predict_frame(code, gen_model):
    """Decode a latent code with the frozen generative decoders."""
    posed, _, _ = gen_model.decode(code)
    return posed


def rollout(encoder, gen_model, motions, v0, use_previous_state=True):
    """Autoregressive prediction over a motion clip.

    ``motions`` is a sequence of MotionFrame; ``v0`` the (n, 3) initial
    garment. Returns (frames (F, n, 3) float32 including v0 at index 0,
    latent codes (F-1, latent)). A non-finite prediction truncates the
    rollout with a warning.
    """
    encoder.eval()
    gen_model.eval()
    v0 = torch.as_tensor(np.asarray(v0), dtype=torch.float32)
    state = RolloutState(hidden=encoder.initial_hidden(), prev_garment=v0)
    frames = [v0]
    codes = []
    with torch.no_grad():
        for t in range(1, len(motions)):
            code, state = motion_encode(
                encoder, gen_model, motions[t].flat(), state, use_previous_state
            )
            pred = predict_frame(code, gen_model)[0]
            if not torch.isfinite(pred).all():
                warnings.warn(f"non-finite prediction at frame {t}; truncating rollout")
                break
            frames.append(pred)
            codes.append(code[0])
            state = RolloutState(hidden=state.hidden, prev_garment=pred)
    return torch.stack(frames).numpy(), torch.stack(codes).numpy() if codes else np.zeros((0, encoder.latent_dim))


def loss_motion(posed, posed_truth, code, code_truth, lam_lap, lam_latent, laplacian):
    """Stage-2 objective: geometry + Laplacian + latent consistency terms."""
    geo = mean_vertex_norm(posed - posed_truth)
    geo_lap = mean_vertex_norm(laplacian(posed) - laplacian(posed_truth))
    latent = (code - code_truth).norm(dim=-1).mean()
    total = geo + lam_lap * geo_lap + lam_latent * latent
    return total, {"geo": float(geo.detach()), "geo_lap": float(geo_lap.detach()), "latent": float(latent.detach())}


def train_motion(dataset, encoder, gen_model, cfg, log_every=20):
    """Teacher-forced training with truncated backpropagation through time.

    ``dataset`` provides per-clip tensors: ``poses`` (F, pose_dim),
    ``posed`` (F, n, 3) ground truth, ``grids`` (F, 3, w, h) projected
    ground truth, and ``codes`` (F, latent) frozen-encoder targets.
    Stage-1 parameters are frozen and hash-checked.
    """
    seed_everything(cfg["seed"] + 2)
    for p in gen_model.parameters():
        p.requires_grad_(False)
    gen_model.eval()
    frozen_hash = state_dict_hash(gen_model.state_dict())

    use_prev = cfg["motion.use_previous_state"]
    window = cfg["motion.tbptt_window"]
    lam_lap = cfg["motion.lambda_laplacian"]
    lam_latent = cfg["motion.lambda_latent"]
    opt = torch.optim.Adam(encoder.parameters(), lr=cfg["motion.lr"], weight_decay=cfg["motion.weight_decay"])

    curve = []
    initial = None
    bad_epochs = 0
    encoder.train()
    for epoch in range(cfg["motion.epochs"]):
        losses = []
        for clip in dataset.clips:
            poses = clip.poses
            hidden = encoder.initial_hidden()
            # predict frames 1..F-1 from ground-truth previous frames
            for start in range(1, poses.shape[0], window):
                end = min(start + window, poses.shape[0])
                total = 0.0
                for t in range(start, end):
                    prev_grid = clip.grids[t - 1 : t] if use_prev else torch.zeros_like(clip.grids[:1])
                    code, hidden = encoder(poses[t : t + 1], prev_grid, hidden)
                    posed, _, _ = gen_model.decode(code)
                    step_loss, _ = loss_motion(
                        posed, clip.posed[t : t + 1], code, clip.codes[t : t + 1],
                        lam_lap, lam_latent, gen_model.laplacian,
                    )
                    total = total + step_loss
                total = total / (end - start)
                if not torch.isfinite(total):
                    raise RuntimeError(f"non-finite stage-2 loss at epoch {epoch}")
                opt.zero_grad()
                total.backward()
                opt.step()
                hidden = hidden.detach()
                losses.append(float(total.detach()))
        curve.append(float(np.mean(losses)))
        if initial is None:
            initial = curve[0]
        if curve[-1] > 10.0 * initial:
            bad_epochs += 1
            if bad_epochs >= 5:
                raise RuntimeError(
                    f"stage-2 divergence: loss {curve[-1]:.3e} above 10x initial {initial:.3e}"
                )
        else:
            bad_epochs = 0
        if log_every and epoch % log_every == 0:
            logger.info("stage2 epoch %d loss %.6f", epoch, curve[-1])
    encoder.eval()
    if state_dict_hash(gen_model.state_dict()) != frozen_hash:
        raise RuntimeError("stage-2 training mutated frozen generative parameters")
    return curve
