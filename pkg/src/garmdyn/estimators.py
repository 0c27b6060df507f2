"""Scikit-learn style facade over the three learned stages.

Each estimator stores its constructor parameters verbatim (so
``get_params`` / ``set_params`` and grid search compose), validates its
inputs, trains in ``fit`` and returns ``self``. The heavy lifting lives
in :mod:`garmdyn.generative`, :mod:`garmdyn.motion` and
:mod:`garmdyn.detail`; these wrappers own the glue: raster plans,
Laplacian operators, and config assembly.
"""

from __future__ import annotations

from types import SimpleNamespace

import numpy as np
import torch
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from garmdyn.config import load_config
from garmdyn.dataset import Stage3Data
from garmdyn.detail import enhance, train_detail
from garmdyn.generative import GenerativeModel, train_generative
from garmdyn.motion import MotionEncoder, rollout, train_motion
from garmdyn.torchops import LaplacianOp, PlanTensors, seed_everything
from garmdyn.uvmap import build_uv_raster_plan
from garmdyn.validation import check_positions

__all__ = ["GarmentAutoencoder", "MotionRegressor", "WrinkleEnhancer"]


def _sequences_to_frames(sequences, n_vertices):
    frames = np.concatenate([np.asarray(s, dtype=np.float32) for s in sequences])
    if frames.ndim != 3 or frames.shape[1] != n_vertices or frames.shape[2] != 3:
        raise ValueError(f"expected sequences of (frames, {n_vertices}, 3), got {frames.shape}")
    return frames


class GarmentAutoencoder(BaseEstimator):
    """Deformation-decomposed garment autoencoder (stage 1).

    fit(X, y): X posed garment frames (F, n, 3); y the matching unposed
    (inverse-skinned) targets. transform(X) returns latent means;
    inverse_transform(Z) decodes codes back to posed geometry.
    """

    def __init__(self, template=None, uv_size=64, latent_dim=128, epochs=50, steps=0,
                 lr=1e-4, batch_size=16, seed=0, base_channels=32, feature_dim=256):
        self.template = template
        self.uv_size = uv_size
        self.latent_dim = latent_dim
        self.epochs = epochs
        self.steps = steps
        self.lr = lr
        self.batch_size = batch_size
        self.seed = seed
        self.base_channels = base_channels
        self.feature_dim = feature_dim

    def _config(self):
        return load_config(overrides={
            "seed": self.seed,
            "uv.width": self.uv_size, "uv.height": self.uv_size,
            "gen.latent_dim": self.latent_dim, "gen.epochs": self.epochs,
            "gen.steps": self.steps, "gen.lr": self.lr, "gen.batch_size": self.batch_size,
            "gen.base_channels": self.base_channels, "gen.feature_dim": self.feature_dim,
        })

    def fit(self, X, y):
        if self.template is None:
            raise ValueError("GarmentAutoencoder requires a template")
        posed = np.asarray(X, dtype=np.float32)
        unposed = np.asarray(y, dtype=np.float32)
        if posed.shape != unposed.shape:
            raise ValueError("posed and unposed frame arrays must have the same shape")
        cfg = self._config()
        plan = build_uv_raster_plan(self.template, self.uv_size, self.uv_size)
        seed_everything(self.seed)
        model = GenerativeModel(
            PlanTensors(plan), LaplacianOp(self.template.one_ring), self.template.vertices,
            latent_dim=self.latent_dim, base_channels=self.base_channels,
            feature_dim=self.feature_dim, rec_hidden=cfg["gen.rec_hidden"],
            logvar_init=cfg["gen.logvar_init"],
        )

        data = SimpleNamespace()
        data.posed = torch.from_numpy(posed)
        data.unposed = torch.from_numpy(unposed)
        with torch.no_grad():
            data.grids = model.plan.project(data.posed)
        self.loss_curve_ = train_generative(data, model, cfg)
        self.model_ = model
        self.plan_ = plan
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("GarmentAutoencoder is not fitted")

    def transform(self, X):
        self._check_fitted()
        frames = torch.as_tensor(np.asarray(X, dtype=np.float32))
        with torch.no_grad():
            grids = self.model_.plan.project(frames)
            code = self.model_.encode(grids, sample=False)
        return code.mean.numpy()

    def inverse_transform(self, Z):
        self._check_fitted()
        codes = torch.as_tensor(np.asarray(Z, dtype=np.float32))
        with torch.no_grad():
            posed, _, _ = self.model_.decode(codes)
        return posed.numpy()

    def reconstruct(self, X):
        return self.inverse_transform(self.transform(X))


class MotionRegressor(BaseEstimator):
    """Motion-to-garment rollout model (stage 2) over a fitted autoencoder."""

    def __init__(self, autoencoder=None, hidden_size=500, epochs=20, lr=1e-4,
                 tbptt_window=50, use_previous_state=True, seed=0):
        self.autoencoder = autoencoder
        self.hidden_size = hidden_size
        self.epochs = epochs
        self.lr = lr
        self.tbptt_window = tbptt_window
        self.use_previous_state = use_previous_state
        self.seed = seed

    def fit(self, X, y):
        """X: list of motion clips (lists of MotionFrame); y: matching garment
        sequences (F, n, 3)."""
        if self.autoencoder is None or not hasattr(self.autoencoder, "model_"):
            raise ValueError("MotionRegressor requires a fitted GarmentAutoencoder")
        gen_model = self.autoencoder.model_
        cfg = load_config(overrides={
            "seed": self.seed, "motion.hidden_size": self.hidden_size,
            "motion.epochs": self.epochs, "motion.lr": self.lr,
            "motion.tbptt_window": self.tbptt_window,
            "motion.use_previous_state": self.use_previous_state,
            "gen.latent_dim": gen_model.latent_dim,
        })

        clips = []
        for motion, garment in zip(X, y):
            clip = SimpleNamespace()
            clip.poses = torch.tensor(np.stack([m.flat() for m in motion]), dtype=torch.float32)
            clip.posed = torch.as_tensor(np.asarray(garment, dtype=np.float32))
            with torch.no_grad():
                clip.grids = gen_model.plan.project(clip.posed)
                clip.codes = gen_model.encode(clip.grids, sample=False).mean
            clips.append(clip)
        data = SimpleNamespace()
        data.clips = clips
        data.pose_dim = clips[0].poses.shape[1]
        seed_everything(self.seed + 1)
        encoder = MotionEncoder(
            pose_dim=data.pose_dim, w=self.autoencoder.uv_size, h=self.autoencoder.uv_size,
            latent_dim=gen_model.latent_dim, hidden_size=self.hidden_size,
            base_channels=self.autoencoder.base_channels,
            feature_dim=self.autoencoder.feature_dim,
        )
        self.loss_curve_ = train_motion(data, encoder, gen_model, cfg)
        self.encoder_ = encoder
        return self

    def predict(self, motion, v0, return_codes=False):
        """Autoregressive garment sequence for one motion clip."""
        if not hasattr(self, "encoder_"):
            raise NotFittedError("MotionRegressor is not fitted")
        check_positions(v0, "v0")
        frames, codes = rollout(
            self.encoder_, self.autoencoder.model_, motion, v0, self.use_previous_state
        )
        return (frames, codes) if return_codes else frames


class WrinkleEnhancer(BaseEstimator):
    """Adversarially trained residual detail generator (stage 3)."""

    def __init__(self, autoencoder=None, epochs=10, lr=2e-4, batch_size=8,
                 adversarial=True, geometry_scale=100.0, seed=0):
        self.autoencoder = autoencoder
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.adversarial = adversarial
        self.geometry_scale = geometry_scale
        self.seed = seed

    def fit(self, X, y, codes=None):
        """X: stage-2 predicted frames (F, n, 3); y: ground truth; codes:
        per-frame latent codes (F, latent)."""
        if self.autoencoder is None or not hasattr(self.autoencoder, "model_"):
            raise ValueError("WrinkleEnhancer requires a fitted GarmentAutoencoder")
        if codes is None:
            raise ValueError("WrinkleEnhancer.fit requires the per-frame latent codes")
        gen_model = self.autoencoder.model_
        cfg = load_config(overrides={
            "seed": self.seed, "detail.epochs": self.epochs, "detail.lr": self.lr,
            "detail.batch_size": self.batch_size, "detail.adversarial": self.adversarial,
            "detail.geometry_scale": self.geometry_scale,
            "gen.latent_dim": gen_model.latent_dim,
        })
        from garmdyn.pipeline import build_detail_models

        data = Stage3Data(np.asarray(X), np.asarray(codes), np.asarray(y), gen_model.plan)
        seed_everything(self.seed + 2)
        generator, discriminator = build_detail_models(cfg, self.autoencoder.template.one_ring)
        self.loss_curve_ = train_detail(data, generator, discriminator, gen_model, cfg)
        self.generator_ = generator
        self.discriminator_ = discriminator
        return self

    def transform(self, X, codes=None):
        if not hasattr(self, "generator_"):
            raise NotFittedError("WrinkleEnhancer is not fitted")
        if codes is None:
            raise ValueError("WrinkleEnhancer.transform requires the per-frame latent codes")
        frames = torch.as_tensor(np.asarray(X, dtype=np.float32))
        z = torch.as_tensor(np.asarray(codes, dtype=np.float32))
        with torch.no_grad():
            out = enhance(self.generator_, frames, z)
        return out.numpy()
