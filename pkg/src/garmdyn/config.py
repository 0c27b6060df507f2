"""Layered key = value configuration with strict key checking.

Defaults live here; an experiment file overlays them. Unknown keys are
errors so a typo in one of the three training stages cannot silently
fall back to a default.
"""

from __future__ import annotations

__all__ = ["DEFAULTS", "load_config", "parse_config_file", "format_config"]

DEFAULTS = {
    "seed": 0,
    # UV grid
    "uv.width": 128,
    "uv.height": 128,
    # seed rig
    "rig.seeds": 100,
    "rig.assoc_radius_scale": 1.5,
    # stage 1: generative model
    "gen.latent_dim": 128,
    "gen.feature_dim": 256,
    "gen.base_channels": 32,
    "gen.rec_hidden": 512,
    "gen.epochs": 500,
    "gen.steps": 0,  # optional hard cap on optimizer steps; 0 = epochs only
    "gen.lr": 1e-4,
    "gen.weight_decay": 1e-3,
    "gen.batch_size": 56,
    "gen.lambda_laplacian": 3.5,
    "gen.lambda_unposed": 0.1,
    "gen.lambda_template": 0.05,
    "gen.lambda_kl": 1e-3,
    "gen.logvar_init": -1.0,
    "gen.kl_warmup_frac": 0.5,
    # stage 2: motion encoder
    "motion.hidden_size": 500,
    "motion.epochs": 300,
    "motion.lr": 1e-4,
    "motion.weight_decay": 1e-3,
    "motion.batch_size": 1,
    "motion.tbptt_window": 50,
    "motion.lambda_laplacian": 1.5,
    "motion.lambda_latent": 0.5,
    "motion.scheduled_sampling": False,
    "motion.use_previous_state": True,
    # stage 3: detail enhancement
    "detail.edgeconv_dims": "3,8,10",
    "detail.global_hidden": 64,
    "detail.global_dim": 64,
    "detail.epochs": 100,
    "detail.lr": 2e-4,
    "detail.weight_decay": 1e-3,
    "detail.batch_size": 8,
    "detail.geometry_scale": 100.0,
    "detail.fake_target": -1.0,
    "detail.disc_channels": 32,
    "detail.adversarial": True,
    # collision post-processing
    "collision.epsilon": 1e-3,
    "collision.max_iterations": 200,
    "collision.step_size": 1e-2,
    "collision.tolerance": 1e-8,
    "collision.refresh_closest": True,
    "collision.normalize_hinge": True,
    # metrics
    "sted.temporal_weight": 1.0,
    "sted.displacement_floor": 1e-6,
    # synthetic scene
    "sim.garment_cols": 24,
    "sim.garment_rows": 16,
    "sim.waist_radius": 0.16,
    "sim.hem_radius": 0.34,
    "sim.waist_height": 1.0,
    "sim.hem_height": 0.42,
    "sim.mass_total": 0.4,
    "sim.stretch_stiffness": 80.0,
    "sim.shear_stiffness": 20.0,
    "sim.bend_stiffness": 1.5,
    "sim.damping": 1.2,
    "sim.gravity": 9.81,
    "sim.substeps": 16,
    "sim.fps": 30.0,
    "sim.collision_offset": 3e-3,
    "sim.friction": 0.3,
    "sim.capsule_segments": 10,
    "sim.capsule_rings": 7,
    # dataset generation
    "data.n_clips": 10,
    "data.frames_per_clip": 150,
    "data.test_frames_per_clip": 0,  # 0 = same as frames_per_clip
    "data.train_fraction": 0.7,
    "data.motion_kinds": "sway,twist,mix",
}


def _coerce(key, text):
    default = DEFAULTS[key]
    if isinstance(default, bool):
        low = text.strip().lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"config key {key}: expected boolean, got {text!r}")
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    return text.strip()


def parse_config_file(path):
    """Parse one ``key = value`` file; '#' starts a comment. Unknown keys raise."""
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (part.strip() for part in stripped.split("=", 1))
            if key not in DEFAULTS:
                raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
            out[key] = _coerce(key, value)
    return out


def load_config(overlay_paths=(), overrides=None):
    """Defaults, overlaid by files in order, then by an in-process dict."""
    cfg = dict(DEFAULTS)
    for path in overlay_paths:
        cfg.update(parse_config_file(path))
    if overrides:
        for key, value in overrides.items():
            if key not in DEFAULTS:
                raise ValueError(f"unknown config key {key!r}")
            cfg[key] = value
    return cfg


def format_config(cfg):
    """Render a config dict back to canonical key = value text."""
    lines = [f"{key} = {cfg[key]}" for key in sorted(cfg)]
    return "\n".join(lines) + "\n"
