"""Learned garment dynamics on articulated bodies.

The package is organized around a three-stage pipeline:

1. a generative autoencoder over garment geometry that decomposes each
   posed frame into an unposed shape plus a dynamic offset field,
2. a recurrent motion encoder that maps body motion and the previous
   garment state into the frozen generative latent space for
   autoregressive rollout,
3. an adversarially trained detail generator that restores
   high-frequency wrinkles on top of the rollout.

Supporting machinery: UV-space rasterization, seed-point skinning with
an inverse-skinning approximation, collision post-processing, sequence
metrics, and a bundled mass-spring cloth simulator that serves as the
synthetic data oracle.

High-level, scikit-learn style entry points live in
:mod:`garmdyn.estimators`; the staged command-line pipeline in
:mod:`garmdyn.cli`.
"""

from garmdyn.mesh import GarmentTemplate, mesh_laplacian, vertex_normals
from garmdyn.uvmap import UVGrid, UVRasterPlan, build_uv_raster_plan, project_to_uv, sample_from_uv
from garmdyn.skinning import (
    BodyModel,
    MotionFrame,
    SeedRig,
    SeedTransforms,
    lbs_forward,
    lbs_inverse,
    sample_seed_points,
    seed_transforms,
    skinning_weights,
)
from garmdyn.metrics import hausdorff, rmse, sted

__version__ = "0.1.0"

__all__ = [
    "GarmentTemplate",
    "mesh_laplacian",
    "vertex_normals",
    "UVGrid",
    "UVRasterPlan",
    "build_uv_raster_plan",
    "project_to_uv",
    "sample_from_uv",
    "BodyModel",
    "MotionFrame",
    "SeedRig",
    "SeedTransforms",
    "sample_seed_points",
    "skinning_weights",
    "seed_transforms",
    "lbs_forward",
    "lbs_inverse",
    "rmse",
    "hausdorff",
    "sted",
]
