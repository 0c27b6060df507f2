import time, numpy as np, torch
from types import SimpleNamespace
from garmdyn.config import load_config
from garmdyn.simulate import SyntheticSceneConfig, make_motion_script, simulate_clip
from garmdyn.dataset import build_rig, unposed_targets
from garmdyn.uvmap import build_uv_raster_plan
from garmdyn.torchops import PlanTensors, LaplacianOp, seed_everything
from garmdyn.generative import GenerativeModel, train_generative

scene = SyntheticSceneConfig()
motion = make_motion_script("sway", 50, amplitude_deg=28, period_s=2.0)
garment, _ = simulate_clip(scene, motion)
rig = build_rig(scene.body, scene.template, 48)
unposed = unposed_targets(garment, motion, scene.body, rig)
plan = build_uv_raster_plan(scene.template, 64, 64)
bbox = scene.template.bbox_diagonal()

def run(tag, lr, lvb, warmup, steps=2000, seed=3):
    cfg = load_config(overrides={
        "seed": seed, "uv.width": 64, "uv.height": 64,
        "gen.epochs": 10**6, "gen.steps": steps, "gen.batch_size": 16, "gen.lr": lr,
        "gen.logvar_init": lvb, "gen.kl_warmup_frac": warmup,
    })
    seed_everything(seed)
    model = GenerativeModel(PlanTensors(plan), LaplacianOp(scene.template.one_ring),
                            scene.template.vertices, logvar_init=lvb)
    data = SimpleNamespace()
    data.posed = torch.from_numpy(garment.astype(np.float32))
    data.unposed = torch.from_numpy(unposed.astype(np.float32))
    with torch.no_grad():
        data.grids = model.plan.project(data.posed)
    t0 = time.time()
    train_generative(data, model, cfg, log_every=0)
    with torch.no_grad():
        posed, _, _, code = model(data.grids, sample=False)
        rmse = float(torch.sqrt(((posed - data.posed)**2).sum(-1).mean()))
    kl = float((0.5*(code.mean**2 + code.logvar.exp() - 1 - code.logvar)).sum(-1).mean())
    agg = np.abs(code.mean.numpy().mean(0)).max()
    g2 = torch.Generator(); g2.manual_seed(99)
    with torch.no_grad():
        c2 = model.encode(data.grids, sample=True, generator=g2)
    var = c2.sample.numpy().var(axis=0)
    print(f"{tag}: rmse/bbox={rmse/bbox:.4f} kl={kl:.1f} aggmean={agg:.3f} "
          f"var=[{var.min():.2f},{var.max():.2f}] t={time.time()-t0:.0f}s", flush=True)

run("lvb-1-warm.5", 1e-3, -1.0, 0.5)
run("lvb0-warm.5", 1e-3, 0.0, 0.5)
run("lvb-1-nowarm", 1e-3, -1.0, 0.0)
