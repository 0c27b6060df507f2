import time, numpy as np, torch
from types import SimpleNamespace
from garmdyn.config import load_config
from garmdyn.simulate import SyntheticSceneConfig, make_motion_script, simulate_clip
from garmdyn.dataset import build_rig, unposed_targets
from garmdyn.uvmap import build_uv_raster_plan
from garmdyn.torchops import PlanTensors, LaplacianOp, seed_everything
from garmdyn.generative import GenerativeModel, train_generative
import garmdyn.generative as G

scene = SyntheticSceneConfig()
motion = make_motion_script("sway", 50, amplitude_deg=28, period_s=2.0)
garment, _ = simulate_clip(scene, motion)
rig = build_rig(scene.body, scene.template, 48)
unposed = unposed_targets(garment, motion, scene.body, rig)
plan = build_uv_raster_plan(scene.template, 64, 64)
bbox = scene.template.bbox_diagonal()

mean_shape = garment.mean(axis=0)
base_rmse = np.sqrt(((garment - mean_shape) ** 2).sum(-1).mean())
print(f"predict-the-mean RMSE/bbox = {base_rmse / bbox:.4f}", flush=True)

orig_forward = G._forward_batch

def det_forward(model, dataset, idx, generator):
    grids = dataset.grids[idx]
    posed, unposedp, _, code = model(grids, sample=False)
    return posed, dataset.posed[idx], unposedp, dataset.unposed[idx], model.template, code

def run(tag, lr, lv_bias, lam_kl, sample, steps=2000, seed=3, mean_scale=1.0):
    cfg = load_config(overrides={
        "seed": seed, "uv.width": 64, "uv.height": 64,
        "gen.epochs": 10 ** 6, "gen.steps": steps, "gen.batch_size": 16, "gen.lr": lr,
        "gen.lambda_kl": lam_kl,
    })
    seed_everything(seed)
    model = GenerativeModel(PlanTensors(plan), LaplacianOp(scene.template.one_ring), scene.template.vertices)
    with torch.no_grad():
        for hw in (model.encoder.mean_static.weight, model.encoder.mean_dynamic.weight):
            hw.mul_(mean_scale / 0.1)
        model.encoder.logvar_head.bias.fill_(lv_bias)
    data = SimpleNamespace()
    data.posed = torch.from_numpy(garment.astype(np.float32))
    data.unposed = torch.from_numpy(unposed.astype(np.float32))
    with torch.no_grad():
        data.grids = model.plan.project(data.posed)
    G._forward_batch = det_forward if not sample else orig_forward
    t0 = time.time()
    train_generative(data, model, cfg, log_every=0)
    G._forward_batch = orig_forward
    with torch.no_grad():
        posed, _, _, code = model(data.grids, sample=False)
        rmse = float(torch.sqrt(((posed - data.posed) ** 2).sum(-1).mean()))
    kl = float((0.5 * (code.mean ** 2 + code.logvar.exp() - 1 - code.logvar)).sum(-1).mean())
    agg = np.abs(code.mean.numpy().mean(0)).max()
    gen = torch.Generator(); gen.manual_seed(99)
    with torch.no_grad():
        c2 = model.encode(data.grids, sample=True, generator=gen)
    var = c2.sample.numpy().var(axis=0)
    print(f"{tag}: rmse/bbox={rmse / bbox:.4f} kl={kl:.2f} aggmean={agg:.3f} "
          f"var=[{var.min():.2f},{var.max():.2f}] t={time.time() - t0:.0f}s", flush=True)

run("pureAE-lr1e-3", 1e-3, -3.0, 0.0, sample=False)
run("VAE-lr3e-3-lvb3", 3e-3, -3.0, 1e-3, sample=True)
run("VAE-lr1e-3-lvb6", 1e-3, -6.0, 1e-3, sample=True)
