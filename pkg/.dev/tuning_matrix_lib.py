import json, time
import numpy as np
from leakmem.world import SyntheticWorld, WorldConfig
from leakmem.model import ModelConfig
from leakmem.training import TrainConfig, run_training
from leakmem.probe import motion_leakage_score, self_vs_cross_gap, retrieval_fidelity
from leakmem.memory import address_driven, address_motion_source
from leakmem.motion import motion_difference

def diagnose(model, world):
    rng = np.random.default_rng(99)
    obs_s, obs_d, src_ids, drv_ids, _, _ = world.sample_pair_batch(rng, 256, cross=False)
    fs = model.encode(obs_s.astype(np.float32)); fd = model.encode(obs_d.astype(np.float32))
    z_s = model.motion_embed(fs); z_d = model.motion_embed(fd)
    f_s_pi = model.detail.compressor(fs.grids[3]).data
    f_d_pi = model.detail.compressor(fd.grids[3]).data
    z_ds = z_d.data - z_s.data
    d = {}
    d["norm_fpi"] = float(np.linalg.norm(f_s_pi, axis=1).mean())
    d["norm_zds"] = float(np.linalg.norm(z_ds, axis=1).mean())
    d["norm_z"] = float(np.linalg.norm(z_d.data, axis=1).mean())
    # token identity separation (driven tokens)
    t = f_d_pi / (np.linalg.norm(f_d_pi, axis=1, keepdims=True) + 1e-12)
    cos = t @ t.T
    same = np.equal.outer(drv_ids, drv_ids)
    iu = np.triu_indices(len(t), 1)
    d["tok_cos_same"] = float(cos[iu][same[iu]].mean())
    d["tok_cos_diff"] = float(cos[iu][~same[iu]].mean())
    om_d = address_driven(model.detail.compressor(fd.grids[3]), model.detail.banks).data
    from leakmem.autodiff import Tensor
    om_ms = address_motion_source(model.detail.compressor(fs.grids[3]),
                                  Tensor(z_ds.astype(np.float32)), model.detail.banks).data
    ent = lambda w: float(-(w*np.log(w+1e-12)).sum(axis=1).mean())
    d["ent_omega_d"] = ent(om_d); d["ent_omega_ms"] = ent(om_ms)
    d["max_ln_s"] = float(np.log(om_d.shape[1]))
    rec = om_d @ model.detail.banks.m_d.data
    d["dmem_rel"] = float((np.linalg.norm(rec - f_d_pi, axis=1) /
                           (np.linalg.norm(f_d_pi, axis=1)+1e-12)).mean())
    return d

def run(tag, seed=0, lam_align=1.0, lam_dmem=1.0, lam_dis=1.0, steps=5000):
    world = SyntheticWorld(WorldConfig(seed=0))
    tc = TrainConfig(steps=steps, seed=seed, lambda_align=lam_align,
                     lambda_dmem=lam_dmem, lambda_dis=lam_dis)
    t0 = time.time()
    model, metrics = run_training(world, ModelConfig(), tc)
    kls = [(m["step"], m["heldout_align_kl"]) for m in metrics if "heldout_align_kl" in m]
    wm = {}
    for s, v in kls:
        if s >= 500: wm.setdefault(s//100, []).append(v)
    means = [float(np.mean(wm[k])) for k in sorted(wm)]
    viol = sum(1 for a,b in zip(means, means[1:]) if b > a + 1e-9)
    out = {"tag": tag, "seed": seed, "t": round(time.time()-t0,1),
           "retr": retrieval_fidelity(model, world, seed=0),
           "leak": round(motion_leakage_score(model, world, seed=0), 3),
           "kl_last": round(kls[-1][1], 5), "kl_viol": viol}
    rs, rc = self_vs_cross_gap(model, world, seed=0)
    out["rec_self"], out["rec_cross"], out["gap"] = round(rs,4), round(rc,4), round(rc-rs,5)
    out.update({k: round(v,4) for k,v in diagnose(model, world).items()})
    print(json.dumps(out), flush=True)

