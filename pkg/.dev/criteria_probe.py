import json, time
import numpy as np
from leakmem.world import SyntheticWorld, WorldConfig
from leakmem.model import ModelConfig
from leakmem.training import TrainConfig, run_training
from leakmem.probe import (motion_leakage_score, self_vs_cross_gap,
                           retrieval_fidelity, feature_swap_sweep)

def variant(name, seed, **flags):
    world = SyntheticWorld(WorldConfig(seed=0))
    tc = TrainConfig(steps=5000, seed=seed, **flags)
    t0 = time.time()
    model, metrics = run_training(world, ModelConfig(), tc)
    out = {"name": name, "seed": seed, "train_s": round(time.time()-t0,1)}
    out["leakage_r2"] = motion_leakage_score(model, world, seed=0)
    rs, rc = self_vs_cross_gap(model, world, seed=0)
    out["rec_self"], out["rec_cross"], out["gap"] = rs, rc, rc-rs
    if flags.get("edi_on", True):
        out["retrieval"] = retrieval_fidelity(model, world, seed=0)
        kls = [(m["step"], m["heldout_align_kl"]) for m in metrics if "heldout_align_kl" in m]
        out["kl_first"], out["kl_last"] = kls[0][1], kls[-1][1]
        # window means after step 500
        wm = {}
        for s, v in kls:
            if s >= 500: wm.setdefault(s//100, []).append(v)
        means = [float(np.mean(wm[k])) for k in sorted(wm)]
        viol = sum(1 for a,b in zip(means, means[1:]) if b > a + 1e-9)
        out["kl_windows_violations"] = viol
        out["kl_window_first3"] = [round(x,5) for x in means[:3]]
        out["kl_window_last3"] = [round(x,5) for x in means[-3:]]
    if name == "bare" :
        rep = feature_swap_sweep(model, world, "cross", seed=0)
        base = rep.baseline.sim_to_driven
        out["swap_shift"] = {k: round(r.sim_to_driven - base, 4) for k, r in rep.scales.items()}
    out["first_Lrec"] = metrics[0]["L_rec"]; out["last_Lrec"] = metrics[-1]["L_rec"]
    print(json.dumps(out), flush=True)
    return out

for seed in (0, 1, 2):
    variant("full", seed)
    variant("ldis_off", seed, ldis_on=False)
    variant("edi_off", seed, edi_on=False)
    variant("bare", seed, emi_on=False, edi_on=False, ldis_on=False)
