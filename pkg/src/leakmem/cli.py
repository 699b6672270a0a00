"""Command-line entry points: train, probe, gradcheck, memory-inspect, eval.

Exit codes are a stable scripting contract: 0 success, 2 bad configuration,
3 numeric abort during training, 4 checkpoint problems, 5 missing capability.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

import numpy as np

from .checkpoint import load_checkpoint, restore_model, save_checkpoint, write_atomic
from .config import RunConfig, load_run_config, parse_run_config
from .errors import CapabilityError, CheckpointError, ConfigError, TrainingAborted
from .gradcheck import run_gradcheck
from .memory import SLOT_NORM_FLOOR, address_driven, address_motion_source
from .model import AnimationModel
from .motion import motion_difference
from .probe import feature_swap_sweep, motion_leakage_score, retrieval_fidelity, self_vs_cross_gap
from .training import heldout_alignment_kl, run_training
from .world import SyntheticWorld

EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_CHECKPOINT = 4
EXIT_CAPABILITY = 5


def _effective_config(path: str) -> RunConfig:
    cfg = load_run_config(path)
    env_seed = os.environ.get("LEAKMEM_SEED")
    if env_seed is not None:
        try:
            seed = int(env_seed)
        except ValueError as exc:
            raise ConfigError(f"LEAKMEM_SEED must be an integer, got {env_seed!r}") from exc
        cfg = RunConfig(world=cfg.world, model=cfg.model, train=replace(cfg.train, seed=seed))
    return cfg


def _dump_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def cmd_train(args) -> int:
    cfg = _effective_config(args.config)
    world = SyntheticWorld(cfg.world)
    model, metrics = run_training(world, cfg.model, cfg.train)
    os.makedirs(args.out, exist_ok=True)
    snapshot = cfg.to_dict()
    write_atomic(os.path.join(args.out, "config.json"), _dump_json(snapshot).encode("utf-8"))
    lines = "".join(json.dumps(rec) + "\n" for rec in metrics)
    write_atomic(os.path.join(args.out, "metrics.jsonl"), lines.encode("utf-8"))
    ckpt_path = os.path.join(args.out, "checkpoint.bin")
    save_checkpoint(ckpt_path, model.parameters(), snapshot)
    final = metrics[-1] if metrics else {}
    print(json.dumps({"checkpoint": ckpt_path, "steps": cfg.train.steps,
                      "final": final}, sort_keys=True))
    return 0


def load_model_from_checkpoint(path: str):
    """Rebuild (model, world, run config) from a checkpoint file."""
    params, config, _ = load_checkpoint(path)
    cfg = parse_run_config(config)
    world = SyntheticWorld(cfg.world)
    model = AnimationModel(cfg.world.d_img, cfg.model, seed=0,
                           emi_on=cfg.train.emi_on, edi_on=cfg.train.edi_on)
    restore_model(model, params)
    return model, world, cfg


def cmd_probe(args) -> int:
    model, world, _ = load_model_from_checkpoint(args.ckpt)
    report = feature_swap_sweep(model, world, setting=args.setting,
                                pairs=args.pairs, seed=args.seed)
    out_dir = args.out or os.path.dirname(os.path.abspath(args.ckpt))
    os.makedirs(out_dir, exist_ok=True)
    json_path = os.path.join(out_dir, f"probe_{args.setting}.json")
    csv_path = os.path.join(out_dir, f"probe_{args.setting}.csv")
    write_atomic(json_path, _dump_json(report.to_dict()).encode("utf-8"))
    write_atomic(csv_path, report.to_csv().encode("utf-8"))
    print(json.dumps({"json": json_path, "csv": csv_path}, sort_keys=True))
    return 0


def cmd_gradcheck(args) -> int:
    report = run_gradcheck(probes=args.probes, seed=args.seed)
    text = _dump_json(report)
    if args.out:
        write_atomic(args.out, text.encode("utf-8"))
    sys.stdout.write(text)
    return 0 if report["all_passed"] else 1


def cmd_memory_inspect(args) -> int:
    params, config, _ = load_checkpoint(args.ckpt)
    for needed in ("edi.M_d", "edi.M_ms"):
        if needed not in params:
            raise CapabilityError(f"checkpoint has no detail memory (missing {needed})")
    model, world, _ = load_model_from_checkpoint(args.ckpt)
    banks = model.detail.banks
    rng = np.random.default_rng(np.random.SeedSequence([args.seed, 0x1324]))
    obs_s, obs_d, *_ = world.sample_pair_batch(rng, args.batch, cross=False)
    feats_s = model.encode(obs_s.astype(model.dtype))
    feats_d = model.encode(obs_d.astype(model.dtype))
    z_s = model.motion_embed(feats_s)
    z_d = model.motion_embed(feats_d)
    omega_d = address_driven(model.detail.compressor(feats_d.grids[3]), banks).data
    omega_ms = address_motion_source(model.detail.compressor(feats_s.grids[3]),
                                     motion_difference(z_d, z_s), banks).data

    def entropy(weights: np.ndarray) -> float:
        mean = weights.mean(axis=0)
        mean = mean / mean.sum()
        return float(-(mean * np.log(np.maximum(mean, 1e-12))).sum())

    norms = np.linalg.norm(banks.m_d.data, axis=1)
    unit = banks.m_d.data / np.maximum(norms[:, None], 1e-12)
    cosines = unit @ unit.T
    upper = cosines[np.triu_indices(len(norms), k=1)]
    counts, edges = np.histogram(upper, bins=20, range=(-1.0, 1.0))
    stats = {
        "slots": int(banks.slots),
        "slot_norms": [float(x) for x in norms],
        "min_slot_norm": float(norms.min()),
        "norm_floor": SLOT_NORM_FLOOR,
        "pairwise_cosine_hist": {"counts": counts.tolist(),
                                 "edges": [float(e) for e in edges]},
        "mean_address_driven": [float(x) for x in omega_d.mean(axis=0)],
        "mean_address_motion_source": [float(x) for x in omega_ms.mean(axis=0)],
        "usage_entropy_driven": entropy(omega_d),
        "usage_entropy_motion_source": entropy(omega_ms),
        "max_usage_entropy": float(np.log(banks.slots)),
    }
    text = _dump_json(stats)
    if args.out:
        write_atomic(args.out, text.encode("utf-8"))
    sys.stdout.write(text)
    return 0


def cmd_eval(args) -> int:
    model, world, cfg = load_model_from_checkpoint(args.ckpt)
    rng = np.random.default_rng(np.random.SeedSequence([args.seed, 0xE7A1]))
    held_s, held_d, *_ = world.sample_pair_batch(rng, cfg.train.eval_pairs, cross=False)
    rec_self, rec_cross = self_vs_cross_gap(model, world, seed=args.seed)
    suite = {
        "motion_leakage_r2": motion_leakage_score(model, world, seed=args.seed),
        "heldout_align_kl": heldout_alignment_kl(model, held_s, held_d),
        "retrieval_fidelity": retrieval_fidelity(model, world, seed=args.seed),
        "rec_error_self": rec_self,
        "rec_error_cross": rec_cross,
        "cross_minus_self_gap": rec_cross - rec_self,
    }
    text = _dump_json(suite)
    if args.out:
        write_atomic(args.out, text.encode("utf-8"))
    sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="leakmem",
        description="Train and probe the identity-leakage taming toy pipeline.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model from a JSON config")
    p_train.add_argument("--config", required=True, help="path to the run config")
    p_train.add_argument("--out", required=True, help="output directory")
    p_train.set_defaults(func=cmd_train)

    p_probe = sub.add_parser("probe", help="run the feature-swap leakage sweep")
    p_probe.add_argument("--ckpt", required=True)
    p_probe.add_argument("--setting", required=True, choices=("self", "cross"))
    p_probe.add_argument("--pairs", type=int, default=200)
    p_probe.add_argument("--seed", type=int, default=0)
    p_probe.add_argument("--out", default=None, help="output directory (default: beside ckpt)")
    p_probe.set_defaults(func=cmd_probe)

    p_grad = sub.add_parser("gradcheck", help="finite-difference check of all primitives")
    p_grad.add_argument("--probes", type=int, default=100)
    p_grad.add_argument("--seed", type=int, default=0)
    p_grad.add_argument("--out", default=None)
    p_grad.set_defaults(func=cmd_gradcheck)

    p_mem = sub.add_parser("memory-inspect", help="dump slot statistics as JSON")
    p_mem.add_argument("--ckpt", required=True)
    p_mem.add_argument("--batch", type=int, default=256)
    p_mem.add_argument("--seed", type=int, default=0)
    p_mem.add_argument("--out", default=None)
    p_mem.set_defaults(func=cmd_memory_inspect)

    p_eval = sub.add_parser("eval", help="run the acceptance metric suite on a checkpoint")
    p_eval.add_argument("--ckpt", required=True)
    p_eval.add_argument("--seed", type=int, default=0)
    p_eval.add_argument("--out", default=None)
    p_eval.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingAborted as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except CapabilityError as exc:
        print(f"capability error: {exc}", file=sys.stderr)
        return EXIT_CAPABILITY


if __name__ == "__main__":
    sys.exit(main())
