"""Leakage measurement harness.

Identity leakage is quantified with closed-form ridge probes: how well a
linear map recovers the ground-truth identity latent from a representation.
The swap sweep regenerates outputs with driven-side features substituted into
the skip path one scale at a time, mirroring the intermediate-variable
replacement experiment that motivated the detail memory.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, NumericError, NotFittedError
from .model import AnimationModel
from .validation import check_observations
from .world import SyntheticWorld


def r_squared(y_true: np.ndarray, y_pred: np.ndarray) -> float:
    """Variance-weighted coefficient of determination."""
    y_true = np.asarray(y_true, dtype=np.float64)
    y_pred = np.asarray(y_pred, dtype=np.float64)
    sse = float(((y_true - y_pred) ** 2).sum())
    sst = float(((y_true - y_true.mean(axis=0)) ** 2).sum())
    return 1.0 - sse / sst


class IdentityProbe:
    """Closed-form ridge regressor from a representation to identity latents.

    sklearn-style surface: ``fit(X, Y)``, ``predict(X)``, ``score(X, Y)``.
    The fit is deterministic (normal equations, fixed ridge).
    """

    def __init__(self, ridge: float = 1e-6):
        self.ridge = ridge
        self.coef_ = None
        self.intercept_ = None

    def get_params(self, deep: bool = True) -> dict:
        return {"ridge": self.ridge}

    def set_params(self, **params) -> "IdentityProbe":
        for key, value in params.items():
            if not hasattr(self, key):
                raise ContractError(f"unknown parameter {key!r}")
            setattr(self, key, value)
        return self

    def fit(self, X: np.ndarray, Y: np.ndarray) -> "IdentityProbe":
        X = np.asarray(X, dtype=np.float64)
        Y = np.asarray(Y, dtype=np.float64)
        xb = np.concatenate([X, np.ones((X.shape[0], 1))], axis=1)
        gram = xb.T @ xb + self.ridge * np.eye(xb.shape[1])
        try:
            w = np.linalg.solve(gram, xb.T @ Y)
        except np.linalg.LinAlgError as exc:
            raise NumericError(f"probe fit is rank-deficient beyond ridge rescue: {exc}") from exc
        self.coef_ = w[:-1]
        self.intercept_ = w[-1]
        return self

    def predict(self, X: np.ndarray) -> np.ndarray:
        if self.coef_ is None:
            raise NotFittedError("IdentityProbe.predict called before fit")
        return np.asarray(X, dtype=np.float64) @ self.coef_ + self.intercept_

    def score(self, X: np.ndarray, Y: np.ndarray) -> float:
        return r_squared(Y, self.predict(X))


def fit_identity_probe(representations: np.ndarray, targets: np.ndarray,
                       ridge: float = 1e-6, holdout_fraction: float = 0.25) -> IdentityProbe:
    """Ridge fit with a positional train/holdout split.

    Requires at least 10x more samples than the representation width; the
    fitted probe carries ``train_r2_`` and ``holdout_r2_``.
    """
    X = np.asarray(representations, dtype=np.float64)
    Y = np.asarray(targets, dtype=np.float64)
    if X.ndim != 2 or Y.ndim != 2 or X.shape[0] != Y.shape[0]:
        raise ContractError(f"probe inputs misaligned: {X.shape} vs {Y.shape}")
    if X.shape[0] < 10 * X.shape[1]:
        raise ContractError(
            f"probe needs >= 10x more samples than features, got {X.shape[0]} for {X.shape[1]}"
        )
    n_train = int(round(X.shape[0] * (1.0 - holdout_fraction)))
    probe = IdentityProbe(ridge=ridge).fit(X[:n_train], Y[:n_train])
    probe.train_r2_ = probe.score(X[:n_train], Y[:n_train])
    probe.holdout_r2_ = probe.score(X[n_train:], Y[n_train:])
    return probe


def fit_observation_probe(world: SyntheticWorld, seed: int = 0,
                          per_identity: int | None = None) -> IdentityProbe:
    """Identity probe on raw observations; its recovered latents are the
    world's stand-in for a face-identity embedding."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xB0B]))
    if per_identity is None:
        # enough samples to satisfy the 10x-features precondition after the split
        needed = 14 * world.config.d_img
        per_identity = max(world.config.motions_per_identity,
                           int(np.ceil(needed / world.config.identity_count)))
    obs, ids, _, _ = world.dataset(rng, per_identity)
    perm = rng.permutation(len(obs))
    return fit_identity_probe(obs[perm], ids[perm])


def motion_leakage_score(model: AnimationModel, world: SyntheticWorld,
                         n: int = 800, seed: int = 0) -> float:
    """Holdout R^2 of identity recovered from the motion embedding; 0 means
    fully disentangled, 1 means the embedding is an identity channel."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x2EE5]))
    per = max(1, int(np.ceil(n / world.config.identity_count)))
    obs, ids, _, _ = world.dataset(rng, per)
    perm = rng.permutation(len(obs))
    obs, ids = obs[perm][:n], ids[perm][:n]
    z = model.motion_of(obs.astype(model.dtype))
    probe = fit_identity_probe(z, ids)
    return probe.holdout_r2_


@dataclass
class SwapResult:
    sim_to_source: float
    sim_to_driven: float
    rec_error: float

    def to_dict(self) -> dict:
        return {"sim_to_source": self.sim_to_source, "sim_to_driven": self.sim_to_driven,
                "rec_error": self.rec_error}


@dataclass
class ProbeReport:
    """Swap-sweep measurements for one setting (self- or cross-driven)."""

    setting: str
    scales: dict = field(default_factory=dict)  # scale index -> SwapResult
    baseline: SwapResult | None = None
    top_swap: SwapResult | None = None
    motion_r2: float = 0.0

    def to_dict(self) -> dict:
        return {
            "setting": self.setting,
            "motion_r2": self.motion_r2,
            "baseline": self.baseline.to_dict(),
            "top_swap": self.top_swap.to_dict(),
            "scales": {str(k): v.to_dict() for k, v in sorted(self.scales.items())},
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["setting", "scale", "sim_to_source", "sim_to_driven", "rec_error"])
        for k in sorted(self.scales):
            r = self.scales[k]
            writer.writerow([self.setting, k, repr(r.sim_to_source), repr(r.sim_to_driven),
                             repr(r.rec_error)])
        return buf.getvalue()


def _mean_cosine(a: np.ndarray, b: np.ndarray) -> float:
    num = (a * b).sum(axis=1)
    den = np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1) + 1e-12
    return float((num / den).mean())


def feature_swap_sweep(model: AnimationModel, world: SyntheticWorld, setting: str = "cross",
                       pairs: int = 200, seed: int = 0) -> ProbeReport:
    """Swap every intermediate variable class (five skip scales, top code) and
    record where the generated identity moves; plus the motion-probe R^2."""
    if setting not in ("self", "cross"):
        raise ContractError(f"setting must be 'self' or 'cross', got {setting!r}")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5EEE]))
    obs_probe = fit_observation_probe(world, seed=seed)
    obs_s, obs_d, src_ids, drv_ids, _, _ = world.sample_pair_batch(
        rng, pairs, cross=(setting == "cross"))
    a_src = world.identities[src_ids]
    a_drv = world.identities[drv_ids]

    def measure(swap) -> SwapResult:
        gen = model.animate(obs_s.astype(model.dtype), obs_d.astype(model.dtype),
                            swap_scale=swap)
        recovered = obs_probe.predict(gen)
        return SwapResult(
            sim_to_source=_mean_cosine(recovered, a_src),
            sim_to_driven=_mean_cosine(recovered, a_drv),
            rec_error=float(np.abs(gen - obs_d).mean()),
        )

    report = ProbeReport(setting=setting)
    report.baseline = measure(None)
    report.top_swap = measure("top")
    for k in range(1, 6):
        report.scales[k] = measure(k)
    report.motion_r2 = motion_leakage_score(model, world, seed=seed)
    return report


def retrieval_fidelity(model: AnimationModel, world: SyntheticWorld,
                       trials: int = 500, seed: int = 0) -> float:
    """Fraction of held-out same-identity pairs whose memory recall is closer
    (cosine) to the true driven token than to a mismatched-identity token."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xF1DE]))
    obs_s, obs_d, _, drv_ids, _, _ = world.sample_pair_batch(rng, trials, cross=False)
    feats_s = model.encode(obs_s.astype(model.dtype))
    feats_d = model.encode(obs_d.astype(model.dtype))
    z_s = model.motion_embed(feats_s)
    z_d = model.motion_embed(feats_d)
    recalled, _, _ = model.recall_for(feats_s, z_s, z_d)
    recalled = recalled.data
    true_tokens = model.detail.compressor(feats_d.grids[3]).data
    # mismatched token: the next sample along with a different identity
    mismatch_idx = np.empty(trials, dtype=int)
    for i in range(trials):
        j = (i + 1) % trials
        while drv_ids[j] == drv_ids[i]:
            j = (j + 1) % trials
        mismatch_idx[i] = j
    cos_true = _pairwise_cosine(recalled, true_tokens)
    cos_mismatch = _pairwise_cosine(recalled, true_tokens[mismatch_idx])
    return float((cos_true > cos_mismatch).mean())


def _pairwise_cosine(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    num = (a * b).sum(axis=1)
    den = np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1) + 1e-12
    return num / den


def self_vs_cross_gap(model: AnimationModel, world: SyntheticWorld,
                      pairs: int = 500, seed: int = 0) -> tuple[float, float]:
    """Mean reconstruction error against the matched-motion target in the
    self-driven and cross-driven settings.

    The two settings share the driven frames and motion draws; only the source
    identity changes, so the difference isolates how cross-identity driving
    degrades generation.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x6A9]))
    n_id = world.config.identity_count
    drv_ids = rng.integers(0, n_id, size=pairs)
    other_ids = (drv_ids + rng.integers(1, n_id, size=pairs)) % n_id
    m_s = world.sample_motion(rng, pairs)
    m_d = world.sample_motion(rng, pairs)
    drv_obs = world.render(world.identities[drv_ids], m_d)
    errors = []
    for src_ids in (drv_ids, other_ids):
        src_obs = world.render(world.identities[src_ids], m_s)
        target = world.render(world.identities[src_ids], m_d)
        gen = model.animate(src_obs.astype(model.dtype), drv_obs.astype(model.dtype))
        errors.append(float(np.abs(gen - target).mean()))
    return errors[0], errors[1]
