"""Scikit-learn style facade over the trainer.

``MotionTransfer`` is fit on a synthetic world (the data source), then acts as
a transformer from observations to motion embeddings and as an animator from
(source, driven) observation pairs to generated observations. ``get_params``
and ``set_params`` follow the sklearn contract so ``sklearn.base.clone`` and
parameter search utilities work on it.
"""

from __future__ import annotations

import inspect

import numpy as np

from .checkpoint import load_checkpoint, restore_model, save_checkpoint
from .config import RunConfig, parse_run_config
from .errors import ContractError, NotFittedError
from .model import AnimationModel, ModelConfig
from .training import TrainConfig, run_training
from .validation import check_observations
from .world import SyntheticWorld, WorldConfig


class MotionTransfer:
    """Identity-preserving motion transfer with leakage taming.

    Hyperparameters mirror the run configuration; ``fit`` trains the full
    pipeline on a ``SyntheticWorld`` (or a ``WorldConfig`` describing one).
    """

    def __init__(self, d_z: int = 16, d_model: int = 32, num_queries: int = 8,
                 num_blocks: int = 2, xi: float = 0.1, slots: int = 64, d_c: int = 32,
                 heads: int = 4, steps: int = 5000, batch_size: int = 8, lr: float = 1e-3,
                 lambda_rec: float = 1.0, lambda_adv: float = 0.1, lambda_dis: float = 1.0,
                 lambda_dmem: float = 1.0, lambda_align: float = 1.0, emi_on: bool = True,
                 edi_on: bool = True, ldis_on: bool = True, train_uses_recall: bool = True,
                 seed: int = 0):
        self.d_z = d_z
        self.d_model = d_model
        self.num_queries = num_queries
        self.num_blocks = num_blocks
        self.xi = xi
        self.slots = slots
        self.d_c = d_c
        self.heads = heads
        self.steps = steps
        self.batch_size = batch_size
        self.lr = lr
        self.lambda_rec = lambda_rec
        self.lambda_adv = lambda_adv
        self.lambda_dis = lambda_dis
        self.lambda_dmem = lambda_dmem
        self.lambda_align = lambda_align
        self.emi_on = emi_on
        self.edi_on = edi_on
        self.ldis_on = ldis_on
        self.train_uses_recall = train_uses_recall
        self.seed = seed

    @classmethod
    def _param_names(cls) -> list[str]:
        return [p for p in inspect.signature(cls.__init__).parameters if p != "self"]

    def get_params(self, deep: bool = True) -> dict:
        return {name: getattr(self, name) for name in self._param_names()}

    def set_params(self, **params) -> "MotionTransfer":
        valid = set(self._param_names())
        for key, value in params.items():
            if key not in valid:
                raise ContractError(f"unknown parameter {key!r} for MotionTransfer")
            setattr(self, key, value)
        return self

    def _configs(self) -> tuple[ModelConfig, TrainConfig]:
        model_cfg = ModelConfig(d_z=self.d_z, d_model=self.d_model,
                                num_queries=self.num_queries, num_blocks=self.num_blocks,
                                xi=self.xi, slots=self.slots, d_c=self.d_c, heads=self.heads)
        train_cfg = TrainConfig(steps=self.steps, batch_size=self.batch_size, seed=self.seed,
                                lr=self.lr, lambda_rec=self.lambda_rec,
                                lambda_adv=self.lambda_adv, lambda_dis=self.lambda_dis,
                                lambda_dmem=self.lambda_dmem, lambda_align=self.lambda_align,
                                emi_on=self.emi_on, edi_on=self.edi_on, ldis_on=self.ldis_on,
                                train_uses_recall=self.train_uses_recall)
        return model_cfg, train_cfg

    def fit(self, X, y=None) -> "MotionTransfer":
        """Train on a world. ``X`` is a SyntheticWorld or a WorldConfig."""
        if isinstance(X, WorldConfig):
            world = SyntheticWorld(X)
        elif isinstance(X, SyntheticWorld):
            world = X
        else:
            raise ContractError(
                f"fit expects a SyntheticWorld or WorldConfig, got {type(X).__name__}"
            )
        model_cfg, train_cfg = self._configs()
        self.model_, self.metrics_ = run_training(world, model_cfg, train_cfg)
        self.world_ = world
        self.run_config_ = RunConfig(world=world.config, model=model_cfg, train=train_cfg)
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("MotionTransfer is not fitted; call fit first")

    def transform(self, X) -> np.ndarray:
        """Motion embeddings for observations of shape (n, d_img)."""
        self._check_fitted()
        obs = check_observations(X, self.model_.d_img)
        return self.model_.motion_of(obs.astype(self.model_.dtype))

    def animate(self, source, driven) -> np.ndarray:
        """Generate observations with the source identity and driven motion."""
        self._check_fitted()
        src = check_observations(source, self.model_.d_img, name="source")
        drv = check_observations(driven, self.model_.d_img, name="driven")
        if src.shape[0] != drv.shape[0]:
            raise ContractError(
                f"source and driven batches differ in length: {src.shape[0]} vs {drv.shape[0]}"
            )
        return self.model_.animate(src.astype(self.model_.dtype),
                                   drv.astype(self.model_.dtype))

    def save(self, path: str) -> None:
        self._check_fitted()
        save_checkpoint(path, self.model_.parameters(), self.run_config_.to_dict())

    @classmethod
    def load(cls, path: str) -> "MotionTransfer":
        params, config, _ = load_checkpoint(path)
        cfg = parse_run_config(config)
        est = cls(d_z=cfg.model.d_z, d_model=cfg.model.d_model,
                  num_queries=cfg.model.num_queries, num_blocks=cfg.model.num_blocks,
                  xi=cfg.model.xi, slots=cfg.model.slots, d_c=cfg.model.d_c,
                  heads=cfg.model.heads, steps=cfg.train.steps,
                  batch_size=cfg.train.batch_size, lr=cfg.train.lr,
                  lambda_rec=cfg.train.lambda_rec, lambda_adv=cfg.train.lambda_adv,
                  lambda_dis=cfg.train.lambda_dis, lambda_dmem=cfg.train.lambda_dmem,
                  lambda_align=cfg.train.lambda_align, emi_on=cfg.train.emi_on,
                  edi_on=cfg.train.edi_on, ldis_on=cfg.train.ldis_on,
                  train_uses_recall=cfg.train.train_uses_recall, seed=cfg.train.seed)
        est.world_ = SyntheticWorld(cfg.world)
        est.model_ = AnimationModel(cfg.world.d_img, cfg.model, seed=0,
                                    emi_on=cfg.train.emi_on, edi_on=cfg.train.edi_on)
        restore_model(est.model_, params)
        est.run_config_ = cfg
        est.metrics_ = []
        return est
