import numpy as np
import pytest
from sklearn.base import clone

from leakmem.errors import ContractError, NotFittedError, NumericError, ShapeError
from leakmem.estimator import MotionTransfer
from leakmem.world import SyntheticWorld, WorldConfig


@pytest.fixture(scope="module")
def fitted():
    est = MotionTransfer(d_z=6, d_model=8, num_queries=3, num_blocks=1, slots=8,
                         d_c=4, heads=2, steps=25, batch_size=4, seed=0)
    # channels/spatial stay at library defaults; d_c=4 divides channels[3]=64
    return est.fit(SyntheticWorld(WorldConfig(seed=3, identity_count=6)))


class TestParams:
    def test_get_set_round_trip(self):
        est = MotionTransfer(slots=32, seed=5)
        params = est.get_params()
        assert params["slots"] == 32 and params["seed"] == 5
        est.set_params(slots=16)
        assert est.slots == 16

    def test_unknown_param_rejected(self):
        with pytest.raises(ContractError):
            MotionTransfer().set_params(bogus=1)

    def test_sklearn_clone_compatible(self):
        est = MotionTransfer(slots=32, lambda_dis=2.0)
        cloned = clone(est)
        assert cloned.get_params() == est.get_params()
        assert cloned is not est


class TestFitTransform:
    def test_fit_returns_self_and_records_metrics(self, fitted):
        assert isinstance(fitted, MotionTransfer)
        assert len(fitted.metrics_) == 25

    def test_fit_rejects_arrays(self):
        with pytest.raises(ContractError):
            MotionTransfer(steps=1).fit(np.zeros((4, 64)))

    def test_transform_shapes(self, fitted):
        obs = fitted.world_.sample_pair_batch(np.random.default_rng(0), 5)[0]
        z = fitted.transform(obs)
        assert z.shape == (5, 6)

    def test_transform_single_vector(self, fitted):
        obs = fitted.world_.sample_pair_batch(np.random.default_rng(0), 1)[0][0]
        assert fitted.transform(obs).shape == (1, 6)

    def test_animate_shapes(self, fitted):
        rng = np.random.default_rng(1)
        obs_s, obs_d, *_ = fitted.world_.sample_pair_batch(rng, 4)
        out = fitted.animate(obs_s, obs_d)
        assert out.shape == (4, 64)

    def test_animate_batch_mismatch(self, fitted):
        rng = np.random.default_rng(1)
        obs_s, obs_d, *_ = fitted.world_.sample_pair_batch(rng, 4)
        with pytest.raises(ContractError):
            fitted.animate(obs_s[:2], obs_d)

    def test_validation_wrong_width(self, fitted):
        with pytest.raises(ShapeError):
            fitted.transform(np.zeros((3, 7)))

    def test_validation_non_finite(self, fitted):
        bad = np.zeros((2, 64))
        bad[0, 0] = np.inf
        with pytest.raises(NumericError):
            fitted.transform(bad)

    def test_not_fitted_guard(self):
        with pytest.raises(NotFittedError):
            MotionTransfer().transform(np.zeros((2, 64)))


class TestPersistence:
    def test_save_load_preserves_behavior(self, fitted, tmp_path):
        path = str(tmp_path / "model.bin")
        fitted.save(path)
        loaded = MotionTransfer.load(path)
        obs = fitted.world_.sample_pair_batch(np.random.default_rng(2), 3)[0]
        np.testing.assert_array_equal(fitted.transform(obs), loaded.transform(obs))
        assert loaded.get_params()["steps"] == fitted.get_params()["steps"]
