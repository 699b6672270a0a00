import logging

import numpy as np
import pytest

from leakmem import autodiff as ad
from leakmem.autodiff import Tape, Tensor, backward
from leakmem.errors import ContractError, DegenerateInputError, ShapeError
from leakmem.gradcheck import finite_difference_check
from leakmem.memory import (
    CrossAttentionFuser,
    FeatureCompressor,
    FeatureDecompressor,
    MemoryBanks,
    address_driven,
    address_motion_source,
    alignment_loss,
    memory_loss,
    recall,
)


def make_banks(slots=6, d_c=4, d_z=3, seed=0, dtype=np.float32):
    return MemoryBanks(slots, d_c, d_z, np.random.default_rng(seed), dtype=dtype)


class TestCompressor:
    def test_constant_grid_bit_identical_recompute(self):
        pi = FeatureCompressor(8, 4, np.random.default_rng(0))
        grid = Tensor(np.full((8, 3, 3), 1.5, dtype=np.float32))
        out1, out2 = pi(grid), pi(grid)
        assert out1.data.tobytes() == out2.data.tobytes()
        # uniform group weights of a constant grid reduce to the constant
        np.testing.assert_allclose(out1.data, np.full(4, 1.5), atol=1e-6)

    def test_token_width_independent_of_spatial_size(self, rng):
        pi = FeatureCompressor(8, 4, np.random.default_rng(0))
        for s in (1, 3, 7):
            out = pi(Tensor(rng.normal(size=(8, s, s)).astype(np.float32)))
            assert out.shape == (4,)

    def test_gradient_through_weighting_logits(self, rng):
        pi = FeatureCompressor(8, 4, np.random.default_rng(0), dtype=np.float64)
        grid = Tensor(rng.normal(size=(2, 8, 3, 3)), dtype=np.float64)
        w = Tensor(rng.normal(size=(2, 4)), dtype=np.float64)
        err = finite_difference_check(lambda: ad.sum_(ad.mul(pi(grid), w)), [pi.logits])
        assert err < 1e-4

    def test_indivisible_channels_rejected(self):
        with pytest.raises(ShapeError):
            FeatureCompressor(6, 4, np.random.default_rng(0))


class TestDecompressor:
    def test_zero_token_yields_positional_pattern(self):
        lam = FeatureDecompressor(4, 8, 3, np.random.default_rng(0))
        out = lam(Tensor(np.zeros(4, dtype=np.float32)))
        np.testing.assert_allclose(out.data, lam.pos.data, atol=1e-7)
        lam.pos.data[:] = 0.0
        out = lam(Tensor(np.zeros(4, dtype=np.float32)))
        np.testing.assert_array_equal(out.data, np.zeros((8, 3, 3)))

    def test_shape_restoration_only(self):
        # compress-then-decompress is lossy; only the shape contract holds
        lam = FeatureDecompressor(4, 8, 3, np.random.default_rng(0))
        out = lam(Tensor(np.random.default_rng(1).normal(size=(5, 4)).astype(np.float32)))
        assert out.shape == (5, 8, 3, 3)

    def test_target_mismatch_rejected(self):
        lam = FeatureDecompressor(4, 8, 3, np.random.default_rng(0))
        with pytest.raises(ShapeError):
            lam(Tensor(np.zeros(4, dtype=np.float32)), target=(8, 4, 4))

    def test_injective_at_init(self):
        lam = FeatureDecompressor(4, 8, 3, np.random.default_rng(0))
        assert lam.init_rank() == 4
        rng = np.random.default_rng(2)
        t1, t2 = rng.normal(size=4), rng.normal(size=4)
        g1 = lam(Tensor(t1.astype(np.float32)))
        g2 = lam(Tensor(t2.astype(np.float32)))
        assert np.linalg.norm(g1.data - g2.data) > 0


class TestAddressing:
    def test_query_equal_to_slot_peaks_there(self):
        banks = make_banks(slots=3, d_c=4)
        banks.m_d.data[:] = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 1, 0]], dtype=np.float32)
        omega = address_driven(Tensor(np.array([1.0, 0.0, 0.0, 0.0], dtype=np.float32)), banks).data
        assert omega[0] > omega[1] and omega[0] > omega[2]

    def test_three_slot_similarity_oracle(self):
        banks = make_banks(slots=3, d_c=2)
        q = np.array([1.0, 0.0], dtype=np.float32)
        banks.m_d.data[:] = np.array([[1, 0], [0, 1], [-1, 0]], dtype=np.float32)
        omega = address_driven(Tensor(q), banks).data
        np.testing.assert_allclose(omega, [0.66524, 0.24473, 0.09003], atol=1e-4)

    def test_identical_slots_uniform(self):
        banks = make_banks(slots=5, d_c=4)
        banks.m_d.data[:] = np.ones((5, 4), dtype=np.float32)
        omega = address_driven(Tensor(np.array([1.0, 2.0, 3.0, 4.0], dtype=np.float32)), banks).data
        np.testing.assert_allclose(omega, np.full(5, 0.2), atol=1e-6)

    def test_zero_norm_query_rejected(self):
        banks = make_banks()
        with pytest.raises(DegenerateInputError):
            address_driven(Tensor(np.zeros(4, dtype=np.float32)), banks)

    def test_zero_norm_slot_rejected(self):
        banks = make_banks()
        banks.m_d.data[2] = 0.0
        with pytest.raises(DegenerateInputError):
            address_driven(Tensor(np.ones(4, dtype=np.float32)), banks)

    def test_motion_source_concat_space(self):
        banks = make_banks(slots=3, d_c=2, d_z=2)
        banks.m_ms.data[:] = np.array(
            [[1, 0, 0, 0], [0, 0, 1, 0], [-1, 0, 0, 0]], dtype=np.float32)
        omega = address_motion_source(Tensor(np.array([1.0, 0.0], dtype=np.float32)),
                                      Tensor(np.array([0.0, 0.0], dtype=np.float32)), banks).data
        np.testing.assert_allclose(omega, [0.66524, 0.24473, 0.09003], atol=1e-4)

    def test_zero_motion_suffix_depends_on_token_alone(self):
        banks = make_banks(d_c=4, d_z=3)
        token = Tensor(np.array([1.0, -0.5, 0.25, 2.0], dtype=np.float32))
        zero = Tensor(np.zeros(3, dtype=np.float32))
        o1 = address_motion_source(token, zero, banks).data
        o2 = address_motion_source(token, zero, banks).data
        assert o1.tobytes() == o2.tobytes()
        other = address_motion_source(Tensor(np.array([-1.0, 0.5, 1.0, 0.0], dtype=np.float32)), zero, banks).data
        assert np.linalg.norm(o1 - other) > 0

    def test_simplex_contract(self, rng):
        banks = make_banks(slots=16, d_c=6, d_z=2)
        queries = Tensor(rng.normal(size=(100, 6)).astype(np.float32))
        omega = address_driven(queries, banks).data
        np.testing.assert_allclose(omega.sum(axis=1), 1.0, atol=1e-6)
        assert np.all(omega > 0) and np.all(omega < 1)

    def test_address_stability_under_tiny_perturbation(self, rng):
        banks = make_banks(slots=12, d_c=8)
        for _ in range(50):
            q = rng.normal(size=8)
            q = q / np.linalg.norm(q)  # unit-scale queries, away from zero
            delta = rng.normal(size=8)
            delta = delta / np.linalg.norm(delta) * 1e-6
            o1 = address_driven(Tensor(q, dtype=np.float64), banks_f64(banks)).data
            o2 = address_driven(Tensor(q + delta, dtype=np.float64), banks_f64(banks)).data
            assert np.abs(o1 - o2).max() <= 1e-4


def banks_f64(banks):
    clone = MemoryBanks(banks.slots, banks.m_d.shape[1],
                        banks.m_ms.shape[1] - banks.m_d.shape[1],
                        np.random.default_rng(0), dtype=np.float64)
    clone.m_d.data = banks.m_d.data.astype(np.float64)
    clone.m_ms.data = banks.m_ms.data.astype(np.float64)
    return clone


class TestRecall:
    def test_one_hot_returns_slot_exactly(self):
        banks = make_banks(slots=4, d_c=3)
        omega = np.zeros(4, dtype=np.float32)
        omega[2] = 1.0
        out = recall(Tensor(omega), banks)
        np.testing.assert_array_equal(out.data, banks.m_d.data[2])

    def test_uniform_over_identical_slots(self):
        banks = make_banks(slots=3, d_c=2)
        banks.m_d.data[:] = np.array([[0.5, -1.0]] * 3, dtype=np.float32)
        out = recall(Tensor(np.full(3, 1 / 3, dtype=np.float32)), banks)
        np.testing.assert_allclose(out.data, [0.5, -1.0], atol=1e-7)

    def test_hand_arithmetic(self):
        banks = make_banks(slots=2, d_c=2)
        banks.m_d.data[:] = np.array([[0.0, 0.0], [4.0, 8.0]], dtype=np.float32)
        out = recall(Tensor(np.array([0.25, 0.75], dtype=np.float32)), banks)
        np.testing.assert_allclose(out.data, [3.0, 6.0], atol=1e-6)

    def test_simplex_violation_rejected(self):
        banks = make_banks(slots=3, d_c=2)
        with pytest.raises(ContractError):
            recall(Tensor(np.array([0.5, 0.5, 0.5], dtype=np.float32)), banks)

    def test_convexity_of_recalled_tokens(self, rng):
        banks = make_banks(slots=8, d_c=4)
        queries = Tensor(rng.normal(size=(64, 4)).astype(np.float32))
        omega = address_driven(queries, banks)
        np.testing.assert_allclose(omega.data.sum(axis=1), 1.0, atol=1e-6)
        assert np.all(omega.data > 0)
        recalled = recall(omega, banks).data
        bound = np.linalg.norm(banks.m_d.data, axis=1).max()
        assert np.all(np.linalg.norm(recalled, axis=1) <= bound + 1e-6)


class TestMemoryLoss:
    def test_perfect_recall_zero(self):
        t = Tensor(np.array([1.0, 2.0, 3.0], dtype=np.float32))
        assert memory_loss(t, t).item() == pytest.approx(0.0, abs=1e-6)

    def test_pythagorean_oracle(self):
        a = Tensor(np.array([3.0, 4.0], dtype=np.float32))
        b = Tensor(np.zeros(2, dtype=np.float32))
        assert memory_loss(a, b).item() == pytest.approx(5.0, abs=1e-6)

    def test_gradients_reach_slots_through_recall(self, rng):
        banks = make_banks(slots=5, d_c=4, dtype=np.float64)
        query = Tensor(rng.normal(size=(2, 4)), dtype=np.float64)
        with Tape() as tape:
            omega = address_driven(query, banks)
            loss = memory_loss(Tensor(rng.normal(size=(2, 4)), dtype=np.float64),
                               recall(omega, banks))
            backward(loss, tape)
        assert banks.m_d.grad is not None
        assert np.linalg.norm(banks.m_d.grad) > 0


class TestAlignmentLoss:
    def test_identical_addresses_zero(self):
        omega = Tensor(np.array([0.25, 0.25, 0.5], dtype=np.float32))
        assert alignment_loss(omega, omega).item() < 1e-9

    def test_kl_oracle(self):
        out = alignment_loss(Tensor(np.array([0.5, 0.5], dtype=np.float32)),
                             Tensor(np.array([0.9, 0.1], dtype=np.float32)))
        assert out.item() == pytest.approx(0.5108, abs=1e-3)

    def test_driven_side_gradient_blocked(self, rng):
        banks = make_banks(slots=5, d_c=4, d_z=2, dtype=np.float64)
        f_d = Tensor(rng.normal(size=(3, 4)), requires_grad=True, dtype=np.float64)
        f_s = Tensor(rng.normal(size=(3, 4)), requires_grad=True, dtype=np.float64)
        z = Tensor(rng.normal(size=(3, 2)), requires_grad=True, dtype=np.float64)
        with Tape() as tape:
            loss = alignment_loss(address_motion_source(f_s, z, banks),
                                  address_driven(f_d, banks))
            backward(loss, tape)
        assert f_d.grad is None
        assert banks.m_d.grad is None
        assert f_s.grad is not None and np.linalg.norm(f_s.grad) > 0
        assert banks.m_ms.grad is not None and np.linalg.norm(banks.m_ms.grad) > 0


class TestFuser:
    def test_shape_and_finiteness(self, rng):
        fuser = CrossAttentionFuser(8, 2, np.random.default_rng(0))
        grid = Tensor(rng.normal(size=(2, 8, 3, 3)).astype(np.float32))
        out = fuser(grid, grid)
        assert out.shape == (2, 8, 3, 3)
        assert np.all(np.isfinite(out.data))

    def test_single_position_residual_plus_value(self, rng):
        fuser = CrossAttentionFuser(8, 2, np.random.default_rng(0))
        f_s = rng.normal(size=(8, 1, 1)).astype(np.float32)
        f_hat = rng.normal(size=(8, 1, 1)).astype(np.float32)
        out = fuser(Tensor(f_s), Tensor(f_hat))
        manual = f_s.reshape(8) + f_hat.reshape(1, 8) @ fuser.wv.data
        np.testing.assert_allclose(out.data.reshape(8), manual.reshape(8), atol=1e-6)

    def test_zero_recall_is_pure_residual(self, rng):
        fuser = CrossAttentionFuser(8, 2, np.random.default_rng(0))
        f_s = Tensor(rng.normal(size=(2, 8, 3, 3)).astype(np.float32))
        out = fuser(f_s, Tensor(np.zeros((2, 8, 3, 3), dtype=np.float32)))
        np.testing.assert_allclose(out.data, f_s.data, atol=1e-7)

    def test_head_count_must_divide_channels(self):
        with pytest.raises(ShapeError):
            CrossAttentionFuser(8, 3, np.random.default_rng(0))


class TestUnderflowGuard:
    def test_reinit_and_log(self, caplog):
        banks = make_banks(slots=4, d_c=3)
        banks.m_d.data[1] = 0.0
        with caplog.at_level(logging.WARNING):
            touched = banks.reinit_underflowed(np.random.default_rng(0))
        assert touched == 1
        assert np.linalg.norm(banks.m_d.data, axis=1).min() >= 1e-6
        assert any("re-initialized" in r.message for r in caplog.records)

    def test_healthy_banks_untouched(self):
        banks = make_banks()
        before = banks.m_d.data.copy()
        assert banks.reinit_underflowed(np.random.default_rng(0)) == 0
        np.testing.assert_array_equal(banks.m_d.data, before)
