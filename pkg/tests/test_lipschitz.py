import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from proxmf.lipschitz import SpectralEstimate, hessian_matvec, spectral_norm, suggest_damping
from proxmf.model import DiscreteField, Factor, generate_synthetic, potts_field, validate
from proxmf.schedules import step_size

from conftest import dense_hessian, random_mixed_field


class TestMatvec:
    def test_zero_tables(self):
        f = potts_field("grid", 2, 2, 2, 0.0)
        x = np.random.default_rng(0).normal(size=f.arrays.shape)
        np.testing.assert_array_equal(hessian_matvec(f, x), 0.0)

    def test_single_entry(self, potts_pair):
        f = potts_pair(2.0)
        x = np.array([[0.0, 0.0], [1.0, 0.0]])
        np.testing.assert_array_equal(hessian_matvec(f, x), [[-2.0, 0.0], [0.0, 0.0]])

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_dense_2x2(self, seed):
        f, _ = generate_synthetic("grid", 2, 2, 2, 1.0, 2.0, "mixed", seed=seed)
        H = dense_hessian(f)
        assert H.shape == (8, 8)
        x = np.random.default_rng(seed).normal(size=f.arrays.shape)
        np.testing.assert_allclose(hessian_matvec(f, x).ravel(), H @ x.ravel(), rtol=1e-13,
                                   atol=1e-13)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000))
    def test_symmetric(self, seed):
        f = random_mixed_field(seed, labels=3)
        rng = np.random.default_rng(seed)
        mask = f.arrays.mask
        x, y = (np.where(mask, rng.normal(size=mask.shape), 0.0) for _ in range(2))
        np.testing.assert_allclose(np.sum(y * hessian_matvec(f, x)),
                                   np.sum(x * hessian_matvec(f, y)), rtol=1e-10, atol=1e-10)

    def test_rejects_higher_order(self):
        f = validate(DiscreteField(3, (2, 2, 2), (Factor((0, 1, 2), np.zeros(8)),)))
        with pytest.raises(ValueError, match="supply d manually"):
            hessian_matvec(f, np.zeros((3, 2)))
        with pytest.raises(ValueError, match="supply d manually"):
            spectral_norm(f)


class TestSpectralNorm:
    def test_zero_field(self):
        est = spectral_norm(potts_field("grid", 3, 3, 2, 0.0))
        assert est.value == 0.0

    def test_potts_pair(self, potts_pair):
        est = spectral_norm(potts_pair(2.0))
        assert abs(est.value - 2.0) < 1e-6
        np.testing.assert_allclose(np.linalg.eigvalsh(dense_hessian(potts_pair(2.0))),
                                   [-2, -2, 2, 2], atol=1e-12)

    def test_grid_8x8_dense(self):
        f, _ = generate_synthetic("grid", 8, 8, 2, 1.0, 2.0, "mixed", seed=0)
        H = dense_hessian(f)
        assert H.shape == (128, 128)
        exact = np.max(np.abs(np.linalg.eigvalsh(H)))
        est = spectral_norm(f, max_iters=20000, tol=1e-13)
        assert abs(est.value - exact) <= 1e-6 * exact

    def test_never_exceeds_norm(self):
        f, _ = generate_synthetic("chain", 1, 20, 3, 1.0, 3.0, "mixed", seed=4)
        exact = np.max(np.abs(np.linalg.eigvalsh(dense_hessian(f))))
        for iters in (1, 2, 5, 20, 100):
            assert spectral_norm(f, max_iters=iters).value <= exact * (1 + 1e-12)

    def test_budget_exhaustion_reported(self):
        f, _ = generate_synthetic("grid", 5, 5, 2, 1.0, 2.0, "mixed", seed=1)
        est = spectral_norm(f, max_iters=2, tol=1e-15)
        assert not est.converged and est.iterations_used == 2

    def test_seed_determinism(self):
        f, _ = generate_synthetic("grid", 4, 4, 3, 1.0, 2.0, "mixed", seed=2)
        assert spectral_norm(f, seed=5).value == spectral_norm(f, seed=5).value


class TestSuggestDamping:
    def test_zero(self):
        d = suggest_damping(SpectralEstimate(0.0, 1, 0.0))
        assert d == 0.0 and step_size(d) == 1.0

    @pytest.mark.parametrize("L,d,eta", [(2.0, 2.1, 0.3226), (19.0, 19.95, 0.04773)])
    def test_arithmetic(self, L, d, eta):
        got = suggest_damping(SpectralEstimate(L, 1, 0.0), 1.05)
        np.testing.assert_allclose(got, d, rtol=1e-14)
        np.testing.assert_allclose(step_size(got), eta, rtol=2e-4)

    def test_accepts_float(self):
        np.testing.assert_allclose(suggest_damping(2.0), 2.1)

    def test_margin_must_exceed_one(self):
        with pytest.raises(ValueError):
            suggest_damping(2.0, 1.0)
