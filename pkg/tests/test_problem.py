import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lsrsgd.problem import (ProblemInstance, additive_instance, compute_rho_m, empirical_instance,
                            empirical_fourth_moment, gaussian_fourth_moment, gaussian_instance,
                            separation_instance, random_psd, random_spd, solve_lyapunov)


class TestFourthMoment:
    def test_matches_monte_carlo(self, rng):
        H = random_spd(3, rng, cond=4.0)
        A = random_psd(3, rng)
        X = rng.multivariate_normal(np.zeros(3), H, size=1_000_000)
        mc = empirical_fourth_moment(X, A)
        exact = gaussian_fourth_moment(H, A)
        assert np.max(np.abs(mc - exact)) < 0.02 * np.max(np.abs(exact))

    def test_batched(self, rng):
        H = random_spd(3, rng)
        A = np.stack([random_psd(3, rng) for _ in range(4)])
        out = gaussian_fourth_moment(H, A)
        for k in range(4):
            np.testing.assert_allclose(out[k], gaussian_fourth_moment(H, A[k]))

    def test_rejects_asymmetric(self):
        with pytest.raises(ValueError):
            gaussian_fourth_moment(np.eye(2), np.array([[0.0, 1.0], [0.0, 0.0]]))

    def test_instance_diagonal_fast_path(self, rng):
        inst = additive_instance([2.0, 1.0, 0.3], 0.0)
        A = random_psd(3, rng)
        np.testing.assert_allclose(inst.fourth_moment(A),
                                   gaussian_fourth_moment(inst.hessian, A), rtol=1e-12)


class TestDerivedScalars:
    def test_r_squared_diagonal_gaussian(self):
        # H^{-1/2} (Tr(H) H + 2 H^2) H^{-1/2} = Tr(H) I + 2 H
        lam = np.array([1.0, 0.5, 0.25, 0.1])
        inst = additive_instance(lam, 0.01)
        assert inst.derived.r_squared == pytest.approx(lam.sum() + 2 * lam.max(), rel=1e-12)

    def test_r_squared_isotropic(self):
        inst = additive_instance(np.full(5, 0.3), 1.0)
        assert inst.derived.r_squared == pytest.approx(0.3 * 7, rel=1e-12)

    def test_well_specified_rho_is_one(self):
        inst = additive_instance([1.0, 0.3, 0.01], 0.7)
        assert inst.derived.rho_m == pytest.approx(1.0, rel=1e-12)
        assert inst.derived.sigma2 == pytest.approx(0.7)

    @pytest.mark.parametrize("d", [2, 4, 9, 32])
    def test_separation_scalars(self, d):
        inst = separation_instance(d)
        X = solve_lyapunov(inst.hessian, inst.noise_cov)
        np.testing.assert_allclose(np.diag(X), np.r_[0.5, np.full(d - 1, 1 / (2 * (d - 1)))])
        assert inst.derived.rho_m == pytest.approx(d / 2, rel=1e-12)
        assert inst.derived.sigma2_mle == pytest.approx(2.0, rel=1e-12)
        # d = 2 collapses to Sigma = H (well specified)
        assert (inst.derived.sigma2 is None) == (d > 2)

    def test_sigma2_mle_well_specified(self):
        inst = additive_instance([1.0, 0.5, 0.1], 0.2)
        assert inst.derived.sigma2_mle == pytest.approx(0.2 * 3)

    def test_zero_noise(self):
        inst = additive_instance([1.0, 0.5], 0.0)
        assert inst.derived.rho_m == 1.0
        assert inst.derived.sigma2 == 0.0
        with pytest.raises(ValueError):
            compute_rho_m(inst)

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 10_000), c=st.floats(0.01, 100.0))
    def test_scale_invariance(self, seed, c):
        rng = np.random.default_rng(seed)
        H = random_spd(3, rng, cond=20.0)
        S = random_psd(3, rng)
        a, b = gaussian_instance(H, S).derived, gaussian_instance(c * H, c * S).derived
        assert b.r_squared == pytest.approx(c * a.r_squared, rel=1e-9)
        assert b.rho_m == pytest.approx(a.rho_m, rel=1e-9)
        assert b.sigma2_mle == pytest.approx(a.sigma2_mle, rel=1e-9)
        assert b.kappa == pytest.approx(a.kappa, rel=1e-9)

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_rho_range(self, seed):
        rng = np.random.default_rng(seed)
        d = int(rng.integers(2, 6))
        inst = gaussian_instance(random_spd(d, rng), random_psd(d, rng, rank=1 + seed % d))
        assert 1.0 - 1e-9 <= inst.derived.rho_m <= d + 1e-9


class TestInstance:
    def test_immutable(self, small_additive):
        with pytest.raises(ValueError):
            small_additive.hessian[0, 0] = 3.0
        with pytest.raises(Exception):
            small_additive.optimum = np.zeros(3)

    def test_validation(self):
        with pytest.raises(ValueError, match="positive definite"):
            ProblemInstance(np.diag([1.0, 0.0]), np.zeros((2, 2)), np.zeros(2))
        with pytest.raises(ValueError, match="semidefinite"):
            ProblemInstance(np.eye(2), -np.eye(2), np.zeros(2))
        with pytest.raises(ValueError, match="symmetric"):
            ProblemInstance(np.array([[1.0, 0.5], [0.0, 1.0]]), np.zeros((2, 2)), np.zeros(2))
        with pytest.raises(ValueError, match="cap"):
            additive_instance(np.ones(300), 0.1)

    def test_eigenbasis_preserves_scalars(self, rotated_instance):
        a, b = rotated_instance.derived, rotated_instance.in_eigenbasis().derived
        for k in ("r_squared", "rho_m", "sigma2_mle", "mu", "h_norm"):
            assert getattr(b, k) == pytest.approx(getattr(a, k), rel=1e-9)

    def test_empirical_hessian(self, rng):
        X = rng.standard_normal((50, 3))
        inst = empirical_instance(X, 0.1)
        np.testing.assert_allclose(inst.hessian, X.T @ X / 50)
        A = random_psd(3, rng)
        np.testing.assert_allclose(inst.fourth_moment(A), empirical_fourth_moment(X, A))

    def test_excess_risk(self, small_additive):
        assert small_additive.excess_risk(small_additive.optimum) == 0.0
        assert small_additive.excess_risk(np.zeros(3)) == pytest.approx(0.5 * 1.7)
