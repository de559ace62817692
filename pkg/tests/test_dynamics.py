import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings, strategies as st

from lsrsgd.bounds import final_iterate_variance_level
from lsrsgd.dynamics import (DivergenceError, exact_covariance_step, exact_model_averaged_risk,
                             exact_risk_curve, exact_tail_averaged_risk, mean_tail_average,
                             steady_state_covariance)
from lsrsgd.operators import build_T_b, divergent_stepsize, minimax_stepsize, smat, svec
from lsrsgd.problem import (additive_instance, gaussian_instance, separation_instance, random_psd,
                            random_spd, solve_lyapunov)


def brute_force_tail_risk(inst, gamma, b, s, N, phi0, with_noise):
    """Direct double sum: E[eta_i eta_j^T] = (I - gamma H)^{j-i} phi_i for j >= i."""
    H, d = inst.hessian, inst.dim
    T = build_T_b(inst, gamma, b).materialized
    C = np.eye(d) - gamma * H
    phis = []
    phi = phi0.copy()
    for t in range(1, s + N + 1):
        phi = phi - gamma * smat(T @ svec(phi), d)
        if with_noise:
            phi = phi + gamma ** 2 / b * inst.noise_cov
        if t > s:
            phis.append(phi)
    acc = 0.0
    for i in range(N):
        P = np.eye(d)
        for j in range(i, N):
            cross = P @ phis[i]
            acc += np.trace(H @ cross) * (1.0 if i == j else 2.0)
            P = C @ P
    return 0.5 * acc / N ** 2


class TestExactRecursion:
    @pytest.mark.parametrize("b", [1, 3])
    def test_matches_double_sum(self, rng, b):
        inst = gaussian_instance(random_spd(2, rng, cond=5.0), 0.1 * random_psd(2, rng),
                                 rng.standard_normal(2))
        g = 0.5 * minimax_stepsize(inst, b)
        eta0 = -inst.optimum
        phi0 = np.outer(eta0, eta0)
        _, bias, var = exact_tail_averaged_risk(inst, g, b, 7, 25, phi0)
        assert bias == pytest.approx(brute_force_tail_risk(inst, g, b, 7, 25, phi0, False), rel=1e-10)
        assert var == pytest.approx(brute_force_tail_risk(inst, g, b, 7, 25, 0 * phi0, True), rel=1e-10)

    def test_curve_iterate_column(self, small_additive):
        g = 0.1
        phi = np.eye(3)
        c = exact_risk_curve(small_additive, g, 2, 5, phi0=phi)
        for t in range(1, 6):
            phi = exact_covariance_step(small_additive, g, 2, phi, with_noise=False)
            assert c.iterate_bias[t] == pytest.approx(0.5 * np.trace(small_additive.hessian @ phi))
        assert np.isnan(c.average_bias[0])

    def test_rotated_frame_agrees(self, rotated_instance, rng):
        g = 0.5 * minimax_stepsize(rotated_instance, 2)
        phi0 = random_psd(4, rng)
        a = exact_tail_averaged_risk(rotated_instance, g, 2, 10, 40, phi0)
        b = brute_force_tail_risk(rotated_instance, g, 2, 10, 40, phi0, False) \
            + brute_force_tail_risk(rotated_instance, g, 2, 10, 40, 0 * phi0, True)
        assert a[0] == pytest.approx(b, rel=1e-9)

    def test_rejects_non_psd(self, small_additive):
        with pytest.raises(ValueError):
            exact_covariance_step(small_additive, 0.1, 1, -np.eye(3))

    def test_divergence(self):
        inst = additive_instance([1.0, 0.5], 0.1)
        g = 1.5 * divergent_stepsize(inst, 1)
        with pytest.raises(DivergenceError, match="divergent stepsize"):
            exact_risk_curve(inst, g, 1, 5000, phi0=np.eye(2))

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 10_000), b=st.integers(1, 16))
    def test_trace_contraction(self, seed, b):
        # noiseless: Tr(phi_{t+1}) <= (1 - gamma mu) Tr(phi_t) for gamma <= gamma_max / 2
        rng = np.random.default_rng(seed)
        inst = gaussian_instance(random_spd(3, rng, cond=10.0), random_psd(3, rng))
        g = 0.5 * minimax_stepsize(inst, b)
        phi = random_psd(3, rng)
        nxt = exact_covariance_step(inst, g, b, phi, with_noise=False)
        assert np.trace(nxt) <= (1 - g * inst.derived.mu) * np.trace(phi) * (1 + 1e-12)
        assert np.linalg.eigvalsh(nxt)[0] >= -1e-12 * np.trace(phi)


class TestSteadyState:
    @pytest.mark.parametrize("b", [1, 5])
    def test_fixed_point_iteration(self, rotated_instance, b):
        g = 0.5 * minimax_stepsize(rotated_instance, b)
        ss = steady_state_covariance(rotated_instance, g, b)
        phi = np.zeros((4, 4))
        for _ in range(20000):
            nxt = exact_covariance_step(rotated_instance, g, b, phi)
            if np.max(np.abs(nxt - phi)) < 1e-14:
                break
            phi = nxt
        np.testing.assert_allclose(phi, ss, atol=1e-8)

    def test_lyapunov_against_scipy(self, rng):
        H, S = random_spd(5, rng), random_psd(5, rng)
        np.testing.assert_allclose(solve_lyapunov(H, S),
                                   scipy.linalg.solve_continuous_lyapunov(H, S), atol=1e-10)

    def test_final_iterate_variance_level(self):
        inst = additive_instance(1.0 / np.arange(1, 11), 0.01)
        for b in (1, 4, 16):
            g = 0.5 * minimax_stepsize(inst, b)
            phi = steady_state_covariance(inst, g, b)
            risk = 0.5 * np.trace(inst.hessian @ phi)
            assert risk <= final_iterate_variance_level(inst, b) * (1 + 1e-9)

    def test_guard_and_divergent(self):
        inst = separation_instance(8)
        g = 0.9 * divergent_stepsize(inst, 1)
        with pytest.raises(ValueError, match="allow_large_step"):
            steady_state_covariance(inst, g, 1)
        with pytest.warns(RuntimeWarning):
            steady_state_covariance(inst, g, 1, allow_large_step=True)
        with pytest.raises(ValueError, match="divergent"), pytest.warns(RuntimeWarning):
            steady_state_covariance(inst, 1.01 * divergent_stepsize(inst, 1), 1,
                                    allow_large_step=True)

    def test_zero_noise(self, small_additive):
        inst = additive_instance([1.0, 0.5], 0.0)
        assert not np.any(steady_state_covariance(inst, 0.1, 1))


class TestModelAveragingExact:
    def test_mean_tail_average(self, small_additive):
        g, eta0 = 0.2, np.array([1.0, -2.0, 0.5])
        C = np.eye(3) - g * small_additive.hessian
        ref = np.mean([np.linalg.matrix_power(C, k) @ eta0 for k in range(4, 14)], axis=0)
        np.testing.assert_allclose(mean_tail_average(small_additive, g, 3, 10, eta0), ref)

    def test_single_machine_reduces(self, small_additive):
        eta0 = -small_additive.optimum
        one = exact_model_averaged_risk(small_additive, 0.1, 1, 5, 50, 1, eta0)
        ref = exact_tail_averaged_risk(small_additive, 0.1, 1, 5, 50, np.outer(eta0, eta0))
        np.testing.assert_allclose(one, ref, rtol=1e-12)

    def test_variance_scales(self, small_additive):
        eta0 = -small_additive.optimum
        v1 = exact_model_averaged_risk(small_additive, 0.1, 1, 5, 50, 1, eta0)[2]
        v4 = exact_model_averaged_risk(small_additive, 0.1, 1, 5, 50, 4, eta0)[2]
        assert v4 == pytest.approx(v1 / 4)
