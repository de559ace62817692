import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lsrsgd.operators import (batch_threshold, build_T_b, check_stepsize, divergent_stepsize,
                              fourth_moment_operator, kappa_b, lyapunov_operator, minimax_stepsize,
                              smat, stepsize_report, svec, sym_basis, verify_operator_lemmas)
from lsrsgd.problem import additive_instance, gaussian_instance, separation_instance, random_psd, random_spd


def _sym(rng, d):
    A = rng.standard_normal((d, d))
    return A + A.T


class TestSvec:
    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 10_000), d=st.integers(1, 6))
    def test_isometry(self, seed, d):
        rng = np.random.default_rng(seed)
        A, B = _sym(rng, d), _sym(rng, d)
        assert svec(A) @ svec(B) == pytest.approx(np.trace(A @ B), rel=1e-10, abs=1e-10)
        np.testing.assert_allclose(smat(svec(A), d), A, atol=1e-12)

    def test_basis_orthonormal(self):
        E = sym_basis(4)
        G = np.einsum("aij,bji->ab", E, E)
        np.testing.assert_allclose(G, np.eye(10), atol=1e-12)


class TestOperators:
    def test_materialized_matches_apply(self, rng, rotated_instance):
        d = rotated_instance.dim
        for op in (lyapunov_operator(rotated_instance), fourth_moment_operator(rotated_instance),
                   build_T_b(rotated_instance, 0.05, 3)):
            A = _sym(rng, d)
            np.testing.assert_allclose(op.materialized @ svec(A), svec(op.apply(A)), atol=1e-10)

    def test_linearity(self, rng, rotated_instance):
        T = build_T_b(rotated_instance, 0.1, 2)
        A, B = _sym(rng, 4), _sym(rng, 4)
        np.testing.assert_allclose(T.apply(2.0 * A - B), 2.0 * T.apply(A) - T.apply(B), atol=1e-12)

    def test_T_b_closed_form(self, rng, rotated_instance):
        inst, g, b = rotated_instance, 0.07, 5
        H, A = inst.hessian, _sym(rng, 4)
        ref = H @ A + A @ H - g / b * inst.fourth_moment(A) - g * (b - 1) / b * H @ A @ H
        np.testing.assert_allclose(build_T_b(inst, g, b).apply(A), ref, atol=1e-12)

    def test_solve(self, rng, rotated_instance):
        T = build_T_b(rotated_instance, 0.05, 1)
        B = random_psd(4, rng)
        np.testing.assert_allclose(T.apply(T.solve(B)), B, atol=1e-10)

    def test_materialize_cap(self):
        inst = additive_instance(np.linspace(1, 0.1, 70), 0.1)
        with pytest.raises(ValueError):
            build_T_b(inst, 0.01, 1).materialized


class TestStepsizes:
    @pytest.mark.parametrize("h", [0.3, 1.0, 4.0])
    def test_divergent_scalar(self, h):
        inst = additive_instance([h], 0.1)
        assert divergent_stepsize(inst, 1) == pytest.approx(2 / (3 * h), rel=1e-10)
        assert divergent_stepsize(inst, 10**6) == pytest.approx(2 / h, rel=1e-5)

    def test_divergent_large_batch_limit(self):
        inst = additive_instance([1.0, 0.4, 0.1], 0.1)
        assert divergent_stepsize(inst, 10**6) == pytest.approx(2 / 1.0, rel=1e-5)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_divergent_below_trace_bound(self, seed):
        rng = np.random.default_rng(seed)
        inst = gaussian_instance(random_spd(3, rng), random_psd(3, rng))
        assert divergent_stepsize(inst, 1) <= 2 / np.trace(inst.hessian) * (1 + 1e-10)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 10_000), b=st.integers(1, 64))
    def test_minimax_below_divergent(self, seed, b):
        rng = np.random.default_rng(seed)
        inst = gaussian_instance(random_spd(3, rng, cond=10.0), random_psd(3, rng))
        gdiv, gmax = divergent_stepsize(inst, b), minimax_stepsize(inst, b)
        assert gmax <= gdiv * (1 + 1e-9)
        # non-isotropic H: strict
        assert gmax < gdiv

    def test_equality_cases(self):
        one = additive_instance([0.7], 0.2)
        assert minimax_stepsize(one, 1) == pytest.approx(divergent_stepsize(one, 1), rel=1e-10)
        iso = additive_instance(np.full(4, 0.5), 0.2)
        assert minimax_stepsize(iso, 1) == pytest.approx(divergent_stepsize(iso, 1), rel=1e-10)

    def test_quantities(self):
        inst = separation_instance(4)  # R^2 = 3.75, rho_m = 2, ||H|| = 1, mu = 1/4
        assert minimax_stepsize(inst, 1) == pytest.approx(2 / 7.5)
        assert minimax_stepsize(inst, 3) == pytest.approx(6 / 9.5)
        assert kappa_b(inst, 2) == pytest.approx(8.5 / 0.5)
        assert batch_threshold(inst) == pytest.approx(8.5)
        rep = stepsize_report(inst, 3)
        assert rep.gamma_used == pytest.approx(rep.gamma_max / 2)
        assert set(rep.as_dict()) >= {"gamma_div", "gamma_max", "kappa_b", "b_thresh"}

    def test_guard(self, small_additive):
        limit = minimax_stepsize(small_additive, 1) / 2
        check_stepsize(small_additive, limit, 1, False)
        with pytest.raises(ValueError, match="allow_large_step"):
            check_stepsize(small_additive, 1.01 * limit, 1, False)
        with pytest.warns(RuntimeWarning):
            check_stepsize(small_additive, 1.01 * limit, 1, True)


class TestOperatorChecks:
    @pytest.mark.parametrize("b", [1, 4, 20])
    def test_all_pass_at_default(self, rotated_instance, b):
        rep = verify_operator_lemmas(rotated_instance, b=b)
        assert rep.passed, rep.records()

    def test_separation_instance(self):
        rep = verify_operator_lemmas(separation_instance(8), b=2)
        assert rep.passed
        assert rep["trace_bound"].witness <= 2 * 2.0

    def test_psd_check_fails_above_divergent(self, small_additive):
        g = 1.05 * divergent_stepsize(small_additive, 1)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            rep = verify_operator_lemmas(small_additive, g, 1, allow_large_step=True)
        assert not rep["T_b_psd"].passed
        assert rep["T_b_psd"].witness < 0
        assert rep["lyapunov_trace_identity"].passed

    def test_records_shape(self, small_additive):
        recs = verify_operator_lemmas(small_additive).records()
        assert [r["name"] for r in recs] == ["T_b_psd", "T_b_inverse_psd_map",
                                             "lyapunov_trace_identity", "trace_bound"]
        assert all(set(r) == {"name", "pass", "witness", "detail"} for r in recs)
