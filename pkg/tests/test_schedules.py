import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lsrsgd.engine import run_minibatch_tail_sgd
from lsrsgd.operators import minimax_stepsize
from lsrsgd.problem import additive_instance
from lsrsgd.samplers import noise_model_for
from lsrsgd.schedules import (AveragingPlan, DoublingPlan, combine_streams, exact_doubling_risk,
                              exact_model_averaging_risk, oracle_constant_epochs, run_doubling,
                              run_doubling_many, run_doubling_with_oracle, run_model_averaging,
                              run_model_averaging_many)


@pytest.fixture
def inst():
    return additive_instance(np.logspace(0, -1, 4), 0.01)


class TestDoublingPlan:
    def test_worked_example(self):
        plan = DoublingPlan(2, 8, 256)
        assert [(e.b, e.steps, e.samples) for e in plan.epochs] == [(2, 8, 16), (4, 8, 32), (8, 8, 64)]
        assert plan.final_phase == {"b": 16, "s": 4, "samples": 128, "steps": 8}
        assert plan.depth == 32 and plan.work == 240

    @settings(max_examples=60, deadline=None)
    @given(b0=st.integers(1, 20), t=st.integers(2, 200), k=st.integers(2, 10))
    def test_invariants(self, b0, t, k):
        plan = DoublingPlan(b0, t, b0 * t * 2 ** k)
        assert plan.n_levels == k
        assert plan.depth == k * t
        assert plan.work == plan.n - b0 * t
        assert plan.final_phase["steps"] == t
        bs = [e.b for e in plan.epochs] + [plan.final_phase["b"]]
        assert all(b2 == 2 * b1 for b1, b2 in zip(bs, bs[1:]))

    def test_validation_and_fit(self):
        with pytest.raises(ValueError, match="power of two"):
            DoublingPlan(2, 8, 300)
        with pytest.raises(ValueError, match="at least 4"):
            DoublingPlan(2, 8, 32)
        with pytest.warns(RuntimeWarning, match="rounded down"):
            plan = DoublingPlan.fit(2, 8, 300)
        assert plan.n == 256
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            DoublingPlan.fit(2, 8, 256)

    def test_describe(self):
        lines = DoublingPlan(2, 8, 256).describe()
        assert lines[0] == "doubling plan b0=2 t=8 n=256" and lines[-1] == "depth 32 work 240"


class TestDoublingRuns:
    def test_monte_carlo_matches_exact(self, inst):
        b0, t, n = 2, 40, 2 * 40 * 16
        g = 0.5 * minimax_stepsize(inst, b0)
        w0 = np.zeros(4)
        plan, curve, _ = run_doubling_many(inst, noise_model_for(inst), w0, g, b0, t, n, 400,
                                           log_points=8)
        ex = exact_doubling_risk(inst, g, plan, w0 - inst.optimum)
        assert curve.serial_step[-1] == plan.depth == ex.depth
        z = (curve.final("risk_total") - ex.final_total) / curve.final("risk_total_se")
        assert abs(z) < 4.0

    def test_single_run_record(self, inst):
        rec = run_doubling(inst, noise_model_for(inst), np.zeros(4), 0.1, 2, 8, 256, seed=1)
        assert rec.depth == 32 and rec.work == 240
        assert rec.curve.serial_step[-1] == 32 and rec.curve.samples_consumed[-1] == 240
        assert np.all(np.diff(rec.curve.serial_step) > 0)

    def test_oracle(self, inst):
        g = 0.5 * minimax_stepsize(inst, 2)
        k = oracle_constant_epochs(inst, g, 2, 20, 1.0, 1e-3, 100)
        assert k >= 1
        with pytest.warns(RuntimeWarning, match="rounded down"):
            out = run_doubling_with_oracle(inst, noise_model_for(inst), np.zeros(4), g, 2, 20,
                                           2 * 20 * 64, initial_risk=1.0, noise_level=1e-3)
        assert out.constant_epochs == k and out.switch_step == 20 * k
        assert out.depth == 20 * k + out.plan.depth


class TestModelAveraging:
    def test_single_machine_is_single_run(self, inst):
        plan = AveragingPlan(1, 600, 2, 50, 0.1)
        a = run_model_averaging(inst, noise_model_for(inst), np.zeros(4), plan, seed=3)
        b = run_minibatch_tail_sgd(inst, noise_model_for(inst), plan.config(3), np.zeros(4))
        np.testing.assert_allclose(a.final_average, b.final_average, rtol=1e-12)

    def test_combination_order_invariant(self, rng):
        outs = {k: rng.standard_normal(5) for k in range(7)}
        shuffled = {k: outs[k] for k in rng.permutation(7)}
        np.testing.assert_array_equal(combine_streams(outs), combine_streams(shuffled))

    def test_average_of_streams(self, inst):
        plan = AveragingPlan(3, 900, 1, 100, 0.1)
        rec = run_model_averaging(inst, noise_model_for(inst), np.zeros(4), plan, seed=2)
        singles = [run_minibatch_tail_sgd(inst, noise_model_for(inst), plan.config(2), np.zeros(4),
                                          stream=k).final_average for k in range(3)]
        np.testing.assert_allclose(rec.final_average, np.mean(singles, axis=0), rtol=1e-12)
        assert rec.work == 900 and rec.depth == 300

    def test_monte_carlo_matches_exact(self, inst):
        plan = AveragingPlan(4, 2000, 1, 250, 0.5 * minimax_stepsize(inst, 1))
        res = run_model_averaging_many(inst, noise_model_for(inst), np.zeros(4), plan, 300)
        curve = res.aggregate()
        exact = exact_model_averaging_risk(inst, plan, -inst.optimum)[0]
        assert abs(curve.final() - exact) < 4 * curve.final("risk_total_se")

    def test_bias_does_not_improve(self, inst):
        g, eta0 = 0.5 * minimax_stepsize(inst, 1), -inst.optimum
        serial = exact_model_averaging_risk(inst, AveragingPlan(1, 4000, 1, 0, g), eta0)
        for P in (2, 4, 8):
            par = exact_model_averaging_risk(inst, AveragingPlan(P, 4000, 1, 0, g), eta0)
            assert par[1] >= serial[1]
            # same total sample count, so the variance stays at the serial level
            assert par[2] == pytest.approx(serial[2], rel=0.3)
