import numpy as np
import pytest

from lsrsgd.engine import SgdConfig
from lsrsgd.problem import additive_instance
from lsrsgd.risk import RISK_COLUMNS, RiskCurve, aggregate_curves, decompose_run, excess_risk
from lsrsgd.samplers import noise_model_for


def _curve(rng, L=6):
    return RiskCurve(np.arange(1, L + 1), 3 * np.arange(1, L + 1),
                     {k: rng.uniform(0, 1, L) for k in RISK_COLUMNS})


class TestRiskCurve:
    def test_csv_round_trip(self, rng, tmp_path):
        c = _curve(rng)
        text = c.to_csv(tmp_path / "c.csv", header=["gamma=0.1", "b=3"])
        assert text.startswith("# gamma=0.1\n# b=3\nserial_step,samples_consumed,risk_total")
        back = RiskCurve.from_csv(tmp_path / "c.csv")
        np.testing.assert_array_equal(back.serial_step, c.serial_step)
        for k in RISK_COLUMNS:
            np.testing.assert_array_equal(back[k], c[k])

    def test_missing_columns_are_nan(self):
        c = RiskCurve([1, 2], [1, 2], {"risk_total": [0.5, 0.2]})
        assert np.all(np.isnan(c["risk_bias"]))
        assert c.final() == 0.2

    @pytest.mark.parametrize("bad", [dict(serial_step=[2, 1]), dict(columns={"risk_total": [-1.0, 0.0]}),
                                     dict(samples_consumed=[1])])
    def test_validation(self, bad):
        kw = dict(serial_step=[1, 2], samples_consumed=[1, 2], columns={})
        kw.update(bad)
        with pytest.raises(ValueError):
            RiskCurve(**kw)

    def test_excess_risk_batched_and_clipped(self):
        inst = additive_instance([1.0, 2.0], 0.1)
        W = np.array([[1.0, 1.0], [0.0, 1.0], [1.0, 0.0]])
        np.testing.assert_allclose(excess_risk(inst, W), [0.0, 0.5, 1.0])


class TestAggregate:
    def test_mean_and_se(self, rng):
        curves = [_curve(rng) for _ in range(5)]
        agg = aggregate_curves(curves)
        stack = np.stack([c["risk_total"] for c in curves])
        np.testing.assert_allclose(agg["risk_total"], stack.mean(0))
        np.testing.assert_allclose(agg["risk_total_se"], stack.std(0, ddof=1) / np.sqrt(5))
        assert agg.n_seeds == 5

    def test_single_curve_zero_se(self, rng):
        agg = aggregate_curves([_curve(rng)])
        assert np.all(agg["risk_total_se"] == 0)

    def test_se_scaling(self):
        rng = np.random.default_rng(0)
        se = []
        for k in (100, 1600):
            curves = [RiskCurve([1], [1], {"risk_total": [rng.exponential()]}) for _ in range(k)]
            se.append(aggregate_curves(curves).final("risk_total_se"))
        assert se[0] / se[1] == pytest.approx(4.0, rel=0.15)

    def test_schedule_mismatch(self, rng):
        a = _curve(rng)
        b = RiskCurve(a.serial_step + 1, a.samples_consumed, {})
        with pytest.raises(ValueError, match="schedules"):
            aggregate_curves([a, b])


def test_decompose_run():
    inst = additive_instance([1.0, 0.3], 0.1)
    bias, var, total = decompose_run(inst, noise_model_for(inst), SgdConfig(gamma=0.2, n=500, s=0.5))
    assert np.all(bias["risk_total"] >= 0) and np.all(var["risk_total"] >= 0)
    assert total.final() > 0
