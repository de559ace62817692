"""Doubling the batch size as the run goes on.

A constant batch size either wastes samples early (large b) or takes many
serial steps late (small b).  The doubling schedule runs epochs of t steps
with batch b0, 2 b0, 4 b0, ..., then a final tail-averaged phase on half of the
budget.  The depth (serial steps) drops from n/b0 to a few multiples of t
while the risk stays close to the constant-batch run.
"""
import numpy as np

from lsrsgd.bounds import doubling_bound, doubling_min_epoch_length
from lsrsgd.dynamics import exact_tail_averaged_risk
from lsrsgd.operators import batch_threshold, minimax_stepsize
from lsrsgd.problem import additive_instance
from lsrsgd.samplers import noise_model_for
from lsrsgd.schedules import DoublingPlan, exact_doubling_risk, run_doubling_many

inst = additive_instance(np.logspace(0, -1, 10), sigma2=0.01)
b0 = int(round(batch_threshold(inst)))
gamma = 0.5 * minimax_stepsize(inst, b0)
t = doubling_min_epoch_length(inst)
plan = DoublingPlan.fit(b0, t, 32 * b0 * t)
print("\n".join(plan.describe()))

eta0 = -inst.optimum
ex = exact_doubling_risk(inst, gamma, plan, eta0)
_, curve, _ = run_doubling_many(inst, noise_model_for(inst), np.zeros(inst.dim), gamma, b0, t,
                                plan.n, 100, log_points=10)
const = exact_tail_averaged_risk(inst, gamma, b0, plan.n // b0 // 2, plan.n // b0 // 2,
                                 np.outer(eta0, eta0))[0]
print(f"\ndoubling: exact risk {ex.final_total:.4g}, MC {curve.final():.4g} "
      f"(+- {curve.final('risk_total_se'):.2g}), depth {plan.depth}")
print(f"constant b0, same samples: exact risk {const:.4g}, depth {plan.n // b0}")
print(f"guarantee for the doubling run: {doubling_bound(inst, b0, t, plan.n, inst.excess_risk(np.zeros(inst.dim))):.4g}")
