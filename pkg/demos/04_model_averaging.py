"""Split the data over P machines and average their answers.

Each machine runs tail-averaged SGD on n/P samples and the P outputs are
averaged once at the end.  The variance part of the risk is unaffected by
the split.  The bias part is not averaged away, since every machine starts
from the same point and the shorter runs leave more of it behind.  The
printout shows where the split stops being free.
"""
import numpy as np

from lsrsgd.operators import minimax_stepsize
from lsrsgd.problem import additive_instance
from lsrsgd.samplers import noise_model_for
from lsrsgd.schedules import AveragingPlan, exact_model_averaging_risk, run_model_averaging_many

inst = additive_instance(np.logspace(0, -1, 10), sigma2=0.01)
gamma = 0.5 * minimax_stepsize(inst, 1)
n = 16000

print(f"{'P':>3} {'depth':>6} {'bias':>10} {'variance':>10} {'total':>10} {'MC total':>10}")
for P in (1, 2, 4, 8, 16, 32):
    steps = n // P
    plan = AveragingPlan(P, n, 1, steps // 2, gamma)
    tot, bias, var = exact_model_averaging_risk(inst, plan, -inst.optimum)
    mc = run_model_averaging_many(inst, noise_model_for(inst), np.zeros(inst.dim), plan, 50).aggregate()
    print(f"{P:3d} {plan.depth:6d} {bias:10.3g} {var:10.3g} {tot:10.3g} {mc.final():10.3g}")
