"""Why average only the tail?

Runs the same mini-batch SGD with four choices of where averaging starts and
compares the exact expected risk with a Monte Carlo estimate.  Averaging from
the first step keeps the initial error in the average for too long; using only
the final iterate keeps the full stepsize-sized noise.  Any burn-in of a
constant fraction of the run avoids both, and on this instance a quarter of
the steps is enough.
"""
import numpy as np

from lsrsgd.dynamics import exact_risk_curve
from lsrsgd.engine import SgdConfig, run_many
from lsrsgd.operators import batch_threshold, minimax_stepsize
from lsrsgd.problem import additive_instance
from lsrsgd.samplers import noise_model_for

inst = additive_instance(np.logspace(0, -1, 10), sigma2=0.01)
noise = noise_model_for(inst)
b = int(round(batch_threshold(inst)))
gamma = 0.5 * minimax_stepsize(inst, b)
n = 4000
T = n // b
phi0 = np.outer(inst.optimum, inst.optimum)  # start at w0 = 0

print(f"b={b}, gamma={gamma:.4f}, {T} steps\n")
print(f"{'burn-in s':>12} {'exact risk':>12} {'MC risk':>12} {'MC s.e.':>10}")
for label, s, tail in (("0", 0, True), ("T/4", T // 4, True), ("T/2", T // 2, True),
                       ("final iter", T - 1, False)):
    ex = exact_risk_curve(inst, gamma, b, T, s, phi0)
    exact = ex.average_total[-1] if tail else ex.iterate_total[-1]
    cfg = SgdConfig(gamma=gamma, b=b, s=s, n=n, seed=0, log_points=5)
    agg = run_many(inst, noise, cfg, 200, tail=tail).aggregate()
    print(f"{label:>12} {exact:12.4g} {agg.final():12.4g} {agg.final('risk_total_se'):10.2g}")
