"""How large can the stepsize be, and how does that change with batch size?

For a fixed instance we print three stepsizes per batch size b:

* gamma_div: beyond it the second moment of the iterates blows up,
* gamma_max: the stepsize the analysis is built on (always <= gamma_div),
* gamma_max / 2: the default used everywhere else in the package.

Well below the batch threshold b_thresh the admissible stepsize grows almost
linearly in b.  At b_thresh it is already half of the linear extrapolation,
and beyond it the growth stalls at 2 / ||H||, so larger batches stop buying
serial speed-up.
"""
import numpy as np

from lsrsgd.operators import batch_threshold, divergent_stepsize, kappa_b, minimax_stepsize
from lsrsgd.problem import additive_instance

inst = additive_instance(np.logspace(0, -1, 10), sigma2=0.01)
ds = inst.derived
print(f"d={inst.dim}  R^2={ds.r_squared:.3f}  ||H||={ds.h_norm:.3f}  mu={ds.mu:.3f}  "
      f"rho_m={ds.rho_m:.3f}")
print(f"batch threshold b_thresh = {batch_threshold(inst):.3f}\n")

print(f"{'b':>5} {'gamma_div':>10} {'gamma_max':>10} {'ratio':>7} {'b*gamma_1':>10} {'kappa_b':>9}")
g1 = minimax_stepsize(inst, 1)
for b in (1, 2, 4, 7, 8, 16, 64, 256):
    gd, gm = divergent_stepsize(inst, b), minimax_stepsize(inst, b)
    print(f"{b:5d} {gd:10.4f} {gm:10.4f} {gm / gd:7.3f} {b * g1:10.4f} {kappa_b(inst, b):9.2f}")

print("\ngamma_max / (b * gamma_1) drops to about 1/2 at b_thresh; for large b both "
      "stepsizes approach 2/||H|| = 2.")
