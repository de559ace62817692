"""A mis-specified instance where the usual stepsize is too large.

On this instance the noise is concentrated along the top eigen-direction, so
the mismatch rho_m is d/2.  The stepsize one would pick for a well-specified
problem with the same H is d/4 times larger than the one that accounts for the
mismatch.  The exact steady-state variance shows what goes wrong: once d is
large enough (d >= 16 here) the larger stepsize pushes Tr(T_b^-1 Sigma) past
the 2 Tr(H^-1 Sigma) budget, while the smaller one stays inside it.
"""
from lsrsgd.experiments import separation_report

print(f"{'d':>4} {'ratio':>6} {'trace (mis)':>12} {'trace (well)':>13} {'budget':>8} "
      f"{'plateau (mis)':>14} {'plateau (well)':>15}")
for d in (8, 16, 32, 64):
    r = separation_report(d)
    print(f"{d:4d} {r['ratio']:6.1f} {r['trace_mis']:12.4g} {r['trace_well']:13.4g} "
          f"{2 * r['sigma2_mle']:8.3g} {r['plateau_mis']:14.4g} {r['plateau_well']:15.4g}")
