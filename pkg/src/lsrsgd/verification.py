"""Acceptance checks, shared by the test-suite and ``lsrsgd verify``.

Each check returns a :class:`CriterionResult`; thresholds are the stated ones
and are not adjusted to make a check pass.
"""
from __future__ import annotations

import tempfile
import time
import warnings
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional

import numpy as np

from .bounds import (minimax_variance_bound, doubling_bound, doubling_min_epoch_length,
                     separation_stepsizes, model_averaging_bound, theorem_bounds)
from .config import kappa10_spec, separation_spec, harmonic_spec
from .dynamics import (exact_covariance_step, exact_model_averaged_risk, exact_risk_curve,
                       exact_tail_averaged_risk, mean_tail_average, steady_state_covariance)
from .engine import SgdConfig, run_many
from .operators import (batch_threshold, kappa_b, min_eig_ratio, minimax_stepsize,
                        verify_operator_lemmas)
from .problem import additive_instance, gaussian_instance, random_psd, random_spd
from .samplers import NoiseModel
from .schedules import AveragingPlan, DoublingPlan, exact_doubling_risk, run_model_averaging_many


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"[{tag}] criterion {self.number:2d} {self.title}: {self.detail} ({self.seconds:.1f}s)"


def _random_instance(rng, d):
    H = random_spd(d, rng, cond=float(np.exp(rng.uniform(0, np.log(50)))))
    S = random_psd(d, rng, rank=int(rng.integers(1, d + 1)))
    return gaussian_instance(H, S, optimum=rng.standard_normal(d))


def criterion_1(n_instances: int = 100, seed: int = 1) -> CriterionResult:
    rng = np.random.default_rng(seed)
    fails, worst = [], -np.inf
    for k in range(n_instances):
        d = int(rng.integers(1, 9))
        b = (1, 2, 8)[k % 3]
        inst = _random_instance(rng, d)
        rep = verify_operator_lemmas(inst, None, b, n_random=50, seed=k)
        tb = rep["trace_bound"]
        worst = max(worst, tb.witness / (2 * inst.derived.sigma2_mle))
        if not rep.passed:
            fails.append((k, [c.name for c in rep.checks if not c.passed]))
    ok = not fails
    detail = (f"{n_instances} instances, max Tr(T_b^-1 S)/(2 Tr(H^-1 S)) = {worst:.3f}"
              + ("" if ok else f", failures {fails[:3]}"))
    return CriterionResult(1, "operator trace and positivity checks", ok, detail)


def criterion_2(h: float = 0.7, sigma2: float = 0.3) -> CriterionResult:
    inst = additive_instance([h], sigma2)
    phi = steady_state_covariance(inst, 1.0 / (3 * h), 1)[0, 0]
    target = sigma2 / (3 * h)
    rel = abs(phi - target) / target
    return CriterionResult(2, "closed-form steady state", rel <= 1e-10,
                           f"phi = {phi:.15g}, sigma^2/(3h) = {target:.15g}, rel err {rel:.2e}")


def criterion_3() -> CriterionResult:
    inst = kappa10_spec().build()
    eta0 = -inst.optimum
    L0 = inst.excess_risk(np.zeros(inst.dim))
    phi0 = np.outer(eta0, eta0)
    worst, bad = 0.0, []
    for n in (1000, 10000):
        for b in (1, 4, 16):
            T = n // b
            g = 0.5 * minimax_stepsize(inst, b)
            for s in (0, T // 4, T // 2):
                _, eb, ev = exact_tail_averaged_risk(inst, g, b, s, T - s, phi0)
                bb, bv = theorem_bounds(inst, g, b, s, n, L0)
                r = max(eb / bb, ev / bv)
                worst = max(worst, r)
                if eb > bb or ev > bv:
                    bad.append((n, b, s))
    return CriterionResult(3, "tail-average bound dominance", not bad,
                           f"18 grid points, max exact/bound ratio {worst:.3f}"
                           + ("" if not bad else f", violations {bad}"))


def criterion_4(n: int = 2000, seeds: int = 400, seed: int = 0, log_points: int = 30) -> CriterionResult:
    inst = kappa10_spec().build()
    noise = NoiseModel.additive(inst.derived.sigma2)
    g = 1.0 / inst.derived.r_squared
    s = n // 2
    ex = exact_risk_curve(inst, g, 1, n, s)
    bound = minimax_variance_bound(inst, n, s)
    cfg = SgdConfig(gamma=g, b=1, s=s, n=n, seed=seed, mode="variance", log_points=log_points)
    agg = run_many(inst, noise, cfg, seeds).aggregate()
    st = agg.serial_step
    exact = np.where(st > s, ex.average_variance[st], ex.iterate_variance[st])
    z = (agg["risk_variance"] - exact) / agg["risk_variance_se"]
    ok_bound = ex.average_variance[-1] <= bound
    ok_mc = bool(np.all(np.abs(z) <= 3))
    return CriterionResult(
        4, "minimax variance", ok_bound and ok_mc,
        f"exact {ex.average_variance[-1]:.4g} <= 4 d sigma^2/(n-s) = {bound:.4g}: {ok_bound}; "
        f"max |z| over {len(st)} logged steps = {np.max(np.abs(z)):.2f}")


def bias_slope(inst, b: int, window=(10, 20)):
    """Per-step slope of log iterate bias risk over steps [w0 kappa_b, w1 kappa_b]."""
    g = 0.5 * minimax_stepsize(inst, b)
    kb = kappa_b(inst, b)
    t0, t1 = int(window[0] * kb), int(window[1] * kb)
    eta0 = -inst.optimum
    c = exact_risk_curve(inst, g, b, t1, t1, np.outer(eta0, eta0), with_noise=False)
    t = np.arange(t0, t1 + 1)
    slope = np.polyfit(t, np.log(c.iterate_bias[t]), 1)[0]
    return slope, kb


def criterion_5() -> CriterionResult:
    inst = kappa10_spec().build()
    parts, ok = [], True
    for b in (1, int(round(batch_threshold(inst)))):
        slope, kb = bias_slope(inst, b)
        ratio = slope / (-1.0 / kb)
        good = abs(ratio - 1) <= 0.10
        ok &= good
        parts.append(f"b={b}: slope {slope:.4g} vs -1/kappa_b {-1 / kb:.4g} (ratio {ratio:.3f})")
    return CriterionResult(5, "bias geometric rate", ok, "; ".join(parts))


def criterion_6(n_instances: int = 10, steps: int = 2000, seed: int = 6) -> CriterionResult:
    rng = np.random.default_rng(seed)
    worst = np.inf
    for k in range(n_instances):
        d = int(rng.integers(2, 9))
        inst = _random_instance(rng, d)
        b = (1, 2, 8)[k % 3]
        g = 0.5 * minimax_stepsize(inst, b)
        phi = np.zeros((d, d))
        for _ in range(steps):
            nxt = exact_covariance_step(inst, g, b, phi)
            worst = min(worst, min_eig_ratio(nxt - phi))
            phi = nxt
    return CriterionResult(6, "PSD monotonicity", worst >= -1e-10,
                           f"{n_instances} instances x {steps} steps, worst normalized "
                           f"min eig of increment {worst:.3g}")


def harmonic_final_risks(batches, n=None, start=None):
    inst = harmonic_spec().build()
    kap = inst.derived.kappa
    n = n or int(round(200 * kap))
    start = start or int(round(5 * kap))
    eta0 = -inst.optimum
    out = {}
    for b in batches:
        g = 0.5 * minimax_stepsize(inst, b)
        T, s = n // b, start // b
        out[b] = exact_tail_averaged_risk(inst, g, b, s, T - s, np.outer(eta0, eta0))[0]
    return inst, out


def criterion_7() -> CriterionResult:
    inst = harmonic_spec().build()
    bt = batch_threshold(inst)
    b_t = int(round(bt))
    d = inst.dim
    _, risk = harmonic_final_risks(sorted({1, b_t, d, 11}))
    r1, rt, rd = risk[1], risk[b_t], risk[d]
    ok1 = rt <= 2 * r1
    ok2 = rd >= 2 * rt
    return CriterionResult(
        7, "mini-batching threshold", ok1 and ok2,
        f"b_thresh={bt:.3f} (run as {b_t}); risk(1)={r1:.4g}, risk({b_t})={rt:.4g} "
        f"[ratio {rt / r1:.2f}, need <= 2: {ok1}], risk({d})={rd:.4g} "
        f"[ratio {rd / rt:.2f}, need >= 2: {ok2}]; reference b=11: risk={risk[11]:.4g} "
        f"(ratio to b=1 {risk[11] / r1:.2f})")


def criterion_8(d: int = 32) -> CriterionResult:
    inst = separation_spec(d).build()
    mis, well = separation_stepsizes(d)
    ratio_ok = abs(well / mis - d / 4) <= 1e-12 * d
    with warnings.catch_warnings():
        # both stepsizes sit above gamma_max/2 of this instance on purpose
        warnings.simplefilter("ignore", RuntimeWarning)
        r_well = verify_operator_lemmas(inst, well / 2, 1, allow_large_step=True)["trace_bound"]
        r_mis = verify_operator_lemmas(inst, mis / 2, 1, allow_large_step=True)["trace_bound"]
    ok = ratio_ok and (not r_well.passed) and r_mis.passed
    lim = 2 * inst.derived.sigma2_mle
    return CriterionResult(
        8, "separation instance", ok,
        f"ratio {well / mis:.12g} (d/4 = {d / 4}); Tr(T^-1 S) = {r_well.witness:.4g} at "
        f"well-specified step (check fails: {not r_well.passed}), {r_mis.witness:.4g} at "
        f"mis-specified step (passes: {r_mis.passed}); limit {lim:.4g}")


def _plan_invariants(plan: DoublingPlan) -> bool:
    L = plan.n_levels
    eps = plan.epochs
    return (len(eps) == L - 1
            and all(e.b == 2 ** (e.index - 1) * plan.b0 and e.samples == plan.t * e.b for e in eps)
            and plan.work == sum(e.samples for e in eps) + plan.n // 2 <= plan.n
            and plan.depth == (L - 1) * plan.t + plan.t
            and plan.final_phase["b"] * 2 * plan.t == plan.n)


def criterion_9(t: int = 560) -> CriterionResult:
    ex_plan = DoublingPlan(2, 8, 256)
    example_ok = ([e.b for e in ex_plan.epochs] == [2, 4, 8]
                  and [e.samples for e in ex_plan.epochs] == [16, 32, 64]
                  and ex_plan.final_phase["b"] == 16 and ex_plan.final_phase["samples"] == 128
                  and ex_plan.depth == 32 and ex_plan.work == 240)
    acct_ok = example_ok and all(_plan_invariants(DoublingPlan(b0, tt, b0 * tt * 2 ** k))
                                 for b0 in (1, 3, 7) for tt in (4, 10, 560) for k in (2, 3, 5))
    inst = kappa10_spec().build()
    b0 = int(round(batch_threshold(inst)))
    tmin = doubling_min_epoch_length(inst)
    if t < tmin:
        raise ValueError("epoch length below 24 kappa log kappa")
    plan = DoublingPlan(b0, t, 4 * b0 * t)
    g = 0.5 * minimax_stepsize(inst, b0)
    L0 = inst.excess_risk(np.zeros(inst.dim))
    res = exact_doubling_risk(inst, g, plan, -inst.optimum)
    bound = doubling_bound(inst, b0, t, plan.n, L0)
    ok = acct_ok and res.final_total <= bound and res.depth == plan.depth
    return CriterionResult(
        9, "doubling schedule", ok,
        f"accounting {acct_ok}; b0={b0}, t={t} (>= {tmin}), n={plan.n}: exact {res.final_total:.4g} "
        f"<= bound {bound:.4g}")


def criterion_10(n: int = 4000, seeds: int = 400, seed: int = 0) -> CriterionResult:
    inst = kappa10_spec().build()
    noise = NoiseModel.additive(inst.derived.sigma2)
    eta0 = -inst.optimum
    L0 = inst.excess_risk(np.zeros(inst.dim))
    b = 1
    g = 0.5 * minimax_stepsize(inst, b)
    worst_rel, mc_ok, parts = 0.0, True, []
    for P in (2, 4, 8):
        steps = (n // P) // b
        s = steps // 2
        _, _, single_var = exact_tail_averaged_risk(inst, g, b, s, steps - s, None)
        _, _, avg_var = exact_model_averaged_risk(inst, g, b, s, steps - s, P, eta0)
        # the variance process has zero mean, so the mean part must vanish
        mean_var = mean_tail_average(inst, g, s, steps - s, np.zeros(inst.dim))
        rel = abs(avg_var - single_var / P) / (single_var / P) + float(np.abs(mean_var).max())
        worst_rel = max(worst_rel, rel)
        plan = AveragingPlan(P, n, b, s, g)
        agg = run_model_averaging_many(inst, noise, np.zeros(inst.dim), plan, seeds, seed).aggregate()
        bb, bv = model_averaging_bound(inst, g, b, s, n, P, L0)
        m, se = agg.final("risk_total"), agg.final("risk_total_se")
        good = m <= bb + bv + 3 * se
        mc_ok &= good
        parts.append(f"P={P}: MC {m:.3g} +- {se:.2g} vs bound {bb + bv:.3g}")
    ok = worst_rel <= 1e-10 and mc_ok
    return CriterionResult(10, "model averaging", ok,
                           f"variance identity rel err {worst_rel:.2e}; " + "; ".join(parts))


def criterion_11(seeds: int = 25, out_dir: Optional[str] = None) -> CriterionResult:
    from .experiments import ExperimentSpec, run_experiment
    tmp = out_dir or tempfile.mkdtemp(prefix="lsrsgd_fig_")
    f1 = run_experiment(ExperimentSpec("fig1", tmp + "/fig1", seeds=seeds, log_points=40))
    f2 = run_experiment(ExperimentSpec("fig2", tmp + "/fig2", seeds=seeds, log_points=40))
    if f1.partial or f2.partial:
        return CriterionResult(11, "experiment reproduction", False,
                               f"bundle errors {f1.metadata['errors'] + f2.metadata['errors']}")
    bs = f1.summary["batch_sizes"]
    depth = f1.summary["n"] // max(bs)
    var = []
    for b in bs:
        c = f1.curve(f"fig1_b{b}_mc.csv")
        i = int(np.searchsorted(c.serial_step, depth))
        if i >= len(c) or c.serial_step[i] != depth:
            raise RuntimeError("common depth not logged")
        var.append(c["risk_variance"][i])
    mono = bool(np.all(np.diff(var) < 0))
    fin = {k: v["mc"] for k, v in f2.summary["final_total"].items()}
    tail = min(fin["0.25"], fin["0.5"])
    order = tail < fin["0"] and tail < fin["none"]
    return CriterionResult(
        11, "experiment reproduction", mono and order,
        f"variance at depth {depth} over b={bs}: {[f'{v:.3g}' for v in var]} "
        f"(monotone: {mono}); final total fig2 {({k: float(f'{v:.3g}') for k, v in fin.items()})} "
        f"(tail-averaging best: {order})")


CRITERIA: Dict[int, Callable[[], CriterionResult]] = {
    1: criterion_1, 2: criterion_2, 3: criterion_3, 4: criterion_4, 5: criterion_5,
    6: criterion_6, 7: criterion_7, 8: criterion_8, 9: criterion_9, 10: criterion_10,
    11: criterion_11,
}


def run_criterion(k: int) -> CriterionResult:
    t0 = time.perf_counter()
    try:
        res = CRITERIA[k]()
    except Exception as exc:
        res = CriterionResult(k, "error", False, f"{type(exc).__name__}: {exc}")
    res.seconds = time.perf_counter() - t0
    return res


def run_all(selected=None) -> List[CriterionResult]:
    keys = sorted(CRITERIA) if not selected else sorted(selected)
    return [run_criterion(k) for k in keys]
