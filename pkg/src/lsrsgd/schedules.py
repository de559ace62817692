"""Batch-doubling and model-averaging schedules.

Depth counts serial updates and work counts samples (gradient evaluations).
Every schedule has a Monte Carlo runner built on :mod:`lsrsgd.engine` and an
exact-expectation counterpart built on :mod:`lsrsgd.dynamics`.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from .dynamics import exact_model_averaged_risk, exact_risk_curve
from .engine import ReplicateResult, RunRecord, SgdConfig, run_replicates
from .operators import kappa_b
from .problem import ProblemInstance
from .risk import RiskCurve
from .samplers import NoiseModel


@dataclass(frozen=True)
class Epoch:
    index: int
    b: int
    steps: int
    samples: int


@dataclass(frozen=True)
class DoublingPlan:
    """Batch-doubling plan: log2(n/(b0 t)) - 1 doubling epochs of t steps each,
    then a tail-averaged phase with batch n/(2t), burn-in t/2, n/2 samples."""

    b0: int
    t: int
    n: int

    def __post_init__(self):
        if self.b0 < 1 or self.t < 2:
            raise ValueError("need b0 >= 1 and t >= 2")
        ratio = self.n / (self.b0 * self.t)
        if ratio < 4:
            raise ValueError(f"n/(b0 t) = {ratio:.3g} must be at least 4")
        if not (ratio.is_integer() and _is_pow2(int(ratio))):
            raise ValueError(f"n/(b0 t) = {ratio:.6g} is not a power of two; use DoublingPlan.fit")

    @classmethod
    def fit(cls, b0: int, t: int, n: int) -> "DoublingPlan":
        """Round the budget down so that n/(b0 t) is a power of two (warns)."""
        ratio = n // (b0 * t)
        if ratio < 4:
            raise ValueError(f"budget n={n} is below 4 b0 t = {4 * b0 * t}")
        p = 1 << (ratio.bit_length() - 1)
        n_fit = p * b0 * t
        if n_fit != n:
            warnings.warn(f"doubling budget rounded down from n={n} to n={n_fit}",
                          RuntimeWarning, stacklevel=2)
        return cls(b0, t, n_fit)

    @property
    def n_levels(self) -> int:
        return int(round(math.log2(self.n / (self.b0 * self.t))))

    @property
    def epochs(self) -> List[Epoch]:
        return [Epoch(l, 2 ** (l - 1) * self.b0, self.t, self.t * 2 ** (l - 1) * self.b0)
                for l in range(1, self.n_levels)]

    @property
    def final_phase(self) -> dict:
        b = self.n // (2 * self.t)
        return {"b": b, "s": self.t // 2, "samples": self.n // 2, "steps": (self.n // 2) // b}

    @property
    def depth(self) -> int:
        return sum(e.steps for e in self.epochs) + self.final_phase["steps"]

    @property
    def work(self) -> int:
        return sum(e.samples for e in self.epochs) + self.final_phase["samples"]

    def describe(self) -> List[str]:
        lines = [f"doubling plan b0={self.b0} t={self.t} n={self.n}"]
        for e in self.epochs:
            lines.append(f"epoch {e.index}: batch {e.b}, {e.steps} steps, {e.samples} samples")
        f = self.final_phase
        lines.append(f"final: batch {f['b']}, burn-in {f['s']}, {f['steps']} steps, "
                     f"{f['samples']} samples")
        lines.append(f"depth {self.depth} work {self.work}")
        return lines


def _is_pow2(k: int) -> bool:
    return k > 0 and k & (k - 1) == 0


def _stitch(pieces) -> RiskCurve:
    """Concatenate per-phase curves, shifting steps and samples."""
    steps, samples, cols = [], [], {}
    d0 = s0 = 0
    for curve, depth, work in pieces:
        steps.append(curve.serial_step + d0)
        samples.append(curve.samples_consumed + s0)
        for k, v in curve.columns.items():
            cols.setdefault(k, []).append(v)
        d0 += depth
        s0 += work
    return RiskCurve(np.concatenate(steps), np.concatenate(samples),
                     {k: np.concatenate(v) for k, v in cols.items()},
                     n_seeds=pieces[0][0].n_seeds)


def _run_phases(inst, noise, phases, w0, gamma, seed, streams, mode, log_points):
    """phases: list of (b, steps, s, tail).  Returns stitched per-stream results."""
    state = None if w0 is None else np.asarray(w0, dtype=float)
    offset = 0
    results = []
    for b, steps, s, tail in phases:
        cfg = SgdConfig(gamma=gamma, b=b, s=s, n=steps * b, seed=seed, mode=mode,
                        log_points=log_points)
        res = run_replicates(inst, noise, cfg, streams, w0=state, tail=tail,
                             sample_offset=offset)
        state = res.stream_iterate
        offset += steps * b
        results.append(res)
    return results


def _replicate_curve(results: Sequence[ReplicateResult], r: Optional[int]) -> RiskCurve:
    pieces = []
    for res in results:
        c = res.curve(r) if r is not None else res.aggregate()
        pieces.append((c, res.depth, res.work))
    return _stitch(pieces)


def _doubling_phases(plan: DoublingPlan):
    ph = [(e.b, e.steps, e.steps - 1, False) for e in plan.epochs]
    f = plan.final_phase
    ph.append((f["b"], f["steps"], f["s"], True))
    return ph


def run_doubling(inst: ProblemInstance, noise: NoiseModel, w0, gamma: float, b0: int, t: int,
                 n: int, seed: int = 0, stream: int = 0, mode: str = "full",
                 log_points: int = 50) -> RunRecord:
    """Batch doubling; epochs hand their final iterate to the next epoch."""
    plan = DoublingPlan.fit(b0, t, n)
    results = _run_phases(inst, noise, _doubling_phases(plan), w0, gamma, seed, (stream,),
                          mode, log_points)
    last = results[-1]
    rec = last.record(0)
    rec.curve = _replicate_curve(results, 0)
    rec.depth, rec.work = plan.depth, plan.work
    rec.extra["plan"] = plan
    return rec


def run_doubling_many(inst, noise, w0, gamma, b0, t, n, n_seeds, seed=0, mode="full",
                      log_points=50):
    """Monte Carlo doubling runs on streams 0..n_seeds-1; returns (plan, curve, final risks)."""
    plan = DoublingPlan.fit(b0, t, n)
    results = _run_phases(inst, noise, _doubling_phases(plan), w0, gamma, seed,
                          range(n_seeds), mode, log_points)
    return plan, _replicate_curve(results, None), results[-1]


@dataclass
class OracleOutcome:
    record: RunRecord
    switch_step: Optional[int]
    constant_epochs: int
    plan: Optional[DoublingPlan]

    @property
    def depth(self) -> int:
        return self.record.depth


def oracle_constant_epochs(inst: ProblemInstance, gamma: float, b0: int, t: int,
                           initial_risk: float, noise_level: float, max_epochs: int) -> int:
    """Number of constant-batch epochs before the risk proxy
    kappa_b (1 - gamma mu)^{k t} L0 drops to ``noise_level`` (capped)."""
    if initial_risk <= noise_level:
        return 0
    q = 1.0 - gamma * inst.derived.mu
    kb = kappa_b(inst, b0)
    for k in range(1, max_epochs + 1):
        if kb * q ** (k * t) * initial_risk <= noise_level:
            return k
    return max_epochs


def run_doubling_with_oracle(inst: ProblemInstance, noise: NoiseModel, w0, gamma: float,
                             b0: int, t: int, n: int, seed: int = 0, initial_risk: float = 1.0,
                             noise_level: float = 0.0, stream: int = 0,
                             log_points: int = 50) -> OracleOutcome:
    """Constant batch ``b0`` epochs (final iterate forwarded) until the oracle
    proxy reaches ``noise_level``, then batch doubling on the remaining budget."""
    max_epochs = n // (b0 * t)
    k = oracle_constant_epochs(inst, gamma, b0, t, initial_risk, noise_level, max_epochs)
    remaining = n - k * b0 * t
    switched = k < max_epochs and remaining // (b0 * t) >= 4
    phases = [(b0, t, t - 1, False)] * k
    plan = None
    if switched:
        plan = DoublingPlan.fit(b0, t, remaining)
        phases = phases + _doubling_phases(plan)
    elif k == 0:
        raise ValueError("budget too small for a single epoch")
    results = _run_phases(inst, noise, phases, w0, gamma, seed, (stream,), "full", log_points)
    rec = results[-1].record(0)
    if not switched:
        rec.final_average = rec.final_iterate
    rec.curve = _replicate_curve(results, 0)
    rec.depth = sum(r.depth for r in results)
    rec.work = sum(r.work for r in results)
    return OracleOutcome(rec, k * t if switched else None, k, plan)


# ---------------------------------------------------------------------------
# exact doubling


@dataclass
class ExactScheduleResult:
    steps: np.ndarray  # serial step at the end of each logged point
    risk_bias: np.ndarray
    risk_variance: np.ndarray
    final_bias: float
    final_variance: float
    depth: int
    work: int

    @property
    def final_total(self) -> float:
        return self.final_bias + self.final_variance


def exact_doubling_risk(inst: ProblemInstance, gamma: float, plan: DoublingPlan,
                        eta0: np.ndarray, prefix_epochs: Sequence = ()) -> ExactScheduleResult:
    """Exact expected risk of batch doubling (optionally after constant-batch
    ``prefix_epochs`` given as (b, steps) pairs)."""
    eta0 = np.asarray(eta0, dtype=float)
    pb, pv = np.outer(eta0, eta0), None
    steps, rb, rv = [], [], []
    t0 = 0
    for b, n_steps in list(prefix_epochs) + [(e.b, e.steps) for e in plan.epochs]:
        c = exact_risk_curve(inst, gamma, b, n_steps, n_steps, pb, pv)
        steps.append(t0 + c.steps[1:])
        rb.append(c.iterate_bias[1:])
        rv.append(c.iterate_variance[1:])
        pb, pv = c.phi_bias, c.phi_variance
        t0 += n_steps
    f = plan.final_phase
    c = exact_risk_curve(inst, gamma, f["b"], f["steps"], f["s"], pb, pv)
    avg = c.steps > f["s"]
    steps.append(t0 + c.steps[1:])
    rb.append(np.where(avg, c.average_bias, c.iterate_bias)[1:])
    rv.append(np.where(avg, c.average_variance, c.iterate_variance)[1:])
    work = plan.work + sum(b * s for b, s in prefix_epochs)
    return ExactScheduleResult(np.concatenate(steps), np.concatenate(rb), np.concatenate(rv),
                               float(c.average_bias[-1]), float(c.average_variance[-1]),
                               t0 + f["steps"], work)


# ---------------------------------------------------------------------------
# model averaging


@dataclass(frozen=True)
class AveragingPlan:
    """P independent tail-averaged runs on n // P samples each, averaged uniformly."""

    P: int
    n: int
    b: int = 1
    s: int = 0
    gamma: float = 0.0

    def __post_init__(self):
        if self.P < 1:
            raise ValueError("P must be >= 1")
        if self.per_machine < self.b:
            raise ValueError("too few samples per machine")

    @property
    def per_machine(self) -> int:
        return self.n // self.P

    @property
    def steps(self) -> int:
        return self.per_machine // self.b

    @property
    def depth(self) -> int:
        return self.steps

    @property
    def work(self) -> int:
        return self.steps * self.b * self.P

    def config(self, seed: int = 0, mode: str = "full", log_points: int = 50) -> SgdConfig:
        return SgdConfig(gamma=self.gamma, b=self.b, s=self.s, n=self.per_machine, seed=seed,
                         mode=mode, log_points=log_points)


def combine_streams(outputs) -> np.ndarray:
    """Uniform average of per-stream outputs given as {stream: vector};
    summation follows stream order so completion order is irrelevant."""
    keys = sorted(outputs)
    return np.sum([np.asarray(outputs[k], dtype=float) for k in keys], axis=0) / len(keys)


def run_model_averaging(inst: ProblemInstance, noise: NoiseModel, w0, plan: AveragingPlan,
                        seed: int = 0, first_stream: int = 0, mode: str = "full") -> RunRecord:
    """Run P independent streams (first_stream .. first_stream+P-1) and average.

    Streams share nothing but the seed, so they are advanced side by side in
    one vectorized loop; the combiner only sees the per-stream outputs.
    """
    streams = list(range(first_stream, first_stream + plan.P))
    res = run_replicates(inst, noise, plan.config(seed, mode), streams, w0=w0, group=plan.P)
    main = res.mode_index("full") if "full" in res.modes else 0
    per = {st: res.stream_average[i, main] for i, st in enumerate(streams)}
    rec = res.record(0)
    rec.final_average = combine_streams(per)
    rec.work = plan.work
    rec.extra["per_stream"] = per
    return rec


def run_model_averaging_many(inst, noise, w0, plan: AveragingPlan, n_sets: int, seed: int = 0,
                             mode: str = "full") -> ReplicateResult:
    """``n_sets`` independent model-averaged estimators (P streams each)."""
    from .engine import run_many
    return run_many(inst, noise, plan.config(seed, mode), n_sets, w0=w0, group=plan.P)


def exact_model_averaging_risk(inst: ProblemInstance, plan: AveragingPlan, eta0: np.ndarray):
    """Exact (total, bias, variance) risk of the P-average."""
    return exact_model_averaged_risk(inst, plan.gamma, plan.b, plan.s, plan.steps - plan.s,
                                     plan.P, eta0)
