"""Mini-batch tail-averaged SGD (single pass, constant stepsize).

The core loop advances a stack of replicates (independent streams) and modes
(full / bias-only / variance-only on the same samples) together, so a step is
one batched matrix product regardless of the number of seeds.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from .operators import divergent_stepsize, minimax_stepsize
from .problem import ProblemInstance
from .risk import RiskCurve, aggregate_array
from .samplers import BLOCK, NoiseModel, SampleStream

DIVERGENCE_NORM = 1e12
MODES = ("full", "bias", "variance", "coupled")


class DivergenceError(FloatingPointError):
    pass


def log_steps(T: int, points: int = 200, include: Sequence[int] = ()) -> np.ndarray:
    """Roughly geometric logging grid over 1..T plus any forced steps."""
    if T < 1:
        return np.array([], dtype=np.int64)
    g = np.unique(np.round(np.geomspace(1, T, num=min(points, T))).astype(np.int64))
    extra = [int(x) for x in include if 1 <= x <= T]
    return np.unique(np.concatenate([g, extra, [T]]).astype(np.int64))


@dataclass(frozen=True)
class SgdConfig:
    """gamma may be a float or "auto" (gamma_max/2); s may be an integer
    number of steps or a fraction in (0, 1) of the total steps floor(n/b)."""

    gamma: Union[float, str] = "auto"
    b: int = 1
    s: Union[int, float] = 0
    n: int = 1000
    seed: int = 0
    mode: str = "full"
    log_schedule: Union[str, Sequence[int]] = "geometric"
    log_points: int = 200

    def replace(self, **kw) -> "SgdConfig":
        return dataclasses.replace(self, **kw)

    @property
    def steps(self) -> int:
        return self.n // self.b

    def resolved_s(self) -> int:
        s = self.s
        if isinstance(s, float) and not s.is_integer():
            if not 0 < s < 1:
                raise ValueError("fractional s must lie in (0, 1)")
            return int(np.floor(s * self.steps))
        return int(s)

    def resolved_gamma(self, inst: ProblemInstance) -> float:
        if isinstance(self.gamma, str):
            if self.gamma != "auto":
                raise ValueError(f"unknown gamma spec {self.gamma!r}")
            return 0.5 * minimax_stepsize(inst, self.b)
        return float(self.gamma)

    def validate(self, inst: ProblemInstance, tail: bool = True) -> None:
        if self.b < 1 or self.n < self.b:
            raise ValueError("need b >= 1 and n >= b")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        g = self.resolved_gamma(inst)
        if not g > 0:
            raise ValueError("gamma must be positive")
        s = self.resolved_s()
        if tail and not (0 <= s < self.steps):
            raise ValueError(f"need 0 <= s < floor(n/b) = {self.steps}, got s = {s}")

    def schedule(self) -> np.ndarray:
        T = self.steps
        if isinstance(self.log_schedule, str):
            if self.log_schedule == "all":
                return np.arange(1, T + 1)
            if self.log_schedule == "geometric":
                s = self.resolved_s()
                return log_steps(T, self.log_points, include=(s, s + 1))
            raise ValueError(f"unknown log schedule {self.log_schedule!r}")
        steps = np.unique(np.asarray(self.log_schedule, dtype=np.int64))
        if steps.size and (steps[0] < 1 or steps[-1] > T):
            raise ValueError("logged steps must lie in 1..floor(n/b)")
        return steps


@dataclass
class RunRecord:
    final_average: np.ndarray
    final_iterate: np.ndarray
    curve: RiskCurve
    depth: int
    work: int
    gamma: float
    s: int
    parts: Dict[str, tuple] = field(default_factory=dict)
    logged_iterates: Optional[np.ndarray] = None
    extra: Dict[str, object] = field(default_factory=dict)


@dataclass
class ReplicateResult:
    """Output of :func:`run_replicates`: arrays over (replicate, mode, ...)."""

    modes: tuple
    steps: np.ndarray
    samples: np.ndarray
    risk_average: np.ndarray  # (R, K, L); iterate risk before averaging starts
    risk_iterate: np.ndarray  # (R, K, L)
    final_average: np.ndarray  # (R, K, d)
    final_iterate: np.ndarray  # (R, K, d)
    gamma: float
    s: int
    depth: int
    work: int
    logged_iterates: Optional[np.ndarray] = None  # (R, K, L, d)
    stream_average: Optional[np.ndarray] = None  # per-stream outputs before grouping
    stream_iterate: Optional[np.ndarray] = None

    def mode_index(self, mode: str) -> int:
        return self.modes.index(mode)

    def curve(self, r: int) -> RiskCurve:
        return _curve_from(self, lambda a: a[r])

    def aggregate(self) -> RiskCurve:
        cols = {}
        for name, (src, k) in _column_map(self.modes).items():
            cols[name] = getattr(self, src)[:, k, :]
        return aggregate_array(self.steps, self.samples, cols)

    def record(self, r: int = 0) -> RunRecord:
        main = self.mode_index("full") if "full" in self.modes else 0
        parts = {m: (self.final_average[r, k], self.final_iterate[r, k])
                 for k, m in enumerate(self.modes)}
        return RunRecord(
            final_average=self.final_average[r, main], final_iterate=self.final_iterate[r, main],
            curve=self.curve(r), depth=self.depth, work=self.work, gamma=self.gamma, s=self.s,
            parts=parts,
            logged_iterates=None if self.logged_iterates is None else self.logged_iterates[r],
        )


def _column_map(modes):
    out = {}
    names = {"full": ("risk_total", "risk_iterate"),
             "bias": ("risk_bias", "risk_iterate_bias"),
             "variance": ("risk_variance", "risk_iterate_variance")}
    for k, m in enumerate(modes):
        a, i = names[m]
        out[a] = ("risk_average", k)
        out[i] = ("risk_iterate", k)
    return out


def _curve_from(res: ReplicateResult, pick) -> RiskCurve:
    cols = {name: pick(getattr(res, src))[k] for name, (src, k) in _column_map(res.modes).items()}
    return RiskCurve(res.steps, res.samples, cols)


def _expand_modes(mode: str) -> tuple:
    return ("full", "bias", "variance") if mode == "coupled" else (mode,)


def run_replicates(inst: ProblemInstance, noise: NoiseModel, config: SgdConfig,
                   streams: Sequence[int] = (0,), w0: Optional[np.ndarray] = None,
                   tail: bool = True, keep_iterates: bool = False,
                   divergence_check: bool = True, sample_offset: int = 0,
                   group: int = 1) -> ReplicateResult:
    """Run mini-batch tail-averaged SGD on each stream of ``config.seed`` in lock-step.

    ``w0`` is a d-vector shared by all runs, or a full (streams, modes, d)
    state (used to hand iterates from one epoch to the next).  Samples are
    read from index ``sample_offset`` onward.  With ``group = P`` consecutive
    streams are averaged in blocks of P and the logged risks, final average
    and final iterate refer to those model averages.
    """
    config.validate(inst, tail)
    gamma = config.resolved_gamma(inst)
    b, T = config.b, config.steps
    s = config.resolved_s() if tail else T - 1
    modes = _expand_modes(config.mode)
    d = inst.dim
    R, K = len(streams), len(modes)
    if R % group:
        raise ValueError("number of streams must be a multiple of the group size")
    G = R // group
    w0 = np.zeros(d) if w0 is None else np.asarray(w0, dtype=float)
    mult = np.array([0.0 if m == "bias" else 1.0 for m in modes])
    if w0.shape == (R, K, d):
        W = w0.copy()
    elif w0.shape == (d,):
        W = np.empty((R, K, d))
        for k, m in enumerate(modes):
            W[:, k] = inst.optimum if m == "variance" else w0
    else:
        raise ValueError("w0 has the wrong shape")

    def gmean(A):
        return A if group == 1 else A.reshape(G, group, K, d).mean(axis=1)
    total = np.zeros((R, K, d))
    logs = config.schedule()
    L = len(logs)
    risk_av = np.empty((G, K, L))
    risk_it = np.empty((G, K, L))
    iters = np.empty((G, K, L, d)) if keep_iterates else None
    H, wstar = inst.hessian, inst.optimum
    srcs = [SampleStream(inst, noise, config.seed, st) for st in streams]
    step_chunk = max(1, BLOCK // b)
    li = 0
    lr = gamma / b
    t = 0
    while t < T:
        c = min(step_chunk, T - t)
        start, count = sample_offset + t * b, c * b
        X = np.empty((R, count, d))
        Y = np.empty((R, K, count))
        for r, src in enumerate(srcs):
            xs, clean, eps = src.samples(start, count)
            X[r] = xs
            Y[r] = clean[None, :] + mult[:, None] * eps[None, :]
        X = X.reshape(R, c, b, d)
        Y = Y.reshape(R, K, c, b)
        for j in range(c):
            t += 1
            xb = X[:, j]  # (R, b, d)
            pred = np.matmul(W, np.swapaxes(xb, 1, 2))  # (R, K, b)
            res = pred - Y[:, :, j]
            W = W - lr * np.matmul(res, xb)
            if t > s:
                total += W
            if li < L and logs[li] == t:
                Wg = gmean(W)
                e = Wg - wstar
                risk_it[:, :, li] = 0.5 * np.einsum("rki,ij,rkj->rk", e, H, e)
                if t > s:
                    ea = gmean(total) / (t - s) - wstar
                    risk_av[:, :, li] = 0.5 * np.einsum("rki,ij,rkj->rk", ea, H, ea)
                else:
                    risk_av[:, :, li] = risk_it[:, :, li]
                if keep_iterates:
                    iters[:, :, li] = Wg
                li += 1
        if divergence_check and not np.all(np.abs(W) < DIVERGENCE_NORM):
            _raise_divergence(inst, gamma, b, t)
    np.maximum(risk_av, 0.0, out=risk_av)
    np.maximum(risk_it, 0.0, out=risk_it)
    stream_avg = total / (T - s)
    return ReplicateResult(
        modes=modes, steps=logs, samples=logs * b,
        risk_average=risk_av, risk_iterate=risk_it,
        final_average=gmean(stream_avg), final_iterate=gmean(W),
        gamma=gamma, s=s, depth=T, work=T * b * group, logged_iterates=iters,
        stream_average=stream_avg, stream_iterate=W,
    )


def _raise_divergence(inst, gamma, b, t):
    try:
        gdiv = f"{divergent_stepsize(inst, b):.6g}"
    except Exception:
        gdiv = "unavailable"
    raise DivergenceError(
        f"iterate norm exceeded {DIVERGENCE_NORM:g} by step {t} with gamma={gamma:.6g}, b={b}; "
        f"divergent stepsize for this batch size is {gdiv}")


def run_minibatch_tail_sgd(inst: ProblemInstance, noise: NoiseModel, config: SgdConfig,
                           w0: Optional[np.ndarray] = None, stream: int = 0,
                           keep_iterates: bool = False) -> RunRecord:
    """Mini-batch tail-averaged SGD: returns the average of iterates s+1..floor(n/b) and the final iterate."""
    return run_replicates(inst, noise, config, (stream,), w0, tail=True,
                          keep_iterates=keep_iterates).record(0)


def run_final_iterate_sgd(inst: ProblemInstance, noise: NoiseModel, config: SgdConfig,
                          w0: Optional[np.ndarray] = None, stream: int = 0) -> RunRecord:
    """Same dynamics with s = floor(n/b) - 1, i.e. the estimate is the final iterate."""
    rec = run_replicates(inst, noise, config, (stream,), w0, tail=False).record(0)
    rec.final_average = rec.final_iterate
    return rec


def run_many(inst: ProblemInstance, noise: NoiseModel, config: SgdConfig, n_seeds: int,
             w0: Optional[np.ndarray] = None, tail: bool = True, n_jobs: int = 1,
             chunk: int = 256, group: int = 1) -> ReplicateResult:
    """Independent replicates on streams 0..n_seeds*group-1 of ``config.seed``.

    Replicates are advanced in vectorized chunks; with ``n_jobs > 1`` the chunks
    run in parallel through joblib.  Results do not depend on ``n_jobs``.
    """
    total = n_seeds * group
    chunk = max(group, chunk - chunk % group)
    groups = [list(range(i, min(i + chunk, total))) for i in range(0, total, chunk)]
    kw = dict(w0=w0, tail=tail, group=group)
    if n_jobs == 1 or len(groups) == 1:
        parts = [run_replicates(inst, noise, config, g, **kw) for g in groups]
    else:
        from joblib import Parallel, delayed
        parts = Parallel(n_jobs=n_jobs)(
            delayed(run_replicates)(inst, noise, config, g, **kw) for g in groups)
    return _concat(parts)


def _concat(parts: List[ReplicateResult]) -> ReplicateResult:
    if len(parts) == 1:
        return parts[0]
    p0 = parts[0]
    cat = lambda name: np.concatenate([getattr(p, name) for p in parts])
    return dataclasses.replace(
        p0, risk_average=cat("risk_average"), risk_iterate=cat("risk_iterate"),
        final_average=cat("final_average"), final_iterate=cat("final_iterate"),
        stream_average=cat("stream_average"), stream_iterate=cat("stream_iterate"),
        logged_iterates=None)
