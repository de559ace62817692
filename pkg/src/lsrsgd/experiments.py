"""Experiment protocols producing CSV bundles and plot scripts.

A bundle is a directory holding one CSV per series, ``metadata.json`` and,
after :func:`emit_plots`, a matplotlib script per experiment.  Bundles carry
no timestamps, so identical specs reproduce identical bytes.
"""
from __future__ import annotations

import json
import math
import os
import traceback
import warnings
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .bounds import separation_stepsizes
from .config import InstanceSpec, kappa10_spec, separation_spec, harmonic_spec
from .dynamics import exact_risk_curve, steady_state_covariance
from .engine import SgdConfig, run_many
from .operators import batch_threshold, build_T_b, minimax_stepsize
from .problem import ProblemInstance
from .risk import RiskCurve
from .samplers import generator_info
from .schedules import (AveragingPlan, DoublingPlan, exact_doubling_risk,
                        exact_model_averaging_risk, run_doubling_many,
                        run_model_averaging_many)

KINDS = ("fig1", "fig2", "separation", "doubling_compare", "mixing_speedup", "custom")
DEFAULT_INSTANCES = {"fig1": harmonic_spec, "fig2": harmonic_spec,
                     "doubling_compare": kappa10_spec, "mixing_speedup": kappa10_spec,
                     "custom": kappa10_spec}


@dataclass
class ExperimentSpec:
    """``sweep`` meaning by kind: fig1/custom batch sizes, fig2 burn-in
    fractions (None = no averaging), separation dimension(s),
    mixing_speedup machine counts, doubling_compare (b0, t) pairs."""

    kind: str
    out_dir: str
    instance: Optional[InstanceSpec] = None
    seeds: int = 100
    n: Optional[int] = None
    sweep: Optional[list] = None
    seed: int = 0
    b_thresh: Optional[float] = None
    extra_b_thresh: Sequence[float] = (11,)
    monte_carlo: bool = True
    log_points: int = 60
    averaging_start_samples: Optional[int] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"experiment kind must be one of {KINDS}")
        if self.seeds < 1:
            raise ValueError("seeds must be >= 1")
        if self.instance is None and self.kind != "separation":
            self.instance = DEFAULT_INSTANCES[self.kind]()

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        d = dict(d)
        inst = d.pop("instance", None)
        if isinstance(inst, str):
            from .config import resolve_instance
            inst = resolve_instance(inst)
        elif isinstance(inst, dict):
            inst = InstanceSpec.from_dict(inst)
        return cls(instance=inst, **d)

    @classmethod
    def load(cls, path) -> "ExperimentSpec":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class Bundle:
    out_dir: str
    kind: str
    files: List[str] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)
    partial: bool = False
    summary: dict = field(default_factory=dict)

    def path(self, name: str) -> str:
        return os.path.join(self.out_dir, name)

    def curve(self, name: str) -> RiskCurve:
        return RiskCurve.from_csv(self.path(name))


# ---------------------------------------------------------------------------
# helpers


def _exact_output_curve(inst, gamma, b, T, s, eta0, tail=True, steps=None) -> RiskCurve:
    """Exact risks of the algorithm's output (iterate before s, tail average after)."""
    c = exact_risk_curve(inst, gamma, b, T, s if tail else T, np.outer(eta0, eta0))
    idx = np.arange(1, T + 1) if steps is None else np.asarray(steps)
    avg = (idx > s) & tail
    cols = {
        "risk_bias": np.where(avg, c.average_bias[idx], c.iterate_bias[idx]),
        "risk_variance": np.where(avg, c.average_variance[idx], c.iterate_variance[idx]),
        "risk_iterate_bias": c.iterate_bias[idx],
        "risk_iterate_variance": c.iterate_variance[idx],
    }
    cols["risk_total"] = cols["risk_bias"] + cols["risk_variance"]
    cols["risk_iterate"] = cols["risk_iterate_bias"] + cols["risk_iterate_variance"]
    return RiskCurve(idx, idx * b, cols)


def _log_grid(T, points, extra=()):
    from .engine import log_steps
    return log_steps(T, points, extra)


def _write(bundle: Bundle, name: str, curve: RiskCurve, header=()):
    curve.to_csv(bundle.path(name), header)
    bundle.files.append(name)


def _int_b(x: float) -> int:
    return max(1, int(round(x)))


# ---------------------------------------------------------------------------
# protocols


def _fig1(spec: ExperimentSpec, inst: ProblemInstance, noise, bundle: Bundle):
    kap = inst.derived.kappa
    n = spec.n or int(round(200 * kap))
    start = spec.averaging_start_samples or int(round(5 * kap))
    bt = spec.b_thresh or batch_threshold(inst)
    sweep = spec.sweep or [1, 3, _int_b(bt), _int_b(2 * bt), inst.dim]
    sweep = sorted(set(int(b) for b in sweep) | {_int_b(x) for x in spec.extra_b_thresh})
    eta0 = -inst.optimum
    gammas, finals = {}, {}
    for b in sweep:
        T, s = n // b, start // b
        g = 0.5 * minimax_stepsize(inst, b)
        gammas[str(b)] = g
        steps = _log_grid(T, spec.log_points, (s, s + 1, n // max(sweep)))
        ex = _exact_output_curve(inst, g, b, T, s, eta0, steps=steps)
        _write(bundle, f"fig1_b{b}_exact.csv", ex, [f"b={b} gamma={g!r} s={s} n={n}"])
        finals[str(b)] = ex.final("risk_total")
        if spec.monte_carlo:
            cfg = SgdConfig(gamma=g, b=b, s=s, n=T * b, seed=spec.seed, mode="coupled",
                            log_schedule=list(steps))
            agg = run_many(inst, noise, cfg, spec.seeds).aggregate()
            _write(bundle, f"fig1_b{b}_mc.csv", agg, [f"b={b} gamma={g!r} s={s} n={n}"])
    bundle.summary.update({"n": n, "averaging_start_samples": start, "b_thresh": bt,
                           "batch_sizes": sweep, "final_exact_total": finals})
    return gammas


def _fig2(spec, inst, noise, bundle):
    kap = inst.derived.kappa
    n = spec.n or int(round(200 * kap))
    bt = spec.b_thresh or batch_threshold(inst)
    b = _int_b(bt)
    T = n // b
    g = 0.5 * minimax_stepsize(inst, b)
    fracs = spec.sweep or [0, 0.25, 0.5, None]
    eta0 = -inst.optimum
    finals = {}
    for f in fracs:
        label = "none" if f is None else f"{f:g}"
        s = T - 1 if f is None else int(math.floor(f * T))
        tail = f is not None
        steps = _log_grid(T, spec.log_points, (s, s + 1))
        ex = _exact_output_curve(inst, g, b, T, s, eta0, tail=tail, steps=steps)
        _write(bundle, f"fig2_s{label}_exact.csv", ex, [f"b={b} gamma={g!r} s={s} tail={tail}"])
        finals[label] = {"exact": ex.final("risk_total")}
        if spec.monte_carlo:
            cfg = SgdConfig(gamma=g, b=b, s=s, n=T * b, seed=spec.seed, mode="coupled",
                            log_schedule=list(steps))
            agg = run_many(inst, noise, cfg, spec.seeds, tail=tail).aggregate()
            _write(bundle, f"fig2_s{label}_mc.csv", agg, [f"b={b} gamma={g!r} s={s} tail={tail}"])
            finals[label]["mc"] = agg.final("risk_total")
    bundle.summary.update({"b": b, "n": n, "final_total": finals})
    return {str(b): g}


def separation_report(d: int, b: int = 1) -> dict:
    """Exact trace quantities for the separation instance at the halves of both
    candidate stepsizes."""
    inst = separation_spec(d).build()
    mis, well = separation_stepsizes(d)
    s2 = inst.derived.sigma2_mle
    out = {"d": d, "sigma2_mle": s2, "gamma_mis": mis / 2, "gamma_well": well / 2,
           "ratio": well / mis, "gamma_max_over_2": 0.5 * minimax_stepsize(inst, b)}
    for key, g in (("mis", mis / 2), ("well", well / 2)):
        T = build_T_b(inst, g, b)
        try:
            tr = float(np.trace(T.solve(inst.noise_cov)))
        except np.linalg.LinAlgError:
            tr = float("inf")
        phi = None
        if tr != float("inf"):
            with warnings.catch_warnings():
                # both stepsizes are above gamma_max/2 on purpose
                warnings.simplefilter("ignore", RuntimeWarning)
                phi = steady_state_covariance(inst, g, b, allow_large_step=True)
        out[f"trace_{key}"] = tr
        out[f"plateau_{key}"] = None if phi is None else 0.5 * float(np.trace(inst.hessian @ phi))
        out[f"exceeds_{key}"] = bool(tr > 2 * s2)
    return out


def _separation(spec, inst, noise, bundle):
    dims = spec.sweep or [32]
    rows, gammas = [], {}
    for d in dims:
        rep = separation_report(int(d))
        rows.append(rep)
        gammas[f"d{d}_mis"], gammas[f"d{d}_well"] = rep["gamma_mis"], rep["gamma_well"]
        inst_d = separation_spec(int(d)).build()
        n = spec.n or 200 * int(d)
        for key in ("mis", "well"):
            g = rep[f"gamma_{key}"]
            steps = _log_grid(n, spec.log_points)
            c = exact_risk_curve(inst_d, g, 1, n, 0, None)
            cols = {"risk_variance": c.average_variance[steps],
                    "risk_iterate_variance": c.iterate_variance[steps]}
            curve = RiskCurve(steps, steps, {**cols, "risk_total": cols["risk_variance"],
                                             "risk_iterate": cols["risk_iterate_variance"],
                                             "risk_bias": np.zeros(len(steps)),
                                             "risk_iterate_bias": np.zeros(len(steps))})
            _write(bundle, f"separation_d{d}_{key}_exact.csv", curve, [f"d={d} gamma={g!r}"])
    with open(bundle.path("separation.json"), "w") as fh:
        json.dump(rows, fh, indent=1, sort_keys=True)
    bundle.files.append("separation.json")
    bundle.summary["separation"] = rows
    return gammas


def _doubling_compare(spec, inst, noise, bundle):
    from .bounds import doubling_min_epoch_length
    b0 = _int_b(spec.b_thresh or batch_threshold(inst))
    t = doubling_min_epoch_length(inst) if inst.derived.kappa > 1 else 16
    t += t % 2
    pairs = spec.sweep or [[b0, t]]
    gammas = {}
    eta0 = -inst.optimum
    for b0, t in pairs:
        n = spec.n or 8 * b0 * t
        plan = DoublingPlan.fit(int(b0), int(t), int(n))
        g = 0.5 * minimax_stepsize(inst, plan.b0)
        gammas[f"doubling_b{b0}"] = g
        ex = exact_doubling_risk(inst, g, plan, eta0)
        idx = ex.steps
        curve = RiskCurve(idx, _doubling_samples(plan, idx),
                          {"risk_bias": ex.risk_bias, "risk_variance": ex.risk_variance,
                           "risk_total": ex.risk_bias + ex.risk_variance})
        keep = _log_grid(len(idx), spec.log_points) - 1
        _write(bundle, f"doubling_b{b0}_t{t}_exact.csv", _subset(curve, keep), plan.describe())
        # constant batch b0 with the same work, tail average over the second half
        T = plan.work // plan.b0
        s = T // 2
        cex = _exact_output_curve(inst, g, plan.b0, T, s, eta0, steps=_log_grid(T, spec.log_points))
        _write(bundle, f"constant_b{b0}_exact.csv", cex, [f"b={b0} gamma={g!r} s={s} work={plan.work}"])
        if spec.monte_carlo:
            _, agg, _ = run_doubling_many(inst, noise, np.zeros(inst.dim), g, plan.b0, plan.t,
                                          plan.n, spec.seeds, spec.seed)
            _write(bundle, f"doubling_b{b0}_t{t}_mc.csv", agg, plan.describe())
        bundle.summary[f"b0={b0},t={t}"] = {
            "depth_doubling": plan.depth, "depth_constant": T, "work": plan.work,
            "final_doubling": ex.final_total, "final_constant": cex.final("risk_total")}
    return gammas


def _doubling_samples(plan: DoublingPlan, steps: np.ndarray) -> np.ndarray:
    bounds, cum_s, cum_w = [], 0, 0
    for e in plan.epochs:
        bounds.append((cum_s, cum_w, e.b))
        cum_s += e.steps
        cum_w += e.samples
    bounds.append((cum_s, cum_w, plan.final_phase["b"]))
    out = np.empty_like(steps)
    for i, st in enumerate(steps):
        for s0, w0, b in reversed(bounds):
            if st > s0:
                out[i] = w0 + (st - s0) * b
                break
    return out


def _subset(curve: RiskCurve, idx) -> RiskCurve:
    idx = np.asarray(idx)
    return RiskCurve(curve.serial_step[idx], curve.samples_consumed[idx],
                     {k: v[idx] for k, v in curve.columns.items()}, curve.n_seeds)


def _mixing(spec, inst, noise, bundle):
    n = spec.n or 16000
    b = 1
    g = 0.5 * minimax_stepsize(inst, b)
    Ps = spec.sweep or [1, 2, 4, 8]
    eta0 = -inst.optimum
    rows = {}
    for P in Ps:
        plan = AveragingPlan(int(P), n, b, 0, g)
        plan = AveragingPlan(int(P), n, b, plan.steps // 2, g)
        tot, bias, var = exact_model_averaging_risk(inst, plan, eta0)
        rows[str(P)] = {"exact_total": tot, "exact_bias": bias, "exact_variance": var,
                        "depth": plan.depth, "work": plan.work}
        if spec.monte_carlo:
            res = run_model_averaging_many(inst, noise, np.zeros(inst.dim), plan, spec.seeds,
                                           spec.seed, mode="coupled")
            agg = res.aggregate()
            _write(bundle, f"mix_P{P}_mc.csv", agg, [f"P={P} b={b} gamma={g!r} s={plan.s}"])
            rows[str(P)]["mc_total"] = agg.final("risk_total")
    with open(bundle.path("mixing.json"), "w") as fh:
        json.dump(rows, fh, indent=1, sort_keys=True)
    bundle.files.append("mixing.json")
    bundle.summary["mixing"] = rows
    return {"1": g}


def _custom(spec, inst, noise, bundle):
    sweep = spec.sweep or [1, _int_b(batch_threshold(inst))]
    n = spec.n or 4000
    eta0 = -inst.optimum
    gammas = {}
    for b in sweep:
        b = int(b)
        T = n // b
        s = T // 2
        g = 0.5 * minimax_stepsize(inst, b)
        gammas[str(b)] = g
        steps = _log_grid(T, spec.log_points, (s, s + 1))
        _write(bundle, f"custom_b{b}_exact.csv", _exact_output_curve(inst, g, b, T, s, eta0, steps=steps))
        if spec.monte_carlo:
            cfg = SgdConfig(gamma=g, b=b, s=s, n=T * b, seed=spec.seed, mode="coupled",
                            log_schedule=list(steps))
            _write(bundle, f"custom_b{b}_mc.csv", run_many(inst, noise, cfg, spec.seeds).aggregate())
    return gammas


_PROTOCOLS = {"fig1": _fig1, "fig2": _fig2, "separation": _separation,
              "doubling_compare": _doubling_compare, "mixing_speedup": _mixing, "custom": _custom}


def run_experiment(spec: ExperimentSpec) -> Bundle:
    os.makedirs(spec.out_dir, exist_ok=True)
    bundle = Bundle(spec.out_dir, spec.kind)
    inst = noise = None
    if spec.instance is not None:
        inst = spec.instance.build()
        noise = spec.instance.noise_model(inst) if spec.monte_carlo else None
    gammas, errors = {}, []
    try:
        gammas = _PROTOCOLS[spec.kind](spec, inst, noise, bundle)
    except Exception as exc:  # keep whatever was written
        bundle.partial = True
        errors.append("".join(traceback.format_exception_only(type(exc), exc)).strip())
    meta = {
        "kind": spec.kind,
        "instance": None if spec.instance is None else spec.instance.to_dict(),
        "instance_hash": None if spec.instance is None else spec.instance.digest(),
        "seeds": spec.seeds, "base_seed": spec.seed, "n": spec.n, "sweep": spec.sweep,
        "b_thresh_override": spec.b_thresh, "monte_carlo": spec.monte_carlo,
        "generator": generator_info(),
        "gammas": gammas, "files": bundle.files, "partial": bundle.partial, "errors": errors,
        "summary": _jsonable(bundle.summary),
    }
    if inst is not None:
        meta["derived"] = _jsonable(asdict(inst.derived))
    bundle.metadata = meta
    with open(bundle.path("metadata.json"), "w") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return bundle


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    return x


# ---------------------------------------------------------------------------
# plots

_PLOT_TEMPLATE = '''"""Plot script for the {kind} bundle (generated)."""
import csv
import os

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

HERE = os.path.dirname(os.path.abspath(__file__))
FILES = {files!r}
PANELS = [("risk_bias", "Bias Risk"), ("risk_variance", "Variance Risk"), ("risk_total", "Total Risk")]


def load(name):
    with open(os.path.join(HERE, name)) as fh:
        rows = list(csv.DictReader(ln for ln in fh if not ln.startswith("#")))
    return rows


def main():
    for xcol, suffix in (("serial_step", "depth"), ("samples_consumed", "work")):
        fig, axes = plt.subplots(1, 3, figsize=(13, 3.8))
        for name in FILES:
            rows = load(name)
            x = [float(r[xcol]) for r in rows]
            for ax, (col, title) in zip(axes, PANELS):
                y = [float(r[col]) for r in rows]
                pts = [(a, b) for a, b in zip(x, y) if b == b and b > 0]
                if pts:
                    ax.loglog(*zip(*pts), label=name.rsplit(".", 1)[0])
                ax.set_title(title)
                ax.set_xlabel(suffix)
        axes[0].set_ylabel("excess risk")
        axes[-1].legend(fontsize=6)
        fig.tight_layout()
        fig.savefig(os.path.join(HERE, "{kind}_" + suffix + ".png"), dpi=120)
        plt.close(fig)


if __name__ == "__main__":
    main()
'''


def emit_plots(bundle_dir) -> List[str]:
    """Write ``plot_<kind>.py`` next to the CSVs of a bundle."""
    bundle_dir = str(bundle_dir)
    meta_path = os.path.join(bundle_dir, "metadata.json")
    if not os.path.exists(meta_path):
        raise FileNotFoundError(f"missing inputs: {meta_path}")
    with open(meta_path) as fh:
        meta = json.load(fh)
    csvs = sorted(f for f in meta.get("files", []) if f.endswith(".csv"))
    if not csvs:
        raise FileNotFoundError(f"bundle {bundle_dir} has no CSV series to plot")
    missing = [f for f in csvs if not os.path.exists(os.path.join(bundle_dir, f))]
    if missing:
        raise FileNotFoundError(f"missing inputs: {', '.join(missing)}")
    name = f"plot_{meta['kind']}.py"
    with open(os.path.join(bundle_dir, name), "w") as fh:
        fh.write(_PLOT_TEMPLATE.format(kind=meta["kind"], files=csvs))
    return [name]
