"""Command line entry point: ``lsrsgd <subcommand>``.

Instances are given as a JSON file path, ``builtin:harmonic``,
``builtin:kappa10`` or ``lemma2:<d>``.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict

import numpy as np

from .config import resolve_instance


def _gamma(text: str):
    return text if text == "auto" else float(text)


def _s(text: str):
    v = float(text)
    return int(v) if v.is_integer() else v


def _load(ref: str):
    spec = resolve_instance(ref)
    return spec, spec.build()


def cmd_analyze(args) -> int:
    from .operators import stepsize_report, verify_operator_lemmas
    spec, inst = _load(args.instance)
    ds = asdict(inst.derived)
    out = {"instance": args.instance, "derived": ds, "reports": []}
    print(f"instance {args.instance}: d={inst.dim}")
    for k, v in ds.items():
        print(f"  {k:12s} {v}")
    for b in args.b:
        with_div = inst.dim <= 64
        rep = stepsize_report(inst, b, args.gamma, with_divergent=with_div)
        lem = verify_operator_lemmas(inst, rep.gamma_used, b, seed=args.seed,
                                     allow_large_step=args.allow_large_step) \
            if inst.dim <= 64 else None
        print(f"b={b}: gamma_div={rep.gamma_div:.6g} gamma_max={rep.gamma_max:.6g} "
              f"gamma={rep.gamma_used:.6g} kappa_b={rep.kappa_b:.6g} b_thresh={rep.b_thresh:.6g}")
        recs = [] if lem is None else lem.records()
        for r in recs:
            print(f"  {'pass' if r['pass'] else 'FAIL'}  {r['name']:26s} witness={r['witness']:.6g}")
        out["reports"].append({"stepsizes": rep.as_dict(), "checks": recs})
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(out, fh, indent=1, sort_keys=True)
    return 0


def cmd_run(args) -> int:
    from .engine import SgdConfig, run_many
    spec, inst = _load(args.instance)
    noise = spec.noise_model(inst)
    cfg = SgdConfig(gamma=args.gamma, b=args.b, s=args.s, n=args.n, seed=args.seed,
                    mode=args.mode, log_points=args.log_points)
    res = run_many(inst, noise, cfg, args.seeds, tail=not args.final_iterate, n_jobs=args.jobs)
    curve = res.aggregate()
    header = [f"instance={args.instance} gamma={res.gamma!r} b={args.b} s={res.s} n={args.n} "
              f"seeds={args.seeds} mode={args.mode} depth={res.depth}"]
    if args.out:
        curve.to_csv(args.out, header)
    print(header[0])
    print(f"final risk_total={curve.final('risk_total'):.6g} "
          f"(se {curve.final('risk_total_se'):.3g})")
    return 0


def cmd_doubling(args) -> int:
    from .operators import batch_threshold, minimax_stepsize
    from .schedules import DoublingPlan, run_doubling_many, run_doubling_with_oracle
    spec, inst = _load(args.instance)
    noise = spec.noise_model(inst)
    b0 = args.b0 or max(1, int(round(batch_threshold(inst))))
    gamma = 0.5 * minimax_stepsize(inst, b0) if args.gamma == "auto" else float(args.gamma)
    w0 = np.zeros(inst.dim)
    if args.oracle:
        L0 = inst.excess_risk(w0)
        level = args.noise_level if args.noise_level is not None else inst.derived.sigma2_mle / args.n
        out = run_doubling_with_oracle(inst, noise, w0, gamma, b0, args.t, args.n, args.seed,
                                       L0, level)
        print(f"oracle: constant epochs {out.constant_epochs}, switch step {out.switch_step}, "
              f"depth {out.depth}")
        if out.plan is not None:
            print("\n".join(out.plan.describe()))
        if args.out:
            out.record.curve.to_csv(args.out, [f"switch_step={out.switch_step}"])
        print(f"final risk {out.record.curve.final('risk_total'):.6g}")
        return 0
    plan = DoublingPlan.fit(b0, args.t, args.n)
    lines = plan.describe()
    print("\n".join(lines))
    plan, curve, _ = run_doubling_many(inst, noise, w0, gamma, b0, args.t, plan.n, args.seeds,
                                       args.seed)
    if args.out:
        curve.to_csv(args.out, lines)
    print(f"final risk_total={curve.final('risk_total'):.6g}")
    return 0


def cmd_mix(args) -> int:
    from .operators import minimax_stepsize
    from .schedules import AveragingPlan, exact_model_averaging_risk, run_model_averaging_many
    spec, inst = _load(args.instance)
    noise = spec.noise_model(inst)
    gamma = 0.5 * minimax_stepsize(inst, args.b) if args.gamma == "auto" else float(args.gamma)
    steps = (args.n // args.P) // args.b
    s = args.s if isinstance(args.s, int) else int(args.s * steps)
    plan = AveragingPlan(args.P, args.n, args.b, s, gamma)
    print(f"model averaging P={plan.P}, {plan.per_machine} samples per machine, "
          f"depth {plan.depth}, work {plan.work}")
    res = run_model_averaging_many(inst, noise, np.zeros(inst.dim), plan, args.seeds, args.seed)
    curve = res.aggregate()
    exact = exact_model_averaging_risk(inst, plan, -inst.optimum)
    if args.out:
        curve.to_csv(args.out, [f"P={plan.P} b={plan.b} s={plan.s} gamma={gamma!r}"])
    print(f"final risk_total={curve.final('risk_total'):.6g}, exact {exact[0]:.6g}")
    return 0


def cmd_experiment(args) -> int:
    from .experiments import ExperimentSpec, emit_plots, run_experiment
    if args.spec:
        spec = ExperimentSpec.load(args.spec)
        if args.out_dir:
            spec.out_dir = args.out_dir
    else:
        kw = dict(kind=args.kind, out_dir=args.out_dir or f"bundle_{args.kind}",
                  seeds=args.seeds, n=args.n, seed=args.seed, b_thresh=args.b_thresh,
                  monte_carlo=not args.no_mc)
        if args.instance:
            kw["instance"] = resolve_instance(args.instance)
        if args.sweep:
            kw["sweep"] = [json.loads(x) for x in args.sweep]
        spec = ExperimentSpec(**kw)
    bundle = run_experiment(spec)
    print(f"bundle {bundle.out_dir}: {len(bundle.files)} files, partial={bundle.partial}")
    for err in bundle.metadata["errors"]:
        print(f"  error: {err}")
    if bundle.files and any(f.endswith(".csv") for f in bundle.files):
        emit_plots(bundle.out_dir)
    return 1 if bundle.partial else 0


def cmd_verify(args) -> int:
    from .verification import run_criterion
    failed = 0
    for k in args.criteria or range(1, 12):
        res = run_criterion(int(k))
        print(res.line(), flush=True)
        failed += not res.passed
    return 1 if failed else 0


def cmd_plot(args) -> int:
    from .experiments import emit_plots
    for name in emit_plots(args.bundle):
        print(name)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lsrsgd", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", help="stepsizes, thresholds and operator checks")
    a.add_argument("--instance", required=True)
    a.add_argument("--b", type=int, nargs="+", default=[1])
    a.add_argument("--gamma", type=float, default=None)
    a.add_argument("--allow-large-step", action="store_true")
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--json", help="write machine-readable records here")
    a.set_defaults(func=cmd_analyze)

    r = sub.add_parser("run", help="mini-batch tail-averaged SGD over several seeds")
    r.add_argument("--instance", required=True)
    r.add_argument("--gamma", type=_gamma, default="auto")
    r.add_argument("--b", type=int, default=1)
    r.add_argument("--s", type=_s, default=0.5, help="burn-in steps or fraction of steps")
    r.add_argument("--n", type=int, required=True)
    r.add_argument("--seeds", type=int, default=10)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--mode", default="full", choices=["full", "bias", "variance", "coupled"])
    r.add_argument("--final-iterate", action="store_true")
    r.add_argument("--log-points", type=int, default=100)
    r.add_argument("--jobs", type=int, default=1)
    r.add_argument("--out")
    r.set_defaults(func=cmd_run)

    d = sub.add_parser("doubling", help="batch-doubling schedule")
    d.add_argument("--instance", required=True)
    d.add_argument("--gamma", type=_gamma, default="auto")
    d.add_argument("--b0", type=int, default=None)
    d.add_argument("--t", type=int, required=True)
    d.add_argument("--n", type=int, required=True)
    d.add_argument("--seeds", type=int, default=10)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--oracle", action="store_true")
    d.add_argument("--noise-level", type=float, default=None)
    d.add_argument("--out")
    d.set_defaults(func=cmd_doubling)

    m = sub.add_parser("mix", help="model averaging over P streams")
    m.add_argument("--instance", required=True)
    m.add_argument("--P", type=int, required=True)
    m.add_argument("--n", type=int, required=True)
    m.add_argument("--b", type=int, default=1)
    m.add_argument("--s", type=_s, default=0.5)
    m.add_argument("--gamma", type=_gamma, default="auto")
    m.add_argument("--seeds", type=int, default=10)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--out")
    m.set_defaults(func=cmd_mix)

    e = sub.add_parser("experiment", help="run an experiment protocol into a bundle")
    e.add_argument("--spec", help="experiment JSON file")
    e.add_argument("--kind", default="fig1",
                   choices=["fig1", "fig2", "separation", "doubling_compare", "mixing_speedup", "custom"])
    e.add_argument("--instance")
    e.add_argument("--out-dir")
    e.add_argument("--seeds", type=int, default=100)
    e.add_argument("--n", type=int, default=None)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--b-thresh", type=float, default=None)
    e.add_argument("--sweep", nargs="+", help="sweep values (JSON literals)")
    e.add_argument("--no-mc", action="store_true", help="exact dynamics only")
    e.set_defaults(func=cmd_experiment)

    v = sub.add_parser("verify", help="run acceptance checks")
    v.add_argument("criteria", nargs="*", type=int)
    v.set_defaults(func=cmd_verify)

    pl = sub.add_parser("plot", help="write plot scripts for a bundle")
    pl.add_argument("bundle")
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
