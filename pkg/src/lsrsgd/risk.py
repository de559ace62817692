"""Analytic excess risk, risk curves and cross-seed aggregation."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from .problem import ProblemInstance

RISK_COLUMNS = ("risk_total", "risk_bias", "risk_variance",
                "risk_iterate", "risk_iterate_bias", "risk_iterate_variance")
INDEX_COLUMNS = ("serial_step", "samples_consumed")


def excess_risk(inst: ProblemInstance, w: np.ndarray) -> np.ndarray:
    """1/2 (w - w*)^T H (w - w*); batched over leading axes of ``w``."""
    w = np.asarray(w, dtype=float)
    if w.shape[-1] != inst.dim:
        raise ValueError(f"expected vectors of length {inst.dim}, got {w.shape[-1]}")
    e = w - inst.optimum
    r = 0.5 * np.einsum("...i,ij,...j->...", e, inst.hessian, e)
    r = np.maximum(r, 0.0)
    return float(r) if r.ndim == 0 else r


@dataclass
class RiskCurve:
    """Logged risks indexed by serial step.

    ``risk_total/bias/variance`` refer to the algorithm's current output (the
    running tail average once averaging has started, the iterate before);
    ``risk_iterate*`` always refer to the current iterate.  Columns a run did
    not measure hold NaN.  Aggregates add ``<col>_se`` columns.
    """

    serial_step: np.ndarray
    samples_consumed: np.ndarray
    columns: Dict[str, np.ndarray] = field(default_factory=dict)
    n_seeds: int = 1
    meta: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        self.serial_step = np.asarray(self.serial_step, dtype=np.int64)
        self.samples_consumed = np.asarray(self.samples_consumed, dtype=np.int64)
        L = len(self.serial_step)
        if len(self.samples_consumed) != L:
            raise ValueError("serial_step and samples_consumed differ in length")
        if L > 1 and np.any(np.diff(self.serial_step) <= 0):
            raise ValueError("serial_step must be strictly increasing")
        cols = {}
        for k in RISK_COLUMNS:
            v = self.columns.get(k)
            cols[k] = np.full(L, np.nan) if v is None else np.asarray(v, dtype=float)
        for k, v in self.columns.items():
            if k not in cols:
                cols[k] = np.asarray(v, dtype=float)
        for k, v in cols.items():
            if v.shape != (L,):
                raise ValueError(f"column {k} has shape {v.shape}, expected ({L},)")
            if not k.endswith("_se") and np.any(v[~np.isnan(v)] < 0):
                raise ValueError(f"column {k} has negative risks")
        self.columns = cols

    def __len__(self):
        return len(self.serial_step)

    def __getitem__(self, name: str) -> np.ndarray:
        if name == "serial_step":
            return self.serial_step
        if name == "samples_consumed":
            return self.samples_consumed
        return self.columns[name]

    @property
    def column_names(self) -> List[str]:
        return list(INDEX_COLUMNS) + list(self.columns) + ["n_seeds"]

    def final(self, name: str = "risk_total") -> float:
        return float(self.columns[name][-1])

    def to_csv(self, path=None, header: Sequence[str] = ()) -> str:
        """Write CSV (``#``-prefixed header lines first); returns the text."""
        buf = io.StringIO()
        for line in header:
            buf.write(f"# {line}\n")
        w = csv.writer(buf, lineterminator="\n")
        names = self.column_names
        w.writerow(names)
        for i in range(len(self)):
            row = [int(self.serial_step[i]), int(self.samples_consumed[i])]
            row += [repr(float(self.columns[k][i])) for k in self.columns]
            row.append(self.n_seeds)
            w.writerow(row)
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, path) -> "RiskCurve":
        with open(path) as fh:
            lines = [ln for ln in fh if not ln.startswith("#")]
        rows = list(csv.reader(lines))
        names, body = rows[0], rows[1:]
        data = {n: [r[i] for r in body] for i, n in enumerate(names)}
        cols = {n: np.array(data[n], dtype=float) for n in names
                if n not in INDEX_COLUMNS and n != "n_seeds"}
        n_seeds = int(data["n_seeds"][0]) if body else 1
        return cls(np.array(data["serial_step"], dtype=np.int64),
                   np.array(data["samples_consumed"], dtype=np.int64), cols, n_seeds)


def aggregate_curves(curves: Iterable[RiskCurve]) -> RiskCurve:
    """Per-step mean and standard error across seeds."""
    curves = list(curves)
    if not curves:
        raise ValueError("no curves to aggregate")
    ref = curves[0]
    for c in curves[1:]:
        if not (np.array_equal(c.serial_step, ref.serial_step)
                and np.array_equal(c.samples_consumed, ref.samples_consumed)):
            raise ValueError("curves were logged on different schedules")
    k = len(curves)
    cols = {}
    for name in RISK_COLUMNS:
        stack = np.stack([c.columns[name] for c in curves])
        cols[name], cols[name + "_se"] = _mean_se(stack)
    return RiskCurve(ref.serial_step, ref.samples_consumed, cols, n_seeds=k)


def aggregate_array(steps, samples, arrays: Dict[str, np.ndarray]) -> RiskCurve:
    """Aggregate (n_seeds, L) arrays keyed by column name."""
    cols = {}
    k = 1
    for name, a in arrays.items():
        a = np.asarray(a, dtype=float)
        k = a.shape[0]
        cols[name], cols[name + "_se"] = _mean_se(a)
    return RiskCurve(steps, samples, cols, n_seeds=k)


def _mean_se(stack: np.ndarray):
    k = stack.shape[0]
    if np.all(np.isnan(stack)):
        nan = np.full(stack.shape[1], np.nan)
        return nan, nan.copy()
    mean = stack.mean(axis=0)
    se = stack.std(axis=0, ddof=1) / np.sqrt(k) if k > 1 else np.zeros(stack.shape[1])
    return mean, se


def decompose_run(inst: ProblemInstance, noise, config, w0: Optional[np.ndarray] = None):
    """Bias, variance and total curves from one coupled sample stream."""
    from .engine import run_minibatch_tail_sgd
    rec = run_minibatch_tail_sgd(inst, noise, config.replace(mode="coupled"), w0=w0)
    c = rec.curve

    def part(src, it_src):
        return RiskCurve(c.serial_step, c.samples_consumed,
                         {"risk_total": c[src], "risk_iterate": c[it_src]})
    return (part("risk_bias", "risk_iterate_bias"),
            part("risk_variance", "risk_iterate_variance"),
            part("risk_total", "risk_iterate"))
