"""Linear operators on symmetric matrices, stepsize limits and numerical operator checks.

Symmetric d x d matrices are identified with R^D, D = d(d+1)/2, through the
scaled half-vectorization ``svec`` (off-diagonal entries weighted by sqrt(2)),
which preserves the trace inner product <A, B> = Tr(A B).  Self-adjoint
operators therefore materialize to symmetric D x D matrices.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg

from .problem import ProblemInstance, solve_lyapunov

MATERIALIZE_CAP = 64
PSD_TOL = 1e-10

_SQRT2 = np.sqrt(2.0)


def _triu(d: int):
    return np.triu_indices(d)


def svec(A: np.ndarray) -> np.ndarray:
    """Scaled half-vectorization; batched over leading axes."""
    A = np.asarray(A, dtype=float)
    d = A.shape[-1]
    i, j = _triu(d)
    v = A[..., i, j].copy()
    v[..., i != j] *= _SQRT2
    return v


def smat(v: np.ndarray, d: Optional[int] = None) -> np.ndarray:
    """Inverse of :func:`svec`."""
    v = np.asarray(v, dtype=float)
    D = v.shape[-1]
    if d is None:
        d = int(round((np.sqrt(8 * D + 1) - 1) / 2))
    if d * (d + 1) // 2 != D:
        raise ValueError(f"length {D} is not a triangular number")
    i, j = _triu(d)
    off = i != j
    A = np.zeros(v.shape[:-1] + (d, d))
    vals = v.copy()
    vals[..., off] /= _SQRT2
    A[..., i, j] = vals
    A[..., j, i] = vals
    return A


def sym_basis(d: int) -> np.ndarray:
    """Orthonormal basis of the symmetric matrices (shape D x d x d)."""
    return smat(np.eye(d * (d + 1) // 2), d)


def is_psd(A: np.ndarray, tol: float = PSD_TOL) -> bool:
    return min_eig_ratio(A) >= -tol


def min_eig_ratio(A: np.ndarray) -> float:
    """Smallest eigenvalue divided by (1 + spectral norm)."""
    ev = np.linalg.eigvalsh(0.5 * (A + A.T))
    return float(ev[0] / (1.0 + np.max(np.abs(ev))))


@dataclass
class SymOperator:
    """A linear map on symmetric d x d matrices.

    ``apply`` must accept stacked inputs of shape (..., d, d).
    """

    dim: int
    apply: Callable[[np.ndarray], np.ndarray]
    name: str = ""
    cap: int = MATERIALIZE_CAP
    _matrix: Optional[np.ndarray] = field(default=None, repr=False)

    def __call__(self, A):
        return self.apply(A)

    @property
    def materialized(self) -> np.ndarray:
        """D x D matrix acting on svec coordinates (built once, read-only)."""
        if self._matrix is None:
            if self.dim > self.cap:
                raise ValueError(
                    f"dimension {self.dim} exceeds the materialization cap {self.cap}")
            E = sym_basis(self.dim)
            mat = svec(self.apply(E)).T
            mat.setflags(write=False)
            self._matrix = mat
        return self._matrix

    def solve(self, B: np.ndarray) -> np.ndarray:
        """Return X with apply(X) = B."""
        x = np.linalg.solve(self.materialized, svec(B))
        return smat(x, self.dim)

    def __add__(self, other):
        return SymOperator(self.dim, lambda A: self.apply(A) + other.apply(A), cap=self.cap)

    def scaled(self, c: float) -> "SymOperator":
        return SymOperator(self.dim, lambda A: c * self.apply(A), cap=self.cap)


def lyapunov_operator(inst: ProblemInstance) -> SymOperator:
    """H_L + H_R : W -> H W + W H."""
    H = inst.hessian
    return SymOperator(inst.dim, lambda W: H @ W + W @ H, name="H_L+H_R")


def sandwich_operator(inst: ProblemInstance) -> SymOperator:
    """H_L H_R : W -> H W H."""
    H = inst.hessian
    return SymOperator(inst.dim, lambda W: H @ W @ H, name="H_L H_R")


def fourth_moment_operator(inst: ProblemInstance) -> SymOperator:
    return SymOperator(inst.dim, inst.fourth_moment, name="M")


def t_b_apply(inst: ProblemInstance, gamma: float, b: float) -> Callable:
    H = inst.hessian
    a, c = gamma / b, gamma * (b - 1) / b
    if inst.covariate_model == "gaussian" and inst.is_diagonal:
        h = np.diag(H)
        hsum = h[:, None] + h[None, :]
        hh = np.outer(h, h)
        # elementwise form: (h_i + h_j - (2 a + c) h_i h_j) W_ij - a Tr(HW) diag(h)
        coef = hsum - (2.0 * a + c) * hh
        dh = np.diag(h)

        def apply(W):
            W = np.asarray(W, dtype=float)
            tr = np.einsum("...ii,i->...", W, h)
            return coef * W - a * tr[..., None, None] * dh
        return apply

    def apply(W):
        W = np.asarray(W, dtype=float)
        HW = H @ W
        return HW + np.swapaxes(HW, -1, -2) - a * inst.fourth_moment(W) - c * (HW @ H)
    return apply


def build_T_b(inst: ProblemInstance, gamma: float, b: float = 1) -> SymOperator:
    """T_b = H_L + H_R - (gamma/b) M - gamma ((b-1)/b) H_L H_R."""
    if gamma <= 0 or b < 1:
        raise ValueError("need gamma > 0 and b >= 1")
    return SymOperator(inst.dim, t_b_apply(inst, gamma, b), name=f"T_{b}")


def divergent_stepsize(inst: ProblemInstance, b: float = 1) -> float:
    """Largest stepsize for which T_b stays positive semidefinite.

    2 / lambda* where lambda* maximizes
    [<W, M W> + (b-1) Tr(W H W H)] / [b Tr(W H W)] over symmetric W.
    """
    if b < 1:
        raise ValueError("b must be >= 1")
    Q1 = fourth_moment_operator(inst).materialized + (b - 1) * sandwich_operator(inst).materialized
    Q1 = 0.5 * (Q1 + Q1.T)
    Q2 = 0.5 * b * lyapunov_operator(inst).materialized
    Q2 = 0.5 * (Q2 + Q2.T)
    try:
        lam = scipy.linalg.eigh(Q1, Q2, eigvals_only=True, subset_by_index=[Q1.shape[0] - 1] * 2)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise np.linalg.LinAlgError(f"generalized eigensolve failed: {exc}") from exc
    return float(2.0 / lam[-1])


def kappa_b(inst: ProblemInstance, b: float = 1) -> float:
    ds = inst.derived
    return (ds.r_squared * ds.rho_m + (b - 1) * ds.h_norm) / (b * ds.mu)


def minimax_stepsize(inst: ProblemInstance, b: float = 1) -> float:
    """gamma_b,max = 2b / (R^2 rho_m + (b-1) ||H||)."""
    ds = inst.derived
    return 2.0 * b / (ds.r_squared * ds.rho_m + (b - 1) * ds.h_norm)


def batch_threshold(inst: ProblemInstance) -> float:
    """b_thresh = 1 + (R^2 / ||H||) rho_m."""
    ds = inst.derived
    return 1.0 + ds.r_squared / ds.h_norm * ds.rho_m


def default_stepsize(inst: ProblemInstance, b: float = 1) -> float:
    return 0.5 * minimax_stepsize(inst, b)


@dataclass(frozen=True)
class StepsizeReport:
    gamma_div: float
    gamma_max: float
    gamma_used: float
    b: float
    kappa_b: float
    b_thresh: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def stepsize_report(inst: ProblemInstance, b: float = 1, gamma: Optional[float] = None,
                    with_divergent: bool = True) -> StepsizeReport:
    gmax = minimax_stepsize(inst, b)
    gdiv = divergent_stepsize(inst, b) if with_divergent else float("nan")
    return StepsizeReport(
        gamma_div=gdiv,
        gamma_max=gmax,
        gamma_used=gmax / 2 if gamma is None else float(gamma),
        b=b,
        kappa_b=kappa_b(inst, b),
        b_thresh=batch_threshold(inst),
    )


def check_stepsize(inst: ProblemInstance, gamma: float, b: float, allow_large: bool,
                   what: str = "operation") -> None:
    """Default guard gamma <= gamma_max/2; larger values need ``allow_large``."""
    limit = 0.5 * minimax_stepsize(inst, b)
    if gamma <= limit * (1 + 1e-12):
        return
    if not allow_large:
        raise ValueError(
            f"{what}: gamma={gamma:.6g} exceeds gamma_max/2={limit:.6g}; "
            "pass allow_large_step=True to override")
    warnings.warn(f"{what}: gamma={gamma:.6g} is above gamma_max/2={limit:.6g}, "
                  "outside the analyzed regime", RuntimeWarning, stacklevel=3)


# ---------------------------------------------------------------------------
# operator checks


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    witness: float
    detail: str = ""

    def as_dict(self) -> dict:
        return {"name": self.name, "pass": bool(self.passed),
                "witness": float(self.witness), "detail": self.detail}


@dataclass(frozen=True)
class LemmaReport:
    gamma: float
    b: float
    checks: tuple

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name: str) -> CheckResult:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def records(self) -> list:
        return [c.as_dict() for c in self.checks]


def _random_psd_stack(d: int, k: int, rng: np.random.Generator) -> np.ndarray:
    ranks = rng.integers(1, d + 1, size=k)
    out = np.empty((k, d, d))
    for m, r in enumerate(ranks):
        G = rng.standard_normal((d, r))
        out[m] = G @ G.T
    return out


def verify_operator_lemmas(inst: ProblemInstance, gamma: Optional[float] = None, b: float = 1,
                           n_random: int = 50, seed: int = 0,
                           allow_large_step: bool = False) -> LemmaReport:
    """Numerically check the four trace / positivity claims about T_b.

    (1) T_b is PSD; (2) T_b^{-1} maps PSD matrices to PSD matrices;
    (3) Tr((H_L+H_R)^{-1} A) = Tr(H^{-1} A)/2; (4) Tr(T_b^{-1} Sigma) <= 2 Tr(H^{-1} Sigma).
    """
    if gamma is None:
        gamma = default_stepsize(inst, b)
    check_stepsize(inst, gamma, b, allow_large_step, "verify_operator_lemmas")
    rng = np.random.default_rng(seed)
    d = inst.dim
    T = build_T_b(inst, gamma, b)
    Tm = T.materialized
    Tsym = 0.5 * (Tm + Tm.T)
    ev = np.linalg.eigvalsh(Tsym)
    scale = 1.0 + np.max(np.abs(ev))
    c1 = CheckResult("T_b_psd", bool(ev[0] >= -PSD_TOL * scale), float(ev[0]),
                     "smallest eigenvalue of T_b")

    A = _random_psd_stack(d, n_random, rng)
    try:
        X = smat(np.linalg.solve(Tm, svec(A).T).T, d)
        worst = min(min_eig_ratio(x) for x in X)
        c2 = CheckResult("T_b_inverse_psd_map", worst >= -PSD_TOL, worst,
                         f"worst normalized min eigenvalue over {n_random} PSD inputs")
    except np.linalg.LinAlgError:
        X = None
        c2 = CheckResult("T_b_inverse_psd_map", False, float("nan"), "T_b singular")

    Hinv = np.linalg.inv(inst.hessian)
    lhs = np.array([np.trace(solve_lyapunov(inst.hessian, a)) for a in A])
    rhs = 0.5 * np.einsum("ij,kji->k", Hinv, A)
    rel = float(np.max(np.abs(lhs - rhs) / np.maximum(np.abs(rhs), 1e-300)))
    c3 = CheckResult("lyapunov_trace_identity", rel <= 1e-10, rel, "max relative error")

    s2 = float(np.trace(Hinv @ inst.noise_cov))
    if X is None:
        c4 = CheckResult("trace_bound", False, float("nan"), "T_b singular")
    else:
        tr = float(np.trace(T.solve(inst.noise_cov)))
        c4 = CheckResult("trace_bound", tr <= 2 * s2 * (1 + 1e-10) + 1e-300, tr,
                         f"Tr(T_b^-1 Sigma) vs 2 Tr(H^-1 Sigma) = {2 * s2:.6g}")
    return LemmaReport(gamma=float(gamma), b=b, checks=(c1, c2, c3, c4))
