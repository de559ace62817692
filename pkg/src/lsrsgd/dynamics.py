"""Exact second-moment dynamics of mini-batch SGD.

The centered iterate eta_t = w_t - w* has second moment phi_t = E[eta_t eta_t^T]
that evolves deterministically,

    phi_t = phi_{t-1} - gamma T_b(phi_{t-1}) + (gamma^2 / b) Sigma,

whenever the noise satisfies E[eps | x] = 0 (true for every sampler in this
package).  Cross moments obey E[eta_l eta_k^T] = (I - gamma H)^{l-k} phi_k for
l >= k, so the risk of a tail average is an exact double sum that can be
accumulated with running sums.  Gaussian instances are propagated in the
eigenbasis of H, where one step costs O(d^2).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg

from .operators import (PSD_TOL, SymOperator, build_T_b, check_stepsize,
                        divergent_stepsize, min_eig_ratio, minimax_stepsize, smat, svec,
                        t_b_apply)
from .problem import GAUSSIAN, ProblemInstance

DIVERGENCE_LIMIT = 1e12


class DivergenceError(FloatingPointError):
    pass


def _divergence_message(inst, gamma, b, what="risk"):
    try:
        gdiv = f"{divergent_stepsize(inst, b):.6g}"
    except Exception:  # materialization cap, eigensolver trouble
        gdiv = "unavailable"
    return (f"{what} exceeded {DIVERGENCE_LIMIT:g} at gamma={gamma:.6g}, b={b}; "
            f"divergent stepsize for this batch size is {gdiv}")


class _Frame:
    """Coordinates in which the recursion is cheap."""

    def __init__(self, inst: ProblemInstance, gamma: float, b: float):
        self.orig = inst
        rotate = inst.covariate_model == GAUSSIAN and not inst.is_diagonal
        self.U = inst.eigenvectors if rotate else None
        self.inst = inst.in_eigenbasis() if rotate else inst
        self.gamma, self.b = float(gamma), b
        self.T = t_b_apply(self.inst, gamma, b)
        H = self.inst.hessian
        self.diag = self.inst.is_diagonal
        self.h = np.diag(H).copy()
        self.H = H
        self.noise = (gamma ** 2 / b) * self.inst.noise_cov

    def to_frame(self, A):
        if A is None:
            return np.zeros((self.inst.dim,) * 2)
        A = np.asarray(A, dtype=float)
        return A if self.U is None else self.U.T @ A @ self.U

    def to_orig(self, A):
        return A if self.U is None else self.U @ A @ self.U.T

    def vec_to_frame(self, v):
        v = np.asarray(v, dtype=float)
        return v if self.U is None else self.U.T @ v

    def contract(self, S):
        """(I - gamma H) S."""
        if self.diag:
            return (1.0 - self.gamma * self.h)[:, None] * S
        return S - self.gamma * (self.H @ S)

    def h_trace(self, A):
        """Tr(H A), batched."""
        if self.diag:
            return np.einsum("...ii,i->...", A, self.h)
        return np.einsum("ij,...ji->...", self.H, A)

    def step(self, phi, noise_mask=None):
        out = phi - self.gamma * self.T(phi)
        if noise_mask is None:
            return out + self.noise
        return out + noise_mask[:, None, None] * self.noise


def exact_covariance_step(inst: ProblemInstance, gamma: float, b: float, phi: np.ndarray,
                          with_noise: bool = True) -> np.ndarray:
    """One step of the second-moment recursion."""
    phi = np.asarray(phi, dtype=float)
    if min_eig_ratio(phi) < -PSD_TOL:
        raise ValueError("phi is not positive semidefinite")
    T = build_T_b(inst, gamma, b)
    out = phi - gamma * T(phi)
    if with_noise:
        out = out + (gamma ** 2 / b) * inst.noise_cov
    return 0.5 * (out + out.T)


def steady_state_covariance(inst: ProblemInstance, gamma: float, b: float = 1,
                            allow_large_step: bool = False) -> np.ndarray:
    """phi_inf = (gamma / b) T_b^{-1} Sigma."""
    check_stepsize(inst, gamma, b, allow_large_step, "steady_state_covariance")
    if allow_large_step and gamma > 0.5 * minimax_stepsize(inst, b):
        gdiv = divergent_stepsize(inst, b)
        if gamma >= gdiv:
            raise ValueError(f"gamma={gamma:.6g} is at or above the divergent stepsize {gdiv:.6g}")
    if not np.any(inst.noise_cov):
        return np.zeros((inst.dim, inst.dim))
    fr = _Frame(inst, gamma, b)
    T = SymOperator(fr.inst.dim, fr.T)
    Tm = T.materialized
    try:
        cf = scipy.linalg.cho_factor(0.5 * (Tm + Tm.T))
    except np.linalg.LinAlgError as exc:
        raise ValueError(f"T_b is not positive definite at gamma={gamma:.6g}") from exc
    X = smat(scipy.linalg.cho_solve(cf, svec(fr.inst.noise_cov)), fr.inst.dim)
    return fr.to_orig((gamma / b) * X)


@dataclass
class ExactCurve:
    """Exact expected risks indexed by serial step t = 0..T.

    ``average_*`` entries hold the risk of the running tail average over
    iterates s+1..t and are NaN for t <= s.  ``phi_*`` are the final second
    moments in the original coordinates.
    """

    steps: np.ndarray
    iterate_bias: np.ndarray
    iterate_variance: np.ndarray
    average_bias: np.ndarray
    average_variance: np.ndarray
    s: int
    phi_bias: np.ndarray
    phi_variance: np.ndarray

    @property
    def iterate_total(self):
        return self.iterate_bias + self.iterate_variance

    @property
    def average_total(self):
        return self.average_bias + self.average_variance


def exact_risk_curve(inst: ProblemInstance, gamma: float, b: float, steps: int, s: int = 0,
                     phi0: Optional[np.ndarray] = None, phi0_variance: Optional[np.ndarray] = None,
                     with_noise: bool = True) -> ExactCurve:
    """Propagate bias (from ``phi0``, noiseless) and variance (from
    ``phi0_variance`` or 0, driven by noise) second moments for ``steps`` steps.

    No stepsize guard is applied; a blow-up raises :class:`DivergenceError`.
    """
    if steps < 0 or s < 0:
        raise ValueError("steps and s must be nonnegative")
    fr = _Frame(inst, gamma, b)
    phi = np.stack([fr.to_frame(phi0), fr.to_frame(phi0_variance)])
    mask = np.array([0.0, 1.0 if with_noise else 0.0])
    it = np.empty((steps + 1, 2))
    av = np.full((steps + 1, 2), np.nan)
    it[0] = 0.5 * fr.h_trace(phi)
    S = np.zeros_like(phi)
    acc = np.zeros(2)
    for t in range(1, steps + 1):
        phi = fr.step(phi, mask)
        hp = fr.h_trace(phi)
        it[t] = 0.5 * hp
        if not np.all(np.isfinite(hp)) or np.max(hp) > 2 * DIVERGENCE_LIMIT:
            raise DivergenceError(_divergence_message(inst, gamma, b))
        if t > s:
            S = fr.contract(S) + phi
            acc += 2.0 * fr.h_trace(S) - hp
            N = t - s
            av[t] = 0.5 * acc / N ** 2
    return ExactCurve(
        steps=np.arange(steps + 1),
        iterate_bias=it[:, 0], iterate_variance=it[:, 1],
        average_bias=av[:, 0], average_variance=av[:, 1], s=s,
        phi_bias=fr.to_orig(phi[0]), phi_variance=fr.to_orig(phi[1]),
    )


def exact_tail_averaged_risk(inst: ProblemInstance, gamma: float, b: float, s: int, N: int,
                             phi0: Optional[np.ndarray] = None,
                             phi0_variance: Optional[np.ndarray] = None):
    """Exact (total, bias, variance) risk of the average of iterates s+1..s+N."""
    if N < 1:
        raise ValueError("N must be >= 1")
    c = exact_risk_curve(inst, gamma, b, s + N, s, phi0, phi0_variance)
    bias, var = float(c.average_bias[-1]), float(c.average_variance[-1])
    return bias + var, bias, var


def mean_tail_average(inst: ProblemInstance, gamma: float, s: int, N: int,
                      eta0: np.ndarray) -> np.ndarray:
    """E[eta_bar] for the average of iterates s+1..s+N started at eta0."""
    lam, U = inst.eigenvalues, inst.eigenvectors
    q = 1.0 - gamma * lam
    e = U.T @ np.asarray(eta0, dtype=float)
    k = np.arange(s + 1, s + N + 1)
    coef = (q[:, None] ** k[None, :]).mean(axis=1)
    return U @ (coef * e)


def exact_model_averaged_risk(inst: ProblemInstance, gamma: float, b: float, s: int, N: int,
                              P: int, eta0: np.ndarray):
    """Exact (total, bias, variance) risk of the uniform average of P independent
    tail-averaged runs started at the same point.

    E[eta_bar eta_bar^T] = single / P + (1 - 1/P) E[eta_bar] E[eta_bar]^T.
    """
    eta0 = np.asarray(eta0, dtype=float)
    _, sb, sv = exact_tail_averaged_risk(inst, gamma, b, s, N, np.outer(eta0, eta0))
    m = mean_tail_average(inst, gamma, s, N, eta0)
    mean_risk = 0.5 * float(m @ inst.hessian @ m)
    bias = sb / P + (1.0 - 1.0 / P) * mean_risk
    var = sv / P
    return bias + var, bias, var
