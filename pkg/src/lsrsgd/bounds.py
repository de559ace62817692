"""Closed-form excess-risk bounds for tail-averaged, doubling and model-averaged SGD."""
from __future__ import annotations

import math

import numpy as np

from .operators import kappa_b, minimax_stepsize
from .problem import ProblemInstance


def _contraction(inst: ProblemInstance, gamma: float) -> float:
    gm = gamma * inst.derived.mu
    if gm >= 1:
        raise ValueError(f"gamma * mu = {gm:.6g} >= 1, the bound is vacuous")
    return gm


def theorem_bounds(inst: ProblemInstance, gamma: float, b: float, s: int, n: int,
                   initial_risk: float):
    """(bias, variance) bounds for tail-averaged mini-batch SGD with burn-in s over n samples.

    bias <= 2 (1 - gamma mu)^s / (gamma^2 mu^2 (n/b - s)^2) * L0
    variance <= 4 sigma2_mle / (b (n/b - s))
    """
    gm = _contraction(inst, gamma)
    m = n / b - s
    if m <= 0:
        raise ValueError("need n/b > s")
    bias = 2.0 * (1.0 - gm) ** s / (gm ** 2 * m ** 2) * initial_risk
    var = 4.0 * inst.derived.sigma2_mle / (b * m)
    return bias, var


def minimax_variance_bound(inst: ProblemInstance, n: int, s: int) -> float:
    """Well-specified minimax variance level 4 d sigma^2 / (n - s)."""
    s2 = inst.derived.sigma2
    if s2 is None:
        raise ValueError("instance is not well specified")
    return 4.0 * inst.dim * s2 / (n - s)


def final_iterate_bound(inst: ProblemInstance, gamma: float, b: float, n: int,
                        initial_risk: float) -> float:
    """kappa_b (1 - gamma mu)^{floor(n/b)} L0 + (gamma / b) sigma^2 Tr(H) (well specified)."""
    gm = _contraction(inst, gamma)
    s2 = inst.derived.sigma2
    if s2 is None:
        raise ValueError("final-iterate bound needs Sigma = sigma^2 H")
    T = n // b
    return kappa_b(inst, b) * (1.0 - gm) ** T * initial_risk + gamma / b * s2 * np.trace(inst.hessian)


def final_iterate_variance_level(inst: ProblemInstance, b: float) -> float:
    """sigma^2 Tr(H) / (R^2 + (b-1) ||H||): steady variance risk bound at gamma_max/2."""
    ds = inst.derived
    if ds.sigma2 is None:
        raise ValueError("needs Sigma = sigma^2 H")
    return ds.sigma2 * np.trace(inst.hessian) / (ds.r_squared + (b - 1) * ds.h_norm)


def doubling_bound(inst: ProblemInstance, b0: float, t: int, n: int, initial_risk: float) -> float:
    """(2 b0 t / n)^{t / (12 kappa log kappa)} L0 + 80 sigma2_mle / n."""
    kap = inst.derived.kappa
    if kap <= 1:
        raise ValueError("needs kappa > 1")
    expo = t / (12.0 * kap * math.log(kap))
    return (2.0 * b0 * t / n) ** expo * initial_risk + 80.0 * inst.derived.sigma2_mle / n


def doubling_min_epoch_length(inst: ProblemInstance) -> int:
    """Smallest integer t with t >= 24 kappa log kappa."""
    kap = inst.derived.kappa
    return int(math.ceil(24.0 * kap * math.log(kap)))


def oracle_doubling_bound(inst: ProblemInstance, n: int, initial_risk: float) -> float:
    """exp(-(n mu / (R^2 log kappa)) / rho_m) L0 + 80 sigma2_mle / n."""
    ds = inst.derived
    rate = n * ds.mu / (ds.r_squared * math.log(ds.kappa)) / ds.rho_m
    return math.exp(-rate) * initial_risk + 80.0 * ds.sigma2_mle / n


def oracle_depth_budget(inst: ProblemInstance, n: int, initial_risk: float,
                        noise_level: float, C: float = 24.0) -> float:
    """C kappa log(kappa) log(n L0 / noise_level)."""
    kap = inst.derived.kappa
    return C * kap * math.log(kap) * math.log(n * initial_risk / noise_level)


def model_averaging_bound(inst: ProblemInstance, gamma: float, b: float, s: int, n: int,
                          P: int, initial_risk: float):
    """(bias, variance) bounds for the average of P tail-averaged runs on n/P samples each."""
    gm = _contraction(inst, gamma)
    m = n / (P * b) - s
    if m <= 0:
        raise ValueError("need n/(P b) > s")
    q = (1.0 - gm) ** s
    bias = q / (gm ** 2 * m ** 2) * (2.0 + (P - 1) * q) / P * initial_risk
    var = 4.0 * inst.derived.sigma2_mle / (P * b * m)
    return bias, var


def separation_stepsizes(d: int):
    """Stepsizes for the separation instance: (mis-specified, well-specified).

    4 / ((d+2)(1+1/d)) and d / ((d+2)(1+1/d)); their ratio is d/4.
    """
    base = (d + 2) * (1.0 + 1.0 / d)
    return 4.0 / base, d / base


def default_gamma(inst: ProblemInstance, b: float) -> float:
    return 0.5 * minimax_stepsize(inst, b)
