"""Reproducible streaming samplers for well- and mis-specified LSR.

Every sample is addressed by (seed, stream, index).  Samples are produced in
fixed blocks of ``BLOCK`` draws; block ``k`` of a stream comes from its own
PCG64 generator seeded by ``SeedSequence(seed, spawn_key=(stream, purpose, k))``
so any batch can be regenerated without replaying the stream.  Covariates and
noise use different ``purpose`` keys.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from .problem import EMPIRICAL, ProblemInstance, separation_hessian, separation_noise_cov

BLOCK = 1024
COVARIATE, NOISE = 0, 1
GENERATOR = "numpy.random.PCG64"


def generator_info() -> dict:
    return {"bit_generator": GENERATOR, "numpy": np.__version__,
            "derivation": "SeedSequence(entropy=seed, spawn_key=(stream, purpose, block))",
            "block": BLOCK}


def block_rng(seed: int, stream: int, purpose: int, block: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(stream, purpose, block))
    return np.random.Generator(np.random.PCG64(ss))


# ---------------------------------------------------------------------------
# noise models


class RepresentationError(ValueError):
    """The requested noise covariance is outside the scale-function family."""


def fit_heteroscedastic_coefficients(H: np.ndarray, target_sigma: np.ndarray,
                                     tol: float = 1e-10) -> Tuple[float, np.ndarray]:
    """Coefficients (c0, c) of eps = sqrt(c0 + sum_i c_i z_i^2) * xi, z = U^T x.

    Under x ~ N(0, H) this gives E[eps^2 x x^T] = U diag(sigma_i) U^T with
    sigma_i = h_i (c0 + sum_k c_k h_k + 2 c_i h_i).  Among the nonnegative
    solutions the one with the largest c0 is returned.
    """
    H = np.asarray(H, dtype=float)
    S = np.asarray(target_sigma, dtype=float)
    h, U = np.linalg.eigh(H)
    St = U.T @ S @ U
    sig = np.diag(St).copy()
    off = St - np.diag(sig)
    scale = 1.0 + np.max(np.abs(St))
    if np.max(np.abs(off)) > tol * scale:
        raise RepresentationError(
            f"Sigma is not diagonal in the eigenbasis of H (residual {np.max(np.abs(off)):.3g})")
    if np.any(sig < -tol * scale):
        raise RepresentationError("Sigma has negative diagonal entries")
    sig = np.maximum(sig, 0.0)
    r = sig / h
    S_tot = float(np.min(r))
    c = (r - S_tot) / (2.0 * h)
    c0 = S_tot - float(c @ h)
    if c0 < -tol * (1.0 + S_tot):
        # the nearest member of the family is c0 = 0; report how far off it is
        resid = np.max(np.abs(h * (float(c @ h) + 2.0 * c * h) - sig))
        raise RepresentationError(
            f"no nonnegative coefficients reproduce Sigma (c0 would be {c0:.4g}, "
            f"residual with c0 = 0 is {resid:.3g})")
    c0 = max(c0, 0.0)
    c[np.abs(c) < tol * (1.0 + np.max(np.abs(c)))] = 0.0
    # coefficients are expressed along the eigenvectors U returned above
    return c0, c


@dataclass(frozen=True)
class NoiseModel:
    """Noise eps given x.  ``kind`` is "additive", "heteroscedastic" or "lemma2".

    For heteroscedastic models ``coef`` = (c0, c) with c indexed by the
    eigenvectors ``basis`` of H.
    """

    kind: str
    sigma2: float = 0.0
    c0: float = 0.0
    c: Optional[np.ndarray] = None
    basis: Optional[np.ndarray] = None
    d: Optional[int] = None
    target_sigma: Optional[np.ndarray] = field(default=None, repr=False)

    @staticmethod
    def additive(sigma2: float) -> "NoiseModel":
        if sigma2 < 0:
            raise ValueError("sigma2 must be nonnegative")
        return NoiseModel("additive", sigma2=float(sigma2))

    @staticmethod
    def heteroscedastic(H: np.ndarray, target_sigma: np.ndarray) -> "NoiseModel":
        c0, c = fit_heteroscedastic_coefficients(H, target_sigma)
        _, U = np.linalg.eigh(np.asarray(H, dtype=float))
        return NoiseModel("heteroscedastic", c0=c0, c=c, basis=U,
                          target_sigma=np.asarray(target_sigma, dtype=float))

    @staticmethod
    def lemma2(d: int) -> "NoiseModel":
        base = NoiseModel.heteroscedastic(separation_hessian(d), separation_noise_cov(d))
        return NoiseModel("lemma2", c0=base.c0, c=base.c, basis=base.basis, d=d,
                          target_sigma=base.target_sigma)

    def realized_sigma(self, H: np.ndarray) -> np.ndarray:
        """E[eps^2 x x^T] under x ~ N(0, H)."""
        if self.kind == "additive":
            return self.sigma2 * np.asarray(H, dtype=float)
        U = self.basis
        h = np.diag(U.T @ H @ U)
        sig = h * (self.c0 + self.c @ h + 2.0 * self.c * h)
        return (U * sig) @ U.T

    def scale(self, xs: np.ndarray) -> np.ndarray:
        """Conditional standard deviation s(x) for each row of ``xs``."""
        if self.kind == "additive":
            return np.full(xs.shape[:-1], np.sqrt(self.sigma2))
        z = xs @ self.basis
        return np.sqrt(self.c0 + (z * z) @ self.c)

    @property
    def is_zero(self) -> bool:
        if self.kind == "additive":
            return self.sigma2 == 0
        return self.c0 == 0 and not np.any(self.c)


def noise_model_for(inst: ProblemInstance) -> NoiseModel:
    """The sampler-side noise model realizing ``inst.noise_cov``."""
    s2 = inst.derived.sigma2
    if s2 is not None:
        return NoiseModel.additive(s2)
    if inst.covariate_model == EMPIRICAL:
        raise RepresentationError("empirical instances support additive noise only")
    return NoiseModel.heteroscedastic(inst.hessian, inst.noise_cov)


# ---------------------------------------------------------------------------
# streams


@dataclass(frozen=True)
class SampleBatch:
    xs: np.ndarray
    ys: np.ndarray
    seed_state: tuple  # (seed, stream, index of first sample)


class SampleStream:
    """Random-access view of one sample stream.

    Returns covariates, noiseless responses <w*, x> and noise separately so
    callers can isolate bias and variance on identical draws.
    """

    def __init__(self, inst: ProblemInstance, noise: NoiseModel, seed: int, stream: int = 0):
        self.inst, self.noise = inst, noise
        self.seed, self.stream = int(seed), int(stream)
        self._root = _sqrt_psd(inst.hessian) if inst.covariate_model != EMPIRICAL else None
        self._cache = {}

    def _block(self, k: int):
        hit = self._cache.get(k)
        if hit is not None:
            return hit
        d = self.inst.dim
        rc = block_rng(self.seed, self.stream, COVARIATE, k)
        if self.inst.covariate_model == EMPIRICAL:
            idx = rc.integers(0, self.inst.samples.shape[0], size=BLOCK)
            xs = self.inst.samples[idx]
        else:
            xs = rc.standard_normal((BLOCK, d)) @ self._root
        xi = block_rng(self.seed, self.stream, NOISE, k).standard_normal(BLOCK)
        eps = self.noise.scale(xs) * xi
        if len(self._cache) > 4:
            self._cache.clear()
        self._cache[k] = (xs, eps)
        return xs, eps

    def samples(self, start: int, count: int):
        """(xs, clean_ys, eps) for sample indices [start, start + count)."""
        if count <= 0:
            d = self.inst.dim
            return np.empty((0, d)), np.empty(0), np.empty(0)
        k0, k1 = start // BLOCK, (start + count - 1) // BLOCK
        parts = [self._block(k) for k in range(k0, k1 + 1)]
        xs = np.concatenate([p[0] for p in parts]) if len(parts) > 1 else parts[0][0]
        eps = np.concatenate([p[1] for p in parts]) if len(parts) > 1 else parts[0][1]
        off = start - k0 * BLOCK
        xs, eps = xs[off:off + count], eps[off:off + count]
        return xs, xs @ self.inst.optimum, eps


def _sqrt_psd(H: np.ndarray) -> np.ndarray:
    lam, U = np.linalg.eigh(H)
    R = (U * np.sqrt(np.maximum(lam, 0.0))) @ U.T
    return 0.5 * (R + R.T)


def draw_batch(inst: ProblemInstance, noise: NoiseModel, b: int, stream_seed: int,
               step_index: int, stream: int = 0) -> SampleBatch:
    """Batch consumed by serial step ``step_index`` (1-based) of a batch-b run:
    samples [(step_index - 1) b, step_index b) of the stream."""
    if b < 1 or step_index < 1:
        raise ValueError("need b >= 1 and step_index >= 1")
    start = (step_index - 1) * b
    xs, clean, eps = SampleStream(inst, noise, stream_seed, stream).samples(start, b)
    return SampleBatch(xs=xs, ys=clean + eps, seed_state=(int(stream_seed), int(stream), start))
