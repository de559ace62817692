"""Streaming least-squares problem instances and their moment structure.

An instance is the triple (H, Sigma, w*) together with a covariate model that
determines the fourth-moment operator ``M A = E[(x^T A x) x x^T]``.  Two
covariate models are supported: zero-mean Gaussian with covariance H (closed
form via Isserlis) and a fixed sample matrix (empirical averages).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np

MAX_DIM = 256
SYM_TOL = 1e-10

GAUSSIAN = "gaussian"
EMPIRICAL = "empirical"


def _check_symmetric(A: np.ndarray, name: str) -> None:
    scale = 1.0 + np.max(np.abs(A))
    if np.max(np.abs(A - np.swapaxes(A, -1, -2))) > SYM_TOL * scale:
        raise ValueError(f"{name} is not symmetric")


def gaussian_fourth_moment(H: np.ndarray, A: np.ndarray) -> np.ndarray:
    """Fourth-moment operator of N(0, H) applied to A: Tr(AH) H + 2 H A H.

    ``A`` may carry leading batch dimensions.
    """
    H = np.asarray(H, dtype=float)
    A = np.asarray(A, dtype=float)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ValueError("H must be a square matrix")
    if A.shape[-2:] != H.shape:
        raise ValueError(f"dimension mismatch: A is {A.shape[-2:]}, H is {H.shape}")
    _check_symmetric(H, "H")
    _check_symmetric(A, "A")
    tr = np.einsum("...ij,ji->...", A, H)
    return tr[..., None, None] * H + 2.0 * (H @ A @ H)


def empirical_fourth_moment(samples: np.ndarray, A: np.ndarray) -> np.ndarray:
    """Sample average of (x^T A x) x x^T over the rows of ``samples``."""
    X = np.asarray(samples, dtype=float)
    A = np.asarray(A, dtype=float)
    if A.shape[-2:] != (X.shape[1], X.shape[1]):
        raise ValueError("dimension mismatch between samples and A")
    q = np.einsum("ki,...ij,kj->...k", X, A, X)
    return np.einsum("...k,ki,kj->...ij", q, X, X) / X.shape[0]


def solve_lyapunov(H: np.ndarray, S: np.ndarray) -> np.ndarray:
    """Solve H X + X H = S for symmetric S using the eigenbasis of H."""
    lam, U = np.linalg.eigh(H)
    St = U.T @ S @ U
    Xt = St / (lam[:, None] + lam[None, :])
    X = U @ Xt @ U.T
    return 0.5 * (X + X.T)


@dataclass(frozen=True)
class DerivedScalars:
    r_squared: float
    mu: float
    h_norm: float
    kappa: float
    rho_m: float
    sigma2_mle: float
    sigma2: Optional[float]


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    """An LSR instance: second moment ``hessian``, noise covariance
    ``noise_cov`` = E[eps^2 x x^T], optimum ``optimum``.

    Immutable after construction.  For ``covariate_model == "empirical"`` the
    rows of ``samples`` define the covariate distribution and the hessian is
    recomputed from them.
    """

    hessian: np.ndarray
    noise_cov: np.ndarray
    optimum: np.ndarray
    covariate_model: str = GAUSSIAN
    samples: Optional[np.ndarray] = None
    max_dim: int = MAX_DIM
    _eig: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        H = np.array(self.hessian, dtype=float)
        S = np.array(self.noise_cov, dtype=float)
        w = np.array(self.optimum, dtype=float).reshape(-1)
        if self.covariate_model not in (GAUSSIAN, EMPIRICAL):
            raise ValueError(f"unknown covariate model {self.covariate_model!r}")
        if self.covariate_model == EMPIRICAL:
            if self.samples is None:
                raise ValueError("empirical covariate model needs a sample matrix")
            X = np.array(self.samples, dtype=float)
            H = X.T @ X / X.shape[0]
            X.setflags(write=False)
            object.__setattr__(self, "samples", X)
        if H.ndim != 2 or H.shape[0] != H.shape[1]:
            raise ValueError("hessian must be square")
        d = H.shape[0]
        if d > self.max_dim:
            raise ValueError(f"dimension {d} exceeds the cap {self.max_dim}")
        if S.shape != H.shape or w.shape != (d,):
            raise ValueError("dimension mismatch between hessian, noise_cov and optimum")
        _check_symmetric(H, "hessian")
        _check_symmetric(S, "noise_cov")
        H = 0.5 * (H + H.T)
        S = 0.5 * (S + S.T)
        lam, U = np.linalg.eigh(H)
        if lam[0] <= 0 or lam[0] <= 1e-14 * lam[-1]:
            raise ValueError("hessian must be positive definite")
        sig_eigs = np.linalg.eigvalsh(S)
        if sig_eigs[0] < -1e-10 * (1.0 + abs(sig_eigs[-1])):
            raise ValueError("noise_cov must be positive semidefinite")
        for arr in (H, S, w, lam, U):
            arr.setflags(write=False)
        object.__setattr__(self, "hessian", H)
        object.__setattr__(self, "noise_cov", S)
        object.__setattr__(self, "optimum", w)
        object.__setattr__(self, "_eig", (lam, U))

    @property
    def dim(self) -> int:
        return self.hessian.shape[0]

    @property
    def eigenvalues(self) -> np.ndarray:
        return self._eig[0]

    @property
    def eigenvectors(self) -> np.ndarray:
        return self._eig[1]

    @cached_property
    def is_diagonal(self) -> bool:
        H = self.hessian
        return bool(np.all(H == np.diag(np.diag(H))))

    def fourth_moment(self, A: np.ndarray) -> np.ndarray:
        """M A = E[(x^T A x) x x^T]; accepts stacked matrices."""
        if self.covariate_model == EMPIRICAL:
            return empirical_fourth_moment(self.samples, A)
        if self.is_diagonal:
            h = np.diag(self.hessian)
            A = np.asarray(A, dtype=float)
            tr = np.einsum("...ii,i->...", A, h)
            return tr[..., None, None] * np.diag(h) + 2.0 * A * np.outer(h, h)
        return gaussian_fourth_moment(self.hessian, A)

    def in_eigenbasis(self) -> "ProblemInstance":
        """The same problem written in the eigenbasis of H (H becomes diagonal).

        Risks and traces are invariant under this rotation.
        """
        lam, U = self._eig
        samples = None if self.samples is None else self.samples @ U
        return ProblemInstance(
            hessian=np.diag(lam) if samples is None else self.hessian,
            noise_cov=U.T @ self.noise_cov @ U,
            optimum=U.T @ self.optimum,
            covariate_model=self.covariate_model,
            samples=samples,
            max_dim=self.max_dim,
        )

    @cached_property
    def derived(self) -> DerivedScalars:
        lam = self.eigenvalues
        mu, h_norm = float(lam[0]), float(lam[-1])
        sigma_zero = not np.any(self.noise_cov)
        return DerivedScalars(
            r_squared=compute_r_squared(self),
            mu=mu,
            h_norm=h_norm,
            kappa=h_norm / mu,
            # Sigma = 0 is the well-specified case with sigma^2 = 0.
            rho_m=1.0 if sigma_zero else compute_rho_m(self),
            sigma2_mle=compute_sigma2_mle(self),
            sigma2=0.0 if sigma_zero else _additive_sigma2(self),
        )

    def excess_risk(self, w: np.ndarray) -> np.ndarray:
        e = np.asarray(w, dtype=float) - self.optimum
        return 0.5 * np.einsum("...i,ij,...j->...", e, self.hessian, e)


def _additive_sigma2(inst: ProblemInstance) -> Optional[float]:
    H, S = inst.hessian, inst.noise_cov
    s2 = float(np.sum(S * H) / np.sum(H * H))
    if np.max(np.abs(S - s2 * H)) <= 1e-12 * (1.0 + np.max(np.abs(S))):
        return s2
    return None


def compute_r_squared(inst: ProblemInstance) -> float:
    """Smallest R^2 with M I <= R^2 H: top eigenvalue of H^{-1/2} (M I) H^{-1/2}."""
    lam, U = inst._eig
    if lam[0] <= 1e-14 * lam[-1]:
        raise np.linalg.LinAlgError("hessian is singular to working precision")
    MI = inst.fourth_moment(np.eye(inst.dim))
    Hmh = (U / np.sqrt(lam)) @ U.T
    W = Hmh @ MI @ Hmh
    return float(np.linalg.eigvalsh(0.5 * (W + W.T))[-1])


def compute_rho_m(inst: ProblemInstance) -> float:
    """Degree of model mismatch d ||(H_L+H_R)^{-1} Sigma||_2 / Tr[(H_L+H_R)^{-1} Sigma]."""
    if not np.any(inst.noise_cov):
        raise ValueError("rho_m is undefined for a zero noise covariance")
    X = solve_lyapunov(inst.hessian, inst.noise_cov)
    return float(inst.dim * np.linalg.norm(X, 2) / np.trace(X))


def compute_sigma2_mle(inst: ProblemInstance) -> float:
    """Tr(H^{-1} Sigma)."""
    return float(np.trace(np.linalg.solve(inst.hessian, inst.noise_cov)))


# ---------------------------------------------------------------------------
# constructors


def _as_hessian(spectrum) -> np.ndarray:
    a = np.asarray(spectrum, dtype=float)
    return np.diag(a) if a.ndim == 1 else a


def _as_optimum(optimum, d: int) -> np.ndarray:
    if isinstance(optimum, str):
        if optimum != "ones":
            raise ValueError(f"unknown optimum spec {optimum!r}")
        return np.ones(d)
    return np.asarray(optimum, dtype=float)


def additive_instance(spectrum, sigma2: float, optimum="ones") -> ProblemInstance:
    """Well-specified Gaussian instance with Sigma = sigma2 * H.

    ``spectrum`` is either an eigenvalue list (H diagonal) or a full matrix.
    """
    H = _as_hessian(spectrum)
    return ProblemInstance(H, sigma2 * H, _as_optimum(optimum, H.shape[0]))


def gaussian_instance(spectrum, noise_cov, optimum="ones") -> ProblemInstance:
    H = _as_hessian(spectrum)
    return ProblemInstance(H, np.asarray(noise_cov, dtype=float), _as_optimum(optimum, H.shape[0]))


def separation_hessian(d: int) -> np.ndarray:
    return np.diag(np.r_[1.0, np.full(d - 1, 1.0 / d)])


def separation_noise_cov(d: int) -> np.ndarray:
    return np.diag(np.r_[1.0, np.full(d - 1, 1.0 / ((d - 1) * d))])


def separation_instance(d: int, optimum="ones") -> ProblemInstance:
    """Mis-specified separation instance: H = diag(1, 1/d, ...),
    Sigma = diag(1, 1/((d-1)d), ...)."""
    if d < 2:
        raise ValueError("the separation instance needs d >= 2")
    return ProblemInstance(separation_hessian(d), separation_noise_cov(d), _as_optimum(optimum, d))


def empirical_instance(samples, sigma2: float = 0.0, optimum="ones") -> ProblemInstance:
    """Sample-backed instance with independent additive noise of variance sigma2."""
    X = np.asarray(samples, dtype=float)
    H = X.T @ X / X.shape[0]
    return ProblemInstance(H, sigma2 * H, _as_optimum(optimum, X.shape[1]),
                           covariate_model=EMPIRICAL, samples=X)


def random_spd(d: int, rng: np.random.Generator, cond: float = 10.0) -> np.ndarray:
    """Random SPD matrix with eigenvalues log-uniform in [1/cond, 1]."""
    Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    lam = np.exp(rng.uniform(np.log(1.0 / cond), 0.0, size=d))
    lam[0], lam[-1] = 1.0 / cond, 1.0
    A = (Q * lam) @ Q.T
    return 0.5 * (A + A.T)


def random_psd(d: int, rng: np.random.Generator, rank: Optional[int] = None) -> np.ndarray:
    k = d if rank is None else rank
    G = rng.standard_normal((d, k))
    return G @ G.T / k
