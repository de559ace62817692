"""JSON instance files.

Example::

    {"covariate_model": "gaussian",
     "eigenvalues": [1.0, 0.5, 0.25],
     "noise": {"kind": "additive", "sigma2": 0.01},
     "optimum": "ones"}

``hessian`` (full matrix) may replace ``eigenvalues``.  Noise kinds are
``additive`` (sigma2), ``explicit`` (``sigma`` matrix) and ``lemma2`` (``d``;
the hessian is then implied).  Empirical instances give ``samples`` instead of
a spectrum and support additive noise only.  Floats are written with their
shortest round-trip representation, so load(dump(spec)) == spec.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Any, Dict, Optional

import numpy as np

from .problem import (EMPIRICAL, GAUSSIAN, ProblemInstance, additive_instance,
                      empirical_instance, gaussian_instance, separation_instance)
from .samplers import NoiseModel, noise_model_for

NOISE_KINDS = ("additive", "explicit", "lemma2")


def _tolist(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    return x


@dataclass
class InstanceSpec:
    noise: Dict[str, Any]
    eigenvalues: Optional[list] = None
    hessian: Optional[list] = None
    samples: Optional[list] = None
    optimum: Any = "ones"
    covariate_model: str = GAUSSIAN
    name: str = ""

    def __post_init__(self):
        kind = self.noise.get("kind")
        if kind not in NOISE_KINDS:
            raise ValueError(f"noise kind must be one of {NOISE_KINDS}, got {kind!r}")
        if self.covariate_model not in (GAUSSIAN, EMPIRICAL):
            raise ValueError(f"unknown covariate model {self.covariate_model!r}")
        given = [x is not None for x in (self.eigenvalues, self.hessian, self.samples)]
        if kind == "lemma2":
            if any(given):
                raise ValueError("lemma2 noise fixes the hessian; omit eigenvalues/hessian/samples")
        elif sum(given) != 1:
            raise ValueError("give exactly one of eigenvalues, hessian, samples")
        if (self.samples is not None) != (self.covariate_model == EMPIRICAL):
            raise ValueError("samples go with the empirical covariate model")
        if self.covariate_model == EMPIRICAL and kind != "additive":
            raise ValueError("empirical instances support additive noise only")
        self.eigenvalues = _tolist(self.eigenvalues)
        self.hessian = _tolist(self.hessian)
        self.samples = _tolist(self.samples)
        self.optimum = _tolist(self.optimum)

    # -- (de)serialization
    def to_dict(self) -> dict:
        out = {"covariate_model": self.covariate_model, "noise": dict(self.noise),
               "optimum": self.optimum}
        for key in ("eigenvalues", "hessian", "samples"):
            v = getattr(self, key)
            if v is not None:
                out[key] = v
        if self.name:
            out["name"] = self.name
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "InstanceSpec":
        known = {"noise", "eigenvalues", "hessian", "samples", "optimum", "covariate_model", "name"}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown instance keys: {sorted(extra)}")
        if "noise" not in d:
            raise ValueError("instance file needs a 'noise' entry")
        return cls(**d)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    def dump(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.dumps() + "\n")

    @classmethod
    def load(cls, path) -> "InstanceSpec":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def digest(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()

    # -- construction
    def build(self) -> ProblemInstance:
        kind = self.noise["kind"]
        if kind == "lemma2":
            return separation_instance(int(self.noise["d"]), self.optimum)
        if self.covariate_model == EMPIRICAL:
            return empirical_instance(np.array(self.samples), float(self.noise["sigma2"]),
                                      self.optimum)
        spectrum = self.eigenvalues if self.eigenvalues is not None else self.hessian
        if kind == "additive":
            return additive_instance(spectrum, float(self.noise["sigma2"]), self.optimum)
        return gaussian_instance(spectrum, np.array(self.noise["sigma"], dtype=float),
                                 self.optimum)

    def noise_model(self, inst: Optional[ProblemInstance] = None) -> NoiseModel:
        kind = self.noise["kind"]
        if kind == "additive":
            return NoiseModel.additive(float(self.noise["sigma2"]))
        if kind == "lemma2":
            return NoiseModel.lemma2(int(self.noise["d"]))
        return noise_model_for(inst if inst is not None else self.build())


def harmonic_spec(d: int = 50, sigma2: float = 0.01) -> InstanceSpec:
    """Gaussian instance with eigenvalues 1/k, k = 1..d, additive noise."""
    return InstanceSpec(noise={"kind": "additive", "sigma2": sigma2},
                        eigenvalues=[1.0 / k for k in range(1, d + 1)], name=f"decay{d}")


def kappa10_spec(d: int = 10, sigma2: float = 0.01) -> InstanceSpec:
    """d = 10, kappa = 10: eigenvalues log-spaced between 1 and 0.1."""
    return InstanceSpec(noise={"kind": "additive", "sigma2": sigma2},
                        eigenvalues=np.logspace(0, -1, d).tolist(), name=f"logspace{d}")


def separation_spec(d: int) -> InstanceSpec:
    return InstanceSpec(noise={"kind": "lemma2", "d": int(d)}, name=f"separation{d}")


BUILTIN = {"harmonic": harmonic_spec, "kappa10": kappa10_spec}


def resolve_instance(ref: str) -> InstanceSpec:
    """A path to a JSON file, ``builtin:<name>`` or ``lemma2:<d>``."""
    if ref.startswith("builtin:"):
        key = ref.split(":", 1)[1]
        if key not in BUILTIN:
            raise ValueError(f"unknown builtin instance {key!r}; choose from {sorted(BUILTIN)}")
        return BUILTIN[key]()
    if ref.startswith("lemma2:"):
        return separation_spec(int(ref.split(":", 1)[1]))
    return InstanceSpec.load(ref)
