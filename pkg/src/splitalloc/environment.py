"""Random candidate sets and their exposure law.

At every node of a branch, a uniform size-m subset of the d coordinates is
drawn as the candidate set ("mask").  Coordinates 0..s-1 are informative
(nonzero coefficient); the number of informative coordinates exposed by a
mask is hypergeometric.  This module holds the model configuration, exact
rational evaluation of the exposure law, the opportunity rate q, the drift
constant of the greedy split rule, and the exponential-moment requirement
check used by the risk bounds.

All probabilities are exact ``fractions.Fraction`` values; binomial
coefficients are big integers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from math import comb
from numbers import Rational

import numpy as np

__all__ = [
    "ModelConfig",
    "sample_mask",
    "hypergeom_pmf",
    "opportunity_rate",
    "DriftConstant",
    "drift_constant",
    "EtaReqReport",
    "check_eta_requirement",
]


@dataclass(frozen=True)
class ModelConfig:
    """Sparse linear midpoint model on [0,1]^d.

    Coordinates ``0..s-1`` carry the nonzero coefficients ``beta``; the
    remaining ``d-s`` coordinates are pure noise.  ``m`` is the per-node
    candidate-set size (``ceil(gamma*d)`` when built from a subsampling
    rate).  ``sigma0_sq`` is the noise variance of the response.
    """

    d: int
    s: int
    m: int
    beta: tuple
    sigma0_sq: float | Fraction = 0

    def __post_init__(self):
        if not 1 <= self.s <= self.d:
            raise ValueError(f"need 1 <= s <= d, got s={self.s}, d={self.d}")
        if not 1 <= self.m <= self.d:
            raise ValueError(f"need 1 <= m <= d, got m={self.m}, d={self.d}")
        beta = tuple(self.beta)
        if len(beta) != self.s:
            raise ValueError(f"beta must have length s={self.s}, got {len(beta)}")
        if any(b == 0 for b in beta):
            raise ValueError("informative coefficients must be nonzero")
        if self.sigma0_sq < 0:
            raise ValueError("sigma0_sq must be nonnegative")
        object.__setattr__(self, "beta", beta)

    @classmethod
    def from_gamma(cls, d: int, s: int, gamma: float, beta=None, sigma0_sq=0) -> "ModelConfig":
        if not 0 < gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        m = math.ceil(gamma * d)
        if beta is None:
            beta = (1,) * s
        return cls(d=d, s=s, m=m, beta=tuple(beta), sigma0_sq=sigma0_sq)

    @property
    def gamma(self) -> float:
        return self.m / self.d

    @property
    def equal_beta(self) -> bool:
        return all(b == self.beta[0] for b in self.beta)

    @property
    def rational_beta(self) -> bool:
        """True when every coefficient is an exact rational (int or Fraction)."""
        return all(isinstance(b, Rational) for b in self.beta)

    def beta_sq(self, j: int):
        b = self.beta[j]
        return b * b

    def beta_float(self) -> np.ndarray:
        return np.array([float(b) for b in self.beta])


def sample_mask(rng: np.random.Generator, d: int, m: int) -> tuple:
    """Draw a uniform size-m subset of {0,...,d-1}, returned sorted."""
    if not 1 <= m <= d:
        raise ValueError(f"need 1 <= m <= d, got m={m}, d={d}")
    members = rng.choice(d, size=m, replace=False)
    return tuple(sorted(int(j) for j in members))


def hypergeom_pmf(d: int, s: int, m: int, k: int) -> Fraction:
    """P(|mask ∩ informative| = k) for a uniform size-m mask, exact.

    Out-of-range k returns 0 by convention.
    """
    if not (1 <= s <= d and 1 <= m <= d):
        raise ValueError("invalid (d, s, m)")
    if k < 0 or k > min(s, m) or m - k > d - s:
        return Fraction(0)
    return Fraction(comb(s, k) * comb(d - s, m - k), comb(d, m))


def opportunity_rate(d: int, s: int, m: int) -> Fraction:
    """Probability that a mask exposes at least one informative coordinate.

    Equals 1 - C(d-s, m)/C(d, m); exactly 1 whenever m > d - s.
    """
    if not (1 <= s <= d and 1 <= m <= d):
        raise ValueError("invalid (d, s, m)")
    if m > d - s:
        return Fraction(1)
    return 1 - Fraction(comb(d - s, m), comb(d, m))


@dataclass(frozen=True)
class DriftConstant:
    """Guaranteed negative-drift rate of the greedy rule on the informative block.

    ``kernel`` is the exact rational E[(K-1)+ | K >= 1] for the hypergeometric
    exposure count K; ``value`` is kernel / (s (s-1)^{3/2}), which is
    irrational for s >= 3 and therefore reported as a float.
    """

    kernel: Fraction
    value: float
    nondegenerate: bool


def drift_constant(d: int, s: int, m: int) -> DriftConstant:
    """Drift constant of the greedy split rule under uniform masks.

    Zero (with ``nondegenerate=False``) when masks can never expose two
    informative coordinates at once, including the trivial s = 1 case where
    no competition between informative coordinates exists.
    """
    if s == 1:
        return DriftConstant(kernel=Fraction(0), value=0.0, nondegenerate=False)
    q = opportunity_rate(d, s, m)
    kernel = Fraction(0)
    p_ge2 = Fraction(0)
    for k in range(2, min(s, m) + 1):
        pk = hypergeom_pmf(d, s, m, k) / q
        kernel += (k - 1) * pk
        p_ge2 += pk
    value = float(kernel) / (s * (s - 1) ** 1.5)
    return DriftConstant(kernel=kernel, value=value, nondegenerate=p_ge2 > 0)


@dataclass(frozen=True)
class EtaReqReport:
    eta_req: float
    threshold: float
    cstar: float
    kernel: Fraction
    passes: bool
    nondegenerate: bool


def check_eta_requirement(d: int, s: int, m: int) -> EtaReqReport:
    """Check that the drift constant clears the exponential-moment requirement.

    The required exponent is max(2 ln 2, sqrt(s) ln 2 / 2) (natural
    logarithm); the sufficient condition is cstar > (1 - 1/s) * eta_req / 4.
    """
    if s < 2:
        raise ValueError("requirement check needs s >= 2")
    dc = drift_constant(d, s, m)
    eta_req = max(2 * math.log(2), math.sqrt(s) * math.log(2) / 2)
    threshold = (1 - 1 / s) * eta_req / 4
    return EtaReqReport(
        eta_req=eta_req,
        threshold=threshold,
        cstar=dc.value,
        kernel=dc.kernel,
        passes=dc.value > threshold,
        nondegenerate=dc.nondegenerate,
    )
