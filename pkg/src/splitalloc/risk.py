"""Terminal-law risk functionals and closed-form bound terms.

The forest squared error decomposes into three expectations of the terminal
count pair (N, N'): a single-tree bias sum E[4^(-N_j)], a cross-tree bias
sum E[4^(-max(N_j, N'_j))], and a cross-tree overlap E[2^(-||N-N'||_1/2)].
This module estimates them by paired Monte Carlo and evaluates the
closed-form factors that bound them:

* greedy/stabilized:  (1-q+q 4^(-1/s))^l,
  (1-q+q 2^(-1/s))^{2l} F_{l, 2^(-2/s)}(...),  and the overlap proxy
  L_{l, d-s+1, 1/2}(pi_pop) with pi_pop = (q, (1-q)/(d-s), ...);
* exploratory: (1-3q/(4s))^l, (1-q/(2s))^{2l} F_{l, 1/4}(q/(2s-q)), and
  L_{l, d, 1/2}(pi) with the full d-dimensional multinomial vector.

The L parameter is r = 1/2 (kernel parameter sqrt(r) = 2^(-1/2)) so that
the overlap identity E[2^(-||N-N'||_1/2)] = L_{l,d,1/2}(p) holds exactly
for multinomial pairs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .dynamics import simulate_terminal_counts
from .environment import ModelConfig, check_eta_requirement, opportunity_rate
from .policies import PolicySpec
from .poisson import F_functional, L_functional

__all__ = [
    "RiskFunctionals",
    "estimate_functionals",
    "BoundTerms",
    "cart_bound_terms",
    "benchmark_bound_terms",
    "equilibrium_replacement_ratio",
]


@dataclass(frozen=True)
class RiskFunctionals:
    single_tree_bias: float
    se_single: float
    cross_tree_bias: float
    se_cross: float
    overlap: float
    se_overlap: float
    reps: int


def _mean_se(values: np.ndarray):
    return float(values.mean()), float(values.std(ddof=1) / math.sqrt(len(values)))


def estimate_functionals(
    model: ModelConfig, policy: PolicySpec, ell: int, reps: int, seed: int
) -> RiskFunctionals:
    """Plug-in estimates of the three risk functionals from paired branches."""
    if reps < 1000:
        raise ValueError("need at least 1000 replicate pairs")
    rng = np.random.default_rng([seed, 0x815C])
    N = simulate_terminal_counts(model, policy, ell, reps, rng)
    N2 = simulate_terminal_counts(model, policy, ell, reps, rng)
    bsq = model.beta_float() ** 2
    single = (bsq[None, :] * np.exp2(-2.0 * N[:, : model.s])).sum(axis=1)
    cross = (bsq[None, :] * np.exp2(-2.0 * np.maximum(N[:, : model.s], N2[:, : model.s]))).sum(axis=1)
    overlap = np.exp2(-0.5 * np.abs(N - N2).sum(axis=1))
    m1, s1 = _mean_se(single)
    m2, s2 = _mean_se(cross)
    m3, s3 = _mean_se(overlap)
    return RiskFunctionals(
        single_tree_bias=m1,
        se_single=s1,
        cross_tree_bias=m2,
        se_cross=s2,
        overlap=m3,
        se_overlap=s3,
        reps=reps,
    )


@dataclass(frozen=True)
class BoundTerms:
    """Displayed factors of the closed-form risk bound (policy weights and
    universal constants excluded)."""

    bias1: float  # single-tree bias factor, in [0, 1]
    bias2: float  # cross-tree bias factor (binomial prefactor times F)
    varterm: float  # (2^l / n0) times the overlap proxy L
    remainder: float  # (1 - 2^-l)^n0, empty-cell scaffolding
    pi: tuple  # probability vector entering the L functional
    eta_req_passes: bool | None  # None when not applicable (s = 1)


def _stabilized_terms(q: float, d: int, s: int, ell: int, n0: int):
    bias1 = (1 - q + q * 4.0 ** (-1 / s)) ** ell
    base = 1 - q + q * 2.0 ** (-1 / s)
    bias2 = base ** (2 * ell) * F_functional(ell, 2.0 ** (-2 / s), q * 2.0 ** (-1 / s) / base)
    pi_pop = (q,) + ((1 - q) / (d - s),) * (d - s) if d > s else (q,)
    varterm = 2.0**ell / n0 * L_functional(ell, len(pi_pop), 0.5, pi_pop).value
    remainder = (1 - 2.0**-ell) ** n0
    return bias1, bias2, varterm, remainder, pi_pop


def _benchmark_terms(q: float, d: int, s: int, ell: int, n0: int):
    bias1 = (1 - 3 * q / (4 * s)) ** ell
    bias2 = (1 - q / (2 * s)) ** (2 * ell) * F_functional(ell, 0.25, q / (2 * s - q))
    pi = (q / s,) * s + ((1 - q) / (d - s),) * (d - s) if d > s else (q / s,) * s
    varterm = 2.0**ell / n0 * L_functional(ell, d, 0.5, pi).value
    remainder = (1 - 2.0**-ell) ** n0
    return bias1, bias2, varterm, remainder, pi


def cart_bound_terms(model: ModelConfig, ell: int, B: int, n0: int) -> BoundTerms:
    """Bound factors for the stabilized (greedy) policy.

    Computed unconditionally; ``eta_req_passes`` records whether the
    exponential-moment requirement backing the bound holds.
    """
    q = float(opportunity_rate(model.d, model.s, model.m))
    bias1, bias2, varterm, remainder, pi_pop = _stabilized_terms(q, model.d, model.s, ell, n0)
    passes = None
    if model.s >= 2:
        passes = check_eta_requirement(model.d, model.s, model.m).passes
    return BoundTerms(
        bias1=bias1, bias2=bias2, varterm=varterm, remainder=remainder, pi=pi_pop, eta_req_passes=passes
    )


def benchmark_bound_terms(model: ModelConfig, ell: int, B: int, n0: int) -> BoundTerms:
    """Bound factors for the exploratory benchmark (exact multinomial law)."""
    q = float(opportunity_rate(model.d, model.s, model.m))
    bias1, bias2, varterm, remainder, pi = _benchmark_terms(q, model.d, model.s, ell, n0)
    return BoundTerms(
        bias1=bias1, bias2=bias2, varterm=varterm, remainder=remainder, pi=pi, eta_req_passes=None
    )


def equilibrium_replacement_ratio(
    model: ModelConfig,
    ell_grid,
    reps: int,
    seed: int,
    policy: PolicySpec | None = None,
):
    """Ratio of the simulated informative bias to its balanced-proxy factor.

    For each depth in the grid, estimates E[4^(-N_{l,j})] averaged over the
    informative coordinates and divides by the matching closed-form factor:
    (1-q+q 4^(-1/s))^l for the greedy policy, (1-3q/(4s))^l for the
    exploratory benchmark.  Returns (ell, ratio, se_ratio) triples.
    """
    if policy is None:
        policy = PolicySpec.greedy()
    q = float(opportunity_rate(model.d, model.s, model.m))
    if policy.kind == "exploratory":
        factor = lambda ell: (1 - 3 * q / (4 * model.s)) ** ell
    else:
        factor = lambda ell: (1 - q + q * 4.0 ** (-1 / model.s)) ** ell
    out = []
    for k, ell in enumerate(sorted(int(e) for e in ell_grid)):
        rng = np.random.default_rng([seed, 0xEB, k])
        N = simulate_terminal_counts(model, policy, ell, reps, rng)
        vals = np.exp2(-2.0 * N[:, : model.s]).mean(axis=1)
        mean = float(vals.mean())
        se = float(vals.std(ddof=1) / math.sqrt(reps))
        f = factor(ell)
        out.append((ell, mean / f, se / f))
    return out
