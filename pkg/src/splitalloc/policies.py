"""Split policies over a realized candidate set.

A policy maps (count state, mask) to a probability distribution over the
mask members.  Four families are provided:

* ``greedy``       -- uniform over the largest-gain informative members,
* ``exploratory``  -- uniform over all exposed informative members,
* ``mix``          -- alpha-blend of greedy and exploratory,
* ``window``       -- uniform over informative members whose gain is within
                      a multiplicative factor 2^(-2w) of the best gain.

Every family is informative-respecting: whenever the mask exposes at least
one informative coordinate, noninformative members receive zero mass; on an
all-noninformative mask the distribution is uniform over the mask.

Gains are compared directly as beta_j^2 * 4^(-n_j) (never through
logarithms), so with integer or Fraction coefficients all comparisons are
exact.  With float coefficients ties are detected with a relative tolerance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from numbers import Rational

import numpy as np

from .environment import ModelConfig

__all__ = ["CountState", "PolicySpec", "gain", "action_distribution", "select"]

POLICY_KINDS = ("greedy", "exploratory", "mix", "window")


@dataclass(frozen=True)
class CountState:
    """Per-coordinate split counts along a branch; depth is their sum."""

    counts: tuple

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        if any(c < 0 for c in counts):
            raise ValueError("counts must be nonnegative")
        object.__setattr__(self, "counts", counts)

    @classmethod
    def zero(cls, d: int) -> "CountState":
        return cls((0,) * d)

    @property
    def depth(self) -> int:
        return sum(self.counts)

    def bump(self, j: int) -> "CountState":
        c = list(self.counts)
        c[j] += 1
        return CountState(tuple(c))


@dataclass(frozen=True)
class PolicySpec:
    """One split policy: kind plus its parameter.

    ``alpha`` is the exploitation probability of the mixture family;
    ``window`` the score-window width (``math.inf`` allowed).
    """

    kind: str
    alpha: float | Fraction | None = None
    window: float | Fraction | None = None
    tie_tolerance: float = 1e-12

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ValueError(f"unknown policy kind {self.kind!r}")
        if self.kind == "mix":
            if self.alpha is None or not 0 <= self.alpha <= 1:
                raise ValueError("mix policy needs alpha in [0, 1]")
        if self.kind == "window":
            if self.window is None or self.window < 0:
                raise ValueError("window policy needs w >= 0")

    @classmethod
    def greedy(cls) -> "PolicySpec":
        return cls("greedy")

    @classmethod
    def exploratory(cls) -> "PolicySpec":
        return cls("exploratory")

    @classmethod
    def mix(cls, alpha) -> "PolicySpec":
        return cls("mix", alpha=alpha)

    @classmethod
    def score_window(cls, w) -> "PolicySpec":
        return cls("window", window=w)

    @classmethod
    def parse(cls, text: str) -> "PolicySpec":
        """Parse ``greedy``, ``exploratory``, ``mix:<alpha>`` or ``window:<w>``."""
        if text == "greedy":
            return cls.greedy()
        if text == "exploratory":
            return cls.exploratory()
        if text.startswith("mix:"):
            return cls.mix(Fraction(text[4:]))
        if text.startswith("window:"):
            arg = text[7:]
            w = math.inf if arg in ("inf", "Inf", "INF") else Fraction(arg)
            return cls.score_window(w)
        raise ValueError(f"cannot parse policy {text!r}")

    def label(self) -> str:
        if self.kind == "mix":
            return f"mix:{self.alpha}"
        if self.kind == "window":
            return f"window:{self.window}"
        return self.kind


def gain(model: ModelConfig, state: CountState, j: int):
    """One-step population split score of coordinate j at the given counts.

    beta_j^2 * 4^(-n_j) / 12 on informative coordinates, exactly zero on
    noninformative ones.  Exact Fraction when the coefficient is rational.
    """
    if not 0 <= j < model.d:
        raise ValueError(f"coordinate {j} out of range")
    if j >= model.s:
        return Fraction(0) if model.rational_beta else 0.0
    n_j = state.counts[j]
    bsq = model.beta_sq(j)
    if isinstance(bsq, Rational):
        return Fraction(bsq) / (12 * 4**n_j)
    return bsq / (12.0 * 4.0**n_j)


def _window_factor(w):
    """Multiplicative slack 2^(-2w); exact Fraction when 2w is an integer."""
    if w == math.inf:
        return 0
    if isinstance(w, Rational):
        two_w = 2 * Fraction(w)
        if two_w.denominator == 1:
            return Fraction(1, 2 ** int(two_w))
    return 2.0 ** (-2.0 * float(w))


def _top_set(gains: dict, tol: float) -> list:
    """Members whose gain ties the maximum (exact for rational gains)."""
    gmax = max(gains.values())
    if all(isinstance(g, Rational) for g in gains.values()):
        return [j for j, g in gains.items() if g == gmax]
    gmax = float(gmax)
    return [j for j, g in gains.items() if gmax - float(g) <= tol * gmax]


def action_distribution(
    policy: PolicySpec, model: ModelConfig, state: CountState, mask
) -> dict:
    """Probability over mask members of splitting each coordinate.

    Returns a dict keyed by every mask member, values summing to one
    (exactly so when the model has rational coefficients and the policy
    parameters are rational).
    """
    members = list(mask)
    if not members:
        raise ValueError("mask must be nonempty")
    informative = [j for j in members if j < model.s]
    if not informative:
        p = Fraction(1, len(members))
        return {j: p for j in members}

    dist = {j: Fraction(0) for j in members}
    gains = {j: gain(model, state, j) for j in informative}

    def put_greedy(weight):
        top = _top_set(gains, policy.tie_tolerance)
        for j in top:
            dist[j] += weight * Fraction(1, len(top)) if isinstance(weight, Rational) else weight / len(top)

    def put_exploratory(weight):
        for j in informative:
            dist[j] += weight * Fraction(1, len(informative)) if isinstance(weight, Rational) else weight / len(informative)

    if policy.kind == "greedy":
        put_greedy(Fraction(1))
    elif policy.kind == "exploratory":
        put_exploratory(Fraction(1))
    elif policy.kind == "mix":
        a = Fraction(policy.alpha) if isinstance(policy.alpha, Rational) else policy.alpha
        one = Fraction(1) if isinstance(a, Rational) else 1.0
        put_greedy(a)
        put_exploratory(one - a)
    elif policy.kind == "window":
        factor = _window_factor(policy.window)
        gmax = max(gains.values())
        exact = isinstance(factor, Rational) and all(
            isinstance(g, Rational) for g in gains.values()
        )
        if exact:
            feasible = [j for j in informative if gains[j] >= factor * gmax]
        else:
            thr = float(factor) * float(gmax)
            feasible = [j for j in informative if float(gains[j]) >= thr * (1 - policy.tie_tolerance)]
        for j in feasible:
            dist[j] += Fraction(1, len(feasible))
    if any(isinstance(v, float) for v in dist.values()):
        dist = {j: float(v) for j, v in dist.items()}
    return dist


def select(policy: PolicySpec, model: ModelConfig, state: CountState, mask, rng: np.random.Generator) -> int:
    """Sample one coordinate from the policy's action distribution."""
    dist = action_distribution(policy, model, state, mask)
    members = list(dist)
    probs = np.array([float(dist[j]) for j in members])
    probs /= probs.sum()
    return int(members[rng.choice(len(members), p=probs)])
