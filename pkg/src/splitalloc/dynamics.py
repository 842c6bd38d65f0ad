"""Controlled count-state dynamics along a branch.

Two simulation engines back this module:

* ``run_branch`` grows a single branch in raw time, recording the mask, the
  chosen coordinate and the informative clock at every depth;
* vectorized engines step many replicates at once, either in raw time over
  the full coordinate space (``simulate_terminal_counts``) or in informative
  time over the informative block only (used by the drift and
  exponential-moment estimators, where the noninformative coordinates are
  irrelevant and the exposure can be drawn from the conditional
  hypergeometric law directly).

Imbalance statistics are kept as scaled integers (delta scaled by s, its
squared norm by s^2) so the one-step identity

    s^2 V_{n+1} = s^2 V_n + 2 s * scaled_delta[J] + s (s - 1)

can be checked with exact integer equality.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .environment import ModelConfig, hypergeom_pmf, opportunity_rate
from .policies import PolicySpec

__all__ = [
    "Trajectory",
    "run_branch",
    "ImbalanceStats",
    "imbalance",
    "simulate_terminal_counts",
    "DriftBucket",
    "DriftReport",
    "estimate_drift",
    "ExpMomentPoint",
    "exp_moment_series",
    "AllocationSummary",
    "allocation_target",
    "summarize_allocation",
]


# ---------------------------------------------------------------------------
# single-branch simulation


@dataclass
class Trajectory:
    """One simulated branch: per-depth masks, actions and derived views."""

    model: ModelConfig
    policy: PolicySpec
    masks: np.ndarray  # (ell, m) int
    actions: np.ndarray  # (ell,) int
    informative: np.ndarray  # (ell,) bool: mask exposed an informative coordinate

    @property
    def ell(self) -> int:
        return len(self.actions)

    def clock(self) -> np.ndarray:
        """Informative clock M_t for t = 0..ell (M_0 = 0)."""
        return np.concatenate([[0], np.cumsum(self.informative.astype(np.int64))])

    def informative_times(self) -> np.ndarray:
        """Depths T_n (1-based) at which an informative coordinate was exposed."""
        return np.flatnonzero(self.informative) + 1

    def counts_history(self) -> np.ndarray:
        """Count vectors N_t for t = 0..ell, shape (ell+1, d)."""
        hist = np.zeros((self.ell + 1, self.model.d), dtype=np.int64)
        onehot = np.zeros((self.ell, self.model.d), dtype=np.int64)
        onehot[np.arange(self.ell), self.actions] = 1
        hist[1:] = np.cumsum(onehot, axis=0)
        return hist

    def final_counts(self) -> np.ndarray:
        return self.counts_history()[-1]

    def informative_actions(self) -> np.ndarray:
        """Coordinates chosen at informative depths, in informative time."""
        return self.actions[self.informative]

    def z_history(self) -> np.ndarray:
        """Informative-block counts Z_n for n = 0..M_ell, shape (M+1, s)."""
        acts = self.informative_actions()
        z = np.zeros((len(acts) + 1, self.model.s), dtype=np.int64)
        onehot = np.zeros((len(acts), self.model.s), dtype=np.int64)
        onehot[np.arange(len(acts)), acts] = 1
        z[1:] = np.cumsum(onehot, axis=0)
        return z


def _policy_params(model: ModelConfig, policy: PolicySpec):
    """Float shift vector and parameters for the fast per-step selectors."""
    theta = 0.5 * np.log2(model.beta_float() ** 2)
    alpha = float(policy.alpha) if policy.kind == "mix" else None
    w = float(policy.window) if policy.kind == "window" else None
    return theta, alpha, w


def _select_fast(policy, counts, theta, alpha, w, inf_members, rng):
    """Choose an informative coordinate from the exposed block.

    Greedy compares shifted counts (count - theta_j), which orders exactly
    like the gains; with equal coefficients the keys are integers and ties
    are exact.
    """
    keys = counts[inf_members] - theta[inf_members]
    if policy.kind == "exploratory" or (
        policy.kind == "mix" and rng.random() >= alpha
    ):
        return int(inf_members[rng.integers(len(inf_members))])
    if policy.kind == "window":
        cand = inf_members[keys <= keys.min() + w + 1e-12]
        return int(cand[rng.integers(len(cand))])
    # greedy (or the exploiting arm of mix)
    cand = inf_members[keys <= keys.min() + 1e-12]
    return int(cand[rng.integers(len(cand))])


def run_branch(model: ModelConfig, policy: PolicySpec, ell: int, rng: np.random.Generator) -> Trajectory:
    """Grow one branch to depth ell; reproducible from the generator state."""
    if ell < 0:
        raise ValueError("ell must be nonnegative")
    d, s, m = model.d, model.s, model.m
    theta, alpha, w = _policy_params(model, policy)
    # first m entries of a random permutation per depth = uniform mask
    masks = np.argsort(rng.random((ell, d)), axis=1)[:, :m].astype(np.int64)
    counts = np.zeros(d, dtype=np.int64)
    actions = np.empty(ell, dtype=np.int64)
    informative = np.empty(ell, dtype=bool)
    for t in range(ell):
        u = masks[t]
        inf_members = u[u < s]
        if inf_members.size == 0:
            j = int(u[rng.integers(len(u))])
            informative[t] = False
        else:
            j = _select_fast(policy, counts, theta, alpha, w, inf_members, rng)
            informative[t] = True
        counts[j] += 1
        actions[t] = j
    masks.sort(axis=1)
    return Trajectory(model=model, policy=policy, masks=masks, actions=actions, informative=informative)


# ---------------------------------------------------------------------------
# imbalance statistics


@dataclass(frozen=True)
class ImbalanceStats:
    """Deviation of informative counts from perfect equalization.

    ``scaled_delta[j] = s * Z[j] - n`` and ``scaled_v = sum(scaled_delta^2)``
    are exact integers; ``w = sqrt(scaled_v) / s`` is the Euclidean imbalance.
    """

    scaled_delta: tuple
    scaled_v: int
    w: float


def imbalance(z, n: int, s: int) -> ImbalanceStats:
    z = tuple(int(v) for v in z)
    if len(z) != s:
        raise ValueError(f"expected {s} informative counts, got {len(z)}")
    if sum(z) != n:
        raise ValueError(f"counts sum to {sum(z)}, not n={n}")
    scaled = tuple(s * v - n for v in z)
    sv = sum(t * t for t in scaled)
    return ImbalanceStats(scaled_delta=scaled, scaled_v=sv, w=math.sqrt(sv) / s)


# ---------------------------------------------------------------------------
# vectorized raw-time engine (full coordinate space)


def _uniform_pick(candidates: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Row-wise uniform choice among True entries (argmax of masked uniforms)."""
    u = rng.random(candidates.shape)
    return np.argmax(np.where(candidates, u, -1.0), axis=1)


def _informative_choice(policy, Z, exposed, theta_inf, rng, alpha, w):
    """Row-wise informative action given exposed informative blocks."""
    keys = Z - theta_inf  # theta is 0 for equal coefficients
    masked = np.where(exposed, keys, np.inf)
    kmin = masked.min(axis=1, keepdims=True)
    if policy.kind == "exploratory":
        return _uniform_pick(exposed, rng)
    if policy.kind == "window":
        cand = exposed & (masked <= kmin + w + 1e-12)
        return _uniform_pick(cand, rng)
    greedy_cand = exposed & (masked <= kmin + 1e-12)
    j_greedy = _uniform_pick(greedy_cand, rng)
    if policy.kind == "greedy":
        return j_greedy
    # mix
    j_explore = _uniform_pick(exposed, rng)
    coin = rng.random(len(Z)) < alpha
    return np.where(coin, j_greedy, j_explore)


def _split_streams(rng: np.random.Generator):
    """Derive a (mask, choice) generator pair from one generator.

    Mask draws consume only the first stream, policy randomness only the
    second, so two simulations started from identically seeded generators
    see the same mask sequence regardless of the policy compared (paired
    design for cross-policy contrasts).
    """
    seeds = rng.integers(0, 2**63 - 1, size=2)
    return np.random.default_rng(seeds[0]), np.random.default_rng(seeds[1])


def simulate_terminal_counts(
    model: ModelConfig,
    policy: PolicySpec,
    ell: int,
    reps: int,
    rng: np.random.Generator,
    return_clock: bool = False,
):
    """Simulate ``reps`` independent branches to depth ell, vectorized.

    Returns the (reps, d) terminal count matrix, and optionally the number
    of informative depths per replicate.
    """
    d, s, m = model.d, model.s, model.m
    mask_rng, choice_rng = _split_streams(rng)
    theta_inf = np.zeros(s) if model.equal_beta else 0.5 * np.log2(model.beta_float() ** 2)
    N = np.zeros((reps, d), dtype=np.int64)
    M = np.zeros(reps, dtype=np.int64)
    rows = np.arange(reps)
    for _ in range(ell):
        u = mask_rng.random((reps, d))
        kth = np.partition(u, m - 1, axis=1)[:, m - 1 : m]
        exposed = u <= kth  # uniform m-subset per row
        inf_exposed = exposed[:, :s]
        has_inf = inf_exposed.any(axis=1)
        j_inf = _informative_choice(
            policy,
            N[:, :s],
            inf_exposed,
            theta_inf,
            choice_rng,
            float(policy.alpha) if policy.kind == "mix" else None,
            float(policy.window) if policy.kind == "window" else None,
        )
        j_any = _uniform_pick(exposed, choice_rng)
        j = np.where(has_inf, j_inf, j_any)
        N[rows, j] += 1
        M += has_inf
    if return_clock:
        return N, M
    return N


# ---------------------------------------------------------------------------
# vectorized informative-time engine


def _exposure_distribution(model: ModelConfig) -> np.ndarray:
    """P(K = k | K >= 1) for k = 1..s under the hypergeometric exposure law."""
    q = opportunity_rate(model.d, model.s, model.m)
    probs = [hypergeom_pmf(model.d, model.s, model.m, k) / q for k in range(1, model.s + 1)]
    arr = np.array([float(p) for p in probs])
    return arr / arr.sum()


class _InformativeEngine:
    """Steps the informative-block process for many replicates at once."""

    def __init__(self, model: ModelConfig, policy: PolicySpec, reps: int, rng: np.random.Generator):
        self.model, self.policy, self.reps = model, policy, reps
        self.expose_rng, self.choice_rng = _split_streams(rng)
        self.s = model.s
        self.Z = np.zeros((reps, model.s), dtype=np.int64)
        self.n = 0
        self.k_probs = _exposure_distribution(model)
        self.theta_inf = (
            np.zeros(model.s) if model.equal_beta else 0.5 * np.log2(model.beta_float() ** 2)
        )
        self.alpha = float(policy.alpha) if policy.kind == "mix" else None
        self.w = float(policy.window) if policy.kind == "window" else None

    def exposure(self) -> np.ndarray:
        """Uniform K-subset of the informative block, K from the conditional law."""
        s, reps, rng = self.s, self.reps, self.expose_rng
        k = rng.choice(s, size=reps, p=self.k_probs) + 1
        u = rng.random((reps, s))
        order = np.argsort(u, axis=1)
        ranks = np.empty_like(order)
        np.put_along_axis(ranks, order, np.arange(s)[None, :].repeat(reps, 0), axis=1)
        return ranks < k[:, None]

    def step(self) -> np.ndarray:
        """Advance one informative time step; returns the chosen coordinates."""
        exposed = self.exposure()
        j = _informative_choice(
            self.policy, self.Z, exposed, self.theta_inf, self.choice_rng, self.alpha, self.w
        )
        self.Z[np.arange(self.reps), j] += 1
        self.n += 1
        return j

    def scaled_delta(self) -> np.ndarray:
        return self.s * self.Z - self.n

    def w_values(self) -> np.ndarray:
        sd = self.scaled_delta().astype(np.float64)
        return np.sqrt((sd * sd).sum(axis=1)) / self.s


# ---------------------------------------------------------------------------
# drift / contraction estimation


@dataclass(frozen=True)
class DriftBucket:
    """Conditional-drift estimate for one imbalance geometry.

    The key is the sorted tuple of scaled deltas; every state sharing it has
    the same conditional drift under an equal-coefficient policy.
    """

    key: tuple
    w: float
    mean: float
    se: float
    count: int
    flagged: bool


@dataclass
class DriftReport:
    buckets: list
    kappa_hat: float
    se_scale: float
    steps: int
    policy: str


def estimate_drift(
    model: ModelConfig,
    policy: PolicySpec,
    horizon: int,
    reps: int,
    seed: int,
    min_bucket: int = 25,
) -> DriftReport:
    """Monte Carlo table of E[delta_J | state] by imbalance geometry.

    ``kappa_hat`` is the largest kappa such that every well-sampled bucket
    with positive imbalance satisfies mean <= -kappa * W + 3 SE, i.e. a
    one-sided statistical lower bound on the contraction coefficient.
    """
    if reps < 100:
        raise ValueError("need at least 100 replicates")
    rng = np.random.default_rng([seed, 0xD51F])
    eng = _InformativeEngine(model, policy, reps, rng)
    acc: dict[tuple, list] = {}
    for _ in range(horizon):
        sd = eng.scaled_delta()
        j = eng.step()
        realized = sd[np.arange(reps), j] / model.s
        for r in range(reps):
            key = tuple(sorted(sd[r].tolist()))
            cell = acc.get(key)
            if cell is None:
                acc[key] = [realized[r], realized[r] ** 2, 1]
            else:
                cell[0] += realized[r]
                cell[1] += realized[r] ** 2
                cell[2] += 1
    buckets = []
    for key, (tot, tot2, cnt) in sorted(acc.items()):
        mean = tot / cnt
        var = max(tot2 / cnt - mean**2, 0.0)
        se = math.sqrt(var / cnt)
        w = math.sqrt(sum(v * v for v in key)) / model.s
        buckets.append(DriftBucket(key=key, w=w, mean=mean, se=se, count=cnt, flagged=cnt < min_bucket))
    usable = [b for b in buckets if not b.flagged and b.w > 0]
    if usable:
        kappa_hat = min((3 * b.se - b.mean) / b.w for b in usable)
        se_scale = max(b.se / b.w for b in usable)
    else:
        kappa_hat = math.nan
        se_scale = math.nan
    return DriftReport(
        buckets=buckets,
        kappa_hat=kappa_hat,
        se_scale=se_scale,
        steps=horizon * reps,
        policy=policy.label(),
    )


# ---------------------------------------------------------------------------
# exponential-moment diagnostic


@dataclass(frozen=True)
class ExpMomentPoint:
    n: int
    estimate: float
    se: float


def exp_moment_series(
    model: ModelConfig,
    policy: PolicySpec,
    eta: float,
    n_grid,
    reps: int,
    seed: int,
) -> list:
    """Monte Carlo estimates of E[exp(eta * W_n)] along a grid of n."""
    if eta < 0:
        raise ValueError("eta must be nonnegative")
    grid = sorted(int(n) for n in n_grid)
    if any(n < 0 for n in grid):
        raise ValueError("n_grid entries must be nonnegative")
    rng = np.random.default_rng([seed, 0xE4B])
    eng = _InformativeEngine(model, policy, reps, rng)
    out = []
    for n in grid:
        while eng.n < n:
            eng.step()
        vals = np.exp(eta * eng.w_values())
        out.append(ExpMomentPoint(n=n, estimate=float(vals.mean()), se=float(vals.std(ddof=1) / math.sqrt(reps))))
    return out


# ---------------------------------------------------------------------------
# first-order allocation


def allocation_target(model: ModelConfig) -> np.ndarray:
    """Limiting split-allocation proportions (q/s on the informative block)."""
    q = float(opportunity_rate(model.d, model.s, model.m))
    target = np.empty(model.d)
    target[: model.s] = q / model.s
    if model.d > model.s:
        target[model.s :] = (1 - q) / (model.d - model.s)
    return target


@dataclass
class AllocationSummary:
    empirical: np.ndarray
    target: np.ndarray
    max_abs_gap: float


def summarize_allocation(trajectories) -> AllocationSummary:
    """Average empirical allocation N_t / t against the analytic limit."""
    trajectories = list(trajectories)
    if not trajectories:
        raise ValueError("need at least one trajectory")
    model = trajectories[0].model
    props = np.zeros(model.d)
    for traj in trajectories:
        if traj.model != model:
            raise ValueError("trajectories must share one configuration")
        props += traj.final_counts() / traj.ell
    props /= len(trajectories)
    target = allocation_target(model)
    return AllocationSummary(
        empirical=props, target=target, max_abs_gap=float(np.max(np.abs(props - target)))
    )
