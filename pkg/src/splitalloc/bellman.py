"""Exact terminal laws, ensemble objectives and optimality certificates.

Masks are collapsed to exposure classes: every policy implemented here (and
every objective considered) is invariant to which particular noninformative
coordinates appear in a mask, so a mask matters only through its informative
part A = mask ∩ {0..s-1}.  Each specific nonempty A occurs with probability
C(d-s, m-|A|) / C(d, m); the all-noninformative event has probability
C(d-s, m) / C(d, m) and splits a uniformly chosen noise coordinate.

Two state representations are used:

* reduced: the informative count vector z (length s).  Valid whenever the
  terminal functional ignores noise coordinates (sigma0_sq = 0 objectives).
* full: the complete count vector (length d).  The Bellman minimum over an
  all-noninformative mask is computed losslessly from the order statistics
  of the successor values (the chance that the best exposed noise coordinate
  is the k-th ranked one is hypergeometric).

All probabilities and values are exact ``Fraction``s when the model
coefficients and policy parameters are rational; otherwise the computation
silently demotes to floats and the results carry ``exact=False``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from math import comb
from numbers import Rational

import numpy as np

from .environment import ModelConfig, opportunity_rate
from .policies import CountState, PolicySpec, action_distribution

__all__ = [
    "TerminalLaw",
    "ExactnessError",
    "exposure_classes",
    "terminal_law_exact",
    "EnsembleObjective",
    "default_objective",
    "objective_value",
    "marginal_cost",
    "psi_kernel_eigenvalues",
    "BellmanTable",
    "bellman_backward",
    "CertificateViolation",
    "certificate_scan",
    "CounterexampleReport",
    "reproduce_counterexample",
    "SearchResult",
    "brute_force_policy_search",
]

MAX_STATES = 100_000


class ExactnessError(ValueError):
    """Raised when a policy/model cannot be evaluated in exact rationals."""


# ---------------------------------------------------------------------------
# exposure classes


def exposure_classes(d: int, s: int, m: int):
    """Nonempty informative exposures with probabilities, plus P(no exposure).

    Returns ``(classes, p_empty)`` where classes is a list of
    ``(A, probability)`` with A a sorted tuple of informative coordinates.
    """
    total = comb(d, m)
    classes = []
    for k in range(1, min(s, m) + 1):
        if m - k > d - s:
            continue
        prob = Fraction(comb(d - s, m - k), total)
        for A in itertools.combinations(range(s), k):
            classes.append((A, prob))
    p_empty = Fraction(comb(d - s, m), total) if m <= d - s else Fraction(0)
    return classes, p_empty


def _exact_action_probs(policy: PolicySpec, model: ModelConfig, z, A) -> dict:
    """Action probabilities over exposed informative coordinates, as Fractions."""
    if not model.rational_beta:
        raise ExactnessError("irrational coefficients")
    if policy.kind == "mix" and not isinstance(policy.alpha, Rational):
        raise ExactnessError("irrational mixture weight")
    if policy.kind == "window":
        w = policy.window
        if w != math.inf and not (
            isinstance(w, Rational) and (2 * Fraction(w)).denominator == 1
        ):
            raise ExactnessError("window width with irrational slack factor")
    counts = list(z) + [0] * (model.d - len(z))
    dist = action_distribution(policy, model, CountState(tuple(counts)), A)
    if any(isinstance(v, float) for v in dist.values()):
        raise ExactnessError("policy produced float probabilities")
    return {j: v for j, v in dist.items() if v != 0}


def _float_action_probs(policy, model, z, A):
    counts = list(z) + [0] * (model.d - len(z))
    dist = action_distribution(policy, model, CountState(tuple(counts)), A)
    return {j: float(v) for j, v in dist.items() if v != 0}


# ---------------------------------------------------------------------------
# terminal law


@dataclass
class TerminalLaw:
    """Distribution of the depth-``depth`` count state.

    ``reduced`` laws live on informative count vectors (length s); full laws
    on complete count vectors (length d).
    """

    mass: dict
    depth: int
    reduced: bool
    exact: bool

    def total(self):
        return sum(self.mass.values())

    def support(self):
        return sorted(self.mass)


def _law_step(mass, classes, p_empty, act, s, reduced, d):
    """One forward step of the law over states."""
    nxt: dict = {}

    def add(state, p):
        if p == 0:
            return
        nxt[state] = nxt.get(state, 0) + p

    for state, prob in mass.items():
        if p_empty:
            if reduced:
                add(state, prob * p_empty)
            else:
                share = p_empty * Fraction(1, d - s) if isinstance(p_empty, Fraction) else p_empty / (d - s)
                for j in range(s, d):
                    new = list(state)
                    new[j] += 1
                    add(tuple(new), prob * share)
        for A, p_class in classes:
            for j, pj in act(state, A).items():
                new = list(state)
                new[j] += 1
                add(tuple(new), prob * p_class * pj)
    return nxt


def terminal_law_exact(
    model: ModelConfig,
    policy: PolicySpec,
    ell: int,
    reduced: bool | None = None,
    max_states: int = MAX_STATES,
) -> TerminalLaw:
    """Exact forward law of the count state at depth ell.

    ``reduced=None`` picks the informative-only representation when the
    model is noiseless.  Falls back to float arithmetic (``exact=False``)
    when the policy has no rational representation.
    """
    if ell < 0:
        raise ValueError("ell must be nonnegative")
    if reduced is None:
        reduced = model.sigma0_sq == 0
    d, s = model.d, model.s
    width = s if reduced else d
    n_states = comb(ell + width, width) if reduced else comb(ell + d - 1, d - 1)
    if n_states > max_states:
        raise ValueError(f"state space of size {n_states} exceeds limit {max_states}")
    classes, p_empty = exposure_classes(d, s, model.m)
    try:

        def act(state, A):
            z = state[:s]
            return _exact_action_probs(policy, model, z, A)

        mass = {(0,) * width: Fraction(1)}
        for _ in range(ell):
            mass = _law_step(mass, classes, p_empty, act, s, reduced, d)
        return TerminalLaw(mass=mass, depth=ell, reduced=reduced, exact=True)
    except ExactnessError:
        classes_f = [(A, float(p)) for A, p in classes]

        def act_f(state, A):
            z = state[:s]
            return _float_action_probs(policy, model, z, A)

        mass = {(0,) * width: 1.0}
        for _ in range(ell):
            mass = _law_step(mass, classes_f, float(p_empty), act_f, s, reduced, d)
        return TerminalLaw(mass=mass, depth=ell, reduced=reduced, exact=False)


# ---------------------------------------------------------------------------
# ensemble objective


@dataclass
class EnsembleObjective:
    """Terminal-law criterion (1/B) E[Phi] + ((B-1)/B) E[Psi(N, N')]."""

    phi: object
    psi: object
    B: int
    symmetric: bool = True

    def __post_init__(self):
        if self.B < 1:
            raise ValueError("tree count B must be >= 1")


def default_objective(model: ModelConfig, ell: int, B: int, n0: int | None = None) -> EnsembleObjective:
    """The forest-risk objective for the linear midpoint model.

    Phi(n)      = sum_j beta_j^2 4^(-n_j)                     (single tree)
    Psi(n, n')  = sum_j beta_j^2 4^(-max(n_j, n'_j))
                  + sigma0_sq (2^ell / n0) 2^(-||n - n'||_1 / 2)

    With sigma0_sq = 0 both functions ignore noise coordinates, so reduced
    terminal laws may be used.
    """
    s = model.s
    betas = [Fraction(b) if isinstance(b, Rational) else b for b in model.beta]
    noisy = model.sigma0_sq != 0
    if noisy and n0 is None:
        raise ValueError("n0 is required when sigma0_sq > 0")
    if noisy:
        sig = model.sigma0_sq
        scale = (Fraction(2**ell, n0) if isinstance(sig, Rational) else 2.0**ell / n0) * sig

    def phi(n):
        return sum(b * b / Fraction(4) ** n[j] for j, b in enumerate(betas))

    def psi(n, np_):
        val = sum(b * b / Fraction(4) ** max(n[j], np_[j]) for j, b in enumerate(betas))
        if noisy:
            l1 = sum(abs(a - b_) for a, b_ in zip(n, np_))
            if l1 % 2 == 0:
                val += scale / Fraction(2) ** (l1 // 2)
            else:
                val += scale * 2.0 ** (-l1 / 2)
        return val

    return EnsembleObjective(phi=phi, psi=psi, B=B, symmetric=True)


def objective_value(law: TerminalLaw, objective: EnsembleObjective):
    """Exact value of the ensemble criterion at a terminal law."""
    support = list(law.mass.items())
    if len(support) ** 2 > 4_000_000:
        raise ValueError("support too large for the quadratic term")
    B = objective.B
    lin = sum(p * objective.phi(n) for n, p in support)
    if B == 1:
        return lin
    quad = 0
    for n, p in support:
        for n2, p2 in support:
            quad += p * p2 * objective.psi(n, n2)
    return Fraction(1, B) * lin + Fraction(B - 1, B) * quad if law.exact else lin / B + (B - 1) / B * quad


def marginal_cost(law: TerminalLaw, objective: EnsembleObjective):
    """First-variation cost of adding terminal mass at a state.

    Gamma(n) = (1/B) Phi(n) + ((B-1)/B) * sum_{n'} [Psi(n,n') + Psi(n',n)] law(n').
    Returned as a memoized callable.
    """
    B = objective.B
    support = list(law.mass.items())
    cache: dict = {}

    def gamma(n):
        n = tuple(n)
        if n in cache:
            return cache[n]
        cross = 0
        for n2, p2 in support:
            cross += p2 * (objective.psi(n, n2) + objective.psi(n2, n))
        if law.exact:
            val = Fraction(1, B) * objective.phi(n) + Fraction(B - 1, B) * cross
        else:
            val = objective.phi(n) / B + (B - 1) / B * cross
        cache[n] = val
        return val

    return gamma


def psi_kernel_eigenvalues(law: TerminalLaw, objective: EnsembleObjective) -> np.ndarray:
    """Eigenvalues of the symmetrized pair kernel on zero-sum directions.

    Builds Q[n, n'] = (Psi(n,n') + Psi(n',n)) / 2 over the law's support and
    projects onto the subspace of signed measures with zero total mass (the
    directions along which laws can move).  Nonnegative spectrum there is a
    sufficient surrogate for convexity of the ensemble objective; the true
    feasible span is a subset, so negative values are only inconclusive.
    """
    states = law.support()
    k = len(states)
    Q = np.array(
        [
            [float(objective.psi(a, b) + objective.psi(b, a)) / 2 for b in states]
            for a in states
        ]
    )
    P = np.eye(k) - np.ones((k, k)) / k
    return np.linalg.eigvalsh(P @ Q @ P)


# ---------------------------------------------------------------------------
# Bellman backward recursion


def _states_at_depth(t: int, width: int, slack: bool):
    """Count states reachable at depth t: compositions of t (plus smaller
    totals when noninformative depths are possible in reduced form)."""
    totals = range(t + 1) if slack else [t]
    for total in totals:
        for cuts in itertools.combinations(range(total + width - 1), width - 1):
            prev = -1
            parts = []
            for c in cuts:
                parts.append(c - prev - 1)
                prev = c
            parts.append(total + width - 2 - prev)
            yield tuple(parts)


def _noninf_min_weights(d: int, s: int, m: int):
    """P(best exposed noise coordinate is the i-th ranked), i = 0..d-s-1."""
    total = comb(d - s, m)
    return [Fraction(comb(d - s - 1 - i, m - 1), total) for i in range(d - s)]


@dataclass
class BellmanTable:
    """Optimal cost-to-go V_t(state) for t = 0..ell."""

    values: list
    reduced: bool
    exact: bool
    ell: int

    def value(self, t: int, state):
        return self.values[t][tuple(state)]

    def root_value(self):
        return self.values[0][min(self.values[0])]


def bellman_backward(
    model: ModelConfig,
    h,
    ell: int,
    reduced: bool = True,
    max_states: int = MAX_STATES,
) -> BellmanTable:
    """Exact backward induction for the terminal cost h over all
    informative-respecting policies.

    V_ell = h; V_t(n) = sum over exposure classes of the class probability
    times the minimal successor value within the class.
    """
    d, s, m = model.d, model.s, model.m
    width = s if reduced else d
    classes, p_empty = exposure_classes(d, s, m)
    slack = p_empty > 0
    if reduced:
        n_states = comb(ell + width, width) if slack else comb(ell + width - 1, width - 1)
    else:
        n_states = comb(ell + d - 1, d - 1)
    if n_states > max_states:
        raise ValueError(f"state space of size {n_states} exceeds limit {max_states}")
    min_weights = None if reduced else _noninf_min_weights(d, s, m)

    terminal = {st: h(st) for st in _states_at_depth(ell, width, slack and reduced)}
    exact = all(isinstance(v, Rational) for v in terminal.values())
    values = [terminal]
    for t in range(ell - 1, -1, -1):
        nxt = values[0]
        cur = {}
        for state in _states_at_depth(t, width, slack and reduced):
            total = 0
            for A, p_class in classes:
                best = None
                for j in A:
                    new = list(state)
                    new[j] += 1
                    v = nxt[tuple(new)]
                    if best is None or v < best:
                        best = v
                total += p_class * best
            if p_empty:
                if reduced:
                    total += p_empty * nxt[state]
                else:
                    succ = []
                    for j in range(s, d):
                        new = list(state)
                        new[j] += 1
                        succ.append(nxt[tuple(new)])
                    succ.sort()
                    total += p_empty * sum(w * v for w, v in zip(min_weights, succ))
            cur[state] = total
        values.insert(0, cur)
    return BellmanTable(values=values, reduced=reduced, exact=exact, ell=ell)


# ---------------------------------------------------------------------------
# certificate scan


@dataclass(frozen=True)
class CertificateViolation:
    """A reachable event where the policy uses a non-Bellman-minimizing action."""

    depth: int
    state: tuple
    exposure: tuple
    action: int
    better_action: int
    margin: object  # V(state + e_action) - V(state + e_better), > 0


def certificate_scan(
    model: ModelConfig,
    policy: PolicySpec,
    objective: EnsembleObjective,
    ell: int,
    max_states: int = MAX_STATES,
) -> list:
    """Scan every reachable (state, exposure) event of the policy for actions
    whose marginal continuation value is beaten by a feasible alternative.

    An empty list certifies nothing: the test is one-directional.
    """
    law = terminal_law_exact(model, policy, ell, max_states=max_states)
    gamma = marginal_cost(law, objective)
    table = bellman_backward(model, gamma, ell, reduced=law.reduced, max_states=max_states)
    classes, p_empty = exposure_classes(model.d, model.s, model.m)
    s = model.s
    width = s if law.reduced else model.d

    # forward supports under the policy itself
    if law.exact:
        support = {(0,) * width: Fraction(1)}
        act = lambda state, A: _exact_action_probs(policy, model, state[:s], A)
        classes_use, p_empty_use = classes, p_empty
    else:
        support = {(0,) * width: 1.0}
        act = lambda state, A: _float_action_probs(policy, model, state[:s], A)
        classes_use, p_empty_use = [(A, float(p)) for A, p in classes], float(p_empty)

    tol = 0 if law.exact else 1e-12
    violations = []
    for t in range(ell):
        nxt_values = table.values[t + 1]
        for state in sorted(support):
            for A, _ in classes_use:
                probs = act(state, A)
                succ = {}
                for j in A:
                    new = list(state)
                    new[j] += 1
                    succ[j] = nxt_values[tuple(new)]
                vmin = min(succ.values())
                best_j = min(j for j, v in succ.items() if v <= vmin + tol)
                for j, pj in probs.items():
                    if pj > 0 and succ[j] > vmin + tol:
                        violations.append(
                            CertificateViolation(
                                depth=t,
                                state=tuple(state),
                                exposure=tuple(A),
                                action=j,
                                better_action=best_j,
                                margin=succ[j] - vmin,
                            )
                        )
        support = _law_step(support, classes_use, p_empty_use, act, s, law.reduced, model.d)
    return violations


# ---------------------------------------------------------------------------
# the closed-form nonoptimality instance


@dataclass
class CounterexampleReport:
    B: int
    epsilon: Fraction
    law: TerminalLaw
    gamma_gap: Fraction  # Gamma(a) - Gamma(b), a = (2,0), b = (1,1)
    p_event: Fraction  # P(first informative split hit coordinate 0, both exposed next)
    theta: Fraction  # epsilon * p_event
    quadratic_coeff: Fraction  # Psi(a,a) - 2 Psi(a,b) + Psi(b,b)
    delta_j_expansion: Fraction
    delta_j_direct: Fraction
    improves: bool
    epsilon_critical: Fraction | None
    violations: list


def reproduce_counterexample(B: int, epsilon) -> CounterexampleReport:
    """Exact work-through of the greedy nonoptimality instance.

    Configuration: d=6, two informative coordinates with unit coefficients,
    masks of size 4, depth 2, no noise.  The perturbed policy flips the
    greedy choice with probability epsilon on the event E = {first
    informative split hit coordinate 0, next mask exposes both informative
    coordinates}; the induced law moves theta = epsilon * P(E) of mass from
    b = (1,1) to a = (2,0), and

        J(perturbed) - J(greedy) =
            theta * (Gamma(a) - Gamma(b))
            + theta^2 * ((B-1)/B) * (Psi(a,a) - 2 Psi(a,b) + Psi(b,b)),

    evaluated here in exact rationals and cross-checked against a direct
    objective evaluation of the perturbed law.
    """
    if B < 2:
        raise ValueError("need B >= 2")
    epsilon = Fraction(epsilon)
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    model = ModelConfig(d=6, s=2, m=4, beta=(1, 1), sigma0_sq=0)
    policy = PolicySpec.greedy()
    ell = 2
    objective = default_objective(model, ell, B)
    law = terminal_law_exact(model, policy, ell)
    gamma = marginal_cost(law, objective)
    a, b = (2, 0), (1, 1)
    gamma_gap = gamma(a) - gamma(b)

    law1 = terminal_law_exact(model, policy, 1)
    classes, _ = exposure_classes(model.d, model.s, model.m)
    p_both = dict(classes)[(0, 1)]
    p_event = law1.mass[(1, 0)] * p_both
    theta = epsilon * p_event

    psi = objective.psi
    quad_coeff = psi(a, a) - 2 * psi(a, b) + psi(b, b)
    delta_exp = theta * gamma_gap + theta**2 * Fraction(B - 1, B) * quad_coeff

    perturbed = dict(law.mass)
    perturbed[a] = perturbed.get(a, Fraction(0)) + theta
    perturbed[b] = perturbed[b] - theta
    law_eps = TerminalLaw(mass=perturbed, depth=ell, reduced=True, exact=True)
    delta_direct = objective_value(law_eps, objective) - objective_value(law, objective)

    eps_crit = None
    if gamma_gap < 0:
        theta_crit = -gamma_gap / (Fraction(B - 1, B) * quad_coeff)
        eps_crit = theta_crit / p_event

    violations = certificate_scan(model, policy, objective, ell)
    return CounterexampleReport(
        B=B,
        epsilon=epsilon,
        law=law,
        gamma_gap=gamma_gap,
        p_event=p_event,
        theta=theta,
        quadratic_coeff=quad_coeff,
        delta_j_expansion=delta_exp,
        delta_j_direct=delta_direct,
        improves=delta_exp < 0,
        epsilon_critical=eps_crit,
        violations=violations,
    )


# ---------------------------------------------------------------------------
# brute-force policy search


@dataclass
class SearchResult:
    best_value: object
    best_policy: dict  # (depth, state, exposure) -> action
    policies_searched: int
    greedy_value: object
    heuristic: bool = True  # quadratic objectives may prefer randomized policies


def _reachable_sets(model: ModelConfig, ell: int):
    """Forward-reachable informative states per depth under any policy."""
    _, p_empty = exposure_classes(model.d, model.s, model.m)
    reach = [{(0,) * model.s}]
    for _ in range(ell):
        cur = reach[-1]
        nxt = set(cur) if p_empty > 0 else set()
        for z in cur:
            for j in range(model.s):
                new = list(z)
                new[j] += 1
                nxt.add(tuple(new))
        reach.append(nxt)
    return reach


def brute_force_policy_search(
    model: ModelConfig,
    objective: EnsembleObjective,
    ell: int,
    max_policies: int = 1_000_000,
) -> SearchResult:
    """Enumerate deterministic count-state policies and minimize the objective.

    Works on the informative-reduced representation, so the objective must
    ignore noise coordinates (noiseless models).  For B > 1 the objective is
    quadratic in the law and a randomized policy could in principle do
    better; the result is flagged as a heuristic oracle accordingly.
    """
    if model.sigma0_sq != 0:
        raise ValueError("brute-force search requires a noiseless model")
    classes, p_empty = exposure_classes(model.d, model.s, model.m)
    reach = _reachable_sets(model, ell)
    choice_points = []
    for t in range(ell):
        for z in sorted(reach[t]):
            for A, _ in classes:
                if len(A) >= 2:
                    choice_points.append((t, z, A))
    n_policies = 1
    for _, _, A in choice_points:
        n_policies *= len(A)
        if n_policies > max_policies:
            raise ValueError(f"more than {max_policies} deterministic policies")

    def law_for(assignment: dict) -> TerminalLaw:
        mass = {(0,) * model.s: Fraction(1)}
        for t in range(ell):
            nxt: dict = {}

            def add(state, p):
                nxt[state] = nxt.get(state, 0) + p

            for z, prob in mass.items():
                if p_empty:
                    add(z, prob * p_empty)
                for A, p_class in classes:
                    if len(A) == 1:
                        j = A[0]
                    else:
                        j = assignment[(t, z, A)]
                    new = list(z)
                    new[j] += 1
                    add(tuple(new), prob * p_class)
            mass = nxt
        return TerminalLaw(mass=mass, depth=ell, reduced=True, exact=True)

    best_value = None
    best_assignment = None
    searched = 0
    options = [list(A) for _, _, A in choice_points]
    for combo in itertools.product(*options) if choice_points else [()]:
        assignment = dict(zip(choice_points, combo))
        val = objective_value(law_for(assignment), objective)
        searched += 1
        if best_value is None or val < best_value:
            best_value = val
            best_assignment = assignment
    greedy_value = objective_value(
        terminal_law_exact(model, PolicySpec.greedy(), ell), objective
    )
    return SearchResult(
        best_value=best_value,
        best_policy={k: v for k, v in (best_assignment or {}).items()},
        policies_searched=searched,
        greedy_value=greedy_value,
        heuristic=objective.B > 1,
    )
