import itertools
import math
from fractions import Fraction
from functools import lru_cache

import numpy as np
import pytest

from splitalloc.bellman import (
    bellman_backward,
    brute_force_policy_search,
    certificate_scan,
    default_objective,
    exposure_classes,
    marginal_cost,
    objective_value,
    psi_kernel_eigenvalues,
    reproduce_counterexample,
    terminal_law_exact,
)
from splitalloc.dynamics import simulate_terminal_counts
from splitalloc.environment import ModelConfig
from splitalloc.policies import PolicySpec

CE = ModelConfig(6, 2, 4, (1, 1))

PAPER_LAW = {
    (0, 0): Fraction(1, 225),
    (1, 0): Fraction(14, 225),
    (0, 1): Fraction(14, 225),
    (2, 0): Fraction(28, 225),
    (0, 2): Fraction(28, 225),
    (1, 1): Fraction(140, 225),
}


def full_mask_dp(model, h, ell):
    """Oracle: Bellman recursion with every mask enumerated explicitly."""
    masks = list(itertools.combinations(range(model.d), model.m))

    @lru_cache(maxsize=None)
    def value(t, state):
        if t == ell:
            return h(state)
        total = Fraction(0)
        for u in masks:
            admissible = [j for j in u if j < model.s] or list(u)
            best = None
            for j in admissible:
                nxt = list(state)
                nxt[j] += 1
                v = value(t + 1, tuple(nxt))
                if best is None or v < best:
                    best = v
            total += Fraction(1, len(masks)) * best
        return total

    return value(0, (0,) * model.d)


class TestExposureClasses:
    def test_probabilities_sum_to_one(self):
        for d, s, m in [(6, 2, 4), (10, 3, 5), (5, 2, 2), (4, 4, 2)]:
            classes, p_empty = exposure_classes(d, s, m)
            assert sum(p for _, p in classes) + p_empty == 1

    def test_counterexample_class_weights(self):
        classes, p_empty = exposure_classes(6, 2, 4)
        weights = dict(classes)
        assert weights[(0, 1)] == Fraction(6, 15)
        assert weights[(0,)] == weights[(1,)] == Fraction(4, 15)
        assert p_empty == Fraction(1, 15)


class TestTerminalLaw:
    def test_depth_zero_point_mass(self):
        law = terminal_law_exact(CE, PolicySpec.greedy(), 0)
        assert law.mass == {(0, 0): Fraction(1)}

    def test_greedy_depth_two_matches_closed_form(self):
        law = terminal_law_exact(CE, PolicySpec.greedy(), 2)
        assert law.exact and law.reduced
        assert law.mass == PAPER_LAW

    def test_mass_sums_to_exactly_one(self):
        for policy in [PolicySpec.greedy(), PolicySpec.exploratory(), PolicySpec.mix(Fraction(1, 3)), PolicySpec.score_window(1)]:
            law = terminal_law_exact(CE, policy, 4)
            assert law.total() == 1

    def test_full_state_law_tracks_noise_coordinates(self):
        model = ModelConfig(4, 2, 2, (1, 1), sigma0_sq=Fraction(1, 4))
        law = terminal_law_exact(model, PolicySpec.greedy(), 3)
        assert not law.reduced
        assert law.total() == 1
        assert all(sum(state) == 3 for state in law.mass)

    def test_monte_carlo_cross_check(self):
        law = terminal_law_exact(CE, PolicySpec.greedy(), 2)
        reps = 100_000
        N = simulate_terminal_counts(CE, PolicySpec.greedy(), 2, reps, np.random.default_rng(9))
        for state, p in law.mass.items():
            phat = float(((N[:, 0] == state[0]) & (N[:, 1] == state[1])).mean())
            se = math.sqrt(float(p) * (1 - float(p)) / reps)
            assert abs(phat - float(p)) <= 4 * se

    def test_float_coefficients_demote_to_real_mode(self):
        noisy = ModelConfig(6, 2, 4, (1.0, 1.5))
        law = terminal_law_exact(noisy, PolicySpec.greedy(), 2)
        assert not law.exact
        exact_twin = ModelConfig(6, 2, 4, (1, Fraction(3, 2)))
        ref = terminal_law_exact(exact_twin, PolicySpec.greedy(), 2)
        assert ref.exact
        for state, p in ref.mass.items():
            assert law.mass[state] == pytest.approx(float(p), abs=1e-12)

    def test_state_space_guard(self):
        big = ModelConfig(40, 2, 10, (1, 1), sigma0_sq=1)
        with pytest.raises(ValueError, match="state space"):
            terminal_law_exact(big, PolicySpec.greedy(), 12)


class TestObjective:
    def test_single_tree_reduces_to_phi_mean(self):
        law = terminal_law_exact(CE, PolicySpec.greedy(), 2)
        obj = default_objective(CE, 2, 1)
        expected = sum(p * obj.phi(n) for n, p in law.mass.items())
        assert objective_value(law, obj) == expected

    def test_point_mass_balanced_pair(self):
        from splitalloc.bellman import TerminalLaw

        law = TerminalLaw(mass={(1, 1): Fraction(1)}, depth=2, reduced=True, exact=True)
        for B in (2, 5, 15):
            obj = default_objective(CE, 2, B)
            assert objective_value(law, obj) == Fraction(1, 2)

    def test_linear_in_phi(self):
        law = terminal_law_exact(CE, PolicySpec.greedy(), 2)
        obj1 = default_objective(CE, 2, 3)
        scaled = default_objective(CE, 2, 3)
        scaled.phi = lambda n: 7 * obj1.phi(n)
        base_quad = objective_value(law, default_objective(CE, 2, 3))
        lin = sum(p * obj1.phi(n) for n, p in law.mass.items())
        assert objective_value(law, scaled) == base_quad + Fraction(6, 3) * lin


class TestMarginalCost:
    def test_gap_formula_over_tree_counts(self):
        law = terminal_law_exact(CE, PolicySpec.greedy(), 2)
        a, b = (2, 0), (1, 1)
        for B in range(2, 31):
            gamma = marginal_cost(law, default_objective(CE, 2, B))
            assert gamma(a) - gamma(b) == Fraction(29 - 2 * B, 48 * B)

    def test_sign_flip_at_fifteen(self):
        law = terminal_law_exact(CE, PolicySpec.greedy(), 2)
        gaps = {
            B: marginal_cost(law, default_objective(CE, 2, B))((2, 0))
            - marginal_cost(law, default_objective(CE, 2, B))((1, 1))
            for B in (14, 15)
        }
        assert gaps[14] > 0 > gaps[15]

    def test_symmetric_kernel_shortcut(self):
        # for symmetric Psi, Gamma(n) = Phi(n)/B + (2(B-1)/B) * E[Psi(n, N')]
        law = terminal_law_exact(CE, PolicySpec.greedy(), 2)
        obj = default_objective(CE, 2, 7)
        gamma = marginal_cost(law, obj)
        for state in law.mass:
            direct = Fraction(1, 7) * obj.phi(state) + Fraction(12, 7) * sum(
                p * obj.psi(state, n2) for n2, p in law.mass.items()
            )
            assert gamma(state) == direct


class TestFirstVariation:
    @pytest.mark.parametrize("eps", [Fraction(1, 10), Fraction(1, 100)])
    def test_exact_expansion(self, eps):
        B = 9
        obj = default_objective(CE, 2, B)
        nu = terminal_law_exact(CE, PolicySpec.greedy(), 2)
        nu_t = terminal_law_exact(CE, PolicySpec.exploratory(), 2)
        states = sorted(set(nu.mass) | set(nu_t.mass))
        eta = {n: nu_t.mass.get(n, Fraction(0)) - nu.mass.get(n, Fraction(0)) for n in states}

        from splitalloc.bellman import TerminalLaw

        blend = TerminalLaw(
            mass={n: nu.mass.get(n, Fraction(0)) + eps * eta[n] for n in states},
            depth=2,
            reduced=True,
            exact=True,
        )
        lhs = objective_value(blend, obj) - objective_value(nu, obj)
        gamma = marginal_cost(nu, obj)
        first = sum(eta[n] * gamma(n) for n in states)
        second = sum(
            eta[n] * eta[n2] * obj.psi(n, n2) for n in states for n2 in states
        )
        assert lhs == eps * first + eps**2 * Fraction(B - 1, B) * second


class TestBellmanBackward:
    def test_constant_terminal_cost(self):
        table = bellman_backward(CE, lambda n: Fraction(3, 7), 3)
        for level in table.values:
            assert all(v == Fraction(3, 7) for v in level.values())

    def test_depth_one_hand_enumeration(self):
        obj = default_objective(CE, 1, 1)
        table = bellman_backward(CE, obj.phi, 1)
        classes, p_empty = exposure_classes(6, 2, 4)
        expected = p_empty * obj.phi((0, 0)) + sum(
            p * min(obj.phi(tuple(1 if j == a else 0 for j in range(2))) for a in A)
            for A, p in classes
        )
        assert table.value(0, (0, 0)) == expected

    def test_matches_brute_force_enumeration(self):
        model = ModelConfig(3, 2, 2, (1, 1))
        obj = default_objective(model, 2, 1)
        table = bellman_backward(model, obj.phi, 2)
        search = brute_force_policy_search(model, obj, 2)
        assert table.value(0, (0, 0)) == search.best_value == Fraction(11, 16)

    def test_class_grouping_lossless_reduced(self):
        for model in [ModelConfig(5, 2, 3, (1, 2)), ModelConfig(6, 3, 4, (1, 1, 2))]:
            obj = default_objective(model, 2, 1)
            h_full = lambda n: obj.phi(n)
            oracle = full_mask_dp(model, h_full, 2)
            table = bellman_backward(model, obj.phi, 2, reduced=True)
            assert table.value(0, (0,) * model.s) == oracle

    def test_class_grouping_lossless_full_state(self):
        # a terminal cost that sees noise coordinates forces the full recursion
        model = ModelConfig(5, 2, 3, (1, 1), sigma0_sq=1)

        def h(state):
            return sum(Fraction(1, 2) ** v for v in state)

        oracle = full_mask_dp(model, h, 2)
        table = bellman_backward(model, h, 2, reduced=False)
        assert table.value(0, (0,) * 5) == oracle


class TestCertificateScan:
    def test_violations_at_fifteen_trees(self):
        obj = default_objective(CE, 2, 15)
        violations = certificate_scan(CE, PolicySpec.greedy(), obj, 2)
        keyed = {(v.depth, v.state): v for v in violations}
        v = keyed[(1, (1, 0))]
        assert v.exposure == (0, 1)
        assert v.action == 1 and v.better_action == 0
        assert v.margin == Fraction(1, 720)
        # the mirror-image state violates symmetrically
        assert keyed[(1, (0, 1))].margin == Fraction(1, 720)
        assert len(violations) == 2

    def test_no_violation_at_fourteen_trees(self):
        obj = default_objective(CE, 2, 14)
        assert certificate_scan(CE, PolicySpec.greedy(), obj, 2) == []

    def test_single_tree_objective_collapses_to_phi(self):
        # with B = 1 the pair term has zero weight; greedy balancing is
        # Bellman-consistent for the convex single-tree cost here
        obj = default_objective(CE, 2, 1)
        assert certificate_scan(CE, PolicySpec.greedy(), obj, 2) == []


class TestCounterexampleReport:
    def test_exact_paper_quantities(self):
        rep = reproduce_counterexample(15, Fraction(1, 100))
        assert rep.law.mass == PAPER_LAW
        assert rep.gamma_gap == Fraction(-1, 720)
        assert rep.p_event == Fraction(14, 75)
        assert rep.theta == Fraction(14, 7500)
        assert rep.quadratic_coeff == Fraction(15, 16)
        obj = default_objective(CE, 2, 15)
        assert obj.psi((2, 0), (2, 0)) == Fraction(17, 16)
        assert obj.psi((2, 0), (1, 1)) == Fraction(5, 16)
        assert obj.psi((1, 1), (1, 1)) == Fraction(1, 2)

    def test_expansion_equals_direct_objective_difference(self):
        for B, eps in [(15, Fraction(1, 100)), (15, Fraction(1, 200)), (20, Fraction(1, 50))]:
            rep = reproduce_counterexample(B, eps)
            assert rep.delta_j_expansion == rep.delta_j_direct

    def test_descent_below_critical_epsilon(self):
        rep = reproduce_counterexample(15, Fraction(1, 100))
        assert rep.epsilon_critical == Fraction(5, 588)
        below = reproduce_counterexample(15, Fraction(5, 588) / 2)
        assert below.improves and below.delta_j_direct < 0
        above = reproduce_counterexample(15, Fraction(5, 588) * 2)
        assert not above.improves

    def test_no_improvement_direction_at_fourteen(self):
        rep = reproduce_counterexample(14, Fraction(1, 100))
        assert rep.gamma_gap > 0
        assert rep.epsilon_critical is None
        assert rep.violations == []


class TestPsiKernelSpectrum:
    def test_nonnegative_on_counterexample_support(self):
        # the symmetrized pair kernel of the noiseless objective is positive
        # semidefinite on zero-sum directions over this support (two zeros
        # come from the mass projection and the kernel's rank)
        law = terminal_law_exact(CE, PolicySpec.greedy(), 2)
        vals = psi_kernel_eigenvalues(law, default_objective(CE, 2, 15))
        assert len(vals) == 6
        assert vals.min() >= -1e-12
        assert vals.max() == pytest.approx(1.59958666, abs=1e-6)


class TestBruteForce:
    def test_linear_case_matches_dp_exactly(self):
        model = ModelConfig(3, 2, 2, (1, 1))
        obj = default_objective(model, 2, 1)
        table = bellman_backward(model, obj.phi, 2)
        result = brute_force_policy_search(model, obj, 2)
        assert result.best_value == table.value(0, (0, 0))
        assert not result.heuristic

    def test_quadratic_case_deterministic_policies_lose_to_randomized_greedy(self):
        # with B = 15 the ensemble objective rewards tie-splitting diversity:
        # the best deterministic count-state policy is strictly worse than
        # greedy's uniformly randomized tie-breaking (frozen enumeration values)
        obj = default_objective(CE, 2, 15)
        result = brute_force_policy_search(CE, obj, 2)
        assert result.policies_searched == 16
        assert result.heuristic
        assert result.best_value == Fraction(4964, 10125)
        assert result.greedy_value == Fraction(49151, 101250)
        assert result.best_value > result.greedy_value

    def test_single_informative_coordinate_no_gap(self):
        model = ModelConfig(3, 1, 2, (1,))
        obj = default_objective(model, 2, 5)
        result = brute_force_policy_search(model, obj, 2)
        assert result.best_value == result.greedy_value

    def test_noisy_model_rejected(self):
        model = ModelConfig(3, 2, 2, (1, 1), sigma0_sq=1)
        with pytest.raises(ValueError):
            brute_force_policy_search(model, default_objective(model, 2, 2, n0=10), 2)
