import numpy as np
import pytest

from osdrl import (
    DistributionCollection,
    Policy,
    bellman_eval,
    bellman_opt,
    cramer_project,
    dirac,
    distr_bellman_eval,
    distr_bellman_opt,
    greedy_policy,
    make_toy_mdp,
    mixture,
    os_distr_eval,
    os_distr_opt,
    projected,
    stochastically_dominates,
    sup_wasserstein,
    wasserstein,
)
from osdrl.distributions import AtomicDistribution
from osdrl.mdp import TabularMdp
from osdrl.operators import random_atomic, random_collection, random_mdp, random_policy


def self_loop_mdp(reward=1.0, discount=0.5):
    kernel = np.ones((1, 1, 1))
    return TabularMdp(kernel=kernel, reward=np.full((1, 1, 1), reward), discount=discount)


def all_dirac(mdp, z=0.0):
    return DistributionCollection.constant(mdp.n_states, mdp.n_actions, dirac(z))


class TestScalarOperators:
    def test_eval_one_step_reward(self):
        mdp = self_loop_mdp()
        pi = Policy.uniform(1, 1)
        out = bellman_eval(np.zeros((1, 1)), mdp, pi)
        assert out[0, 0] == 1.0

    def test_eval_fixed_point_on_toy(self):
        # oracle: direct linear solve of the policy's Bellman system
        mdp = make_toy_mdp()
        pi = Policy.uniform(2, 2)
        n = 4
        r = (mdp.kernel * mdp.reward).sum(axis=2).reshape(n)
        m = np.zeros((n, n))
        for x in range(2):
            for a in range(2):
                for xn in range(2):
                    for an in range(2):
                        m[x * 2 + a, xn * 2 + an] = mdp.kernel[x, a, xn] * pi.probs[xn, an]
        q_pi = np.linalg.solve(np.eye(n) - mdp.discount * m, r).reshape(2, 2)
        assert np.max(np.abs(bellman_eval(q_pi, mdp, pi) - q_pi)) < 1e-10

    def test_opt_geometric_series(self):
        mdp = self_loop_mdp()
        q = np.full((1, 1), 2.0)
        assert np.allclose(bellman_opt(q, mdp), q)

    def test_opt_fixed_point_on_toy(self):
        mdp = make_toy_mdp()
        q_star = np.array([[2.0, 2.0], [0.0, 0.0]])
        assert np.max(np.abs(bellman_opt(q_star, mdp) - q_star)) < 1e-12

    def test_contraction_on_random_inputs(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            mdp = random_mdp(rng)
            pi = random_policy(rng, mdp.n_states, mdp.n_actions)
            q1 = rng.uniform(-5, 5, size=(mdp.n_states, mdp.n_actions))
            q2 = rng.uniform(-5, 5, size=(mdp.n_states, mdp.n_actions))
            gap = np.max(np.abs(q1 - q2))
            assert np.max(np.abs(bellman_eval(q1, mdp, pi) - bellman_eval(q2, mdp, pi))) <= (
                mdp.discount * gap + 1e-12
            )
            assert np.max(np.abs(bellman_opt(q1, mdp) - bellman_opt(q2, mdp))) <= (
                mdp.discount * gap + 1e-12
            )


class TestGreedyPolicy:
    def test_lowest_index(self):
        pi = greedy_policy(np.array([[1.0, 1.0], [0.0, 2.0]]), "lowest")
        assert pi.probs.tolist() == [[1.0, 0.0], [0.0, 1.0]]

    def test_uniform_mix(self):
        pi = greedy_policy(np.array([[1.0, 1.0]]), "uniform")
        assert pi.probs.tolist() == [[0.5, 0.5]]

    def test_random_needs_rng(self):
        with pytest.raises(ValueError, match="rng"):
            greedy_policy(np.array([[1.0, 1.0]]), "random")

    def test_rejects_unknown_rule(self):
        with pytest.raises(ValueError):
            greedy_policy(np.zeros((1, 2)), "first")


class TestFullDistributionalOperators:
    def test_all_dirac_toy_entry(self):
        mdp = make_toy_mdp()
        out = distr_bellman_eval(all_dirac(mdp), mdp, Policy.uniform(2, 2))
        assert out[0, 0].atoms.tolist() == [2.0]
        assert out[0, 0].weights.tolist() == [1.0]

    def test_atom_count_bound(self):
        rng = np.random.default_rng(1)
        mdp = random_mdp(rng, n_states=3, n_actions=2)
        mu = random_collection(rng, 3, 2, max_atoms=3)
        pi = random_policy(rng, 3, 2)
        out = distr_bellman_eval(mu, mdp, pi)
        k_max = max(mu[x, a].atoms.size for x in range(3) for a in range(2))
        for x in range(3):
            for a in range(2):
                assert out[x, a].atoms.size <= 3 * 2 * k_max

    def test_mean_commutation_eval(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            mdp = random_mdp(rng)
            mu = random_collection(rng, mdp.n_states, mdp.n_actions)
            pi = random_policy(rng, mdp.n_states, mdp.n_actions)
            out = distr_bellman_eval(mu, mdp, pi)
            expected = bellman_eval(mu.means(), mdp, pi)
            assert np.max(np.abs(out.means() - expected)) <= 1e-10

    def test_opt_equals_eval_under_greedy_without_ties(self):
        rng = np.random.default_rng(3)
        mdp = random_mdp(rng)
        mu = random_collection(rng, mdp.n_states, mdp.n_actions)
        pi_greedy = greedy_policy(mu.means(), "lowest")
        out_opt = distr_bellman_opt(mu, mdp)
        out_eval = distr_bellman_eval(mu, mdp, pi_greedy)
        assert sup_wasserstein(out_opt, out_eval, 1.0) == 0.0

    def test_opt_mean_commutation(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            mdp = random_mdp(rng)
            mu = random_collection(rng, mdp.n_states, mdp.n_actions)
            out = distr_bellman_opt(mu, mdp, tie_break="lowest")
            assert np.max(np.abs(out.means() - bellman_opt(mu.means(), mdp))) <= 1e-10

    def test_tie_break_changes_output_on_toy(self):
        # exact tie at x1: both branches are produced and differ
        mdp = make_toy_mdp()
        entries = [[dirac(2.0), mixture([(0.5, dirac(0.0)), (0.5, dirac(4.0))])],
                   [dirac(0.0), dirac(0.0)]]
        mu = DistributionCollection(entries)
        assert mu.means()[0, 0] == mu.means()[0, 1] == 2.0
        lowest = distr_bellman_opt(mu, mdp, tie_break="lowest")
        uniform = distr_bellman_opt(mu, mdp, tie_break="uniform")
        assert sup_wasserstein(lowest, uniform, 1.0) > 0.01

    def test_full_eval_contracts(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            mdp = random_mdp(rng)
            mu1 = random_collection(rng, mdp.n_states, mdp.n_actions)
            mu2 = random_collection(rng, mdp.n_states, mdp.n_actions)
            pi = random_policy(rng, mdp.n_states, mdp.n_actions)
            for p in (1.0, 2.0):
                before = sup_wasserstein(mu1, mu2, p)
                after = sup_wasserstein(
                    distr_bellman_eval(mu1, mdp, pi), distr_bellman_eval(mu2, mdp, pi), p
                )
                assert after <= mdp.discount * before + 1e-10


class TestOneStepOperators:
    def test_atom_count_at_most_n_states(self):
        mdp = make_toy_mdp()
        rng = np.random.default_rng(6)
        mu = random_collection(rng, 2, 2)
        for out in (os_distr_eval(mu, mdp, Policy.uniform(2, 2)), os_distr_opt(mu, mdp)):
            for x in range(2):
                for a in range(2):
                    assert out[x, a].atoms.size <= 2

    def test_zero_means_give_reward_mixture(self):
        rng = np.random.default_rng(7)
        mdp = random_mdp(rng)
        mu = all_dirac(mdp)
        out = os_distr_opt(mu, mdp)
        for x in range(mdp.n_states):
            for a in range(mdp.n_actions):
                row = mdp.kernel[x, a]
                keep = row > 0
                expected = AtomicDistribution.from_points(mdp.reward[x, a][keep], row[keep])
                assert wasserstein(out[x, a], expected, 1.0) <= 1e-12

    def test_matches_direct_formula_on_categorical_input(self):
        # independent evaluation of the finite-support formula with
        # Q(x', a') the categorical means
        rng = np.random.default_rng(8)
        mdp = random_mdp(rng, n_states=3, n_actions=2)
        grid = np.array([-2.0, 0.0, 1.0, 3.0])
        mu = DistributionCollection.build(
            3, 2, lambda x, a: cramer_project(random_atomic(rng), grid)
        )
        pi = random_policy(rng, 3, 2)
        out = os_distr_eval(mu, mdp, pi)
        q = np.array([[mu[x, a].mean() for a in range(2)] for x in range(3)])
        v = (pi.probs * q).sum(axis=1)
        for x in range(3):
            for a in range(2):
                targets = [
                    mdp.reward[x, a, xn] + mdp.discount * v[xn]
                    for xn in range(3)
                    if mdp.kernel[x, a, xn] > 0
                ]
                weights = [p for p in mdp.kernel[x, a] if p > 0]
                expected = AtomicDistribution.from_points(targets, weights)
                assert wasserstein(out[x, a], expected, 1.0) <= 1e-12

    def test_opt_invariant_to_action_relabeling(self):
        rng = np.random.default_rng(9)
        mdp = random_mdp(rng, n_states=2, n_actions=2)
        mu = random_collection(rng, 2, 2)
        swapped = DistributionCollection.build(2, 2, lambda x, a: mu[x, 1 - a])
        assert sup_wasserstein(os_distr_opt(mu, mdp), os_distr_opt(swapped, mdp), 1.0) == 0.0

    def test_contraction(self):
        rng = np.random.default_rng(10)
        for _ in range(100):
            mdp = random_mdp(rng)
            mu1 = random_collection(rng, mdp.n_states, mdp.n_actions)
            mu2 = random_collection(rng, mdp.n_states, mdp.n_actions)
            pi = random_policy(rng, mdp.n_states, mdp.n_actions)
            for p in (1.0, 2.0, 4.0):
                before = sup_wasserstein(mu1, mu2, p)
                assert sup_wasserstein(os_distr_opt(mu1, mdp), os_distr_opt(mu2, mdp), p) <= (
                    mdp.discount * before + 1e-10
                )
                assert sup_wasserstein(
                    os_distr_eval(mu1, mdp, pi), os_distr_eval(mu2, mdp, pi), p
                ) <= mdp.discount * before + 1e-10

    def test_monotone_in_dominance(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            mdp = random_mdp(rng)
            mu1 = random_collection(rng, mdp.n_states, mdp.n_actions)

            def shifted(x, a):
                base = mu1[x, a]
                shifts = rng.uniform(0.0, 2.0, size=base.atoms.size)
                return AtomicDistribution.from_points(base.atoms + shifts, base.weights)

            mu2 = DistributionCollection.build(mdp.n_states, mdp.n_actions, shifted)
            out1, out2 = os_distr_opt(mu1, mdp), os_distr_opt(mu2, mdp)
            for x in range(mdp.n_states):
                for a in range(mdp.n_actions):
                    assert stochastically_dominates(out2[x, a], out1[x, a])


class TestProjectedOperators:
    GRID = np.array([0.0, 1.9, 2.1, 10.0])

    def test_projected_output_is_normalized_categorical(self):
        mdp = make_toy_mdp()
        op = projected(lambda m: os_distr_opt(m, mdp), self.GRID)
        out = op(all_dirac(mdp, z=0.0))
        for _, dist in out:
            assert abs(dist.probs.sum() - 1.0) <= 1e-12

    def test_projected_contraction_w1(self):
        rng = np.random.default_rng(12)
        for _ in range(100):
            mdp = random_mdp(rng)
            grid = np.sort(rng.uniform(-3, 3, size=4))
            if np.any(np.diff(grid) < 1e-3):
                continue
            op = projected(lambda m: os_distr_opt(m, mdp), grid)
            mu1 = random_collection(rng, mdp.n_states, mdp.n_actions)
            mu2 = random_collection(rng, mdp.n_states, mdp.n_actions)
            assert sup_wasserstein(op(mu1), op(mu2), 1.0) <= (
                mdp.discount * sup_wasserstein(mu1, mu2, 1.0) + 1e-10
            )

    def test_projected_iteration_accepts_own_output(self):
        mdp = make_toy_mdp()
        op = projected(lambda m: os_distr_opt(m, mdp), self.GRID)
        mu = op(all_dirac(mdp))
        again = op(mu)  # categorical input round-trips through the operator
        assert again[0, 0].probs.sum() == pytest.approx(1.0, abs=1e-12)
