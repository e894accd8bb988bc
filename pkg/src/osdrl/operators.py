"""Bellman-type maps: scalar operators, full distributional operators, and
their one-step variants, plus the categorical-projected compositions.

Q-functions are plain numpy arrays of shape (n_states, n_actions). All
operators are pure functions of their inputs.
"""

from __future__ import annotations

import numpy as np

from .distributions import (
    AtomicDistribution,
    DistributionCollection,
    _as_atomic,
    cramer_project,
    mixture,
    pushforward_affine,
)
from .mdp import Policy, TabularMdp

TIE_BREAKS = ("lowest", "uniform", "random")


def _check_q(q: np.ndarray, mdp: TabularMdp) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape != (mdp.n_states, mdp.n_actions):
        raise ValueError(f"Q shape {q.shape} does not match MDP {(mdp.n_states, mdp.n_actions)}")
    if not np.all(np.isfinite(q)):
        raise ValueError("Q entries must be finite")
    return q


def bellman_eval(q: np.ndarray, mdp: TabularMdp, policy: Policy) -> np.ndarray:
    """One application of the policy-evaluation Bellman operator."""
    q = _check_q(q, mdp)
    v = (policy.probs * q).sum(axis=1)
    return (mdp.kernel * (mdp.reward + mdp.discount * v[None, None, :])).sum(axis=2)


def bellman_opt(q: np.ndarray, mdp: TabularMdp) -> np.ndarray:
    """One application of the Bellman optimality operator."""
    q = _check_q(q, mdp)
    v = q.max(axis=1)
    return (mdp.kernel * (mdp.reward + mdp.discount * v[None, None, :])).sum(axis=2)


def greedy_policy(q: np.ndarray, tie_break: str = "lowest", rng=None) -> Policy:
    """Greedy policy w.r.t. Q with an explicit tie-breaking rule.

    "lowest" picks the smallest-index maximizer, "uniform" mixes equally over
    all maximizers, "random" samples one maximizer per state from rng.
    """
    if tie_break not in TIE_BREAKS:
        raise ValueError(f"tie_break must be one of {TIE_BREAKS}, got {tie_break!r}")
    q = np.asarray(q, dtype=float)
    probs = np.zeros_like(q)
    for x in range(q.shape[0]):
        winners = np.flatnonzero(q[x] == q[x].max())
        if tie_break == "lowest":
            probs[x, winners[0]] = 1.0
        elif tie_break == "uniform":
            probs[x, winners] = 1.0 / winners.size
        else:
            if rng is None:
                raise ValueError("tie_break='random' requires an rng")
            probs[x, rng.integers(winners.size)] = 1.0
    return Policy(probs)


def distr_bellman_eval(
    mu: DistributionCollection, mdp: TabularMdp, policy: Policy
) -> DistributionCollection:
    """Full distributional Bellman operator for a fixed policy.

    Entry (x, a) becomes the mixture over successor pairs (x', a') weighted
    by P(x'|x,a) pi(a'|x') of the pushforwards z -> r(x,a,x') + gamma * z of
    mu[x', a']. Atom counts grow by a factor of up to n_states * n_actions.
    """
    gamma = mdp.discount

    def entry(x, a):
        comps = []
        for x_next in range(mdp.n_states):
            p = mdp.kernel[x, a, x_next]
            if p == 0.0:
                continue
            r = mdp.reward[x, a, x_next]
            for a_next in range(mdp.n_actions):
                w = p * policy.probs[x_next, a_next]
                if w == 0.0:
                    continue
                comps.append((w, pushforward_affine(_as_atomic(mu[x_next, a_next]), r, gamma)))
        return mixture(comps)

    return DistributionCollection.build(mdp.n_states, mdp.n_actions, entry)


def distr_bellman_opt(
    mu: DistributionCollection, mdp: TabularMdp, tie_break: str = "lowest", rng=None
) -> DistributionCollection:
    """Full distributional optimality operator: greedy policy from the
    entrywise means, then the evaluation operator under that policy."""
    pi_greedy = greedy_policy(mu.means(), tie_break=tie_break, rng=rng)
    return distr_bellman_eval(mu, mdp, pi_greedy)


def _one_step_collection(mdp: TabularMdp, v: np.ndarray) -> DistributionCollection:
    # Dirac mixture over successors at r(x,a,x') + gamma * v(x'); coincident
    # targets merge, so entries carry at most n_states atoms.
    targets = mdp.reward + mdp.discount * v[None, None, :]

    def entry(x, a):
        row = mdp.kernel[x, a]
        keep = row > 0.0
        return AtomicDistribution.from_points(targets[x, a][keep], row[keep])

    return DistributionCollection.build(mdp.n_states, mdp.n_actions, entry)


def os_distr_eval(
    mu: DistributionCollection, mdp: TabularMdp, policy: Policy
) -> DistributionCollection:
    """One-step distributional Bellman operator for a fixed policy."""
    v = (policy.probs * mu.means()).sum(axis=1)
    return _one_step_collection(mdp, v)


def os_distr_opt(mu: DistributionCollection, mdp: TabularMdp) -> DistributionCollection:
    """One-step distributional optimality operator; tie-invariant because it
    only uses the max of the entrywise means."""
    v = mu.means().max(axis=1)
    return _one_step_collection(mdp, v)


def projected(op, grid):
    """Compose an operator mu -> mu' with the entrywise categorical projection."""
    grid = np.asarray(grid, dtype=float)

    def apply(mu: DistributionCollection) -> DistributionCollection:
        return op(mu).map(lambda d: cramer_project(d, grid))

    return apply


# ---------------------------------------------------------------------------
# Seeded random instances for the property suites: Dirichlet(1, ..., 1)
# kernel rows, rewards uniform on [-1, 1], discount drawn from {0.5, 0.9}.


def random_mdp(
    rng: np.random.Generator,
    n_states: int = 3,
    n_actions: int = 2,
    discounts=(0.5, 0.9),
) -> TabularMdp:
    kernel = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    reward = rng.uniform(-1.0, 1.0, size=(n_states, n_actions, n_states))
    return TabularMdp(kernel=kernel, reward=reward, discount=float(rng.choice(discounts)))


def random_policy(rng: np.random.Generator, n_states: int, n_actions: int) -> Policy:
    return Policy(rng.dirichlet(np.ones(n_actions), size=n_states))


def random_atomic(
    rng: np.random.Generator, max_atoms: int = 4, low: float = -2.0, high: float = 2.0
) -> AtomicDistribution:
    n = int(rng.integers(1, max_atoms + 1))
    atoms = rng.uniform(low, high, size=n)
    return AtomicDistribution.from_points(atoms, rng.dirichlet(np.ones(n)))


def random_collection(
    rng: np.random.Generator, n_states: int, n_actions: int, **kwargs
) -> DistributionCollection:
    return DistributionCollection.build(
        n_states, n_actions, lambda x, a: random_atomic(rng, **kwargs)
    )


def random_grid(
    rng: np.random.Generator, max_points: int = 8, min_gap: float = 0.05
) -> np.ndarray:
    """Strictly increasing support with a guaranteed minimum spacing."""
    k = int(rng.integers(2, max_points + 1))
    start = rng.uniform(-10.0, 5.0)
    gaps = rng.uniform(min_gap, 3.0, size=k - 1)
    return start + np.concatenate(([0.0], np.cumsum(gaps)))
