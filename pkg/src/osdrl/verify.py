"""Executable property suites: contraction, fixed points, projection laws,
metric axioms, monotonicity, mean tracking, and the target microbenchmark.

Every property runs a seeded randomized case loop and reports (name, cases,
max_violation, passed) plus a serialized failing case for replay when one
exists. The verify CLI command aggregates these into a machine-readable
report and a process exit code.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .distributions import (
    AtomicDistribution,
    DistributionCollection,
    cramer_project,
    dirac,
    mean,
    sup_wasserstein,
    wasserstein,
)
from .dp import iterate, one_step_fixed_point_eval, one_step_fixed_point_opt, solve_q_pi, solve_q_star
from .learning import LearnerState, StepSizeSchedule, os_cdrl_step, target_microbenchmark
from .mdp import EpisodicEnv, Policy, make_toy_mdp, sample_step
from .operators import (
    bellman_eval,
    bellman_opt,
    distr_bellman_eval,
    distr_bellman_opt,
    os_distr_eval,
    os_distr_opt,
    projected,
    random_atomic,
    random_collection,
    random_grid,
    random_mdp,
    random_policy,
)

TOY_GRID = (0.0, 1.9, 2.1, 10.0)


@dataclass
class PropertyResult:
    name: str
    cases: int
    max_violation: float
    passed: bool
    failing_case: Optional[dict] = None
    details: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        doc = {
            "name": self.name,
            "cases": self.cases,
            "max_violation": self.max_violation,
            "passed": self.passed,
        }
        if self.failing_case is not None:
            doc["failing_case"] = self.failing_case
        if self.details:
            doc["details"] = self.details
        return doc


def _collection_json(mu: DistributionCollection) -> list:
    return [[mu[x, a].to_json() for a in range(mu.n_actions)] for x in range(mu.n_states)]


class _Tracker:
    """Running maximum violation with first-failure capture."""

    def __init__(self, name, tol):
        self.name = name
        self.tol = tol
        self.max_violation = 0.0
        self.cases = 0
        self.failing_case = None

    def record(self, violation, case_fn):
        self.cases += 1
        if violation > self.max_violation:
            self.max_violation = violation
        if violation > self.tol and self.failing_case is None:
            self.failing_case = case_fn()

    def result(self) -> PropertyResult:
        return PropertyResult(
            name=self.name,
            cases=self.cases,
            max_violation=float(self.max_violation),
            passed=bool(self.max_violation <= self.tol),
            failing_case=self.failing_case,
        )


def _near_tie_pair(rng, n_states, n_actions):
    """Two collections a mean-nudge apart, with tied-mean actions of
    different shapes at every state (so the greedy choice is unstable)."""
    span = float(rng.uniform(0.5, 2.0))
    eps = 1e-6

    def spread(x, a):
        if a == 0:
            return AtomicDistribution(atoms=[-span, span], weights=[0.5, 0.5])
        return dirac(0.0)

    def nudged(x, a):
        if a == 0:
            return AtomicDistribution(atoms=[-span, span], weights=[0.5, 0.5])
        return dirac(eps)

    mu1 = DistributionCollection.build(n_states, n_actions, spread)
    mu2 = DistributionCollection.build(n_states, n_actions, nudged)
    return mu1, mu2


def check_contraction_suite(seed: int = 0, n_cases: int = 1000) -> list:
    """Random (MDP, mu1, mu2) triples: the one-step operators contract in
    sup-W_p for p in {1, 2, 4}, their projections contract in sup-W1, the
    full evaluation operator contracts in sup-W_p; expansion of the greedy
    full operator is recorded, not asserted."""
    rng = np.random.default_rng(seed)
    ps = (1.0, 2.0, 4.0)
    trackers = {
        "one_step_eval_contraction": _Tracker("one_step_eval_contraction", 1e-10),
        "one_step_opt_contraction": _Tracker("one_step_opt_contraction", 1e-10),
        "projected_one_step_eval_contraction_w1": _Tracker(
            "projected_one_step_eval_contraction_w1", 1e-10
        ),
        "projected_one_step_opt_contraction_w1": _Tracker(
            "projected_one_step_opt_contraction_w1", 1e-10
        ),
        "full_eval_contraction": _Tracker("full_eval_contraction", 1e-10),
    }
    greedy_violations = 0
    greedy_max_excess = 0.0
    greedy_example = None
    for case_index in range(n_cases):
        n_states = int(rng.integers(2, 5))
        n_actions = int(rng.integers(2, 4))
        mdp = random_mdp(rng, n_states, n_actions)
        pi = random_policy(rng, n_states, n_actions)
        if case_index % 4 == 0:
            # near-tie pair: a hair's width of mean difference flips the
            # greedy action between two differently shaped distributions,
            # the regime where the greedy full operator expands
            mu1, mu2 = _near_tie_pair(rng, n_states, n_actions)
        else:
            mu1 = random_collection(rng, n_states, n_actions, max_atoms=3)
            mu2 = random_collection(rng, n_states, n_actions, max_atoms=3)
        grid = random_grid(rng, max_points=5)
        gamma = mdp.discount

        def case():
            return {
                "mdp": mdp.to_json(),
                "policy": pi.probs.tolist(),
                "mu1": _collection_json(mu1),
                "mu2": _collection_json(mu2),
                "grid": grid.tolist(),
            }

        before = {p: sup_wasserstein(mu1, mu2, p) for p in ps}
        ev1, ev2 = os_distr_eval(mu1, mdp, pi), os_distr_eval(mu2, mdp, pi)
        op1, op2 = os_distr_opt(mu1, mdp), os_distr_opt(mu2, mdp)
        fe1, fe2 = distr_bellman_eval(mu1, mdp, pi), distr_bellman_eval(mu2, mdp, pi)
        for p in ps:
            bound = gamma * before[p]
            trackers["one_step_eval_contraction"].record(
                sup_wasserstein(ev1, ev2, p) - bound, case
            )
            trackers["one_step_opt_contraction"].record(
                sup_wasserstein(op1, op2, p) - bound, case
            )
            trackers["full_eval_contraction"].record(
                sup_wasserstein(fe1, fe2, p) - bound, case
            )
        project = lambda mu: mu.map(lambda d: cramer_project(d, grid))
        bound_w1 = gamma * before[1.0]
        trackers["projected_one_step_eval_contraction_w1"].record(
            sup_wasserstein(project(ev1), project(ev2), 1.0) - bound_w1, case
        )
        trackers["projected_one_step_opt_contraction_w1"].record(
            sup_wasserstein(project(op1), project(op2), 1.0) - bound_w1, case
        )
        fo1 = distr_bellman_opt(mu1, mdp, tie_break="lowest")
        fo2 = distr_bellman_opt(mu2, mdp, tie_break="lowest")
        excess = sup_wasserstein(fo1, fo2, 1.0) - gamma * before[1.0]
        if excess > 1e-12:
            greedy_violations += 1
            if excess > greedy_max_excess:
                greedy_max_excess = excess
                greedy_example = case()
    results = [t.result() for t in trackers.values()]
    results.append(
        PropertyResult(
            name="full_opt_contraction_violations",
            cases=n_cases,
            max_violation=float(greedy_max_excess),
            passed=True,  # expansion is expected; recorded, not asserted
            details={"violations": greedy_violations, "example": greedy_example},
        )
    )
    return results


def _fitting_grid(mdp, v, rng, k: int = 7) -> np.ndarray:
    targets = mdp.reward + mdp.discount * v[None, None, :]
    lo, hi = float(targets.min()), float(targets.max())
    pad = 0.1 * (hi - lo) + 0.1
    return np.linspace(lo - pad, hi + pad, k)


def _iterate_to_fixed_point(op, start, reference, tol, max_iters):
    current = start
    for n in range(max_iters):
        dist = sup_wasserstein(current, reference, 1.0)
        if dist <= tol:
            return dist, n
        current = op(current)
    return sup_wasserstein(current, reference, 1.0), max_iters


def check_fixed_points(seed: int = 0, n_control: int = 10, n_eval: int = 5) -> list:
    """Iterating the projected one-step operators from the all-delta(z1)
    collection reaches the projection of the closed-form fixed point within
    1e-8, on the toy MDP and random instances satisfying the range condition."""
    rng = np.random.default_rng(seed)
    tol = 1e-8
    results = []
    control_cases = [(make_toy_mdp(), np.asarray(TOY_GRID))] + [
        (random_mdp(rng, int(rng.integers(2, 5)), 2), None) for _ in range(n_control)
    ]
    tracker = _Tracker("projected_fixed_point_control", tol)
    for mdp, grid in control_cases:
        v = solve_q_star(mdp, tol=1e-12).max(axis=1)
        if grid is None:
            grid = _fitting_grid(mdp, v, rng)
        eta = one_step_fixed_point_opt(mdp, tol=1e-12).map(lambda d: cramer_project(d, grid))
        op = projected(lambda m, _mdp=mdp: os_distr_opt(m, _mdp), grid)
        start = DistributionCollection.constant(
            mdp.n_states, mdp.n_actions, cramer_project(dirac(grid[0]), grid)
        )
        bound = math.ceil(math.log(tol / max(grid[-1] - grid[0], tol)) / math.log(mdp.discount)) + 2
        dist, _ = _iterate_to_fixed_point(op, start, eta, tol, bound)
        tracker.record(dist - tol, lambda m=mdp, g=grid: {"mdp": m.to_json(), "grid": g.tolist()})
    results.append(tracker.result())

    tracker = _Tracker("projected_fixed_point_eval", tol)
    eval_cases = [(make_toy_mdp(), Policy.uniform(2, 2), np.asarray(TOY_GRID))]
    for _ in range(n_eval):
        mdp = random_mdp(rng, int(rng.integers(2, 5)), 2)
        eval_cases.append((mdp, random_policy(rng, mdp.n_states, 2), None))
    for mdp, pi, grid in eval_cases:
        q = solve_q_pi(mdp, pi, tol=1e-12)
        v = (pi.probs * q).sum(axis=1)
        if grid is None:
            grid = _fitting_grid(mdp, v, rng)
        eta = one_step_fixed_point_eval(mdp, pi, tol=1e-12).map(
            lambda d: cramer_project(d, grid)
        )
        op = projected(lambda m, _mdp=mdp, _pi=pi: os_distr_eval(m, _mdp, _pi), grid)
        start = DistributionCollection.constant(
            mdp.n_states, mdp.n_actions, cramer_project(dirac(grid[0]), grid)
        )
        bound = math.ceil(math.log(tol / max(grid[-1] - grid[0], tol)) / math.log(mdp.discount)) + 2
        dist, _ = _iterate_to_fixed_point(op, start, eta, tol, bound)
        tracker.record(
            dist - tol,
            lambda m=mdp, p=pi, g=grid: {
                "mdp": m.to_json(),
                "policy": p.probs.tolist(),
                "grid": g.tolist(),
            },
        )
    results.append(tracker.result())
    return results


def check_projection_lemma(seed: int = 0, n_cases: int = 10_000) -> PropertyResult:
    """W1 of projected point masses never exceeds the original separation."""
    rng = np.random.default_rng(seed)
    tracker = _Tracker("projection_w1_nonexpansive_on_diracs", 1e-10)
    for _ in range(n_cases):
        grid = random_grid(rng)
        a, b = rng.uniform(-15.0, 15.0, size=2)
        d = wasserstein(cramer_project(dirac(a), grid), cramer_project(dirac(b), grid), 1.0)
        tracker.record(
            d - abs(a - b),
            lambda g=grid, a=a, b=b: {"grid": g.tolist(), "a": float(a), "b": float(b)},
        )
    return tracker.result()


def check_mean_preservation(seed: int = 0, n_cases: int = 10_000) -> PropertyResult:
    """Projection preserves the mean exactly for support inside [z1, zK]."""
    rng = np.random.default_rng(seed)
    tracker = _Tracker("projection_mean_preservation", 1e-12)
    for _ in range(n_cases):
        grid = random_grid(rng)
        n = int(rng.integers(1, 6))
        atoms = rng.uniform(grid[0], grid[-1], size=n)
        nu = AtomicDistribution.from_points(atoms, rng.dirichlet(np.ones(n)))
        err = abs(mean(cramer_project(nu, grid)) - mean(nu))
        tracker.record(err - 1e-12, lambda g=grid, d=nu: {"grid": g.tolist(), "nu": d.to_json()})
    return tracker.result()


def _dominance_excess(hi, lo) -> float:
    """Max amount by which F_hi exceeds F_lo (0 when hi dominates lo)."""
    hi_atoms = hi.as_atomic() if not isinstance(hi, AtomicDistribution) else hi
    lo_atoms = lo.as_atomic() if not isinstance(lo, AtomicDistribution) else lo
    zs = np.union1d(hi_atoms.atoms, lo_atoms.atoms)
    return float(np.max(hi_atoms.cdf(zs) - lo_atoms.cdf(zs)))


def _dominated_pair(rng, base):
    shifts = rng.uniform(0.0, 2.0, size=base.atoms.size)
    return AtomicDistribution.from_points(base.atoms + shifts, base.weights)


def check_projection_monotonicity(seed: int = 0, n_cases: int = 2000) -> PropertyResult:
    """Stochastic dominance survives the categorical projection."""
    rng = np.random.default_rng(seed)
    tracker = _Tracker("projection_monotone_in_dominance", 1e-12)
    for _ in range(n_cases):
        grid = random_grid(rng)
        nu1 = random_atomic(rng, max_atoms=4, low=-5.0, high=5.0)
        nu2 = _dominated_pair(rng, nu1)
        excess = _dominance_excess(cramer_project(nu2, grid), cramer_project(nu1, grid))
        tracker.record(
            excess, lambda g=grid, a=nu1, b=nu2: {"grid": g.tolist(), "lo": a.to_json(), "hi": b.to_json()}
        )
    return tracker.result()


def check_operator_monotonicity(seed: int = 0, n_cases: int = 400) -> PropertyResult:
    """Entrywise dominance is preserved by the one-step optimality operator
    and its projection."""
    rng = np.random.default_rng(seed)
    tracker = _Tracker("one_step_monotone_in_dominance", 1e-12)
    for _ in range(n_cases):
        mdp = random_mdp(rng, int(rng.integers(2, 4)), 2)
        mu1 = random_collection(rng, mdp.n_states, mdp.n_actions, max_atoms=3)
        mu2 = DistributionCollection.build(
            mdp.n_states, mdp.n_actions, lambda x, a: _dominated_pair(rng, mu1[x, a])
        )
        grid = random_grid(rng, max_points=5)
        out1, out2 = os_distr_opt(mu1, mdp), os_distr_opt(mu2, mdp)
        excess = max(
            _dominance_excess(out2[x, a], out1[x, a])
            for x in range(mdp.n_states)
            for a in range(mdp.n_actions)
        )
        pr1 = out1.map(lambda d: cramer_project(d, grid))
        pr2 = out2.map(lambda d: cramer_project(d, grid))
        excess = max(
            excess,
            max(
                _dominance_excess(pr2[x, a], pr1[x, a])
                for x in range(mdp.n_states)
                for a in range(mdp.n_actions)
            ),
        )
        tracker.record(
            excess,
            lambda m=mdp, a=mu1, b=mu2, g=grid: {
                "mdp": m.to_json(),
                "mu_lo": _collection_json(a),
                "mu_hi": _collection_json(b),
                "grid": g.tolist(),
            },
        )
    return tracker.result()


def check_wasserstein_axioms(seed: int = 0, n_cases: int = 1000) -> list:
    rng = np.random.default_rng(seed)
    symmetry = _Tracker("wasserstein_symmetry", 1e-12)
    identity = _Tracker("wasserstein_identity", 1e-12)
    triangle = _Tracker("wasserstein_triangle", 1e-10)
    for _ in range(n_cases):
        a = random_atomic(rng, max_atoms=5)
        b = random_atomic(rng, max_atoms=5)
        c = random_atomic(rng, max_atoms=5)
        case = lambda a=a, b=b, c=c: {"a": a.to_json(), "b": b.to_json(), "c": c.to_json()}
        for p in (1.0, 2.0, 4.0):
            dab = wasserstein(a, b, p)
            symmetry.record(abs(dab - wasserstein(b, a, p)), case)
            identity.record(wasserstein(a, a, p), case)
            triangle.record(dab - wasserstein(a, c, p) - wasserstein(c, b, p), case)
    return [symmetry.result(), identity.result(), triangle.result()]


def check_w1_riemann_agreement(seed: int = 0, n_cases: int = 200) -> PropertyResult:
    """Exact W1 against an independent CDF-area Riemann sum on lattice atoms
    (lattice spacing keeps the midpoint rule exact)."""
    rng = np.random.default_rng(seed)
    tracker = _Tracker("w1_matches_riemann_cdf_area", 1e-6)
    step = 1.0 / 64

    def lattice(n):
        values = rng.integers(-512, 512, size=n) * step
        return AtomicDistribution.from_points(values, rng.dirichlet(np.ones(n)))

    for _ in range(n_cases):
        a = lattice(int(rng.integers(1, 6)))
        b = lattice(int(rng.integers(1, 6)))
        exact = wasserstein(a, b, 1.0)
        lo = min(a.atoms[0], b.atoms[0]) - step
        hi = max(a.atoms[-1], b.atoms[-1]) + step
        mids = np.arange(lo + step / 4, hi, step / 2)
        riemann = float(np.sum(np.abs(a.cdf(mids) - b.cdf(mids))) * step / 2)
        rel = abs(exact - riemann) / exact if exact > 0 else float(riemann > 1e-12)
        tracker.record(rel - 1e-6, lambda a=a, b=b: {"a": a.to_json(), "b": b.to_json()})
    return tracker.result()


def check_mean_commutation(seed: int = 0, n_cases: int = 300) -> PropertyResult:
    """Entrywise means of every distributional operator output equal the
    scalar Bellman operator applied to entrywise means; projected variants
    agree whenever all targets lie inside the grid."""
    rng = np.random.default_rng(seed)
    tracker = _Tracker("mean_commutation", 1e-10)
    for _ in range(n_cases):
        mdp = random_mdp(rng, int(rng.integers(2, 5)), 2)
        pi = random_policy(rng, mdp.n_states, 2)
        mu = random_collection(rng, mdp.n_states, 2, max_atoms=3)
        q = mu.means()
        case = lambda m=mdp, p=pi, u=mu: {
            "mdp": m.to_json(),
            "policy": p.probs.tolist(),
            "mu": _collection_json(u),
        }
        err = np.max(np.abs(distr_bellman_eval(mu, mdp, pi).means() - bellman_eval(q, mdp, pi)))
        err = max(err, np.max(np.abs(distr_bellman_opt(mu, mdp).means() - bellman_opt(q, mdp))))
        err = max(err, np.max(np.abs(os_distr_eval(mu, mdp, pi).means() - bellman_eval(q, mdp, pi))))
        out_opt = os_distr_opt(mu, mdp)
        err = max(err, np.max(np.abs(out_opt.means() - bellman_opt(q, mdp))))
        # projected variant on a grid that covers every one-step target
        v = q.max(axis=1)
        grid = _fitting_grid(mdp, v, rng)
        projected_means = out_opt.map(lambda d: cramer_project(d, grid)).means()
        err = max(err, np.max(np.abs(projected_means - bellman_opt(q, mdp))))
        tracker.record(err, case)
    return tracker.result()


def check_banach_residual(seed: int = 0, n_cases: int = 50) -> PropertyResult:
    """Successive step distances along contractive-operator traces decay by
    at least the discount factor."""
    rng = np.random.default_rng(seed)
    tracker = _Tracker("banach_residual_decay", 1e-10)
    for _ in range(n_cases):
        mdp = random_mdp(rng, int(rng.integers(2, 4)), 2)
        pi = random_policy(rng, mdp.n_states, 2)
        mu0 = random_collection(rng, mdp.n_states, 2, max_atoms=3)
        grid = _fitting_grid(mdp, solve_q_star(mdp, tol=1e-10).max(axis=1), rng)
        ops = [
            lambda m: os_distr_eval(m, mdp, pi),
            lambda m: os_distr_opt(m, mdp),
            projected(lambda m: os_distr_opt(m, mdp), grid),
        ]
        case = lambda m=mdp: {"mdp": m.to_json()}
        for op in ops:
            trace = iterate(op, mu0, 8)
            steps = trace.step_distances
            for n in range(1, len(steps)):
                tracker.record(steps[n] - mdp.discount * steps[n - 1], case)
    return tracker.result()


def check_mean_tracking(seed: int = 0, n_steps: int = 10_000) -> PropertyResult:
    """Identical transition streams drive the one-step update's entrywise
    means and an independently coded scalar learner to the same iterates."""
    env = EpisodicEnv(mdp=make_toy_mdp(), terminal_states=frozenset({1}), initial_state=0)
    mdp = env.mdp
    rng = np.random.default_rng(seed)
    schedule = StepSizeSchedule.polynomial(c=1.0, omega=0.7)
    grid = np.asarray(TOY_GRID)
    pi = Policy.uniform(2, 2)
    tracker = _Tracker("mean_tracking_vs_scalar_learner", 1e-9)
    for mode in ("control", "eval"):
        state = LearnerState.initial(2, 2, grid, mdp.discount)
        q = np.zeros((2, 2))
        visits = np.zeros((2, 2), dtype=int)
        x = env.reset(rng)
        for _ in range(n_steps):
            if env.is_terminal(x):
                x = env.reset(rng)
            a = int(rng.integers(2))
            tr = sample_step(env, x, a, rng)
            state = os_cdrl_step(state, tr, schedule, mode=mode, policy=pi)
            # scalar update, written independently of the learner module
            alpha = 1.0 / (1.0 + visits[tr.state, tr.action]) ** 0.7
            if mode == "control":
                boot = q[tr.next_state].max()
            else:
                boot = float(pi.probs[tr.next_state] @ q[tr.next_state])
            q[tr.state, tr.action] = (1 - alpha) * q[tr.state, tr.action] + alpha * (
                tr.reward + mdp.discount * boot
            )
            visits[tr.state, tr.action] += 1
            x = tr.next_state
            tracker.record(
                float(np.max(np.abs(state.q_values() - q))),
                lambda t=state.t, m=mode: {"step": t, "mode": m},
            )
    return tracker.result()


def check_target_complexity(seed: int = 0, fast: bool = False) -> tuple:
    """Table-style complexity comparison: the dense target's cost grows with
    K while the sparse target touches at most two cells."""
    bench = target_microbenchmark(
        k_values=(8, 64, 512, 4096),
        n_reps=16 if fast else 64,
        seed=seed,
        n_inputs=16 if fast else 32,
    )
    ratios = [row["ratio"] for row in bench.rows]
    passed = bench.ratio_increasing and bench.max_cells <= 2
    result = PropertyResult(
        name="target_complexity",
        cases=len(bench.rows),
        max_violation=0.0 if passed else 1.0,
        passed=passed,
        details={"ratios": ratios, "monotone": bench.ratio_monotone, "max_cells": bench.max_cells},
    )
    return result, bench


def run_properties(seed: int = 0, fast: bool = False):
    """Run every suite; returns (results, microbenchmark)."""
    scale = 10 if fast else 1
    results = []
    results += check_contraction_suite(seed, n_cases=1000 // scale)
    results += check_fixed_points(seed, n_control=10, n_eval=5)
    results.append(check_projection_lemma(seed, n_cases=10_000 // scale))
    results.append(check_mean_preservation(seed, n_cases=10_000 // scale))
    results.append(check_projection_monotonicity(seed, n_cases=2000 // scale))
    results.append(check_operator_monotonicity(seed, n_cases=400 // scale))
    results += check_wasserstein_axioms(seed, n_cases=1000 // scale)
    results.append(check_w1_riemann_agreement(seed, n_cases=200 // scale))
    results.append(check_mean_commutation(seed, n_cases=300 // scale))
    results.append(check_banach_residual(seed, n_cases=50 // scale))
    results.append(check_mean_tracking(seed, n_steps=10_000 // scale))
    complexity, bench = check_target_complexity(seed, fast=fast)
    results.append(complexity)
    return results, bench
