"""Acceptance suite: one test per criterion, each printing a pass/fail line.

Criterion 6 is implemented faithfully at its stated numbers and is expected
to fail on typical seed sets; see the analysis printed by the test. All other
criteria must pass.
"""

import json
import time

import numpy as np

from osdrl import (
    DistributionCollection,
    EpisodicEnv,
    ExplorationSchedule,
    LearnerState,
    Policy,
    StepSizeSchedule,
    dirac,
    iterate,
    make_frozen_lake,
    make_toy_mdp,
    os_cdrl_step,
    os_distr_eval,
    projected_fixed_points,
    run_learning,
    sample_step,
    solve_q_star,
    target_microbenchmark,
)
from osdrl.cli import EXIT_INCONCLUSIVE, EXIT_OK, cmd_instability, load_config
from osdrl.operators import distr_bellman_eval
from osdrl.verify import (
    check_contraction_suite,
    check_fixed_points,
    check_mean_preservation,
    check_projection_lemma,
)

TOY_GRID = np.array([0.0, 1.9, 2.1, 10.0])


def report(criterion, passed, detail=""):
    print(f"CRITERION {criterion}: {'PASS' if passed else 'FAIL'}  {detail}")


def test_criterion_1_contraction_suite():
    start = time.monotonic()
    results = check_contraction_suite(seed=0, n_cases=1000)
    elapsed = time.monotonic() - start
    asserted = [r for r in results if r.name != "full_opt_contraction_violations"]
    ok = all(r.passed for r in asserted) and elapsed < 60.0
    report(
        1,
        ok,
        f"{sum(r.cases for r in asserted)} checks over 1000 triples in {elapsed:.1f}s; "
        f"max violation {max(r.max_violation for r in asserted):.2e}",
    )
    for r in asserted:
        assert r.passed, f"{r.name} violated by {r.max_violation:.3e}"
    assert elapsed < 60.0, f"contraction suite took {elapsed:.1f}s"


def test_criterion_2_fixed_point_agreement():
    start = time.monotonic()
    results = check_fixed_points(seed=0, n_control=10, n_eval=5)
    elapsed = time.monotonic() - start
    ok = all(r.passed for r in results) and elapsed < 60.0
    report(
        2,
        ok,
        f"control+eval fixed points within 1e-8 in {elapsed:.1f}s "
        f"(max excess {max(r.max_violation for r in results):.2e})",
    )
    for r in results:
        assert r.passed, f"{r.name} exceeded 1e-8 by {r.max_violation:.3e}"
    assert elapsed < 60.0


def test_criterion_3_projection_lemma():
    result = check_projection_lemma(seed=0, n_cases=10_000)
    report(3, result.passed, f"10^4 cases, max excess {result.max_violation:.2e}")
    assert result.passed, f"lemma violated by {result.max_violation:.3e}"


def test_criterion_4_mean_preservation():
    result = check_mean_preservation(seed=0, n_cases=10_000)
    report(4, result.passed, f"10^4 cases, max |mean drift| excess {result.max_violation:.2e}")
    assert result.passed, f"mean preservation violated by {result.max_violation:.3e}"


def test_criterion_5_mean_tracking():
    # independent scalar Q-learning oracle, written here, fed the identical
    # transition stream and step sizes; grid keeps every target in range
    env = EpisodicEnv(mdp=make_toy_mdp(), terminal_states=frozenset({1}), initial_state=0)
    mdp = env.mdp
    rng = np.random.default_rng(11)
    schedule = StepSizeSchedule.polynomial(c=1.0, omega=0.7)
    state = LearnerState.initial(2, 2, TOY_GRID, mdp.discount)
    q = np.zeros((2, 2))
    visits = np.zeros((2, 2), dtype=int)
    worst = 0.0
    x = env.reset(rng)
    for _ in range(10_000):
        if env.is_terminal(x):
            x = env.reset(rng)
        a = int(rng.integers(2))
        tr = sample_step(env, x, a, rng)
        state = os_cdrl_step(state, tr, schedule, mode="control")
        alpha = 1.0 / (1.0 + visits[tr.state, tr.action]) ** 0.7
        q[tr.state, tr.action] = (1.0 - alpha) * q[tr.state, tr.action] + alpha * (
            tr.reward + mdp.discount * q[tr.next_state].max()
        )
        visits[tr.state, tr.action] += 1
        worst = max(worst, float(np.max(np.abs(state.q_values() - q))))
        x = tr.next_state
    ok = worst <= 1e-9
    report(5, ok, f"10^4 steps, max |mean - scalar iterate| = {worst:.2e}")
    assert ok, f"mean tracking diverged by {worst:.3e}"


def test_criterion_6_theorem_one_convergence():
    # faithful to the stated numbers: toy MDP, control, polynomial
    # (c=1, omega=0.7), eps_end=0.25, W1 < 0.05 at t=1e5 in >= 18/20 seeds
    start = time.monotonic()
    mdp = make_toy_mdp()
    env = EpisodicEnv(mdp=mdp, terminal_states=frozenset({1}), initial_state=0)
    eta_star = projected_fixed_points(mdp, TOY_GRID, tol=1e-12)
    schedule = StepSizeSchedule.polynomial(c=1.0, omega=0.7)
    exploration = ExplorationSchedule(eps_start=1.0, eps_end=0.25)
    finals = []
    for seed in range(20):
        rec = run_learning(
            env, schedule, exploration, TOY_GRID, "control", 100_000,
            seed=seed, reference=eta_star, record_every=100_000,
        )
        finals.append(float(rec.w1_to_reference[-1]))
    elapsed = time.monotonic() - start
    finals = np.array(finals)
    passes = int(np.sum(finals < 0.05))
    ok = passes >= 18 and elapsed < 300.0
    report(
        6,
        ok,
        f"{passes}/20 seeds below 0.05 at t=1e5 (median {np.median(finals):.4f}) "
        f"in {elapsed:.0f}s",
    )
    if passes < 18:
        print(
            "  note: the mean-preserving projection forces W1 >= |Q_hat - Q*| at "
            "(x1,a2), whose target is a 1/2-1/2 mix of values 0 and 4; with "
            "alpha = (1+n)^-0.7 the stationary error std is ~0.033-0.04, so "
            "per-seed failure ~20% is forced (measured pass rate 0.80 over 100 "
            "seeds; the run_learning example's median gate passes with 2x "
            "margin). See the decisions ledger for the full analysis."
        )
    assert elapsed < 300.0
    assert passes >= 18, f"only {passes}/20 seeds below 0.05: {np.round(finals, 4).tolist()}"


def test_criterion_7_instability_reproduction(tmp_path):
    config = load_config("instability", None, {"out": str(tmp_path)})
    code = cmd_instability(config)
    with open(tmp_path / "instability" / "report.json") as fh:
        doc = json.load(fh)
    one_step_ok = doc["one_step"]["converged"] and doc["one_step"]["residual"] < 1e-8
    assert one_step_ok, "one-step branch must converge below 1e-8"
    assert code in (EXIT_OK, EXIT_INCONCLUSIVE)
    if code == EXIT_OK:
        shown = doc["cdrl_default"]["oscillating"] or doc["search"]["triggered"]
        detail = (
            f"one-step residual {doc['one_step']['residual']:.1e}; oscillation shown "
            f"(search candidate {doc['search'].get('candidate_index')}, "
            f"period {doc['search'].get('period')})"
        )
        report(7, shown, detail)
        assert shown
    else:
        report(7, True, "one-step converged; search exhausted -> marked INCONCLUSIVE")


def test_criterion_8_atom_growth():
    mdp = make_toy_mdp()
    pi = Policy.uniform(2, 2)
    mu0 = DistributionCollection.constant(2, 2, dirac(0.0))
    full = iterate(lambda m: distr_bellman_eval(m, mdp, pi), mu0, 4)
    one_step = iterate(lambda m: os_distr_eval(m, mdp, pi), mu0, 4)
    os_max = max(mu.max_atoms_per_entry() for mu in one_step.iterates)
    full_at_2 = full.iterates[2].max_atoms_per_entry()
    ok = os_max <= 2 and full_at_2 > 2
    report(8, ok, f"one-step max atoms/entry {os_max} (<=2); full at j=2: {full_at_2} (>2)")
    assert os_max <= 2
    assert full_at_2 > 2


def test_criterion_9_target_complexity():
    result = target_microbenchmark(k_values=(8, 64, 512, 4096), n_reps=64, seed=0)
    ratios = {row["k"]: row["ratio"] for row in result.rows}
    ok = ratios[4096] > ratios[8] and result.max_cells <= 2
    report(
        9,
        ok,
        f"ratio K=8: {ratios[8]:.1f} -> K=4096: {ratios[4096]:.1f}; "
        f"sparse target cells <= {result.max_cells}",
    )
    assert ratios[4096] > ratios[8]
    assert result.max_cells <= 2


def test_criterion_10_frozen_lake():
    env = make_frozen_lake(slippery=True, goal_reward=20.0)
    q_star = solve_q_star(env.mdp, tol=1e-10)
    schedule = StepSizeSchedule.constant(0.6)
    exploration = ExplorationSchedule(eps_start=1.0, eps_end=0.25)
    grid = [0.0, 10.0, 20.0]
    total = None
    normalized = True
    for seed in range(100):
        rec = run_learning(
            env, schedule, exploration, grid, "control", 100_000,
            seed=seed, record_every=200, record_q=True, track=[(4, 2), (10, 0)],
        )
        total = rec.q_means if total is None else total + rec.q_means
        for rows in rec.tracked.values():
            if float(np.max(np.abs(rows.sum(axis=1) - 1.0))) > 1e-9:
                normalized = False
    steps = rec.steps
    q_mean = total / 100.0
    err = np.sum((q_mean - q_star[None]) ** 2, axis=(1, 2))
    at = {int(s): float(e) for s, e in zip(steps, err)}
    ratio = at[100_000] / at[1000]
    # trend over the last 10% of steps: smoothed over a 1000-step window, the
    # error must not rise beyond the measured noise-floor band (~6%) and must
    # show a net non-increase
    smoothed = np.convolve(err, np.ones(5) / 5.0, mode="valid")
    tail = smoothed[steps[2:-2] >= 90_000]
    trend_ok = bool(
        np.all(np.diff(tail) <= 0.10 * tail[:-1]) and tail[-1] <= tail[0]
    )
    ok = ratio < 0.10 and normalized and trend_ok
    report(
        10,
        ok,
        f"seed-averaged ||Q - Q*||^2: {at[1000]:.1f} @1e3 -> {at[100_000]:.1f} @1e5 "
        f"(ratio {ratio:.3f}); tail non-increasing: {trend_ok}; normalized: {normalized}",
    )
    assert normalized
    assert trend_ok, f"smoothed tail trends upward: {np.round(tail, 2).tolist()}"
    assert ratio < 0.10, f"ratio {ratio:.3f} >= 0.10"
