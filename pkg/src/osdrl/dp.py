"""Exact dynamic programming: scalar fixed points, closed-form one-step
distributional fixed points, operator iteration with trajectory recording,
and the oscillation detector used by the instability experiment."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .distributions import (
    AtomicDistribution,
    CategoricalDistribution,
    DistributionCollection,
    cramer_project,
    dirac,
    sup_wasserstein,
)
from .mdp import Policy, TabularMdp
from .operators import bellman_eval, bellman_opt, os_distr_eval, os_distr_opt, projected

_MAX_SOLVE_ITERS = 10_000_000  # defensive cap; contraction terminates far earlier


def _solve(step_fn, shape, discount: float, tol: float) -> np.ndarray:
    # Stop when the sup-norm step is below tol*(1-gamma)/gamma, which bounds
    # the distance to the fixed point by tol; a single sweep is exact at
    # gamma = 0.
    threshold = tol * (1.0 - discount) / discount if discount > 0.0 else math.inf
    q = np.zeros(shape)
    for _ in range(_MAX_SOLVE_ITERS):
        q_next = step_fn(q)
        step = float(np.max(np.abs(q_next - q)))
        q = q_next
        if step < threshold or discount == 0.0:
            return q
    raise RuntimeError("value iteration failed to converge (tolerance below float precision?)")


def solve_q_pi(mdp: TabularMdp, policy: Policy, tol: float = 1e-10) -> np.ndarray:
    """Q-function of a policy, within tol in sup norm."""
    if not tol > 0:
        raise ValueError(f"tol must be positive, got {tol}")
    shape = (mdp.n_states, mdp.n_actions)
    return _solve(lambda q: bellman_eval(q, mdp, policy), shape, mdp.discount, tol)


def solve_q_star(mdp: TabularMdp, tol: float = 1e-10) -> np.ndarray:
    """Optimal Q-function, within tol in sup norm."""
    if not tol > 0:
        raise ValueError(f"tol must be positive, got {tol}")
    shape = (mdp.n_states, mdp.n_actions)
    return _solve(lambda q: bellman_opt(q, mdp), shape, mdp.discount, tol)


def _one_step_fixed_point(mdp: TabularMdp, v: np.ndarray) -> DistributionCollection:
    targets = mdp.reward + mdp.discount * v[None, None, :]

    def entry(x, a):
        row = mdp.kernel[x, a]
        keep = row > 0.0
        return AtomicDistribution.from_points(targets[x, a][keep], row[keep])

    return DistributionCollection.build(mdp.n_states, mdp.n_actions, entry)


def one_step_fixed_point_eval(
    mdp: TabularMdp, policy: Policy, tol: float = 1e-10
) -> DistributionCollection:
    """Closed-form fixed point of the one-step evaluation operator: the Dirac
    mixture over successors at r(x,a,x') + gamma * V_pi(x')."""
    q = solve_q_pi(mdp, policy, tol)
    return _one_step_fixed_point(mdp, (policy.probs * q).sum(axis=1))


def one_step_fixed_point_opt(mdp: TabularMdp, tol: float = 1e-10) -> DistributionCollection:
    """Closed-form fixed point of the one-step optimality operator."""
    q = solve_q_star(mdp, tol)
    return _one_step_fixed_point(mdp, q.max(axis=1))


class RangeConditionError(ValueError):
    """Some supported target r(x,a,x') + gamma*V(x') falls outside [z_1, z_K]."""

    def __init__(self, violations):
        self.violations = violations
        listing = ", ".join(
            f"(x={x}, a={a}, x'={xn}): target {t:.6g}" for x, a, xn, t in violations[:5]
        )
        more = "" if len(violations) <= 5 else f" and {len(violations) - 5} more"
        super().__init__(f"targets outside grid range: {listing}{more}")


class AtomBudgetExceeded(RuntimeError):
    """Total atom count of an iterate exceeded the configured cap."""

    def __init__(self, count, cap):
        self.count, self.cap = count, cap
        super().__init__(f"iterate holds {count} atoms, exceeding the cap of {cap}")


@dataclass
class IterationTrace:
    """Recorded operator iteration: all iterates plus distance diagnostics.

    step_distances[n] is the distance from iterate n to iterate n+1;
    ref_distances[n] (when a reference was supplied) is the distance from
    iterate n to the reference. Collections are compared in sup-W1,
    Q-functions in sup norm.
    """

    iterates: list
    step_distances: list
    ref_distances: Optional[list] = None
    atom_counts: Optional[list] = None

    def __post_init__(self):
        n = len(self.iterates)
        if len(self.step_distances) != max(n - 1, 0):
            raise ValueError("step_distances length must be len(iterates) - 1")
        if self.ref_distances is not None and len(self.ref_distances) != n:
            raise ValueError("ref_distances length must match iterates")
        if any(d < 0 for d in self.step_distances):
            raise ValueError("distances must be nonnegative")


def _distance(a, b) -> float:
    if isinstance(a, DistributionCollection):
        return sup_wasserstein(a, b, 1.0)
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b))))


def iterate(op, mu0, n_steps: int, reference=None, atom_cap: int = 1_000_000) -> IterationTrace:
    """Apply op n_steps times from mu0, recording iterates and distances.

    Works on distribution collections and on Q-function arrays. Raises
    AtomBudgetExceeded if a produced iterate holds more than atom_cap atoms
    (guards unprojected full-operator iteration).
    """
    if n_steps < 0:
        raise ValueError(f"n_steps must be >= 0, got {n_steps}")
    is_collection = isinstance(mu0, DistributionCollection)
    iterates = [mu0]
    steps = []
    refs = [_distance(mu0, reference)] if reference is not None else None
    atoms = [mu0.total_atoms()] if is_collection else None
    current = mu0
    for _ in range(n_steps):
        nxt = op(current)
        if is_collection:
            count = nxt.total_atoms()
            if count > atom_cap:
                raise AtomBudgetExceeded(count, atom_cap)
            atoms.append(count)
        steps.append(_distance(nxt, current))
        if refs is not None:
            refs.append(_distance(nxt, reference))
        iterates.append(nxt)
        current = nxt
    return IterationTrace(iterates, steps, refs, atoms)


def projected_fixed_points(
    mdp: TabularMdp, grid, tol: float = 1e-10, policy: Optional[Policy] = None
) -> DistributionCollection:
    """Categorical fixed point of the projected one-step operator.

    With a policy this is the projection of the evaluation fixed point; in
    control mode (policy=None) the projection of the optimality fixed point.
    Requires every supported target r(x,a,x') + gamma*V(x') to lie inside
    [z_1, z_K] (raises RangeConditionError otherwise, naming the offending
    triplets). The closed form is cross-checked by iterating the projected
    operator from the all-delta(z_1) collection to within tol.
    """
    grid = np.asarray(grid, dtype=float)
    if policy is None:
        q = solve_q_star(mdp, tol)
        v = q.max(axis=1)
        op = projected(lambda m: os_distr_opt(m, mdp), grid)
    else:
        q = solve_q_pi(mdp, policy, tol)
        v = (policy.probs * q).sum(axis=1)
        op = projected(lambda m: os_distr_eval(m, mdp, policy), grid)

    targets = mdp.reward + mdp.discount * v[None, None, :]
    bad = (mdp.kernel > 0.0) & ((targets < grid[0]) | (targets > grid[-1]))
    if np.any(bad):
        triplets = [(x, a, xn, float(targets[x, a, xn])) for x, a, xn in zip(*np.nonzero(bad))]
        raise RangeConditionError(triplets)

    eta = _one_step_fixed_point(mdp, v).map(lambda d: cramer_project(d, grid))

    start = DistributionCollection.constant(
        mdp.n_states, mdp.n_actions, cramer_project(dirac(grid[0]), grid)
    )
    current = start
    gamma = mdp.discount
    threshold = tol * (1.0 - gamma) / gamma if gamma > 0.0 else math.inf
    for _ in range(_MAX_SOLVE_ITERS):
        nxt = op(current)
        step = sup_wasserstein(nxt, current, 1.0)
        current = nxt
        if step < threshold or gamma == 0.0:
            break
    residual = sup_wasserstein(current, eta, 1.0)
    if residual > 10.0 * tol:
        raise RuntimeError(
            f"projected iteration disagrees with the closed-form fixed point "
            f"(sup-W1 {residual:.3e} > {10 * tol:.3e})"
        )
    return eta


@dataclass
class OscillationReport:
    """Outcome of the periodicity scan over the tail of a trace."""

    converged: bool
    oscillating: bool
    period: Optional[int]
    aperiodic: bool
    max_step_tail: float
    recurrence: dict = field(default_factory=dict)


def detect_oscillation(
    trace: IterationTrace,
    tol: float = 1e-6,
    max_period: int = 4,
    burn_in: Optional[int] = None,
) -> OscillationReport:
    """Flag the instability signature: successive iterates stay apart while
    some period-q recurrence (q <= max_period) stays below tol.

    Scans iterates after burn_in (default: second half of the trace).
    converged means the period-1 recurrence is already below tol; a trace
    that neither converges nor recurs is reported as aperiodic.
    """
    iterates = trace.iterates
    n = len(iterates)
    if burn_in is None:
        burn_in = n // 2
    recurrence = {}
    for q in range(1, max_period + 1):
        pairs = [
            _distance(iterates[i + q], iterates[i]) for i in range(burn_in, n - q)
        ]
        recurrence[q] = max(pairs) if pairs else math.nan
    max_step_tail = recurrence.get(1, math.nan)
    if not math.isnan(max_step_tail) and max_step_tail < tol:
        return OscillationReport(True, False, None, False, max_step_tail, recurrence)
    period = next(
        (q for q in range(2, max_period + 1) if not math.isnan(recurrence[q]) and recurrence[q] < tol),
        None,
    )
    if period is not None:
        return OscillationReport(False, True, period, False, max_step_tail, recurrence)
    return OscillationReport(False, False, None, True, max_step_tail, recurrence)


def _entry_points(dist):
    if isinstance(dist, CategoricalDistribution):
        return dist.grid, dist.probs
    return dist.atoms, dist.weights


def trace_atoms_to_csv(trace: IterationTrace, path) -> None:
    """One row per (iteration, entry, atom): iteration, entry_id,
    atom_or_gridpoint, weight."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "entry_id", "atom_or_gridpoint", "weight"])
        for n, mu in enumerate(trace.iterates):
            for (x, a), dist in mu:
                points, weights = _entry_points(dist)
                for z, w in zip(points, weights):
                    writer.writerow([n, f"x{x}_a{a}", repr(float(z)), repr(float(w))])


def trace_distances_to_csv(trace: IterationTrace, path) -> None:
    """One row per iteration: iteration, dist_to_next, dist_to_reference."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "dist_to_next", "dist_to_reference"])
        for n in range(len(trace.iterates)):
            step = repr(float(trace.step_distances[n])) if n < len(trace.step_distances) else ""
            ref = (
                repr(float(trace.ref_distances[n]))
                if trace.ref_distances is not None
                else ""
            )
            writer.writerow([n, step, ref])
